import numpy as np
import pytest

from grindrl.cutting import ActionBounds, CuttingSurface, split
from grindrl.gp import GpHyperparams, GpModel
from grindrl.planner import (
    GtDeviationOracle,
    PlannerConfig,
    as_predictor,
    cost,
    detect_overcut,
    eta,
    plan,
    plane_overcut,
    predict_transition,
)
from grindrl.pointcloud import chamfer, mean_nn_spacing
from grindrl.sim_env import GrindingEnv, GtDeviationParams, ObjectSpec, default_bounds

BOUNDS = default_bounds()


def block_cloud(n=400, seed=0, top=7.0):
    rng = np.random.default_rng(seed)
    return rng.uniform([-5, -4, 0], [5, 4, top], size=(n, 3))


class TestEta:
    def test_beta_zero_gives_alpha(self):
        assert eta(3.0, 0.0, 0.2, 5.0) == 3.0

    def test_ratio_one_gives_alpha(self):
        assert eta(2.5, 1.7, 4.0, 4.0) == 2.5

    def test_direct_evaluation(self):
        assert eta(3.0, 1.0, 0.5, 1.0) == pytest.approx(1.5)

    def test_monotone_in_current_error(self):
        vals = [eta(2.0, 1.3, c, 1.0) for c in np.linspace(0.0, 2.0, 9)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_zero_init_rejected(self):
        with pytest.raises(ValueError):
            eta(1.0, 1.0, 0.5, 0.0)


class TestDetectOvercut:
    def test_superset_is_not_overcut(self):
        cloud = block_cloud(500)
        target = cloud[cloud[:, 2] <= 4.0]
        assert not detect_overcut(cloud, target)

    def test_target_exactly_is_not_overcut(self):
        target = block_cloud(300)
        assert not detect_overcut(target, target)

    def test_half_deleted_target_is_overcut(self):
        target = block_cloud(400)
        damaged = target[target[:, 2] <= 3.0]
        assert detect_overcut(damaged, target)

    def test_empty_prediction_is_overcut(self):
        assert detect_overcut(np.zeros((0, 3)), block_cloud(50))

    def test_margin_override(self):
        target = block_cloud(200)
        shifted = target + [0.0, 0.0, 0.05]
        assert not detect_overcut(shifted, target, margin=1.0)
        assert detect_overcut(shifted, target, margin=1e-6)


class TestPlaneOvercut:
    def test_plane_above_target_is_safe(self):
        target = block_cloud(300, top=4.0)
        assert not plane_overcut(target, CuttingSurface(0.0, 0.0, 4.5), 0.1)

    def test_plane_through_target_is_overcut(self):
        target = block_cloud(300, top=4.0)
        assert plane_overcut(target, CuttingSurface(0.0, 0.0, 2.0), 0.3)

    def test_depth_allowance(self):
        target = block_cloud(300, top=4.0)
        a = CuttingSurface(0.0, 0.0, 3.9)  # shaves at most 0.1 into the target
        assert not plane_overcut(target, a, 0.2)
        assert plane_overcut(target, a, 0.05)

    def test_tilted_plane_corner_incursion(self):
        target = block_cloud(500, top=4.0)
        # passes through (0,0,4.5) but dips far below 4.0 at the x edge
        a = CuttingSurface(0.0, 0.5, 4.5)
        assert plane_overcut(target, a, 0.3)


class TestCost:
    def test_perfect_match_no_penalty(self):
        target = block_cloud(200)
        assert cost(target, target, var=0.0, eta_val=0.0) == 0.0

    def test_overcut_penalty_applies(self):
        target = block_cloud(400)
        damaged = target[target[:, 2] <= 3.0]
        assert cost(damaged, target, var=0.0, eta_val=0.0) >= 1000.0

    def test_variance_term(self):
        target = block_cloud(200)
        c = cost(target, target, var=0.3, eta_val=2.0)
        assert c == pytest.approx(0.6)

    def test_downsampled_is_deterministic(self):
        pred = block_cloud(500, seed=1)
        target = block_cloud(500, seed=2)
        c1 = cost(pred, target, 0.0, 0.0, downsample_n=100, seed=5)
        c2 = cost(pred, target, 0.0, 0.0, downsample_n=100, seed=5)
        assert c1 == c2


class TestPredictTransition:
    def test_absent_model_is_geometric(self):
        s = block_cloud()
        a = CuttingSurface(0.1, -0.05, 5.0)
        pred, feats, var = predict_transition(s, a, None, "sim", BOUNDS)
        kept, _ = split(s, a)
        assert np.array_equal(pred, kept)
        assert var == 0.0
        assert feats.shape == (2,)

    def test_no_cut_is_identity(self):
        s = block_cloud(top=6.0)
        a = CuttingSurface(0.0, 0.0, 7.5)
        pred, feats, _ = predict_transition(s, a, None, "sim", BOUNDS)
        assert np.array_equal(pred, s)
        assert feats[0] == 0.0

    def test_gt_oracle_matches_env_step(self):
        params = GtDeviationParams()
        spec = ObjectSpec(kind="A", density=2.0)
        env = GrindingEnv(spec, params, BOUNDS, horizon=4)
        env.reset(3)
        oracle = GtDeviationOracle(params)
        rng = np.random.default_rng(1)
        for _ in range(4):
            a = CuttingSurface(*BOUNDS.sample(rng)[0])
            s = env.current
            pred, _, var = predict_transition(s, a, oracle, "sim", BOUNDS)
            rec = env.step(a)
            assert var == 0.0
            if rec.interrupted:
                # sentinel deviation lifts the predicted plane out of the stock
                assert np.array_equal(pred, s)
            else:
                assert np.array_equal(pred, rec.resulting)

    def test_learned_model_beats_geometric_prediction(self):
        params = GtDeviationParams(k_sim=2.0, belt_speed=2.0, v_max=50.0)
        spec = ObjectSpec(kind="A", density=2.0)
        env = GrindingEnv(spec, params, BOUNDS, horizon=30)
        env.reset(0)
        # gather ground-truth deviation data over random cuts
        rng = np.random.default_rng(2)
        X, Y = [], []
        for _ in range(30):
            a = CuttingSurface(*BOUNDS.sample(rng)[0])
            rec = env.step(a)
            X.append(rec.features)
            Y.append(rec.deviation)
        from grindrl.gp import fit

        model = fit(np.array(X), np.array(Y), restarts=3, seed=0)

        env.reset(123)
        target = env.target
        a = CuttingSurface(0.0, -0.19, 4.6)
        s = env.current
        pred_gp, _, _ = predict_transition(s, a, model, "sim", BOUNDS)
        pred_geom, _, _ = predict_transition(s, a, None, "sim", BOUNDS)
        rec = env.step(a)
        real = rec.resulting
        assert chamfer(pred_gp, real) < chamfer(pred_geom, real)


def planner_cfg(**kw):
    defaults = dict(horizon=2, n_samples=40, alpha=0.0, beta=1.0,
                    bounds=BOUNDS, downsample_n=None, seed=0)
    defaults.update(kw)
    return PlannerConfig(**defaults)


class TestPlan:
    def test_single_sample_returns_it(self):
        s = block_cloud(200)
        target = s[s[:, 2] <= 4.0]
        cfg = planner_cfg(n_samples=1, horizon=3)
        res = plan(s, target, None, cfg, 1.0, 1.0, seed=4)
        assert len(res.actions) == 3
        assert res.candidate_costs.shape == (1,)
        assert res.cost == res.candidate_costs[0]

    def test_cost_is_minimum_of_table(self):
        s = block_cloud(300)
        target = s[s[:, 2] <= 4.5]
        cfg = planner_cfg(n_samples=64)
        res = plan(s, target, None, cfg, 1.0, 1.0, seed=8)
        assert res.cost == res.candidate_costs.min()
        assert res.cost <= res.candidate_costs[0]

    def test_deterministic_per_seed(self):
        s = block_cloud(300)
        target = s[s[:, 2] <= 4.5]
        cfg = planner_cfg(n_samples=32, downsample_n=120)
        r1 = plan(s, target, None, cfg, 1.0, 1.0, seed=11)
        r2 = plan(s, target, None, cfg, 1.0, 1.0, seed=11)
        assert r1.actions == r2.actions
        assert np.array_equal(r1.candidate_costs, r2.candidate_costs)

    def test_alpha_zero_ignores_variance(self):
        """With alpha = 0 a predictor's variance cannot reorder candidates."""

        class SpikyVariance:
            def predict_deviation(self, feats, actions):
                rng = np.random.default_rng(0)
                return np.zeros(len(feats)), rng.uniform(0, 100, len(feats))

        s = block_cloud(300)
        target = s[s[:, 2] <= 4.5]
        cfg = planner_cfg(n_samples=48, alpha=0.0)
        base = plan(s, target, None, cfg, 1.0, 1.0, seed=2)
        spiky = plan(s, target, SpikyVariance(), cfg, 1.0, 1.0, seed=2)
        assert spiky.actions == base.actions
        assert np.allclose(spiky.candidate_costs, base.candidate_costs)

    def test_matches_scalar_rollout(self):
        """The vectorized rollout equals per-candidate scalar prediction + cost."""
        s = block_cloud(120, seed=3)
        target = s[s[:, 2] <= 4.0]
        cfg = planner_cfg(n_samples=25, horizon=2, alpha=1.5, beta=1.0)
        params = GtDeviationParams(k_sim=1.0, belt_speed=2.0, v_max=0.8)
        oracle = GtDeviationOracle(params)
        cur_err, init_err = 2.0, 4.0
        res = plan(s, target, oracle, cfg, cur_err, init_err, seed=21)

        # replay the exact candidate draws
        rng = np.random.default_rng(21)
        cand = cfg.bounds.sample(rng, cfg.n_samples * cfg.horizon)
        cand = cand.reshape(cfg.n_samples, cfg.horizon, 3)
        eta_val = eta(cfg.alpha, cfg.beta, cur_err, init_err)
        for i in range(cfg.n_samples):
            state = s
            total = 0.0
            for tau in range(cfg.horizon):
                a = CuttingSurface(*cand[i, tau])
                pred, feats, var = predict_transition(state, a, oracle, "sim", BOUNDS)
                if pred.shape[0] == 0:
                    total = np.inf
                    break
                aborted = bool(oracle.predict_abort(feats[None, :], a.as_array()[None, :])[0])
                dev, _ = oracle.predict_deviation(feats[None, :], a.as_array()[None, :])
                from grindrl.cutting import apply_deviation

                realized = apply_deviation(a, float(dev[0]), BOUNDS)
                over = (not aborted) and plane_overcut(target, realized, cfg.overcut_depth)
                total += chamfer(pred, target) + (cfg.overcut_penalty if over else 0.0)
                total += eta_val * var
                state = pred
            expected = total / cfg.horizon
            assert res.candidate_costs[i] == pytest.approx(expected, rel=1e-9, abs=1e-9)

    def test_receding_horizon_descends_in_geometric_env(self):
        """Pure-geometry env: re-planned single-step cuts keep reducing error."""
        params = GtDeviationParams(k_sim=0.0, v_max=1e9)
        spec = ObjectSpec(kind="A", density=2.0)
        env = GrindingEnv(spec, params, BOUNDS, horizon=8)
        env.reset(5)
        target = env.target
        init_err = chamfer(env.current, target)
        cfg = planner_cfg(horizon=1, n_samples=300, downsample_n=150)
        errs = [init_err]
        for t in range(8):
            res = plan(env.current, target, None, cfg, errs[-1], init_err, seed=t)
            env.step(res.first)
            errs.append(chamfer(env.current, target))
        floor = 4.0 * mean_nn_spacing(target) ** 2
        for before, after in zip(errs, errs[1:]):
            assert after < before or after <= floor
        assert errs[-1] < 0.5 * errs[0]

    def test_empty_cloud_rejected(self):
        with pytest.raises(ValueError):
            plan(np.zeros((0, 3)), block_cloud(10), None, planner_cfg(), 1.0, 1.0)


def test_as_predictor_dispatch():
    assert as_predictor(None) is None
    params = GtDeviationParams()
    oracle = GtDeviationOracle(params)
    assert as_predictor(oracle) is oracle
    hyp = GpHyperparams(np.ones(2), 1.0, 0.1)
    model = GpModel.train(np.zeros((1, 2)), np.zeros(1), hyp)
    assert as_predictor(model).model is model
    with pytest.raises(TypeError):
        as_predictor(42)
