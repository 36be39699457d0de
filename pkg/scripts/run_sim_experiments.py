#!/usr/bin/env python3
"""Full simulation study: learning runs, baselines, and shape transfer.

Phase 1 (object A): per seed, a full learning run of the proposed policy
plus single-episode geometric and random baselines; a matched oracle
(ground-truth deviation) learning run on the first seed and single-episode
oracle runs on the rest.

Phase 2 (objects B, C): the per-seed models learned on A, applied frozen,
against the geometric baseline on the same seeds.

Every run is written as a self-describing directory (config, manifest,
episodes.csv, steps.csv, model.json) under --out, and a compact study
summary lands in study_summary.json.
"""

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from grindrl.cli import write_run_outputs
from grindrl.config import build_config
from grindrl.mbrl import run_mbrl, shape_prediction_error_rate
from grindrl import gp


def run_and_save(cfg, out_dir, model=None, tag=""):
    t0 = time.perf_counter()
    result = run_mbrl(cfg, model=model)
    write_run_outputs(result, out_dir)
    finals = [ep.final_chamfer for ep in result.episodes]
    ints = sum(ep.n_interrupts for ep in result.episodes)
    print(
        f"  {tag:<24} seed={cfg.seed} finals="
        f"[{', '.join(f'{f:.3f}' for f in finals)}] interrupts={ints} "
        f"({time.perf_counter() - t0:.0f}s)"
    )
    return result


def t1_metrics(result):
    """Prediction-quality numbers for the first step of the last episode."""
    step = result.episodes[-1].steps[0]
    rate = abs(step.predicted_err - step.realized_err) / step.realized_err * 100.0
    return rate, abs(step.deviation)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/study")
    ap.add_argument("--seeds", default="0,1,2,3,4,5")
    ap.add_argument("--episodes", type=int, default=5)
    ap.add_argument("--horizon", type=int, default=40)
    args = ap.parse_args()

    seeds = [int(s) for s in args.seeds.split(",")]
    out = Path(args.out)
    run_kw = {"n_episodes": args.episodes, "task_horizon": args.horizon}

    def cfg_for(policy, kind, seed, n_episodes=None):
        return build_config(
            {
                "run": {
                    "policy": policy,
                    "seed": seed,
                    "n_episodes": n_episodes or run_kw["n_episodes"],
                    "task_horizon": run_kw["task_horizon"],
                },
                "object": {"kind": kind},
            }
        )

    summary = {"A": {}, "B": {}, "C": {}}
    models = {}

    print(f"== object A: learning runs and baselines (seeds {seeds}) ==")
    for seed in seeds:
        res = run_and_save(cfg_for("proposed", "A", seed), out / "A" / f"proposed/seed_{seed}", tag="proposed")
        models[seed] = res.model
        rate, dev = t1_metrics(res)
        summary["A"].setdefault("proposed", []).append(
            {"seed": seed, "final": res.episodes[-1].final_chamfer,
             "last2_mean": sum(e.final_chamfer for e in res.episodes[-2:]) / 2,
             "rate_t1": rate, "dev_t1": dev}
        )
    for seed in seeds:
        n_ep = run_kw["n_episodes"] if seed == seeds[0] else 1
        res = run_and_save(cfg_for("proposed_gt", "A", seed, n_ep), out / "A" / f"proposed_gt/seed_{seed}", tag="proposed_gt")
        summary["A"].setdefault("proposed_gt", []).append(
            {"seed": seed, "final": res.episodes[-1].final_chamfer,
             "last2_mean": sum(e.final_chamfer for e in res.episodes[-2:]) / min(2, len(res.episodes))}
        )
    for policy in ("geometric", "random"):
        for seed in seeds:
            res = run_and_save(cfg_for(policy, "A", seed, 1), out / "A" / f"{policy}/seed_{seed}", tag=policy)
            entry = {"seed": seed, "final": res.episodes[-1].final_chamfer}
            if policy == "geometric":
                rate, dev = t1_metrics(res)
                entry.update({"rate_t1": rate, "dev_t1": dev})
            summary["A"].setdefault(policy, []).append(entry)

    print("== objects B, C: transfer of the A-trained models ==")
    for kind in ("B", "C"):
        for seed in seeds:
            res = run_and_save(
                cfg_for("proposed", kind, seed, 1),
                out / kind / f"proposed_transfer/seed_{seed}",
                model=models[seed], tag=f"proposed(frozen A) {kind}",
            )
            summary[kind].setdefault("proposed_transfer", []).append(
                {"seed": seed, "final": res.episodes[-1].final_chamfer}
            )
            res = run_and_save(cfg_for("geometric", kind, seed, 1), out / kind / f"geometric/seed_{seed}", tag=f"geometric {kind}")
            summary[kind].setdefault("geometric", []).append(
                {"seed": seed, "final": res.episodes[-1].final_chamfer}
            )

    out.mkdir(parents=True, exist_ok=True)
    with open(out / "study_summary.json", "w") as fh:
        json.dump(summary, fh, indent=1)

    # headline comparisons
    A = summary["A"]
    mean = lambda xs: sum(xs) / len(xs)
    print("\n== study headline ==")
    print(f"proposed last-2-episode mean error: {mean([r['last2_mean'] for r in A['proposed']]):.4f}")
    print(f"proposed-gt (seed {seeds[0]}) last-2 mean:  {A['proposed_gt'][0]['last2_mean']:.4f}")
    print(f"prediction error rate at t=1: proposed {mean([r['rate_t1'] for r in A['proposed']]):.2f}% "
          f"vs geometric {mean([r['rate_t1'] for r in A['geometric']]):.2f}%")
    print(f"realized |deviation| at t=1:  proposed {mean([r['dev_t1'] for r in A['proposed']]):.3f} "
          f"vs geometric {mean([r['dev_t1'] for r in A['geometric']]):.3f}")
    for kind in ("A", "B", "C"):
        prop_key = "proposed" if kind == "A" else "proposed_transfer"
        wins = sum(
            p["final"] < g["final"]
            for p, g in zip(summary[kind][prop_key], summary[kind]["geometric"])
        )
        print(f"object {kind}: proposed beats geometric in {wins}/{len(seeds)} seeded runs")
    print(f"\nrun directories and summary under {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
