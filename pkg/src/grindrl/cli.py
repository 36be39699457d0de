"""Command-line experiment runner: run / gen-shapes / eval.

run        execute an experiment from a YAML config, one subdirectory per
           seed, writing episodes.csv, steps.csv, the trained model, the
           resolved config, and a manifest.
gen-shapes sample initial/target clouds for the stock objects to .xyz files.
eval       recompute and summarize metrics from a run directory.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path
from statistics import mean, stdev

from . import gp
from .config import ConfigError, dump_config, load_config
from .mbrl import POLICIES, RunResult, run_mbrl, steps_to_reference
from .pointcloud import save_cloud
from .sim_env import OBJECT_KINDS, ObjectSpec, make_object

SCHEMA_VERSION = 1

EPISODE_COLUMNS = ("episode", "final_chamfer", "steps_to_ref", "interrupts")
STEP_COLUMNS = (
    "episode", "t", "chamfer", "roll", "pitch", "z", "deviation",
    "predicted_err", "realized_err", "cost_shape", "cost_overcut",
    "cost_var", "interrupted",
)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_run_outputs(result: RunResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    config_text = dump_config(cfg)
    (out_dir / "config.yaml").write_text(config_text)

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
        "seed": cfg.seed,
        "policy": cfg.policy,
        "object_kind": cfg.object_spec.kind,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))

    with open(out_dir / "episodes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EPISODE_COLUMNS)
        for ep in result.episodes:
            ref = cfg.reference_err
            s2r = steps_to_reference(ep, ref) if ref is not None else None
            w.writerow([
                ep.episode,
                _fmt(ep.final_chamfer),
                "" if s2r is None else s2r,
                ep.n_interrupts,
            ])

    with open(out_dir / "steps.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STEP_COLUMNS)
        for ep in result.episodes:
            for s in ep.steps:
                w.writerow([
                    ep.episode, s.t, _fmt(s.chamfer_before), _fmt(s.roll),
                    _fmt(s.pitch), _fmt(s.z), _fmt(s.deviation),
                    _fmt(s.predicted_err), _fmt(s.realized_err),
                    _fmt(s.cost_shape), _fmt(s.cost_overcut), _fmt(s.cost_var),
                    _fmt(s.interrupted),
                ])

    if result.model is not None:
        gp.save_model(result.model, out_dir / "model.json")


def cmd_run(args) -> int:
    overrides: dict = {"run": {}, "object": {}}
    if args.policy:
        overrides["run"]["policy"] = args.policy
    if args.object:
        overrides["object"]["kind"] = args.object
    try:
        base_cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    seeds = [base_cfg.seed]
    if args.seed is not None:
        seeds = [int(s) for s in str(args.seed).split(",")]

    out_root = Path(args.out)
    for seed in seeds:
        cfg = replace(base_cfg, seed=seed)
        result = run_mbrl(cfg)
        sub = out_root / f"seed_{seed}"
        write_run_outputs(result, sub)
        finals = [f"{ep.final_chamfer:.4f}" for ep in result.episodes]
        print(f"seed {seed}: final chamfer per episode = [{', '.join(finals)}] -> {sub}")
    return 0


def cmd_gen_shapes(args) -> int:
    kinds = list(OBJECT_KINDS) if args.object == "all" else [args.object]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for kind in kinds:
        try:
            spec = ObjectSpec(kind=kind, density=args.density)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        initial, target = make_object(spec, args.seed)
        save_cloud(initial, out_dir / f"object_{kind}_initial.xyz")
        save_cloud(target, out_dir / f"object_{kind}_target.xyz")
        print(
            f"object {kind}: {initial.shape[0]} initial / {target.shape[0]} target points"
            f" -> {out_dir}/object_{kind}_*.xyz"
        )
    return 0


def _read_csv(path: Path, expected_columns) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != tuple(expected_columns):
            raise ConfigError(
                f"{path}: unsupported schema {header!r}; "
                f"expected schema v{SCHEMA_VERSION} columns {tuple(expected_columns)!r}"
            )
        return [dict(zip(header, row)) for row in reader]


def _eval_one(run_dir: Path, reference: float | None) -> dict:
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.is_file():
        raise ConfigError(f"{run_dir}: missing manifest.json")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(
            f"{run_dir}: unsupported schema version {manifest.get('schema_version')!r}"
        )
    episodes = _read_csv(run_dir / "episodes.csv", EPISODE_COLUMNS)
    steps = _read_csv(run_dir / "steps.csv", STEP_COLUMNS)
    if not episodes or not steps:
        raise ConfigError(f"{run_dir}: empty logs")

    # cross-check the episode file against the step log
    by_ep: dict[int, list[dict]] = {}
    for row in steps:
        by_ep.setdefault(int(row["episode"]), []).append(row)
    for ep in episodes:
        idx = int(ep["episode"])
        logged = float(ep["final_chamfer"])
        recomputed = float(by_ep[idx][-1]["realized_err"])
        if abs(logged - recomputed) > 1e-9:
            raise ConfigError(
                f"{run_dir}: episode {idx} final chamfer mismatch: "
                f"{logged!r} logged vs {recomputed!r} recomputed"
            )

    finals = [float(ep["final_chamfer"]) for ep in episodes]
    interrupts = sum(int(ep["interrupts"]) for ep in episodes)

    last_ep = max(by_ep)
    first = by_ep[last_ep][0]
    pred, real = float(first["predicted_err"]), float(first["realized_err"])
    rate_t1 = abs(pred - real) / real * 100.0 if real > 0 else float("nan")

    steps_to_ref = None
    if reference is not None:
        for row in by_ep[last_ep]:
            if float(row["realized_err"]) <= reference:
                steps_to_ref = int(row["t"])
                break

    return {
        "run": run_dir.name,
        "seed": manifest.get("seed"),
        "policy": manifest.get("policy"),
        "episodes": len(episodes),
        "final_chamfer_mean": mean(finals),
        "final_chamfer_sd": stdev(finals) if len(finals) > 1 else 0.0,
        "pred_error_rate_t1": rate_t1,
        "steps_to_ref": steps_to_ref,
        "interrupts": interrupts,
    }


def cmd_eval(args) -> int:
    root = Path(args.run_dir)
    if not root.is_dir():
        print(f"error: not a directory: {root}", file=sys.stderr)
        return 2
    subruns = sorted(p for p in root.glob("seed_*") if p.is_dir())
    if not subruns:
        subruns = [root] if (root / "episodes.csv").is_file() else []
    if not subruns:
        print(f"error: no runs found under {root}", file=sys.stderr)
        return 2

    try:
        rows = [_eval_one(sub, args.reference) for sub in subruns]
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    keys = list(rows[0].keys())
    agg = {
        "run": "aggregate",
        "seed": "",
        "policy": rows[0]["policy"],
        "episodes": sum(r["episodes"] for r in rows),
        "final_chamfer_mean": mean(r["final_chamfer_mean"] for r in rows),
        "final_chamfer_sd": stdev([r["final_chamfer_mean"] for r in rows]) if len(rows) > 1 else 0.0,
        "pred_error_rate_t1": mean(r["pred_error_rate_t1"] for r in rows),
        "steps_to_ref": "",
        "interrupts": sum(r["interrupts"] for r in rows),
    }
    all_rows = rows + [agg]

    with open(root / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in all_rows:
            w.writerow({k: ("" if r[k] is None else r[k]) for k in keys})

    for r in all_rows:
        print(
            f"{r['run']:>12}  policy={r['policy']:<11} "
            f"final={r['final_chamfer_mean']:.4f}±{r['final_chamfer_sd']:.4f}  "
            f"rate@t1={r['pred_error_rate_t1']:.2f}%  "
            f"steps_to_ref={r['steps_to_ref'] if r['steps_to_ref'] not in (None, '') else '-'}  "
            f"interrupts={r['interrupts']}"
        )
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="grindrl",
        description="Grinding-by-planes MBRL experiments: run, gen-shapes, eval.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a YAML config")
    p_run.add_argument("--config", required=True, help="YAML experiment config")
    p_run.add_argument("--seed", help="integer or comma-separated list; overrides config")
    p_run.add_argument("--policy", choices=POLICIES, help="override run.policy")
    p_run.add_argument("--object", choices=OBJECT_KINDS, help="override object.kind")
    p_run.add_argument("--out", default="runs/latest", help="output directory")

    p_gen = sub.add_parser("gen-shapes", help="write initial/target .xyz clouds")
    p_gen.add_argument("--object", default="all", choices=(*OBJECT_KINDS, "all"))
    p_gen.add_argument("--density", type=float, default=5.0, help="points per unit volume")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", default="shapes")

    p_eval = sub.add_parser("eval", help="summarize metrics from a run directory")
    p_eval.add_argument("run_dir")
    p_eval.add_argument("--reference", type=float, default=None,
                        help="reference-line error for steps-to-reference")

    args = parser.parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "gen-shapes":
        return cmd_gen_shapes(args)
    return cmd_eval(args)


if __name__ == "__main__":
    sys.exit(main())
