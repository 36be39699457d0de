"""Experiment configuration as YAML: load, override, resolve, dump.

The file is sectioned (run / object / env / bounds / planner); every field
has a default, so a config file only states what it changes. The resolved
config is always dumped back alongside run outputs so a run directory is
self-describing.
"""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

import yaml

from .cutting import ActionBounds
from .mbrl import ConfigError, ExperimentConfig
from .planner import PlannerConfig
from .sim_env import GtDeviationParams, ObjectSpec

_SECTIONS = ("run", "object", "env", "bounds", "planner")

_RUN_KEYS = (
    "policy", "n_episodes", "task_horizon", "n_init", "init_volume_range",
    "init_max_retries", "feature_mode", "gp_restarts", "seed", "reference_err",
)
_PLANNER_KEYS = (
    "horizon", "n_samples", "alpha", "beta", "overcut_penalty", "eta_floor",
    "downsample_n", "overcut_depth",
)


def default_config(kind: str = "A", policy: str = "proposed", seed: int = 0) -> ExperimentConfig:
    """Package defaults: calibrated simulator scale and planner settings."""
    return build_config({"run": {"policy": policy, "seed": seed}, "object": {"kind": kind}})


def build_config(sections: dict) -> ExperimentConfig:
    """Construct an ExperimentConfig from (possibly partial) section dicts."""
    unknown = set(sections) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    run = dict(sections.get("run") or {})
    obj = dict(sections.get("object") or {})
    env = dict(sections.get("env") or {})
    bounds = dict(sections.get("bounds") or {})
    planner = dict(sections.get("planner") or {})

    bad = set(run) - set(_RUN_KEYS)
    if bad:
        raise ConfigError(f"unknown run keys: {sorted(bad)}")
    bad = set(planner) - set(_PLANNER_KEYS)
    if bad:
        raise ConfigError(f"unknown planner keys: {sorted(bad)}")

    try:
        spec = ObjectSpec(**obj)
        params = GtDeviationParams(**env)
        abounds = ActionBounds(**bounds) if bounds else None
    except TypeError as exc:
        raise ConfigError(str(exc)) from None

    if abounds is None:
        from .sim_env import default_bounds

        abounds = default_bounds()

    feature_mode = run.get("feature_mode", "sim")
    pcfg = PlannerConfig(bounds=abounds, feature_mode=feature_mode, **planner)

    vr = run.get("init_volume_range", (0.0, 4.0))
    kwargs = {k: run[k] for k in run if k not in ("init_volume_range",)}
    return ExperimentConfig(
        object_spec=spec,
        env_params=params,
        bounds=abounds,
        planner=pcfg,
        init_volume_range=(float(vr[0]), float(vr[1])),
        **kwargs,
    )


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a YAML config file and apply CLI-style section overrides."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        sections = yaml.safe_load(fh) or {}
    if not isinstance(sections, dict):
        raise ConfigError(f"config root must be a mapping: {path}")
    for name, extra in (overrides or {}).items():
        sections.setdefault(name, {})
        sections[name] = {**(sections[name] or {}), **extra}
    return build_config(sections)


def config_to_sections(cfg: ExperimentConfig) -> dict:
    """Full resolved config as plain section dicts, ready for YAML dump."""
    return {
        "run": {
            "policy": cfg.policy,
            "n_episodes": cfg.n_episodes,
            "task_horizon": cfg.task_horizon,
            "n_init": cfg.n_init,
            "init_volume_range": list(cfg.init_volume_range),
            "init_max_retries": cfg.init_max_retries,
            "feature_mode": cfg.feature_mode,
            "gp_restarts": cfg.gp_restarts,
            "seed": cfg.seed,
            "reference_err": cfg.reference_err,
        },
        "object": asdict(cfg.object_spec),
        "env": asdict(cfg.env_params),
        "bounds": asdict(cfg.bounds),
        "planner": {k: getattr(cfg.planner, k) for k in _PLANNER_KEYS},
    }


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_sections(cfg), sort_keys=False)


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(dump_config(cfg))
