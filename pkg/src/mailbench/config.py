"""Run configuration: training hyperparameters, experiment grids, and the
INI file + environment-variable override plumbing."""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, asdict

from .arena import EnvConfig

MODES = ("saps-td", "maps-td", "mail", "mail-slow-decay", "il-only")
EXPERT_MODES = ("mail", "mail-slow-decay", "il-only")

LAMBDA_DECAY_FAST = 400_000
LAMBDA_DECAY_SLOW = 1_200_000

ENV_VAR_PREFIX = "MAILBENCH_"


@dataclass
class TrainConfig:
    mode: str = "mail"
    seed: int = 1
    gamma: float = 0.99
    rollout_len: int = 20          # T
    batch_size: int = 80           # live + expert samples per update
    expert_fraction: float = 0.5   # share of the batch drawn from demonstrations
    lambda0: float = 1.0
    lambda_decay_steps: int | None = None  # None -> resolved from mode
    lambda_decay_start: int = 0
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    lr_start: float = 1e-4
    lr_end: float = 1e-5
    grad_clip: float = 0.5
    total_steps: int = 2_000_000   # environment steps across all actors
    eval_interval: int = 50_000    # env steps between greedy evaluations
    eval_episodes: int = 5
    log_interval: int = 50         # updates between loss-metric rows
    checkpoint_interval: int = 0   # env steps; 0 -> final checkpoint only
    obs_noise_std: float = 0.1
    feature_noise_std: float = 0.3
    dropout_rate: float = 0.5
    stack_depth: int = 4
    hidden1: int = 128
    hidden2: int = 128

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; valid: {', '.join(MODES)}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 <= self.lambda0 <= 1.0:
            raise ValueError("lambda0 must lie in [0, 1]")
        if not 0.0 <= self.expert_fraction < 1.0:
            raise ValueError("expert_fraction must lie in [0, 1)")
        for name in ("rollout_len", "batch_size", "total_steps", "eval_interval",
                     "eval_episodes", "log_interval"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.live_batch % self.rollout_len != 0:
            raise ValueError(
                f"live batch {self.live_batch} not divisible by rollout length "
                f"{self.rollout_len}; adjust batch_size/expert_fraction")

    # -- derived quantities -------------------------------------------------

    @property
    def uses_expert(self) -> bool:
        return self.mode in EXPERT_MODES

    @property
    def policy_kind(self) -> str:
        return "saps" if self.mode == "saps-td" else "maps"

    @property
    def live_batch(self) -> int:
        """Live transitions per update; the rest of the batch is expert data."""
        if not self.uses_expert:
            return self.batch_size
        return int(round(self.batch_size * (1.0 - self.expert_fraction)))

    @property
    def expert_batch(self) -> int:
        return self.batch_size - self.live_batch if self.uses_expert else 0

    @property
    def n_actors(self) -> int:
        return self.live_batch // self.rollout_len

    @property
    def decay_steps(self) -> int:
        if self.lambda_decay_steps is not None:
            return self.lambda_decay_steps
        return LAMBDA_DECAY_SLOW if self.mode == "mail-slow-decay" else LAMBDA_DECAY_FAST

    @property
    def live_gradient(self) -> bool:
        """il-only trains from demonstrations alone."""
        return self.mode != "il-only"


@dataclass
class ExperimentSpec:
    modes: list[str] = field(default_factory=lambda: ["mail"])
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    out_dir: str = "runs"
    expert_path: str | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    env: EnvConfig = field(default_factory=EnvConfig)

    def __post_init__(self):
        for m in self.modes:
            if m not in MODES:
                raise ValueError(f"unknown mode {m!r}; valid: {', '.join(MODES)}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if not self.seeds:
            raise ValueError("at least one seed required")

    def cell_config(self, mode: str, seed: int) -> TrainConfig:
        cfg = TrainConfig(**{**asdict(self.train), "mode": mode, "seed": seed})
        return cfg


def _coerce(value: str, target_type):
    if target_type is bool:
        return value.strip().lower() in ("1", "true", "yes", "on")
    if target_type is int:
        return int(float(value))  # accepts "2e6"
    if target_type is float:
        return float(value)
    return value


def _apply_section(section, target) -> None:
    known = {f.name for f in fields(target)}
    for key, raw in section.items():
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
        if raw.strip().lower() in ("none", ""):
            setattr(target, key, None)
            continue
        current = getattr(target, key)
        if isinstance(current, bool):
            setattr(target, key, _coerce(raw, bool))
        elif isinstance(current, int):
            setattr(target, key, _coerce(raw, int))
        elif isinstance(current, float):
            setattr(target, key, _coerce(raw, float))
        elif current is None:
            setattr(target, key, _coerce(raw, int))
        else:
            setattr(target, key, raw)


def load_spec(path: str | None = None,
              environ: dict | None = None) -> ExperimentSpec:
    """Build an ExperimentSpec from an INI file plus environment overrides.

    Sections: [experiment] (modes, seeds, out_dir, expert_path), [train],
    [env].  Environment variables override file values and use the pattern
    MAILBENCH_<SECTION>_<KEY>, e.g. MAILBENCH_TRAIN_GAMMA=0.95.
    """
    spec = ExperimentSpec()
    parser = configparser.ConfigParser()
    if path is not None:
        read = parser.read(path)
        if not read:
            raise FileNotFoundError(f"config file not found: {path}")
    if environ is None:
        environ = dict(os.environ)
    for var, value in sorted(environ.items()):
        if not var.startswith(ENV_VAR_PREFIX):
            continue
        rest = var[len(ENV_VAR_PREFIX):].lower()
        section, _, key = rest.partition("_")
        if section not in ("experiment", "train", "env"):
            continue
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value)

    if parser.has_section("experiment"):
        exp = dict(parser["experiment"])
        if "modes" in exp:
            spec.modes = [m.strip() for m in exp["modes"].split(",") if m.strip()]
        if "seeds" in exp:
            spec.seeds = [int(s) for s in exp["seeds"].replace(",", " ").split()]
        if "out_dir" in exp:
            spec.out_dir = exp["out_dir"]
        if "expert_path" in exp:
            raw = exp["expert_path"]
            spec.expert_path = None if raw.strip().lower() in ("none", "") else raw
    if parser.has_section("train"):
        _apply_section(parser["train"], spec.train)
    if parser.has_section("env"):
        _apply_section(parser["env"], spec.env)
    # Re-run validation after mutation.
    spec.train.__post_init__()
    spec.env.__post_init__()
    ExperimentSpec.__post_init__(spec)
    return spec


def save_spec(spec: ExperimentSpec, path: str) -> None:
    parser = configparser.ConfigParser()
    parser["experiment"] = {
        "modes": ", ".join(spec.modes),
        "seeds": ", ".join(str(s) for s in spec.seeds),
        "out_dir": spec.out_dir,
        "expert_path": "none" if spec.expert_path is None else spec.expert_path,
    }
    parser["train"] = {k: ("none" if v is None else str(v))
                       for k, v in asdict(spec.train).items()}
    env_items = {k: str(v) for k, v in asdict(spec.env).items()
                 if k != "wall_blocks"}
    parser["env"] = env_items
    with open(path, "w") as fh:
        parser.write(fh)
