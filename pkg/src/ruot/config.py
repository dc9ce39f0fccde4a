"""Training configuration, presets and JSON (de)serialization."""

from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .losses import PENALTY_KINDS


@dataclass
class OptimizerConfig:
    """Adam settings; ``step_size`` for pre-training, ``train_step_size`` for the full objective."""

    step_size: float = 1e-3
    train_step_size: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class SchedulePhase:
    lambda_m: float
    lambda_d: float
    epochs: int


@dataclass
class TrainConfig:
    sigma: float = 0.25
    alpha: float = 1.0
    penalty: str = "quadratic"
    # training-stage loss weights
    lambda_m: float = 1e3
    lambda_d: float = 1.0
    lambda_r: float = 1.0
    lambda_f: float = 1.0
    lambda_w: float = 0.1
    # pre-training reconstruction schedule: (lambda_m, lambda_d, epochs) per phase
    schedule: list[SchedulePhase] = field(
        default_factory=lambda: [SchedulePhase(1.0, 0.1, 30), SchedulePhase(0.0, 0.1, 30)]
    )
    steps_per_epoch: int = 10
    pretrain_score_iters: int = 1000
    stability_alpha: float = 0.0
    stability_iters: int = 0
    score_batch: int = 256
    train_epochs: int = 10
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    steps_per_unit_time: int = 10
    batch_size: int = 256
    collocation_max: int | None = 4096
    kde_bandwidth: float | None = None
    kde_normalization: str = "per_point_average"
    hidden_layers: list[int] = field(default_factory=lambda: [64, 64, 64])
    activation: str = "tanh"
    dims: list[int] | None = None
    seed: int = 0

    def __post_init__(self):
        self.schedule = [
            p if isinstance(p, SchedulePhase) else _phase_from(p) for p in self.schedule
        ]
        if isinstance(self.optimizer, dict):
            self.optimizer = _strict(OptimizerConfig, self.optimizer, "optimizer")
        self.validate()

    def validate(self) -> None:
        weights = dict(
            lambda_m=self.lambda_m, lambda_d=self.lambda_d, lambda_r=self.lambda_r,
            lambda_f=self.lambda_f, lambda_w=self.lambda_w, stability_alpha=self.stability_alpha,
        )
        for name, val in weights.items():
            if not val >= 0:
                raise ConfigError(f"{name} must be nonnegative, got {val}")
        if not self.sigma >= 0:
            raise ConfigError(f"sigma must be nonnegative, got {self.sigma}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.penalty not in PENALTY_KINDS:
            raise ConfigError(f"penalty must be one of {PENALTY_KINDS}, got {self.penalty!r}")
        for name in ("pretrain_score_iters", "stability_iters", "train_epochs", "steps_per_epoch"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        for p in self.schedule:
            if p.epochs < 0 or p.lambda_m < 0 or p.lambda_d < 0:
                raise ConfigError(f"invalid schedule phase {p}")
        if self.steps_per_unit_time < 1 or self.batch_size < 0 or self.score_batch < 1:
            raise ConfigError("steps_per_unit_time and score_batch must be positive, batch_size nonnegative")
        needs_sigma = (self.lambda_f > 0 and self.train_epochs > 0) or self.pretrain_score_iters > 0 or self.stability_iters > 0
        if needs_sigma and not self.sigma > 0:
            raise ConfigError("sigma must be positive when the Fokker-Planck loss or score matching is enabled")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return _strict(cls, d, "config")

    def replace(self, **changes) -> "TrainConfig":
        d = self.to_dict()
        for k, v in changes.items():
            if k == "optimizer" and isinstance(v, dict):
                d["optimizer"].update(v)
            else:
                d[k] = v
        return TrainConfig.from_dict(d)


def _phase_from(p) -> SchedulePhase:
    if isinstance(p, dict):
        return _strict(SchedulePhase, p, "schedule phase")
    if isinstance(p, (list, tuple)) and len(p) == 3:
        return SchedulePhase(float(p[0]), float(p[1]), int(p[2]))
    raise ConfigError(f"schedule phase must be (lambda_m, lambda_d, epochs), got {p!r}")


def _strict(cls, d: dict, what: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{what} must be a mapping, got {type(d).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"unknown {what} key(s): {', '.join(unknown)}")
    return cls(**d)


PRESETS: dict[str, dict] = {
    # Table columns of the two-stage settings; score-matching lengths are desk scale.
    # GRN integrates the whole initial snapshot: resampled batches put a noise
    # floor under the mass term that lambda_m = 1e3 then chases.
    "grn": dict(
        sigma=0.25,
        schedule=[[1.0, 0.1, 20], [0.0, 0.1, 10]],
        dims=[0, 1],
        batch_size=0,
        optimizer={"train_step_size": 1e-5},
        stability_alpha=10.0,
        stability_iters=300,
        pretrain_score_iters=600,
    ),
    "hematopoiesis": dict(sigma=0.25, schedule=[[1.0, 0.1, 30], [0.0, 0.1, 30]]),
    "gauss10d": dict(sigma=0.1, schedule=[[1.0, 0.1, 35], [0.0, 0.1, 80]], steps_per_unit_time=20),
}


def preset(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    d = TrainConfig().to_dict()
    d.update(copy.deepcopy(PRESETS[name]))
    d.update(overrides)
    return TrainConfig.from_dict(d)


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    """Read a JSON object of TrainConfig keys, layered over ``base`` (defaults if omitted)."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    d = (base or TrainConfig()).to_dict()
    unknown = sorted(set(raw) - set(d))
    if unknown:
        raise ConfigError(f"{path}: unknown config key(s): {', '.join(unknown)}")
    if isinstance(raw.get("optimizer"), dict):
        opt = dict(d["optimizer"])
        bad = sorted(set(raw["optimizer"]) - set(opt))
        if bad:
            raise ConfigError(f"{path}: unknown optimizer key(s): {', '.join(bad)}")
        opt.update(raw.pop("optimizer"))
        d["optimizer"] = opt
    d.update(raw)
    return TrainConfig.from_dict(d)


def save_config(cfg: TrainConfig, path) -> None:
    from .synthdata import atomic_write_text

    atomic_write_text(path, json.dumps(cfg.to_dict(), indent=2) + "\n")
