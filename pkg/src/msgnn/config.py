"""Experiment configuration: YAML parsing, validation, round-tripping.

One config file describes one experiment: a dataset, a model, a coarsening
plan, budgets, and a mode.  Validation errors carry the key path of the
offending entry.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

MODES = (
    "baseline",
    "coarse2fine",
    "sub2full",
    "msgrad",
    "theorem",
    "flops",
    "coarsen-inspect",
)

DATASET_KINDS = ("sbm", "qtips", "knn", "files")


class ConfigError(ValueError):
    """Invalid experiment configuration, anchored to a config key path."""


def _take(d: dict, key: str, path: str, required: bool = False, default=None):
    if key in d:
        return d.pop(key)
    if required:
        raise ConfigError(f"{path}.{key}: missing required entry")
    return default


def _no_extras(d: dict, path: str) -> None:
    if d:
        raise ConfigError(f"{path}: unknown entries {sorted(d)}")


def _positive(value, key: str, path: str):
    if value is None or value <= 0:
        raise ConfigError(f"{path}.{key}: must be positive, got {value!r}")
    return value


@dataclass
class DatasetConfig:
    kind: str
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict, path: str = "dataset") -> "DatasetConfig":
        d = dict(d)
        kind = _take(d, "kind", path, required=True)
        if kind not in DATASET_KINDS:
            raise ConfigError(f"{path}.kind: unknown dataset kind {kind!r}")
        return cls(kind=kind, params=d)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}


@dataclass
class ModelConfig:
    kind: str = "gcn"
    layers: int = 4
    hidden: int = 32
    normalize: bool = True
    gin_eps: float = 0.0

    @classmethod
    def from_dict(cls, d: dict, path: str = "model") -> "ModelConfig":
        d = dict(d)
        kind = _take(d, "kind", path, default="gcn")
        if kind not in ("gcn", "gin"):
            raise ConfigError(f"{path}.kind: must be 'gcn' or 'gin'")
        layers = _positive(_take(d, "layers", path, default=4), "layers", path)
        hidden = _positive(_take(d, "hidden", path, default=32), "hidden", path)
        normalize = bool(_take(d, "normalize", path, default=True))
        gin_eps = float(_take(d, "gin_eps", path, default=0.0))
        _no_extras(d, path)
        return cls(kind, layers, hidden, normalize, gin_eps)

    def to_dict(self) -> dict:
        return asdict(self)

    def channels(self, in_channels: int, num_classes: int) -> list[int]:
        return [in_channels] + [self.hidden] * (self.layers - 1) + [num_classes]


@dataclass
class PlanConfig:
    levels: int = 1
    ratio: float = 0.5
    power: int | list[int] = 1
    policy: str = "random"
    ego_hops: list[int] | None = None
    max_edge_growth: float = 32.0

    @classmethod
    def from_dict(cls, d: dict, path: str = "plan") -> "PlanConfig":
        d = dict(d)
        levels = _positive(_take(d, "levels", path, default=1), "levels", path)
        ratio = float(_take(d, "ratio", path, default=0.5))
        if not 0.0 < ratio < 1.0:
            raise ConfigError(f"{path}.ratio: must lie in (0, 1), got {ratio}")
        power = _take(d, "power", path, default=1)
        policy = _take(d, "policy", path, default="random")
        ego_hops = _take(d, "ego_hops", path, default=None)
        growth = float(_take(d, "max_edge_growth", path, default=32.0))
        _no_extras(d, path)
        return cls(levels, ratio, power, policy, ego_hops, growth)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ScheduleConfig:
    epochs: list[int] | None = None  # finest level first
    fine_epochs: int | None = None  # expands by doubling toward coarse
    learning_rate: float = 1e-3
    eval_every: int = 10

    @classmethod
    def from_dict(cls, d: dict, path: str = "schedule") -> "ScheduleConfig":
        d = dict(d)
        epochs = _take(d, "epochs", path, default=None)
        fine_epochs = _take(d, "fine_epochs", path, default=None)
        if epochs is None and fine_epochs is None:
            raise ConfigError(f"{path}: need either epochs or fine_epochs")
        if epochs is not None and any(e < 1 for e in epochs):
            raise ConfigError(f"{path}.epochs: every budget must be >= 1")
        if fine_epochs is not None:
            _positive(fine_epochs, "fine_epochs", path)
        lr = float(_take(d, "learning_rate", path, default=1e-3))
        _positive(lr, "learning_rate", path)
        eval_every = _positive(
            _take(d, "eval_every", path, default=10), "eval_every", path
        )
        _no_extras(d, path)
        return cls(epochs, fine_epochs, lr, eval_every)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TelescopeSection:
    levels: int = 2
    samples_per_term: list[int] | None = None
    retain_fraction: float = 0.75
    switch_epoch: int = 0

    @classmethod
    def from_dict(cls, d: dict, path: str = "telescope") -> "TelescopeSection":
        d = dict(d)
        levels = _positive(_take(d, "levels", path, default=2), "levels", path)
        samples = _take(d, "samples_per_term", path, default=None)
        retain = float(_take(d, "retain_fraction", path, default=0.75))
        if not 0.0 < retain < 1.0:
            raise ConfigError(f"{path}.retain_fraction: must lie in (0, 1)")
        switch = int(_take(d, "switch_epoch", path, default=0))
        if switch < 0:
            raise ConfigError(f"{path}.switch_epoch: must be >= 0")
        _no_extras(d, path)
        return cls(levels, samples, retain, switch)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TheoremSection:
    trials: int = 100
    n: int = 200
    blocks: int = 4
    p_in: float = 0.1
    p_out: float = 0.02
    feature_noise: float = 1.0
    target_dim: int = 2
    target_noise: float = 0.1
    coarse_size: int = 100
    epsilon: float = 0.5

    @classmethod
    def from_dict(cls, d: dict, path: str = "theorem") -> "TheoremSection":
        d = dict(d)
        out = cls(
            trials=_positive(_take(d, "trials", path, default=100), "trials", path),
            n=_positive(_take(d, "n", path, default=200), "n", path),
            blocks=_positive(_take(d, "blocks", path, default=4), "blocks", path),
            p_in=float(_take(d, "p_in", path, default=0.1)),
            p_out=float(_take(d, "p_out", path, default=0.02)),
            feature_noise=float(_take(d, "feature_noise", path, default=1.0)),
            target_dim=_positive(
                _take(d, "target_dim", path, default=2), "target_dim", path
            ),
            target_noise=float(_take(d, "target_noise", path, default=0.1)),
            coarse_size=_positive(
                _take(d, "coarse_size", path, default=100), "coarse_size", path
            ),
            epsilon=float(_take(d, "epsilon", path, default=0.5)),
        )
        _no_extras(d, path)
        if out.epsilon <= 0:
            raise ConfigError(f"{path}.epsilon: must be positive")
        if out.coarse_size >= out.n:
            raise ConfigError(f"{path}.coarse_size: must be below n")
        return out

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExperimentConfig:
    mode: str
    dataset: DatasetConfig
    seeds: list[int]
    out_dir: str = "runs/out"
    model: ModelConfig | None = None
    plan: PlanConfig | None = None
    schedule: ScheduleConfig | None = None
    telescope: TelescopeSection | None = None
    theorem: TheoremSection | None = None

    TRAIN_MODES = ("baseline", "coarse2fine", "sub2full", "msgrad")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config: top level must be a mapping")
        d = dict(d)
        mode = _take(d, "mode", "config", required=True)
        if mode not in MODES:
            raise ConfigError(f"config.mode: unknown mode {mode!r}")
        seeds = _take(d, "seeds", "config", default=[0])
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError("config.seeds: must be a nonempty list")
        dataset = _take(d, "dataset", "config", required=mode != "theorem")
        cfg = cls(
            mode=mode,
            dataset=DatasetConfig.from_dict(dataset or {"kind": "sbm"}),
            seeds=[int(s) for s in seeds],
            out_dir=str(_take(d, "out_dir", "config", default="runs/out")),
        )
        for key, section in (
            ("model", ModelConfig),
            ("plan", PlanConfig),
            ("schedule", ScheduleConfig),
            ("telescope", TelescopeSection),
            ("theorem", TheoremSection),
        ):
            raw = _take(d, key, "config", default=None)
            if raw is not None:
                setattr(cfg, key, section.from_dict(raw, key))
        _no_extras(d, "config")
        cfg._check_mode_sections()
        return cfg

    def _check_mode_sections(self) -> None:
        need: list[str] = []
        if self.mode in self.TRAIN_MODES:
            need += ["model", "schedule"]
        if self.mode in ("coarse2fine", "sub2full", "flops", "coarsen-inspect"):
            need += ["plan"]
        if self.mode == "msgrad":
            need += ["telescope"]
        if self.mode == "theorem":
            need += ["theorem"]
        if self.mode == "flops":
            need += ["model"]
        if self.mode == "coarsen-inspect":
            need += ["model"]
        for key in need:
            if getattr(self, key) is None:
                raise ConfigError(
                    f"config.{key}: required for mode {self.mode!r}"
                )

    def to_dict(self) -> dict:
        out = {
            "mode": self.mode,
            "dataset": self.dataset.to_dict(),
            "seeds": list(self.seeds),
            "out_dir": self.out_dir,
        }
        for key in ("model", "plan", "schedule", "telescope", "theorem"):
            section = getattr(self, key)
            if section is not None:
                out[key] = section.to_dict()
        return out


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    try:
        return ExperimentConfig.from_dict(raw)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
