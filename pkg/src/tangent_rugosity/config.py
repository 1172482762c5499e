"""JSON experiment configs as nested dataclasses.

Unknown keys are rejected with their dotted path.  ``resolved_dict`` expands
every default so a run directory records exactly what was executed.
"""

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Optional

from .errors import ConfigurationError
from .rugosity import RugosityConfig
from .train import TrainConfig


@dataclass
class CircleParams:
    D: int = 3
    n: int = 300
    noise: float = 0.0
    n_test: int = 100


@dataclass
class SwissRollParams:
    n: int = 2000
    noise: float = 0.0
    n_test: int = 500


@dataclass
class SpiralsParams:
    n: int = 700
    noise: float = 0.0
    turns: float = 1.5
    n_test: int = 500


@dataclass
class IdxParams:
    images: str = "data/mnist/train-images-idx3-ubyte.gz"
    labels: str = "data/mnist/train-labels-idx1-ubyte.gz"
    test_images: str = "data/mnist/t10k-images-idx3-ubyte.gz"
    test_labels: str = "data/mnist/t10k-labels-idx1-ubyte.gz"
    limit: Optional[int] = None
    d: int = 10


@dataclass
class FilesParams:
    path: str = ""


DATASET_PARAMS = {
    "circle": CircleParams,
    "swiss_roll": SwissRollParams,
    "spirals": SpiralsParams,
    "idx": IdxParams,
    "files": FilesParams,
}


@dataclass
class DatasetSection:
    kind: str = "spirals"
    params: object = None
    seed: int = 0


@dataclass
class NetworkSection:
    widths: list = field(default_factory=lambda: [2, 64, 64, 2])
    activation: str = "relu"
    slope: float = 0.01


@dataclass
class TrainSection(TrainConfig):
    loss: str = "softmax_cross_entropy"
    K2: Optional[float] = None
    augment_loss: Optional[bool] = None

    def train_config(self):
        keys = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in keys})

    def uses_augmented_loss(self):
        """Defaults to augmenting the loss only when no penalty is active."""
        return self.lam == 0 if self.augment_loss is None else self.augment_loss


@dataclass
class AugmentParams:
    m: int = 8
    eps: float = 0.05
    max_shift: int = 2
    k: Optional[int] = None


@dataclass
class AugmentationSection:
    kind: str = "none"
    params: AugmentParams = field(default_factory=AugmentParams)


@dataclass
class RugositySection(RugosityConfig):
    estimator: str = "auto"

    def rugosity_config(self):
        keys = {f.name for f in fields(RugosityConfig)}
        return RugosityConfig(**{k: v for k, v in asdict(self).items() if k in keys})


@dataclass
class OutputSection:
    dir: str = "runs/out"


@dataclass
class SweepSection:
    lam: list = field(default_factory=lambda: [0.0, 0.001, 0.01, 0.1, 1.0])
    augment: list = field(default_factory=list)
    seeds: list = field(default_factory=lambda: [0])


@dataclass
class ExperimentConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    train: TrainSection = field(default_factory=TrainSection)
    augmentation: AugmentationSection = field(default_factory=AugmentationSection)
    rugosity: RugositySection = field(default_factory=RugositySection)
    output: OutputSection = field(default_factory=OutputSection)
    sweep: SweepSection = field(default_factory=SweepSection)


ESTIMATORS = ("auto", "piecewise", "smooth_mc", "smooth_direct")
AUGMENT_KINDS = ("none", "tangent_jitter", "translation", "flip")


def _build(cls, data, path):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path or '<root>'}: expected an object")
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigurationError(f"unknown config key {'.'.join(filter(None, [path, key]))!r}")
    kwargs = {}
    for name, f in known.items():
        if name not in data:
            continue
        value = data[name]
        sub = f"{path}.{name}" if path else name
        default = f.default_factory() if callable(f.default_factory) else f.default
        if is_dataclass(default):
            value = _build(type(default), value, sub)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{path or '<root>'}: {exc}") from exc


def from_dict(data):
    """Validate a raw JSON object and expand defaults."""
    data = dict(data or {})
    dataset_raw = dict(data.get("dataset") or {})
    params_raw = dataset_raw.pop("params", None)
    data["dataset"] = dataset_raw
    cfg = _build(ExperimentConfig, data, "")
    kind = cfg.dataset.kind
    if kind not in DATASET_PARAMS:
        raise ConfigurationError(f"dataset.kind: unknown dataset {kind!r}")
    cfg.dataset.params = _build(DATASET_PARAMS[kind], params_raw, "dataset.params")
    if cfg.augmentation.kind not in AUGMENT_KINDS:
        raise ConfigurationError(f"augmentation.kind: unknown augmentation {cfg.augmentation.kind!r}")
    if cfg.rugosity.estimator not in ESTIMATORS:
        raise ConfigurationError(f"rugosity.estimator: unknown estimator {cfg.rugosity.estimator!r}")
    return cfg


def load_config(path):
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
    return from_dict(data)


def resolved_dict(cfg):
    return asdict(cfg)


def dumps_resolved(cfg):
    return json.dumps(resolved_dict(cfg), indent=2, sort_keys=True) + "\n"


def with_seed(cfg, seed):
    """Copy of ``cfg`` with the dataset, training and measurement seeds replaced."""
    out = from_dict(resolved_dict(cfg))
    out.dataset.seed = seed
    out.train.seed = seed
    out.rugosity.seed = seed
    return out


def parse_augment(spec):
    """``kind[:param]`` from the command line; the param is eps for jitter, max shift for translation."""
    kind, _, param = spec.partition(":")
    if kind not in AUGMENT_KINDS:
        raise ConfigurationError(f"unknown augmentation {kind!r}")
    params = {}
    if param:
        if kind == "tangent_jitter":
            params["eps"] = float(param)
        elif kind == "translation":
            params["max_shift"] = int(param)
        else:
            raise ConfigurationError(f"augmentation {kind!r} takes no parameter")
    return kind, params
