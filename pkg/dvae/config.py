from typing import Any, Dict, Iterable, List, Tuple
from dataclasses import dataclass, field, fields, replace
from dvae import errors as err, const as k


@dataclass(frozen=True)
class ModelConfig:
    """network shapes, desk scale by default"""

    variant: str = k.VARIANT_DUAL
    image_size: int = 32
    f: int = 8
    embed_dim: int = 32
    n_embed: int = 64
    colour_dim: int = 64
    widths: Tuple[int, ...] = (32, 64, 128)
    geometry_hidden: int = 16
    geometry_layers: int = 3

    @property
    def levels(self) -> int:
        """K = log2(f) downsampling blocks"""

        return self.f.bit_length() - 1

    @property
    def grid(self) -> int:
        """token grid side"""

        return self.image_size // self.f

    def width(self, level: int) -> int:
        return self.widths[min(level, len(self.widths) - 1)]

    def level_size(self, level: int) -> int:
        return self.image_size >> level


@dataclass(frozen=True)
class LossConfig:
    w_F: float = 2.0
    w_z: float = 1.0
    w_vq: float = 1.0
    w_kl: float = 1.0
    # redualvae weights (F_g kept, colour path through D_C doubled)
    redual_w_z: float = 2.0
    redual_w_F: float = 1.0
    # perceptual / adversarial hook, intentionally empty at desk scale
    extra_recon: str = ""


@dataclass(frozen=True)
class VQConfig:
    beta: float = k.COMMITMENT_BETA
    decay: float = k.EMA_DECAY
    eps: float = k.LAPLACE_EPS


@dataclass(frozen=True)
class OptimConfig:
    """adam settings and batch size"""

    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    steps: int = 500
    checkpoint_every: int = 500
    keep_last: int = 3
    log_every: int = 50


@dataclass(frozen=True)
class PriorConfig:
    """attention prior over the token grid"""

    blocks: int = 2
    channels: int = 64
    heads: int = 4
    dropout: float = 0.1
    lr: float = 1e-3
    steps: int = 2000
    batch_size: int = 16


@dataclass(frozen=True)
class DataConfig:
    """empty path means synthetic shapes"""

    path: str = ""
    split_seed: int = 0
    synthetic_count: int = 2000
    palette_size: int = 8
    shape_sizes: int = 2


@dataclass(frozen=True)
class EvalConfig:
    n_exemplars: int = 50
    n_per_exemplar: int = 4
    n_pairs: int = 200
    symmetric: bool = False
    extractor_seed: int = 0


@dataclass(frozen=True)
class TrainConfig:
    """everything a run needs. every field has a default"""

    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    vq: VQConfig = field(default_factory=VQConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: RunConfig = field(default_factory=RunConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        validate(self)

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, train=replace(self.train, seed=seed))


def validate(config: TrainConfig):
    """raise ConfigError on broken invariants"""

    model = config.model
    f = model.f

    if model.variant not in (k.VARIANT_DUAL, k.VARIANT_REDUAL):
        raise err.ConfigError(f"model.variant must be {k.VARIANT_DUAL} or {k.VARIANT_REDUAL}")
    if f < 2 or f & (f - 1):
        raise err.ConfigError(f"model.f must be a power of two >= 2, got {f}")
    if model.image_size <= 0 or model.image_size % f:
        raise err.ConfigError(f"model.image_size {model.image_size} not divisible by f {f}")
    if not model.widths or min(model.widths) <= 0:
        raise err.ConfigError("model.widths must be positive")
    if min(model.embed_dim, model.n_embed, model.colour_dim, model.geometry_hidden) <= 0:
        raise err.ConfigError("model dimensions must be positive")
    if model.geometry_layers < 2:
        raise err.ConfigError("model.geometry_layers must be >= 2")
    if not 0.0 <= config.vq.decay < 1.0:
        raise err.ConfigError("vq.decay must be in [0, 1)")
    if config.vq.eps <= 0:
        raise err.ConfigError("vq.eps must be positive")
    if min(config.loss.w_F, config.loss.w_z, config.loss.w_vq, config.loss.w_kl) < 0:
        raise err.ConfigError("loss weights must be non-negative")
    if config.loss.extra_recon:
        raise err.ConfigError("loss.extra_recon terms are not available in this build")
    if config.optim.batch_size < 1 or config.prior.batch_size < 1:
        raise err.ConfigError("batch sizes must be >= 1")
    if config.prior.channels % config.prior.heads:
        raise err.ConfigError("prior.channels must be divisible by prior.heads")
    if not 0.0 <= config.prior.dropout < 1.0:
        raise err.ConfigError("prior.dropout must be in [0, 1)")
    if config.train.keep_last < 1 or config.train.checkpoint_every < 1:
        raise err.ConfigError("train.keep_last and train.checkpoint_every must be >= 1")


def _section_types() -> Dict[str, type]:
    return {f.name: f.default_factory for f in fields(TrainConfig)}  # type: ignore


def _convert(key: str, raw: str, default: Any) -> Any:
    """type a raw string by the field default"""

    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered not in ("true", "false"):
                raise ValueError(raw)
            return lowered == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError as exc:
        raise err.ConfigError(f"bad value for {key}: {raw!r}") from exc


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _assignments(lines: Iterable[str]) -> List[Tuple[str, str]]:
    pairs = []

    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()

        if not line:
            continue
        if "=" not in line:
            raise err.ConfigError(f"line {lineno}: expected key = value")

        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))

    return pairs


def apply(config: TrainConfig, pairs: Iterable[Tuple[str, str]]) -> TrainConfig:
    """apply dotted key/value overrides"""

    sections = {name: getattr(config, name) for name in _section_types()}
    updates: Dict[str, Dict[str, Any]] = {name: {} for name in sections}

    for key, raw in pairs:
        if key.count(".") != 1:
            raise err.ConfigError(f"unknown key {key!r}, expected section.name")

        section, name = key.split(".")

        if section not in sections:
            raise err.ConfigError(f"unknown section {section!r}")

        known = {f.name for f in fields(sections[section])}

        if name not in known:
            raise err.ConfigError(f"unknown key {key!r}")

        updates[section][name] = _convert(key, raw, getattr(sections[section], name))

    return replace(
        config,
        **{name: replace(sections[name], **values) for name, values in updates.items() if values},
    )


def parse(text: str) -> TrainConfig:
    """flat 'section.key = value' text -> config"""

    return apply(TrainConfig(), _assignments(text.splitlines()))


def parse_overrides(items: Iterable[str]) -> List[Tuple[str, str]]:
    """--set section.key=value"""

    return _assignments(items)


def dumps(config: TrainConfig) -> str:
    """every key, stable order"""

    lines = []

    for section in _section_types():
        values = getattr(config, section)
        for f in fields(values):
            lines.append(f"{section}.{f.name} = {_format(getattr(values, f.name))}")

    return "\n".join(lines) + "\n"


def load(path: str) -> TrainConfig:
    with open(path) as handle:
        return parse(handle.read())
