import copy
import os
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml
from dotenv import load_dotenv

from errors import ConfigError
from utils import get_logger


logger = get_logger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).parent.parent / "config.yaml"

PROTOTYPE_MODES = ("adaptive", "mean")
DISTANCES = ("squared", "euclidean")
O_DIVISIONS = ("boundary", "none", "overlap")
PROVIDERS = ("hashed", "pretrained")
CONSISTENCY_VARIANTS = ("bidirectional_kl", "kl", "span_to_token", "token_to_span", "mse", "js")
STRATEGIES = ("consistent-greedy", "span-only", "token-only", "intersection", "union")
SAMPLING_MODES = ("exact-k", "k-to-2k")


@dataclass(frozen=True)
class ModelConfig:
    embedding_dim: int = 64
    hidden_dim: int = 32
    prototype: str = "adaptive"
    distance: str = "squared"
    o_division: str = "boundary"
    cross_attention: bool = True
    # None enumerates every span of a sentence during training
    max_span_len_train: int | None = 8


@dataclass(frozen=True)
class EmbeddingConfig:
    provider: str = "hashed"
    path: str | None = None
    seed: int = 13
    trainable: bool = False


@dataclass(frozen=True)
class LossConfig:
    token_weight: float = 0.1
    span_weight: float = 1.0
    consistency_weight: float = 0.05
    temperature: float = 1.0
    consistency: str = "bidirectional_kl"


@dataclass(frozen=True)
class TrainingConfig:
    lr: float = 5e-4
    encoder_lr: float = 2e-5
    weight_decay: float = 0.01
    warmup_steps: int = 1000
    max_steps: int = 2000
    batch_size: int = 2
    log_every: int = 50


@dataclass(frozen=True)
class InferenceConfig:
    delta: float = 0.02
    max_span_len: int = 8
    strategy: str = "consistent-greedy"
    workers: int = 1
    floor_adjusted: bool = False
    min_probability: float | None = None


@dataclass(frozen=True)
class SamplingConfig:
    ways: int = 5
    shots: int = 1
    mode: str = "k-to-2k"
    query_per_class: int = 1
    max_attempts: int = 20


@dataclass(frozen=True)
class CDAPConfig:
    seed: int = 42
    model: ModelConfig = field(default_factory=ModelConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


_SECTIONS: dict[str, type] = {
    "model": ModelConfig,
    "embedding": EmbeddingConfig,
    "loss": LossConfig,
    "training": TrainingConfig,
    "inference": InferenceConfig,
    "sampling": SamplingConfig,
}


def load_env_vars() -> None:
    """Load environment variables from a `.env` file if one exists."""
    load_dotenv()


def default_config_path() -> Path:
    env_path = os.getenv("CDAP_CONFIG")
    return Path(env_path) if env_path else DEFAULT_CONFIG_PATH


def config_keys() -> dict[str, Any]:
    """Flatten the defaults into dotted keys, used by ``--help``."""
    flat: dict[str, Any] = {}
    for key, value in CDAPConfig().to_dict().items():
        if isinstance(value, dict):
            for sub_key, sub_value in value.items():
                flat[f"{key}.{sub_key}"] = sub_value
        else:
            flat[key] = value
    return flat


def parse_override(text: str) -> tuple[str, Any]:
    """Split ``section.key=value``; the value is read as a YAML scalar."""
    if "=" not in text:
        msg = f"Override must look like section.key=value, got {text!r}"
        raise ConfigError(msg)
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        msg = f"Cannot parse override value for {key}: {raw!r}"
        raise ConfigError(msg) from exc
    return key.strip(), value


def _apply_override(document: dict[str, Any], key: str, value: Any) -> None:
    parts = key.split(".")
    if len(parts) == 1:
        document[parts[0]] = value
    elif len(parts) == 2:  # noqa: PLR2004
        section = document.setdefault(parts[0], {})
        if not isinstance(section, dict):
            msg = f"Config section {parts[0]} is not a mapping"
            raise ConfigError(msg)
        section[parts[1]] = value
    else:
        msg = f"Config keys have at most two levels, got {key}"
        raise ConfigError(msg)


def _coerce(section: str, key: str, value: Any, default: Any) -> Any:
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            msg = f"{section}.{key} must be a boolean, got {value!r}"
            raise ConfigError(msg)
        return value
    if isinstance(default, int) and not isinstance(value, bool) and isinstance(value, int):
        return value
    if isinstance(default, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(default, str) and isinstance(value, str):
        return value
    msg = f"{section}.{key} has the wrong type: {value!r}"
    raise ConfigError(msg)


def _build_section(name: str, values: Mapping[str, Any]) -> Any:
    cls = _SECTIONS[name]
    defaults = asdict(cls())
    unknown = set(values) - set(defaults)
    if unknown:
        msg = f"Unknown keys in config section {name}: {', '.join(sorted(unknown))}"
        raise ConfigError(msg)
    merged = {key: _coerce(name, key, values.get(key, default), default) for key, default in defaults.items()}
    return cls(**merged)


def config_from_dict(document: Mapping[str, Any]) -> CDAPConfig:
    """Build a validated :class:`CDAPConfig` from a (possibly partial) mapping.

    Raises
    ------
    ConfigError
        On unknown sections or keys, wrong value types or out-of-range values.
    """
    unknown = set(document) - set(_SECTIONS) - {"seed"}
    if unknown:
        msg = f"Unknown config sections: {', '.join(sorted(unknown))}"
        raise ConfigError(msg)
    sections = {}
    for name in _SECTIONS:
        values = document.get(name) or {}
        if not isinstance(values, Mapping):
            msg = f"Config section {name} must be a mapping"
            raise ConfigError(msg)
        sections[name] = _build_section(name, values)
    seed = document.get("seed", CDAPConfig.seed)
    if not isinstance(seed, int) or isinstance(seed, bool):
        msg = f"seed must be an integer, got {seed!r}"
        raise ConfigError(msg)
    config = CDAPConfig(seed=seed, **sections)
    validate_config(config)
    return config


def validate_config(config: CDAPConfig) -> None:
    checks = [
        (config.model.prototype in PROTOTYPE_MODES, f"model.prototype must be one of {PROTOTYPE_MODES}"),
        (config.model.distance in DISTANCES, f"model.distance must be one of {DISTANCES}"),
        (config.model.o_division in O_DIVISIONS, f"model.o_division must be one of {O_DIVISIONS}"),
        (config.model.o_division != "overlap", "model.o_division=overlap is a reserved hook and not implemented"),
        (config.model.embedding_dim >= 1 and config.model.hidden_dim >= 1, "model dimensions must be positive"),
        (
            config.model.max_span_len_train is None or config.model.max_span_len_train >= 1,
            "model.max_span_len_train must be >= 1 or null",
        ),
        (config.embedding.provider in PROVIDERS, f"embedding.provider must be one of {PROVIDERS}"),
        (
            config.embedding.provider != "pretrained" or config.embedding.path is not None,
            "embedding.path is required for the pretrained provider",
        ),
        (config.loss.temperature > 0, "loss.temperature must be positive"),
        (config.loss.consistency in CONSISTENCY_VARIANTS, f"loss.consistency must be one of {CONSISTENCY_VARIANTS}"),
        (
            min(config.loss.token_weight, config.loss.span_weight, config.loss.consistency_weight) >= 0,
            "loss weights must be non-negative",
        ),
        (config.training.lr >= 0 and config.training.encoder_lr >= 0, "learning rates must be non-negative"),
        (config.training.weight_decay >= 0, "training.weight_decay must be non-negative"),
        (config.training.max_steps >= 0 and config.training.warmup_steps >= 0, "step counts must be non-negative"),
        (config.training.batch_size >= 1, "training.batch_size must be >= 1"),
        (config.training.log_every >= 1, "training.log_every must be >= 1"),
        (config.inference.delta >= 0, "inference.delta must be non-negative"),
        (config.inference.max_span_len >= 1, "inference.max_span_len must be >= 1"),
        (config.inference.strategy in STRATEGIES, f"inference.strategy must be one of {STRATEGIES}"),
        (config.inference.workers >= 1, "inference.workers must be >= 1"),
        (
            config.inference.min_probability is None
            or (isinstance(config.inference.min_probability, (int, float)) and config.inference.min_probability >= 0),
            "inference.min_probability must be a non-negative number or null",
        ),
        (config.embedding.path is None or isinstance(config.embedding.path, str), "embedding.path must be a string"),
        (config.sampling.mode in SAMPLING_MODES, f"sampling.mode must be one of {SAMPLING_MODES}"),
        (config.sampling.ways >= 1 and config.sampling.shots >= 1, "sampling.ways and sampling.shots must be >= 1"),
        (config.sampling.query_per_class >= 1, "sampling.query_per_class must be >= 1"),
        (config.sampling.max_attempts >= 1, "sampling.max_attempts must be >= 1"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)


def load_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> CDAPConfig:
    """Load configuration from a YAML file and apply ``section.key=value`` overrides.

    Parameters
    ----------
    path : str | Path | None, optional
        Config file; defaults to ``$CDAP_CONFIG`` or the repository ``config.yaml``.
        A missing default file is not an error, built-in defaults apply.
    overrides : Iterable[str], optional
        ``section.key=value`` strings applied after the file is read.

    Returns
    -------
    CDAPConfig
        The validated configuration.

    Raises
    ------
    FileNotFoundError
        If an explicitly given config file cannot be found.
    ConfigError
        If the file cannot be parsed or holds invalid values.
    """
    explicit = path is not None
    config_path = Path(path) if explicit else default_config_path()
    document: dict[str, Any] = {}
    try:
        with config_path.open() as file:
            document = yaml.safe_load(file) or {}
    except FileNotFoundError:
        if explicit:
            logger.exception("Config file not found: %s", config_path)
            raise
        logger.debug("No config file at %s, using defaults", config_path)
    except yaml.YAMLError as exc:
        logger.exception("Error parsing config file")
        msg = f"Cannot parse config file {config_path}"
        raise ConfigError(msg) from exc

    if not isinstance(document, dict):
        msg = f"Config file {config_path} must hold a mapping"
        raise ConfigError(msg)
    document = copy.deepcopy(document)
    for override in overrides:
        key, value = parse_override(override)
        _apply_override(document, key, value)
    return config_from_dict(document)


def replace_section(config: CDAPConfig, section: str, **changes: Any) -> CDAPConfig:
    """Return a copy of ``config`` with fields of one section replaced and re-validated."""
    document = config.to_dict()
    document[section] = {**document[section], **changes}
    return config_from_dict(document)
