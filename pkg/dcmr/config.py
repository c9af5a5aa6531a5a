"""
Configuration management for dcmr

Component settings are dataclasses. A RunConfig merges them as one flat
set of snake_case keys, layered as defaults < JSON file < DCMR_<KEY>
environment variables < command-line flags.
"""

import os
import json
import hashlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Type, TypeVar

from .exceptions import ConfigError
from .rng import check_seed

S = TypeVar("S", bound="_Section")

BRANCHES = ("E", "M")
ENCODERS = ("dcm", "mean_pool")
CONDITIONINGS = ("diagonal", "cross")
LANGUAGE_MODES = ("sample", "sum-all")
DIRECTIONS = ("t2v", "v2t", "both")
SPLITS = ("train", "val", "test")
BACKENDS = ("mock", "http")


class _Section:
    """Shared dict conversion for config dataclasses"""

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls: Type[S], data: Mapping[str, Any], strict: bool = True) -> S:
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if strict and unknown:
            raise ConfigError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
        section = cls(**{k: v for k, v in data.items() if k in names})
        section.validate()
        return section

    def validate(self) -> None:
        pass


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def _check_language(code: str) -> None:
    _require(isinstance(code, str) and len(code) >= 2 and code.isalpha() and code.islower(),
             f"invalid language code {code!r}")


@dataclass
class DcmConfig(_Section):
    """Shape and regularisation of the cross-modal block"""
    model_dim: int = 512
    num_heads: int = 8
    fc_dim: int = 512
    dropout_rate: float = 0.4
    ln_eps: float = 1e-5
    depth: int = 1
    share_branches: bool = False
    english_branch: str = "E"
    encoder: str = "dcm"

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    def validate(self) -> None:
        _require(self.model_dim > 0, "model_dim must be positive")
        _require(self.num_heads > 0, "num_heads must be positive")
        _require(self.model_dim % self.num_heads == 0,
                 f"model_dim {self.model_dim} is not divisible by num_heads {self.num_heads}")
        _require(self.fc_dim > 0, "fc_dim must be positive")
        _require(0.0 <= self.dropout_rate < 1.0, "dropout_rate must lie in [0, 1)")
        _require(self.ln_eps > 0, "ln_eps must be positive")
        _require(self.depth >= 1, "depth must be at least 1")
        _require(self.english_branch in BRANCHES, f"english_branch must be one of {BRANCHES}")
        _require(self.encoder in ENCODERS, f"encoder must be one of {ENCODERS}")


@dataclass
class LossConfig(_Section):
    """Similarity and loss weighting"""
    normalize: bool = False
    temperature: float = 1.0
    learn_temperature: bool = False
    conditioning: str = "diagonal"
    weight_e: float = 1.0
    weight_m: float = 1.0

    def validate(self) -> None:
        _require(self.temperature > 0, "temperature must be positive")
        _require(self.conditioning in CONDITIONINGS,
                 f"conditioning must be one of {CONDITIONINGS}")
        _require(self.weight_e >= 0 and self.weight_m >= 0, "loss weights must be non-negative")


@dataclass
class TrainConfig(_Section):
    """Optimizer, schedule and batching"""
    batch_size: int = 32
    epochs: int = 15
    lr_max: float = 1e-4
    lr_min: float = 1e-6
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    languages: List[str] = field(default_factory=lambda: ["fr"])
    language_mode: str = "sample"

    def validate(self) -> None:
        _require(self.batch_size >= 1, "batch_size must be at least 1")
        _require(self.epochs >= 1, "epochs must be at least 1")
        _require(0 <= self.lr_min <= self.lr_max, "need 0 <= lr_min <= lr_max")
        _require(self.weight_decay >= 0, "weight_decay must be non-negative")
        _require(0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1, "adam betas must lie in [0, 1)")
        _require(self.adam_eps > 0, "adam_eps must be positive")
        check_seed(self.seed)
        for code in self.languages:
            _check_language(code)
        _require("en" not in self.languages, "training languages must not include en")
        _require(len(set(self.languages)) == len(self.languages), "duplicate training language")
        _require(self.language_mode in LANGUAGE_MODES,
                 f"language_mode must be one of {LANGUAGE_MODES}")


@dataclass
class SynthConfig(_Section):
    """Synthetic correlated-triplet dataset"""
    n_items: int = 512
    n_val: int = 0
    n_test: int = 128
    latent_dim: int = 16
    model_dim: int = 32
    frames_per_video: int = 8
    noise_scale: float = 0.1
    caption_languages: List[str] = field(default_factory=lambda: ["fr", "de", "es"])
    seed: int = 0
    language_spread: float = 0.3
    shared_maps: bool = False
    unit_norm: bool = True

    def validate(self) -> None:
        _require(self.n_items >= 0 and self.n_val >= 0 and self.n_test >= 0,
                 "split sizes must be non-negative")
        _require(self.n_items + self.n_val + self.n_test >= 1, "synthetic dataset needs an item")
        _require(self.latent_dim > 0 and self.model_dim > 0, "dims must be positive")
        _require(self.frames_per_video >= 1, "frames_per_video must be at least 1")
        _require(self.noise_scale >= 0 and self.noise_scale != float("inf"),
                 "noise_scale must be finite and non-negative")
        _require(self.language_spread >= 0, "language_spread must be non-negative")
        for code in self.caption_languages:
            _check_language(code)
        _require("en" not in self.caption_languages, "en captions are always generated")
        check_seed(self.seed)


@dataclass
class EvalConfig(_Section):
    """What to score and how"""
    split: str = "test"
    language: str = "en"
    direction: str = "t2v"
    block_size: int = 64
    workers: int = 1
    top_k: int = 10

    def validate(self) -> None:
        _require(self.split in SPLITS, f"split must be one of {SPLITS}")
        _check_language(self.language)
        _require(self.direction in DIRECTIONS, f"direction must be one of {DIRECTIONS}")
        _require(self.block_size >= 1, "block_size must be at least 1")
        _require(self.workers >= 1, "workers must be at least 1")
        _require(self.top_k >= 1, "top_k must be at least 1")


SECTIONS = (DcmConfig, LossConfig, TrainConfig, SynthConfig, EvalConfig)

# Keys that locate files rather than change results; config_hash ignores them.
PATH_KEYS = ("config", "out", "manifest", "checkpoint", "resume", "queries", "cache_dir")

# Sections share flat keys (model_dim, seed); desk-scale dims win for whole runs.
RUN_DEFAULTS: Dict[str, Any] = {
    "model_dim": 32,
    "fc_dim": 32,
    "backend": "mock",
    "preset": "full",
    "seeds": [0],
    "translate_languages": ["fr"],
}


def default_values() -> Dict[str, Any]:
    """Flat default value for every known key"""
    values: Dict[str, Any] = {key: None for key in PATH_KEYS}
    for section in SECTIONS:
        values.update(section().to_dict())
    values.update({k: list(v) if isinstance(v, list) else v for k, v in RUN_DEFAULTS.items()})
    return values


def _coerce(key: str, raw: Any, default: Any) -> Any:
    """Convert a string (or JSON value) to the type of the key's default"""
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, list):
            parts = [p for p in text.replace("+", ",").split(",") if p.strip()]
            if default and isinstance(default[0], int):
                return [int(p) for p in parts]
            return [p.strip() for p in parts]
    except ValueError:
        raise ConfigError(f"cannot read {key}={raw!r} as {type(default).__name__}")
    return text


class RunConfig:
    """Merged, validated settings for one command invocation"""

    def __init__(self, values: Optional[Mapping[str, Any]] = None):
        merged = default_values()
        for key, value in (values or {}).items():
            if key not in merged:
                raise ConfigError(f"unknown config key: {key}")
            merged[key] = _coerce(key, value, merged[key])
        # an lr_max below the default floor drags the floor with it unless lr_min was set
        if "lr_min" not in (values or {}):
            merged["lr_min"] = min(merged["lr_min"], merged["lr_max"])
        self._values = merged
        self.validate()

    @classmethod
    def load(cls, config_file: Optional[str] = None,
             environ: Optional[Mapping[str, str]] = None,
             overrides: Optional[Mapping[str, Any]] = None) -> "RunConfig":
        """Layer file < environment < overrides on top of the defaults"""
        defaults = default_values()
        values: Dict[str, Any] = {}

        if config_file:
            values.update(read_config_file(config_file))

        env = os.environ if environ is None else environ
        for key in defaults:
            name = f"DCMR_{key.upper()}"
            if name in env and key != "config":
                values[key] = env[name]

        for key, value in (overrides or {}).items():
            if value is not None:
                values[key] = value

        if config_file:
            values["config"] = str(config_file)
        return cls(values)

    def validate(self) -> None:
        for section in SECTIONS:
            self.section(section).validate()
        _require(self._values["backend"] in BACKENDS, f"backend must be one of {BACKENDS}")
        _require(len(self._values["seeds"]) >= 1, "seeds must list at least one seed")
        for seed in self._values["seeds"]:
            check_seed(seed)

    def section(self, cls: Type[S]) -> S:
        names = {f.name for f in fields(cls)}
        return cls.from_dict({k: v for k, v in self._values.items() if k in names})

    @property
    def dcm(self) -> DcmConfig:
        return self.section(DcmConfig)

    @property
    def loss(self) -> LossConfig:
        return self.section(LossConfig)

    @property
    def train(self) -> TrainConfig:
        return self.section(TrainConfig)

    @property
    def synth(self) -> SynthConfig:
        return self.section(SynthConfig)

    @property
    def eval(self) -> EvalConfig:
        return self.section(EvalConfig)

    def get(self, key: str, default: Any = None) -> Any:
        return self._values.get(key, default)

    def __getitem__(self, key: str) -> Any:
        return self._values[key]

    def to_dict(self) -> Dict[str, Any]:
        return dict(self._values)

    @property
    def config_hash(self) -> str:
        return config_hash(self._values)


def config_hash(values: Mapping[str, Any]) -> str:
    """SHA-256 of the canonical JSON of every non-path key"""
    canonical = {k: v for k, v in values.items() if k not in PATH_KEYS}
    blob = json.dumps(canonical, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def read_config_file(path: str) -> Dict[str, Any]:
    """Read a flat JSON object of config keys"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ConfigError(f"cannot read config file {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    known = default_values()
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown keys in {path}: {', '.join(unknown)}")
    return data


class Config:
    """Environment lookups for the translation backend and caches"""

    @staticmethod
    def get_cache_dir() -> Path:
        """DCMR_CACHE_DIR, else $XDG_CACHE_HOME/dcmr, else ~/.cache/dcmr"""
        override = os.environ.get("DCMR_CACHE_DIR")
        if override:
            return Path(override)
        if "XDG_CACHE_HOME" in os.environ:
            cache_home = Path(os.environ["XDG_CACHE_HOME"])
        else:
            cache_home = Path.home() / ".cache"
        return cache_home / "dcmr"

    @staticmethod
    def get_mt_endpoint() -> Optional[str]:
        """Translation service base URL"""
        return os.environ.get("DCM_MT_ENDPOINT")

    @staticmethod
    def get_mt_token() -> Optional[str]:
        """Bearer token for the translation service"""
        return os.environ.get("DCM_MT_TOKEN")

    @staticmethod
    def get_log_level() -> str:
        """DCMR_LOG_LEVEL upper-cased, INFO when unset"""
        return os.environ.get("DCMR_LOG_LEVEL", "INFO").upper()
