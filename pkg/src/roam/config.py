"""Run configuration and its flat ``key = value`` text format.

Example file::

    mode = SSL_ROAM
    kappa_set = INPUT,ENC1,LAST
    beta = 75
    data.height = 32
    data.n_unlabeled = 200

Keys under ``manifest.`` are reserved for run manifests and ignored when a
manifest is read back as a config. Any other unknown key is an error.
"""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .data import DomainShift, SyntheticTaskSpec
from .errors import ConfigError
from .types import Layer, parse_kappa_set


class Mode(str, enum.Enum):
    LOWER_BOUND = "LOWER_BOUND"
    UPPER_BOUND = "UPPER_BOUND"
    SSL_ROAM = "SSL_ROAM"
    SSL_PSEUDO_BASELINE = "SSL_PSEUDO_BASELINE"
    SUP_ROAM_LB = "SUP_ROAM_LB"
    SUP_ROAM_UB = "SUP_ROAM_UB"
    FULLY_SUP_ROAM = "FULLY_SUP_ROAM"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class DataSpec:
    """Where the data comes from and how it is split."""

    height: int = 64
    width: int = 64
    num_classes: int = 4
    noise_sigma: float = 0.08
    shapes_min: int = 1
    shapes_max: int = 1
    shift_gamma: float = 1.0
    shift_contrast: float = 1.0
    shift_size_bias: float = 0.0
    n_labeled: int = 20
    n_unlabeled: int = 200
    n_validation: int = 20
    n_test: int = 50
    # -1: derive from the run seed
    seed: int = -1
    # empty: synthetic task; otherwise a directory readable by load_external
    dir: str = ""

    def task_spec(self) -> SyntheticTaskSpec:
        return SyntheticTaskSpec(
            height=self.height, width=self.width, num_classes=self.num_classes,
            shapes_per_class=(self.shapes_min, self.shapes_max), noise_sigma=self.noise_sigma,
            shift=DomainShift(self.shift_gamma, self.shift_contrast, self.shift_size_bias),
        )

    @property
    def total(self) -> int:
        return self.n_labeled + self.n_unlabeled + self.n_validation + self.n_test


@dataclass(frozen=True)
class RunConfig:
    mode: Mode = Mode.SSL_ROAM
    kappa_set: tuple[Layer, ...] = (Layer.INPUT, Layer.ENC1, Layer.LAST)
    T: float = 0.5
    alpha: float = 0.75
    beta: float = 75.0
    sharpen: bool = True
    concatenate: bool = True
    mix_skips: bool = False
    # extension: draw one lambda per sample instead of per batch
    per_sample_lambda: bool = False
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 8
    pretrain_epochs: int = 40
    train_epochs: int = 40
    seed: int = 0
    widths: tuple[int, ...] = (32, 64, 128)
    data: DataSpec = field(default_factory=DataSpec)
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.T <= 0:
            raise ConfigError("T must be > 0", key="T")
        if self.alpha <= 0:
            raise ConfigError("alpha must be > 0", key="alpha")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0", key="beta")
        if not self.kappa_set:
            raise ConfigError("kappa_set must not be empty", key="kappa_set")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", key="batch_size")
        if self.pretrain_epochs < 0 or self.train_epochs < 0:
            raise ConfigError("epoch counts must be >= 0", key="train_epochs")
        if len(self.widths) != 3 or min(self.widths) < 32:
            raise ConfigError("widths must be three channel counts, each >= 32", key="widths")

    @property
    def data_seed(self) -> int:
        return self.seed if self.data.seed < 0 else self.data.seed

    def override(self, **changes) -> "RunConfig":
        """``replace`` that also accepts dotted ``data.*`` keys given as ``data__key``."""
        data_changes = {k[6:]: v for k, v in changes.items() if k.startswith("data__")}
        top = {k: v for k, v in changes.items() if not k.startswith("data__")}
        if data_changes:
            top["data"] = replace(self.data, **data_changes)
        return replace(self, **top)


# ---- text format -----------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parser_for(name: str, default):
    if name == "kappa_set":
        return parse_kappa_set
    if name == "mode":
        return lambda s: Mode(s.strip().upper())
    if name == "widths":
        return lambda s: tuple(int(v) for v in s.split(","))
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int):
        return lambda s: int(s)
    if isinstance(default, float):
        return lambda s: float(s)
    return lambda s: s.strip()


def _field_defaults(cls) -> dict:
    inst = cls()
    return {f.name: getattr(inst, f.name) for f in fields(cls)}


_TOP = {k: v for k, v in _field_defaults(RunConfig).items() if k != "data"}
_DATA = _field_defaults(DataSpec)


def known_keys() -> list[str]:
    return list(_TOP) + [f"data.{k}" for k in _DATA]


def to_pairs(config: RunConfig) -> list[tuple[str, str]]:
    pairs = [(k, _fmt(getattr(config, k))) for k in _TOP]
    pairs += [(f"data.{k}", _fmt(getattr(config.data, k))) for k in _DATA]
    return pairs


def dumps(config: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in to_pairs(config))


def parse_pairs(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def from_pairs(pairs: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    """Apply string overrides on top of ``base`` (defaults if omitted)."""
    base = base or RunConfig()
    top, data = {}, {}
    for key, raw in pairs.items():
        if key.startswith("manifest."):
            continue
        if key.startswith("data."):
            name, target, defaults = key[5:], data, _DATA
        else:
            name, target, defaults = key, top, _TOP
        if name not in defaults:
            raise ConfigError(f"unknown config key {key!r}", key=key)
        try:
            target[name] = _parser_for(name, defaults[name])(raw)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"bad value for {key!r}: {raw!r} ({e})", key=key) from e
    if data:
        top["data"] = replace(base.data, **data)
    try:
        return replace(base, **top)
    except ConfigError:
        raise
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e


def loads(text: str) -> RunConfig:
    return from_pairs(parse_pairs(text))


def load(path) -> RunConfig:
    return loads(Path(path).read_text())


def save(config: RunConfig, path) -> None:
    Path(path).write_text(dumps(config))


def config_hash(config: RunConfig) -> str:
    """Digest of every key that can influence results (``out_dir`` excluded)."""
    body = "".join(f"{k}={v}\n" for k, v in to_pairs(config) if k != "out_dir")
    return hashlib.sha256(body.encode()).hexdigest()[:16]


def diff_keys(a: RunConfig, b: RunConfig) -> list[str]:
    pa, pb = dict(to_pairs(a)), dict(to_pairs(b))
    return [k for k in pa if pa[k] != pb[k] and k != "out_dir"]


__all__ = [
    "DataSpec", "Mode", "RunConfig", "config_hash", "diff_keys", "dumps", "from_pairs", "known_keys",
    "load", "loads", "parse_pairs", "save", "to_pairs",
]
