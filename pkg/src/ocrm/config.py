"""Flat ``key = value`` run configuration with command-line overrides."""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .pipeline import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # training
    lam: float = 1.0
    lr_generator: float = 2e-4
    lr_discriminator_ratio: float = 0.01
    batch_size: int = 64
    epochs: int = 50
    k: int = 256
    seed: int = 0
    arm: str = "full"
    c: float = 0.1
    kernel: str = "linear"
    gamma: float = 1.0
    svdd_tol: float = 1e-6
    flip: bool = False
    recon_reduction: str = "sum"
    # protocol
    dataset: str = "mnist"
    data_dir: str = ""  # empty: $OCRM_DATA_DIR/<dataset>
    positive_class: int = 1
    n_train: int = 0  # 0 = every in-class training image
    trials: int = 10
    out: str = "runs"
    report_format: str = "csv"

    def __post_init__(self):
        if self.report_format not in ("csv", "markdown"):
            raise ConfigError("report_format must be 'csv' or 'markdown'")
        if self.dataset not in ("mnist", "cifar10", "gtsrb"):
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.trials < 1 or self.n_train < 0:
            raise ConfigError("trials must be >= 1 and n_train >= 0")
        try:
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def channels(self):
        return 1 if self.dataset == "mnist" else 3

    def train_config(self):
        names = set(TrainConfig.field_names()) - {"channels"}
        kw = {n: getattr(self, n) for n in names}
        return TrainConfig(channels=self.channels, **kw)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key, raw):
    kind = _TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_text(text):
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys raise."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"unknown config key {key!r} (line {lineno})")
        out[key] = _convert(key, value)
    return out


def resolve(path=None, overrides=None):
    """Defaults, then the file at ``path``, then ``overrides`` (flags win)."""
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_text(text))
    for key, v in (overrides or {}).items():
        if key not in _TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        if v is not None:
            values[key] = _convert(key, v) if isinstance(v, str) else v
    return RunConfig(**values)


def to_text(cfg):
    """Serialize a dataclass config; :func:`parse_text` reads it back exactly."""
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {repr(v) if isinstance(v, float) else str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


def write_resolved(cfg, directory, name="resolved_config.txt"):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    path = d / name
    path.write_text(to_text(cfg))
    return path


def train_config_from_text(text):
    """Rebuild a :class:`TrainConfig` from its :func:`to_text` snapshot."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    kw = {}
    for line in text.splitlines():
        if "=" not in line:
            continue
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"unknown snapshot key {key!r}")
        kind = types[key]
        kw[key] = (value == "true") if kind == "bool" else int(value) if kind == "int" else float(value) if kind == "float" else value
    return TrainConfig(**kw)
