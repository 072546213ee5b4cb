"""Training configuration and the flat ``key = value`` config file format.

One setting per line, ``#`` starts a comment, blank lines are ignored.
Values are parsed by the type of the matching :class:`TrainConfig` field;
tuples are comma-separated and booleans accept true/false/yes/no/1/0.
"""
import dataclasses
from dataclasses import dataclass, field

from switchseg.errors import ConfigError
from switchseg.model import ModelConfig
from switchseg.switch import ABLATABLE, force_switch_mode


@dataclass
class TrainConfig:
    k: int = 4
    batch_size: int = 128
    tasks_per_step: int = 6
    dropout: float = 0.2
    patience: int = 7
    max_epochs: int = 50
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float = 5.0
    seed: int = 0
    switch_mode: str = "normal"
    ablate: tuple = field(default_factory=tuple)
    multi: bool = True
    d_e: int = 100
    d_bi: int = 100
    d_h: int = 100
    d_m: int = 20
    task_slots: int = 8
    crf_boundary: bool = False
    min_count: int = 1
    max_len: int = 300
    threads: int = 1
    eval_batch: int = 256

    def __post_init__(self):
        self.ablate = tuple(sorted(a for a in self.ablate if a))
        for name in ("k", "batch_size", "tasks_per_step", "patience", "max_epochs",
                     "d_e", "d_h", "task_slots", "min_count", "max_len", "threads",
                     "eval_batch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.d_bi < 0 or self.d_m < 1:
            raise ConfigError("d_bi must be >= 0 and d_m >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.lr < 0 or self.eps <= 0 or self.clip <= 0:
            raise ConfigError("lr must be >= 0, eps and clip > 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)")
        for a in self.ablate:
            if a not in ABLATABLE:
                raise ConfigError(f"cannot ablate {a!r}; choose from {ABLATABLE}")
        try:
            force_switch_mode(self.switch_mode, self.ablate)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def model_config(self):
        return ModelConfig(k=self.k, d_e=self.d_e, d_bi=self.d_bi, d_h=self.d_h,
                           d_m=self.d_m, multi=self.multi, task_slots=self.task_slots,
                           dropout=self.dropout, switch_mode=self.switch_mode,
                           ablate=self.ablate, crf_boundary=self.crf_boundary)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["ablate"] = list(self.ablate)
        return d

    def replace(self, **overrides):
        return dataclasses.replace(self, **overrides)


_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
_TRUE, _FALSE = {"true", "yes", "1", "on"}, {"false", "no", "0", "off"}


def parse_value(name, text):
    if name not in _FIELDS:
        raise ConfigError(f"unknown setting {name!r}")
    default = _FIELDS[name].default
    if default is dataclasses.MISSING:
        default = _FIELDS[name].default_factory()
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in _TRUE | _FALSE:
                raise ValueError(text)
            return low in _TRUE
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(p.strip() for p in text.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None
    return text


def parse_config_text(text):
    """Settings dict from config file text (unknown keys are errors)."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        try:
            out[key] = parse_value(key, value)
        except ConfigError as exc:
            raise ConfigError(f"line {n}: {exc}") from None
    return out


def load_config(path=None, overrides=None):
    """File settings, then ``overrides`` (already typed), into a validated config."""
    settings = {}
    if path is not None:
        with open(path, encoding="utf-8") as f:
            settings.update(parse_config_text(f.read()))
    settings.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return TrainConfig(**settings)


def dump_config(config):
    lines = []
    for name, value in config.to_dict().items():
        if isinstance(value, list):
            value = ",".join(value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"
