"""Flat ``key = value`` experiment configuration.

Lines are ``key = value``; ``#`` starts a comment; lists are comma separated.
Synthetic domains are described with dotted keys (``source.trend_slope``),
CSV domains with ``source_csv``/``target_csv``. Recognised keys:

==========================  =================================================
dataset                     label used in result tables
source_csv, target_csv      comma-separated CSV paths
column                      value column in the CSV files (default: last)
source.<field>              SynthSpec field for the synthetic source domain
target.<field>              SynthSpec field for the synthetic target domain
source_count                number of synthetic source series (seeds offset)
integrate_conditions        pool all source series for meta-training
methods                     smaml, maml_random, smaml_shuffle, maml_dtw, esmaml
N, K, input_len             grid values (lists allowed)
seeds                       seed indices, default 0,1,2
target_N                    target tasks per run, ``all`` (default) or a count
stride                      window stride (default 1)
differencing                auto, off, or a fixed order 0/1/2
max_d, adf_max_lag          auto-differencing limits
es_alpha                    smoothing factor, esmaml only
hidden_size                 LSTM width
inner_lr, inner_steps, outer_lr, meta_epochs, tasks_per_meta_batch,
first_order, finetune_steps MetaConfig fields
==========================  =================================================
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .data import SynthSpec
from .meta import MetaConfig

METHODS = {
    "smaml": "successive",
    "maml_random": "random",
    "smaml_shuffle": "shuffle",
    "maml_dtw": "dtw",
    "esmaml": "es",
}


class ConfigError(ValueError):
    pass


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _list(v: str) -> list[str]:
    return [p.strip() for p in v.split(",") if p.strip()]


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _ints(key: str, v: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in _list(v))
    except ValueError:
        raise ConfigError(f"{key}: expected integers, got {v!r}") from None


_SYNTH_TYPES = {f.name: f.type for f in fields(SynthSpec)}


def synth_spec_from_kv(kv: dict[str, str], prefix: str = "") -> SynthSpec:
    raw = {}
    for key, value in kv.items():
        if not key.startswith(prefix):
            continue
        name = key[len(prefix):]
        if name not in _SYNTH_TYPES:
            raise ConfigError(f"unknown synthetic spec key {key!r}")
        try:
            if name in ("length", "season_period", "seed"):
                raw[name] = int(value)
            elif name == "ar_coeffs":
                raw[name] = tuple(float(p) for p in _list(value))
            else:
                raw[name] = float(value)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {value!r}") from None
    if "length" not in raw:
        raise ConfigError(f"{prefix or 'spec '}length is required")
    try:
        return SynthSpec(**raw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "synthetic"
    source_csv: tuple[str, ...] = ()
    target_csv: tuple[str, ...] = ()
    column: str | None = None
    source_synth: SynthSpec | None = None
    target_synth: SynthSpec | None = None
    source_count: int = 1
    integrate_conditions: bool = False
    methods: tuple[str, ...] = ("smaml",)
    N: tuple[int, ...] = (70,)
    K: tuple[int, ...] = (5,)
    input_len: tuple[int, ...] = (16,)
    seeds: tuple[int, ...] = (0, 1, 2)
    target_N: int | None = None  # None: every eligible target window
    stride: int = 1
    differencing: str = "auto"
    max_d: int = 2
    adf_max_lag: int | None = None
    es_alpha: float | None = None
    hidden_size: int = 32
    meta: MetaConfig = field(default_factory=MetaConfig)
    base_dir: Path = Path(".")

    def __post_init__(self):
        self.validate()

    @property
    def alpha(self) -> float:
        return 0.3 if self.es_alpha is None else self.es_alpha

    def validate(self):
        if not self.source_csv and self.source_synth is None:
            raise ConfigError("no source domain: set source_csv or source.* keys")
        if not self.target_csv and self.target_synth is None:
            raise ConfigError("no target domain: set target_csv or target.* keys")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown method(s) {bad}; choose from {sorted(METHODS)}")
        for L in self.input_len:
            if L < 4 or L % 4:
                raise ConfigError(f"input_len {L} is not a positive multiple of 4")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if any(n < 1 for n in self.N) or any(k < 1 for k in self.K) or not self.N or not self.K:
            raise ConfigError("N and K values must be positive")
        if self.es_alpha is not None:
            if "esmaml" not in self.methods:
                raise ConfigError("es_alpha is only valid together with method esmaml")
            if not 0 < self.es_alpha <= 1:
                raise ConfigError("es_alpha must lie in (0, 1]")
        if self.differencing not in ("auto", "off", "0", "1", "2"):
            raise ConfigError(f"differencing must be auto, off, 0, 1 or 2, got {self.differencing!r}")
        if self.max_d not in (1, 2):
            raise ConfigError("max_d must be 1 or 2")
        if self.stride < 1 or self.hidden_size < 1 or self.source_count < 1:
            raise ConfigError("stride, hidden_size and source_count must be positive")
        if self.target_N is not None and self.target_N < 1:
            raise ConfigError("target_N must be positive")
        ft = self.meta.finetune_steps
        if ft is not None and ft < 0:
            raise ConfigError("finetune_steps must be non-negative")

    def with_(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


_META_FIELDS = {
    "inner_lr": float,
    "inner_steps": int,
    "outer_lr": float,
    "meta_epochs": int,
    "tasks_per_meta_batch": int,
    "first_order": _bool,
    "finetune_steps": int,
}


def config_from_kv(kv: dict[str, str], base_dir: Path = Path(".")) -> ExperimentConfig:
    kv = dict(kv)
    kw: dict = {"base_dir": base_dir}
    meta_kw = {}
    try:
        for key in list(kv):
            if key.startswith(("source.", "target.")):
                continue
            v = kv.pop(key)
            if key == "dataset":
                kw[key] = v
            elif key in ("source_csv", "target_csv"):
                kw[key] = tuple(_list(v))
            elif key == "column":
                kw[key] = v
            elif key in ("methods", "method"):
                kw["methods"] = tuple(_list(v))
            elif key in ("N", "K", "input_len", "seeds"):
                kw[key] = _ints(key, v)
            elif key == "target_N":
                kw[key] = None if v.lower() == "all" else int(v)
            elif key in ("stride", "max_d", "hidden_size", "source_count"):
                kw[key] = int(v)
            elif key == "adf_max_lag":
                kw[key] = None if v.lower() == "auto" else int(v)
            elif key == "integrate_conditions":
                kw[key] = _bool(v)
            elif key == "differencing":
                kw[key] = v.lower()
            elif key == "es_alpha":
                kw[key] = float(v)
            elif key in _META_FIELDS:
                meta_kw[key] = _META_FIELDS[key](v)
            else:
                raise ConfigError(f"unknown config key {key!r}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{key}: {exc}") from None
    if any(k.startswith("source.") for k in kv):
        kw["source_synth"] = synth_spec_from_kv(kv, "source.")
    if any(k.startswith("target.") for k in kv):
        kw["target_synth"] = synth_spec_from_kv(kv, "target.")
    try:
        kw["meta"] = MetaConfig(**meta_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(**kw)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return config_from_kv(parse_kv(text), base_dir=path.parent)
