"""CSV ingestion, synthetic datasets, domain registries and result tables."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .series import Series

RESULT_COLUMNS = ("dataset", "method", "N", "K", "input_len", "seed_count", "mae_mean", "mae_per_seed")


class DataError(ValueError):
    pass


def load_csv(path, columns: str | Sequence[str] | None = None, name: str | None = None) -> Series:
    """Read one or more numeric columns from a headed CSV file.

    With ``columns=None`` the last column is used. Line numbers in error
    messages count the header as line 1.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if columns is None:
            cols = [header[-1]]
        elif isinstance(columns, str):
            cols = [c.strip() for c in columns.split(",")]
        else:
            cols = list(columns)
        missing = [c for c in cols if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}; header is {header}")
        idx = [header.index(c) for c in cols]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            vals = []
            for i, c in zip(idx, cols):
                try:
                    v = float(row[i])
                except (ValueError, IndexError):
                    raise DataError(f"{path}: line {lineno}: column {c!r} is not numeric") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: line {lineno}: column {c!r} is not finite ({row[i]!r})")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.array(rows, dtype=np.float64)
    return Series(arr[:, 0] if len(cols) == 1 else arr, name=name or path.stem)


def write_csv(series: Series, path, column: str = "value") -> Path:
    path = Path(path)
    vals = series.values if series.values.ndim == 2 else series.values[:, None]
    names = [column] if vals.shape[1] == 1 else [f"{column}{i}" for i in range(vals.shape[1])]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *names])
        for t, row in enumerate(vals):
            w.writerow([t, *(repr(float(v)) for v in row)])
    return path


@dataclass(frozen=True)
class SynthSpec:
    length: int
    trend_slope: float = 0.0
    season_amplitude: float = 0.0
    season_period: int = 24
    ar_coeffs: tuple = ()
    noise_sigma: float = 0.0
    seed: int = 0
    offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "ar_coeffs", tuple(float(c) for c in self.ar_coeffs))
        if self.length < 1:
            raise DataError("length must be positive")
        if self.season_amplitude != 0 and self.season_period < 2:
            raise DataError("season_period must be at least 2")
        if self.noise_sigma < 0:
            raise DataError("noise_sigma must be non-negative")
        if not ar_is_stationary(self.ar_coeffs):
            raise DataError(f"AR coefficients {self.ar_coeffs} are not stationary")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise DataError(f"unknown synth spec keys: {sorted(extra)}")
        return cls(**d)


def ar_is_stationary(coeffs: Sequence[float]) -> bool:
    """True when all roots of 1 - a1 z - ... - ap z^p lie outside the unit circle."""
    if not coeffs:
        return True
    poly = np.r_[1.0, -np.asarray(coeffs, dtype=np.float64)]
    roots = np.roots(poly[::-1])
    return bool(np.all(np.abs(roots) > 1.0 + 1e-10))


BURN_IN = 200


def generate_synthetic(spec: SynthSpec) -> tuple[Series, dict]:
    """Trend + sinusoidal season + AR noise. Returns the series and its components."""
    t = np.arange(spec.length, dtype=np.float64)
    trend = spec.offset + spec.trend_slope * t
    season = (
        spec.season_amplitude * np.sin(2.0 * np.pi * t / spec.season_period)
        if spec.season_amplitude
        else np.zeros(spec.length)
    )
    noise = np.zeros(spec.length)
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        eps = rng.normal(0.0, spec.noise_sigma, spec.length + BURN_IN)
        p = len(spec.ar_coeffs)
        buf = np.zeros(spec.length + BURN_IN)
        for i in range(len(buf)):
            acc = eps[i]
            for j in range(1, p + 1):
                if i - j >= 0:
                    acc += spec.ar_coeffs[j - 1] * buf[i - j]
            buf[i] = acc
        noise = buf[BURN_IN:]
    y = trend + season + noise
    truth = {"spec": asdict(spec), "trend": trend, "season": season, "noise": noise}
    return Series(y, name=f"synth{spec.seed}"), truth


def write_ground_truth(truth: dict, path) -> Path:
    out = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in truth.items()}
    out["spec"] = dict(out["spec"], ar_coeffs=list(out["spec"]["ar_coeffs"]))
    path = Path(path)
    path.write_text(json.dumps(out, indent=1) + "\n", encoding="utf-8")
    return path


@dataclass(frozen=True)
class DomainSpec:
    name: str
    role: str
    series: tuple
    operating_condition: str = ""

    def __post_init__(self):
        if self.role not in ("source", "target"):
            raise DataError(f"domain role must be source or target, got {self.role!r}")
        object.__setattr__(self, "series", tuple(self.series))
        if not self.series:
            raise DataError(f"domain {self.name!r} has no series")


@dataclass
class Registry:
    sources: list = field(default_factory=list)
    targets: list = field(default_factory=list)
    integrated: bool = False

    def __len__(self):
        return len(self.sources) + len(self.targets)

    @property
    def entries(self) -> list:
        return [*self.sources, *self.targets]

    def source_series(self) -> list[Series]:
        return [s for d in self.sources for s in d.series]

    def target_series(self) -> list[Series]:
        return [s for d in self.targets for s in d.series]


def register_domains(source_specs: Sequence[DomainSpec], target_specs: Sequence[DomainSpec], integrate_conditions: bool = False) -> Registry:
    """Build the source/target registry.

    With ``integrate_conditions`` all source domains merge into one pooled
    domain whose series are windowed separately.
    """
    if not source_specs:
        raise DataError("at least one source domain is required")
    names = [d.name for d in [*source_specs, *target_specs]]
    series_names = [s.name for d in [*source_specs, *target_specs] for s in d.series]
    for label, pool in (("domain", names), ("series", series_names)):
        dup = sorted({n for n in pool if pool.count(n) > 1})
        if dup:
            raise DataError(f"duplicate {label} names: {dup}")
    sources = list(source_specs)
    if integrate_conditions and len(sources) > 1:
        merged = DomainSpec(
            "+".join(d.name for d in sources),
            "source",
            tuple(s for d in sources for s in d.series),
            "+".join(d.operating_condition for d in sources),
        )
        sources = [merged]
    return Registry(sources, list(target_specs), integrate_conditions)


@dataclass(frozen=True)
class ResultRow:
    dataset: str
    method: str
    N: int
    K: int
    input_len: int
    per_seed: tuple  # seed-level mean MAEs, in seed order
    complete: bool = True

    @property
    def mae_mean(self) -> float:
        return float(np.mean(self.per_seed))


def write_results(rows: Sequence[ResultRow], out_dir, stem: str = "results") -> tuple[Path, Path]:
    """Write a full-precision CSV and a 3-decimal Markdown grid."""
    if not rows:
        raise DataError("no result rows to write")
    out_dir = Path(out_dir)
    csv_path, md_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.md"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with csv_path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RESULT_COLUMNS)
            for r in rows:
                w.writerow(
                    [r.dataset, r.method, r.N, r.K, r.input_len, len(r.per_seed), repr(r.mae_mean),
                     ";".join(repr(float(v)) for v in r.per_seed)]
                )
        md_path.write_text(markdown_table(rows), encoding="utf-8")
    except OSError as exc:
        raise DataError(f"could not write results to {exc.filename or out_dir}: {exc.strerror}") from exc
    return csv_path, md_path


def markdown_table(rows: Iterable[ResultRow]) -> str:
    """Grid with one row per (dataset, method, K, input_len) and one column per N."""
    rows = list(rows)
    Ns = sorted({r.N for r in rows}, reverse=True)
    keys, cells = [], {}
    for r in rows:
        key = (r.dataset, r.method, r.K, r.input_len)
        if key not in cells:
            keys.append(key)
            cells[key] = {}
        mark = "" if r.complete else "*"
        cells[key][r.N] = f"{r.mae_mean:.3f}{mark}"
    header = ["dataset", "method", "K", "input_len", *[f"N={n}" for n in Ns]]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for key in keys:
        ds, m, k, L = key
        lines.append("| " + " | ".join([ds, m, str(k), str(L), *[cells[key].get(n, "") for n in Ns]]) + " |")
    if any(not r.complete for r in rows):
        lines.append("")
        lines.append("\\* incomplete: at least one seed failed")
    return "\n".join(lines) + "\n"


def read_results(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
