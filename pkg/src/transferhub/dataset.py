"""Park time series: CSV ingestion, normalization and the day-level splitting protocol.

A park's data is a sequence of whole days. Every day holds ``samples_per_day``
rows; the position of a row inside its day is its forecast horizon index
(1-based), i.e. the lead time inside the 24-48 h day-ahead window.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

SEASONS = ("spring", "summer", "autumn", "winter")
TRAIN_DAYS_GRID = (7, 14, 30, 60, 90)

_SEASON_OF_MONTH = {
    3: "spring", 4: "spring", 5: "spring",
    6: "summer", 7: "summer", 8: "summer",
    9: "autumn", 10: "autumn", 11: "autumn",
    12: "winter", 1: "winter", 2: "winter",
}


class DatasetError(ValueError):
    """Raised for malformed input files or protocol violations."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TimeSeriesDataset:
    park_id: str
    timestamps: np.ndarray  # datetime64[s]
    features: np.ndarray  # (N, D)
    power: np.ndarray  # (N,)
    feature_names: tuple[str, ...]
    samples_per_day: int = 96
    nominal_power: float = 1.0
    normalized: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[s]")
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.power, dtype=float)
        if X.ndim != 2 or y.ndim != 1 or len(X) != len(y) or len(ts) != len(y):
            raise DatasetError("features, power and timestamps must align")
        if X.shape[1] != len(self.feature_names):
            raise DatasetError("feature_names does not match feature columns")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DatasetError("non-finite values in features or power")
        if len(ts) > 1 and np.any(np.diff(ts).astype(np.int64) <= 0):
            raise DatasetError("non-monotonic timestamps")
        if self.samples_per_day < 1:
            raise DatasetError("samples_per_day must be positive")
        object.__setattr__(self, "timestamps", _frozen(ts))
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "power", _frozen(y))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def __len__(self) -> int:
        return len(self.power)

    @property
    def step_seconds(self) -> int:
        return 86400 // self.samples_per_day

    @property
    def n_days(self) -> int:
        self._require_whole_days()
        return len(self) // self.samples_per_day

    def _require_whole_days(self):
        if len(self) % self.samples_per_day:
            raise DatasetError(
                f"{len(self)} rows do not split into whole days of {self.samples_per_day}"
            )

    @property
    def day_of_row(self) -> np.ndarray:
        """0-based day number of each row."""
        self._require_whole_days()
        return np.arange(len(self)) // self.samples_per_day

    @property
    def horizon(self) -> np.ndarray:
        """1-based horizon index of each row inside its day."""
        self._require_whole_days()
        return np.arange(len(self)) % self.samples_per_day + 1

    @property
    def day_origins(self) -> np.ndarray:
        """Date of the first timestamp of each day."""
        self._require_whole_days()
        return self.timestamps[:: self.samples_per_day].astype("datetime64[D]")

    def day_seasons(self) -> np.ndarray:
        months = self.day_origins.astype("datetime64[M]").astype(int) % 12 + 1
        return np.array([_SEASON_OF_MONTH[m] for m in months])

    def select_days(self, days: Sequence[int]) -> "TimeSeriesDataset":
        """Subset of whole days, kept in chronological order."""
        days = np.sort(np.asarray(days, dtype=int))
        if len(days) and (days[0] < 0 or days[-1] >= self.n_days):
            raise DatasetError("day index out of range")
        rows = (days[:, None] * self.samples_per_day + np.arange(self.samples_per_day)).ravel()
        return replace(
            self,
            timestamps=self.timestamps[rows],
            features=self.features[rows],
            power=self.power[rows],
        )

    def write_csv(self, path) -> None:
        write_csv(self, path)


def _parse_timestamp(text: str) -> np.datetime64:
    t = text.strip()
    if t.endswith("Z"):
        t = t[:-1] + "+00:00"
    dt = datetime.fromisoformat(t)
    if dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc).replace(tzinfo=None)
    return np.datetime64(dt, "s")


def _format_timestamp(ts: np.datetime64) -> str:
    return str(np.datetime_as_string(ts, unit="s")) + "Z"


def load_csv(path, park_id: str | None = None, allow_day_gaps: bool = False) -> TimeSeriesDataset:
    """Read a ``timestamp,power,<features...>`` file.

    The sampling step is inferred from the first two rows and every later row
    must follow it. With ``allow_day_gaps`` jumps between days are accepted as
    long as they land on a whole number of days, which is what day-level
    splits produce when written back to disk.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        for col in ("timestamp", "power"):
            if col not in header:
                raise DatasetError(f"missing column: {col}")
        if header[:2] != ["timestamp", "power"]:
            raise DatasetError("header must start with timestamp,power")
        feature_names = header[2:]
        stamps, rows = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DatasetError(f"row {lineno}: expected {len(header)} cells, got {len(rec)}")
            try:
                stamps.append(_parse_timestamp(rec[0]))
            except ValueError:
                raise DatasetError(f"row {lineno}: unparseable timestamp {rec[0]!r}") from None
            try:
                vals = [float(c) for c in rec[1:]]
            except ValueError:
                raise DatasetError(f"row {lineno}: unparseable numeric cell") from None
            if not all(math.isfinite(v) for v in vals):
                raise DatasetError(f"row {lineno}: NaN or infinite value")
            rows.append(vals)
    if not rows:
        raise DatasetError(f"{path}: no data rows")

    ts = np.array(stamps, dtype="datetime64[s]")
    data = np.array(rows, dtype=float).reshape(len(rows), len(header) - 1)
    step = 900
    if len(ts) > 1:
        diffs = np.diff(ts).astype(np.int64)
        bad = np.flatnonzero(diffs <= 0)
        if len(bad):
            raise DatasetError(f"row {bad[0] + 3}: non-monotonic timestamps")
        step = int(diffs[0])
        irregular = diffs != step
        if allow_day_gaps:
            irregular &= (diffs % 86400) != step % 86400
        if np.any(irregular):
            raise DatasetError(f"row {np.flatnonzero(irregular)[0] + 3}: irregular timestamps")
    if 86400 % step:
        raise DatasetError(f"step of {step} s does not divide a day")
    return TimeSeriesDataset(
        park_id=park_id if park_id is not None else path.stem,
        timestamps=ts,
        features=data[:, 1:],
        power=data[:, 0],
        feature_names=tuple(feature_names),
        samples_per_day=86400 // step,
    )


def write_csv(ds: TimeSeriesDataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "power", *ds.feature_names])
        for t, p, x in zip(ds.timestamps, ds.power, ds.features):
            w.writerow([_format_timestamp(t), repr(float(p)), *(repr(float(v)) for v in x)])


def normalize_power(ds: TimeSeriesDataset, nominal: float) -> TimeSeriesDataset:
    """Divide power by the park's nominal capacity."""
    if not nominal > 0:
        raise DatasetError("nominal power must be positive")
    power = ds.power / nominal
    if np.any(power < 0):
        raise DatasetError("negative power after normalization")
    return replace(ds, power=power, nominal_power=float(nominal), normalized=True)


@dataclass(frozen=True)
class SplitSpec:
    season: str
    train_days: int
    test_fraction: float = 0.25
    seed: int = 0
    allow_off_grid: bool = False

    def __post_init__(self):
        if self.season not in SEASONS:
            raise DatasetError(f"unknown season {self.season!r}")
        if not self.allow_off_grid and self.train_days not in TRAIN_DAYS_GRID:
            raise DatasetError(f"train_days must be one of {TRAIN_DAYS_GRID}")
        if self.train_days < 1:
            raise DatasetError("train_days must be positive")
        if not 0 < self.test_fraction < 1:
            raise DatasetError("test_fraction must lie in (0, 1)")


def split_days(n_days: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample round(fraction * n_days) whole days without replacement."""
    if not 0 < fraction < 1:
        raise DatasetError("fraction must lie in (0, 1)")
    n_held = int(round(fraction * n_days))
    if n_held < 1 or n_held >= n_days:
        raise DatasetError(f"cannot split {n_days} days with fraction {fraction}")
    rng = np.random.default_rng(seed)
    held = np.sort(rng.choice(n_days, size=n_held, replace=False))
    kept = np.setdiff1d(np.arange(n_days), held)
    return kept, held


def split_test_days(ds: TimeSeriesDataset, fraction: float = 0.25, seed: int = 0):
    """Return ``(train_ds, test_ds)`` partitioned by whole days."""
    if not 0 < fraction < 1:
        raise DatasetError("fraction must lie in (0, 1)")
    if ds.n_days < 4:
        raise DatasetError(f"need at least 4 whole days, got {ds.n_days}")
    train, test = split_days(ds.n_days, fraction, seed)
    return ds.select_days(train), ds.select_days(test)


def limit_training(ds: TimeSeriesDataset, spec: SplitSpec) -> TimeSeriesDataset:
    """The last ``spec.train_days`` days of ``ds`` that fall in ``spec.season``."""
    days = np.flatnonzero(ds.day_seasons() == spec.season)
    if len(days) < spec.train_days:
        raise DatasetError(
            f"season {spec.season} has {len(days)} days available, {spec.train_days} requested"
        )
    return ds.select_days(days[len(days) - spec.train_days:])


class Fold(NamedTuple):
    sources: list[int]
    targets: list[int]


def make_folds(hub: Sequence[TimeSeriesDataset], n_folds: int) -> list[Fold]:
    """Park-level cross-validation: park ``i`` is a target in fold ``i % n_folds``."""
    if n_folds < 2:
        raise DatasetError("n_folds must be at least 2")
    if len(hub) < n_folds:
        raise DatasetError(f"hub of {len(hub)} parks is smaller than {n_folds} folds")
    folds = []
    for f in range(n_folds):
        targets = [i for i in range(len(hub)) if i % n_folds == f]
        sources = [i for i in range(len(hub)) if i % n_folds != f]
        folds.append(Fold(sources, targets))
    return folds
