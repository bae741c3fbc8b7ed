"""Trap-record domain types, CSV ingestion and emission, and dataset summaries.

The unit of observation is one pheromone-trap visit, canonicalized to a weekly
cadence over a 26-week cotton season.  Records carry the full ecosystem feature
vector (weather, soil, biology, farm statics), the moth count, and a spray flag.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

SEASON_WEEKS = 26

#: Canonical CSV header, in exact column order.
CSV_COLUMNS = (
    "trap_id", "zone_id", "year", "week",
    "T", "SW", "RHa", "Pr", "W", "SOI", "PGS", "S", "LC", "P", "SG", "M",
    "V", "CS", "AC", "sprayed", "pest_count",
)

#: Continuous feature names in canonical order.
CONTINUOUS_FEATURES = ("T", "SW", "RHa", "Pr", "W", "SOI", "PGS", "S", "LC", "P", "SG", "M")

#: Categorical feature names and their allowed levels (CSV encodings).
CATEGORICAL_LEVELS: Mapping[str, tuple[str, ...]] = {
    "V": ("conv", "bt"),
    "CS": ("mono", "rot"),
    "AC": ("cotton", "maize", "other"),
}

FEATURE_NAMES = CONTINUOUS_FEATURES + tuple(CATEGORICAL_LEVELS)

#: Closed bounds for bounded continuous features.
FEATURE_BOUNDS: Mapping[str, tuple[float, float]] = {
    "SW": (0.0, 1.0),
    "RHa": (0.0, 100.0),
    "PGS": (0.0, 1.0),
    "S": (1.0, float(SEASON_WEEKS)),
    "LC": (0.0, 1.0),
    "P": (0.0, 1.0),
}

#: Features that must be non-negative (no upper bound).
NONNEGATIVE_FEATURES = ("Pr", "W", "SG", "M")

#: Dummy encoding used when a numeric design matrix is needed.
CATEGORICAL_DUMMIES = {
    "V_bt": ("V", "bt"),
    "CS_rot": ("CS", "rot"),
    "AC_cotton": ("AC", "cotton"),
    "AC_other": ("AC", "other"),
}

#: Weather fields joined from the following week as the forecast block.
FORECAST_FIELDS = ("T", "Pr", "RHa", "W")


class DataError(ValueError):
    """Raised for malformed files, invariant violations, or schema mismatches."""


def validate_features(features: Mapping[str, object]) -> None:
    """Check presence, bounds, and categorical levels of a feature mapping."""
    missing = [k for k in FEATURE_NAMES if k not in features]
    if missing:
        raise DataError(f"missing feature(s): {', '.join(missing)}")
    extra = [k for k in features if k not in FEATURE_NAMES]
    if extra:
        raise DataError(f"unknown feature(s): {', '.join(extra)}")
    for name in CONTINUOUS_FEATURES:
        value = features[name]
        if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
            raise DataError(f"feature {name} must be a finite number, got {value!r}")
        lo_hi = FEATURE_BOUNDS.get(name)
        if lo_hi is not None and not (lo_hi[0] <= value <= lo_hi[1]):
            raise DataError(f"feature {name}={value} outside [{lo_hi[0]}, {lo_hi[1]}]")
        if name in NONNEGATIVE_FEATURES and value < 0:
            raise DataError(f"feature {name}={value} must be non-negative")
    for name, levels in CATEGORICAL_LEVELS.items():
        if features[name] not in levels:
            raise DataError(f"unknown {name} level {features[name]!r}, expected one of {levels}")


@dataclass(frozen=True)
class TrapRecord:
    """One weekly trap observation."""

    trap_id: str
    zone_id: int
    year: int
    week: int
    features: dict[str, object]
    pest_count: int
    sprayed: bool

    def validate(self) -> None:
        if not (1 <= self.week <= SEASON_WEEKS):
            raise DataError(f"week {self.week} outside 1..{SEASON_WEEKS}")
        if self.pest_count < 0:
            raise DataError(f"negative count {self.pest_count}")
        validate_features(self.features)

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.trap_id, self.year, self.week)


@dataclass(frozen=True)
class Dataset:
    """An immutable collection of trap records with a zone registry."""

    records: tuple[TrapRecord, ...]
    zones: dict[int, str]
    schema_version: int = 1

    def __post_init__(self) -> None:
        seen: set[tuple[str, int, int]] = set()
        for rec in self.records:
            if rec.key in seen:
                raise DataError(f"duplicate record key {rec.key}")
            seen.add(rec.key)
            if rec.zone_id not in self.zones:
                raise DataError(f"zone_id {rec.zone_id} missing from zone registry")

    def __len__(self) -> int:
        return len(self.records)

    def to_frame(self) -> pd.DataFrame:
        """Flatten records into a DataFrame with the canonical CSV columns."""
        rows = []
        for rec in self.records:
            row = {"trap_id": rec.trap_id, "zone_id": rec.zone_id, "year": rec.year, "week": rec.week}
            row.update(rec.features)
            row["sprayed"] = int(rec.sprayed)
            row["pest_count"] = rec.pest_count
            rows.append(row)
        return pd.DataFrame(rows, columns=list(CSV_COLUMNS))


def dataset_from_records(records: Iterable[TrapRecord]) -> Dataset:
    """Build a Dataset, validating each record and deriving the zone registry."""
    recs = tuple(records)
    for rec in recs:
        rec.validate()
    zones = {z: f"zone-{z}" for z in sorted({r.zone_id for r in recs})}
    return Dataset(records=recs, zones=zones)


@dataclass(frozen=True)
class SummaryRow:
    """Per-year trap-network summary (traps, measurements, count moments, sprays)."""

    year: int
    n_traps: int
    n_measurements: int
    mean_count: float
    std_count: float
    n_sprays: int
    pct_sprayed_fields: float


def _format_value(value: float) -> str:
    return format(float(value), ".6g")


def load_csv(path: str | Path) -> Dataset:
    """Parse a canonical trap CSV into a Dataset.

    Raises DataError with the offending line number for malformed rows,
    duplicate (trap_id, year, week) keys, or unknown categorical levels.
    """
    path = Path(path)
    with path.open("r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected header") from None
        if tuple(header) != CSV_COLUMNS:
            raise DataError(f"{path}: header mismatch, expected {','.join(CSV_COLUMNS)}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_COLUMNS):
                raise DataError(f"{path}: wrong field count at line {lineno}")
            rec = dict(zip(CSV_COLUMNS, row))
            try:
                features: dict[str, object] = {k: float(rec[k]) for k in CONTINUOUS_FEATURES}
                for k in CATEGORICAL_LEVELS:
                    features[k] = rec[k]
                if rec["sprayed"] not in ("0", "1"):
                    raise DataError(f"sprayed must be 0 or 1, got {rec['sprayed']!r}")
                pest_count = int(rec["pest_count"])
                if pest_count < 0:
                    raise DataError(f"negative count at line {lineno}")
                record = TrapRecord(
                    trap_id=rec["trap_id"],
                    zone_id=int(rec["zone_id"]),
                    year=int(rec["year"]),
                    week=int(rec["week"]),
                    features=features,
                    pest_count=pest_count,
                    sprayed=rec["sprayed"] == "1",
                )
                record.validate()
            except DataError as exc:
                if "line" in str(exc):
                    raise
                raise DataError(f"{path}: {exc} at line {lineno}") from None
            except ValueError as exc:
                raise DataError(f"{path}: malformed row at line {lineno}: {exc}") from None
            records.append(record)
    try:
        return dataset_from_records(records)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def save_csv(dataset: Dataset, path: str | Path) -> None:
    """Write a Dataset in canonical form.

    Canonical form means the exact column order of CSV_COLUMNS, 6 significant
    digits for continuous features, and LF line endings.
    """
    path = Path(path)
    with path.open("w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in dataset.records:
            row = [rec.trap_id, rec.zone_id, rec.year, rec.week]
            row.extend(_format_value(rec.features[k]) for k in CONTINUOUS_FEATURES)
            row.extend(rec.features[k] for k in CATEGORICAL_LEVELS)
            row.append(int(rec.sprayed))
            row.append(rec.pest_count)
            writer.writerow(row)


def summarize(dataset: Dataset) -> list[SummaryRow]:
    """Per-year summary: trap and measurement totals, count moments, spray usage.

    mean_count and std_count are the mean and population standard deviation of
    the per-trap mean counts within the year.  pct_sprayed_fields is the share
    of traps with at least one sprayed week, in percent.
    """
    if not dataset.records:
        raise DataError("summarize requires a non-empty dataset")
    by_year: dict[int, list[TrapRecord]] = {}
    for rec in dataset.records:
        by_year.setdefault(rec.year, []).append(rec)
    rows = []
    for year in sorted(by_year):
        recs = by_year[year]
        counts_by_trap: dict[str, list[int]] = {}
        sprayed_traps: set[str] = set()
        n_sprays = 0
        for rec in recs:
            counts_by_trap.setdefault(rec.trap_id, []).append(rec.pest_count)
            if rec.sprayed:
                n_sprays += 1
                sprayed_traps.add(rec.trap_id)
        trap_means = np.array([np.mean(v) for v in counts_by_trap.values()])
        n_traps = len(counts_by_trap)
        rows.append(SummaryRow(
            year=year,
            n_traps=n_traps,
            n_measurements=len(recs),
            mean_count=float(trap_means.mean()),
            std_count=float(trap_means.std(ddof=0)),
            n_sprays=n_sprays,
            pct_sprayed_fields=100.0 * len(sprayed_traps) / n_traps,
        ))
    return rows


def split_by_environment(dataset: Dataset) -> dict[int, Dataset]:
    """Partition records by agroclimatic zone.

    The parts are disjoint, jointly exhaustive, and each carries a single-zone
    registry.
    """
    parts: dict[int, list[TrapRecord]] = {}
    for rec in dataset.records:
        parts.setdefault(rec.zone_id, []).append(rec)
    return {
        zone: Dataset(records=tuple(recs), zones={zone: dataset.zones[zone]},
                      schema_version=dataset.schema_version)
        for zone, recs in sorted(parts.items())
    }


@dataclass
class SupervisedTable:
    """Week-ahead supervised view of a dataset.

    Each row joins the week-t state of one trap with the following week's
    weather block (columns suffixed ``_next``), the next-week count target
    ``y_next`` (and ``y_next_log`` = log1p), and the binary ``presence`` label.
    """

    frame: pd.DataFrame
    skipped_pairs: int
    presence_threshold: int
    horizon: int = 1
    env_col: str = "zone_id"
    target_col: str = "y_next"
    log_target_col: str = "y_next_log"
    label_col: str = "presence"

    @property
    def continuous_cols(self) -> list[str]:
        return list(CONTINUOUS_FEATURES) + ["Sp", "Y"] + [f"{f}_next" for f in FORECAST_FIELDS]

    @property
    def categorical_cols(self) -> list[str]:
        return list(CATEGORICAL_LEVELS)

    @property
    def linear_cols(self) -> list[str]:
        """Numeric design columns: continuous features plus categorical dummies."""
        return (list(CONTINUOUS_FEATURES) + list(CATEGORICAL_DUMMIES)
                + ["Sp", "Y", "Y_log"] + [f"{f}_next" for f in FORECAST_FIELDS])

    @property
    def ebm_cols(self) -> list[str]:
        """Mixed-type model columns for the binned additive classifier."""
        return (list(CONTINUOUS_FEATURES) + list(CATEGORICAL_LEVELS)
                + ["Sp", "Y"] + [f"{f}_next" for f in FORECAST_FIELDS])

    def __len__(self) -> int:
        return len(self.frame)


def make_supervised(dataset: Dataset, horizon: int = 1, presence_threshold: int = 0,
                    forecast_sigma: float = 0.0, seed: int = 0) -> SupervisedTable:
    """Join consecutive weeks of each trap into week-ahead supervised examples.

    A pair (t, t+horizon) is formed only when both weeks exist for the trap;
    missing weeks are skipped and counted in ``skipped_pairs``.  The next-week
    weather block stands in for a forecast; ``forecast_sigma`` > 0 adds
    Gaussian forecast error to it (seeded, so the table stays deterministic).
    """
    if horizon < 1:
        raise DataError("horizon must be >= 1")
    by_trap: dict[tuple[str, int], dict[int, TrapRecord]] = {}
    for rec in dataset.records:
        by_trap.setdefault((rec.trap_id, rec.year), {})[rec.week] = rec
    rng = np.random.default_rng(np.random.SeedSequence([seed, horizon]))
    rows = []
    skipped = 0
    for (trap_id, year), weeks in sorted(by_trap.items()):
        for week in sorted(weeks):
            nxt = weeks.get(week + horizon)
            if nxt is None:
                if week + horizon <= max(weeks):
                    skipped += 1
                continue
            rec = weeks[week]
            row: dict[str, object] = {
                "trap_id": trap_id, "zone_id": rec.zone_id, "year": year, "week": week,
            }
            row.update(rec.features)
            for dummy, (col, level) in CATEGORICAL_DUMMIES.items():
                row[dummy] = float(rec.features[col] == level)
            row["Sp"] = float(rec.sprayed)
            row["Y"] = float(rec.pest_count)
            row["Y_log"] = float(np.log1p(rec.pest_count))
            for f in FORECAST_FIELDS:
                value = float(nxt.features[f])
                if forecast_sigma > 0:
                    value += forecast_sigma * rng.standard_normal()
                row[f"{f}_next"] = value
            row["y_next"] = float(nxt.pest_count)
            row["y_next_log"] = float(np.log1p(nxt.pest_count))
            row["presence"] = int(nxt.pest_count > presence_threshold)
            rows.append(row)
    frame = pd.DataFrame(rows)
    if len(frame):
        frame = frame.reset_index(drop=True)
    return SupervisedTable(frame=frame, skipped_pairs=skipped,
                           presence_threshold=presence_threshold, horizon=horizon)
