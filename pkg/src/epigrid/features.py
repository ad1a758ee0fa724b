"""Feature engineering for the district-week table.

Twelve predictors per row: the serial week index, weekly precipitation and
temperature, five land-cover composites, population density, population near
water, relative wealth, and elevation. The label is 1 whenever the week had
at least one case. Min-max scaling feeds the land-cover composites; robust
scaling of whole tables is fitted on training rows only.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from datetime import date, timedelta

import numpy as np

from . import geometry
from .errors import EngineError, EngineWarning, SchemaMismatchError
from .ingest import AdminRegion, PointValueSet, SurveillancePanel

FEATURE_NAMES = (
    "week",
    "precipitation",
    "temperature",
    "trees",
    "crops",
    "built_up",
    "bare_ground",
    "rangeland",
    "population_density",
    "population_near_water",
    "relative_wealth",
    "elevation",
)

LANDCOVER_CLASSES = ("trees", "crops", "built_up", "bare_ground", "rangeland")

CSV_COLUMNS = ("id", "adm_id") + FEATURE_NAMES + ("cases", "label")


@dataclass(frozen=True)
class MinMaxParams:
    low: float
    high: float

    @property
    def span(self) -> float:
        return self.high - self.low if self.high > self.low else 1.0


@dataclass(frozen=True)
class RobustParams:
    median: float
    q1: float
    q3: float

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1 if self.q3 > self.q1 else 1.0


def minmax_scale(column) -> tuple[np.ndarray, MinMaxParams]:
    """(x - min) / (max - min); a constant column maps to all zeros."""
    x = np.asarray(column, dtype=float)
    if x.size == 0:
        raise EngineError("cannot scale an empty column")
    params = MinMaxParams(float(x.min()), float(x.max()))
    return (x - params.low) / params.span, params


def minmax_inverse(scaled, params: MinMaxParams) -> np.ndarray:
    return np.asarray(scaled, dtype=float) * params.span + params.low


def robust_scale(column) -> tuple[np.ndarray, RobustParams]:
    """(x - median) / IQR with linearly interpolated quartiles.

    A zero IQR degenerates to centering only.
    """
    x = np.asarray(column, dtype=float)
    if x.size == 0:
        raise EngineError("cannot scale an empty column")
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75], method="linear")
    params = RobustParams(float(med), float(q1), float(q3))
    return (x - params.median) / params.iqr, params


def landcover_composite(area, fraction, population) -> np.ndarray:
    """Sum of the three min-max scaled components, bounded in [0, 3]."""
    area = np.asarray(area, dtype=float)
    fraction = np.asarray(fraction, dtype=float)
    population = np.asarray(population, dtype=float)
    if not (len(area) == len(fraction) == len(population)):
        raise EngineError("area, fraction, and population must have equal lengths")
    return minmax_scale(area)[0] + minmax_scale(fraction)[0] + minmax_scale(population)[0]


class TableScaler:
    """Column-wise scaler fitted once (on training rows) and never refitted."""

    def __init__(self, kind: str = "robust"):
        if kind not in ("robust", "minmax"):
            raise EngineError(f"unknown scaler kind {kind!r}")
        self.kind = kind
        self.params: list | None = None

    def fit(self, X: np.ndarray) -> "TableScaler":
        if self.params is not None:
            raise EngineError("scaler is already fitted; transform never refits")
        scale = robust_scale if self.kind == "robust" else minmax_scale
        self.params = [scale(X[:, j])[1] for j in range(X.shape[1])]
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        if self.params is None:
            raise EngineError("scaler must be fitted before transform")
        out = np.empty_like(np.asarray(X, dtype=float))
        for j, p in enumerate(self.params):
            if self.kind == "robust":
                out[:, j] = (X[:, j] - p.median) / p.iqr
            else:
                out[:, j] = (X[:, j] - p.low) / p.span
        return out

    def to_dict(self) -> dict:
        if self.params is None:
            raise EngineError("scaler not fitted")
        if self.kind == "robust":
            cols = [{"median": p.median, "q1": p.q1, "q3": p.q3} for p in self.params]
        else:
            cols = [{"low": p.low, "high": p.high} for p in self.params]
        return {"kind": self.kind, "columns": cols}

    @classmethod
    def from_dict(cls, doc: dict) -> "TableScaler":
        scaler = cls(doc["kind"])
        if scaler.kind == "robust":
            scaler.params = [RobustParams(c["median"], c["q1"], c["q3"]) for c in doc["columns"]]
        else:
            scaler.params = [MinMaxParams(c["low"], c["high"]) for c in doc["columns"]]
        return scaler


@dataclass(frozen=True)
class DistrictDataset:
    """Values for one predictor across districts, at some cadence.

    values has one row per panel district:
      (d,)            static, broadcast to every week
      (d, len(years)) yearly (years given), broadcast within each year
      (d, T)          weekly
      (d, m*T)        sub-weekly, aggregated per week by agg
    """

    values: np.ndarray
    years: tuple[int, ...] | None = None
    agg: str = "mean"


@dataclass(frozen=True)
class FeatureTable:
    adm_ids: np.ndarray
    weeks: np.ndarray
    X: np.ndarray  # (n, 12)
    feature_names: tuple[str, ...]
    cases: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx) -> "FeatureTable":
        idx = np.asarray(idx)
        return FeatureTable(
            adm_ids=self.adm_ids[idx],
            weeks=self.weeks[idx],
            X=self.X[idx],
            feature_names=self.feature_names,
            cases=self.cases[idx],
            labels=self.labels[idx],
        )

    def with_X(self, X: np.ndarray) -> "FeatureTable":
        if X.shape != self.X.shape:
            raise SchemaMismatchError("replacement matrix shape differs")
        return replace(self, X=X)


def points_to_district_values(points: PointValueSet, regions: list[AdminRegion]) -> np.ndarray:
    """Mean of points inside each district; empty districts fall back to the
    point nearest the district centroid."""
    if len(points) == 0:
        raise EngineError("point set is empty")
    coords = np.column_stack([points.lons, points.lats])
    out = np.empty(len(regions))
    fallbacks = 0
    for i, region in enumerate(regions):
        inside = geometry.contains_points(region.geometry, coords)
        if np.any(inside):
            out[i] = float(points.values[inside].mean())
        else:
            cx, cy = geometry.centroid(region.geometry)
            d2 = (points.lons - cx) ** 2 + (points.lats - cy) ** 2
            out[i] = float(points.values[int(np.argmin(d2))])
            fallbacks += 1
    if fallbacks:
        warnings.warn(
            f"{fallbacks} districts contain no points; used the nearest point to each centroid",
            EngineWarning,
            stacklevel=2,
        )
    return out


def _week_years(start: date, n_weeks: int) -> np.ndarray:
    return np.array([(start + timedelta(days=7 * w)).year for w in range(n_weeks)])


def _to_weekly(name: str, ds: DistrictDataset, panel: SurveillancePanel) -> np.ndarray:
    """Expand or aggregate one dataset to a (districts, weeks) matrix."""
    values = np.asarray(ds.values, dtype=float)
    d, t = len(panel.districts), panel.n_weeks
    if values.ndim == 1:
        if len(values) != d:
            raise EngineError(f"dataset {name!r} has {len(values)} rows, expected {d}")
        weekly = np.repeat(values[:, None], t, axis=1)
    elif values.shape[0] != d:
        raise EngineError(f"dataset {name!r} has {values.shape[0]} rows, expected {d}")
    elif ds.years is not None:
        if values.shape[1] != len(ds.years):
            raise EngineError(f"dataset {name!r}: column count != len(years)")
        wanted = _week_years(panel.start, t)
        years = np.asarray(ds.years)
        # clamp weeks outside the covered years to the nearest available year
        col = np.abs(wanted[None, :] - years[:, None]).argmin(axis=0)
        if np.any((wanted < years.min()) | (wanted > years.max())):
            warnings.warn(
                f"dataset {name!r} does not cover every panel year; clamped to nearest",
                EngineWarning,
                stacklevel=3,
            )
        weekly = values[:, col]
    elif values.shape[1] == t:
        weekly = values
    elif values.shape[1] % t == 0:
        m = values.shape[1] // t
        chunks = values.reshape(d, t, m)
        if ds.agg == "mean":
            weekly = chunks.mean(axis=2)
        elif ds.agg == "sum":
            weekly = chunks.sum(axis=2)
        else:
            raise EngineError(f"dataset {name!r}: unknown weekly aggregation {ds.agg!r}")
    else:
        raise EngineError(
            f"dataset {name!r} has {values.shape[1]} columns; expected 1, {t}, or a multiple of {t}"
        )
    if np.any(np.isnan(weekly)):
        bad = int(np.flatnonzero(np.isnan(weekly).any(axis=1))[0])
        raise EngineError(f"dataset {name!r} has no value for adm_id {panel.districts[bad]}")
    return weekly


def assemble_feature_table(
    panel: SurveillancePanel,
    datasets: dict[str, DistrictDataset],
    disease: str | None = None,
) -> FeatureTable:
    """Emit one row per (district, week), ordered by adm_id then week.

    datasets must provide every FEATURE_NAMES entry except "week". Static and
    yearly datasets broadcast across weeks; finer-than-weekly ones aggregate.
    """
    disease = disease or panel.diseases[0]
    needed = [n for n in FEATURE_NAMES if n != "week"]
    missing = [n for n in needed if n not in datasets]
    if missing:
        raise EngineError(f"missing dataset(s): {', '.join(missing)}")
    d, t = len(panel.districts), panel.n_weeks
    weekly = {name: _to_weekly(name, datasets[name], panel) for name in needed}

    order = np.argsort(np.asarray(panel.districts), kind="stable")
    counts = panel.counts_for(disease)[order]
    adm_sorted = np.asarray(panel.districts)[order]

    n = d * t
    adm_ids = np.repeat(adm_sorted, t)
    weeks = np.tile(np.arange(1, t + 1), d)
    X = np.empty((n, len(FEATURE_NAMES)))
    X[:, 0] = weeks
    for j, name in enumerate(needed, start=1):
        X[:, j] = weekly[name][order].reshape(n)
    cases = counts.reshape(n)
    labels = (cases >= 1).astype(np.int64)
    return FeatureTable(
        adm_ids=adm_ids,
        weeks=weeks,
        X=X,
        feature_names=FEATURE_NAMES,
        cases=cases,
        labels=labels,
    )


def write_feature_csv(table: FeatureTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for i in range(len(table)):
            row = [i + 1, int(table.adm_ids[i])]
            row.extend(repr(float(v)) for v in table.X[i])
            row.append(int(table.cases[i]))
            row.append(int(table.labels[i]))
            writer.writerow(row)


def read_feature_csv(path) -> FeatureTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_COLUMNS:
            raise SchemaMismatchError(
                f"{path}: unexpected feature columns {header!r}"
            )
        adm, X, cases, labels = [], [], [], []
        for row in reader:
            if not row:
                continue
            adm.append(int(row[1]))
            X.append([float(v) for v in row[2 : 2 + len(FEATURE_NAMES)]])
            cases.append(int(row[-2]))
            labels.append(int(row[-1]))
    X = np.asarray(X, dtype=float)
    return FeatureTable(
        adm_ids=np.asarray(adm, dtype=np.int64),
        weeks=X[:, 0].astype(np.int64),
        X=X,
        feature_names=FEATURE_NAMES,
        cases=np.asarray(cases, dtype=np.int64),
        labels=np.asarray(labels, dtype=np.int64),
    )
