"""Parsers for surveillance CSVs, district GeoJSON, ASCII grids, and point CSVs,
plus materialization of the dense district-week panel.

All parsers are pure: they read one file and return immutable structures that
are safe to share across threads.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from datetime import date, timedelta

import numpy as np

from . import geometry
from .errors import EngineWarning, GeometryError, ParseError

SURVEILLANCE_COLUMNS = (
    "year",
    "week",
    "country",
    "province",
    "district",
    "disease",
    "cases",
    "deaths",
)

# accepted spellings per column role, compared after normalization
_HEADER_SYNONYMS = {
    "cases": {"cases", "number of cases"},
    "deaths": {"deaths", "number of deaths"},
}


@dataclass(frozen=True)
class SurveillanceRecord:
    year: int
    week: int
    country: str
    province: str
    district: str
    disease: str
    cases: int
    deaths: int


@dataclass(frozen=True)
class AdminRegion:
    adm_id: int
    name: str
    province: str
    country: str
    geometry: geometry.MultiPolygon


@dataclass(frozen=True)
class SurveillancePanel:
    diseases: tuple[str, ...]
    start: date
    n_weeks: int
    districts: tuple[int, ...]  # adm_ids, in region order
    counts: np.ndarray  # (n_diseases, n_districts, n_weeks) int64

    @property
    def weeks(self) -> range:
        return range(1, self.n_weeks + 1)

    def counts_for(self, disease: str) -> np.ndarray:
        return self.counts[self.diseases.index(disease)]

    def totals_by_district(self, disease: str) -> np.ndarray:
        return self.counts_for(disease).sum(axis=1)

    def flattened_length(self) -> int:
        return len(self.districts) * self.n_weeks


@dataclass(frozen=True)
class RasterGrid:
    ncols: int
    nrows: int
    xll: float
    yll: float
    cellsize: float
    nodata: float
    values: np.ndarray  # (nrows, ncols), row 0 is the northernmost

    def cell_centers_x(self) -> np.ndarray:
        return self.xll + (np.arange(self.ncols) + 0.5) * self.cellsize

    def cell_centers_y(self) -> np.ndarray:
        # row 0 sits at the top of the grid
        return self.yll + (self.nrows - np.arange(self.nrows) - 0.5) * self.cellsize

    def same_grid(self, other: "RasterGrid") -> bool:
        return (
            self.ncols == other.ncols
            and self.nrows == other.nrows
            and self.xll == other.xll
            and self.yll == other.yll
            and self.cellsize == other.cellsize
        )


@dataclass(frozen=True)
class PointValueSet:
    lons: np.ndarray
    lats: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class RowError:
    line: int
    message: str


@dataclass
class SurveillanceParseReport:
    row_errors: list[RowError] = field(default_factory=list)
    duplicates: int = 0
    deaths_exceed_cases: int = 0


@dataclass
class PanelReport:
    unmatched_names: dict[tuple[str, str, str], int] = field(default_factory=dict)
    dropped_out_of_range: int = 0
    matched_rows: int = 0


def _norm_header(name: str) -> str:
    return " ".join(name.strip().lower().replace("_", " ").split())


def _norm_name(name: str) -> str:
    return name.strip().lower()


def parse_surveillance_csv(path) -> tuple[list[SurveillanceRecord], SurveillanceParseReport]:
    """Parse the weekly surveillance CSV.

    Returns the valid records plus a report of rejected rows. A missing header
    column is fatal; a bad row is collected and skipped; duplicate keys keep
    the last row and emit a warning.
    """
    report = SurveillanceParseReport()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, expected a header row") from None
        col_index: dict[str, int] = {}
        for i, raw in enumerate(header):
            name = _norm_header(raw)
            for role in SURVEILLANCE_COLUMNS:
                if name == role or name in _HEADER_SYNONYMS.get(role, ()):
                    col_index[role] = i
        missing = [c for c in SURVEILLANCE_COLUMNS if c not in col_index]
        if missing:
            raise ParseError(f"{path}: header is missing column(s) {', '.join(missing)}")

        by_key: dict[tuple, tuple[int, SurveillanceRecord]] = {}
        order = 0
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                report.row_errors.append(RowError(line_no, "too few fields"))
                continue
            try:
                year = int(row[col_index["year"]])
                week = int(row[col_index["week"]])
                cases = int(row[col_index["cases"]])
                deaths = int(row[col_index["deaths"]])
            except ValueError as exc:
                report.row_errors.append(RowError(line_no, f"non-integer count: {exc}"))
                continue
            if week < 1:
                report.row_errors.append(RowError(line_no, f"week {week} < 1"))
                continue
            if cases < 0 or deaths < 0:
                report.row_errors.append(RowError(line_no, "negative case or death count"))
                continue
            rec = SurveillanceRecord(
                year=year,
                week=week,
                country=row[col_index["country"]].strip(),
                province=row[col_index["province"]].strip(),
                district=row[col_index["district"]].strip(),
                disease=row[col_index["disease"]].strip(),
                cases=cases,
                deaths=deaths,
            )
            if deaths > cases:
                report.deaths_exceed_cases += 1
            key = (
                rec.year,
                rec.week,
                _norm_name(rec.country),
                _norm_name(rec.province),
                _norm_name(rec.district),
                _norm_name(rec.disease),
            )
            if key in by_key:
                report.duplicates += 1
                order_kept = by_key[key][0]
                by_key[key] = (order_kept, rec)  # last row wins, position kept
            else:
                by_key[key] = (order, rec)
                order += 1
    if report.duplicates:
        warnings.warn(
            f"{report.duplicates} duplicate (year, week, district, disease) rows; kept the last of each",
            EngineWarning,
            stacklevel=2,
        )
    if report.deaths_exceed_cases:
        warnings.warn(
            f"{report.deaths_exceed_cases} rows report more deaths than cases",
            EngineWarning,
            stacklevel=2,
        )
    records = [rec for _, rec in sorted(by_key.values(), key=lambda kv: kv[0])]
    return records, report


def parse_district_geojson(path) -> list[AdminRegion]:
    """Read district polygons from a GeoJSON FeatureCollection, order preserved."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise ParseError(f"{path}: expected a GeoJSON FeatureCollection")
    regions = []
    for idx, feature in enumerate(doc.get("features", [])):
        props = feature.get("properties") or {}
        if "adm_id" not in props or props["adm_id"] is None:
            raise ParseError(f"{path}: feature {idx} has no adm_id property")
        geom = feature.get("geometry") or {}
        gtype = geom.get("type")
        try:
            if gtype == "Polygon":
                parts = [geom["coordinates"]]
            elif gtype == "MultiPolygon":
                parts = geom["coordinates"]
            else:
                raise ParseError(
                    f"{path}: feature {idx} has non-polygonal geometry {gtype!r}"
                )
            poly = geometry.MultiPolygon(
                tuple(
                    geometry.Polygon(
                        geometry.as_ring(rings[0]),
                        tuple(geometry.as_ring(r) for r in rings[1:]),
                    )
                    for rings in parts
                )
            )
        except GeometryError as exc:
            raise ParseError(f"{path}: feature {idx}: {exc}") from exc
        if not poly.parts:
            raise ParseError(f"{path}: feature {idx} has empty geometry")
        if geometry.area(poly) <= 0.0:
            raise ParseError(f"{path}: feature {idx} has zero area")
        for key in ("name", "province", "country"):
            if key not in props:
                warnings.warn(
                    f"feature {idx} is missing property {key!r}; using empty string",
                    EngineWarning,
                    stacklevel=2,
                )
        regions.append(
            AdminRegion(
                adm_id=int(props["adm_id"]),
                name=str(props.get("name", "")),
                province=str(props.get("province", "")),
                country=str(props.get("country", "")),
                geometry=poly,
            )
        )
    seen: dict[int, int] = {}
    for i, region in enumerate(regions):
        if region.adm_id in seen:
            raise ParseError(
                f"{path}: duplicate adm_id {region.adm_id} (features {seen[region.adm_id]} and {i})"
            )
        seen[region.adm_id] = i
    return regions


_ASCII_HEADER = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def parse_ascii_grid(path) -> RasterGrid:
    """Read an ESRI ASCII grid; the first data row is the northernmost."""
    with open(path, encoding="utf-8") as fh:
        tokens_by_line = [line.split() for line in fh]
    header: dict[str, float] = {}
    data_start = 0
    for i, tokens in enumerate(tokens_by_line):
        if len(tokens) == 2 and tokens[0].lower() in _ASCII_HEADER:
            try:
                header[tokens[0].lower()] = float(tokens[1])
            except ValueError:
                raise ParseError(f"{path}: bad header value on line {i + 1}") from None
            data_start = i + 1
        else:
            break
    missing = [k for k in _ASCII_HEADER if k not in header]
    if missing:
        raise ParseError(f"{path}: missing header line(s): {', '.join(missing)}")
    ncols = int(header["ncols"])
    nrows = int(header["nrows"])
    if ncols <= 0 or nrows <= 0 or header["cellsize"] <= 0:
        raise ParseError(f"{path}: ncols, nrows, and cellsize must be positive")
    flat: list[float] = []
    for i, tokens in enumerate(tokens_by_line[data_start:], start=data_start + 1):
        for j, tok in enumerate(tokens, start=1):
            try:
                flat.append(float(tok))
            except ValueError:
                raise ParseError(f"{path}: unparsable token {tok!r} at line {i}, field {j}") from None
    if len(flat) != ncols * nrows:
        raise ParseError(
            f"{path}: expected {ncols * nrows} cells, found {len(flat)}"
        )
    values = np.asarray(flat, dtype=float).reshape(nrows, ncols)
    return RasterGrid(
        ncols=ncols,
        nrows=nrows,
        xll=header["xllcorner"],
        yll=header["yllcorner"],
        cellsize=header["cellsize"],
        nodata=header["nodata_value"],
        values=values,
    )


def write_ascii_grid(grid: RasterGrid, path) -> None:
    """Serialize a grid; float values use repr so a round-trip is bit-identical."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"ncols {grid.ncols}\n")
        fh.write(f"nrows {grid.nrows}\n")
        fh.write(f"xllcorner {grid.xll!r}\n")
        fh.write(f"yllcorner {grid.yll!r}\n")
        fh.write(f"cellsize {grid.cellsize!r}\n")
        fh.write(f"NODATA_value {grid.nodata!r}\n")
        for row in grid.values:
            fh.write(" ".join(repr(float(v)) for v in row))
            fh.write("\n")


def parse_points_csv(path) -> PointValueSet:
    """Read a lon,lat,value CSV (relative-wealth style point data)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [_norm_header(h) for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        try:
            i_lon, i_lat, i_val = header.index("lon"), header.index("lat"), header.index("value")
        except ValueError:
            raise ParseError(f"{path}: header must name lon, lat, value") from None
        lons, lats, vals = [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                lon, lat, val = float(row[i_lon]), float(row[i_lat]), float(row[i_val])
            except (ValueError, IndexError):
                raise ParseError(f"{path}: bad point row at line {line_no}") from None
            if not (np.isfinite(lon) and np.isfinite(lat) and np.isfinite(val)):
                raise ParseError(f"{path}: non-finite point at line {line_no}")
            lons.append(lon)
            lats.append(lat)
            vals.append(val)
    return PointValueSet(np.asarray(lons), np.asarray(lats), np.asarray(vals))


def record_date(rec_year: int, rec_week: int) -> date:
    """Week w of year y starts at Jan 1 of y plus 7*(w-1) days."""
    return date(rec_year, 1, 1) + timedelta(days=7 * (rec_week - 1))


def week_index(d: date, start: date) -> int:
    """Serial 1-based 7-day bin of a date counted from the panel start."""
    return (d - start).days // 7 + 1


def build_panel(
    records: list[SurveillanceRecord],
    districts: list[AdminRegion],
    start: date,
    n_weeks: int,
    disease: str,
) -> tuple[SurveillancePanel, PanelReport]:
    """Materialize the dense district-week panel for one disease.

    Every (district, week) cell absent from the records holds zero cases.
    Records whose names match no district are collected in the report and
    dropped; records outside [start, start + 7*n_weeks) are dropped with a
    warning. Records that land in the same serial week accumulate.
    """
    if not districts:
        raise ParseError("district list is empty")
    if n_weeks < 1:
        raise ParseError("n_weeks must be >= 1")
    lookup: dict[tuple[str, str, str], int] = {}
    for i, region in enumerate(districts):
        key = (_norm_name(region.country), _norm_name(region.province), _norm_name(region.name))
        if key in lookup:
            raise ParseError(
                f"ambiguous district name {key!r} shared by adm_ids "
                f"{districts[lookup[key]].adm_id} and {region.adm_id}"
            )
        lookup[key] = i

    report = PanelReport()
    counts = np.zeros((1, len(districts), n_weeks), dtype=np.int64)
    disease_norm = _norm_name(disease)
    for rec in records:
        if _norm_name(rec.disease) != disease_norm:
            continue
        key = (_norm_name(rec.country), _norm_name(rec.province), _norm_name(rec.district))
        idx = lookup.get(key)
        if idx is None:
            report.unmatched_names[key] = report.unmatched_names.get(key, 0) + 1
            continue
        w = week_index(record_date(rec.year, rec.week), start)
        if w < 1 or w > n_weeks:
            report.dropped_out_of_range += 1
            continue
        counts[0, idx, w - 1] += rec.cases
        report.matched_rows += 1
    if report.dropped_out_of_range:
        warnings.warn(
            f"{report.dropped_out_of_range} records fall outside the panel window",
            EngineWarning,
            stacklevel=2,
        )
    panel = SurveillancePanel(
        diseases=(disease,),
        start=start,
        n_weeks=n_weeks,
        districts=tuple(r.adm_id for r in districts),
        counts=counts,
    )
    return panel, report


def panel_to_records(panel: SurveillancePanel, districts: list[AdminRegion]) -> list[SurveillanceRecord]:
    """Serialize non-zero panel cells back to records (audit / round-trip).

    Weeks are emitted relative to the start year and may exceed 52 so that
    re-ingesting lands each record in its original serial week.
    """
    by_id = {r.adm_id: r for r in districts}
    out = []
    # ceil so the emitted year-week never maps to a bin before the panel start
    base_week = ((panel.start - date(panel.start.year, 1, 1)).days + 6) // 7
    for d_i, disease in enumerate(panel.diseases):
        for r_i, adm_id in enumerate(panel.districts):
            region = by_id[adm_id]
            for w in range(panel.n_weeks):
                c = int(panel.counts[d_i, r_i, w])
                if c == 0:
                    continue
                out.append(
                    SurveillanceRecord(
                        year=panel.start.year,
                        week=base_week + w + 1,
                        country=region.country,
                        province=region.province,
                        district=region.name,
                        disease=disease,
                        cases=c,
                        deaths=0,
                    )
                )
    return out
