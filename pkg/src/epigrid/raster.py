"""Raster-vector aggregation: zonal statistics, tabulate area, water buffers.

A cell belongs to a region iff its center lies inside the region's polygon;
when several regions contain a center (shared borders), the first region in
list order wins and a tie warning is emitted. All operations follow that one
assignment, so they agree exactly with a per-cell brute-force sweep.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import EngineError, EngineWarning
from .ingest import AdminRegion, RasterGrid

KM_PER_DEG_LAT = 110.574
KM_PER_DEG_LON_EQ = 111.320
_MIN_COS_LAT = 0.01


@dataclass(frozen=True)
class ZonalValue:
    adm_id: int
    mean: float | None
    cell_count: int  # cells with data (nodata excluded)
    nodata_count: int


@dataclass(frozen=True)
class AreaTabulation:
    adm_id: int
    counts: dict[int, int]
    fractions: dict[int, float]
    covered: int  # non-nodata cells in the region footprint


def assign_cells(grid: RasterGrid, regions: list[AdminRegion]) -> np.ndarray:
    """Region index per cell (-1 = unassigned), first-containing wins."""
    xs = grid.cell_centers_x()
    ys = grid.cell_centers_y()
    owner = np.full((grid.nrows, grid.ncols), -1, dtype=np.int64)
    ties = 0
    for ri, region in enumerate(regions):
        minx, miny, maxx, maxy = geometry.bounds(region.geometry)
        c0, c1 = np.searchsorted(xs, [minx, maxx])
        cols = np.arange(max(c0 - 1, 0), min(c1 + 1, grid.ncols))
        ys_south_to_north = ys[::-1]
        r1s, r0s = np.searchsorted(ys_south_to_north, [miny, maxy])
        rows = np.arange(max(grid.nrows - r0s - 1, 0), min(grid.nrows - r1s + 1, grid.nrows))
        if not len(cols) or not len(rows):
            continue
        rr, cc = np.meshgrid(rows, cols, indexing="ij")
        pts = np.column_stack([xs[cc.ravel()], ys[rr.ravel()]])
        inside = geometry.contains_points(region.geometry, pts)
        if not np.any(inside):
            continue
        r_in = rr.ravel()[inside]
        c_in = cc.ravel()[inside]
        prior = owner[r_in, c_in]
        ties += int(np.count_nonzero(prior >= 0))
        free = prior < 0
        owner[r_in[free], c_in[free]] = ri
    if ties:
        warnings.warn(
            f"{ties} cell centers fall inside more than one region (boundary ties); "
            "the first region in list order keeps them",
            EngineWarning,
            stacklevel=2,
        )
    return owner


def zonal_mean(grid: RasterGrid, regions: list[AdminRegion]) -> list[ZonalValue]:
    """Mean raster value per region, nodata excluded; empty footprint -> None."""
    owner = assign_cells(grid, regions)
    out = []
    flat_owner = owner.ravel()
    flat_vals = grid.values.ravel()
    for ri, region in enumerate(regions):
        vals = flat_vals[flat_owner == ri]
        good = vals[vals != grid.nodata]
        nodata_count = len(vals) - len(good)
        if len(good) == 0:
            if len(vals) == 0:
                warnings.warn(
                    f"region adm_id={region.adm_id} covers no cell centers",
                    EngineWarning,
                    stacklevel=2,
                )
            out.append(ZonalValue(region.adm_id, None, 0, nodata_count))
        else:
            mean = float(np.sum(good)) / len(good)
            out.append(ZonalValue(region.adm_id, mean, len(good), nodata_count))
    return out


def zonal_sum(grid: RasterGrid, regions: list[AdminRegion]) -> list[tuple[int, float]]:
    """Sum of raster values per region, nodata excluded (0 when empty)."""
    owner = assign_cells(grid, regions)
    flat_owner = owner.ravel()
    flat_vals = grid.values.ravel()
    out = []
    for ri, region in enumerate(regions):
        vals = flat_vals[flat_owner == ri]
        good = vals[vals != grid.nodata]
        out.append((region.adm_id, float(np.sum(good))))
    return out


def tabulate_area(
    grid: RasterGrid, regions: list[AdminRegion], classes: list[int]
) -> list[AreaTabulation]:
    """Per-region cell counts and fractions for each requested class code."""
    owner = assign_cells(grid, regions)
    flat_owner = owner.ravel()
    flat_vals = grid.values.ravel()
    out = []
    for ri, region in enumerate(regions):
        vals = flat_vals[flat_owner == ri]
        covered = vals[vals != grid.nodata]
        counts = {c: int(np.count_nonzero(covered == c)) for c in classes}
        denom = len(covered)
        fractions = {c: (counts[c] / denom if denom else 0.0) for c in classes}
        out.append(AreaTabulation(region.adm_id, counts, fractions, denom))
    return out


def class_population(
    class_grid: RasterGrid,
    pop_grid: RasterGrid,
    regions: list[AdminRegion],
    classes: list[int],
) -> dict[int, list[tuple[int, float]]]:
    """Population sum per region restricted to each land-cover class.

    Both rasters must share one grid; resampling is out of scope here.
    """
    if not class_grid.same_grid(pop_grid):
        raise EngineError("class raster and population raster are on different grids")
    owner = assign_cells(pop_grid, regions).ravel()
    cls = class_grid.values.ravel()
    pop = pop_grid.values.ravel()
    usable = (cls != class_grid.nodata) & (pop != pop_grid.nodata)
    out: dict[int, list[tuple[int, float]]] = {}
    for c in classes:
        sel = usable & (cls == c)
        sums = np.bincount(
            owner[sel & (owner >= 0)],
            weights=pop[sel & (owner >= 0)],
            minlength=len(regions),
        ) if np.any(sel & (owner >= 0)) else np.zeros(len(regions))
        out[c] = [(r.adm_id, float(sums[i])) for i, r in enumerate(regions)]
    return out


def _feature_scale(feature) -> tuple[float, float, float]:
    """Local equirectangular km-per-degree factors at the feature centroid."""
    if isinstance(feature, geometry.MultiPolygon):
        _, lat0 = geometry.centroid(feature)
    else:
        pts = geometry.vertices(feature)
        lat0 = float(pts[:, 1].mean())
    cos_lat = np.cos(np.radians(lat0))
    if cos_lat <= _MIN_COS_LAT:
        raise EngineError(
            f"water feature centroid latitude {lat0:.2f} is polar-degenerate"
        )
    return lat0, KM_PER_DEG_LON_EQ * cos_lat, KM_PER_DEG_LAT


def _scaled(feature, sx: float, sy: float):
    def scale_coords(arr):
        out = np.asarray(arr, dtype=float).copy()
        out[:, 0] *= sx
        out[:, 1] *= sy
        return out

    if isinstance(feature, geometry.PointSet):
        return geometry.PointSet(scale_coords(feature.coords))
    if isinstance(feature, geometry.LineSet):
        return geometry.LineSet(tuple(scale_coords(p) for p in feature.parts))
    return geometry.MultiPolygon(
        tuple(
            geometry.Polygon(scale_coords(p.shell), tuple(scale_coords(h) for h in p.holes))
            for p in feature.parts
        )
    )


def water_buffer_mask(grid: RasterGrid, water: list, buffer_km: float) -> np.ndarray:
    """Boolean grid: cell center within buffer_km of any water feature.

    Kilometers are converted to degrees per feature at its centroid latitude,
    so the buffer test is a plain distance comparison in a local km frame.
    """
    if buffer_km < 0:
        raise EngineError("buffer_km must be >= 0")
    mask = np.zeros((grid.nrows, grid.ncols), dtype=bool)
    if not water:
        return mask
    xs = grid.cell_centers_x()
    ys = grid.cell_centers_y()
    for feature in water:
        _, sx, sy = _feature_scale(feature)
        minx, miny, maxx, maxy = geometry.bounds(feature)
        pad_x = buffer_km / sx
        pad_y = buffer_km / sy
        c0, c1 = np.searchsorted(xs, [minx - pad_x, maxx + pad_x])
        cols = np.arange(max(c0 - 1, 0), min(c1 + 1, grid.ncols))
        ys_sn = ys[::-1]
        r1s, r0s = np.searchsorted(ys_sn, [miny - pad_y, maxy + pad_y])
        rows = np.arange(max(grid.nrows - r0s - 1, 0), min(grid.nrows - r1s + 1, grid.nrows))
        if not len(cols) or not len(rows):
            continue
        rr, cc = np.meshgrid(rows, cols, indexing="ij")
        pts = np.column_stack([xs[cc.ravel()] * sx, ys[rr.ravel()] * sy])
        near = geometry.distance_to(_scaled(feature, sx, sy), pts) <= buffer_km
        mask[rr.ravel()[near], cc.ravel()[near]] = True
    return mask


def masked_population(grid: RasterGrid, mask: np.ndarray) -> RasterGrid:
    """Population where the mask holds, 0 elsewhere (nodata also becomes 0)."""
    vals = np.where(mask & (grid.values != grid.nodata), grid.values, 0.0)
    return RasterGrid(
        ncols=grid.ncols,
        nrows=grid.nrows,
        xll=grid.xll,
        yll=grid.yll,
        cellsize=grid.cellsize,
        nodata=grid.nodata,
        values=vals,
    )


def population_near_water(
    pop: RasterGrid,
    water: list,
    buffer_km: float,
    regions: list[AdminRegion],
) -> list[tuple[int, float]]:
    """Per-region population within buffer_km of any inland water feature."""
    if not water:
        warnings.warn("empty water set: population near water is 0 everywhere",
                      EngineWarning, stacklevel=2)
    mask = water_buffer_mask(pop, water, buffer_km)
    masked = masked_population(pop, mask)
    owner = assign_cells(pop, regions).ravel()
    flat = masked.values.ravel()
    out = []
    for ri, region in enumerate(regions):
        out.append((region.adm_id, float(np.sum(flat[owner == ri]))))
    return out
