"""Contiguity-based spatial weights over district polygons, and spatial lags.

Queen contiguity joins regions whose boundaries share at least one point
(within a snapping tolerance); rook requires a shared boundary stretch of
positive length. Adjacency is found through a regular-grid index over
bounding boxes but must agree exactly with an all-pairs sweep, so both paths
share the same geometric predicates.
"""

from __future__ import annotations

import csv
import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import EngineError, EngineWarning
from .ingest import AdminRegion


@dataclass(frozen=True)
class SpatialWeights:
    n: int
    neighbors: tuple[tuple[int, ...], ...]
    weights: tuple[tuple[float, ...], ...]
    standardized: bool
    islands: tuple[int, ...]

    @property
    def s0(self) -> float:
        return float(sum(sum(row) for row in self.weights))

    def cardinalities(self) -> np.ndarray:
        return np.array([len(row) for row in self.neighbors], dtype=np.int64)

    def row_standardized(self) -> "SpatialWeights":
        rows = []
        for row in self.weights:
            total = sum(row)
            rows.append(tuple(w / total for w in row) if total else ())
        return SpatialWeights(
            n=self.n,
            neighbors=self.neighbors,
            weights=tuple(rows),
            standardized=True,
            islands=self.islands,
        )


def flatten(w: SpatialWeights) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Edge-list view: parallel (row, col, weight) arrays in row order."""
    rows = np.fromiter(
        (i for i, nbrs in enumerate(w.neighbors) for _ in nbrs), dtype=np.int64
    )
    cols = np.fromiter(itertools.chain.from_iterable(w.neighbors), dtype=np.int64)
    vals = np.fromiter(itertools.chain.from_iterable(w.weights), dtype=float)
    return rows, cols, vals


def from_adjacency(n: int, pairs, standardize: bool = True) -> SpatialWeights:
    """Build weights from symmetric index pairs, binary then row-standardized."""
    nbrs: list[set[int]] = [set() for _ in range(n)]
    for i, j in pairs:
        if i == j:
            continue
        nbrs[i].add(j)
        nbrs[j].add(i)
    neighbors = tuple(tuple(sorted(s)) for s in nbrs)
    islands = tuple(i for i, s in enumerate(neighbors) if not s)
    w = SpatialWeights(
        n=n,
        neighbors=neighbors,
        weights=tuple(tuple(1.0 for _ in s) for s in neighbors),
        standardized=False,
        islands=islands,
    )
    return w.row_standardized() if standardize else w


def _grid_candidate_pairs(bboxes: np.ndarray, tolerance: float) -> set[tuple[int, int]]:
    """Pairs whose tolerance-expanded bounding boxes share a grid bin."""
    n = len(bboxes)
    spans = np.maximum(bboxes[:, 2] - bboxes[:, 0], bboxes[:, 3] - bboxes[:, 1])
    cell = max(float(np.median(spans)), tolerance, 1e-12)
    bins: dict[tuple[int, int], list[int]] = {}
    for i, (minx, miny, maxx, maxy) in enumerate(bboxes):
        x0 = int(np.floor((minx - tolerance) / cell))
        x1 = int(np.floor((maxx + tolerance) / cell))
        y0 = int(np.floor((miny - tolerance) / cell))
        y1 = int(np.floor((maxy + tolerance) / cell))
        for bx in range(x0, x1 + 1):
            for by in range(y0, y1 + 1):
                bins.setdefault((bx, by), []).append(i)
    pairs: set[tuple[int, int]] = set()
    for members in bins.values():
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                pairs.add((members[a], members[b]))
    return pairs


def _bbox_gap_exceeds(a, b, tolerance: float) -> bool:
    return (
        a[0] > b[2] + tolerance
        or b[0] > a[2] + tolerance
        or a[1] > b[3] + tolerance
        or b[1] > a[3] + tolerance
    )


def contiguous(region_a: AdminRegion, region_b: AdminRegion, kind: str, tolerance: float) -> bool:
    """Contact predicate between two regions (shared by index and sweep paths)."""
    segs_a = geometry.boundary_segments(region_a.geometry)
    segs_b = geometry.boundary_segments(region_b.geometry)
    if kind == "queen":
        return geometry.segments_touch(segs_a, segs_b, tolerance)
    if kind == "rook":
        return geometry.max_collinear_overlap(segs_a, segs_b, tolerance) > tolerance
    raise EngineError(f"unknown contiguity kind {kind!r}")


def build_contiguity_weights(
    regions: list[AdminRegion],
    kind: str = "queen",
    tolerance: float = 1e-9,
    method: str = "grid",
) -> SpatialWeights:
    """Row-standardized queen or rook contiguity weights.

    method="grid" prunes candidate pairs with a regular-grid index;
    method="bruteforce" tests every pair. Both give identical results.
    """
    if not regions:
        raise EngineError("no regions")
    if kind not in ("queen", "rook"):
        raise EngineError(f"unknown contiguity kind {kind!r}")
    n = len(regions)
    segs = [geometry.boundary_segments(r.geometry) for r in regions]
    bboxes = np.array([geometry.bounds(r.geometry) for r in regions])
    if method == "grid":
        candidates = _grid_candidate_pairs(bboxes, tolerance)
    elif method == "bruteforce":
        candidates = {(i, j) for i in range(n) for j in range(i + 1, n)}
    else:
        raise EngineError(f"unknown method {method!r}")
    pairs = []
    for i, j in candidates:
        if _bbox_gap_exceeds(bboxes[i], bboxes[j], tolerance):
            continue
        if kind == "queen":
            hit = geometry.segments_touch(segs[i], segs[j], tolerance)
        else:
            hit = geometry.max_collinear_overlap(segs[i], segs[j], tolerance) > tolerance
        if hit:
            pairs.append((i, j))
    w = from_adjacency(n, pairs, standardize=True)
    if len(w.islands) == n:
        warnings.warn("all regions are pairwise disjoint: every region is an island",
                      EngineWarning, stacklevel=2)
    return w


def spatial_lag(w: SpatialWeights, x) -> np.ndarray:
    """lag_i = sum_j w_ij x_j; islands get 0 (they are listed in w.islands)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (w.n,):
        raise EngineError(f"vector has length {x.shape}, weights expect {w.n}")
    rows, cols, vals = flatten(w)
    return np.bincount(rows, weights=vals * x[cols], minlength=w.n)


def write_weights_csv(w: SpatialWeights, edges_path, islands_path) -> None:
    """Audit export: an (i, j, weight) edge list plus an island index list."""
    with open(edges_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "weight"])
        for i, (nbrs, wts) in enumerate(zip(w.neighbors, w.weights)):
            for j, wij in zip(nbrs, wts):
                writer.writerow([i, j, repr(wij)])
    with open(islands_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["island"])
        for i in w.islands:
            writer.writerow([i])


def read_weights_csv(edges_path, islands_path, n: int) -> SpatialWeights:
    neighbors: list[list[int]] = [[] for _ in range(n)]
    weights: list[list[float]] = [[] for _ in range(n)]
    with open(edges_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if not row:
                continue
            i, j, wij = int(row[0]), int(row[1]), float(row[2])
            neighbors[i].append(j)
            weights[i].append(wij)
    with open(islands_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        islands = tuple(int(row[0]) for row in reader if row)
    standardized = all(
        not row or abs(sum(row) - 1.0) <= 1e-12 for row in weights
    )
    return SpatialWeights(
        n=n,
        neighbors=tuple(tuple(r) for r in neighbors),
        weights=tuple(tuple(r) for r in weights),
        standardized=standardized,
        islands=islands,
    )
