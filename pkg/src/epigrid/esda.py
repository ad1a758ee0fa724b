"""Global and local spatial autocorrelation with permutation inference.

Global statistic over the n_used non-island regions, with z_i = x_i - mean(x):

    I = (n / S0) * sum_ij w_ij z_i z_j / sum_i z_i^2

Local statistic per region, with m2 = sum_k z_k^2 / n:

    I_i = (z_i / m2) * sum_j w_ij z_j

Inference is by permutation. The global test shuffles values across
non-island positions; permutation k draws from a generator seeded with
seed XOR k, so results are independent of how permutations are scheduled.
The local test holds z_i fixed and redraws its neighbors from the remaining
values (conditional permutation); every draw again derives from
(seed XOR permutation index), with fixed per-region offsets into one shared
permutation so the whole sweep stays deterministic and O(edges) per draw.
Pseudo p-values are (exceedances + 1) / (n_perm + 1), one-sided in the
direction of departure, so 999 permutations floor p at exactly 0.001.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConstantFieldError, EngineError, InsufficientRegionsError
from .geo import SpatialWeights, flatten

QUADRANTS = ("HH", "LL", "HL", "LH", "NS", "ISLAND")

# spawn key for the per-region offsets of the conditional-permutation sweep
_OFFSET_STREAM = 1


@dataclass(frozen=True)
class GlobalMoranResult:
    I: float
    expected_I: float
    p_value: float
    n_permutations: int
    n_used: int


@dataclass(frozen=True)
class LisaResult:
    local_i: np.ndarray  # nan on islands
    quadrant: tuple[str, ...]
    p_value: np.ndarray  # nan on islands
    z_value: np.ndarray  # mean deviate, nan on islands
    lag: np.ndarray  # 0 on islands
    n_permutations: int
    alpha: float


def _active_subgraph(x, w: SpatialWeights):
    """Restrict x and the edge list to non-island regions, reindexed compactly."""
    x = np.asarray(x, dtype=float)
    if x.shape != (w.n,):
        raise EngineError(f"vector length {x.shape} does not match weights n={w.n}")
    island = np.zeros(w.n, dtype=bool)
    island[list(w.islands)] = True
    active = np.flatnonzero(~island)
    n_used = len(active)
    if n_used < 2:
        raise InsufficientRegionsError(f"{n_used} non-island regions; need at least 2")
    xa = x[active]
    if np.all(xa == xa[0]):
        raise ConstantFieldError("analysis variable is constant over usable regions")
    compact = np.full(w.n, -1, dtype=np.int64)
    compact[active] = np.arange(n_used)
    rows, cols, vals = flatten(w)
    # symmetry of contiguity means no edge can touch an island
    return xa, active, compact[rows], compact[cols], vals, n_used


def morans_i(x, w: SpatialWeights, n_perm: int = 999, seed: int = 0) -> GlobalMoranResult:
    """Global Moran's I with a one-sided permutation pseudo p-value."""
    if n_perm < 1:
        raise EngineError("n_perm must be >= 1")
    if seed < 0:
        raise EngineError("seed must be non-negative")
    xa, _, rows, cols, vals, n = _active_subgraph(x, w)
    z = xa - xa.mean()
    den = float(np.sum(z * z))
    s0 = float(np.sum(vals))
    if s0 == 0.0:
        raise InsufficientRegionsError("weights have no edges")
    denom = s0 * den  # single division keeps clean cases (e.g. n=2 -> -1) exact

    def stat(values: np.ndarray) -> float:
        lag = np.bincount(rows, weights=vals * values[cols], minlength=n)
        return float(n * np.sum(values * lag) / denom)

    observed = stat(z)
    expected = -1.0 / (n - 1)
    exceed = 0
    if observed >= expected:
        for k in range(n_perm):
            if stat(np.random.default_rng(seed ^ k).permutation(z)) >= observed:
                exceed += 1
    else:
        for k in range(n_perm):
            if stat(np.random.default_rng(seed ^ k).permutation(z)) <= observed:
                exceed += 1
    return GlobalMoranResult(
        I=observed,
        expected_I=expected,
        p_value=(exceed + 1) / (n_perm + 1),
        n_permutations=n_perm,
        n_used=n,
    )


def lisa(
    x,
    w: SpatialWeights,
    n_perm: int = 999,
    seed: int = 0,
    alpha: float = 0.05,
) -> LisaResult:
    """Local Moran values, conditional-permutation p-values, and quadrants.

    Quadrants come from the signs of the mean deviate and the spatial lag:
    HH, LL, HL, LH; regions with p above alpha (or a zero deviate or lag) are
    NS, and islands are always ISLAND. alpha=1 disables the significance
    filter.
    """
    if n_perm < 1:
        raise EngineError("n_perm must be >= 1")
    if seed < 0:
        raise EngineError("seed must be non-negative")
    if not (0.0 < alpha <= 1.0):
        raise EngineError("alpha must be in (0, 1]")
    xa, active, rows, cols, vals, n = _active_subgraph(x, w)
    z = xa - xa.mean()
    m2 = float(np.sum(z * z)) / n
    lag_active = np.bincount(rows, weights=vals * z[cols], minlength=n)
    local = z * lag_active / m2

    exceed = np.zeros(n, dtype=np.int64)
    upper = local >= 0.0
    n_others = n - 1
    if n_others >= 1 and len(rows):
        # slot t of row i reads position (offset_i + t) mod (n-1) of one shared
        # permutation of that row's "other" regions; offsets are fixed per seed
        offsets = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(_OFFSET_STREAM,))
        ).integers(0, n_others, size=n)
        row_change = np.flatnonzero(np.diff(rows, prepend=-1))
        slot = np.arange(len(rows)) - row_change[np.searchsorted(row_change, np.arange(len(rows)), side="right") - 1]
        base = (offsets[rows] + slot) % n_others
        for k in range(n_perm):
            perm = np.random.default_rng(seed ^ k).permutation(n_others)
            pos = perm[base]
            drawn = pos + (pos >= rows)  # skip the held-out region itself
            lag_star = np.bincount(rows, weights=vals * z[drawn], minlength=n)
            local_star = z * lag_star / m2
            exceed += np.where(upper, local_star >= local, local_star <= local)
    p_active = (exceed + 1) / (n_perm + 1)

    local_full = np.full(w.n, np.nan)
    p_full = np.full(w.n, np.nan)
    z_full = np.full(w.n, np.nan)
    lag_full = np.zeros(w.n)
    local_full[active] = local
    p_full[active] = p_active
    z_full[active] = z
    lag_full[active] = lag_active

    quadrant = ["ISLAND"] * w.n
    for pos, i in enumerate(active):
        zi, li, pi = z[pos], lag_active[pos], p_active[pos]
        if pi > alpha or zi == 0.0 or li == 0.0:
            quadrant[i] = "NS"
        elif zi > 0 and li > 0:
            quadrant[i] = "HH"
        elif zi < 0 and li < 0:
            quadrant[i] = "LL"
        elif zi > 0 and li < 0:
            quadrant[i] = "HL"
        else:
            quadrant[i] = "LH"
    return LisaResult(
        local_i=local_full,
        quadrant=tuple(quadrant),
        p_value=p_full,
        z_value=z_full,
        lag=lag_full,
        n_permutations=n_perm,
        alpha=alpha,
    )
