"""Cut-set upper bounds, series constants and interference-bound evaluators."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum
from functools import lru_cache

import numba
import numpy as np
from scipy.optimize import brentq
from scipy.special import zeta

from .channel import DecayFamily, ErasureModel
from .netgen import NetworkInstance

AXES = ("x", "y", "z")

# Shell-count constant: the half-space lattice points whose L-infinity distance
# from a right-hand point at depth i equals i + v - 1 number at most
# A1 * (3i^2 + 6iv + 4v^2).
A1 = 3.0


# ---------------------------------------------------------------------------
# constants


def tdma_cubic(x):
    return ((x + 23) * x + 29) * x - 1


@lru_cache(maxsize=None)
def tdma_root() -> float:
    """Greatest real root of x^3 + 23x^2 + 29x - 1 (the only positive one)."""
    roots = np.roots([1.0, 23.0, 29.0, -1.0])
    guess = max(r.real for r in roots if abs(r.imag) < 1e-12)
    return float(brentq(tdma_cubic, guess - 1e-6, guess + 1e-6, xtol=1e-16, rtol=1e-15))


def _check_alpha(alpha: float) -> None:
    if not alpha > 3:
        raise ValueError("the interference series converges only for alpha > 3")


def k_alpha(alpha: float) -> float:
    """sum_i 12/i^(alpha-2) + 24/i^(alpha-1) + 13/i^alpha."""
    _check_alpha(alpha)
    return float(12 * zeta(alpha - 2) + 24 * zeta(alpha - 1) + 13 * zeta(alpha))


def theoretical_exponent(lam: float, mu: float, nu: float) -> float:
    return min(1 - lam, 1 - mu, 1 - nu)


# ---------------------------------------------------------------------------
# interference bounds


def interference_bound_exponential(k: float, c: float, d: float, gamma: float) -> float:
    """26x(1+x)/(1-x)^3 with x = gamma^((k-1)c(d+1))."""
    x = gamma ** ((k - 1) * c * (d + 1))
    if not x < 1:
        raise ValueError("need x = gamma^((k-1)c(d+1)) < 1")
    return 26 * x * (1 + x) / (1 - x) ** 3


def interference_bound_polynomial(k: float, c: float, d: float, alpha: float) -> float:
    """2(13 + K_alpha) / ((k-1)c(d+1))^alpha."""
    _check_alpha(alpha)
    if not k > 1 or c <= 0 or d < 0:
        raise ValueError("need k > 1, c > 0, d >= 0")
    return 2 * (13 + k_alpha(alpha)) / ((k - 1) * c * (d + 1)) ** alpha


def interference_mc(
    model: ErasureModel,
    k: float,
    c: float,
    d: float,
    draws: int,
    rng: np.random.Generator,
    layers: int = 3,
    batch: int = 2000,
) -> tuple[float, float]:
    """Monte Carlo probability that some same-slot interferer gets through.

    Transmitters sit on a cubic reuse grid of pitch k(d+1)c, each placed
    uniformly inside its own c-sided subcube; the receiver is uniform within
    d subcubes of the intended transmitter's subcube.  Interferers beyond
    ``layers`` rings are ignored.  Returns (estimate, standard error).
    """
    pitch = k * (d + 1) * c
    r = np.arange(-layers, layers + 1)
    grid = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    grid = grid[np.any(grid != 0, axis=1)] * pitch
    hits = 0
    left = draws
    while left > 0:
        b = min(batch, left)
        rx = rng.uniform(-d * c, (d + 1) * c, size=(b, 1, 3))
        tx = grid[None, :, :] + rng.uniform(0, c, size=(b, len(grid), 3))
        dist = np.linalg.norm(tx - rx, axis=-1)
        through = rng.random(dist.shape) < model.success(dist)
        hits += int(np.any(through, axis=1).sum())
        left -= b
    p = hits / draws
    return p, math.sqrt(max(p * (1 - p), 1.0 / draws) / draws)


# ---------------------------------------------------------------------------
# cut-set bound


@numba.njit(cache=True)
def _cut_sum(src, dst, family_exp, param):
    """sum_i (1 - prod_k eps_ki) over sources ``src`` and destinations ``dst``."""
    total = 0.0
    for i in range(src.shape[0]):
        log_prod = 0.0
        for k in range(dst.shape[0]):
            dx = src[i, 0] - dst[k, 0]
            dy = src[i, 1] - dst[k, 1]
            dz = src[i, 2] - dst[k, 2]
            dd = math.sqrt(dx * dx + dy * dy + dz * dz)
            if family_exp:
                s = math.exp(dd * param)
            else:
                s = 1.0 if dd <= 1.0 else dd ** (-param)
            if s >= 1.0:
                log_prod = -math.inf
                break
            log_prod += math.log1p(-s)
        total += -math.expm1(log_prod)
    return total


@numba.njit(cache=True)
def _pair_sum(src, dst, family_exp, param):
    """sum_i sum_k (1 - eps_ki)."""
    total = 0.0
    for i in range(src.shape[0]):
        for k in range(dst.shape[0]):
            dx = src[i, 0] - dst[k, 0]
            dy = src[i, 1] - dst[k, 1]
            dz = src[i, 2] - dst[k, 2]
            dd = math.sqrt(dx * dx + dy * dy + dz * dz)
            if family_exp:
                total += math.exp(dd * param)
            else:
                total += 1.0 if dd <= 1.0 else dd ** (-param)
    return total


def _kernel_args(model: ErasureModel) -> tuple[bool, float]:
    if model.family is DecayFamily.EXPONENTIAL:
        return True, math.log(model.gamma)
    return False, float(model.alpha)


def _axis_index(axis) -> int:
    return AXES.index(axis) if isinstance(axis, str) else int(axis)


@dataclass(frozen=True)
class CutPartition:
    axis: int
    cut: float
    sources: np.ndarray  # left-half sources whose destination lies right
    dest_near: np.ndarray  # destinations within unit width right of the cut
    dest_far: np.ndarray

    @property
    def destinations(self) -> np.ndarray:
        return np.concatenate([self.dest_near, self.dest_far])


def cut_partition(instance: NetworkInstance, axis) -> CutPartition:
    """Split pairs by the plane bisecting ``axis`` (effective coordinates)."""
    a = _axis_index(axis)
    pos = instance.effective_positions
    cut = instance.effective_sides[a] / 2
    src = np.arange(instance.n)
    dst = instance.pairing
    crossing = (pos[src, a] < cut) & (pos[dst, a] >= cut)
    sources = src[crossing]
    dests = dst[crossing]
    near = pos[dests, a] < cut + 1
    return CutPartition(a, float(cut), sources, np.sort(dests[near]), np.sort(dests[~near]))


def cutset_bound(instance: NetworkInstance, model: ErasureModel, axis) -> float:
    """sum over crossing sources of 1 - prod over far-side destinations of eps."""
    part = cut_partition(instance, axis)
    if len(part.sources) == 0:
        return 0.0
    pos = instance.effective_positions
    fam, param = _kernel_args(model)
    return float(_cut_sum(pos[part.sources], pos[part.destinations], fam, param))


@dataclass(frozen=True)
class BoundReport:
    bound_x: float
    bound_y: float
    bound_z: float
    near_term: float = math.nan
    far_term: float = math.nan

    @property
    def min_bound(self) -> float:
        return min(self.bound_x, self.bound_y, self.bound_z)

    @property
    def partitioned(self) -> float:
        return self.near_term + self.far_term

    def to_dict(self) -> dict:
        out = asdict(self)
        out["min_bound"] = self.min_bound
        return out


def cutset_bounds(instance: NetworkInstance, model: ErasureModel) -> BoundReport:
    """Exact bound across each of the three bisecting planes."""
    return BoundReport(*(cutset_bound(instance, model, a) for a in range(3)))


def cutset_bound_partitioned(instance: NetworkInstance, model: ErasureModel, axis) -> BoundReport:
    """Near destinations count one unit each; far ones enter pairwise.

    The three axis fields hold the exact bounds, so ``min_bound`` matches
    ``cutset_bounds``; the near and far terms refer to ``axis``.
    """
    part = cut_partition(instance, axis)
    pos = instance.effective_positions
    fam, param = _kernel_args(model)
    far = 0.0
    if len(part.sources) and len(part.dest_far):
        far = float(_pair_sum(pos[part.sources], pos[part.dest_far], fam, param))
    exact = cutset_bounds(instance, model)
    return BoundReport(exact.bound_x, exact.bound_y, exact.bound_z, float(len(part.dest_near)), far)


def far_term(instance: NetworkInstance, model: ErasureModel, axis, positions: np.ndarray | None = None) -> float:
    part = cut_partition(instance, axis)
    pos = instance.effective_positions if positions is None else positions
    if len(part.sources) == 0 or len(part.dest_far) == 0:
        return 0.0
    fam, param = _kernel_args(model)
    return float(_pair_sum(pos[part.sources], pos[part.dest_far], fam, param))


def displaced_positions(instance: NetworkInstance, axis) -> np.ndarray:
    """Snap nodes onto unit-lattice vertices next to the cut.

    Along ``axis`` every node moves to the face of its unit cube nearest the
    cut plane; across it, coordinates round to the nearest lattice vertex.
    """
    a = _axis_index(axis)
    pos = np.array(instance.effective_positions, dtype=float)
    cut = instance.effective_sides[a] / 2
    rel = pos[:, a] - cut
    snapped = np.where(rel < 0, np.ceil(rel), np.floor(rel))
    out = np.rint(pos)
    out[:, a] = cut + snapped
    return out


def displacement_check(instance: NetworkInstance, model: ErasureModel, axis) -> tuple[float, float]:
    """(far term on the placed nodes, far term after snapping to vertices)."""
    return far_term(instance, model, axis), far_term(instance, model, axis, displaced_positions(instance, axis))


# ---------------------------------------------------------------------------
# regular-grid series


def _axis_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Offsets l - r for l, r in 1..n and their multiplicities."""
    off = np.arange(-(n - 1), n)
    return off.astype(float), (n - np.abs(off)).astype(float)


def _depth_pairs(n_half: int) -> tuple[np.ndarray, np.ndarray]:
    """Depths i_l + i_r - 1 for i_l, i_r in 1..n_half and their multiplicities."""
    s = np.arange(1, 2 * n_half)
    return s.astype(float), np.minimum(s, 2 * n_half - s).astype(float)


def _regular_sum(term, n_half: int, n_mu: int, n_nu: int) -> float:
    s, ws = _depth_pairs(n_half)
    j, wj = _axis_pairs(n_mu)
    k, wk = _axis_pairs(n_nu)
    d = np.sqrt(s[:, None, None] ** 2 + j[None, :, None] ** 2 + k[None, None, :] ** 2)
    w = ws[:, None, None] * wj[None, :, None] * wk[None, None, :]
    return float(np.sum(w * term(d)))


@dataclass(frozen=True)
class SeriesBound:
    finite_sum: float
    cap: float
    constants: dict


def exponential_series_constants(gamma: float) -> dict:
    a2, a3, a4 = 3 * A1, 6 * A1, 4 * A1
    return {
        "a1": A1,
        "a5": a2 / (1 - gamma),
        "a6": a3 / (1 - gamma) ** 2,
        "a7": a4 * (1 + gamma) / (1 - gamma) ** 3,
    }


def regular_series_bound_exponential(gamma: float, n_lambda_half: int, n_mu: int, n_nu: int) -> SeriesBound:
    """Lattice sum of gamma^distance across the cut and its geometric-series cap."""
    if not 0 < gamma < 1:
        raise ValueError("need 0 < gamma < 1")
    finite = _regular_sum(lambda d: gamma**d, n_lambda_half, n_mu, n_nu)
    a = exponential_series_constants(gamma)
    g = gamma
    cap = n_mu * n_nu * (
        a["a5"] * g * (1 + g) / (1 - g) ** 3 + a["a6"] * g / (1 - g) ** 2 + a["a7"] * g / (1 - g)
    )
    return SeriesBound(finite, cap, a)


def polynomial_series_constants(alpha: float) -> dict:
    _check_alpha(alpha)
    return {
        "a1": A1,
        "a2": 3 * A1 * float(zeta(alpha)),
        "a3": 6 * A1 * float(zeta(alpha - 1)),
        "a4": 4 * A1 * float(zeta(alpha - 2)),
    }


def regular_series_bound_polynomial(alpha: float, dims) -> SeriesBound:
    """Lattice sum of distance^-alpha across the cut and the zeta-series cap.

    The cap follows the closed-form chain, which replaces (i+v-1)^-alpha by
    (iv)^-alpha; that step is not an upper bound in general, so the cap is
    a reference value rather than a guaranteed majorant on large grids.
    """
    _check_alpha(alpha)
    n_half, n_mu, n_nu = (int(v) for v in dims)
    finite = _regular_sum(lambda d: np.minimum(1.0, d ** (-alpha)), n_half, n_mu, n_nu)
    a = polynomial_series_constants(alpha)
    series = a["a2"] * zeta(alpha - 2) + a["a3"] * zeta(alpha - 1) + a["a4"] * zeta(alpha)
    return SeriesBound(finite, float(n_mu * n_nu * series), a)


def shell_count(i: int, v: int) -> int:
    """Half-space lattice points at L-infinity distance i+v-1 from a depth-i point."""
    s = i + v - 1
    return (2 * s + 1) ** 2 + 8 * s * (v - 1)


# ---------------------------------------------------------------------------
# binning


class Granularity(str, Enum):
    SUBCUBE = "subcube"
    CUBOID = "cuboid"
    UNIT_CUBE = "unit_cube"


@dataclass(frozen=True)
class BinningReport:
    granularity: Granularity
    max_occupancy: int
    threshold: float
    held: bool
    bins: int


def _bin_counts(pos: np.ndarray, sizes, sides) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=float)
    dims = np.maximum(np.ceil(np.asarray(sides) / sizes - 1e-9).astype(int), 1)
    idx = np.minimum(np.floor(pos / sizes).astype(int), dims - 1)
    flat = np.ravel_multi_index(idx.T, dims)
    return np.bincount(flat, minlength=math.prod(dims))


def binning_check(
    instance: NetworkInstance,
    granularity: Granularity | str,
    c: float = 1.5,
    w: float | None = None,
) -> BinningReport:
    """Largest bin occupancy against the whp threshold of the matching lemma.

    Subcubes of side c must hold fewer than ln l nodes (l^3 = n/c^3); slab
    cuboids of n^lambda x c x w fewer than 2cw n^lambda; unit cubes fewer than
    ln n.
    """
    g = Granularity(granularity)
    pos = instance.effective_positions
    sides = instance.effective_sides
    n = instance.n
    if g is Granularity.SUBCUBE:
        counts = _bin_counts(pos, (c, c, c), sides)
        threshold = math.log((n / c**3) ** (1 / 3)) if n > c**3 else 0.0
    elif g is Granularity.CUBOID:
        w = c if w is None else w
        counts = _bin_counts(pos, (sides[0], c, w), sides)
        threshold = 2 * c * w * sides[0]
    else:
        counts = _bin_counts(pos, (1.0, 1.0, 1.0), sides)
        threshold = math.log(n) if n > 1 else 0.0
    top = int(counts.max()) if counts.size else 0
    held = n <= 1 or top < threshold
    return BinningReport(g, top, threshold, held, int(counts.size))
