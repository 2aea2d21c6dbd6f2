"""
Spatial locations, knot grids and the sparse bisquare basis.

Knots are laid out on regular triangular grids, one grid per resolution.
Each resolution ``l`` gets a bandwidth ``r_l = b * (min knot spacing at l)``
and every knot carries the local bisquare function with that radius. The
basis matrices S (observations x knots) and A (prediction sites x knots)
are returned in compressed sparse column form with structural zeros for
every point farther than ``r_l`` from a knot.

Locations are passed around as ``(n, 2)`` float arrays; ``Location2D``
exists for single points at API boundaries.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from .errors import DegenerateKnotsError, InvalidArgumentError

logger = logging.getLogger(__name__)

# Knots closer than this are treated as coincident.
COINCIDENT_TOL = 1e-12

# Default multi-resolution jitter, as a fraction of the finest spacing.
JITTER_FRACTION = 0.01


@dataclass(frozen=True)
class Location2D:
    """A point in the planar domain."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidArgumentError(f"non-finite location ({self.x}, {self.y})")


@dataclass(frozen=True)
class Domain:
    """Axis-aligned rectangle holding the knots."""

    xmin: float = 0.0
    xmax: float = 1.0
    ymin: float = 0.0
    ymax: float = 1.0

    def __post_init__(self) -> None:
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise InvalidArgumentError(f"degenerate domain {self}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin


UNIT_SQUARE = Domain()


def as_points(points: Iterable) -> np.ndarray:
    """Coerce locations (array, list of pairs, or ``Location2D``s) to ``(n, 2)``."""
    if isinstance(points, np.ndarray):
        arr = np.asarray(points, dtype=float)
    else:
        rows = [(p.x, p.y) if isinstance(p, Location2D) else tuple(p) for p in points]
        arr = np.asarray(rows, dtype=float)
    if arr.size == 0:
        return np.zeros((0, 2))
    arr = arr.reshape(-1, 2)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("locations must be finite")
    return arr


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Observed locations with one response value each."""

    locations: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        locations = as_points(self.locations).copy()
        values = np.array(self.values, dtype=float).reshape(-1)
        if locations.shape[0] < 1:
            raise InvalidArgumentError("an observation set needs at least one observation")
        if values.shape[0] != locations.shape[0]:
            raise InvalidArgumentError(
                f"{locations.shape[0]} locations but {values.shape[0]} values"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError("observation values must be finite")
        locations.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "locations", locations)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    def __len__(self) -> int:
        return self.n

    def take(self, index) -> "ObservationSet":
        """Subset (or reorder) by row index."""
        index = np.asarray(index, dtype=int)
        return ObservationSet(self.locations[index], self.values[index])

    def with_values(self, values) -> "ObservationSet":
        return ObservationSet(self.locations, values)


@dataclass(frozen=True, eq=False)
class KnotSet:
    """Knots of one or more resolutions.

    Attributes:
        coords: ``(m, 2)`` knot coordinates, in column order of the basis.
        level_of: ``(m,)`` resolution level (1-based) of every knot.
    """

    coords: np.ndarray
    level_of: np.ndarray

    def __post_init__(self) -> None:
        coords = as_points(self.coords).copy()
        level_of = np.array(self.level_of, dtype=int).reshape(-1)
        if coords.shape[0] < 1:
            raise InvalidArgumentError("a knot set needs at least one knot")
        if level_of.shape[0] != coords.shape[0]:
            raise InvalidArgumentError("level_of must have one entry per knot")
        for level in np.unique(level_of):
            if np.count_nonzero(level_of == level) < 2:
                raise InvalidArgumentError(f"level {level} has fewer than 2 knots")
        if coords.shape[0] > 1 and pdist(coords).min() < COINCIDENT_TOL:
            raise DegenerateKnotsError("knot set contains coincident knots")
        coords.setflags(write=False)
        level_of.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "level_of", level_of)

    @property
    def m(self) -> int:
        return int(self.coords.shape[0])

    @property
    def levels(self) -> List[int]:
        return [int(level) for level in np.unique(self.level_of)]

    def level_coords(self, level: int) -> np.ndarray:
        return self.coords[self.level_of == level]

    def __len__(self) -> int:
        return self.m


@dataclass(frozen=True)
class BasisConfig:
    """Bandwidth constant ``b`` and the resolutions to use (``None`` = all)."""

    bandwidth_constant: float = 1.5
    levels: Optional[Sequence[int]] = field(default=None)

    def __post_init__(self) -> None:
        if not self.bandwidth_constant > 0:
            raise InvalidArgumentError(
                f"bandwidth constant must be > 0, got {self.bandwidth_constant}"
            )


# -------------------------------------------------
# Knot grids
# -------------------------------------------------
def triangular_row_count(x_divisor: int, domain: Domain = UNIT_SQUARE) -> int:
    """Number of rows of a triangular grid with ``x_divisor`` knots per full row.

    Rows sit as close to equilateral spacing as fits the domain height:
    ``round(height / (w * sqrt(3) / 2))`` rows, never fewer than two.
    """
    w = domain.width / (x_divisor - 1)
    return max(2, int(round(domain.height / (w * math.sqrt(3.0) / 2.0))))


def triangular_knot_count(x_divisor: int, domain: Domain = UNIT_SQUARE) -> int:
    rows = triangular_row_count(x_divisor, domain)
    return (rows + 1) // 2 * x_divisor + rows // 2 * (x_divisor - 1)


def triangular_knot_grid(x_divisor: int, domain: Domain = UNIT_SQUARE) -> KnotSet:
    """Single-resolution triangular knot grid.

    Odd rows (1st, 3rd, ...) hold ``x_divisor`` knots spanning the full width;
    even rows hold ``x_divisor - 1`` knots shifted by half a spacing. All
    knots stay inside the domain.

    Args:
        x_divisor: knots along the x axis, at least 2.
        domain: rectangle to fill.

    Returns:
        A ``KnotSet`` with every knot at level 1.
    """
    if int(x_divisor) != x_divisor or x_divisor < 2:
        raise InvalidArgumentError(f"x_divisor must be an integer >= 2, got {x_divisor}")
    x_divisor = int(x_divisor)
    rows = triangular_row_count(x_divisor, domain)
    w = domain.width / (x_divisor - 1)
    h = domain.height / (rows - 1)

    points = []
    for i in range(rows):
        y = domain.ymin + i * h
        if i % 2 == 0:
            xs = domain.xmin + w * np.arange(x_divisor)
        else:
            xs = domain.xmin + w / 2.0 + w * np.arange(x_divisor - 1)
        points.extend((x, y) for x in xs)
    coords = np.asarray(points, dtype=float)
    return KnotSet(coords, np.ones(coords.shape[0], dtype=int))


def divisor_chain(x_divisor: int, levels: int) -> List[int]:
    """Divisors for ``levels`` resolutions ending at ``x_divisor``, coarsest first.

    Each coarser grid halves the spacing count: 13 -> 7 -> 4, 9 -> 5 -> 3.
    """
    if levels < 1:
        raise InvalidArgumentError(f"levels must be >= 1, got {levels}")
    chain = [int(x_divisor)]
    for _ in range(levels - 1):
        coarser = (chain[-1] + 1) // 2
        if coarser < 2:
            raise InvalidArgumentError(
                f"x_divisor {x_divisor} is too coarse for {levels} levels"
            )
        chain.append(coarser)
    return chain[::-1]


def multi_resolution_knots(
    x_divisors: Sequence[int],
    domain: Domain = UNIT_SQUARE,
    jitter: Optional[float] = None,
) -> KnotSet:
    """Union of triangular grids, one per resolution.

    Args:
        x_divisors: divisors ordered from coarsest to finest.
        domain: rectangle to fill.
        jitter: shift applied to each coarser level's origin, in domain
            units; level ``i`` of ``L`` moves by ``(L - i) * jitter`` on both
            axes and the finest level stays put. ``None`` uses 1% of the
            finest level's minimum spacing.
            A shifted coordinate that would leave ``domain`` moves the
            other way instead, so every knot stays inside it.

    Raises:
        DegenerateKnotsError: two knots coincide after the shifts.
    """
    divisors = [int(k) for k in x_divisors]
    if not divisors:
        raise InvalidArgumentError("at least one divisor is required")
    if any(b < a for a, b in zip(divisors, divisors[1:])):
        raise InvalidArgumentError(f"divisors must be ordered coarse to fine: {divisors}")

    grids = [triangular_knot_grid(k, domain) for k in divisors]
    if jitter is None:
        jitter = JITTER_FRACTION * min_knot_spacing(grids[-1], 1)
    if jitter < 0:
        raise InvalidArgumentError(f"jitter must be >= 0, got {jitter}")

    n_levels = len(grids)
    lower = np.array([domain.xmin, domain.ymin])
    upper = np.array([domain.xmax, domain.ymax])
    coords, level_of = [], []
    for idx, grid in enumerate(grids):
        shift = (n_levels - 1 - idx) * jitter
        moved = grid.coords + shift
        moved = np.where(moved > upper, grid.coords - shift, moved)
        coords.append(np.clip(moved, lower, upper))
        level_of.append(np.full(grid.m, idx + 1, dtype=int))
    knots = KnotSet(np.vstack(coords), np.concatenate(level_of))
    logger.debug("built %d knots over %d levels (divisors %s)", knots.m, n_levels, divisors)
    return knots


def min_knot_spacing(knots: KnotSet, level: int) -> float:
    """Minimum pairwise Euclidean distance between knots of one level."""
    pts = knots.level_coords(level)
    if pts.shape[0] < 2:
        raise InvalidArgumentError(f"level {level} has fewer than 2 knots")
    return float(pdist(pts).min())


def bandwidth(config: BasisConfig, knots: KnotSet, level: int) -> float:
    """Bandwidth ``r_l = b * min_knot_spacing(level)``."""
    return config.bandwidth_constant * min_knot_spacing(knots, level)


# -------------------------------------------------
# Bisquare basis
# -------------------------------------------------
def bisquare(d):
    """Local bisquare ``(1 - d^2)^2`` on ``[0, 1]``, zero beyond.

    Accepts a scalar or an array of scaled distances.
    """
    arr = np.asarray(d, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise InvalidArgumentError("bisquare distance must be >= 0")
    out = np.where(arr <= 1.0, (1.0 - arr**2) ** 2, 0.0)
    if out.ndim == 0:
        return float(out)
    return out


def build_basis(points, knots: KnotSet, config: BasisConfig) -> sparse.csc_matrix:
    """Evaluate every knot's bisquare function at every point.

    Entry ``(i, k)`` is ``bisquare(|x_i - u_k| / r_l)`` with ``l`` the level
    of knot ``k``. Only pairs strictly closer than ``r_l`` are stored.

    Args:
        points: ``(n, 2)`` locations (observations or prediction sites).
        knots: the knot set; its order fixes the column order.
        config: bandwidth constant and the levels to include.

    Returns:
        ``(n, m)`` CSC matrix with sorted row indices and no explicit zeros.
        Columns of excluded levels are empty.
    """
    pts = as_points(points)
    n, m = pts.shape[0], knots.m
    levels = knots.levels if config.levels is None else list(config.levels)

    rows, cols, vals = [], [], []
    for level in levels:
        knot_idx = np.flatnonzero(knots.level_of == level)
        if knot_idx.size == 0:
            raise InvalidArgumentError(f"knot set has no level {level}")
        radius = bandwidth(config, knots, level)
        if n == 0:
            continue
        tree = cKDTree(knots.coords[knot_idx])
        neighbours = tree.query_ball_point(pts, r=radius)
        counts = np.fromiter((len(nb) for nb in neighbours), dtype=int, count=n)
        if counts.sum() == 0:
            continue
        row = np.repeat(np.arange(n), counts)
        local = np.fromiter(
            (j for nb in neighbours for j in nb), dtype=int, count=int(counts.sum())
        )
        col = knot_idx[local]
        dist = np.hypot(*(pts[row] - knots.coords[col]).T)
        keep = dist < radius
        weight = bisquare(dist[keep] / radius)
        nonzero = weight > 0
        rows.append(row[keep][nonzero])
        cols.append(col[keep][nonzero])
        vals.append(weight[nonzero])

    if rows:
        data = (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols)))
        basis = sparse.csc_matrix(data, shape=(n, m))
    else:
        basis = sparse.csc_matrix((n, m))
    basis.sort_indices()
    basis.eliminate_zeros()
    logger.debug("basis %dx%d with %d nonzeros", n, m, basis.nnz)
    return basis


Observations = Union[ObservationSet, np.ndarray]


def response(obs: Observations) -> np.ndarray:
    """Response vector of an ``ObservationSet``, or a bare vector of values.

    Bare vectors appear once the data have been projected off the covariate
    space and no longer correspond to individual locations.
    """
    if isinstance(obs, ObservationSet):
        return obs.values
    values = np.asarray(obs, dtype=float).reshape(-1)
    if values.size < 1 or not np.all(np.isfinite(values)):
        raise InvalidArgumentError("response values must be finite and non-empty")
    return values
