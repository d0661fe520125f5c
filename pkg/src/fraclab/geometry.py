"""Computational scenario geometry: domain, exterior windows, grid.

The discretization is a cell-centered Cartesian grid over a bounding box.
Every cell center ("node") carries exactly one region label:

* ``OMEGA`` -- the domain where the potentials live and the equation holds,
* ``W1`` / ``W2`` -- disjoint exterior measurement windows,
* ``FAR``  -- remaining box cells (exterior data vanish there by default).

Geometric requirements enforced here:

* Omega is contained in the ball of radius ``r`` (every OMEGA cell center is
  strictly inside it);
* both windows stay outside the ball of radius ``3 r`` (every window cell
  center has norm >= 3 r), which forces all Omega-window pair midpoints to
  have norm >= r;
* the bounding box contains all labeled regions with at least one cell of
  margin.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigError, HypothesisViolation

OMEGA, W1, W2, FAR = 0, 1, 2, 3
REGION_NAMES = {OMEGA: "OMEGA", W1: "W1", W2: "W2", FAR: "FAR"}


@dataclass(frozen=True)
class BallSpec:
    """Open ball ``|x - center| < radius``."""

    center: tuple[float, ...]
    radius: float

    def contains(self, pts: NDArray[np.float64]) -> NDArray[np.bool_]:
        c = np.asarray(self.center, dtype=float)
        return np.linalg.norm(np.atleast_2d(pts) - c, axis=1) < self.radius


@dataclass(frozen=True)
class BoxSpec:
    """Closed axis-aligned box ``lo <= x <= hi`` (componentwise)."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def contains(self, pts: NDArray[np.float64]) -> NDArray[np.bool_]:
        pts = np.atleast_2d(pts)
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        return np.all((pts >= lo) & (pts <= hi), axis=1)

    def edges(self) -> NDArray[np.float64]:
        return np.asarray(self.hi, dtype=float) - np.asarray(self.lo, dtype=float)


RegionSpec = BallSpec | BoxSpec | tuple


def _region_contains(spec, pts: NDArray[np.float64]) -> NDArray[np.bool_]:
    """Membership for a single spec or a union given as a tuple/list."""
    if isinstance(spec, (BallSpec, BoxSpec)):
        return spec.contains(pts)
    out = np.zeros(len(np.atleast_2d(pts)), dtype=bool)
    for part in spec:
        out |= _region_contains(part, pts)
    return out


@dataclass(frozen=True)
class ScenarioGeometry:
    """Static description of a scenario's spatial layout."""

    n: int
    s: float
    r: float
    omega: RegionSpec
    w1: BoxSpec
    w2: BoxSpec
    box: BoxSpec
    h: float

    def validate(self) -> None:
        if self.n not in (1, 2, 3):
            raise ConfigError(f"dimension must be 1, 2 or 3, got {self.n}")
        if not (0.0 < self.s < 1.0):
            raise ConfigError(f"fractional power must lie in (0,1), got {self.s}")
        if self.h <= 0 or self.r <= 0:
            raise ConfigError("h and r must be positive")
        if self.w1 == self.w2:
            raise ConfigError("windows W1 and W2 must be disjoint (identical boxes given)")
        lo1, hi1 = np.asarray(self.w1.lo), np.asarray(self.w1.hi)
        lo2, hi2 = np.asarray(self.w2.lo), np.asarray(self.w2.hi)
        if np.all(hi1 > lo2) and np.all(hi2 > lo1):
            if np.all(np.maximum(lo1, lo2) <= np.minimum(hi1, hi2)):
                raise ConfigError("windows W1 and W2 overlap")
        edges = self.box.edges()
        counts = edges / self.h
        if np.max(np.abs(counts - np.round(counts))) > 1e-9:
            raise ConfigError("grid spacing h must divide all box edge lengths")


@dataclass
class Grid:
    """Cell-centered grid with region labels and node index maps."""

    geometry: ScenarioGeometry
    nodes: NDArray[np.float64]
    region: NDArray[np.int64]
    shape: tuple[int, ...]
    h: float
    vol: float
    index: dict[int, NDArray[np.int64]] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.geometry.n

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def idx(self, region: int) -> NDArray[np.int64]:
        return self.index[region]

    def counts(self) -> dict[str, int]:
        return {REGION_NAMES[k]: int(len(v)) for k, v in self.index.items()}

    def lattice_cell(self, pts: NDArray[np.float64]) -> NDArray[np.int64]:
        """Multi-index of the cell containing each point (ties toward lower index)."""
        lo = np.asarray(self.geometry.box.lo, dtype=float)
        raw = np.floor((np.atleast_2d(pts) - lo) / self.h).astype(np.int64)
        return np.clip(raw, 0, np.asarray(self.shape) - 1)

    def nearest_node(self, pts: NDArray[np.float64]) -> NDArray[np.int64]:
        """Flat index of the cell-center node nearest to each point.

        Tie-breaking is deterministic: a point equidistant between nodes maps
        to the lower lattice index (the cell whose half-open box contains it).
        """
        cells = self.lattice_cell(pts)
        strides = np.ones(self.n, dtype=np.int64)
        for k in range(self.n - 2, -1, -1):
            strides[k] = strides[k + 1] * self.shape[k + 1]
        return cells @ strides


def build_grid(geom: ScenarioGeometry) -> Grid:
    """Construct the labeled grid and verify the geometric invariants."""
    geom.validate()
    lo = np.asarray(geom.box.lo, dtype=float)
    hi = np.asarray(geom.box.hi, dtype=float)
    shape = tuple(int(round(e / geom.h)) for e in (hi - lo))
    axes = [lo[k] + (np.arange(shape[k]) + 0.5) * geom.h for k in range(geom.n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=1)

    region = np.full(len(nodes), FAR, dtype=np.int64)
    in_om = _region_contains(geom.omega, nodes)
    in_w1 = geom.w1.contains(nodes)
    in_w2 = geom.w2.contains(nodes)
    if np.any(in_w1 & in_w2):
        raise ConfigError("windows W1 and W2 overlap on grid nodes")
    if np.any(in_om & (in_w1 | in_w2)):
        raise ConfigError("Omega intersects a window on grid nodes")
    region[in_om] = OMEGA
    region[in_w1] = W1
    region[in_w2] = W2

    for code, name in ((OMEGA, "OMEGA"), (W1, "W1"), (W2, "W2")):
        if not np.any(region == code):
            raise ConfigError(f"region {name} is empty after discretization")

    norms = np.linalg.norm(nodes, axis=1)
    if np.any(norms[region == OMEGA] >= geom.r):
        raise ConfigError("an OMEGA cell center lies outside the ball of radius r")
    wmask = (region == W1) | (region == W2)
    if np.any(norms[wmask] < 3.0 * geom.r - 1e-12):
        raise ConfigError("a window cell center lies inside the ball of radius 3r")

    # Margin: every labeled cell must be at least one full cell away from the
    # box boundary.
    labeled = region != FAR
    if np.any(nodes[labeled] - geom.h / 2.0 < lo + geom.h - 1e-12) or np.any(
        nodes[labeled] + geom.h / 2.0 > hi - geom.h + 1e-12
    ):
        raise ConfigError("bounding box lacks a one-cell margin around labeled regions")

    grid = Grid(
        geometry=geom,
        nodes=nodes,
        region=region,
        shape=shape,
        h=geom.h,
        vol=geom.h**geom.n,
        index={code: np.where(region == code)[0] for code in (OMEGA, W1, W2, FAR)},
    )
    _check_midpoint_invariant(grid)
    return grid


def _check_midpoint_invariant(grid: Grid) -> None:
    """All Omega-window node pair midpoints must have norm >= r."""
    r = grid.geometry.r
    om = grid.nodes[grid.idx(OMEGA)]
    for w in (W1, W2):
        wn = grid.nodes[grid.idx(w)]
        mids = 0.5 * (om[:, None, :] + wn[None, :, :])
        if np.linalg.norm(mids, axis=-1).min() < r - 1e-12:
            raise ConfigError(
                "an Omega-window midpoint falls inside the ball of radius r"
            )


def support_mask(grid: Grid, pts_nonzero: NDArray[np.bool_]) -> NDArray[np.bool_]:
    """Normalize a per-node support indicator (boolean array over all nodes)."""
    mask = np.asarray(pts_nonzero, dtype=bool)
    if mask.shape != (grid.n_nodes,):
        raise ConfigError("support mask must be a per-node boolean array")
    return mask


def check_midpoint_condition(
    grid: Grid,
    supp_a1: NDArray[np.bool_],
    supp_a2: NDArray[np.bool_],
) -> tuple[int, int]:
    """Find a W2 x W1 node pair whose midpoint avoids both supports.

    Supports are per-node boolean masks. A midpoint "avoids" a support when it
    does not fall inside any support cell. Returns the lexicographically first
    witness pair ``(x_index in W2, y_index in W1)`` ordered by node index, or
    raises :class:`HypothesisViolation` when no such pair exists.
    """
    supp = support_mask(grid, np.asarray(supp_a1) | np.asarray(supp_a2))
    w2 = grid.idx(W2)
    w1 = grid.idx(W1)
    for xi in w2:
        mids = 0.5 * (grid.nodes[xi] + grid.nodes[w1])
        hit = supp[grid.nearest_node(mids)]
        # A midpoint exactly on a cell edge belongs to the lower cell; treat a
        # midpoint as avoiding the support only when its containing cell is
        # outside it.
        ok = ~hit
        if np.any(ok):
            return int(xi), int(w1[np.argmax(ok)])
    raise HypothesisViolation(
        "no W2 x W1 node pair has a midpoint avoiding the potential supports"
    )


def shrink_windows_to_witness(grid: Grid, witness: tuple[int, int], radius: float) -> tuple[
    NDArray[np.int64], NDArray[np.int64]
]:
    """Window node subsets within ``radius`` (sup-norm) of a witness pair.

    Returns ``(W2 subset, W1 subset)`` of node indices. The default shrink
    radius used by reports is one cell.
    """
    xi, yi = witness
    w2 = grid.idx(W2)
    w1 = grid.idx(W1)
    keep2 = np.max(np.abs(grid.nodes[w2] - grid.nodes[xi]), axis=1) <= radius + 1e-12
    keep1 = np.max(np.abs(grid.nodes[w1] - grid.nodes[yi]), axis=1) <= radius + 1e-12
    return w2[keep2], w1[keep1]
