"""Assembly of the nonlocal bilinear form and exterior Dirichlet solves.

Discretization: cell-centered collocation. For distinct nodes the double
integral over a cell pair is approximated by the midpoint rule, giving

    B_ij = -2 vol^2 R_A(x_i, x_j) K(x_i, x_j)          (i != j)
    B_ii =  2 vol^2 sum_{j != i} K(x_i, x_j) + samecell_i

where ``samecell_i = 2 vol * integral over the cell of
(1 - cos((x_i - y) . A(x_i))) K(x_i, y) dy`` (a convergent integral because
the integrand vanishes quadratically at the node; zero when A = 0).  The
contribution of the grid complement is the analytic tail integral, stored
separately as a per-node vector so callers can distinguish the truncation
term from the in-box coupling.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import roots_jacobi

from .errors import NumericError, PreconditionError
from .geometry import OMEGA, Grid
from .kernel import ElectricPotential, KernelSpec, MagneticPotential, tail_integral


@lru_cache(maxsize=16)
def _leggauss(m: int) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    return np.polynomial.legendre.leggauss(m)


def samecell_rule(
    grid: Grid, spec: KernelSpec, n_rad: int = 12, n_ang: int = 8
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Quadrature rule for the same-cell diagonal integral.

    Returns offsets ``v_k`` (points ``y - x_i`` inside the cell) and weights
    ``w_k`` such that ``samecell_i = sum_k w_k (1 - cos(v_k . A_i))``.  The
    kernel singularity is absorbed into a Gauss-Jacobi radial rule with
    weight ``rho^{1-2s}``; the remaining factor ``(1-cos)/rho^2`` is smooth.
    """
    n, s, h, vol = spec.n, spec.s, grid.h, grid.vol
    xj, wj = roots_jacobi(n_rad, 0.0, 1.0 - 2.0 * s)

    if n == 1:
        dirs = np.array([[1.0], [-1.0]])
        wdir = np.array([1.0, 1.0])
    elif n == 2:
        # Composite Gauss per octant segment (the polar radius has corner
        # kinks at multiples of pi/4); fold theta -> theta + pi by evenness.
        t, w = _leggauss(n_ang)
        thetas, wth = [], []
        for k in range(4):
            a, b2 = k * np.pi / 4.0, (k + 1) * np.pi / 4.0
            thetas.append(0.5 * (b2 - a) * t + 0.5 * (b2 + a))
            wth.append(0.5 * (b2 - a) * w * 2.0)
        th = np.concatenate(thetas)
        dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
        wdir = np.concatenate(wth)
    else:
        t, w = _leggauss(2 * n_ang)
        th = 0.5 * np.pi * (t + 1.0)  # polar angle in [0, pi]
        wt = 0.5 * np.pi * w
        t2, w2 = _leggauss(4 * n_ang)
        ph = np.pi * (t2 + 1.0)  # azimuth in [0, 2 pi]
        wp = np.pi * w2
        TH, PH = np.meshgrid(th, ph, indexing="ij")
        dirs = np.stack(
            [np.sin(TH) * np.cos(PH), np.sin(TH) * np.sin(PH), np.cos(TH)], axis=-1
        ).reshape(-1, 3)
        wdir = (np.outer(wt * np.sin(th), wp)).ravel()

    rho_max = (h / 2.0) / np.abs(dirs).max(axis=1)  # cell boundary per direction
    # rho = rho_max (1 + x)/2 maps the Jacobi rule onto [0, rho_max].
    rho = 0.5 * rho_max[:, None] * (1.0 + xj[None, :])
    wrad = (0.5 * rho_max[:, None]) ** (2.0 - 2.0 * s) * wj[None, :]
    mfac = spec.multiplier(rho**2)
    weights = (2.0 * vol * spec.normalization) * wdir[:, None] * wrad * mfac / rho**2
    offsets = rho[..., None] * dirs[:, None, :]
    return offsets.reshape(-1, n), weights.ravel()


def samecell_values(
    A: MagneticPotential,
    offsets: NDArray[np.float64],
    weights: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Per-node same-cell diagonal terms for a given magnetic field."""
    # abs before cos keeps the A -> -A invariance bitwise exact
    t = np.abs(A.values @ offsets.T)  # (N, K) phases |v_k . A_i|
    return (1.0 - np.cos(t)) @ weights


@dataclass
class NonlocalForm:
    """Assembled bilinear form: in-box matrix plus separate tail vector."""

    grid: Grid
    spec: KernelSpec
    A: MagneticPotential
    B: NDArray[np.float64]  # (N, N); same-cell term included on the diagonal
    tail: NDArray[np.float64]  # (N,) complement contribution per unit density
    samecell: NDArray[np.float64]  # (N,) diagonal same-cell terms

    def matrix(self) -> NDArray[np.float64]:
        """Full stiffness matrix including the tail on the diagonal."""
        M = self.B.copy()
        M[np.diag_indices_from(M)] += self.grid.vol * self.tail
        return M

    def form_value(self, u: NDArray[np.float64], v: NDArray[np.float64]) -> float:
        """Bilinear form B_A[u, v] for node vectors extended by zero."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        return float(u @ self.B @ v + self.grid.vol * np.sum(self.tail * u * v))


def _pair_weights(
    grid: Grid,
    spec: KernelSpec,
    A: MagneticPotential,
    xi: NDArray[np.float64],
    xj: NDArray[np.float64],
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Midpoint-rule kernel and cosine factors for stacked point pairs."""
    diff = xi - xj
    d2 = np.einsum("pk,pk->p", diff, diff)
    npow = -(spec.n + 2.0 * spec.s) / 2.0
    K = spec.normalization * d2**npow * spec.multiplier(d2)
    Am = A.values[grid.nearest_node(0.5 * (xi + xj))]
    R = np.cos(np.abs(np.einsum("pk,pk->p", diff, Am)))
    return K, R


def assemble_form(
    grid: Grid,
    spec: KernelSpec,
    A: MagneticPotential | None = None,
    block: int = 512,
    quad_order: int = 32,
    refine_adjacent: bool = False,
) -> NonlocalForm:
    """Assemble the discrete form; row-blockwise to bound peak memory.

    ``refine_adjacent`` replaces the midpoint rule on adjacent cell pairs
    (lattice offsets in {-1, 0, 1}^n) with a 2^n-subcell product rule; the
    paired diagonal compensation uses the same refined weights, preserving
    symmetry and positive semidefiniteness.
    """
    if spec.n != grid.n:
        raise PreconditionError("kernel and grid dimensions disagree")
    if A is None:
        A = MagneticPotential.zero(grid)
    N, vol = grid.n_nodes, grid.vol
    nodes = grid.nodes
    npow = -(spec.n + 2.0 * spec.s) / 2.0

    B = np.empty((N, N))
    for i0 in range(0, N, block):
        i1 = min(i0 + block, N)
        diff = nodes[i0:i1, None, :] - nodes[None, :, :]
        d2 = np.einsum("bjk,bjk->bj", diff, diff)
        ii = np.arange(i0, i1)
        d2[ii - i0, ii] = 1.0  # placeholder; diagonal overwritten below
        K = spec.normalization * d2**npow * spec.multiplier(d2)
        K[ii - i0, ii] = 0.0
        mids = 0.5 * (nodes[i0:i1, None, :] + nodes[None, :, :])
        Am = A.values[grid.nearest_node(mids.reshape(-1, grid.n))].reshape(
            i1 - i0, N, grid.n
        )
        phase = np.abs(np.einsum("bjk,bjk->bj", diff, Am))
        Bblk = (-2.0 * vol * vol) * np.cos(phase) * K
        Bblk[ii - i0, ii] = 2.0 * vol * vol * K.sum(axis=1)
        B[i0:i1] = Bblk

    if refine_adjacent:
        _refine_adjacent_pairs(B, grid, spec, A)

    sc = np.zeros(N)
    if A.sup_norm > 0.0:
        offsets, weights = samecell_rule(grid, spec)
        sc = samecell_values(A, offsets, weights)
        B[np.diag_indices_from(B)] += sc

    tail = np.array(
        [tail_integral(spec, x, grid.geometry.box, order=quad_order) for x in nodes]
    )
    return NonlocalForm(grid=grid, spec=spec, A=A, B=B, tail=tail, samecell=sc)


class ForwardModel:
    """Exterior Dirichlet solver with a cached interior factorization."""

    def __init__(self, form: NonlocalForm, q: ElectricPotential):
        q.require_positive()
        self.form = form
        self.q = q
        grid = form.grid
        self.interior = grid.idx(OMEGA)
        vol = grid.vol
        M = form.B[np.ix_(self.interior, self.interior)].copy()
        M[np.diag_indices_from(M)] += vol * (
            form.tail[self.interior] + q.values[self.interior]
        )
        self.interior_matrix = M
        try:
            self._factor = cho_factor(M)
        except LinAlgError as exc:
            raise NumericError(
                "interior stiffness matrix is not positive definite; "
                "the discrete exterior problem is ill-posed"
            ) from exc

    def solve(self, g: NDArray[np.float64]) -> NDArray[np.float64]:
        """Solve with exterior data g (per-node values; ignored on OMEGA)."""
        g = np.asarray(g, dtype=float)
        grid = self.form.grid
        u = g.copy()
        u[self.interior] = 0.0
        rhs = -(self.form.B[self.interior] @ u)
        u[self.interior] = cho_solve(self._factor, rhs)
        return u

    def solve_many(self, G: NDArray[np.float64]) -> NDArray[np.float64]:
        """Column-stacked exterior data -> column-stacked solutions."""
        G = np.asarray(G, dtype=float)
        U = G.copy()
        U[self.interior] = 0.0
        rhs = -(self.form.B[self.interior] @ U)
        U[self.interior] = cho_solve(self._factor, rhs)
        return U

    def residual(self, u: NDArray[np.float64]) -> NDArray[np.float64]:
        """Interior equation residual of a candidate solution."""
        vol = self.form.grid.vol
        full = self.form.B @ u
        full[self.interior] += vol * (
            (self.form.tail[self.interior] + self.q.values[self.interior])
            * u[self.interior]
        )
        return full[self.interior]


def _refine_adjacent_pairs(
    B: NDArray[np.float64], grid: Grid, spec: KernelSpec, A: MagneticPotential
) -> None:
    """Replace midpoint weights on adjacent cell pairs with 2^n-subcell sums."""
    import itertools

    n, h, vol = grid.n, grid.h, grid.vol
    shape = tuple(grid.shape)
    sub = np.stack(
        np.meshgrid(*([[-0.25 * h, 0.25 * h]] * n), indexing="ij"), axis=-1
    ).reshape(-1, n)
    svol = vol / len(sub)
    idx = np.arange(grid.n_nodes).reshape(shape)
    zero = (0,) * n
    for o in itertools.product((-1, 0, 1), repeat=n):
        if not o > zero:  # one representative per unordered pair
            continue
        src = idx[
            tuple(slice(max(-oo, 0), shape[d] - max(oo, 0)) for d, oo in enumerate(o))
        ].ravel()
        dst = idx[
            tuple(slice(max(oo, 0), shape[d] - max(-oo, 0)) for d, oo in enumerate(o))
        ].ravel()
        xi, xj = grid.nodes[src], grid.nodes[dst]
        w = np.zeros(len(src))
        rw = np.zeros(len(src))
        for a in sub:
            for c in sub:
                K, R = _pair_weights(grid, spec, A, xi + a, xj + c)
                w += svol * svol * K
                rw += svol * svol * R * K
        K_old, _ = _pair_weights(grid, spec, A, xi, xj)
        B[src, dst] = -2.0 * rw
        B[dst, src] = -2.0 * rw
        dd = 2.0 * (w - vol * vol * K_old)
        B[src, src] += dd
        B[dst, dst] += dd


def solve_exterior(
    form: NonlocalForm, q: ElectricPotential, g: NDArray[np.float64]
) -> NDArray[np.float64]:
    """One-shot exterior Dirichlet solve (builds and discards the factor)."""
    return ForwardModel(form, q).solve(g)
