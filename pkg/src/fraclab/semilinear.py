"""Semilinear exterior problems and first-order linearization.

The semilinear problem replaces the electric term q u with a nonlinearity
a(x, u) satisfying a(x, 0) = 0 with linear coefficient a1(x) = d_z a(x, 0)
bounded below by a positive constant on OMEGA.  Solutions exist for small
exterior data; the solver is a damped Newton iteration with amplitude
continuation, raising ``SmallnessExceeded`` when even strongly reduced data
fails to converge.

First-order linearization: the rescaled semilinear DtN map
``Lambda_a(eps g) / eps`` converges to the linear DtN of (A, a1) as
eps -> 0, which funnels the semilinear inverse problem into the linear
reconstruction pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .errors import NumericError, PreconditionError, SmallnessExceeded
from .geometry import OMEGA, W1, W2, Grid
from .kernel import ElectricPotential
from .operator import ForwardModel, NonlocalForm


@dataclass
class Nonlinearity:
    """Per-node nonlinearity a(x, z) = a1(x) z + r(x, z).

    ``rest`` and ``rest_dz`` are vectorized callables (values, z) -> values
    for the higher-order part and its z-derivative; both default to zero.
    """

    grid: Grid
    a1: NDArray[np.float64]  # linear coefficient per node, positive on OMEGA
    rest: Callable | None = None
    rest_dz: Callable | None = None
    label: str = "linear"

    def __post_init__(self):
        self.a1 = np.asarray(self.a1, dtype=float).reshape(-1)
        if self.a1.shape != (self.grid.n_nodes,):
            raise PreconditionError("a1 must be a per-node array")
        om = self.grid.idx(OMEGA)
        if self.a1[om].min() <= 0.0:
            raise PreconditionError("linear coefficient a1 must be positive on OMEGA")
        if (self.rest is None) != (self.rest_dz is None):
            raise PreconditionError("rest and rest_dz must be given together")

    def eval_a(self, z: NDArray[np.float64]) -> NDArray[np.float64]:
        out = self.a1 * z
        if self.rest is not None:
            out = out + self.rest(z)
        return out

    def eval_dz_a(self, z: NDArray[np.float64]) -> NDArray[np.float64]:
        return self.a1 + (self.rest_dz(z) if self.rest_dz is not None else 0.0)

    def linear_part(self) -> ElectricPotential:
        return ElectricPotential(self.grid, self.a1)

    @classmethod
    def quadratic(
        cls, grid: Grid, a1: NDArray[np.float64], a2: NDArray[np.float64]
    ) -> "Nonlinearity":
        """Preset a(x, z) = a1(x) z + a2(x) z^2 (dominant second-order term)."""
        a2 = np.asarray(a2, dtype=float).reshape(-1)
        return cls(
            grid,
            a1,
            rest=lambda z: a2 * z**2,
            rest_dz=lambda z: 2.0 * a2 * z,
            label="quadratic",
        )

    @classmethod
    def cubic(
        cls, grid: Grid, a1: NDArray[np.float64], a3: NDArray[np.float64]
    ) -> "Nonlinearity":
        """Preset a(x, z) = a1(x) z + a3(x) z^3 (a3 supported anywhere)."""
        a3 = np.asarray(a3, dtype=float).reshape(-1)
        return cls(
            grid,
            a1,
            rest=lambda z: a3 * z**3,
            rest_dz=lambda z: 3.0 * a3 * z**2,
            label="cubic",
        )


def hs_norm(form: NonlocalForm, v: NDArray[np.float64]) -> float:
    """Discrete H^s proxy: L2 part plus the quadratic form energy."""
    vol = form.grid.vol
    return float(np.sqrt(vol * np.sum(v**2) + form.form_value(v, v)))


@dataclass
class SemilinearSolution:
    u: NDArray[np.float64]
    iterations: int
    residual: float
    continuation_levels: int  # halvings needed before full-amplitude Newton


def _newton(
    form: NonlocalForm,
    nonlin: Nonlinearity,
    g: NDArray[np.float64],
    u0_interior: NDArray[np.float64],
    tol: float,
    max_iter: int,
) -> tuple[NDArray[np.float64], int, float] | None:
    grid = form.grid
    om = grid.idx(OMEGA)
    vol = grid.vol
    u = np.asarray(g, dtype=float).copy()
    u[om] = 0.0
    B_II = form.B[np.ix_(om, om)]
    rhs_ext = form.B[om] @ u
    u[om] = u0_interior
    uo = u0_interior.copy()
    scale = max(float(np.linalg.norm(rhs_ext)), 1e-300)
    tail_I = form.tail[om]
    for it in range(max_iter):
        res = B_II @ uo + rhs_ext + vol * (tail_I * uo + nonlin.eval_a(u)[om])
        rnorm = float(np.linalg.norm(res))
        if not np.isfinite(rnorm):
            return None
        if rnorm <= tol * scale:
            u[om] = uo
            return u, it, rnorm / scale
        Jac = B_II.copy()
        Jac[np.diag_indices_from(Jac)] += vol * (tail_I + nonlin.eval_dz_a(u)[om])
        try:
            duo = np.linalg.solve(Jac, -res)
        except np.linalg.LinAlgError:
            return None
        uo = uo + duo
        u[om] = uo
    return None


def solve_semilinear(
    form: NonlocalForm,
    nonlin: Nonlinearity,
    g: NDArray[np.float64],
    tol: float = 1e-10,
    max_iter: int = 50,
    max_halvings: int = 6,
) -> SemilinearSolution:
    """Solve the semilinear exterior problem with amplitude continuation.

    Newton starts from the solution of the linear problem with q = a1.  On
    divergence the exterior datum is halved (up to ``max_halvings`` times)
    until Newton converges, then stepped back up with warm starts; failure at
    the smallest amplitude or during step-up raises ``SmallnessExceeded``.
    """
    g = np.asarray(g, dtype=float)
    grid = form.grid
    om = grid.idx(OMEGA)
    linear = ForwardModel(form, nonlin.linear_part())

    def attempt(scale_factor, u0):
        return _newton(form, nonlin, scale_factor * g, u0, tol, max_iter)

    u_lin = linear.solve(g)
    out = attempt(1.0, u_lin[om])
    if out is not None:
        u, its, res = out
        return SemilinearSolution(u, its, res, 0)

    for k in range(1, max_halvings + 1):
        lam = 2.0**-k
        out = attempt(lam, lam * u_lin[om])
        if out is not None:
            break
    else:
        raise SmallnessExceeded(
            "semilinear Newton diverged even after reducing the exterior datum "
            f"by 2^{max_halvings}; data violates the smallness regime"
        )
    levels = k
    while k > 0:
        k -= 1
        lam_next = 2.0**-k
        out_next = attempt(lam_next, out[0][om] * 2.0)
        if out_next is None:
            raise SmallnessExceeded(
                "semilinear amplitude continuation stalled while stepping the "
                f"datum back up at scale 2^-{k}; data violates the smallness regime"
            )
        out = out_next
    u, its, res = out
    return SemilinearSolution(u, its, res, levels)


def semilinear_dtn(
    form: NonlocalForm,
    nonlin: Nonlinearity,
    g: NDArray[np.float64],
    where: NDArray[np.int64],
    **solve_kwargs,
) -> NDArray[np.float64]:
    """Pointwise semilinear DtN values at the given receiver nodes."""
    sol = solve_semilinear(form, nonlin, g, **solve_kwargs)
    vol = form.grid.vol
    vals = form.B[where] @ sol.u
    vals += vol * (form.tail[where] * sol.u[where] + nonlin.eval_a(sol.u)[where])
    return vals / vol


@dataclass
class LinearizationRow:
    eps: float
    deviation: float  # relative gap between rescaled semilinear and linear DtN
    newton_iterations: int


def linearize(
    form: NonlocalForm,
    nonlin: Nonlinearity,
    g: NDArray[np.float64],
    eps_values: tuple[float, ...] = (0.5, 0.25, 0.125, 0.0625),
    where: NDArray[np.int64] | None = None,
    **solve_kwargs,
) -> list[LinearizationRow]:
    """First-order linearization table: d(eps) for a decreasing eps schedule.

    ``d(eps) = || Lambda_a(eps g)/eps - Lambda_lin g || / || Lambda_lin g ||``
    measured over the receiver nodes; for a smooth nonlinearity with cubic
    leading remainder the deviation scales like eps^2.
    """
    grid = form.grid
    if where is None:
        where = grid.idx(W2)
    from .dtn import dtn_pointwise

    linear = ForwardModel(form, nonlin.linear_part())
    u_lin = linear.solve(np.asarray(g, dtype=float))
    lam_lin = dtn_pointwise(form, nonlin.linear_part(), u_lin, where)
    denom = max(float(np.linalg.norm(lam_lin)), 1e-300)
    rows = []
    for eps in eps_values:
        sol = solve_semilinear(form, nonlin, eps * np.asarray(g, dtype=float), **solve_kwargs)
        vol = grid.vol
        vals = form.B[where] @ sol.u
        vals += vol * (form.tail[where] * sol.u[where] + nonlin.eval_a(sol.u)[where])
        lam_eps = vals / (vol * eps)
        rows.append(
            LinearizationRow(
                eps=eps,
                deviation=float(np.linalg.norm(lam_eps - lam_lin)) / denom,
                newton_iterations=sol.iterations,
            )
        )
    return rows


def linearized_dtn_matrix(
    form: NonlocalForm,
    nonlin: Nonlinearity,
    eps: float,
    source_nodes: NDArray[np.int64] | None = None,
    receiver_nodes: NDArray[np.int64] | None = None,
    **solve_kwargs,
) -> NDArray[np.float64]:
    """Column-by-column rescaled semilinear DtN matrix Lambda_a(eps g)/eps."""
    grid = form.grid
    if source_nodes is None:
        source_nodes = grid.idx(W1)
    if receiver_nodes is None:
        receiver_nodes = grid.idx(W2)
    cols = []
    for b in source_nodes:
        g = np.zeros(grid.n_nodes)
        g[b] = eps
        cols.append(
            semilinear_dtn(form, nonlin, g, receiver_nodes, **solve_kwargs) / eps
        )
    return np.stack(cols, axis=1)


def linearized_reconstruct(
    form_true: NonlocalForm,
    nonlin_true: Nonlinearity,
    form_ref: NonlocalForm,
    q_ref: ElectricPotential,
    eps: float,
    mode: str = "VERIFICATION",
    **invert_kwargs,
):
    """Reconstruct (A, a1) from rescaled semilinear window data.

    The linearized measurement matrix is fed to the linear inversion with
    the reference DtN matrix; in VERIFICATION mode the scenario interior
    solutions of the *linear* problem (A, a1) supply S1, so the remaining
    model error is the O(eps^2) linearization bias plus Newton noise.
    """
    from .dtn import dtn_matrix
    from .geometry import OMEGA
    from .inverse import VERIFICATION, invert

    grid = form_true.grid
    src = invert_kwargs.pop("source_nodes", grid.idx(W1))
    rcv = invert_kwargs.pop("receiver_nodes", grid.idx(W2))
    measured = linearized_dtn_matrix(form_true, nonlin_true, eps, src, rcv)
    model_ref = ForwardModel(form_ref, q_ref)
    reference = dtn_matrix(form_ref, q_ref, src, rcv, model=model_ref).values
    S1 = None
    if mode == VERIFICATION:
        linear_true = ForwardModel(form_true, nonlin_true.linear_part())
        G1 = np.zeros((grid.n_nodes, len(src)))
        G1[src, np.arange(len(src))] = 1.0
        S1 = linear_true.solve_many(G1)[grid.idx(OMEGA)]
    return invert(
        grid,
        form_true.spec,
        measured,
        reference,
        model_ref,
        S1=S1,
        mode=mode,
        source_nodes=src,
        receiver_nodes=rcv,
        **invert_kwargs,
    )
