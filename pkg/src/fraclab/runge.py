"""Runge approximation: steering interior solutions with window data.

Given the exterior problem's solution operator S mapping densities g
supported in a window to the interior trace u_g|_OMEGA, approximate a target
interior field f by solving the Tikhonov problem

    min_g  || S g - f ||_{L2(OMEGA)}^2 + alpha || g ||_{L2(W)}^2

over a decreasing schedule of regularization weights.  Residuals decrease as
alpha decreases while the density norm grows; the sweep stops when the
requested tolerance is met or the density norm cap is exceeded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import NumericError, PreconditionError
from .geometry import OMEGA, W1, Grid
from .operator import ForwardModel

DEFAULT_ALPHAS = tuple(10.0**-k for k in range(2, 9))

STATUS_OK = "OK"
STATUS_NORM_CAP = "NORM_CAP"
STATUS_TOL_NOT_MET = "TOL_NOT_MET"


def solution_operator(
    model: ForwardModel, source_nodes: NDArray[np.int64] | None = None
) -> NDArray[np.float64]:
    """Interior solution operator: column b = u|_OMEGA for indicator datum b."""
    grid = model.form.grid
    if source_nodes is None:
        source_nodes = grid.idx(W1)
    G = np.zeros((grid.n_nodes, len(source_nodes)))
    G[source_nodes, np.arange(len(source_nodes))] = 1.0
    U = model.solve_many(G)
    return U[grid.idx(OMEGA)]


@dataclass
class RungeResult:
    """Outcome of a Runge sweep: density, diagnostics, and status."""

    g: NDArray[np.float64]  # density over the source-window nodes
    residual: float  # relative L2(OMEGA) misfit of the accepted density
    g_norm: float  # L2(W) norm of the accepted density
    alpha: float  # accepted regularization weight (0.0 for the lstsq fallback)
    status: str
    table: list[dict] = field(default_factory=list)  # one row per alpha tried

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


def runge_approximate(
    model: ForwardModel,
    target: NDArray[np.float64],
    source_nodes: NDArray[np.int64] | None = None,
    tol: float = 1e-3,
    alphas: tuple[float, ...] = DEFAULT_ALPHAS,
    norm_cap: float = 1e6,
    operator: NDArray[np.float64] | None = None,
) -> RungeResult:
    """Sweep the regularization schedule and return the best density found.

    ``target`` is the desired interior field sampled at OMEGA nodes.  The
    final schedule entry ``alpha = 0`` (least-squares fallback) is appended
    automatically; it is only accepted if it respects the norm cap.
    """
    grid = model.form.grid
    if source_nodes is None:
        source_nodes = grid.idx(W1)
    target = np.asarray(target, dtype=float).reshape(-1)
    omega = grid.idx(OMEGA)
    if target.shape != omega.shape:
        raise PreconditionError("target must be sampled at the OMEGA nodes")
    S = solution_operator(model, source_nodes) if operator is None else operator
    vol = grid.vol
    tnorm = float(np.sqrt(vol) * np.linalg.norm(target))
    if tnorm == 0.0:
        raise PreconditionError("Runge target must be nonzero")

    StS = S.T @ S
    Stf = S.T @ target
    eye = np.eye(S.shape[1])

    table: list[dict] = []
    best: tuple[float, float, float, NDArray[np.float64]] | None = None
    for alpha in tuple(alphas) + (0.0,):
        if alpha > 0.0:
            g = np.linalg.solve(StS + alpha * eye, Stf)
        else:
            g, *_ = np.linalg.lstsq(S, target, rcond=None)
        resid = float(
            np.sqrt(vol) * np.linalg.norm(S @ g - target) / tnorm
        )
        gnorm = float(np.sqrt(vol) * np.linalg.norm(g))
        if not np.isfinite(resid) or not np.isfinite(gnorm):
            raise NumericError("Runge sweep produced non-finite values")
        table.append({"alpha": alpha, "residual": resid, "g_norm": gnorm})
        if gnorm > norm_cap:
            break
        best = (resid, gnorm, alpha, g)
        if resid <= tol:
            return RungeResult(g, resid, gnorm, alpha, STATUS_OK, table)

    if best is None:
        g0 = np.zeros(len(source_nodes))
        return RungeResult(g0, 1.0, 0.0, float(alphas[0]), STATUS_NORM_CAP, table)
    resid, gnorm, alpha, g = best
    status = STATUS_NORM_CAP if table[-1]["g_norm"] > norm_cap else STATUS_TOL_NOT_MET
    return RungeResult(g, resid, gnorm, alpha, status, table)


@dataclass
class RungeProblem:
    """Convenience wrapper caching the solution operator for repeated targets."""

    model: ForwardModel
    source_nodes: NDArray[np.int64]
    operator: NDArray[np.float64] = field(init=False)

    def __post_init__(self):
        self.source_nodes = np.asarray(self.source_nodes, dtype=np.int64)
        self.operator = solution_operator(self.model, self.source_nodes)

    def approximate(self, target: NDArray[np.float64], **kwargs) -> RungeResult:
        return runge_approximate(
            self.model,
            target,
            self.source_nodes,
            operator=self.operator,
            **kwargs,
        )

    def extend(self, g: NDArray[np.float64]) -> NDArray[np.float64]:
        """Full-grid solution field for a window density."""
        grid = self.model.form.grid
        G = np.zeros(grid.n_nodes)
        G[self.source_nodes] = g
        return self.model.solve(G)
