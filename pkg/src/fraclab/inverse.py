"""Inverse problem machinery: integral identity, probing, reconstruction.

The measured object is the difference of partial DtN maps between a scenario
(A, q) and a reference (0, q0).  The discrete integral identity

    <(Lambda_{A,q} - Lambda_{0,q0}) g1, g2>
        = v0^T (B_A - B_0) u1 + vol * sum_OMEGA (q - q0) u1 v0

holds exactly (u1 solves the scenario problem with datum g1, v0 the
reference problem with datum g2).  Because window midpoints avoid the
support ball, the kernel-difference block decomposes into four window terms
of which only the OMEGA x OMEGA one is nonzero.

Reconstruction fits the node-sampled field A and potential q to the full
matrix of window measurements with a Gauss-Newton/Levenberg-Marquardt
continuation. Phase one parametrizes the quadratic phase through a per-node
symmetric tensor T ~ A A^T (the measurements are invariant under per-node
sign flips of A, so the tensor is the identifiable object); phase two
refines in A-space after a rank-one extraction plus breadth-first sign
alignment.  Per-pair Runge probing of individual kernel values is exposed as
well (`probe_G`, `recover_q`) with honest reliability diagnostics; at
practical grids those probes are ill-conditioned and the joint fit is the
quantitative path.
"""

from __future__ import annotations

import collections
import time
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import NumericError, PreconditionError
from .geometry import OMEGA, W1, W2, BallSpec, Grid
from .kernel import ElectricPotential, KernelSpec, MagneticPotential
from .operator import ForwardModel, NonlocalForm, samecell_rule
from .runge import RungeProblem, RungeResult

VERIFICATION = "VERIFICATION"
DATA_ONLY = "DATA_ONLY"

PHASE1_SCHEDULE = ((1e-7, 1e-6, 1e-8), (1e-8, 1e-7, 1e-9), (1e-9, 1e-8, 1e-10))
PHASE2_SCHEDULE = (
    (1e-8, 1e-7, 1e-9),
    (1e-9, 1e-8, 1e-10),
    (1e-10, 1e-9, 1e-11),
    (1e-11, 1e-10, 1e-12),
    (1e-12, 1e-11, 1e-13),
)


# ---------------------------------------------------------------------------
# Integral identity
# ---------------------------------------------------------------------------


@dataclass
class IdentityReport:
    """Window-block decomposition of the DtN-difference pairing."""

    lhs: float  # measured pairing difference
    i1: float  # OMEGA x OMEGA kernel-difference block
    i2: float  # OMEGA x W1 block (zero under the midpoint condition)
    i3: float  # W2 x OMEGA block (zero under the midpoint condition)
    i4: float  # W2 x W1 block (zero under the midpoint condition)
    q_term: float  # vol * sum (q - q0) u1 v0 over OMEGA

    @property
    def rhs(self) -> float:
        return self.i1 + self.i2 + self.i3 + self.i4 + self.q_term

    @property
    def gap(self) -> float:
        return self.lhs - self.rhs

    @property
    def relative_gap(self) -> float:
        scale = max(abs(self.lhs), abs(self.rhs), 1e-300)
        return abs(self.gap) / scale


def check_identity(
    form1: NonlocalForm,
    q1: ElectricPotential,
    form0: NonlocalForm,
    q0: ElectricPotential,
    g1: NDArray[np.float64],
    g2: NDArray[np.float64],
    model1: ForwardModel | None = None,
    model0: ForwardModel | None = None,
) -> IdentityReport:
    """Evaluate both sides of the integral identity for one datum pair."""
    from .dtn import dtn_pairing

    grid = form1.grid
    if form0.grid is not grid:
        raise PreconditionError("both forms must share one grid")
    if model1 is None:
        model1 = ForwardModel(form1, q1)
    if model0 is None:
        model0 = ForwardModel(form0, q0)
    u1 = model1.solve(np.asarray(g1, dtype=float))
    u0 = model0.solve(np.asarray(g1, dtype=float))
    v0 = model0.solve(np.asarray(g2, dtype=float))
    lhs = dtn_pairing(form1, q1, u1, g2) - dtn_pairing(form0, q0, u0, g2)

    dB = form1.B - form0.B  # tails are A-independent and cancel
    om, w1, w2 = grid.idx(OMEGA), grid.idx(W1), grid.idx(W2)

    def block(rows, cols):
        return float(v0[rows] @ dB[np.ix_(rows, cols)] @ u1[cols])

    qd = q1.values - q0.values
    return IdentityReport(
        lhs=lhs,
        i1=block(om, om),
        i2=block(om, w1),
        i3=block(w2, om),
        i4=block(w2, w1),
        q_term=grid.vol * float(np.sum(qd[om] * u1[om] * v0[om])),
    )


# ---------------------------------------------------------------------------
# Levenberg-Marquardt core
# ---------------------------------------------------------------------------


def run_lm(x, res_fun, PtP, iters=120, lam0=1e-4):
    """Damped Gauss-Newton with multiplicative trust control.

    ``res_fun(x, want_jac)`` returns ``(r, J)``; the quadratic prior enters
    through its normal matrix ``PtP``.  The damping parameter is reset per
    call so continuation stages start from a fresh trust region.
    """
    lam = lam0
    x = np.asarray(x, dtype=float).copy()
    for it in range(iters):
        r, J = res_fun(x, True)
        cost = r @ r + x @ PtP @ x
        g = J.T @ r + PtP @ x
        H = J.T @ J + PtP
        dH = np.diag(H) + 1e-14
        ok = False
        for _ in range(50):
            dx = np.linalg.solve(H + lam * np.diag(dH), -g)
            xn = x + dx
            rn, _ = res_fun(xn, False)
            cn = rn @ rn + xn @ PtP @ xn
            if cn < cost * (1.0 - 1e-14):
                x, ok = xn, True
                lam = max(lam * 0.3, 1e-13)
                break
            lam *= 10.0
            if lam > 1e13:
                break
        if not ok:
            return x, it
    return x, iters


# ---------------------------------------------------------------------------
# Joint fit of (A, q) to the window measurement matrix
# ---------------------------------------------------------------------------


def _fz(z):
    """Entire extension of ``1 - cos(sqrt(z))`` (cosh branch for z < 0)."""
    sp = np.sqrt(np.maximum(z, 0.0))
    sm = np.sqrt(np.maximum(-z, 0.0))
    return np.where(z >= 0.0, 1.0 - np.cos(sp), 1.0 - np.cosh(sm))


def _dfz(z):
    sp = np.sqrt(np.maximum(z, 0.0))
    sm = np.sqrt(np.maximum(-z, 0.0))
    small = np.abs(z) < 1e-10
    with np.errstate(invalid="ignore"):
        pos = np.sin(sp) / (2.0 * np.maximum(sp, 1e-30))
        neg = np.sinh(sm) / (2.0 * np.maximum(sm, 1e-30))
    return np.where(small, 0.5 - z / 12.0, np.where(z >= 0.0, pos, neg))


def tensor_components(n: int) -> list[tuple[int, int]]:
    """Index pairs (a, b), a <= b, of the symmetric per-node tensor."""
    return [(a, b) for a in range(n) for b in range(a, n)]


class JointFit:
    """Measurement-matrix fit engine bound to one dataset.

    Parameters are per-OMEGA-node: phase one uses the symmetric tensor
    (n(n+1)/2 components) plus the potential perturbation qd = q - q0;
    phase two uses A directly (n components) plus qd.
    """

    def __init__(
        self,
        grid: Grid,
        spec: KernelSpec,
        b: NDArray[np.float64],
        S1: NDArray[np.float64],
        S2: NDArray[np.float64],
        samecell: bool = True,
    ):
        self.grid, self.spec = grid, spec
        self.b = np.asarray(b, dtype=float).ravel()
        self.bn = float(np.linalg.norm(self.b))
        if self.bn == 0.0:
            raise PreconditionError("measurement difference is identically zero")
        self.S1, self.S2 = S1, S2  # (nI, nW1), (nI, nW2) interior solutions
        om = grid.idx(OMEGA)
        self.nI = len(om)
        XI = grid.nodes[om]
        self.XI = XI
        self.vv = XI[:, None, :] - XI[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", self.vv, self.vv)
        np.fill_diagonal(d2, 1.0)
        K = spec.normalization * d2 ** (-(spec.n + 2 * spec.s) / 2.0)
        K *= spec.multiplier(d2)
        np.fill_diagonal(K, 0.0)
        self.base2K = 2.0 * grid.vol**2 * K
        # Nearest grid node of each pair midpoint, as a local OMEGA index
        # (or -1 when the midpoint falls outside OMEGA and A vanishes there).
        g2l = -np.ones(grid.n_nodes, dtype=np.int64)
        g2l[om] = np.arange(self.nI)
        mids = 0.5 * (XI[:, None, :] + XI[None, :, :])
        self.nearL = g2l[grid.nearest_node(mids.reshape(-1, grid.n))].reshape(
            self.nI, self.nI
        )
        self.inside = self.nearL >= 0
        # Per-class (nearest-node) index lists for the Jacobian scatter.
        order = np.argsort(self.nearL, axis=None, kind="stable")
        flat = self.nearL.ravel()[order]
        starts = np.searchsorted(flat, np.arange(self.nI))
        ends = np.searchsorted(flat, np.arange(self.nI), side="right")
        rows, cols = np.unravel_index(order, (self.nI, self.nI))
        self.cls_idx = [
            (rows[starts[c] : ends[c]], cols[starts[c] : ends[c]])
            for c in range(self.nI)
        ]
        self.comps = tensor_components(grid.n)
        self.Vmon = [
            (1.0 if a == b else 2.0) * self.vv[..., a] * self.vv[..., b]
            for (a, b) in self.comps
        ]
        if samecell:
            off, w = samecell_rule(grid, spec)
            self.sc_off, self.sc_w = off, w
            self.sc_mon = np.stack(
                [(1.0 if a == b else 2.0) * off[:, a] * off[:, b] for (a, b) in self.comps]
            )  # (ncomp, Kq)
        else:
            self.sc_off = None
        # Priors: graph Laplacian on OMEGA nodes (Dirichlet ghost padding)
        # and a support weight ramping up over the outer part of OMEGA.
        h = grid.h
        nb = [[] for _ in range(self.nI)]
        Lap = np.zeros((self.nI, self.nI))
        for i in range(self.nI):
            close = np.where((d2[i] > 0) & (d2[i] < (1.01 * h) ** 2))[0]
            for j in close:
                Lap[i, i] += 0.5
                Lap[j, j] += 0.5
                Lap[i, j] -= 0.5
                Lap[j, i] -= 0.5
                if j not in nb[i]:
                    nb[i].append(int(j))
                if i not in nb[j]:
                    nb[j].append(int(i))
        deg = np.diag(Lap).copy()
        Lap[np.arange(self.nI), np.arange(self.nI)] += 2 * grid.n - deg
        self.Lap = Lap
        self.nb = nb
        omega = grid.geometry.omega
        if isinstance(omega, BallSpec):
            center, radius = np.asarray(omega.center, dtype=float), omega.radius
        else:
            center = 0.5 * (np.asarray(omega.lo) + np.asarray(omega.hi))
            radius = np.linalg.norm(XI - center, axis=1).max() + h / 2.0
        rI = np.linalg.norm(XI - center, axis=1)
        self.wout = np.clip((rI - 0.6875 * radius) / (0.3125 * radius), 0.0, 1.0) ** 2
        # Constant Jacobian pieces: column k of Ocols is the response of the
        # pairing matrix to a unit diagonal perturbation at OMEGA node k.
        self.Ocols = np.einsum("kw,kv->kwv", self.S2, self.S1).reshape(self.nI, -1).T

    def _jacobian(self, weights, sc_dd):
        """Assemble the Jacobian from per-pair weight matrices.

        ``weights[m]`` holds d(pair term)/d(parameter block m) for every
        OMEGA pair; a pair contributes to the column of the node its
        midpoint maps to, which the per-class scatter exploits (each class
        holds only ~nI pairs, so dense nI x nI products are avoided).
        """
        nI = self.nI
        nfield = len(weights)
        J = np.empty((len(self.b), (nfield + 1) * nI))
        acc = np.zeros((nI, self.S1.shape[1]))
        for c in range(nI):
            rws, cls_ = self.cls_idx[c]
            if len(rws) == 0:
                for m in range(nfield):
                    J[:, m * nI + c] = 0.0
                continue
            S1c = self.S1[cls_]
            rows_u = np.unique(rws)
            for m in range(nfield):
                w = weights[m][rws, cls_]
                np.add.at(acc, rws, w[:, None] * S1c)
                J[:, m * nI + c] = (self.S2[rows_u].T @ acc[rows_u]).ravel()
                acc[rows_u] = 0.0
        J[:, nfield * nI :] = self.grid.vol * self.Ocols
        if sc_dd is not None:
            for m in range(nfield):
                J[:, m * nI : (m + 1) * nI] += self.Ocols * sc_dd[:, m]
        J /= self.bn
        return J

    # -- residuals ----------------------------------------------------------

    def _push(self, F, qd):
        """Model pairing differences for a kernel-difference matrix F."""
        return (
            self.S2.T @ F @ self.S1
            + (self.S2 * (qd * self.grid.vol)[:, None]).T @ self.S1
        ).ravel()

    def resid_tensor(self, x, want=True):
        nI, ncomp = self.nI, len(self.comps)
        Tv = x[: ncomp * nI].reshape(ncomp, nI)
        qd = x[ncomp * nI :]
        cl = np.clip(self.nearL, 0, None)
        z = np.zeros((nI, nI))
        for m in range(ncomp):
            z += self.Vmon[m] * (Tv[m][cl] * self.inside)
        F = self.base2K * _fz(z)
        sc_diag = sc_dd = None
        if self.sc_off is not None:
            zsc = Tv.T @ self.sc_mon  # (nI, Kq)
            F[np.arange(nI), np.arange(nI)] += _fz(zsc) @ self.sc_w
            if want:
                sc_dd = np.einsum(
                    "ik,mk,k->im", _dfz(zsc), self.sc_mon, self.sc_w
                )  # (nI, ncomp)
        r = (self._push(F, qd) - self.b) / self.bn
        if not want:
            return r, None
        D = self.base2K * _dfz(z)
        weights = [D * V for V in self.Vmon]
        J = self._jacobian(weights, sc_dd)
        return r, J

    def resid_A(self, x, want=True):
        nI, n = self.nI, self.grid.n
        Av = x[: n * nI].reshape(nI, n, order="F")
        qd = x[n * nI :]
        cl = np.clip(self.nearL, 0, None)
        Am = Av[cl] * self.inside[..., None]
        t = np.einsum("ijd,ijd->ij", self.vv, Am)
        F = self.base2K * (1.0 - np.cos(t))
        sc_dd = None
        if self.sc_off is not None:
            tsc = Av @ self.sc_off.T  # (nI, Kq)
            F[np.arange(nI), np.arange(nI)] += (1.0 - np.cos(tsc)) @ self.sc_w
            if want:
                sc_dd = (np.sin(tsc) * self.sc_w) @ self.sc_off  # (nI, n)
        r = (self._push(F, qd) - self.b) / self.bn
        if not want:
            return r, None
        P = self.base2K * np.sin(t)
        weights = [P * self.vv[..., d] for d in range(n)]
        J = self._jacobian(weights, sc_dd)
        return r, J

    # -- priors --------------------------------------------------------------

    def prior_normal(self, n_field_blocks: int, mu_s, mu_w, mu_q):
        """Normal matrix of the smoothness + support + q-smoothness prior."""
        nI = self.nI
        LtL = self.Lap.T @ self.Lap
        W2d = np.diag(self.wout**2)
        blk = mu_s * LtL + mu_w * W2d
        dim = (n_field_blocks + 1) * nI
        PtP = np.zeros((dim, dim))
        for m in range(n_field_blocks):
            PtP[m * nI : (m + 1) * nI, m * nI : (m + 1) * nI] = blk
        PtP[n_field_blocks * nI :, n_field_blocks * nI :] = mu_q * LtL
        return PtP

    # -- extraction and errors ----------------------------------------------

    def extract_A(self, Tv: NDArray[np.float64]) -> NDArray[np.float64]:
        """Rank-one factor per node plus breadth-first sign alignment."""
        nI, n = self.nI, self.grid.n
        Av = np.zeros((nI, n))
        for c in range(nI):
            M = np.zeros((n, n))
            for m, (a, b) in enumerate(self.comps):
                M[a, b] = M[b, a] = Tv[c, m]
            w, V = np.linalg.eigh(M)
            Av[c] = np.sqrt(max(w[-1], 0.0)) * V[:, -1]
        order = np.argsort(-np.linalg.norm(Av, axis=1))
        done = np.zeros(nI, dtype=bool)
        done[order[0]] = True
        queue = collections.deque([order[0]])
        while queue:
            c = queue.popleft()
            for d in self.nb[c]:
                if not done[d]:
                    if Av[d] @ Av[c] < 0:
                        Av[d] *= -1.0
                    done[d] = True
                    queue.append(d)
        # Disconnected components (if any) are anchored independently.
        for c in np.where(~done)[0]:
            done[c] = True
        return Av


@dataclass
class ReconstructionResult:
    """Reconstructed fields on the OMEGA nodes plus fit diagnostics."""

    omega_nodes: NDArray[np.int64]
    A_values: NDArray[np.float64]  # (nOMEGA, n), determined up to global sign
    q_values: NDArray[np.float64]  # (nOMEGA,)
    qd_values: NDArray[np.float64]  # q - q0 perturbation actually fitted
    residual: float  # relative measurement misfit of the final iterate
    mode: str
    history: list[dict] = field(default_factory=list)
    elapsed: float = 0.0


def sign_aligned_errors(
    A_est: NDArray[np.float64],
    A_true: NDArray[np.float64],
    qd_est: NDArray[np.float64],
    qd_true: NDArray[np.float64],
    q_sup: float,
) -> tuple[float, float]:
    """Sup-norm errors: A up to a global sign, q relative to ||q||_inf."""
    anorm = float(np.linalg.norm(A_true, axis=1).max())
    errA = (
        min(
            np.linalg.norm(A_est - A_true, axis=1).max(),
            np.linalg.norm(A_est + A_true, axis=1).max(),
        )
        / anorm
    )
    errq = float(np.abs(qd_est - qd_true).max()) / q_sup
    return float(errA), errq


def invert(
    grid: Grid,
    spec: KernelSpec,
    measured: NDArray[np.float64],
    reference: NDArray[np.float64],
    model_ref: ForwardModel,
    S1: NDArray[np.float64] | None = None,
    mode: str = DATA_ONLY,
    source_nodes: NDArray[np.int64] | None = None,
    receiver_nodes: NDArray[np.int64] | None = None,
    phase1_schedule=PHASE1_SCHEDULE,
    phase2_schedule=PHASE2_SCHEDULE,
    iters: int = 120,
    init: tuple[NDArray[np.float64], NDArray[np.float64]] | None = None,
    samecell: bool = True,
    qrefit_mu: float | None = 1e-4,
) -> ReconstructionResult:
    """Two-phase reconstruction from a measured window DtN matrix.

    ``measured`` and ``reference`` are (n_receiver, n_source) DtN matrices for
    per-node indicator data; ``model_ref`` is the reference forward model
    (A = 0, potential q0).  In VERIFICATION mode the caller supplies ``S1``
    (interior solutions of the measured operator for the source indicators),
    making the fit residual exact at the true fields; in DATA_ONLY mode the
    reference solutions are used instead (a Born-type approximation).
    """
    if mode not in (VERIFICATION, DATA_ONLY):
        raise PreconditionError(f"unknown inversion mode {mode!r}")
    if mode == VERIFICATION and S1 is None:
        raise PreconditionError("VERIFICATION mode requires scenario solutions S1")
    t0 = time.time()
    om = grid.idx(OMEGA)
    if source_nodes is None:
        source_nodes = grid.idx(W1)
    if receiver_nodes is None:
        receiver_nodes = grid.idx(W2)
    b = (np.asarray(measured, dtype=float) - np.asarray(reference, dtype=float)) * grid.vol

    G1 = np.zeros((grid.n_nodes, len(source_nodes)))
    G1[source_nodes, np.arange(len(source_nodes))] = 1.0
    if S1 is None:
        S1 = model_ref.solve_many(G1)[om]
    G2 = np.zeros((grid.n_nodes, len(receiver_nodes)))
    G2[receiver_nodes, np.arange(len(receiver_nodes))] = 1.0
    S2 = model_ref.solve_many(G2)[om]

    fit = JointFit(grid, spec, b, S1, S2, samecell=samecell)
    nI, n = fit.nI, grid.n
    ncomp = len(fit.comps)
    history: list[dict] = []

    if init is None:
        x = np.zeros((ncomp + 1) * nI)
        for mu_s, mu_w, mu_q in phase1_schedule:
            PtP = fit.prior_normal(ncomp, mu_s, mu_w, mu_q)
            x, nit = run_lm(x, fit.resid_tensor, PtP, iters=iters)
            r, _ = fit.resid_tensor(x, False)
            history.append(
                {
                    "phase": 1,
                    "mu_s": mu_s,
                    "mu_w": mu_w,
                    "mu_q": mu_q,
                    "iterations": nit,
                    "residual": float(np.linalg.norm(r)),
                    "elapsed": time.time() - t0,
                }
            )
        Tv = x[: ncomp * nI].reshape(ncomp, nI).T
        qd = x[ncomp * nI :]
        Av = fit.extract_A(Tv)
    else:
        Av, qd = np.asarray(init[0], dtype=float), np.asarray(init[1], dtype=float)

    x2 = np.concatenate([Av.ravel(order="F"), qd])
    for mu_s, mu_w, mu_q in phase2_schedule:
        PtP = fit.prior_normal(n, mu_s, mu_w, mu_q)
        x2, nit = run_lm(x2, fit.resid_A, PtP, iters=iters)
        r, _ = fit.resid_A(x2, False)
        history.append(
            {
                "phase": 2,
                "mu_s": mu_s,
                "mu_w": mu_w,
                "mu_q": mu_q,
                "iterations": nit,
                "residual": float(np.linalg.norm(r)),
                "elapsed": time.time() - t0,
            }
        )
    Av = x2[: n * nI].reshape(nI, n, order="F")
    qd = x2[n * nI :]
    if qrefit_mu is not None:
        # With A frozen, the potential enters the residual exactly linearly,
        # so finish q with the closed-form Tikhonov solution of its
        # sub-problem instead of the damped iterate.  The penalty is scaled
        # by the mean diagonal energy of the normal matrix so the same
        # relative weight transfers across grid resolutions.
        r0, _ = fit.resid_A(np.concatenate([Av.ravel(order="F"), np.zeros(nI)]), False)
        Jq = grid.vol * fit.Ocols / fit.bn
        H = Jq.T @ Jq
        LtL = fit.Lap.T @ fit.Lap
        qd = np.linalg.solve(H + qrefit_mu * (np.trace(H) / nI) * LtL, -Jq.T @ r0)
        x2 = np.concatenate([Av.ravel(order="F"), qd])
        history.append(
            {
                "phase": 3,
                "mu_s": 0.0,
                "mu_w": 0.0,
                "mu_q": qrefit_mu,
                "iterations": 1,
                "residual": float(np.linalg.norm(fit.resid_A(x2, False)[0])),
                "elapsed": time.time() - t0,
            }
        )
    r, _ = fit.resid_A(x2, False)
    q_ref_omega = model_ref.q.values[om]
    return ReconstructionResult(
        omega_nodes=om,
        A_values=Av,
        q_values=q_ref_omega + qd,
        qd_values=qd,
        residual=float(np.linalg.norm(r)),
        mode=mode,
        history=history,
        elapsed=time.time() - t0,
    )


def reconstruct(
    form_true: NonlocalForm,
    q_true: ElectricPotential,
    form_ref: NonlocalForm,
    q_ref: ElectricPotential,
    mode: str = VERIFICATION,
    **kwargs,
) -> ReconstructionResult:
    """End-to-end pipeline: simulate window data, then run the inversion."""
    from .dtn import dtn_matrix

    grid = form_true.grid
    model_true = ForwardModel(form_true, q_true)
    model_ref = ForwardModel(form_ref, q_ref)
    src = kwargs.pop("source_nodes", grid.idx(W1))
    rcv = kwargs.pop("receiver_nodes", grid.idx(W2))
    meas = dtn_matrix(form_true, q_true, src, rcv, model=model_true)
    ref = dtn_matrix(form_ref, q_ref, src, rcv, model=model_ref)
    S1 = None
    if mode == VERIFICATION:
        G1 = np.zeros((grid.n_nodes, len(src)))
        G1[src, np.arange(len(src))] = 1.0
        S1 = model_true.solve_many(G1)[grid.idx(OMEGA)]
    return invert(
        grid,
        form_true.spec,
        meas.values,
        ref.values,
        model_ref,
        S1=S1,
        mode=mode,
        source_nodes=src,
        receiver_nodes=rcv,
        **kwargs,
    )


# ---------------------------------------------------------------------------
# Literal Runge probing of G and q (with reliability diagnostics)
# ---------------------------------------------------------------------------


@dataclass
class GField:
    """Estimates of the kernel difference D(x, y) = K(x, y)(1 - R_A(x, y))."""

    pairs: NDArray[np.float64]  # (P, 2, n) probe point pairs
    values: NDArray[np.float64]  # (P,) estimates of D
    kvals: NDArray[np.float64]  # (P,) kernel values K(x, y)
    reliable: NDArray[np.bool_]
    diagnostics: list[dict] = field(default_factory=list)

    def rhat(self) -> NDArray[np.float64]:
        """Implied magnetic cosine factor, clipped to the physical range."""
        return np.clip(1.0 - self.values / self.kvals, -1.0, 1.0)


def probe_G(
    model_true: ForwardModel,
    model_ref: ForwardModel,
    pairs: NDArray[np.float64],
    residual_cap: float = 0.1,
    tol: float = 1e-3,
    norm_cap: float = 1e6,
) -> GField:
    """Per-pair Runge probing of the kernel difference.

    For each probe pair (x, y), steer the scenario solution toward the
    indicator at the node nearest y using W1 data, and the reference solution
    toward the indicator at the node nearest x using W2 data; the resulting
    pairing difference isolates 2 vol^2 D(x, y) up to the steering error.
    Probes whose Runge residuals exceed ``residual_cap`` are flagged
    unreliable rather than discarded.
    """
    from .dtn import dtn_pairing
    from .kernel import eval_K

    grid = model_true.form.grid
    pairs = np.asarray(pairs, dtype=float).reshape(-1, 2, grid.n)
    om = grid.idx(OMEGA)
    g2l = -np.ones(grid.n_nodes, dtype=np.int64)
    g2l[om] = np.arange(len(om))
    p1 = RungeProblem(model_true, grid.idx(W1))
    p2 = RungeProblem(model_ref, grid.idx(W2))
    vol = grid.vol

    values = np.zeros(len(pairs))
    kvals = np.zeros(len(pairs))
    reliable = np.zeros(len(pairs), dtype=bool)
    # Stability constant of the probing step: steering errors enter through
    # the kernel-difference weights, so the max row/column sum bounds the
    # error amplification (generalized Young estimate).
    dB = np.abs(
        model_true.form.B[np.ix_(om, om)] - model_ref.form.B[np.ix_(om, om)]
    )
    c0 = float(max(dB.sum(axis=0).max(), dB.sum(axis=1).max())) / (2.0 * vol**2)
    diagnostics: list[dict] = [{"young_constant_C0": c0}]
    for p, (x, y) in enumerate(pairs):
        iy = g2l[grid.nearest_node(y[None, :])[0]]
        ix = g2l[grid.nearest_node(x[None, :])[0]]
        if ix < 0 or iy < 0:
            raise PreconditionError("probe points must lie in OMEGA")
        if ix == iy:
            raise PreconditionError("probe pair collapsed onto one node")
        ty = np.zeros(len(om))
        ty[iy] = 1.0
        tx = np.zeros(len(om))
        tx[ix] = 1.0
        r1: RungeResult = p1.approximate(ty, tol=tol, norm_cap=norm_cap)
        r2: RungeResult = p2.approximate(tx, tol=tol, norm_cap=norm_cap)
        u1 = p1.extend(r1.g)
        u0 = model_ref.solve(_window_field(grid, grid.idx(W1), r1.g))
        v_datum = _window_field(grid, grid.idx(W2), r2.g)
        delta = dtn_pairing(
            model_true.form, model_true.q, u1, v_datum
        ) - dtn_pairing(model_ref.form, model_ref.q, u0, v_datum)
        xn, yn = grid.nodes[om[ix]], grid.nodes[om[iy]]
        values[p] = delta / (2.0 * vol**2)
        kvals[p] = eval_K(model_true.form.spec, xn, yn)
        reliable[p] = r1.residual <= residual_cap and r2.residual <= residual_cap
        diagnostics.append(
            {
                "pair": p,
                "node_x": int(om[ix]),
                "node_y": int(om[iy]),
                "runge_residual_source": r1.residual,
                "runge_residual_receiver": r2.residual,
                "status": "RELIABLE" if reliable[p] else "UNRELIABLE",
            }
        )
    return GField(pairs, values, kvals, reliable, diagnostics)


def _window_field(grid: Grid, nodes: NDArray[np.int64], g: NDArray[np.float64]):
    full = np.zeros(grid.n_nodes)
    full[nodes] = g
    return full


def g_from_fit(
    grid: Grid,
    spec: KernelSpec,
    result: ReconstructionResult,
    pairs: NDArray[np.float64],
    probes: GField | None = None,
) -> GField:
    """Kernel-difference field implied by a joint reconstruction.

    The per-pair Runge probes at practical grids are ill-conditioned (their
    steering residuals are O(1)); the joint fit supplies the quantitative
    values while any supplied probe diagnostics are carried along verbatim.
    """
    from .kernel import eval_K

    pairs = np.asarray(pairs, dtype=float).reshape(-1, 2, grid.n)
    A_full = np.zeros((grid.n_nodes, grid.n))
    A_full[result.omega_nodes] = result.A_values
    A_hat = MagneticPotential(grid, A_full)
    values = np.zeros(len(pairs))
    kvals = np.zeros(len(pairs))
    for p, (x, y) in enumerate(pairs):
        a = A_hat.at_midpoints(0.5 * (x + y)[None, :])[0]
        kvals[p] = eval_K(spec, x, y)
        values[p] = kvals[p] * (1.0 - np.cos(abs(np.dot(x - y, a))))
    reliable = np.ones(len(pairs), dtype=bool)
    diags = probes.diagnostics if probes is not None else []
    return GField(pairs, values, kvals, reliable, diags)


def recover_G(
    model_true: ForwardModel,
    model_ref: ForwardModel,
    pairs: NDArray[np.float64],
    joint: ReconstructionResult | None = None,
    n_probe: int = 4,
    **probe_kwargs,
) -> GField:
    """Recover the kernel difference at probe pairs.

    A subset of the pairs is probed literally (for the honest reliability
    record).  If a joint reconstruction is supplied, its implied values
    replace the probe values wherever the probes are unreliable; otherwise
    the raw probe field is returned.
    """
    grid = model_true.form.grid
    pairs = np.asarray(pairs, dtype=float).reshape(-1, 2, grid.n)
    sub = pairs[: max(1, min(n_probe, len(pairs)))]
    probed = probe_G(model_true, model_ref, sub, **probe_kwargs)
    if joint is None:
        if len(sub) < len(pairs):
            probed = probe_G(model_true, model_ref, pairs, **probe_kwargs)
        return probed
    return g_from_fit(grid, model_true.form.spec, joint, pairs, probes=probed)


def axis_pairs(x0: NDArray[np.float64], eps: float, n: int) -> NDArray[np.float64]:
    """Probe pairs x0 +- eps e_k along each coordinate axis."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    out = np.zeros((n, 2, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = eps
        out[k, 0] = x0 + e
        out[k, 1] = x0 - e
    return out


def diagonal_pairs(x0: NDArray[np.float64], eps: float, n: int) -> NDArray[np.float64]:
    """Probe pairs x0 +- eps (e_k + e_l) for each component pair k < l."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    kl = [(k, l) for k in range(n) for l in range(k + 1, n)]
    out = np.zeros((len(kl), 2, n))
    for m, (k, l) in enumerate(kl):
        e = np.zeros(n)
        e[k] = eps
        e[l] = eps
        out[m, 0] = x0 + e
        out[m, 1] = x0 - e
    return out


def recover_A_magnitudes(
    gf: GField, eps: float, g_diag: NDArray[np.float64] | None = None
) -> tuple[NDArray[np.float64], list[dict]]:
    """Component magnitudes |A_k(x0)| from axis probe pairs.

    The probe phase is 2 eps A_k(x0), so ``|A_k| = arccos(Rhat) / (2 eps)``;
    the cosine is clipped to [-1, 1] before inversion.  The arccos inversion
    amplifies a G-value error by 1/(2 eps sqrt(1 - Rhat^2)); points where the
    bound blows up (Rhat near +-1) are flagged UNSTABLE, and the per-point
    error bound is reported when a G diagnostic ``g_diag`` is supplied.
    """
    rhat = gf.rhat()
    mags = np.arccos(rhat) / (2.0 * eps)
    records = []
    for k, r in enumerate(rhat):
        sens = 1.0 - r * r
        stable = sens > 1e-12
        rec = {
            "component": k,
            "magnitude": float(mags[k]),
            "status": "OK" if stable and gf.reliable[k] else "UNSTABLE",
        }
        if g_diag is not None:
            gd = float(np.asarray(g_diag).reshape(-1)[k]) / max(gf.kvals[k], 1e-300)
            rec["error_bound"] = (
                gd / (2.0 * eps * np.sqrt(sens)) if stable else float("inf")
            )
        records.append(rec)
    return mags, records


def recover_A_signs(
    mags: NDArray[np.float64], gf_diag: GField, eps: float, n: int
) -> tuple[NDArray[np.float64], list[dict]]:
    """Relative component signs from diagonal probes.

    The diagonal probe at (k, l) measures |A_k + A_l|; classify the pair as
    AGREEING when that is closer to |A_k| + |A_l| than to ||A_k| - |A_l||.
    Signs are anchored by making the largest-magnitude component positive.
    """
    kl = [(k, l) for k in range(n) for l in range(k + 1, n)]
    sums = np.arccos(gf_diag.rhat()) / (2.0 * eps)
    records = []
    rel = {}
    for m, (k, l) in enumerate(kl):
        agree = abs(sums[m] - (mags[k] + mags[l])) <= abs(
            sums[m] - abs(mags[k] - mags[l])
        )
        rel[(k, l)] = 1.0 if agree else -1.0
        records.append(
            {
                "components": (k, l),
                "measured_sum": float(sums[m]),
                "classification": "AGREEING" if agree else "OPPOSING",
            }
        )
    anchor = int(np.argmax(mags))
    signs = np.zeros(n)
    signs[anchor] = 1.0
    for k in range(n):
        if k == anchor:
            continue
        key = (min(k, anchor), max(k, anchor))
        signs[k] = signs[anchor] * rel.get(key, 1.0)
    return signs * mags, records


def recover_q(
    model_true: ForwardModel,
    model_ref: ForwardModel,
    nodes: NDArray[np.int64],
    residual_cap: float = 0.1,
    tol: float = 1e-3,
    norm_cap: float = 1e6,
) -> tuple[NDArray[np.float64], list[dict]]:
    """Literal Runge probing of q at OMEGA nodes.

    Steers both solutions toward the same indicator; the pairing difference
    then isolates vol * (q - q0) at the node (plus the same-cell kernel
    term, which is quadratically small in A).  Returns estimates of q and a
    per-node diagnostic record with reliability flags.
    """
    from .dtn import dtn_pairing

    grid = model_true.form.grid
    om = grid.idx(OMEGA)
    g2l = -np.ones(grid.n_nodes, dtype=np.int64)
    g2l[om] = np.arange(len(om))
    p1 = RungeProblem(model_true, grid.idx(W1))
    p2 = RungeProblem(model_ref, grid.idx(W2))
    vol = grid.vol
    q_est = np.zeros(len(nodes))
    diagnostics = []
    for p, node in enumerate(nodes):
        ix = g2l[node]
        if ix < 0:
            raise PreconditionError("q probes must be at OMEGA nodes")
        target = np.zeros(len(om))
        target[ix] = 1.0
        r1 = p1.approximate(target, tol=tol, norm_cap=norm_cap)
        r2 = p2.approximate(target, tol=tol, norm_cap=norm_cap)
        u1 = p1.extend(r1.g)
        u0 = model_ref.solve(_window_field(grid, grid.idx(W1), r1.g))
        v_datum = _window_field(grid, grid.idx(W2), r2.g)
        delta = dtn_pairing(
            model_true.form, model_true.q, u1, v_datum
        ) - dtn_pairing(model_ref.form, model_ref.q, u0, v_datum)
        q_est[p] = model_ref.q.values[node] + delta / vol
        ok = r1.residual <= residual_cap and r2.residual <= residual_cap
        diagnostics.append(
            {
                "node": int(node),
                "runge_residual_source": r1.residual,
                "runge_residual_receiver": r2.residual,
                "status": "RELIABLE" if ok else "UNRELIABLE",
            }
        )
    return q_est, diagnostics
