"""Exterior partial Dirichlet-to-Neumann maps between disjoint windows.

For exterior data g supported in the source window the DtN measurement in the
receiver window is the nonlocal normal derivative of the solution, evaluated
pointwise at receiver nodes:

    (Lambda g)(w) = [(B + diag(vol * tail)) u]_w / vol
                  = -2 sum_{j != w} vol R_A(x_w, x_j) K(x_w, x_j) u_j

(the two expressions agree exactly when u vanishes at w, which holds for
zero-extended data with disjoint windows).  The duality pairing with a test
density supported in the receiver window is vol * sum_w (Lambda g)(w) g2(w);
the electric term contributes nothing because q is supported in OMEGA.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .errors import PreconditionError
from .geometry import W1, W2, Grid
from .kernel import ElectricPotential
from .operator import ForwardModel, NonlocalForm

FLOAT_FMT = "%.17g"


def dtn_pointwise(
    form: NonlocalForm,
    q: ElectricPotential,
    u: NDArray[np.float64],
    where: NDArray[np.int64],
) -> NDArray[np.float64]:
    """Pointwise DtN values of a solved field u at the given node indices."""
    vol = form.grid.vol
    vals = form.B[where] @ u
    vals += vol * (form.tail[where] + q.values[where]) * u[where]
    return vals / vol

def dtn_pairing(
    form: NonlocalForm,
    q: ElectricPotential,
    u: NDArray[np.float64],
    g2: NDArray[np.float64],
) -> float:
    """Duality pairing <Lambda g1, g2> = B_A[u_{g1}, g2~] + (q u, g2)."""
    vol = form.grid.vol
    return form.form_value(u, g2) + vol * float(np.sum(q.values * u * g2))


@dataclass
class DtnMatrix:
    """Partial DtN map in the per-node indicator basis of the source window."""

    values: NDArray[np.float64]  # (n_receiver, n_source)
    receiver_nodes: NDArray[np.int64]
    source_nodes: NDArray[np.int64]
    meta: dict = field(default_factory=dict)

    def save(self, path: str | Path) -> None:
        """Write values as CSV with a JSON sidecar describing the bases."""
        path = Path(path)
        np.savetxt(path, self.values, delimiter=",", fmt=FLOAT_FMT)
        sidecar = {
            "shape": list(self.values.shape),
            "receiver_nodes": [int(i) for i in self.receiver_nodes],
            "source_nodes": [int(i) for i in self.source_nodes],
            "basis": "per-node indicator of unit amplitude",
            "meta": self.meta,
        }
        path.with_suffix(path.suffix + ".json").write_text(
            json.dumps(sidecar, indent=2) + "\n"
        )

    @classmethod
    def load(cls, path: str | Path) -> "DtnMatrix":
        path = Path(path)
        values = np.atleast_2d(np.loadtxt(path, delimiter=","))
        sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        return cls(
            values=values,
            receiver_nodes=np.asarray(sidecar["receiver_nodes"], dtype=np.int64),
            source_nodes=np.asarray(sidecar["source_nodes"], dtype=np.int64),
            meta=sidecar.get("meta", {}),
        )


def dtn_matrix(
    form: NonlocalForm,
    q: ElectricPotential,
    source_nodes: NDArray[np.int64] | None = None,
    receiver_nodes: NDArray[np.int64] | None = None,
    model: ForwardModel | None = None,
) -> DtnMatrix:
    """Assemble the partial DtN matrix W1 -> W2 (or custom node sets).

    Column b holds the pointwise DtN values at the receiver nodes for the
    unit indicator datum at source node b.
    """
    grid = form.grid
    if source_nodes is None:
        source_nodes = grid.idx(W1)
    if receiver_nodes is None:
        receiver_nodes = grid.idx(W2)
    if np.intersect1d(source_nodes, receiver_nodes).size:
        raise PreconditionError("source and receiver windows must be disjoint")
    if model is None:
        model = ForwardModel(form, q)
    G = np.zeros((grid.n_nodes, len(source_nodes)))
    G[source_nodes, np.arange(len(source_nodes))] = 1.0
    U = model.solve_many(G)
    # u vanishes at receiver nodes (disjoint windows), so the diagonal,
    # tail, and electric self-terms drop out of the pointwise formula.
    vals = (form.B[receiver_nodes] @ U) / grid.vol
    return DtnMatrix(
        values=vals,
        receiver_nodes=np.asarray(receiver_nodes, dtype=np.int64),
        source_nodes=np.asarray(source_nodes, dtype=np.int64),
        meta={"h": grid.h, "n": grid.n, "s": form.spec.s},
    )
