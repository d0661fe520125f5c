"""Command-line interface: scenario-driven pipelines with manifested outputs.

Subcommands: forward, dtn, identity, runge, invert, linearize, report.
Every command reads one TOML scenario file (schema documented in
``fraclab.scenario``), writes CSV outputs with 17-significant-digit floats
plus a JSON run manifest, and exits with a stable code per failure class
(see ``fraclab.errors``).  The report command additionally renders
matplotlib figures next to the delimited output.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FraclabError, PreconditionError
from .geometry import OMEGA, REGION_NAMES, W1, W2, check_midpoint_condition
from .operator import ForwardModel, assemble_form

FLOAT_FMT = "%.17g"


@dataclass
class RunManifest:
    scenario_hash: str
    command: str
    tool_version: str
    tolerances: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def save(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _write_csv(path: Path, array, header: str) -> Path:
    np.savetxt(path, np.atleast_2d(array), delimiter=",", fmt=FLOAT_FMT, header=header)
    return path


class _Context:
    """Everything the commands share: scenario, grid, models, outputs."""

    def __init__(self, args):
        from .scenario import load_scenario

        self.scenario = load_scenario(args.scenario)
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.mode = args.mode
        self.manifest = RunManifest(
            scenario_hash=self.scenario.hash(),
            command=args.command,
            tool_version=__version__,
        )
        self._t0 = time.time()
        self.grid = self.scenario.build_grid()
        self.spec = self.scenario.kernel_spec()
        self.manifest.timings["grid"] = time.time() - self._t0

    def emit(self, path: Path):
        self.manifest.outputs.append(str(path))

    def finish(self) -> int:
        self.manifest.timings["total"] = time.time() - self._t0
        self.manifest.save(self.out)
        return 0

    # lazily assembled pieces -------------------------------------------------

    def forms(self):
        t = time.time()
        A = self.scenario.magnetic_field(self.grid)
        q = self.scenario.electric_field(self.grid)
        form = assemble_form(self.grid, self.spec, A)
        q0 = self.scenario.reference_field(self.grid)
        form0 = assemble_form(self.grid, self.spec)
        self.manifest.timings["assembly"] = time.time() - t
        return form, q, form0, q0

    def datum(self):
        """Exterior datum from the [forward] block (window indicator)."""
        win = {"W1": W1, "W2": W2}.get(self.scenario.forward.get("window", "W1"))
        if win is None:
            raise PreconditionError("forward.window must be 'W1' or 'W2'")
        value = float(self.scenario.forward.get("value", 1.0))
        g = np.zeros(self.grid.n_nodes)
        g[self.grid.idx(win)] = value
        return g


def cmd_forward(ctx: _Context) -> int:
    form, q, _, _ = ctx.forms()
    g = ctx.datum()
    if ctx.scenario.forward.get("semilinear", False):
        from .semilinear import solve_semilinear

        nonlin = ctx.scenario.build_nonlinearity(ctx.grid)
        u = solve_semilinear(form, nonlin, g).u
    else:
        u = ForwardModel(form, q).solve(g)
    rows = np.column_stack([ctx.grid.nodes, ctx.grid.region.astype(float), u])
    coords = ",".join(f"x{k}" for k in range(ctx.grid.n))
    ctx.emit(_write_csv(ctx.out / "solution.csv", rows, f"{coords},region,u"))
    return ctx.finish()


def cmd_dtn(ctx: _Context) -> int:
    from .dtn import dtn_matrix

    form, q, form0, q0 = ctx.forms()
    t = time.time()
    meas = dtn_matrix(form, q)
    ref = dtn_matrix(form0, q0)
    ctx.manifest.timings["dtn"] = time.time() - t
    meas.save(ctx.out / "dtn.csv")
    ref.save(ctx.out / "dtn_reference.csv")
    for name in ("dtn.csv", "dtn.csv.json", "dtn_reference.csv", "dtn_reference.csv.json"):
        ctx.emit(ctx.out / name)
    return ctx.finish()


def cmd_identity(ctx: _Context) -> int:
    from .inverse import check_identity

    form, q, form0, q0 = ctx.forms()
    g1 = np.zeros(ctx.grid.n_nodes)
    g1[ctx.grid.idx(W1)] = 1.0
    g2 = np.zeros(ctx.grid.n_nodes)
    g2[ctx.grid.idx(W2)] = 1.0
    rep = check_identity(form, q, form0, q0, g1, g2)
    rows = [[rep.lhs, rep.i1, rep.i2, rep.i3, rep.i4, rep.q_term, rep.rhs, rep.gap]]
    ctx.emit(
        _write_csv(
            ctx.out / "identity.csv", rows, "lhs,i1,i2,i3,i4,q_term,rhs,gap"
        )
    )
    ok = rep.relative_gap <= 1e-2 and rep.i2 == 0.0 and rep.i3 == 0.0
    summary = ctx.out / "identity_summary.txt"
    summary.write_text(
        "integral identity check\n"
        f"  lhs              = {_fmt(rep.lhs)}\n"
        f"  rhs              = {_fmt(rep.rhs)}\n"
        f"  relative gap     = {_fmt(rep.relative_gap)}\n"
        f"  I2 (OMEGA x W1)  = {_fmt(rep.i2)}\n"
        f"  I3 (W2 x OMEGA)  = {_fmt(rep.i3)}\n"
        f"  verdict          = {'PASS' if ok else 'FAIL'}\n"
    )
    ctx.emit(summary)
    witness = check_midpoint_condition(
        ctx.grid,
        np.linalg.norm(form.A.values, axis=1) > 0,
        np.linalg.norm(form.A.values, axis=1) > 0,
    )
    ctx.manifest.tolerances["identity_relative_gap"] = 1e-2
    ctx.manifest.tolerances["witness_pair"] = [int(witness[0]), int(witness[1])]
    return ctx.finish()


def cmd_runge(ctx: _Context) -> int:
    from .runge import runge_approximate

    form, q, form0, q0 = ctx.forms()
    model = ForwardModel(form, q)
    om = ctx.grid.idx(OMEGA)
    center = ctx.scenario.omega_center()
    node = int(np.argmin(np.linalg.norm(ctx.grid.nodes[om] - center, axis=1)))
    target = np.zeros(len(om))
    target[node] = 1.0
    tol = float(ctx.scenario.runge.get("tol", 1e-3))
    result = runge_approximate(model, target, tol=tol)
    rows = [[row["alpha"], row["residual"], row["g_norm"]] for row in result.table]
    ctx.emit(_write_csv(ctx.out / "runge_table.csv", rows, "alpha,residual,g_norm"))
    ctx.emit(
        _write_csv(ctx.out / "runge_density.csv", result.g, "density over W1 nodes")
    )
    ctx.manifest.tolerances["runge_tol"] = tol
    ctx.manifest.tolerances["runge_status"] = result.status
    return ctx.finish()


def cmd_invert(ctx: _Context) -> int:
    from .inverse import DATA_ONLY, VERIFICATION, reconstruct, sign_aligned_errors

    form, q, form0, q0 = ctx.forms()
    mode = VERIFICATION if ctx.mode == "verification" else DATA_ONLY
    t = time.time()
    result = reconstruct(form, q, form0, q0, mode=mode)
    ctx.manifest.timings["reconstruction"] = time.time() - t
    om = result.omega_nodes
    rows = np.column_stack(
        [ctx.grid.nodes[om], result.A_values, result.q_values[:, None]]
    )
    coords = ",".join(f"x{k}" for k in range(ctx.grid.n))
    comps = ",".join(f"A{k}" for k in range(ctx.grid.n))
    ctx.emit(
        _write_csv(ctx.out / "reconstruction.csv", rows, f"{coords},{comps},q")
    )
    hist = [
        [s["phase"], s["mu_s"], s["mu_w"], s["mu_q"], s["iterations"], s["residual"]]
        for s in result.history
    ]
    ctx.emit(
        _write_csv(
            ctx.out / "reconstruction_history.csv",
            hist,
            "phase,mu_s,mu_w,mu_q,iterations,residual",
        )
    )
    summary_lines = [
        "reconstruction summary",
        f"  mode      = {result.mode}",
        f"  residual  = {_fmt(result.residual)}",
        f"  elapsed_s = {_fmt(result.elapsed)}",
    ]
    if mode == VERIFICATION:
        A_true = form.A.values[om]
        errA, errq = sign_aligned_errors(
            result.A_values,
            A_true,
            result.qd_values,
            q.values[om] - q0.values[om],
            float(np.abs(q.values[om]).max()),
        )
        summary_lines += [
            f"  err_A (min over sign, sup, relative) = {_fmt(errA)}",
            f"  err_q (sup, relative)                = {_fmt(errq)}",
        ]
    summary = ctx.out / "reconstruction_summary.txt"
    summary.write_text("\n".join(summary_lines) + "\n")
    ctx.emit(summary)
    return ctx.finish()


def cmd_linearize(ctx: _Context) -> int:
    from .semilinear import linearize

    form, q, form0, q0 = ctx.forms()
    nonlin = ctx.scenario.build_nonlinearity(ctx.grid)
    g = ctx.datum()
    rows = linearize(form, nonlin, g)
    ctx.emit(
        _write_csv(
            ctx.out / "linearize.csv",
            [[r.eps, r.deviation, float(r.newton_iterations)] for r in rows],
            "eps,deviation,newton_iterations",
        )
    )
    return ctx.finish()


def cmd_report(ctx: _Context) -> int:
    """Compact end-to-end report: CSV tables plus rendered figures."""
    from . import report as rpt
    from .dtn import dtn_matrix
    from .inverse import check_identity
    from .runge import runge_approximate

    form, q, form0, q0 = ctx.forms()
    model = ForwardModel(form, q)
    g = ctx.datum()
    u = model.solve(g)

    rows = np.column_stack([ctx.grid.nodes, ctx.grid.region.astype(float), u])
    coords = ",".join(f"x{k}" for k in range(ctx.grid.n))
    ctx.emit(_write_csv(ctx.out / "solution.csv", rows, f"{coords},region,u"))

    meas = dtn_matrix(form, q, model=model)
    meas.save(ctx.out / "dtn.csv")
    ctx.emit(ctx.out / "dtn.csv")
    ctx.emit(ctx.out / "dtn.csv.json")

    g1 = np.zeros(ctx.grid.n_nodes)
    g1[ctx.grid.idx(W1)] = 1.0
    g2 = np.zeros(ctx.grid.n_nodes)
    g2[ctx.grid.idx(W2)] = 1.0
    rep = check_identity(form, q, form0, q0, g1, g2, model1=model)
    ctx.emit(
        _write_csv(
            ctx.out / "identity.csv",
            [[rep.lhs, rep.i1, rep.i2, rep.i3, rep.i4, rep.q_term, rep.rhs, rep.gap]],
            "lhs,i1,i2,i3,i4,q_term,rhs,gap",
        )
    )

    om = ctx.grid.idx(OMEGA)
    target = np.zeros(len(om))
    target[int(np.argmin(np.linalg.norm(ctx.grid.nodes[om] - ctx.scenario.omega_center(), axis=1)))] = 1.0
    runge = runge_approximate(model, target, tol=float(ctx.scenario.runge.get("tol", 1e-3)))
    ctx.emit(
        _write_csv(
            ctx.out / "runge_table.csv",
            [[row["alpha"], row["residual"], row["g_norm"]] for row in runge.table],
            "alpha,residual,g_norm",
        )
    )

    ctx.emit(rpt.plot_regions(ctx.grid, ctx.out / "fig_regions.png"))
    ctx.emit(rpt.plot_scalar(ctx.grid, u, ctx.out / "fig_solution.png", "forward solution"))
    ctx.emit(rpt.plot_scalar(ctx.grid, q.values, ctx.out / "fig_q.png", "electric potential q"))
    ctx.emit(
        rpt.plot_vector(
            ctx.grid, om, form.A.values[om], ctx.out / "fig_A.png", "magnetic potential A"
        )
    )
    ctx.emit(rpt.plot_matrix(meas.values, ctx.out / "fig_dtn.png", "partial DtN matrix"))
    ctx.emit(
        rpt.plot_runge_table(runge.table, ctx.out / "fig_runge.png", "Runge sweep")
    )
    return ctx.finish()


_COMMANDS = {
    "forward": cmd_forward,
    "dtn": cmd_dtn,
    "identity": cmd_identity,
    "runge": cmd_runge,
    "invert": cmd_invert,
    "linearize": cmd_linearize,
    "report": cmd_report,
}


def _apply_threads(n: int | None) -> None:
    if n is None:
        return
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ[var] = str(n)
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(n)
    except ImportError:
        pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fraclab",
        description="Numerical laboratory for nonlocal magnetic operators",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--scenario", required=True, help="scenario TOML file")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--threads", type=int, default=None, help="thread cap")
    parser.add_argument(
        "--mode",
        choices=["verification", "data-only"],
        default="verification",
        help="inversion mode",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _apply_threads(args.threads)
    try:
        ctx = _Context(args)
        return _COMMANDS[args.command](ctx)
    except FraclabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
