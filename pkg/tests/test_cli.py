import json
from pathlib import Path

import numpy as np
import pytest

from fraclab.cli import main

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"
SMOKE = str(SCENARIOS / "one_d_smoke.toml")
CANONICAL = str(SCENARIOS / "canonical.toml")


def run(command, scenario, out, *extra):
    return main([command, "--scenario", scenario, "--out", str(out), *extra])


def test_forward_writes_solution_and_manifest(tmp_path):
    assert run("forward", SMOKE, tmp_path) == 0
    sol = np.loadtxt(tmp_path / "solution.csv", delimiter=",")
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "forward"
    assert str(tmp_path / "solution.csv") in manifest["outputs"]
    assert len(manifest["scenario_hash"]) == 16
    # Columns: x0, region, u; exterior datum (none configured) defaults to
    # the W1 indicator with value 1.
    region, u = sol[:, 1], sol[:, 2]
    assert np.all(u[region == 1] == 1.0)
    assert np.all(u[region == 3] == 0.0)


def test_forward_reruns_are_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("forward", SMOKE, a) == 0
    assert run("forward", SMOKE, b) == 0
    assert (a / "solution.csv").read_bytes() == (b / "solution.csv").read_bytes()


def test_dtn_outputs_and_sign_invariance(tmp_path):
    out_plus = tmp_path / "plus"
    assert run("dtn", SMOKE, out_plus) == 0
    for name in ("dtn.csv", "dtn.csv.json", "dtn_reference.csv", "manifest.json"):
        assert (out_plus / name).exists()
    # Flip the magnetic direction in a derived scenario: bitwise identical DtN.
    flipped = tmp_path / "flipped.toml"
    text = Path(SMOKE).read_text().replace("direction = [1.0]", "direction = [-1.0]")
    assert text != Path(SMOKE).read_text()
    flipped.write_text(text)
    out_minus = tmp_path / "minus"
    assert run("dtn", str(flipped), out_minus) == 0
    assert (out_plus / "dtn.csv").read_bytes() == (out_minus / "dtn.csv").read_bytes()


def test_identity_command_passes(tmp_path):
    # The 1-D smoke scenario has no admissible witness pair, so the identity
    # path runs on the canonical 2-D scenario.
    assert run("identity", CANONICAL, tmp_path) == 0
    summary = (tmp_path / "identity_summary.txt").read_text()
    assert "verdict          = PASS" in summary
    row = np.loadtxt(tmp_path / "identity.csv", delimiter=",")
    lhs, rhs = row[0], row[6]
    assert abs(lhs - rhs) <= 1e-2 * max(abs(lhs), abs(rhs))


def test_runge_command_writes_table(tmp_path):
    assert run("runge", SMOKE, tmp_path) == 0
    table = np.atleast_2d(np.loadtxt(tmp_path / "runge_table.csv", delimiter=","))
    assert table.shape[1] == 3
    resids = table[:, 1]
    assert np.all(np.diff(resids) < 0)  # strictly decreasing sweep


def test_invert_command_verification(tmp_path):
    assert run("invert", SMOKE, tmp_path, "--mode", "verification") == 0
    rows = np.atleast_2d(np.loadtxt(tmp_path / "reconstruction.csv", delimiter=","))
    # Columns: x0, A0, q for the 1-D scenario.
    assert rows.shape[1] == 3
    summary = (tmp_path / "reconstruction_summary.txt").read_text()
    assert "err_A" in summary and "err_q" in summary
    hist = np.atleast_2d(
        np.loadtxt(tmp_path / "reconstruction_history.csv", delimiter=",")
    )
    assert hist.shape[1] == 6


def test_linearize_command(tmp_path):
    assert run("linearize", SMOKE, tmp_path) == 0
    rows = np.atleast_2d(np.loadtxt(tmp_path / "linearize.csv", delimiter=","))
    devs = rows[:, 1]
    assert np.all(np.diff(devs) <= 1e-15)  # nonincreasing as eps decreases


def test_report_renders_figures(tmp_path):
    assert run("report", CANONICAL, tmp_path) == 0
    for fig in (
        "fig_regions.png",
        "fig_solution.png",
        "fig_q.png",
        "fig_A.png",
        "fig_dtn.png",
        "fig_runge.png",
    ):
        path = tmp_path / fig
        assert path.exists() and path.stat().st_size > 0
        assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    for table in ("solution.csv", "dtn.csv", "identity.csv", "runge_table.csv"):
        assert (tmp_path / table).exists()


def test_missing_scenario_exits_config_code(tmp_path):
    assert run("forward", str(tmp_path / "nope.toml"), tmp_path) == 2


def test_bad_toml_exits_config_code(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("grid = [")
    assert run("forward", str(bad), tmp_path) == 2


def test_hypothesis_violation_exit_code(tmp_path):
    hot = tmp_path / "hot.toml"
    hot.write_text(
        Path(SMOKE).read_text().replace("amplitude = 0.2", "amplitude = 5.0", 1)
    )
    assert run("forward", str(hot), tmp_path) == 5


def test_threads_flag_accepted(tmp_path):
    assert run("forward", SMOKE, tmp_path, "--threads", "1") == 0


def test_values_roundtrip_at_full_precision(tmp_path):
    assert run("dtn", SMOKE, tmp_path) == 0
    from fraclab.dtn import DtnMatrix, dtn_matrix
    from fraclab.scenario import load_scenario
    from fraclab.operator import assemble_form

    sc = load_scenario(SMOKE)
    grid = sc.build_grid()
    spec = sc.kernel_spec()
    form = assemble_form(grid, spec, sc.magnetic_field(grid))
    direct = dtn_matrix(form, sc.electric_field(grid))
    loaded = DtnMatrix.load(tmp_path / "dtn.csv")
    assert np.array_equal(loaded.values, direct.values)  # %.17g is lossless
