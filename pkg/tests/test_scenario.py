from pathlib import Path

import numpy as np
import pytest

from fraclab.errors import ConfigError, HypothesisViolation
from fraclab.geometry import BallSpec
from fraclab.scenario import (
    bump,
    canonical,
    load_scenario,
    one_d_smoke,
    scenario_from_dict,
)

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def test_bump_support_and_smooth_peak():
    t = np.array([-1.5, -1.0, 0.0, 0.5, 1.0, 2.0])
    vals = bump(t)
    assert vals[0] == 0.0 and vals[1] == 0.0 and vals[4] == 0.0 and vals[5] == 0.0
    assert vals[2] == 1.0
    assert 0.0 < vals[3] < 1.0


def test_canonical_file_matches_factory():
    sc_file = load_scenario(SCENARIOS / "canonical.toml")
    sc = canonical()
    assert sc_file.geometry == sc.geometry
    grid = sc_file.build_grid()
    assert grid.counts() == sc.build_grid().counts()


def test_one_d_smoke_file_matches_factory():
    sc_file = load_scenario(SCENARIOS / "one_d_smoke.toml")
    sc = one_d_smoke()
    assert sc_file.geometry == sc.geometry


def test_hash_is_stable_and_sensitive():
    a = load_scenario(SCENARIOS / "canonical.toml")
    b = load_scenario(SCENARIOS / "canonical.toml")
    assert a.hash() == b.hash()
    assert len(a.hash()) == 16
    c = canonical(h=0.25)
    assert c.hash() != canonical().hash()


def test_missing_file_and_bad_toml_raise(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "nope.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("this is = not [ toml")
    with pytest.raises(ConfigError):
        load_scenario(bad)


def test_missing_required_key_raises():
    with pytest.raises(ConfigError):
        scenario_from_dict({"grid": {"n": 2}})


def test_unknown_presets_raise(canon):
    sc = canonical()
    sc.magnetic["preset"] = "mystery"
    with pytest.raises(ConfigError):
        sc.magnetic_field(canon.grid)
    sc2 = canonical()
    sc2.electric["preset"] = "mystery"
    with pytest.raises(ConfigError):
        sc2.electric_field(canon.grid)


def test_amplitude_over_bound_raises(canon):
    sc = canonical()
    sc.magnetic["amplitude"] = 1.0  # far above pi / (8 sqrt(2))
    with pytest.raises(HypothesisViolation):
        sc.magnetic_field(canon.grid)


def test_kernel_spec_carries_variant():
    sc = canonical()
    sc.kernel_variant = "PERTURBED"
    sc.kernel_beta = 0.25
    spec = sc.kernel_spec()
    assert spec.variant == "PERTURBED"
    assert spec.beta == 0.25


def test_omega_center_ball():
    sc = canonical()
    assert isinstance(sc.geometry.omega, BallSpec)
    assert np.array_equal(sc.omega_center(), [0.0, 0.0])


def test_build_nonlinearity_kinds(canon):
    sc = canonical()
    nl = sc.build_nonlinearity(canon.grid)
    assert nl.label == "cubic"
    sc.nonlinearity = {"kind": "linear"}
    assert sc.build_nonlinearity(canon.grid).label == "linear"
    sc.nonlinearity = {"kind": "quadratic", "a2": 0.7}
    assert sc.build_nonlinearity(canon.grid).label == "quadratic"
    sc.nonlinearity = {"kind": "exotic"}
    with pytest.raises(ConfigError):
        sc.build_nonlinearity(canon.grid)


def test_one_d_smoke_within_oracle_budget(smoke):
    assert smoke.grid.n_nodes <= 12


def test_constant_on_ball_magnetic_preset(canon):
    sc = canonical()
    sc.magnetic.update({"preset": "constant-on-ball", "amplitude": 0.1, "radius": 0.5})
    A = sc.magnetic_field(canon.grid)
    grid = canon.grid
    om = grid.idx(0)
    r = np.linalg.norm(grid.nodes[om], axis=1)
    inside = r < 0.5
    assert np.all(np.linalg.norm(A.values[om][inside], axis=1) > 0)
    assert np.all(A.values[om][~inside] == 0.0)
