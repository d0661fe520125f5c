"""Shared fixtures: canonical 2-D scenario and the 1-D smoke scenario.

Session-scoped assembly so the expensive canonical forms are built once.
"""
from types import SimpleNamespace

import numpy as np
import pytest

from fraclab.operator import ForwardModel, assemble_form
from fraclab.scenario import canonical, one_d_smoke


@pytest.fixture(scope="session")
def canon():
    sc = canonical()
    grid = sc.build_grid()
    spec = sc.kernel_spec()
    A = sc.magnetic_field(grid)
    q = sc.electric_field(grid)
    q0 = sc.reference_field(grid)
    form = assemble_form(grid, spec, A)
    form0 = assemble_form(grid, spec, None)
    return SimpleNamespace(
        scenario=sc,
        grid=grid,
        spec=spec,
        A=A,
        q=q,
        q0=q0,
        form=form,
        form0=form0,
        model=ForwardModel(form, q),
        model0=ForwardModel(form0, q0),
    )


@pytest.fixture(scope="session")
def smoke():
    sc = one_d_smoke()
    grid = sc.build_grid()
    spec = sc.kernel_spec()
    A = sc.magnetic_field(grid)
    q = sc.electric_field(grid)
    q0 = sc.reference_field(grid)
    form = assemble_form(grid, spec, A)
    form0 = assemble_form(grid, spec, None)
    return SimpleNamespace(
        scenario=sc,
        grid=grid,
        spec=spec,
        A=A,
        q=q,
        q0=q0,
        form=form,
        form0=form0,
        model=ForwardModel(form, q),
        model0=ForwardModel(form0, q0),
    )


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)
