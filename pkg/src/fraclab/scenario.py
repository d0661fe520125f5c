"""Scenario files: TOML schema, presets, and the canonical configuration.

One scenario file drives every CLI command; sections not needed by a command
are ignored.  Schema (TOML):

    name = "canonical"          # free-form label
    seed = 0                    # seed for any randomized point selection

    [grid]
    n = 2                       # dimension (1, 2, or 3)
    s = 0.5                     # fractional power in (0, 1)
    r = 1.0                     # support/window separation radius
    h = 0.125                   # grid spacing (must divide the box edges)

    [grid.omega]                # "ball" (center, radius) or "box" (lo, hi)
    kind = "ball"
    center = [0.0, 0.0]
    radius = 0.8

    [grid.w1]                   # source window box
    lo = [2.5, 1.75]
    hi = [4.0, 3.25]

    [grid.w2]                   # receiver window box
    lo = [2.5, -3.25]
    hi = [4.0, -1.75]

    [grid.box]                  # computational bounding box
    lo = [-1.125, -3.375]
    hi = [4.125, 3.375]

    [kernel]
    variant = "POWER"           # or "PERTURBED" with beta in (-1/2, 1/2)
    beta = 0.0

    [magnetic]                  # preset: constant-on-ball | smooth-bump | two-bump
    preset = "smooth-bump"
    amplitude = 0.25
    radius = 0.7
    direction = [1.0, 1.0]      # normalized internally

    [electric]                  # preset: constant | smooth-bump | two-bump
    preset = "smooth-bump"
    base = 1.0
    amplitude = 1.0
    radius = 0.7

    [reference]                 # reference model for DtN differences
    q = 1.0

    [nonlinearity]              # optional; used by the semilinear paths
    kind = "cubic"              # "linear" (K_max = 1) or "cubic"
    a3 = 0.5
    eps = 0.05                  # linearization amplitude

    [forward]                   # optional exterior datum for `forward`
    window = "W1"               # which window carries the datum
    value = 1.0                 # constant indicator amplitude

    [invert]                    # optional overrides for `invert`
    mode = "verification"       # or "data-only"
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError, HypothesisViolation
from .geometry import BallSpec, BoxSpec, Grid, ScenarioGeometry, build_grid
from .kernel import ElectricPotential, KernelSpec, MagneticPotential
from .semilinear import Nonlinearity


def bump(t: NDArray[np.float64]) -> NDArray[np.float64]:
    """Smooth compactly supported bump: exp(1 - 1/(1 - t^2)) on |t| < 1."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    m = np.abs(t) < 1.0
    out[m] = np.exp(1.0 - 1.0 / (1.0 - t[m] ** 2))
    return out


def _unit(direction, n: int) -> NDArray[np.float64]:
    d = np.asarray(direction, dtype=float).reshape(-1)
    if d.shape != (n,):
        raise ConfigError(f"direction must have {n} components")
    norm = np.linalg.norm(d)
    if norm == 0.0:
        raise ConfigError("direction must be nonzero")
    return d / norm


def magnetic_preset(params: dict, n: int, center=None):
    """Vectorized A(x) for a preset block (callable over point arrays)."""
    preset = params.get("preset", "smooth-bump")
    amp = float(params.get("amplitude", 0.25))
    rad = float(params.get("radius", 0.7))
    d = _unit(params.get("direction", [1.0] * n), n)
    c = np.asarray(params.get("center", center if center is not None else [0.0] * n))

    if preset == "constant-on-ball":

        def fn(pts):
            pts = np.atleast_2d(pts)
            inside = np.linalg.norm(pts - c, axis=1) < rad
            return amp * inside[:, None] * d

    elif preset == "smooth-bump":

        def fn(pts):
            pts = np.atleast_2d(pts)
            b = bump(np.linalg.norm(pts - c, axis=1) / rad)
            return amp * b[:, None] * d

    elif preset == "two-bump":
        off = np.asarray(params.get("offset", [rad / 2.0] + [0.0] * (n - 1)))

        def fn(pts):
            pts = np.atleast_2d(pts)
            b1 = bump(np.linalg.norm(pts - c - off, axis=1) / (rad / 2.0))
            b2 = bump(np.linalg.norm(pts - c + off, axis=1) / (rad / 2.0))
            return amp * (b1 + b2)[:, None] * d

    else:
        raise ConfigError(f"unknown magnetic preset {preset!r}")
    return fn


def electric_preset(params: dict, n: int, center=None):
    """Vectorized q(x) for a preset block."""
    preset = params.get("preset", "smooth-bump")
    base = float(params.get("base", 1.0))
    amp = float(params.get("amplitude", 1.0))
    rad = float(params.get("radius", 0.7))
    c = np.asarray(params.get("center", center if center is not None else [0.0] * n))

    if preset == "constant":

        def fn(pts):
            return np.full(len(np.atleast_2d(pts)), base)

    elif preset == "smooth-bump":

        def fn(pts):
            pts = np.atleast_2d(pts)
            return base + amp * bump(np.linalg.norm(pts - c, axis=1) / rad)

    elif preset == "two-bump":
        off = np.asarray(params.get("offset", [rad / 2.0] + [0.0] * (n - 1)))

        def fn(pts):
            pts = np.atleast_2d(pts)
            b1 = bump(np.linalg.norm(pts - c - off, axis=1) / (rad / 2.0))
            b2 = bump(np.linalg.norm(pts - c + off, axis=1) / (rad / 2.0))
            return base + amp * (b1 + b2)

    else:
        raise ConfigError(f"unknown electric preset {preset!r}")
    return fn


@dataclass
class Scenario:
    """Parsed scenario: geometry plus field/kernel/command parameter blocks."""

    name: str
    geometry: ScenarioGeometry
    kernel_variant: str = "POWER"
    kernel_beta: float = 0.0
    magnetic: dict = field(default_factory=dict)
    electric: dict = field(default_factory=dict)
    reference_q: float = 1.0
    nonlinearity: dict = field(default_factory=dict)
    forward: dict = field(default_factory=dict)
    invert: dict = field(default_factory=dict)
    runge: dict = field(default_factory=dict)
    seed: int = 0
    raw: dict = field(default_factory=dict)

    def build_grid(self) -> Grid:
        return build_grid(self.geometry)

    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(
            n=self.geometry.n,
            s=self.geometry.s,
            variant=self.kernel_variant,
            beta=self.kernel_beta,
        )

    def omega_center(self):
        om = self.geometry.omega
        if isinstance(om, BallSpec):
            return np.asarray(om.center, dtype=float)
        return 0.5 * (np.asarray(om.lo) + np.asarray(om.hi))

    def magnetic_field(self, grid: Grid) -> MagneticPotential:
        fn = magnetic_preset(self.magnetic, self.geometry.n, self.omega_center())
        A = MagneticPotential.from_callable(grid, fn)
        bound = np.pi / (8.0 * np.sqrt(self.geometry.n) * self.geometry.r)
        if A.comp_sup.max() > bound + 1e-12:
            raise HypothesisViolation(
                f"magnetic amplitude violates the smallness bound: "
                f"max component sup-norm {A.comp_sup.max():.6g} > {bound:.6g}"
            )
        return A

    def electric_field(self, grid: Grid) -> ElectricPotential:
        fn = electric_preset(self.electric, self.geometry.n, self.omega_center())
        q = ElectricPotential.from_callable(grid, fn)
        q.require_positive()
        return q

    def reference_field(self, grid: Grid) -> ElectricPotential:
        return ElectricPotential.constant(grid, self.reference_q)

    def build_nonlinearity(self, grid: Grid) -> Nonlinearity:
        kind = self.nonlinearity.get("kind", "linear")
        a1 = self.electric_field(grid).values
        if kind == "linear":
            return Nonlinearity(grid, a1)
        if kind == "quadratic":
            a2_amp = float(self.nonlinearity.get("a2", 0.5))
            return Nonlinearity.quadratic(grid, a1, np.full(grid.n_nodes, a2_amp))
        if kind == "cubic":
            a3_amp = float(self.nonlinearity.get("a3", 0.5))
            return Nonlinearity.cubic(grid, a1, np.full(grid.n_nodes, a3_amp))
        raise ConfigError(f"unknown nonlinearity kind {kind!r}")

    def hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _region_from_dict(block: dict, what: str):
    kind = block.get("kind", "box" if "lo" in block else "ball")
    if kind == "ball":
        return BallSpec(center=tuple(block["center"]), radius=float(block["radius"]))
    if kind == "box":
        return BoxSpec(lo=tuple(block["lo"]), hi=tuple(block["hi"]))
    raise ConfigError(f"{what}: unknown region kind {kind!r}")


def scenario_from_dict(data: dict, name: str = "unnamed") -> Scenario:
    try:
        g = data["grid"]
        geom = ScenarioGeometry(
            n=int(g["n"]),
            s=float(g["s"]),
            r=float(g["r"]),
            omega=_region_from_dict(g["omega"], "omega"),
            w1=BoxSpec(lo=tuple(g["w1"]["lo"]), hi=tuple(g["w1"]["hi"])),
            w2=BoxSpec(lo=tuple(g["w2"]["lo"]), hi=tuple(g["w2"]["hi"])),
            box=BoxSpec(lo=tuple(g["box"]["lo"]), hi=tuple(g["box"]["hi"])),
            h=float(g["h"]),
        )
    except KeyError as exc:
        raise ConfigError(f"scenario file is missing required key {exc}") from exc
    kernel = data.get("kernel", {})
    return Scenario(
        name=data.get("name", name),
        geometry=geom,
        kernel_variant=kernel.get("variant", "POWER"),
        kernel_beta=float(kernel.get("beta", 0.0)),
        magnetic=data.get("magnetic", {}),
        electric=data.get("electric", {}),
        reference_q=float(data.get("reference", {}).get("q", 1.0)),
        nonlinearity=data.get("nonlinearity", {}),
        forward=data.get("forward", {}),
        invert=data.get("invert", {}),
        runge=data.get("runge", {}),
        seed=int(data.get("seed", 0)),
        raw=data,
    )


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"scenario file not found: {path}")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"scenario file {path}: {exc}") from exc
    return scenario_from_dict(data, name=path.stem)


def canonical(h: float = 0.125) -> Scenario:
    """The frozen 2-D reference configuration used throughout the tests."""
    data = {
        "name": f"canonical-h{h:g}",
        "seed": 0,
        "grid": {
            "n": 2,
            "s": 0.5,
            "r": 1.0,
            "h": h,
            "omega": {"kind": "ball", "center": [0.0, 0.0], "radius": 0.8},
            "w1": {"lo": [2.5, 1.75], "hi": [4.0, 3.25]},
            "w2": {"lo": [2.5, -3.25], "hi": [4.0, -1.75]},
            "box": {"lo": [-1.125, -3.375], "hi": [4.125, 3.375]},
        },
        "kernel": {"variant": "POWER", "beta": 0.0},
        "magnetic": {
            "preset": "smooth-bump",
            "amplitude": 0.25,
            "radius": 0.7,
            "direction": [1.0, 1.0],
        },
        "electric": {
            "preset": "smooth-bump",
            "base": 1.0,
            "amplitude": 1.0,
            "radius": 0.7,
        },
        "reference": {"q": 1.0},
        "nonlinearity": {"kind": "cubic", "a3": 0.5, "eps": 0.05},
    }
    return scenario_from_dict(data)


def one_d_smoke(n_cells: int = 10) -> Scenario:
    """Tiny 1-D configuration (<= 12 nodes) for brute-force oracle checks."""
    h = 7.0 / n_cells
    data = {
        "name": "one-d-smoke",
        "seed": 0,
        "grid": {
            "n": 1,
            "s": 0.5,
            "r": 0.6,
            "h": h,
            "omega": {"kind": "ball", "center": [0.0], "radius": 0.5},
            "w1": {"lo": [2.1], "hi": [2.8]},
            "w2": {"lo": [-2.8], "hi": [-2.1]},
            "box": {"lo": [-3.5], "hi": [3.5]},
        },
        "kernel": {"variant": "POWER", "beta": 0.0},
        "magnetic": {
            "preset": "smooth-bump",
            "amplitude": 0.2,
            "radius": 0.45,
            "direction": [1.0],
        },
        "electric": {
            "preset": "smooth-bump",
            "base": 1.0,
            "amplitude": 1.0,
            "radius": 0.45,
        },
        "reference": {"q": 1.0},
        "nonlinearity": {"kind": "cubic", "a3": 0.5, "eps": 0.05},
    }
    return scenario_from_dict(data)
