"""fraclab: a numerical laboratory for nonlocal magnetic Schrodinger operators.

Modules
-------
geometry    grids, regions, and geometric hypothesis checks
kernel      singular kernels, potentials, analytic tail integrals
operator    bilinear-form assembly and exterior Dirichlet solves
dtn         partial Dirichlet-to-Neumann maps between windows
runge       regularized Runge approximation
inverse     integral identity, probing, and field reconstruction
semilinear  semilinear solves and first-order linearization
scenario    TOML scenario files and presets
report      matplotlib figure rendering
cli         command-line entry point
"""

__version__ = "1.0.0"
