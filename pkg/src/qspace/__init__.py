"""Numerical laboratory for composition operators on Q_alpha spaces.

Modules
-------
geometry     balls, cubes, dyadic grids, Whitney decomposition
fractal      covering numbers, Minkowski and self-similar dimensions, generators
qcmaps       radial / inversion / patched quasiconformal maps
muckenhoupt  local A_1 constant estimates
qnorm        Phi_alpha, Psi_{alpha,q}, Q_alpha and BMO seminorm estimates
harness      experiment drivers and the ``qspace`` CLI
"""

__version__ = "0.1.0"


class ParameterError(ValueError):
    """Raised for parameters outside an operation's admissible range."""


class PoleError(ValueError):
    """Raised when a map or field is evaluated at a singular point."""
