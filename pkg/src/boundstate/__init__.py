"""Bound states of Schrodinger and Dirac Coulomb problems via Green's-function eigenproblems."""
from .constants import ATOMIC_UNITS, PhysicalConstants, dirac_coulomb_ground_energy
from .errors import (BoundStateError, BreakdownError, CertificationError, ConfigError, GridMismatchError,
                     NewtonError, NotConvergedError, SpaceTagError)
from .fields import Grid, ScalarField, Space, SpinorField, load_field, resample, save_field, transform
from .kernels import GaussianSum, build_helmholtz_sum, build_power_sum, load_sum, save_sum
from .potential import Nucleus, PotentialSpec, assemble, hydrogen_like, make_negative_definite

__all__ = [
    "ATOMIC_UNITS", "PhysicalConstants", "dirac_coulomb_ground_energy",
    "BoundStateError", "BreakdownError", "CertificationError", "ConfigError", "GridMismatchError",
    "NewtonError", "NotConvergedError", "SpaceTagError",
    "Grid", "ScalarField", "Space", "SpinorField", "load_field", "resample", "save_field", "transform",
    "GaussianSum", "build_helmholtz_sum", "build_power_sum", "load_sum", "save_sum",
    "Nucleus", "PotentialSpec", "assemble", "hydrogen_like", "make_negative_definite",
]
__version__ = "0.1.0"
