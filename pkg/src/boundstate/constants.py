from dataclasses import dataclass
import math


@dataclass(frozen=True)
class PhysicalConstants:
    """Atomic-unit constants used by the relativistic solver."""

    hbar: float = 1.0
    m: float = 1.0
    c: float = 137.035999084

    def __post_init__(self):
        if not (self.c > 0 and self.hbar > 0 and self.m > 0):
            raise ValueError("physical constants must be positive")

    @property
    def rest_energy(self) -> float:
        return self.m * self.c**2

    @property
    def hbar_c(self) -> float:
        return self.hbar * self.c


ATOMIC_UNITS = PhysicalConstants()


def gamma_z(Z: float, c: float = ATOMIC_UNITS.c) -> float:
    """Exponent sqrt(1 - (Z/c)^2) of the point-nucleus Dirac singularity."""
    if not (0 < Z < c):
        raise ValueError(f"need 0 < Z < c, got Z={Z}")
    return math.sqrt(1.0 - (Z / c) ** 2)


def dirac_coulomb_ground_energy(Z: float, constants: PhysicalConstants = ATOMIC_UNITS) -> float:
    """Exact 1s1/2 energy of a point nucleus, with the rest energy subtracted."""
    g = gamma_z(Z, constants.c)
    # mc^2 (g - 1) written without cancellation
    return -constants.rest_energy * (Z / constants.c) ** 2 / (1.0 + g)
