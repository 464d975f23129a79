"""Relativistic auxiliary eigenproblem on 4-spinors.

    lambda(kappa) psi = -(1/(hbar c)^2) (H0 + E(kappa)) G(kappa) V psi,
    kappa = sqrt(m^2 c^4 - E^2) / (c hbar).

H0 = c alpha.p + beta m c^2 is applied per momentum node.  The p-linear
couplings use momenta with the Nyquist plane set to zero; the Green's symbol
uses the same momenta so that (H0^2 - E^2) G = (hbar c)^2 holds node by node
and the grid operator commutes with parity exactly.

Energies reported to users have the rest energy m c^2 subtracted.  Internally
the binding m c^2 - E is always formed as (hbar c kappa)^2 / (m c^2 + E) to
avoid cancellation.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
import math
import warnings

import numpy as np
import scipy.fft as sfft

from .constants import ATOMIC_UNITS, PhysicalConstants
from .errors import BreakdownError, GridMismatchError, NewtonError, NotConvergedError, SpaceTagError
from .fields import (SLAB, Grid, ScalarField, Space, SpinorField, bandlimited_gaussian,
                     normalize, sq_norm, vdot)
from .schrodinger import IterationRecord

DEFAULT_TOL = 1e-8
DEFAULT_TOL_LAMBDA = 1e-8
MAX_NEWTON = 50
BREAKDOWN_NORM = 1e-14
SINGULAR_DENOM = 1e-12


# --- kappa / energy conversions -------------------------------------------

def kappa_from_E(E: float, tau: float = 0.0, constants: PhysicalConstants = ATOMIC_UNITS) -> float:
    """kappa for the (unshifted, rest-energy-included) energy E with potential shift tau."""
    mc2 = constants.rest_energy
    e = E - tau
    if not e < mc2:
        raise ValueError(f"E - tau = {e!r} is not below m c^2 = {mc2!r}; not a bound-state energy")
    if not e > -mc2:
        raise ValueError(f"E - tau = {e!r} is below -m c^2")
    binding = mc2 - e
    return math.sqrt(binding * (mc2 + e)) / constants.hbar_c


def kappa_from_shifted(E_shifted: float, tau: float = 0.0,
                       constants: PhysicalConstants = ATOMIC_UNITS) -> float:
    """kappa for an energy quoted with m c^2 subtracted (e.g. -0.5 for hydrogen)."""
    mc2 = constants.rest_energy
    binding = tau - E_shifted
    if not binding > 0:
        raise ValueError(f"shifted energy {E_shifted!r} (tau={tau}) is not a bound-state energy")
    return math.sqrt(binding * (2.0 * mc2 - binding)) / constants.hbar_c


def E_from_kappa(kappa: float, constants: PhysicalConstants = ATOMIC_UNITS) -> float:
    kmax = constants.m * constants.c / constants.hbar
    if not (0 <= kappa <= kmax):
        raise ValueError(f"kappa must lie in [0, m c / hbar] = [0, {kmax}], got {kappa}")
    return math.sqrt(constants.rest_energy**2 - (constants.hbar_c * kappa) ** 2)


def binding_from_kappa(kappa: float, constants: PhysicalConstants = ATOMIC_UNITS) -> float:
    """m c^2 - E(kappa), computed without cancellation."""
    E = E_from_kappa(kappa, constants)
    return (constants.hbar_c * kappa) ** 2 / (constants.rest_energy + E)


def shifted_from_kappa(kappa: float, tau: float = 0.0, constants: PhysicalConstants = ATOMIC_UNITS) -> float:
    """E(kappa) - m c^2 + tau."""
    return tau - binding_from_kappa(kappa, constants)


# --- state ----------------------------------------------------------------

@dataclass
class DiracState:
    kappa: float
    psi: SpinorField
    lam: float = math.nan
    lam_im: float = 0.0
    energy: float = math.nan  # expectation value, m c^2 subtracted, tau added back
    history: list[IterationRecord] = field(default_factory=list)
    residual: float = math.inf
    converged: bool = False
    tau: float = 0.0
    tol: float = DEFAULT_TOL
    constants: PhysicalConstants = ATOMIC_UNITS
    newton_steps: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        E_from_kappa(self.kappa, self.constants)

    @property
    def E(self) -> float:
        """Relativistic energy of the shifted problem (includes m c^2)."""
        return E_from_kappa(self.kappa, self.constants)

    @property
    def energy_shifted(self) -> float:
        """Bound-state energy implied by kappa, with m c^2 subtracted and tau restored."""
        return shifted_from_kappa(self.kappa, self.tau, self.constants)

    @property
    def next_iter(self) -> int:
        return self.history[-1].iter + 1 if self.history else 0


# --- momentum-space operators ---------------------------------------------

@lru_cache(maxsize=4)
def spinor_momenta(n: int, box: float) -> np.ndarray:
    """1-D momenta with the Nyquist entry zeroed (used for sigma.p and G)."""
    p = 2.0 * np.pi * sfft.fftfreq(n, d=box / n)
    p[n // 2] = 0.0
    p.setflags(write=False)
    return p


def _slab_momenta(grid: Grid, sl: slice):
    p = spinor_momenta(grid.n, grid.box)
    pz = p[sl][:, None, None]
    py = p[None, :, None]
    px = p[None, None, :]
    return pz, py, px


def _sigma_dot_p(pz, py, px, a1, a2):
    """(sigma.p)(a1, a2) for 2-component arrays."""
    pm = px - 1j * py
    pp = px + 1j * py
    return pz * a1 + pm * a2, pp * a1 - pz * a2


def _h0_minus_mc2(u, pz, py, px, constants: PhysicalConstants):
    """(H0 - m c^2) on a momentum slab u of shape (4, ...)."""
    c = constants.c
    s1, s2 = _sigma_dot_p(pz, py, px, u[2], u[3])
    l1, l2 = _sigma_dot_p(pz, py, px, u[0], u[1])
    two_mc2 = 2.0 * constants.rest_energy
    return np.stack([c * s1, c * s2, c * l1 - two_mc2 * u[2], c * l2 - two_mc2 * u[3]])


def _slabs(n: int):
    for start in range(0, n, SLAB):
        yield slice(start, min(n, start + SLAB))


def _check_spinor_space(psi: SpinorField, space: Space):
    if psi.space is not space:
        raise SpaceTagError(f"expected a {space.name.lower()}-space spinor, got {psi.space.name.lower()}")


def apply_H0_plus_E(psi: SpinorField, E: float, constants: PhysicalConstants = ATOMIC_UNITS) -> SpinorField:
    """(1/(hbar c)^2) (H0 + E) per momentum node.

    Diagonal blocks m/hbar^2 +- E/(hbar c)^2, off-diagonal blocks sigma.p/(hbar c).
    """
    _check_spinor_space(psi, Space.MOMENTUM)
    grid = psi.grid
    hc = constants.hbar_c
    top = (constants.rest_energy + E) / hc**2
    bot = (E - constants.rest_energy) / hc**2
    out = np.empty(psi.values.shape, dtype=np.result_type(psi.values.dtype, np.complex64))
    for sl in _slabs(grid.n):
        pz, py, px = _slab_momenta(grid, sl)
        u = psi.values[:, sl].astype(np.complex128)
        s1, s2 = _sigma_dot_p(pz, py, px, u[2], u[3])
        l1, l2 = _sigma_dot_p(pz, py, px, u[0], u[1])
        out[:, sl] = np.stack([top * u[0] + s1 / hc, top * u[1] + s2 / hc,
                               bot * u[2] + l1 / hc, bot * u[3] + l2 / hc])
    return psi.replace(out)


def apply_H0(psi: SpinorField, constants: PhysicalConstants = ATOMIC_UNITS) -> SpinorField:
    """Free Dirac Hamiltonian on a momentum-space spinor."""
    _check_spinor_space(psi, Space.MOMENTUM)
    out = np.empty(psi.values.shape, dtype=np.result_type(psi.values.dtype, np.complex64))
    for sl in _slabs(psi.grid.n):
        pz, py, px = _slab_momenta(psi.grid, sl)
        u = psi.values[:, sl].astype(np.complex128)
        out[:, sl] = _h0_minus_mc2(u, pz, py, px, constants) + constants.rest_energy * u
    return psi.replace(out)


def _fft_components(values: np.ndarray, inverse: bool = False) -> np.ndarray:
    fn = sfft.ifftn if inverse else sfft.fftn
    for i in range(values.shape[0]):
        values[i] = fn(values[i], norm="ortho", overwrite_x=True)
    return values


def to_momentum(psi: SpinorField) -> SpinorField:
    _check_spinor_space(psi, Space.REAL)
    vals = psi.values.astype(np.result_type(psi.values.dtype, np.complex64), copy=True)
    return psi.replace(_fft_components(vals), Space.MOMENTUM)


def to_real(psi: SpinorField) -> SpinorField:
    _check_spinor_space(psi, Space.MOMENTUM)
    vals = psi.values.astype(np.result_type(psi.values.dtype, np.complex64), copy=True)
    return psi.replace(_fft_components(vals, inverse=True), Space.REAL)


class _DiracEngine:
    """Applies A(kappa) to a real-space spinor array.

    Besides A psi it returns <A psi, (H0 - m c^2) A psi>, read off the momentum
    data before the inverse transform.
    """

    def __init__(self, grid: Grid, V: np.ndarray, kappa: float, constants: PhysicalConstants, dtype):
        self.grid = grid
        self.dtype = np.dtype(dtype)
        self.V = V.astype(np.float32 if self.dtype == np.complex64 else np.float64)
        self.kappa = kappa
        self.constants = constants
        hc = constants.hbar_c
        E = E_from_kappa(kappa, constants)
        self.top = (constants.rest_energy + E) / hc**2
        self.bot = -binding_from_kappa(kappa, constants) / hc**2

    def __call__(self, x: np.ndarray):
        grid, hc = self.grid, self.constants.hbar_c
        two_mc2 = 2.0 * self.constants.rest_energy
        c = self.constants.c
        W = np.empty(x.shape, dtype=self.dtype)
        for i in range(4):
            W[i] = sfft.fftn(self.V * x[i], norm="ortho", overwrite_x=True)
        form = 0.0
        k2 = self.kappa**2
        in_place = self.dtype == np.complex128
        for sl in _slabs(grid.n):
            pz, py, px = _slab_momenta(grid, sl)
            p2 = pz**2 + py**2 + px**2
            u = W[:, sl] if in_place else W[:, sl].astype(np.complex128)
            u *= 1.0 / (k2 + p2)
            s1, s2 = _sigma_dot_p(pz, py, px, u[2], u[3])
            l1, l2 = _sigma_dot_p(pz, py, px, u[0], u[1])
            # (sigma.p) y_small, using (sigma.p)^2 = p^2
            t1 = -(self.bot * s1 + (p2 / hc) * u[0])
            t2 = -(self.bot * s2 + (p2 / hc) * u[1])
            u[0] *= -self.top
            u[0] -= s1 / hc
            u[1] *= -self.top
            u[1] -= s2 / hc
            u[2] *= -self.bot
            u[2] -= l1 / hc
            u[3] *= -self.bot
            u[3] -= l2 / hc
            # <y, (H0 - m c^2) y> = 2 c Re<y_L, sigma.p y_S> - 2 m c^2 |y_S|^2
            form += 2.0 * c * (np.vdot(u[0], t1) + np.vdot(u[1], t2)).real
            form -= two_mc2 * (sq_norm(u[2]) + sq_norm(u[3]))
            if not in_place:
                W[:, sl] = u
        for i in range(4):
            W[i] = sfft.ifftn(W[i], norm="ortho", overwrite_x=True)
        return W, form


def _check_pair(psi: SpinorField, V: ScalarField):
    if psi.grid != V.grid:
        raise GridMismatchError(f"spinor grid {psi.grid} differs from potential grid {V.grid}")
    _check_spinor_space(psi, Space.REAL)
    if V.space is not Space.REAL:
        raise SpaceTagError("potential must be a real-space field")


def apply_A(psi: SpinorField, kappa: float, V: ScalarField,
            constants: PhysicalConstants = ATOMIC_UNITS) -> SpinorField:
    """-(1/(hbar c)^2) (H0 + E(kappa)) G(kappa) V psi."""
    _check_pair(psi, V)
    if not kappa > 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    dtype = np.result_type(psi.values.dtype, np.complex64)
    engine = _DiracEngine(psi.grid, np.real(V.values), kappa, constants, dtype)
    out, _ = engine(psi.values)
    return psi.replace(out)


def _potential_form(x: np.ndarray, V: np.ndarray) -> float:
    total = 0.0
    for i in range(x.shape[0]):
        for sl in _slabs(x.shape[1]):
            a = x[i, sl].astype(np.complex128)
            total += float(np.sum(V[sl] * (a.real**2 + a.imag**2)))
    return total


def _residual_sq(y: np.ndarray, x: np.ndarray, lam: float) -> float:
    if y.dtype == np.complex128:
        d = y - lam * x
        return sq_norm(d)
    total = 0.0
    for i in range(x.shape[0]):
        for sl in _slabs(x.shape[1]):
            d = y[i, sl].astype(np.complex128) - lam * x[i, sl].astype(np.complex128)
            total += sq_norm(d)
    return total


def dirac_energy_expectation(psi: SpinorField, V: ScalarField | None,
                             constants: PhysicalConstants = ATOMIC_UNITS) -> float:
    """(<psi, H0 psi> + <psi, V psi>) / <psi, psi> - m c^2."""
    if V is not None:
        _check_pair(psi, V)
    else:
        _check_spinor_space(psi, Space.REAL)
    mom = to_momentum(psi)
    form = 0.0
    for sl in _slabs(psi.grid.n):
        pz, py, px = _slab_momenta(psi.grid, sl)
        u = mom.values[:, sl].astype(np.complex128)
        form += np.vdot(u, _h0_minus_mc2(u, pz, py, px, constants)).real
    pot = _potential_form(psi.values, np.real(V.values)) if V is not None else 0.0
    return (form + pot) / sq_norm(psi.values)


# --- initial guesses ------------------------------------------------------

def kinetic_balance_guess(large, constants: PhysicalConstants = ATOMIC_UNITS) -> SpinorField:
    """Spinor with small components (hbar / 2 m c) (sigma.p) psi_L, normalised.

    ``large`` is a pair of real-space ScalarFields or a (2, n, n, n) array
    together with a grid given as ``large=(grid, array)``.
    """
    if isinstance(large, tuple) and len(large) == 2 and isinstance(large[0], Grid):
        grid, arr = large
        arr = np.asarray(arr)
    else:
        comps = list(large)
        if len(comps) != 2:
            raise ValueError("kinetic balance needs exactly two large components")
        if comps[0].grid != comps[1].grid:
            raise GridMismatchError("large components live on different grids")
        for c in comps:
            if c.space is not Space.REAL:
                raise SpaceTagError("large components must be real-space fields")
        grid = comps[0].grid
        arr = np.stack([c.values for c in comps])
    arr = arr.astype(np.complex128)
    if not np.any(arr):
        raise ValueError("kinetic balance guess needs a nonzero large component")
    scale = constants.hbar / (2.0 * constants.m * constants.c)
    spec = np.stack([sfft.fftn(a, norm="ortho") for a in arr])
    small = np.empty_like(spec)
    for sl in _slabs(grid.n):
        pz, py, px = _slab_momenta(grid, sl)
        s1, s2 = _sigma_dot_p(pz, py, px, spec[0, sl], spec[1, sl])
        small[0, sl], small[1, sl] = scale * s1, scale * s2
    small = np.stack([sfft.ifftn(s, norm="ortho") for s in small])
    return normalize(SpinorField(grid, np.concatenate([arr, small])))


def standard_guess(grid: Grid, Z: float = 1.0, center=(0.0, 0.0, 0.0),
                   constants: PhysicalConstants = ATOMIC_UNITS) -> SpinorField:
    """Non-relativistic 1s in large1, small components by kinetic balance."""
    large = np.zeros((2,) + grid.shape)
    large[0] = np.exp(-Z * grid.radius(center))
    return kinetic_balance_guess((grid, large), constants)


def swapped_guess(grid: Grid, Z: float = 1.0, center=(0.0, 0.0, 0.0),
                  constants: PhysicalConstants = ATOMIC_UNITS) -> SpinorField:
    """Standard guess with large and small component pairs exchanged."""
    std = standard_guess(grid, Z, center, constants)
    return std.replace(std.values[[2, 3, 0, 1]].copy())


def box_window(grid: Grid) -> np.ndarray:
    """Product of sin^2 factors vanishing on the box faces."""
    w = np.sin(np.pi * (grid.coords() + 0.5 * grid.box) / grid.box) ** 2
    return w[:, None, None] * w[None, :, None] * w[None, None, :]


def random_guess(grid: Grid, seed: int) -> SpinorField:
    """Uniform [0, 10] samples in every component, windowed to vanish at the boundary."""
    rng = np.random.default_rng(seed)
    vals = rng.uniform(0.0, 10.0, size=(4,) + grid.shape) * box_window(grid)
    return normalize(SpinorField(grid, vals.astype(np.complex128)))


def gaussian_guess(grid: Grid, exponent: float, center=(0.0, 0.0, 0.0),
                   constants: PhysicalConstants = ATOMIC_UNITS) -> SpinorField:
    """exp(-exponent r^2) in large1 (band-limited to the grid), kinetic-balance small part.

    A Gaussian much narrower than the spacing samples to zero at every node
    except possibly one; the band-limited form keeps its grid projection.
    """
    x = grid.coords()
    K = np.pi / grid.spacing
    gx, gy, gz = (bandlimited_gaussian(x - c, exponent, K) for c in center)
    large = np.zeros((2,) + grid.shape)
    large[0] = gz[:, None, None] * gy[None, :, None] * gx[None, None, :]
    return kinetic_balance_guess((grid, large), constants)


def kramers_partner(psi: SpinorField) -> SpinorField:
    """Time-reversed spinor (psi1..psi4) -> (-psi2*, psi1*, -psi4*, psi3*)."""
    v = psi.values
    return psi.replace(np.stack([-np.conj(v[1]), np.conj(v[0]), -np.conj(v[3]), np.conj(v[2])]))


def kramers_basis(psi: SpinorField) -> list[SpinorField]:
    a = normalize(psi)
    return [a, normalize(kramers_partner(a))]


def subspace_projection(basis: list[SpinorField], psi: SpinorField) -> float:
    """Norm of the projection of normalised psi onto an orthonormal basis."""
    x = normalize(psi).values
    dv = psi.grid.cell_volume
    return math.sqrt(sum(abs(vdot(b.values.astype(x.dtype), x) * dv) ** 2 for b in basis))


# --- iteration ------------------------------------------------------------

def initial_dirac_state(psi: SpinorField, kappa: float, tau: float = 0.0,
                        constants: PhysicalConstants = ATOMIC_UNITS, precision: str = "double") -> DiracState:
    dtype = {"double": np.complex128, "single": np.complex64}[precision]
    return DiracState(kappa=kappa, psi=psi.replace(psi.values.astype(dtype)), tau=tau, constants=constants)


def power_iterate_dirac(state: DiracState, V: ScalarField, max_iters: int = 100, tol: float = DEFAULT_TOL,
                        reference=None) -> DiracState:
    """Power iteration at fixed kappa.

    ``reference`` is a spinor or a list of orthonormal spinors; each record
    then carries the norm of the iterate's projection onto their span.
    """
    psi = state.psi
    _check_pair(psi, V)
    grid = psi.grid
    dv = grid.cell_volume
    c = state.constants
    dtype = np.result_type(psi.values.dtype, np.complex64)
    # no normalised copy of the start vector: the first sweep divides by its norm instead
    x = psi.values.astype(dtype, copy=False)
    xn2 = sq_norm(x) * dv
    if reference is None:
        refs = []
    elif isinstance(reference, SpinorField):
        refs = [normalize(reference)]
    else:
        refs = list(reference)
    ref_vals = [r.values.astype(dtype) for r in refs]
    Vr = np.real(V.values)
    engine = _DiracEngine(grid, Vr, state.kappa, c, dtype)
    history = list(state.history)
    it = state.next_iter
    lam = lam_im = res = math.nan
    energy = state.energy
    converged = False
    for _ in range(max_iters):
        y, form = engine(x)
        q = vdot(x, y) * dv / xn2
        lam, lam_im = q.real, q.imag
        res = math.sqrt(_residual_sq(y, x, lam) * dv / xn2)
        ny2 = sq_norm(y)
        if math.sqrt(ny2 * dv) < BREAKDOWN_NORM:
            raise BreakdownError(f"A psi vanished at kappa={state.kappa}; restart from a perturbed guess")
        energy = (form + _potential_form(y, Vr)) / ny2 + state.tau
        y *= 1.0 / math.sqrt(ny2 * dv)
        x, xn2 = y, 1.0
        proj = None
        if ref_vals:
            proj = math.sqrt(sum(abs(vdot(r, x) * dv) ** 2 for r in ref_vals))
        history.append(IterationRecord(it, lam, energy, res, proj, lam_im))
        it += 1
        if res < tol:
            converged = True
            break
    return replace(state, psi=psi.replace(x), lam=lam, lam_im=lam_im, energy=energy, residual=res,
                   history=history, converged=converged, tol=tol)


def h0_minus_E_form(psi: SpinorField, kappa: float, constants: PhysicalConstants = ATOMIC_UNITS) -> float:
    """<psi, (H0 - E(kappa)) psi> = <psi, (H0 - m c^2) psi> + (m c^2 - E) |psi|^2."""
    mom = to_momentum(psi)
    form = 0.0
    for sl in _slabs(psi.grid.n):
        pz, py, px = _slab_momenta(psi.grid, sl)
        u = mom.values[:, sl].astype(np.complex128)
        form += np.vdot(u, _h0_minus_mc2(u, pz, py, px, constants)).real
    return (form + binding_from_kappa(kappa, constants) * sq_norm(psi.values)) * psi.grid.cell_volume


def dlambda_dkappa_formula(state: DiracState) -> tuple[float, float]:
    """Analytic derivative and the denominator <psi, (H0 - E) psi>.

    d lambda/d kappa <psi,(H0-E)psi> = kappa lambda (-|G^1/2 H0 psi|^2 / E + E |G^1/2 psi|^2),
    evaluated node by node in momentum space, where |H0 u|^2 = (m^2c^4 + (hbar c p)^2)|u|^2.
    """
    psi, c = state.psi, state.constants
    kappa, E = state.kappa, state.E
    hc = c.hbar_c
    mom = to_momentum(psi)
    bracket = form = 0.0
    for sl in _slabs(psi.grid.n):
        pz, py, px = _slab_momenta(psi.grid, sl)
        p2 = pz**2 + py**2 + px**2
        G = 1.0 / (kappa**2 + p2)
        u = mom.values[:, sl].astype(np.complex128)
        dens = np.sum(u.real**2 + u.imag**2, axis=0)
        # E^2 - H0^2 per node, = -(hbar c)^2 (kappa^2 + p^2) without cancellation
        e2_minus_h2 = -(hc**2) * (kappa**2 + p2)
        bracket += float(np.sum(G * e2_minus_h2 * dens)) / E
        form += np.vdot(u, _h0_minus_mc2(u, pz, py, px, c)).real
    del mom
    dv = psi.grid.cell_volume
    bracket *= dv
    # same as h0_minus_E_form, sharing the transform
    denom = (form + binding_from_kappa(kappa, c) * sq_norm(psi.values)) * dv
    return kappa * state.lam * bracket / denom, denom


def lambda_at(state: DiracState, V: ScalarField, kappa: float, max_iters: int = 400,
              tol: float | None = None) -> DiracState:
    """Re-solve at a different kappa, warm-started from ``state``."""
    s = replace(state, kappa=kappa, converged=False, history=[], newton_steps=[])
    return power_iterate_dirac(s, V, max_iters, state.tol if tol is None else tol)


def dlambda_dkappa_fd(state: DiracState, V: ScalarField, rel_step: float = 1e-4, max_iters: int = 400) -> float:
    h = rel_step * state.kappa
    plus = lambda_at(state, V, state.kappa + h, max_iters)
    minus = lambda_at(state, V, state.kappa - h, max_iters)
    if not (plus.converged and minus.converged):
        raise NotConvergedError("finite-difference solves did not converge")
    return (plus.lam - minus.lam) / (2.0 * h)


def dlambda_dkappa(state: DiracState, V: ScalarField) -> float:
    if not state.converged:
        raise NotConvergedError(f"state at kappa={state.kappa} is not converged (residual {state.residual:.2e})")
    _check_pair(state.psi, V)
    value, denom = dlambda_dkappa_formula(state)
    if abs(denom) < SINGULAR_DENOM * sq_norm(state.psi.values) * state.psi.grid.cell_volume:
        warnings.warn(f"derivative formula singular at kappa={state.kappa} (denominator {denom:.2e}); "
                      "using finite differences", RuntimeWarning, stacklevel=2)
        return dlambda_dkappa_fd(state, V)
    return value


def newton_kappa(state: DiracState, V: ScalarField, tol_lambda: float = DEFAULT_TOL_LAMBDA,
                 max_newton: int = MAX_NEWTON, max_iters: int = 400, tol: float = DEFAULT_TOL) -> DiracState:
    """Newton iteration on kappa towards lambda(kappa) = 1 with steps capped at kappa/2.

    On return ``energy`` holds the bound-state energy E(kappa) - m c^2 + tau.
    """
    if not state.converged:
        state = power_iterate_dirac(state, V, max_iters, tol)
        if not state.converged:
            raise NotConvergedError(f"power iteration did not converge at kappa={state.kappa}")
    steps = list(state.newton_steps) + [(state.kappa, state.lam)]
    for _ in range(max_newton):
        if abs(state.lam - 1.0) <= tol_lambda:
            return replace(state, energy=state.energy_shifted, newton_steps=steps)
        slope = dlambda_dkappa(state, V)
        step = -(state.lam - 1.0) / slope
        step = max(-0.5 * state.kappa, min(0.5 * state.kappa, step))
        k_new = state.kappa + step
        if not k_new > 0:
            raise NewtonError(f"Newton step drove kappa to {k_new:.4g}")
        state = power_iterate_dirac(replace(state, kappa=k_new, converged=False), V, max_iters, tol)
        if not state.converged:
            raise NotConvergedError(f"power iteration did not converge at kappa={k_new}")
        steps.append((state.kappa, state.lam))
    ok = abs(state.lam - 1.0) <= tol_lambda
    return replace(state, energy=state.energy_shifted, newton_steps=steps, converged=ok)
