"""Non-relativistic auxiliary eigenproblem  lambda psi = -2 G_mu V psi.

For fixed mu the dominant eigenpair is found by power iteration; mu is then
moved by Newton steps until lambda(mu) = 1, at which point E = -mu^2/2.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
import math

import numpy as np
import scipy.fft as sfft

from .errors import BreakdownError, GridMismatchError, NewtonError, NotConvergedError, SpaceTagError
from .fields import (Grid, ScalarField, Space, greens_values, momentum_squared, normalize,
                     sq_norm, vdot)

DEFAULT_TOL = 1e-8
DEFAULT_TOL_LAMBDA = 1e-8
MAX_NEWTON = 50
BREAKDOWN_NORM = 1e-14
DEFAULT_METHOD = "periodic"


@dataclass
class IterationRecord:
    iter: int
    lam: float
    energy: float
    residual: float
    projection: float | None = None
    lam_im: float = 0.0


@dataclass
class SchrodingerState:
    mu: float
    psi: ScalarField
    lam: float = math.nan
    energy: float = math.nan
    history: list[IterationRecord] = field(default_factory=list)
    residual: float = math.inf
    converged: bool = False
    tau: float = 0.0
    tol: float = DEFAULT_TOL
    newton_steps: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")

    @property
    def next_iter(self) -> int:
        return self.history[-1].iter + 1 if self.history else 0


def hydrogenic_guess(grid: Grid, center=(0.0, 0.0, 0.0), exponent: float = 1.0) -> ScalarField:
    """Normalised exp(-exponent |r - center|)."""
    return normalize(ScalarField(grid, np.exp(-exponent * grid.radius(center))))


def initial_state(grid: Grid, mu: float, center=(0.0, 0.0, 0.0), tau: float = 0.0,
                  exponent: float = 1.0) -> SchrodingerState:
    return SchrodingerState(mu=mu, psi=hydrogenic_guess(grid, center, exponent), tau=tau)


def _check_pair(psi: ScalarField, V: ScalarField):
    if psi.grid != V.grid:
        raise GridMismatchError(f"wavefunction grid {psi.grid} differs from potential grid {V.grid}")
    if psi.space is not Space.REAL or V.space is not Space.REAL:
        raise SpaceTagError("solver operates on real-space fields")


def apply_T(psi: ScalarField, mu: float, V: ScalarField, method: str = DEFAULT_METHOD) -> ScalarField:
    """-2 G_mu (V psi)."""
    _check_pair(psi, V)
    Vv = np.real(V.values) if not np.iscomplexobj(psi.values) else V.values
    out = greens_values(Vv * psi.values, psi.grid, mu, method)
    out *= -2.0
    return psi.replace(out)


def kinetic_energy(values: np.ndarray, grid: Grid) -> float:
    """<f, -1/2 Laplacian f> (unnormalised) via the |p|^2 symbol."""
    if np.iscomplexobj(values):
        spec = sfft.fftn(values, norm="ortho")
        p2 = momentum_squared(grid.n, grid.box)
        return 0.5 * float(np.sum(p2 * (spec.real**2 + spec.imag**2))) * grid.cell_volume
    spec = sfft.rfftn(values, norm="ortho")
    return 0.5 * _half_spectrum_sum(spec.real**2 + spec.imag**2, grid, momentum_squared(grid.n, grid.box, half=True)) * grid.cell_volume


def _half_spectrum_sum(density: np.ndarray, grid: Grid, weight: np.ndarray) -> float:
    """Sum over the full spectrum of a real field given its rfft half (weight applied)."""
    total = 2.0 * float(np.sum(weight * density))
    edge = [0, grid.n // 2]
    total -= float(np.sum(weight[..., edge] * density[..., edge]))
    return total


def energy_expectation(psi: ScalarField, V: ScalarField) -> float:
    """Rayleigh quotient <psi, (-1/2 Laplacian + V) psi> / <psi, psi>."""
    _check_pair(psi, V)
    dv = psi.grid.cell_volume
    nrm2 = sq_norm(psi.values) * dv
    kin = kinetic_energy(psi.values, psi.grid)
    pot = float(np.real(vdot(psi.values, np.real(V.values) * psi.values))) * dv
    return (kin + pot) / nrm2


class _RealEngine:
    """One power-iteration sweep on real fields with the periodic symbol.

    Returns T psi and the kinetic energy of T psi taken from the spectrum that
    is already at hand, so the energy costs no extra transform.
    """

    def __init__(self, grid: Grid, V: np.ndarray, mu: float):
        self.grid = grid
        self.V = V
        self.p2 = momentum_squared(grid.n, grid.box, half=True)
        self.symbol = -2.0 / (mu**2 + self.p2)

    def __call__(self, psi: np.ndarray):
        spec = sfft.rfftn(self.V * psi, norm="ortho")
        spec *= self.symbol
        kin = 0.5 * _half_spectrum_sum(spec.real**2 + spec.imag**2, self.grid, self.p2) * self.grid.cell_volume
        out = sfft.irfftn(spec, s=self.grid.shape, norm="ortho", overwrite_x=True)
        return out, kin


def power_iterate(state: SchrodingerState, V: ScalarField, max_iters: int = 500,
                  tol: float = DEFAULT_TOL, deflate=(), reference: ScalarField | None = None,
                  method: str = DEFAULT_METHOD) -> SchrodingerState:
    """Power iteration at fixed mu.

    ``deflate`` holds converged eigenfunctions to project out each sweep;
    ``reference`` adds |<reference, psi>| to every iteration record.
    """
    psi = state.psi
    _check_pair(psi, V)
    grid = psi.grid
    dv = grid.cell_volume
    mu = state.mu
    deflate = [normalize(d).values for d in deflate]
    ref = normalize(reference).values if reference is not None else None
    Vr = np.real(V.values)
    real_path = not np.iscomplexobj(psi.values) and method == "periodic" and not deflate
    engine = _RealEngine(grid, Vr, mu) if real_path else None

    x = normalize(psi).values
    for d in deflate:
        x = x - vdot(d, x) * dv * d
    x = x / math.sqrt(sq_norm(x) * dv)
    history = list(state.history)
    it = state.next_iter
    lam = lam_im = res = math.nan
    energy = state.energy
    converged = False
    for _ in range(max_iters):
        if engine is not None:
            y, kin = engine(x)
        else:
            y = -2.0 * greens_values(Vr * x, grid, mu, method)
            for d in deflate:
                y = y - vdot(d, y) * dv * d
            kin = None
        q = vdot(x, y) * dv
        lam, lam_im = q.real, q.imag
        res = math.sqrt(sq_norm(y - lam * x) * dv)
        ynorm2 = sq_norm(y) * dv
        if math.sqrt(ynorm2) < BREAKDOWN_NORM:
            raise BreakdownError(
                f"T psi vanished (norm {math.sqrt(ynorm2):.2e}) at mu={mu}; restart from a perturbed guess")
        pot = float(np.real(vdot(y, Vr * y))) * dv
        if kin is None:
            kin = kinetic_energy(y, grid)
        energy = (kin + pot) / ynorm2 + state.tau
        x = y / math.sqrt(ynorm2)
        proj = abs(vdot(ref, x)) * dv if ref is not None else None
        history.append(IterationRecord(it, lam, energy, res, proj, lam_im))
        it += 1
        if res < tol:
            converged = True
            break
    return replace(state, psi=psi.replace(x), lam=lam, energy=energy, residual=res,
                   history=history, converged=converged, tol=tol)


def dlambda_dmu(state: SchrodingerState, V: ScalarField | None = None) -> float:
    """Analytic d lambda / d mu = -2 mu lambda |psi|^2 / <psi, (mu^2 + p^2) psi>."""
    if not state.converged:
        raise NotConvergedError(f"state at mu={state.mu} is not converged (residual {state.residual:.2e})")
    psi = state.psi
    if V is not None:
        _check_pair(psi, V)
    nrm2 = sq_norm(psi.values) * psi.grid.cell_volume
    denom = state.mu**2 * nrm2 + 2.0 * kinetic_energy(psi.values, psi.grid)
    return -2.0 * state.mu * state.lam * nrm2 / denom


def newton_mu(state: SchrodingerState, V: ScalarField, tol_lambda: float = DEFAULT_TOL_LAMBDA,
              max_newton: int = MAX_NEWTON, max_iters: int = 500, tol: float = DEFAULT_TOL,
              method: str = DEFAULT_METHOD) -> SchrodingerState:
    """Newton iteration on mu towards lambda(mu) = 1, re-solving at each step.

    The returned state's ``converged`` flag reports whether |lambda - 1| met
    ``tol_lambda``; its energy is -mu^2/2 + tau.
    """
    if not state.converged:
        state = power_iterate(state, V, max_iters, tol, method=method)
        if not state.converged:
            raise NotConvergedError(f"power iteration did not converge at mu={state.mu}")
    steps = list(state.newton_steps) + [(state.mu, state.lam)]
    for _ in range(max_newton):
        if abs(state.lam - 1.0) <= tol_lambda:
            return replace(state, energy=-0.5 * state.mu**2 + state.tau, newton_steps=steps)
        slope = dlambda_dmu(state, V)
        mu_new = state.mu - (state.lam - 1.0) / slope
        if not mu_new > 0:
            raise NewtonError(
                f"Newton step drove mu to {mu_new:.4g} from mu={state.mu:.6g} (lambda={state.lam:.6g}); "
                "no bound state reachable on this branch")
        state = power_iterate(replace(state, mu=mu_new, converged=False), V, max_iters, tol, method=method)
        if not state.converged:
            raise NotConvergedError(f"power iteration did not converge at mu={mu_new}")
        steps.append((state.mu, state.lam))
    ok = abs(state.lam - 1.0) <= tol_lambda
    return replace(state, energy=-0.5 * state.mu**2 + state.tau, newton_steps=steps, converged=ok)
