"""Exponential-sum (Gaussian-sum) approximations of radial kernels.

Two targets are supported: the power kernel r**-alpha and the bound-state
Helmholtz kernel exp(-kappa r) / (4 pi r).  Both are obtained by trapezoid
discretisation of an integral representation in a logarithmic variable,
followed by truncation that is checked against the analytic kernel on a
log-spaced sample of the requested range.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math
from pathlib import Path

import numpy as np
from scipy.special import gamma as gamma_fn

from .errors import CertificationError

MAX_TERMS = 600
MAX_HELMHOLTZ_TERMS = 2000
# exp(-x) stays a normal double up to x ~ 708
MAX_DECAY = 700.0
POINTS_PER_DECADE = 64
MIN_SAMPLES = 1000

_LOG3 = math.log(3.0)
_HALF_LOG_SEC1 = 0.5 * math.log(1.0 / math.cos(1.0))


@dataclass(frozen=True)
class GaussianSum:
    """sum_k w_k exp(-e_k r^2), certified against ``target`` on ``valid_range``."""

    weights: np.ndarray
    exponents: np.ndarray
    target: str  # "power" or "helmholtz"
    param: float  # alpha for power, kappa for helmholtz
    epsilon: float
    valid_range: tuple[float, float]
    step: float = field(default=float("nan"), compare=False)

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=float)
        e = np.ascontiguousarray(self.exponents, dtype=float)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "exponents", e)
        if w.shape != e.shape or w.ndim != 1:
            raise ValueError("weights and exponents must be 1-D arrays of equal length")
        if self.target not in ("power", "helmholtz"):
            raise ValueError(f"unknown target {self.target!r}")
        if len(e):
            if np.any(e <= 0) or np.any(np.diff(e) <= 0):
                raise ValueError("exponents must be positive and strictly increasing")
            if np.any(w <= 0):
                raise ValueError("weights must be positive")

    @property
    def terms(self) -> list[tuple[float, float]]:
        return list(zip(self.weights.tolist(), self.exponents.tolist()))

    def __len__(self):
        return len(self.weights)

    def __call__(self, r):
        return evaluate_sum(self, r)

    def target_value(self, r):
        return target_kernel(self.target, self.param, r)

    def without_terms(self, index) -> "GaussianSum":
        """Copy with the given term index (or indices) removed; not re-certified."""
        keep = np.ones(len(self), bool)
        keep[index] = False
        return GaussianSum(self.weights[keep], self.exponents[keep], self.target,
                           self.param, self.epsilon, self.valid_range, self.step)


def target_kernel(target: str, param: float, r):
    r = np.asarray(r, dtype=float)
    if target == "power":
        return r ** (-param)
    if target == "helmholtz":
        return np.exp(-param * r) / (4.0 * np.pi * r)
    raise ValueError(f"unknown target {target!r}")


def step_size(alpha: float, epsilon: float) -> float:
    """Largest trapezoid step in log r^2 that keeps the relative error below epsilon."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if not (0 < epsilon <= 1):
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    return 2.0 * math.pi / (_LOG3 + alpha * _HALF_LOG_SEC1 + math.log(1.0 / epsilon))


def sample_points(d_lo: float, d_hi: float, n_samples: int | None = None) -> np.ndarray:
    if d_hi <= d_lo:
        return np.array([d_lo], dtype=float)
    decades = math.log10(d_hi / d_lo)
    if n_samples is None:
        n_samples = max(MIN_SAMPLES, int(math.ceil(POINTS_PER_DECADE * decades)) + 1)
    return np.logspace(math.log10(d_lo), math.log10(d_hi), n_samples)


def evaluate_sum(gsum: GaussianSum, r):
    r = np.asarray(r, dtype=float)
    flat = r.reshape(-1)
    out = np.empty(flat.shape)
    # chunk so the (points x terms) temporary stays small
    chunk = max(1, 2_000_000 // max(1, len(gsum)))
    for i in range(0, flat.size, chunk):
        rr = flat[i:i + chunk, None] ** 2
        out[i:i + chunk] = np.exp(-rr * gsum.exponents[None, :]) @ gsum.weights
    return out.reshape(r.shape) if r.ndim else float(out[0])


def _relative_error(weights, exponents, target, param, r):
    approx = np.exp(-(r[:, None] ** 2) * exponents[None, :]) @ weights
    exact = target_kernel(target, param, r)
    return np.abs(approx - exact) / exact


def max_relative_error(gsum: GaussianSum, n_samples: int | None = None) -> float:
    r = sample_points(*gsum.valid_range, n_samples)
    err = np.abs(evaluate_sum(gsum, r) - gsum.target_value(r)) / gsum.target_value(r)
    return float(err.max())


def _check_common(epsilon, d_lo, d_hi):
    if not (0 < epsilon <= 1):
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    if not (0 < d_lo < d_hi):
        raise ValueError(f"need 0 < d_lo < d_hi, got [{d_lo}, {d_hi}]")


def build_power_sum(alpha: float, epsilon: float, d_lo: float, d_hi: float,
                    max_terms: int = MAX_TERMS) -> GaussianSum:
    """Certified Gaussian sum for r**-alpha on [d_lo, d_hi].

    Terms are (h / Gamma(alpha/2)) exp(alpha n h / 2) with exponent exp(n h).
    The index window grows symmetrically about the geometric centre of the
    range until the sampled relative error drops below epsilon.
    """
    _check_common(epsilon, d_lo, d_hi)
    h = step_size(alpha, epsilon)
    r = sample_points(d_lo, d_hi)
    centre = int(round(-math.log(d_lo * d_hi) / h))
    half = int(math.ceil(math.log(d_hi / d_lo) / h))
    pref = h / gamma_fn(alpha / 2.0)
    exact = r**-alpha

    def terms(n):
        return pref * np.exp(alpha * n * h / 2.0), np.exp(n * h)

    # grow the window incrementally: each step adds the two new end terms
    w, e = terms(np.arange(centre - half, centre + half + 1))
    approx = np.exp(-(r[:, None] ** 2) * e[None, :]) @ w
    err = math.inf
    while 2 * half + 1 <= max_terms:
        err = float((np.abs(approx - exact) / exact).max())
        if err <= epsilon:
            n = np.arange(centre - half, centre + half + 1)
            w, e = terms(n)
            return GaussianSum(w, e, "power", float(alpha), float(epsilon),
                               (float(d_lo), float(d_hi)), h)
        half += 1
        w, e = terms(np.array([centre - half, centre + half]))
        approx += np.exp(-(r[:, None] ** 2) * e[None, :]) @ w
    raise CertificationError(
        f"power sum alpha={alpha} not certified to {epsilon:g} on [{d_lo:g}, {d_hi:g}] "
        f"within {max_terms} terms (achieved {err:.3g})", achieved=err)


def _helmholtz_terms(kappa, dt, n):
    t = n * dt
    w = (2.0 / math.sqrt(math.pi)) * dt * np.exp(t - 0.25 * kappa**2 * np.exp(-2.0 * t)) / (4.0 * math.pi)
    return w, np.exp(2.0 * t)


def build_helmholtz_sum(kappa: float, epsilon: float, d_lo: float, d_hi: float,
                        max_terms: int = MAX_HELMHOLTZ_TERMS) -> GaussianSum:
    """Certified Gaussian sum for exp(-kappa r) / (4 pi r) on [d_lo, d_hi].

    Discretises exp(-kappa r)/r = 2/sqrt(pi) * int exp(-r^2 s^2 - kappa^2/(4 s^2)) ds
    with s = exp(t) and a uniform trapezoid step in t.  Terms whose largest
    relative contribution on the range falls below 0.01 epsilon are dropped
    from both ends.  When kappa * d_hi is large the kernel decays faster than
    the quadrature can follow at the default step, so the step is shrunk by
    a factor 1.25 until the sum certifies or the term cap is reached.  Ranges
    with kappa * d_hi beyond 700 are rejected: the kernel underflows there
    and relative accuracy has no meaning.
    """
    if not kappa >= 0:
        raise ValueError(f"kappa must be non-negative, got {kappa}")
    _check_common(epsilon, d_lo, d_hi)
    if kappa * d_hi > MAX_DECAY:
        raise ValueError(f"kappa * d_hi = {kappa * d_hi:g} exceeds {MAX_DECAY:g}; "
                         "exp(-kappa r) underflows double precision on this range")
    r = sample_points(d_lo, d_hi)
    exact = target_kernel("helmholtz", kappa, r)
    dt = step_size(1.0, epsilon) / 2.0
    threshold = 0.01 * epsilon
    err = math.inf

    def contribution(n, dt):
        w, e = _helmholtz_terms(kappa, dt, np.array([n]))
        return float(np.max(w[0] * np.exp(-e[0] * r**2) / exact))

    while True:
        centre = int(round(-0.5 * math.log(d_lo * d_hi) / dt))
        lo = centre
        while contribution(lo - 1, dt) >= threshold:
            lo -= 1
            if centre - lo > max_terms:
                break
        hi = centre
        while contribution(hi + 1, dt) >= threshold:
            hi += 1
            if hi - centre > max_terms:
                break
        count = hi - lo + 1
        if count > max_terms:
            break
        w, e = _helmholtz_terms(kappa, dt, np.arange(lo, hi + 1))
        keep = w > 0
        w, e = w[keep], e[keep]
        err = float(_relative_error(w, e, "helmholtz", kappa, r).max())
        if err <= epsilon:
            return GaussianSum(w, e, "helmholtz", float(kappa), float(epsilon),
                               (float(d_lo), float(d_hi)), dt)
        dt /= 1.25
    raise CertificationError(
        f"helmholtz sum kappa={kappa} not certified to {epsilon:g} on [{d_lo:g}, {d_hi:g}] "
        f"within {max_terms} terms (achieved {err:.3g})", achieved=err)


def save_sum(gsum: GaussianSum, path) -> None:
    path = Path(path)
    lo, hi = gsum.valid_range
    lines = [f"# target={gsum.target} param={gsum.param!r} eps={gsum.epsilon!r} "
             f"dlo={lo!r} dhi={hi!r}"]
    lines += [f"{w:.17e} {e:.17e}" for w, e in gsum.terms]
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)


def load_sum(path) -> GaussianSum:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("#"):
        raise ValueError(f"{path}: missing header line")
    header = dict(item.split("=", 1) for item in text[0][1:].split())
    rows = [ln.split() for ln in text[1:] if ln.strip()]
    arr = np.array(rows, dtype=float).reshape(-1, 2)
    return GaussianSum(arr[:, 0], arr[:, 1], header["target"], float(header["param"]),
                       float(header["eps"]), (float(header["dlo"]), float(header["dhi"])))
