"""Uniform periodic grids, scalar and 4-spinor fields, FFTs and Green's operators.

Arrays are stored with axes ordered (z, y, x) so that a C-order flatten is
x-fastest.  Grid nodes sit at x_j = -L/2 + j*h, j = 0..n-1, which puts the
origin on node n/2.  Momentum-space fields use the unitary DFT and standard
FFT frequency ordering p = 2*pi*k/L.
"""
from __future__ import annotations

from dataclasses import dataclass
import enum
from functools import lru_cache
import math
from pathlib import Path
import struct

import numpy as np
import scipy.fft as sfft
from scipy.special import wofz

from .errors import GridMismatchError, SpaceTagError
from .kernels import build_helmholtz_sum

MAGIC = b"BSFLD1"
SLAB = 8  # planes per chunk for upcast reductions on single-precision data


class Space(enum.IntEnum):
    REAL = 0
    MOMENTUM = 1


class Direction(enum.Enum):
    FORWARD = "forward"
    INVERSE = "inverse"


@dataclass(frozen=True)
class Grid:
    n: int
    box: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 16 or self.n % 2:
            raise ValueError(f"grid size must be an even integer >= 16, got {self.n}")
        if not self.box > 0:
            raise ValueError(f"box length must be positive, got {self.box}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "box", float(self.box))

    @property
    def spacing(self) -> float:
        return self.box / self.n

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def cell_volume(self) -> float:
        return self.spacing**3

    @property
    def diagonal(self) -> float:
        return math.sqrt(3.0) * self.box

    def coords(self) -> np.ndarray:
        return -0.5 * self.box + self.spacing * np.arange(self.n)

    def momenta(self) -> np.ndarray:
        return 2.0 * np.pi * sfft.fftfreq(self.n, d=self.spacing)

    def contains(self, point) -> bool:
        lo, hi = -0.5 * self.box, 0.5 * self.box - self.spacing
        return all(lo <= float(c) <= hi for c in point)

    def radius(self, center=(0.0, 0.0, 0.0)) -> np.ndarray:
        x = self.coords()
        cx, cy, cz = (float(c) for c in center)
        return np.sqrt((x[:, None, None] - cz) ** 2 + (x[None, :, None] - cy) ** 2
                       + (x[None, None, :] - cx) ** 2)


def _as_cube(values, grid: Grid, leading=()):
    arr = np.asarray(values)
    target = tuple(leading) + grid.shape
    if arr.shape == target:
        return arr
    if arr.size == math.prod(target):
        return arr.reshape(target)
    raise ValueError(f"expected {math.prod(target)} values, got array of shape {arr.shape}")


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray
    space: Space = Space.REAL

    def __post_init__(self):
        object.__setattr__(self, "values", _as_cube(self.values, self.grid))
        object.__setattr__(self, "space", Space(self.space))

    @property
    def flat(self) -> np.ndarray:
        """x-fastest view of the samples."""
        return self.values.reshape(-1)

    def replace(self, values, space=None) -> "ScalarField":
        return ScalarField(self.grid, values, self.space if space is None else space)

    def __mul__(self, c):
        return self.replace(self.values * c)

    __rmul__ = __mul__

    def __add__(self, other):
        _check_compatible(self, other)
        return self.replace(self.values + other.values)

    def __sub__(self, other):
        _check_compatible(self, other)
        return self.replace(self.values - other.values)


@dataclass(frozen=True, eq=False)
class SpinorField:
    """Four components ordered (large1, large2, small1, small2) in one (4, n, n, n) array."""

    grid: Grid
    values: np.ndarray
    space: Space = Space.REAL

    def __post_init__(self):
        object.__setattr__(self, "values", _as_cube(self.values, self.grid, (4,)))
        object.__setattr__(self, "space", Space(self.space))

    @classmethod
    def from_components(cls, components) -> "SpinorField":
        components = list(components)
        if len(components) != 4:
            raise ValueError("a spinor needs exactly four components")
        first = components[0]
        for c in components[1:]:
            _check_compatible(first, c)
        return cls(first.grid, np.stack([c.values for c in components]), first.space)

    @property
    def components(self) -> tuple[ScalarField, ...]:
        return tuple(ScalarField(self.grid, self.values[i], self.space) for i in range(4))

    @property
    def large(self) -> np.ndarray:
        return self.values[:2]

    @property
    def small(self) -> np.ndarray:
        return self.values[2:]

    def replace(self, values, space=None) -> "SpinorField":
        return SpinorField(self.grid, values, self.space if space is None else space)

    def __mul__(self, c):
        return self.replace(self.values * c)

    __rmul__ = __mul__

    def __add__(self, other):
        _check_compatible(self, other)
        return self.replace(self.values + other.values)

    def __sub__(self, other):
        _check_compatible(self, other)
        return self.replace(self.values - other.values)


def _check_compatible(a, b):
    if a.grid != b.grid:
        raise GridMismatchError(f"grids differ: {a.grid} vs {b.grid}")
    if a.space != b.space:
        raise SpaceTagError(f"space tags differ: {a.space.name} vs {b.space.name}")
    if type(a) is not type(b):
        raise TypeError("cannot combine scalar and spinor fields")


def _axes(field):
    return (-3, -2, -1)


def transform(field, direction) -> ScalarField | SpinorField:
    """Unitary DFT between real and momentum space."""
    direction = Direction(direction)
    if direction is Direction.FORWARD:
        if field.space is not Space.REAL:
            raise SpaceTagError("forward transform needs a real-space field")
        return field.replace(sfft.fftn(field.values, axes=_axes(field), norm="ortho"), Space.MOMENTUM)
    if field.space is not Space.MOMENTUM:
        raise SpaceTagError("inverse transform needs a momentum-space field")
    return field.replace(sfft.ifftn(field.values, axes=_axes(field), norm="ortho"), Space.REAL)


# --- reductions -----------------------------------------------------------

def vdot(a: np.ndarray, b: np.ndarray) -> complex:
    """sum(conj(a) * b) with double-precision accumulation."""
    if a.dtype.itemsize * (1 if np.iscomplexobj(a) else 2) >= 16 or a.ndim < 3:
        if b.dtype.itemsize * (1 if np.iscomplexobj(b) else 2) >= 16 or b.ndim < 3:
            return complex(np.vdot(a.reshape(-1), b.reshape(-1)))
    a3 = a.reshape((-1,) + a.shape[-2:])
    b3 = b.reshape((-1,) + b.shape[-2:])
    total = 0j
    for i in range(0, a3.shape[0], SLAB):
        total += np.vdot(a3[i:i + SLAB].astype(np.complex128).reshape(-1),
                         b3[i:i + SLAB].astype(np.complex128).reshape(-1))
    return complex(total)


def sq_norm(a: np.ndarray) -> float:
    if a.dtype in (np.float64, np.complex128):
        if np.iscomplexobj(a):
            v = a.reshape(-1).view(np.float64)
            return float(v @ v)
        v = a.reshape(-1)
        return float(v @ v)
    return vdot(a, a).real


def inner_product(a, b) -> complex:
    _check_compatible(a, b)
    return vdot(a.values, b.values) * a.grid.cell_volume


def norm(a) -> float:
    return math.sqrt(sq_norm(a.values) * a.grid.cell_volume)


def normalize(a):
    nrm = norm(a)
    if nrm == 0:
        raise ValueError("cannot normalize a zero field")
    return a.replace(a.values / nrm)


# --- Green's operators ----------------------------------------------------

@lru_cache(maxsize=4)
def momentum_squared(n: int, box: float, half: bool = False) -> np.ndarray:
    """|p|^2 on the FFT grid; ``half`` gives the rfft layout (last axis n//2+1)."""
    h = box / n
    p = 2.0 * np.pi * sfft.fftfreq(n, d=h)
    px = 2.0 * np.pi * sfft.rfftfreq(n, d=h) if half else p
    out = (p**2)[:, None, None] + (p**2)[None, :, None] + (px**2)[None, None, :]
    out.setflags(write=False)
    return out


def _greens_periodic(values: np.ndarray, grid: Grid, param: float) -> np.ndarray:
    if np.iscomplexobj(values):
        spec = sfft.fftn(values, axes=(-3, -2, -1))
        spec /= param**2 + momentum_squared(grid.n, grid.box)
        return sfft.ifftn(spec, axes=(-3, -2, -1), overwrite_x=True)
    spec = sfft.rfftn(values, axes=(-3, -2, -1))
    spec /= param**2 + momentum_squared(grid.n, grid.box, half=True)
    return sfft.irfftn(spec, s=grid.shape, axes=(-3, -2, -1), overwrite_x=True)


@lru_cache(maxsize=4)
def _truncated_symbol(n: int, box: float, param: float):
    """Padded size and rfft-layout symbol of exp(-param r)/(4 pi r) cut off at the box diagonal.

    The padded period exceeds box + cutoff, so no periodic image of the cut
    kernel reaches the original box and the convolution is free-space.
    """
    h = box / n
    cutoff = math.sqrt(3.0) * box
    m = sfft.next_fast_len(n + int(math.ceil(cutoff / h)) + 1, real=True)
    m += m % 2
    p2 = momentum_squared(m, m * h, half=True)
    p = np.sqrt(p2)
    decay = math.exp(-param * cutoff)
    with np.errstate(invalid="ignore", divide="ignore"):
        sinc_term = np.where(p > 0, param * np.sin(p * cutoff) / p, param * cutoff)
    sym = (1.0 - decay * (np.cos(p * cutoff) + sinc_term)) / (param**2 + p2)
    sym.setflags(write=False)
    return m, sym


def _greens_padded(values: np.ndarray, grid: Grid, param: float) -> np.ndarray:
    n = grid.n
    m, sym = _truncated_symbol(n, grid.box, param)
    lead = values.shape[:-3]
    padded = np.zeros(lead + (m, m, m), dtype=values.dtype)
    padded[..., :n, :n, :n] = values
    if np.iscomplexobj(values):
        parts = [_padded_real(padded.real, sym, m), _padded_real(padded.imag, sym, m)]
        out = parts[0] + 1j * parts[1]
    else:
        out = _padded_real(padded, sym, m)
    return np.ascontiguousarray(out[..., :n, :n, :n])


def _padded_real(padded: np.ndarray, sym: np.ndarray, m: int) -> np.ndarray:
    spec = sfft.rfftn(padded, axes=(-3, -2, -1))
    spec *= sym
    return sfft.irfftn(spec, s=(m, m, m), axes=(-3, -2, -1), overwrite_x=True)


def bandlimited_gaussian(x, a: float, cutoff: float) -> np.ndarray:
    """exp(-a x^2) with its Fourier transform restricted to |k| <= cutoff."""
    x = np.asarray(x, dtype=float)
    sa = math.sqrt(a)
    z = 1j * cutoff / (2.0 * sa) - sa * x
    tail = np.exp(-cutoff**2 / (4.0 * a) - 1j * cutoff * x) * wofz(z)
    return np.real(np.exp(-a * x**2) - tail)


_SEPARATED_EPS = 1e-8
_KERNEL_FLOOR = 1e-14


@lru_cache(maxsize=8)
def _separated_factors(n: int, box: float, param: float):
    """Weights and 1D Toeplitz factors for the separated Green's operator.

    Terms whose 1D factor is diagonal to working precision are folded into a
    single multiple of the identity.
    """
    grid = Grid(n, box)
    h = grid.spacing
    gsum = build_helmholtz_sum(param, _SEPARATED_EPS, 1e-6, 2.0 * grid.diagonal)
    offsets = h * np.arange(-(n - 1), n)
    j = np.arange(n)
    idx = j[:, None] - j[None, :] + (n - 1)
    diag_coef = 0.0
    weights, mats = [], []
    for w, e in gsum.terms:
        k = h * bandlimited_gaussian(offsets, e, np.pi / h)
        k[np.abs(k) < _KERNEL_FLOOR * np.abs(k).max()] = 0.0
        off = np.abs(np.delete(k, n - 1)).max()
        if off <= 1e-17 * abs(k[n - 1]):
            diag_coef += w * k[n - 1] ** 3
        else:
            weights.append(w)
            mats.append(k[idx])
    return diag_coef, np.array(weights), mats


def _greens_separated(values: np.ndarray, grid: Grid, param: float) -> np.ndarray:
    diag_coef, weights, mats = _separated_factors(grid.n, grid.box, float(param))
    lead = values.shape[:-3]
    f = values.reshape((-1,) + grid.shape)
    out = diag_coef * f.astype(np.result_type(f.dtype, np.float64))
    for w, m in zip(weights, mats):
        t = np.einsum("ij,bzyj->bzyi", m, f, optimize=True)
        t = np.einsum("ij,bzjx->bzix", m, t, optimize=True)
        t = np.einsum("ij,bjyx->biyx", m, t, optimize=True)
        out += w * t
    return out.reshape(lead + grid.shape)


_GREENS_METHODS = {
    "padded": _greens_padded,
    "periodic": _greens_periodic,
    "separated": _greens_separated,
}


def greens_values(values: np.ndarray, grid: Grid, param: float, method: str = "padded") -> np.ndarray:
    if not param > 0:
        raise ValueError(f"Green's parameter must be positive, got {param}")
    try:
        fn = _GREENS_METHODS[method]
    except KeyError:
        raise ValueError(f"unknown Green's method {method!r}; choose from {sorted(_GREENS_METHODS)}")
    return fn(values, grid, float(param))


def apply_greens_scalar(field: ScalarField, param: float, method: str = "padded") -> ScalarField:
    """Convolution with exp(-param r) / (4 pi r).

    ``padded`` embeds the field in a doubled box so periodic images are a
    full box length away; ``periodic`` uses the grid as is; ``separated``
    applies a Gaussian expansion of the kernel axis by axis in free space.
    """
    if field.space is not Space.REAL:
        raise SpaceTagError("Green's operator expects a real-space field")
    return field.replace(greens_values(field.values, field.grid, param, method))


def apply_greens_spinor(field: SpinorField, kappa: float, method: str = "padded") -> SpinorField:
    if field.space is not Space.REAL:
        raise SpaceTagError("Green's operator expects a real-space field")
    return field.replace(greens_values(field.values, field.grid, kappa, method))


# --- binary dumps ---------------------------------------------------------

def save_field(field, path) -> None:
    path = Path(path)
    count = 4 if isinstance(field, SpinorField) else 1
    header = MAGIC + struct.pack("<IdIB", field.grid.n, field.grid.box, count, int(field.space))
    data = np.ascontiguousarray(field.values, dtype="<c16")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())
    tmp.replace(path)


def load_field(path):
    raw = Path(path).read_bytes()
    if raw[:6] != MAGIC:
        raise ValueError(f"{path}: not a field dump")
    n, box, count, tag = struct.unpack_from("<IdIB", raw, 6)
    offset = 6 + struct.calcsize("<IdIB")
    grid = Grid(n, box)
    expected = count * n**3 * 16
    if len(raw) - offset != expected:
        raise ValueError(f"{path}: expected {expected} data bytes, found {len(raw) - offset}")
    values = np.frombuffer(raw, dtype="<c16", offset=offset).astype(np.complex128)
    if count == 1:
        return ScalarField(grid, values, Space(tag))
    if count == 4:
        return SpinorField(grid, values, Space(tag))
    raise ValueError(f"{path}: unsupported component count {count}")


def _band_indices(n_keep: int, n_total: int) -> np.ndarray:
    """FFT-order indices of frequencies |k| < n_keep/2 inside an n_total grid."""
    half = n_keep // 2
    return np.r_[0:half, n_total - half + 1:n_total]


def resample(field, grid: Grid):
    """Band-limited (Fourier) interpolation onto another grid with the same box.

    Only frequencies strictly inside both Nyquist limits are carried over, so
    parity about the origin node is preserved exactly.
    """
    if grid.box != field.grid.box:
        raise GridMismatchError("resampling requires the same box length")
    if field.space is not Space.REAL:
        raise SpaceTagError("resample expects a real-space field")
    n_old, n_new = field.grid.n, grid.n
    keep = min(n_old, n_new)
    src_idx = _band_indices(keep, n_old)
    dst_idx = _band_indices(keep, n_new)
    scale = (n_new / n_old) ** 1.5
    vals = field.values
    lead = vals.shape[:-3]
    flat = vals.reshape((-1,) + field.grid.shape)
    out_dtype = np.result_type(vals.dtype, np.complex64)
    out = np.empty((flat.shape[0],) + grid.shape, dtype=out_dtype)
    for i in range(flat.shape[0]):
        spec = sfft.fftn(flat[i], norm="ortho")
        big = np.zeros(grid.shape, dtype=np.complex128)
        big[np.ix_(dst_idx, dst_idx, dst_idx)] = spec[np.ix_(src_idx, src_idx, src_idx)]
        out[i] = sfft.ifftn(big, norm="ortho", overwrite_x=True) * scale
    out = out.reshape(lead + grid.shape)
    if not np.iscomplexobj(vals):
        out = out.real.copy()
    return field.replace(out) if field.grid == grid else type(field)(grid, out, field.space)
