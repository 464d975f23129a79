import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import erfcx

from boundstate.errors import GridMismatchError, SpaceTagError
from boundstate.fields import (Direction, Grid, ScalarField, Space, SpinorField, apply_greens_scalar,
                               apply_greens_spinor, bandlimited_gaussian, inner_product, load_field, norm,
                               normalize, resample, save_field, transform)


def yukawa_of_gaussian(r, a, kappa):
    """Closed form of (exp(-kappa r)/(4 pi r)) convolved with exp(-a r^2)."""
    s = math.sqrt(a)
    b = kappa / (2 * s)
    # e^{k^2/4a}[e^{-kr} erfc(b - s r) - e^{kr} erfc(b + s r)], rewritten with erfcx
    lead = np.where(b - s * r > 0, np.exp(-a * r * r) * erfcx(np.abs(b - s * r)),
                    np.exp(kappa**2 / (4 * a) - kappa * r)
                    * (2 - erfcx(np.abs(s * r - b)) * np.exp(-(s * r - b) ** 2)))
    tail = np.exp(-a * r * r) * erfcx(b + s * r)
    return (math.pi / a) ** 1.5 / (8 * math.pi * r) * (lead - tail)


def test_yukawa_oracle_frozen_values():
    # checked against an independent 1D Fourier-Bessel quadrature
    assert yukawa_of_gaussian(np.array(1.0), 0.5, 1.0) == pytest.approx(0.2523000469552264, rel=1e-13)
    assert yukawa_of_gaussian(np.array(6.0), 2.0, 0.3) == pytest.approx(0.004364901489292264, rel=1e-12)


@pytest.fixture(scope="module")
def grid():
    return Grid(32, 16.0)


@pytest.fixture(scope="module")
def gaussian(grid):
    return ScalarField(grid, np.exp(-0.5 * grid.radius() ** 2))


@pytest.mark.parametrize("n", [15, 17, 8, 0])
def test_grid_rejects_bad_sizes(n):
    with pytest.raises(ValueError):
        Grid(n, 10.0)


def test_grid_geometry(grid):
    x = grid.coords()
    assert x[grid.n // 2] == 0.0
    assert x[0] == -8.0 and x[-1] == pytest.approx(8.0 - grid.spacing)
    assert grid.cell_volume == pytest.approx(0.125)
    assert grid.contains((0, 0, 0)) and not grid.contains((8.0, 0, 0))
    assert grid.radius()[16, 16, 16] == 0.0


def test_flat_is_x_fastest(grid):
    vals = np.zeros(grid.shape)
    vals[0, 0, 1] = 1.0
    assert ScalarField(grid, vals).flat[1] == 1.0


def test_gaussian_norm(grid, gaussian):
    # integral of exp(-r^2) over R^3 is pi^{3/2}
    assert norm(gaussian) ** 2 == pytest.approx(math.pi**1.5, rel=1e-12)


def test_transform_roundtrip_and_unitarity(grid, rng):
    f = ScalarField(grid, rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape))
    g = transform(f, Direction.FORWARD)
    assert g.space is Space.MOMENTUM
    assert norm(g) == pytest.approx(norm(f), rel=1e-13)
    back = transform(g, "inverse")
    np.testing.assert_allclose(back.values, f.values, atol=1e-13)
    with pytest.raises(SpaceTagError):
        transform(f, Direction.INVERSE)
    with pytest.raises(SpaceTagError):
        transform(g, Direction.FORWARD)


def test_mixing_fields_is_rejected(grid):
    a = ScalarField(grid, np.ones(grid.shape))
    b = ScalarField(Grid(16, 16.0), np.ones((16, 16, 16)))
    with pytest.raises(GridMismatchError):
        inner_product(a, b)
    with pytest.raises(SpaceTagError):
        a + a.replace(a.values, Space.MOMENTUM)


@pytest.mark.parametrize("method", ["padded", "separated"])
@pytest.mark.parametrize("kappa", [1.0, 0.3])
def test_greens_matches_closed_form(grid, gaussian, method, kappa):
    out = apply_greens_scalar(gaussian, kappa, method)
    r = grid.radius()
    mask = (r > 0) & (r < 6)
    exact = yukawa_of_gaussian(r[mask], 0.5, kappa)
    np.testing.assert_allclose(out.values.real[mask], exact, rtol=1e-6, atol=1e-9)


def test_periodic_images_fade_with_kappa(grid, gaussian):
    gaps = []
    for kappa in (0.5, 1.0, 2.0):
        free = apply_greens_scalar(gaussian, kappa, "padded").values
        periodic = apply_greens_scalar(gaussian, kappa, "periodic").values
        gaps.append(np.max(np.abs(free - periodic)) / np.max(np.abs(free)))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-6


def test_padded_and_separated_agree_for_slow_decay(grid, gaussian):
    a = apply_greens_scalar(gaussian, 0.05, "padded").values
    b = apply_greens_scalar(gaussian, 0.05, "separated").values
    assert np.max(np.abs(a - b)) <= 1e-6 * np.max(np.abs(b))


def test_greens_spinor_acts_componentwise(grid, gaussian):
    psi = SpinorField.from_components([gaussian, 2 * gaussian, 0 * gaussian, -1 * gaussian])
    out = apply_greens_spinor(psi, 1.0)
    single = apply_greens_scalar(gaussian, 1.0)
    for k, c in enumerate((1, 2, 0, -1)):
        np.testing.assert_allclose(out.values[k], c * single.values, atol=1e-14)


def test_bandlimited_gaussian_limits():
    x = np.linspace(-3, 3, 13)
    # a cutoff far above the Gaussian's spectrum changes nothing
    np.testing.assert_allclose(bandlimited_gaussian(x, 1.0, 50.0), np.exp(-x**2), atol=1e-15)
    # a low cutoff visibly smooths the peak
    assert bandlimited_gaussian(np.array([0.0]), 100.0, 2.0)[0] < 0.5


def test_field_save_load(tmp_path, grid, rng):
    f = SpinorField(grid, rng.normal(size=(4,) + grid.shape) + 0j, Space.MOMENTUM)
    save_field(f, tmp_path / "psi.field")
    back = load_field(tmp_path / "psi.field")
    assert isinstance(back, SpinorField) and back.grid == grid and back.space is Space.MOMENTUM
    np.testing.assert_array_equal(back.values, f.values)
    s = ScalarField(grid, rng.normal(size=grid.shape))
    save_field(s, tmp_path / "v.field")
    assert isinstance(load_field(tmp_path / "v.field"), ScalarField)


def test_load_rejects_garbage(tmp_path):
    p = tmp_path / "junk.field"
    p.write_bytes(b"not a field")
    with pytest.raises(ValueError):
        load_field(p)


def test_resample_preserves_band_limited_fields(grid, gaussian):
    fine = Grid(48, 16.0)
    up = resample(gaussian, fine)
    np.testing.assert_allclose(up.values.real, np.exp(-0.5 * fine.radius() ** 2), atol=1e-8)
    down = resample(up, grid)
    np.testing.assert_allclose(down.values.real, gaussian.values, atol=1e-8)


@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(1e-3, 1e3))
def test_normalize_is_scale_invariant(seed, scale):
    g = Grid(16, 8.0)
    vals = np.random.default_rng(seed).normal(size=g.shape)
    a = normalize(ScalarField(g, vals))
    b = normalize(ScalarField(g, scale * vals))
    assert norm(a) == pytest.approx(1.0)
    np.testing.assert_allclose(a.values, b.values, rtol=1e-12, atol=1e-15)
