import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.special import erf

from boundstate.fields import Grid, ScalarField, inner_product
from boundstate.potential import (Nucleus, PotentialSpec, assemble, hydrogen_like, make_negative_definite,
                                  required_shift)


@pytest.fixture(scope="module")
def grid():
    return Grid(32, 16.0)


def coulomb_gaussian_overlap(a, d):
    """Integral of exp(-a |r - d|^2) / |r| over R^3."""
    if d == 0:
        return 2 * math.pi / a
    return (math.pi / a) ** 1.5 * erf(math.sqrt(a) * d) / d


def test_point_sampling_reproduces_coulomb(grid):
    V = assemble(hydrogen_like(2.0), grid).values
    r = grid.radius()
    off = r > 0
    np.testing.assert_allclose(V[off] * r[off] / 2.0, -1.0, rtol=1e-6)
    assert np.isfinite(V).all() and V[16, 16, 16] < V[16, 16, 17]


@pytest.mark.parametrize("center", [(0.0, 0.0, 0.0), (0.3, -0.2, 0.1)])
def test_band_sampling_exact_against_resolved_densities(grid, center):
    V = assemble(hydrogen_like(1.0, center, sampling="band"), grid)
    rho = ScalarField(grid, np.exp(-0.5 * grid.radius() ** 2))
    expected = -coulomb_gaussian_overlap(0.5, math.dist(center, (0, 0, 0)))
    assert inner_product(rho, V).real == pytest.approx(expected, rel=1e-6)


def test_band_sampling_is_finite_at_nucleus(grid):
    V = assemble(hydrogen_like(1.0, sampling="band"), grid).values
    # the band-limited 1/r peaks at a finite multiple of 1/spacing
    assert np.isfinite(V).all() and -20.0 < V.min() < -1.0


def test_superposition_and_shift(grid):
    a = Nucleus(1.0, (1.0, 0.0, 0.0))
    b = Nucleus(3.0, (-2.0, 0.5, 0.0))
    both = assemble(PotentialSpec((a, b), shift_tau=0.25), grid).values
    parts = assemble(PotentialSpec((a,)), grid).values + assemble(PotentialSpec((b,)), grid).values
    np.testing.assert_allclose(both, parts - 0.25, rtol=1e-12)
    assert np.all(assemble(PotentialSpec((), shift_tau=0.5), grid).values == -0.5)


def test_negative_definite_shift(grid):
    spec = hydrogen_like(1.0, sampling="band")
    shifted = make_negative_definite(spec, grid)
    assert shifted.shift_tau == 0.0  # attraction alone is already negative
    assert make_negative_definite(replace(spec, shift_tau=3.0), grid).shift_tau == 0.0
    bumped = ScalarField(grid, np.full(grid.shape, -1.0))
    bumped.values[0, 0, 0] = 0.75
    tau = required_shift(bumped)
    assert tau > 0.75 and np.max(bumped.values - tau) < 0


@pytest.mark.parametrize("bad", [
    lambda: Nucleus(0.0),
    lambda: Nucleus(140.0),
    lambda: Nucleus(1.0, (0.0, 0.0)),
    lambda: PotentialSpec(epsilon_reg=0.1),
    lambda: PotentialSpec(shift_tau=-1.0),
    lambda: PotentialSpec(sampling="cubic"),
])
def test_rejects_bad_specs(bad):
    with pytest.raises(ValueError):
        bad()


def test_rejects_nucleus_outside_box(grid):
    with pytest.raises(ValueError):
        assemble(hydrogen_like(1.0, (9.0, 0.0, 0.0)), grid)
