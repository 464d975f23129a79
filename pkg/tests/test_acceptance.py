"""Acceptance runs: one test and one PASS/FAIL line per criterion.

The grid runs are slow (about 20 minutes in total on one core); the
Dirac states at n=160 come from the shipped suite configs so the CLI path is
exercised end to end.
"""
import csv
import gc
import math
from pathlib import Path

import numpy as np
import pytest

from boundstate import analysis as A
from boundstate import cli
from boundstate import dirac as D
from boundstate import schrodinger as S
from boundstate.constants import ATOMIC_UNITS
from boundstate.fields import Grid, load_field, resample
from boundstate.kernels import build_helmholtz_sum, build_power_sum, max_relative_error
from boundstate.potential import assemble, hydrogen_like
from conftest import CRITERIA

pytestmark = pytest.mark.slow

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
BOX = 40.0
EXACT = -0.500006656
# e^-r underflows to zero past r ~ 745, so relative error is undefined beyond this
HELMHOLTZ_REACH = 700.0


def record(num: int, title: str, ok: bool, detail: str):
    line = f"CRITERION {num:2d} {'PASS' if ok else 'FAIL'} {title}: {detail}"
    CRITERIA[num] = line
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def potentials():
    return {n: assemble(hydrogen_like(1.0, sampling="band"), Grid(n, BOX)) for n in (160,)}


def schrodinger_lambda(V, mu, tol=1e-10, start=None):
    grid = V.grid
    psi = S.hydrogenic_guess(grid) if start is None else start
    state = S.power_iterate(S.SchrodingerState(mu=mu, psi=psi), V, 500, tol)
    assert state.converged, f"power iteration at mu={mu} stalled at residual {state.residual:.2e}"
    return state


@pytest.fixture(scope="module")
def lambda_scan(potentials):
    """lambda(mu) on the n=160 grid, warm-started along the scan."""
    V = potentials[160]
    out, psi = {}, None
    for mu in (0.5, 0.75, 0.8, 1.0, 1.25, 1.5, 2.0):
        state = schrodinger_lambda(V, mu, start=psi)
        out[mu] = state
        psi = state.psi
    return out


@pytest.fixture(scope="module")
def dirac_suite(tmp_path_factory):
    out = tmp_path_factory.mktemp("dirac_suite")
    paths = sorted(CONFIGS.glob("dirac_*.cfg"))
    report = cli.run_suite(paths, out)
    return report, out


def test_c01_kernel_certification():
    p = build_power_sum(1.0, 1e-6, 1e-6, 1e6)
    ep = max_relative_error(p, 10_000)
    h = build_helmholtz_sum(1.0, 1e-6, 1e-6, HELMHOLTZ_REACH)
    eh = max_relative_error(h, 10_000)
    with pytest.raises(ValueError, match="underflow"):
        build_helmholtz_sum(1.0, 1e-6, 1e-6, 1e6)
    ok = ep <= 1e-6 and eh <= 1e-6
    record(1, "kernel certification", ok,
           f"power [1e-6,1e6] {len(p)} terms err {ep:.2e}; helmholtz k=1 [1e-6,{HELMHOLTZ_REACH:g}] "
           f"{len(h)} terms err {eh:.2e}; [1e-6,1e6] refused (e^-r underflow)")


def test_c02_hilbert_schmidt():
    worst, scaling = 0.0, 0.0
    for d in (0.125, 0.25, 0.5):
        base = A.hs_norm_analytic(d, 1.0)
        for k in (0.5, 1.0, 2.0):
            num = A.hs_norm_numeric(d, k)
            worst = max(worst, abs(num / A.hs_norm_analytic(d, k) - 1))
            scaling = max(scaling, abs(A.hs_norm_analytic(d, k) / (base * k ** (-2 * d)) - 1))
    mc = A.hs_norm_monte_carlo(0.5, 1.0, samples=10_000_000, seed=0)
    exact = A.hs_norm_analytic(0.5, 1.0)
    z = abs(mc.norm - exact) / mc.norm_stderr
    ok = worst <= 1e-3 and scaling <= 1e-12 and z <= 3.0
    record(2, "Hilbert-Schmidt closed form", ok,
           f"max quadrature deviation {worst:.2e}; scaling deviation {scaling:.1e}; "
           f"Monte Carlo {mc.norm:.5f} +- {mc.norm_stderr:.5f} vs {exact:.5f} ({z:.2f} SE)")


def test_c03_nonrelativistic_hydrogen(potentials, lambda_scan):
    V160 = potentials[160]
    s160 = S.newton_mu(lambda_scan[1.0], V160, tol_lambda=1e-10, tol=1e-10)
    err160 = abs(s160.energy + 0.5)
    grid320 = Grid(320, BOX)
    V320 = assemble(hydrogen_like(1.0, sampling="band"), grid320)
    warm = S.SchrodingerState(mu=s160.mu, psi=resample(s160.psi, grid320))
    s320 = S.newton_mu(S.power_iterate(warm, V320, 500, 1e-10), V320, tol_lambda=1e-10, tol=1e-10)
    err320 = abs(s320.energy + 0.5)
    del V320, warm
    gc.collect()
    mus = (0.5, 0.75, 1.0, 1.5, 2.0)
    lams = [lambda_scan[m].lam for m in mus]
    positive = all(l > 0 for l in lams)
    decreasing = all(a > b for a, b in zip(lams, lams[1:]))
    ok = s160.converged and s320.converged and err160 <= 2e-3 and err320 < err160 and positive and decreasing
    record(3, "non-relativistic hydrogen", ok,
           f"E160 {s160.energy:.10f} (err {err160:.2e}), E320 {s320.energy:.10f} (err {err320:.2e}); "
           f"lambda over mu {[round(l, 6) for l in lams]}")


def test_c04_derivatives(lambda_scan, potentials, dirac_suite):
    V = potentials[160]
    s1 = lambda_scan[1.0]
    h = 1e-4
    plus = schrodinger_lambda(V, 1.0 + h, start=s1.psi).lam
    minus = schrodinger_lambda(V, 1.0 - h, start=s1.psi).lam
    fd_mu = (plus - minus) / (2 * h)
    an_mu = S.dlambda_dmu(s1, V)
    rel_mu = abs(an_mu / fd_mu - 1)

    _, out = dirac_suite
    psi = load_field(out / "dirac_standard.field")
    kappa = D.kappa_from_shifted(-0.5)
    state = D.power_iterate_dirac(D.initial_dirac_state(psi, kappa), V, 200, 1e-10)
    del psi
    an_k = D.dlambda_dkappa(state, V)
    fd_k = D.dlambda_dkappa_fd(state, V, rel_step=1e-4)
    rel_k = abs(an_k / fd_k - 1)
    del state
    gc.collect()
    ok = rel_mu <= 1e-3 and rel_k <= 1e-3
    record(4, "derivative formulas", ok,
           f"dlambda/dmu {an_mu:.8f} vs fd {fd_mu:.8f} (rel {rel_mu:.1e}); "
           f"dlambda/dkappa {an_k:.8f} vs fd {fd_k:.8f} (rel {rel_k:.1e})")


def swapped_growth(csv_path, floor=1e-13, ceiling=0.5):
    """Projection trace from the first value above the rounding floor until it saturates."""
    with open(csv_path) as fh:
        proj = [float(r["projection"]) for r in csv.DictReader(fh) if r["projection"]]
    first = next(i for i, p in enumerate(proj) if p >= floor)
    end = next((i for i in range(first, len(proj)) if proj[i] > ceiling), len(proj))
    seg = proj[first:end + 1]
    ratios = np.array(seg[1:]) / np.array(seg[:-1])
    return seg, ratios


def test_c05_dirac_guess_robustness(dirac_suite):
    report, out = dirac_suite
    rows = {r.name: r for r in report.results}
    names = ("dirac_standard", "dirac_swapped", "dirac_random", "dirac_gaussian")
    converged = all(rows[n].status == cli.EXIT_OK and rows[n].iterations <= 100 for n in names)
    energies = np.array([rows[n].energy for n in names])
    spread = float(np.max(np.abs(energies[:, None] - energies[None, :])) / abs(energies.mean()))
    seg, ratios = swapped_growth(out / "dirac_swapped.csv")
    monotone = bool(np.all(ratios > 1.0)) and len(seg) >= 3
    growth = float(np.median(ratios)) if ratios.size else math.nan
    ok = converged and spread <= 1e-6 and monotone and growth >= 1.5
    iters = ", ".join(f"{n.split('_')[1]} {rows[n].iterations}" for n in names)
    record(5, "Dirac guess robustness", ok,
           f"iterations {iters}; energy spread {spread:.1e}; growth phase {len(seg)} steps from "
           f"{seg[0]:.1e}, monotone {monotone}, median factor {growth:.2f}")


def test_c06_relativistic_reference(dirac_suite, potentials):
    exact = A.exact_dirac_energy(1.0)
    ref_ok = abs(exact - EXACT) <= 1e-8

    _, out = dirac_suite
    V160 = potentials[160]
    psi = load_field(out / "dirac_standard.field")
    state = D.initial_dirac_state(psi, D.kappa_from_shifted(-0.5))
    del psi
    s160 = D.newton_kappa(state, V160, tol_lambda=1e-9, max_iters=200, tol=1e-10)
    err160 = abs(s160.energy - exact)
    kappa = s160.kappa
    psi = s160.psi.replace(s160.psi.values.astype(np.complex64))
    del state, s160
    gc.collect()

    # single precision keeps the n=320 spinor and its work arrays inside a few GB
    grid320 = Grid(320, BOX)
    big = resample(psi, grid320)
    del psi
    V320 = assemble(hydrogen_like(1.0, sampling="band"), grid320)
    s320 = D.initial_dirac_state(big, kappa, precision="single")
    del big
    s320 = D.newton_kappa(s320, V320, tol_lambda=1e-7, max_iters=60, tol=1e-5)
    err320 = abs(s320.energy - exact)
    conv320 = s320.converged
    e320 = s320.energy
    del s320, V320
    gc.collect()
    ok = ref_ok and conv320 and err320 < err160
    record(6, "exact relativistic reference", ok,
           f"reference {exact:.12f}; Newton E160 err {err160:.2e}, E320 err {err320:.2e} "
           f"(E320 {e320:.9f}, single precision)")


def test_c07_radial_oracle(lambda_scan):
    diffs = {}
    for mu in (0.8, 1.0, 1.25):
        oracle, _ = A.radial_oracle_lambda(mu, 1.0, BOX, 4000)
        diffs[mu] = abs(lambda_scan[mu].lam - oracle)
    worst = max(diffs.values())
    record(7, "oracle equivalence", worst <= 1e-3,
           "; ".join(f"mu={mu}: {lambda_scan[mu].lam:.7f} vs diff {d:.1e}" for mu, d in diffs.items()))


def test_c08_product_spectra():
    two, three = A.product_spectrum_examples()
    ok = (np.allclose(two.eigenvalues, [-1j, 1j], atol=1e-14)
          and np.allclose(three.eigenvalues, [-1, -1, 1], atol=1e-14)
          and np.allclose(two.b_forms, 0, atol=1e-14)
          and bool(np.all(np.abs(three.b_forms) > 1e-8)))
    record(8, "product spectra", ok,
           f"{np.round(two.eigenvalues, 14)} with <x,Bx> {np.round(np.abs(two.b_forms), 14)}; "
           f"{np.round(three.eigenvalues.real, 14)} with <x,Bx> {np.round(three.b_forms.real, 6)}")


def test_c09_bound_saturation():
    kappa = D.kappa_from_shifted(-0.5)
    rep = A.operator_bounds_check(kappa, samples=1000, seed=0)
    sat = [r for _, r in rep.saturation]
    approaching = all(b > a for a, b in zip(sat, sat[1:])) and abs(sat[-1] - 1) < 1e-12
    rest = A.diagonal_ratio_at_rest(kappa, rep.E)
    ok = rep.violations == 0 and approaching
    record(9, "operator bound saturation", ok,
           f"{rep.violations} violations over {rep.samples} spinors; off-diagonal max "
           f"{rep.max_ratio_offdiag * ATOMIC_UNITS.hbar_c:.4f}/(hbar c); saturation "
           f"{[f'{r:.12f}' for r in sat]}; diagonal at rest {rest / rep.bound_diag_printed:.2f}x printed constant")


def test_c10_integrability_threshold():
    lo = A.cusp_tail_integrability(1.0, 0.25)
    hi = A.cusp_tail_integrability(1.0, 0.75)
    ok = lo.converges and not hi.converges
    record(10, "integrability threshold", ok,
           f"delta 0.25 tail slope {lo.tail_slope:.3f} (partial sum {lo.partial_sums[-1]:.6g}); "
           f"delta 0.75 tail slope {hi.tail_slope:.3f} (partial sum {hi.partial_sums[-1]:.3e})")
