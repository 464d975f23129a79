"""Config-driven runner: `boundstate run`, `boundstate suite`, `boundstate verify`."""
from __future__ import annotations

import argparse
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
import io
import logging
import math
import os
from pathlib import Path
import re
import sys
import time

import numpy as np

from .errors import BoundStateError, ConfigError
from .fields import Grid, ScalarField, SpinorField, load_field, normalize, save_field
from .potential import Nucleus, PotentialSpec, assemble, make_negative_definite

log = logging.getLogger("boundstate")

EXIT_OK, EXIT_ERROR, EXIT_MAXITER = 0, 1, 2
PAPER_BOX = 100.0

SCHRODINGER_COLUMNS = ("iter", "lambda", "energy", "residual", "projection")
DIRAC_COLUMNS = ("iter", "lambda_re", "lambda_im", "energy_shifted", "residual", "projection")


@dataclass
class RunConfig:
    mode: str
    nuclei: list[tuple[float, tuple[float, float, float]]]
    box: float = 40.0
    n: int = 160
    epsilon_kernel: float = 1e-6
    parameter0: float | None = None  # mu0 (schrodinger) or shifted energy E0 (dirac)
    fix_parameter: bool = False
    newton: bool | None = None
    max_iters: int | None = None
    tol: float = 1e-8
    tol_lambda: float = 1e-8
    max_newton: int = 50
    shift_tau: float | str = 0.0
    initial_guess: str = "standard"
    precision: str = "double"
    sampling: str = "band"
    greens: str = "periodic"
    reference: str | None = None
    dump: bool = False
    name: str = "run"
    source: str | None = None

    def __post_init__(self):
        if self.newton is None:
            self.newton = not self.fix_parameter
        if self.max_iters is None:
            self.max_iters = 100 if self.mode == "dirac" else 500
        if self.parameter0 is None:
            self.parameter0 = -0.5 if self.mode == "dirac" else 1.0

    @property
    def guess_kind(self) -> str:
        return parse_guess(self.initial_guess)[0]

    def validate(self, lines: dict | None = None) -> "RunConfig":
        lines = lines or {}

        def fail(key, msg):
            raise ConfigError(msg, line=lines.get(key), path=self.source)

        if self.mode not in ("schrodinger", "dirac"):
            fail("mode", f"mode must be 'schrodinger' or 'dirac', got {self.mode!r}")
        if not self.nuclei:
            fail("nucleus", "at least one 'nucleus = Z x y z' line is required")
        for key in ("box", "epsilon_kernel", "tol", "tol_lambda"):
            if not getattr(self, key) > 0:
                fail(key, f"{key} must be positive")
        if not (0 < self.epsilon_kernel <= 1e-2):
            fail("epsilon_kernel", "epsilon_kernel must lie in (0, 1e-2]")
        if self.n < 16 or self.n % 2:
            fail("n", "n must be an even integer >= 16")
        if self.max_iters <= 0 or self.max_newton <= 0:
            fail("max_iters", "iteration limits must be positive")
        if self.fix_parameter and self.newton:
            fail("newton", "fix_parameter = true contradicts newton = true")
        try:
            kind, _ = parse_guess(self.initial_guess)
        except ValueError as exc:
            fail("initial_guess", str(exc))
        if self.mode == "schrodinger" and kind in ("swapped", "gaussian"):
            fail("initial_guess", f"initial guess '{kind}' is only available in dirac mode")
        if self.mode == "schrodinger" and not self.parameter0 > 0:
            fail("parameter0", "schrodinger parameter0 is mu0 and must be positive")
        if self.mode == "dirac" and not self.parameter0 < 0:
            fail("parameter0", "dirac parameter0 is the shifted energy E0 and must be negative")
        if self.precision not in ("double", "single"):
            fail("precision", "precision must be 'double' or 'single'")
        if self.precision == "single" and self.mode != "dirac":
            fail("precision", "single precision is only supported in dirac mode")
        if self.sampling not in ("band", "point"):
            fail("sampling", "sampling must be 'band' or 'point'")
        if self.greens not in ("periodic", "padded", "separated"):
            fail("greens", "greens must be 'periodic', 'padded' or 'separated'")
        if self.mode == "dirac" and self.greens != "periodic":
            fail("greens", "dirac mode uses the periodic momentum symbol")
        if not (self.shift_tau == "auto" or (isinstance(self.shift_tau, float) and self.shift_tau >= 0)):
            fail("shift_tau", "shift_tau must be 'auto' or a non-negative number")
        for Z, pos in self.nuclei:
            try:
                Nucleus(Z, pos)
            except ValueError as exc:
                fail("nucleus", str(exc))
            if not Grid(self.n, self.box).contains(pos):
                fail("nucleus", f"nucleus at {pos} lies outside the box")
        if not re.fullmatch(r"[A-Za-z0-9_.-]+", self.name):
            fail("name", "name may only contain letters, digits, '_', '-' and '.'")
        return self


_GUESS_RE = re.compile(r"^(standard|swapped|random|gaussian)(?:\(\s*([^)]*)\s*\))?$")


def parse_guess(text: str):
    m = _GUESS_RE.match(text.strip())
    if not m:
        raise ValueError(f"unknown initial guess {text!r}; use standard, swapped, random(seed) or gaussian(exponent)")
    kind, arg = m.group(1), m.group(2)
    arg = arg.strip() if arg is not None else None
    if kind in ("standard", "swapped"):
        if arg:
            raise ValueError(f"initial guess '{kind}' takes no argument")
        return kind, None
    if kind == "random":
        if arg is None or not re.fullmatch(r"\d+", arg):
            raise ValueError("random guess needs a non-negative integer seed, e.g. random(7)")
        return kind, int(arg)
    if arg is None:
        raise ValueError("gaussian guess needs an exponent, e.g. gaussian(1e8)")
    value = float(arg)
    if not value > 0:
        raise ValueError("gaussian exponent must be positive")
    return kind, value


def _parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


_CONVERTERS = {
    "mode": str.strip, "box": float, "n": int, "epsilon_kernel": float, "parameter0": float,
    "fix_parameter": _parse_bool, "newton": _parse_bool, "max_iters": int, "tol": float,
    "tol_lambda": float, "max_newton": int, "initial_guess": str.strip, "precision": str.strip,
    "sampling": str.strip, "greens": str.strip, "reference": str.strip, "dump": _parse_bool,
    "name": str.strip,
}


def parse_config(text: str, source: str | None = None) -> RunConfig:
    """Parse flat `key = value` text; `#` starts a comment; nuclei as `nucleus = Z x y z`."""
    values: dict = {}
    lines: dict = {}
    nuclei = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=lineno, path=source)
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "nucleus":
            parts = value.split()
            if len(parts) != 4:
                raise ConfigError("nucleus needs 'Z x y z'", line=lineno, path=source)
            try:
                Z, x, y, z = (float(p) for p in parts)
            except ValueError:
                raise ConfigError(f"bad number in nucleus line {value!r}", line=lineno, path=source)
            nuclei.append((Z, (x, y, z)))
            lines.setdefault("nucleus", lineno)
            continue
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", line=lineno, path=source)
        if key == "shift_tau":
            conv = (lambda v: "auto" if v.strip().lower() == "auto" else float(v))
        elif key in _CONVERTERS:
            conv = _CONVERTERS[key]
        else:
            raise ConfigError(f"unknown key {key!r}", line=lineno, path=source)
        try:
            values[key] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", line=lineno, path=source)
        lines[key] = lineno
    if "mode" not in values:
        raise ConfigError("missing required key 'mode'", path=source)
    if source and "name" not in values:
        values["name"] = Path(source).stem
    cfg = RunConfig(nuclei=nuclei, source=source, **values)
    return cfg.validate(lines)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", path=str(path))
    return parse_config(text, str(path))


# --- running -------------------------------------------------------------

@dataclass
class RunResult:
    name: str
    mode: str
    status: int
    energy: float = math.nan
    lam: float = math.nan
    parameter: float = math.nan
    iterations: int = 0
    residual: float = math.nan
    wall_time: float = 0.0
    converged: bool = False
    message: str = ""
    outputs: list[str] = field(default_factory=list)

    def summary_text(self) -> str:
        keys = ("name", "mode", "status", "converged", "energy", "lam", "parameter", "iterations",
                "residual", "wall_time", "message")
        return "".join(f"{k} = {getattr(self, k)!r}\n" if isinstance(getattr(self, k), float)
                       else f"{k} = {getattr(self, k)}\n" for k in keys)


def _atomic_write(path: Path, data: str | bytes):
    tmp = path.with_name(path.name + ".tmp")
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
    tmp.replace(path)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def history_csv(history, mode: str) -> str:
    buf = io.StringIO()
    if mode == "dirac":
        buf.write(",".join(DIRAC_COLUMNS) + "\n")
        for r in history:
            buf.write(",".join(_fmt(v) for v in (r.iter, r.lam, r.lam_im, r.energy, r.residual, r.projection)) + "\n")
    else:
        buf.write(",".join(SCHRODINGER_COLUMNS) + "\n")
        for r in history:
            buf.write(",".join(_fmt(v) for v in (r.iter, r.lam, r.energy, r.residual, r.projection)) + "\n")
    return buf.getvalue()


def _potential(cfg: RunConfig, grid: Grid):
    spec = PotentialSpec(tuple(Nucleus(Z, pos) for Z, pos in cfg.nuclei), epsilon_reg=cfg.epsilon_kernel,
                         shift_tau=0.0 if cfg.shift_tau == "auto" else cfg.shift_tau, sampling=cfg.sampling)
    if cfg.shift_tau == "auto":
        spec = make_negative_definite(spec, grid)
    return spec, assemble(spec, grid)


def _load_reference(cfg: RunConfig, out_dir: Path, grid: Grid):
    if cfg.reference is None:
        return None
    path = Path(cfg.reference)
    if not path.is_absolute():
        candidates = [out_dir / path]
        if cfg.source:
            candidates.append(Path(cfg.source).parent / path)
        path = next((c for c in candidates if c.exists()), candidates[0])
    ref = load_field(path)
    if ref.grid != grid:
        raise ConfigError(f"reference field {path} was computed on {ref.grid}, run uses {grid}", path=cfg.source)
    return ref


def _solve_schrodinger(cfg, grid, V, spec, reference):
    from . import schrodinger as S
    Z, center = cfg.nuclei[0]
    kind, arg = parse_guess(cfg.initial_guess)
    if kind == "random":
        from .dirac import box_window
        rng = np.random.default_rng(arg)
        psi = normalize(ScalarField(grid, rng.uniform(0.0, 10.0, grid.shape) * box_window(grid)))
    else:
        psi = S.hydrogenic_guess(grid, center, Z)
    state = S.SchrodingerState(mu=cfg.parameter0, psi=psi, tau=spec.shift_tau)
    state = S.power_iterate(state, V, cfg.max_iters, cfg.tol, reference=reference, method=cfg.greens)
    if cfg.newton and state.converged:
        state = S.newton_mu(state, V, cfg.tol_lambda, cfg.max_newton, cfg.max_iters, cfg.tol, method=cfg.greens)
    return state, state.mu


def _dirac_guess(cfg, grid):
    from . import dirac as D
    Z, center = cfg.nuclei[0]
    kind, arg = parse_guess(cfg.initial_guess)
    if kind == "standard":
        return D.standard_guess(grid, Z, center)
    if kind == "swapped":
        return D.swapped_guess(grid, Z, center)
    if kind == "random":
        return D.random_guess(grid, arg)
    return D.gaussian_guess(grid, arg, center)


def _solve_dirac(cfg, grid, V, spec, reference):
    from . import dirac as D
    kappa = D.kappa_from_shifted(cfg.parameter0)
    refs = D.kramers_basis(reference) if isinstance(reference, SpinorField) else None
    state = D.initial_dirac_state(_dirac_guess(cfg, grid), kappa, tau=spec.shift_tau, precision=cfg.precision)
    state = D.power_iterate_dirac(state, V, cfg.max_iters, cfg.tol, reference=refs)
    if cfg.newton and state.converged:
        state = D.newton_kappa(state, V, cfg.tol_lambda, cfg.max_newton, cfg.max_iters, cfg.tol)
    return state, state.kappa


def execute(cfg: RunConfig, out_dir) -> RunResult:
    """Run one configuration; outputs are only written once the solve has finished."""
    out_dir = Path(out_dir)
    start = time.perf_counter()
    try:
        grid = Grid(cfg.n, cfg.box)
        reference = _load_reference(cfg, out_dir, grid)
        spec, V = _potential(cfg, grid)
        solve = _solve_dirac if cfg.mode == "dirac" else _solve_schrodinger
        state, param = solve(cfg, grid, V, spec, reference)
    except (BoundStateError, OSError, ValueError) as exc:
        log.error("%s: %s", cfg.name, exc)
        return RunResult(cfg.name, cfg.mode, EXIT_ERROR, message=str(exc), wall_time=time.perf_counter() - start)
    status = EXIT_OK if state.converged else EXIT_MAXITER
    result = RunResult(
        name=cfg.name, mode=cfg.mode, status=status, energy=float(state.energy), lam=float(state.lam),
        parameter=float(param), iterations=len(state.history), residual=float(state.residual),
        wall_time=time.perf_counter() - start, converged=bool(state.converged),
        message="converged" if state.converged else "iteration limit reached",
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{cfg.name}.csv"
    _atomic_write(csv_path, history_csv(state.history, cfg.mode))
    result.outputs.append(str(csv_path))
    if cfg.dump:
        dump_path = out_dir / f"{cfg.name}.field"
        save_field(state.psi, dump_path)
        result.outputs.append(str(dump_path))
    summary_path = out_dir / f"{cfg.name}.summary.txt"
    result.outputs.append(str(summary_path))
    _atomic_write(summary_path, result.summary_text())
    return result


def run(config_path, out_dir=".", seed: int | None = None, paper_box: bool = False) -> RunResult:
    try:
        cfg = load_config(config_path)
        cfg = apply_overrides(cfg, seed, paper_box)
    except ConfigError as exc:
        log.error("%s", exc)
        return RunResult(Path(config_path).stem, "?", EXIT_ERROR, message=str(exc))
    return execute(cfg, out_dir)


def apply_overrides(cfg: RunConfig, seed: int | None, paper_box: bool) -> RunConfig:
    if seed is not None and cfg.guess_kind == "random":
        cfg = replace(cfg, initial_guess=f"random({seed})")
    if paper_box:
        log.warning("using a %g Bohr box at n=%d: spacing %.3g, accuracy is coarser than the default grid",
                    PAPER_BOX, cfg.n, PAPER_BOX / cfg.n)
        cfg = replace(cfg, box=PAPER_BOX)
    return cfg.validate()


# --- suites ----------------------------------------------------------------

@dataclass
class SuiteReport:
    results: list[RunResult]
    energy_spread: dict[str, float]  # relative spread of final energies per (mode, parameter) group
    status: int

    def table(self) -> str:
        lines = ["name,mode,status,energy,lambda,parameter,iterations,residual,wall_time"]
        for r in self.results:
            lines.append(",".join([r.name, r.mode, str(r.status), _fmt(r.energy), _fmt(r.lam), _fmt(r.parameter),
                                   str(r.iterations), _fmt(r.residual), f"{r.wall_time:.3f}"]))
        for key, spread in self.energy_spread.items():
            lines.append(f"# spread {key} {spread!r}")
        return "\n".join(lines) + "\n"


def _suite_worker(args):
    cfg, out_dir = args
    return execute(cfg, out_dir)


def run_suite(paths, out_dir=".", seed: int | None = None, paper_box: bool = False, jobs: int = 1) -> SuiteReport:
    """Run configs and report per-run rows plus the final-energy spread of comparable runs.

    Configs that read a reference field run after the others so the field can
    come from an earlier run of the same suite.  Comparable runs share mode,
    fixed/optimised parameter and starting parameter.
    """
    out_dir = Path(out_dir)
    configs, results = [], []
    for p in paths:
        try:
            configs.append(apply_overrides(load_config(p), seed, paper_box))
        except ConfigError as exc:
            log.error("%s", exc)
            results.append(RunResult(Path(p).stem, "?", EXIT_ERROR, message=str(exc)))
    phases = [[c for c in configs if c.reference is None], [c for c in configs if c.reference is not None]]
    for phase in phases:
        if not phase:
            continue
        if jobs > 1 and len(phase) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results.extend(pool.map(_suite_worker, [(c, out_dir) for c in phase]))
        else:
            results.extend(execute(c, out_dir) for c in phase)
    groups: dict[str, list[float]] = {}
    by_name = {c.name: c for c in configs}
    for r in results:
        cfg = by_name.get(r.name)
        if cfg is None or r.status != EXIT_OK:
            continue
        key = f"{cfg.mode}:{'fixed' if cfg.fix_parameter else 'newton'}:{cfg.parameter0!r}"
        groups.setdefault(key, []).append(r.energy)
    spread = {k: (max(v) - min(v)) / abs(np.mean(v)) for k, v in groups.items() if len(v) > 1}
    status = EXIT_OK if all(r.status == EXIT_OK for r in results) else EXIT_MAXITER
    report = SuiteReport(results, spread, status)
    if results:
        out_dir.mkdir(parents=True, exist_ok=True)
        _atomic_write(out_dir / "suite.csv", report.table())
    return report


# --- verify ----------------------------------------------------------------

def verify() -> list[tuple[str, bool, str]]:
    """Fast property checks; returns (name, passed, detail) rows."""
    from . import analysis as A
    from .kernels import build_helmholtz_sum, build_power_sum, max_relative_error

    rows = []

    def check(name, fn):
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        rows.append((name, bool(ok), detail))

    def power():
        s = build_power_sum(1.0, 1e-6, 1e-6, 1e6)
        e = max_relative_error(s, 10_000)
        return e <= 1e-6, f"{len(s)} terms, max rel err {e:.3e}"

    def helmholtz():
        s = build_helmholtz_sum(1.0, 1e-6, 1e-6, 100.0)
        e = max_relative_error(s, 10_000)
        return e <= 1e-6, f"{len(s)} terms, max rel err {e:.3e}"

    def hs():
        worst = 0.0
        for d in (0.125, 0.25, 0.5):
            for k in (0.5, 1.0, 2.0):
                worst = max(worst, abs(A.hs_norm_numeric(d, k) / A.hs_norm_analytic(d, k) - 1))
        return worst <= 1e-3, f"max relative deviation {worst:.2e}"

    def products():
        two, three = A.product_spectrum_examples()
        ok = (np.allclose(two.eigenvalues, [-1j, 1j]) and np.allclose(three.eigenvalues, [-1, -1, 1])
              and np.allclose(two.b_forms, 0) and np.all(np.abs(three.b_forms) > 1e-8))
        return ok, f"{np.round(two.eigenvalues, 12)} {np.round(three.eigenvalues.real, 12)}"

    def bounds():
        rep = A.operator_bounds_check(1.0, samples=200)
        ok = rep.violations_offdiag == 0 and rep.violations_diag_exact == 0
        return ok, (f"off-diag max {rep.max_ratio_offdiag / rep.bound_offdiag:.4f} of bound; "
                    f"printed diagonal constant {rep.bound_diag_printed:.4f} vs exact norm {rep.norm_diag_exact:.4f}")

    def cusp():
        lo = A.cusp_tail_integrability(1.0, 0.25)
        hi = A.cusp_tail_integrability(1.0, 0.75)
        return lo.converges and not hi.converges, f"tail slopes {lo.tail_slope:.3f}, {hi.tail_slope:.3f}"

    def exact():
        e = A.exact_dirac_energy(1.0)
        return abs(e + 0.500006656) <= 1e-8, f"{e:.12f}"

    def oracle():
        lam, _ = A.radial_oracle_lambda(1.0, 1.0, 40.0, 1000)
        return abs(lam - 1.0) <= 1e-4, f"lambda(mu=1) = {lam:.8f}"

    for name, fn in [("kernel power sum", power), ("kernel helmholtz sum", helmholtz), ("hilbert-schmidt norms", hs),
                     ("product spectra", products), ("operator bounds", bounds), ("cusp integrability", cusp),
                     ("exact dirac energy", exact), ("radial oracle", oracle)]:
        check(name, fn)
    return rows


# --- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boundstate", description="Integral-equation bound-state solver")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="output directory (default: current directory)")
    common.add_argument("--seed", type=int, default=None, help="override the seed of random initial guesses")
    common.add_argument("--paper-box", action="store_true", help="use a 100 Bohr box (coarser at the same n)")
    p_run = sub.add_parser("run", parents=[common], help="run one config file")
    p_run.add_argument("config")
    p_suite = sub.add_parser("suite", parents=[common], help="run every *.cfg file in a directory")
    p_suite.add_argument("directory")
    p_suite.add_argument("--jobs", type=int, default=1, help="worker processes per suite phase (default: 1)")
    sub.add_parser("verify", help="run the fast property checks")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "run":
        res = run(args.config, args.out, args.seed, args.paper_box)
        if res.status != EXIT_ERROR:
            print(res.summary_text(), end="")
        return res.status
    if args.command == "suite":
        directory = Path(args.directory)
        if not directory.is_dir():
            log.error("%s is not a directory", directory)
            return EXIT_ERROR
        paths = sorted(directory.glob("*.cfg"))
        report = run_suite(paths, args.out, args.seed, args.paper_box, args.jobs)
        print(report.table(), end="")
        return report.status
    rows = verify()
    for name, ok, detail in rows:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in rows) else EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
