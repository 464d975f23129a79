import csv
from pathlib import Path

import pytest

from boundstate import cli
from boundstate.errors import ConfigError

SCHRODINGER = """\
# hydrogen, coarse grid
mode = schrodinger
nucleus = 1 0 0 0
box = 16
n = 32
parameter0 = 0.8
newton = true
tol = 1e-9
"""

DIRAC = """\
mode = dirac
nucleus = 1 0 0 0
box = 16
n = 32
parameter0 = -0.5
fix_parameter = true
initial_guess = {guess}
tol = 1e-8
dump = {dump}
"""


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_parse_config_defaults_and_comments():
    cfg = cli.parse_config(SCHRODINGER + "nucleus = 2 1.0 0 0  # second\n")
    assert cfg.mode == "schrodinger" and cfg.n == 32 and cfg.box == 16.0
    assert cfg.nuclei == [(1.0, (0.0, 0.0, 0.0)), (2.0, (1.0, 0.0, 0.0))]
    assert cfg.newton and not cfg.fix_parameter and cfg.max_iters == 500
    dirac = cli.parse_config("mode = dirac\nnucleus = 1 0 0 0\n")
    assert dirac.parameter0 == -0.5 and dirac.max_iters == 100 and dirac.n == 160 and dirac.box == 40.0


@pytest.mark.parametrize("text, line, fragment", [
    ("mode = schrodinger\nnucleus = 1 0 0 0\nbogus = 3\n", 3, "unknown key"),
    ("mode = schrodinger\nnucleus = 1 0 0\n", 2, "Z x y z"),
    ("mode = schrodinger\nnucleus = 1 0 0 0\nn = many\n", 3, "bad value"),
    ("mode = schrodinger\nnucleus = 1 0 0 0\nbox = 3\nbox = 4\n", 4, "duplicate"),
    ("mode = schrodinger\nnucleus = 1 0 0 0\ninitial_guess = swapped\n", 3, "only available in dirac"),
    ("mode = schrodinger\nnucleus = 1 0 0 0\n\ninitial_guess = gaussian(1e8)\n", 4, "only available in dirac"),
    ("mode = dirac\nnucleus = 1 0 0 0\nparameter0 = 0.5\n", 3, "negative"),
    ("mode = dirac\nnucleus = 1 0 0 0\ninitial_guess = random(x)\n", 3, "seed"),
    ("mode = schrodinger\nnucleus = 1 0 0 0\ntol = -1\n", 3, "positive"),
    ("mode = schrodinger\nnucleus = 1 30 0 0\n", 2, "outside"),
    ("mode = schrodinger\nnucleus = 1 0 0 0\njust words\n", 3, "key = value"),
])
def test_config_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(ConfigError) as info:
        cli.parse_config(text, "exp.cfg")
    assert info.value.line == line
    assert fragment in str(info.value)
    assert str(info.value).startswith(f"exp.cfg:{line}:")


def test_missing_mode_and_nuclei():
    with pytest.raises(ConfigError, match="mode"):
        cli.parse_config("nucleus = 1 0 0 0\n")
    with pytest.raises(ConfigError, match="nucleus"):
        cli.parse_config("mode = dirac\n")


@pytest.mark.parametrize("text, expected", [
    ("standard", ("standard", None)), ("swapped", ("swapped", None)),
    ("random(7)", ("random", 7)), ("gaussian(1e8)", ("gaussian", 1e8)), (" random( 12 ) ", ("random", 12)),
])
def test_parse_guess(text, expected):
    assert cli.parse_guess(text) == expected


@pytest.mark.parametrize("text", ["random", "gaussian", "gaussian(-1)", "standard(2)", "plane"])
def test_parse_guess_rejects(text):
    with pytest.raises(ValueError):
        cli.parse_guess(text)


def test_schrodinger_run_writes_outputs(tmp_path):
    cfg = write(tmp_path, "hyd.cfg", SCHRODINGER)
    out = tmp_path / "out"
    assert cli.main(["run", str(cfg), "--out", str(out)]) == 0
    rows = read_csv(out / "hyd.csv")
    assert list(rows[0]) == list(cli.SCHRODINGER_COLUMNS)
    iters = [int(r["iter"]) for r in rows]
    assert iters == list(range(len(iters)))
    summary = (out / "hyd.summary.txt").read_text()
    assert "converged = True" in summary
    energy = float(summary.split("energy = ")[1].split("\n")[0])
    assert energy == pytest.approx(-0.5, abs=2e-2)
    assert not list(out.glob("*.tmp"))


def test_rerun_is_bit_identical(tmp_path):
    cfg = write(tmp_path, "r.cfg", DIRAC.format(guess="random(5)", dump="false"))
    cli.main(["run", str(cfg), "--out", str(tmp_path / "a")])
    cli.main(["run", str(cfg), "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "r.csv").read_bytes() == (tmp_path / "b" / "r.csv").read_bytes()


def test_seed_override(tmp_path):
    cfg = write(tmp_path, "r.cfg", DIRAC.format(guess="random(5)", dump="false"))
    cli.main(["run", str(cfg), "--out", str(tmp_path / "a"), "--seed", "9"])
    cli.main(["run", str(cfg), "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "r.csv").read_bytes() != (tmp_path / "b" / "r.csv").read_bytes()


def test_max_iterations_exit_code(tmp_path):
    cfg = write(tmp_path, "short.cfg", SCHRODINGER.replace("newton = true", "fix_parameter = true")
                + "max_iters = 2\n")
    assert cli.main(["run", str(cfg), "--out", str(tmp_path)]) == 2
    assert len(read_csv(tmp_path / "short.csv")) == 2


def test_invalid_config_writes_nothing(tmp_path, capsys):
    cfg = write(tmp_path, "bad.cfg", "mode = schrodinger\nnucleus = 1 0 0 0\ninitial_guess = swapped\n")
    out = tmp_path / "out"
    assert cli.main(["run", str(cfg), "--out", str(out)]) == 1
    assert not out.exists()


def test_missing_config_file(tmp_path):
    assert cli.main(["run", str(tmp_path / "nope.cfg")]) == 1


def test_dirac_run_with_dump_and_reference(tmp_path):
    write(tmp_path, "std.cfg", DIRAC.format(guess="standard", dump="true"))
    write(tmp_path, "swp.cfg", DIRAC.format(guess="swapped", dump="false") + "reference = std.field\n")
    report = cli.run_suite(sorted(tmp_path.glob("*.cfg")), tmp_path / "out")
    assert report.status == 0
    names = [r.name for r in report.results]
    assert names == ["std", "swp"]  # the reference run goes first
    rows = read_csv(tmp_path / "out" / "swp.csv")
    assert list(rows[0]) == list(cli.DIRAC_COLUMNS)
    proj = [float(r["projection"]) for r in rows]
    assert proj[0] < 1e-10 and proj[-1] == pytest.approx(1.0, abs=1e-6)
    assert (tmp_path / "out" / "std.field").exists()
    (spread,) = report.energy_spread.values()
    assert spread <= 1e-6
    assert "spread" in (tmp_path / "out" / "suite.csv").read_text()


def test_reference_on_other_grid_is_rejected(tmp_path):
    write(tmp_path, "std.cfg", DIRAC.format(guess="standard", dump="true"))
    assert cli.main(["run", str(tmp_path / "std.cfg"), "--out", str(tmp_path)]) == 0
    cfg = write(tmp_path, "swp.cfg", DIRAC.format(guess="swapped", dump="false").replace("n = 32", "n = 16")
                + "reference = std.field\n")
    assert cli.main(["run", str(cfg), "--out", str(tmp_path)]) == 1


def test_suite_partial_failure(tmp_path):
    write(tmp_path, "good.cfg", SCHRODINGER)
    write(tmp_path, "bad.cfg", "mode = schrodinger\n")
    assert cli.main(["suite", str(tmp_path), "--out", str(tmp_path / "out")]) == 2
    text = (tmp_path / "out" / "suite.csv").read_text()
    assert "good,schrodinger,0" in text and "bad,?,1" in text


def test_empty_suite(tmp_path, capsys):
    assert cli.main(["suite", str(tmp_path)]) == 0
    assert not (tmp_path / "suite.csv").exists()


def test_paper_box_override():
    cfg = cli.apply_overrides(cli.parse_config(SCHRODINGER), None, True)
    assert cfg.box == cli.PAPER_BOX and cfg.n == 32


def test_verify_reports_all_pass(capsys):
    assert cli.main(["verify"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 8 and all(line.startswith("PASS") for line in lines)


def test_example_configs_parse():
    root = Path(__file__).resolve().parents[1] / "configs"
    paths = sorted(root.glob("*.cfg"))
    assert paths
    for p in paths:
        cli.load_config(p)
