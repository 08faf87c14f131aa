import csv
import json

import pytest

from srs_qmetro import __version__
from srs_qmetro.cli import main, resolve_threads
from srs_qmetro.config import PRESETS, ConfigError, expand_grid, load_preset, loads

LINESHAPE = """
command = "lineshape"
label = "ls"

[lineshape]
n_molecules = 1e6
eps_pu = 1e-3
eps_pr = 1e-3
samples = 11
pump = { center_freq = 12.0, bandwidth = 0.05 }
probe = { center_freq = 11.0, bandwidth = 0.05 }
{lines}
"""

LINE = "[[lineshape.lines]]\nomega_line = {w}\ngamma_line = 0.02\npolarizability_sq = {p}\n"


def lineshape_job(tmp_path, *lines):
    body = "\n".join(LINE.format(w=w, p=p) for w, p in lines)
    path = tmp_path / f"ls{len(list(tmp_path.iterdir()))}.toml"
    path.write_text(LINESHAPE.replace("{lines}", body))
    return path


def run(args, tmp_path):
    out = tmp_path / "out"
    code = main([*map(str, args), "--out", str(out)])
    return code, out


def read_csv(path):
    lines = path.read_text().splitlines()
    return lines[0], list(csv.DictReader(lines[1:]))


# -- configuration ------------------------------------------------------------------------


@pytest.mark.parametrize("name", PRESETS)
def test_presets_round_trip_through_toml(name):
    job = load_preset(name)
    again = loads(job.to_toml())
    assert again.to_dict() == job.to_dict()


def test_grid_expansion():
    assert expand_grid([1, 2.5]) == [1.0, 2.5]
    assert expand_grid(3) == [3.0]
    assert expand_grid({"geomspace": [1, 100, 3]}) == pytest.approx([1.0, 10.0, 100.0])
    assert expand_grid({"linspace": [0, 1, 0]}) == []
    for bad in ({"logspace": [1, 2, 3]}, {"linspace": [0, 1, 2.5]}, ["x"], "1,2"):
        with pytest.raises(ConfigError):
            expand_grid(bad)


def test_seed_must_be_unsigned_64_bit():
    with pytest.raises(ConfigError):
        loads('command = "curve"\nseed = -1\n[curve]\n')
    assert loads('command = "curve"\nseed = 18446744073709551615\n[curve]\n').seed == 2 ** 64 - 1


# -- exit codes -------------------------------------------------------------------------


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_usage_and_config_errors_exit_with_one(tmp_path, capsys):
    assert run(["curve", "--config", tmp_path / "missing.toml"], tmp_path)[0] == 1
    bad = tmp_path / "bad.toml"
    bad.write_text('command = "curve"\n[curve]\nfamily = "coherent-coherent"\nbogus = 1\n')
    assert run(["--config", bad], tmp_path)[0] == 1
    assert run(["sweep", "--preset", "fig2a"], tmp_path)[0] == 1
    assert run(["curve"], tmp_path)[0] == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    assert "error" in capsys.readouterr().err


def test_all_failed_cells_exit_with_two(tmp_path, capsys):
    job = tmp_path / "over.toml"
    job.write_text('command = "sweep"\n[sweep]\nfamily = "coherent-coherent"\n'
                   'fixed = { gamma_srs = 2e-3, n_tot = 1.0 }\n'
                   'axes = [{ param = "n_pr", grid = [2.0, 3.0] }]\n')
    assert run(["--config", job], tmp_path)[0] == 2
    assert capsys.readouterr().err


def test_tampered_tolerance_fails_acceptance_with_three(tmp_path, capsys):
    job = tmp_path / "acc.toml"
    job.write_text('command = "accept"\n[accept]\ncriteria = [4]\ntolerances = { qfi_pure = 1e-20 }\n')
    code, out = run(["--config", job], tmp_path)
    assert code == 3
    captured = capsys.readouterr()
    assert "criterion  4 FAIL" in captured.out
    assert "criteria 4" in captured.err
    verdict = json.loads((out / "accept.json").read_text())
    assert verdict["failing"] == [4] and verdict["tolerances"]["qfi_pure"] == 1e-20


def test_cheap_criteria_pass(tmp_path):
    job = tmp_path / "acc.toml"
    job.write_text('command = "accept"\n[accept]\ncriteria = [4, 8]\n')
    assert run(["accept", "--config", job], tmp_path)[0] == 0


@pytest.mark.parametrize("seed", [1, 12345, 2 ** 63 + 7])
def test_cheap_verdicts_do_not_depend_on_the_seed(tmp_path, seed):
    job = tmp_path / "acc.toml"
    job.write_text('command = "accept"\n[accept]\ncriteria = [2, 4, 8]\n')
    assert run(["--config", job, "--seed", seed], tmp_path)[0] == 0


def test_thread_count_from_environment(monkeypatch):
    monkeypatch.setenv("SRS_QMETRO_THREADS", "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(2) == 2
    monkeypatch.setenv("SRS_QMETRO_THREADS", "many")
    with pytest.raises(ConfigError):
        resolve_threads(None)
    with pytest.raises(ConfigError):
        resolve_threads(0)


# -- outputs -------------------------------------------------------------------------------


def test_resonant_line_has_no_dispersive_part(tmp_path):
    code, out = run(["lineshape", "--config", lineshape_job(tmp_path, (1.0, 1.0))], tmp_path)
    assert code == 0
    report = json.loads((out / "ls.json").read_text())
    assert report["gamma_srs"] > 0
    assert abs(report["h_srs"]) < 1e-8 * report["gamma_srs"]
    header, rows = read_csv(out / "ls_phi.csv")
    assert header == f"# srs_qmetro {__version__} lineshape schema 1"
    assert len(rows) == 11


def test_zero_polarizability_gives_zero_rates(tmp_path):
    code, out = run(["--config", lineshape_job(tmp_path, (1.0, 0.0))], tmp_path)
    assert code == 0
    report = json.loads((out / "ls.json").read_text())
    assert report["gamma_srs"] == 0.0 and report["h_srs"] == 0.0


def test_rates_add_over_lines(tmp_path):
    def rates(*lines):
        code, out = run(["--config", lineshape_job(tmp_path, *lines)], tmp_path)
        assert code == 0
        report = json.loads((out / "ls.json").read_text())
        return report["gamma_srs"], report["h_srs"]

    g1, h1 = rates((0.99, 1.0))
    g2, h2 = rates((1.02, 0.5))
    g12, h12 = rates((0.99, 1.0), (1.02, 0.5))
    assert g12 == pytest.approx(g1 + g2, rel=1e-10)
    assert h12 == pytest.approx(h1 + h2, rel=1e-10, abs=1e-12 * g12)


def test_empty_grid_writes_header_only_csv(tmp_path):
    job = tmp_path / "empty.toml"
    job.write_text('command = "curve"\nlabel = "empty"\n[curve]\nfamily = "two-mode-squeezed"\n'
                   'fixed = { gamma_srs = 2e-3 }\n'
                   'axes = [{ param = "n_tot", grid = { geomspace = [1.0, 2.0, 0] } }]\n')
    code, out = run(["--config", job], tmp_path)
    assert code == 0
    lines = (out / "empty.csv").read_text().splitlines()
    assert len(lines) == 2 and lines[0].startswith("# srs_qmetro") and lines[1].startswith("gamma_srs,")


def test_outputs_are_byte_identical_across_thread_counts(tmp_path):
    one = tmp_path / "one"
    four = tmp_path / "four"
    assert main(["--preset", "fig3", "--out", str(one), "--threads", "1"]) == 0
    assert main(["--preset", "fig3", "--out", str(four), "--threads", "4"]) == 0
    names = sorted(p.name for p in one.iterdir())
    assert names == sorted(p.name for p in four.iterdir()) and names
    for name in names:
        assert (one / name).read_bytes() == (four / name).read_bytes()


def test_sweep_csv_records_failed_budget_cells(tmp_path):
    code, out = run(["--preset", "fig3"], tmp_path)
    assert code == 0
    _, rows = read_csv(out / "fig3.csv")
    assert len(rows) == 3 * 5 * 7
    failed = [r for r in rows if "failed:budget" in r["flags"]]
    assert failed and all(float(r["n_pr"]) + float(r["n_sq"]) > float(r["n_tot"]) for r in failed)
