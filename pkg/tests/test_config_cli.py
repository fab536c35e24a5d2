import csv
import filecmp
import shutil

import numpy as np
import pytest

from ramanqot.cli import EXIT_CONFIG, EXIT_INVARIANT, EXIT_OK, EXIT_SOLVER, run_cli
from ramanqot.config import ConfigError, load_scenario, validate_scenario
from ramanqot.link import FibreSpan, LumpedAmp
from ramanqot.loop_scenario import scenario_path
from ramanqot.qot import read_report_csv


def _copy_scenario(tmp_path, edit=None, name="sc"):
    """Copy the shipped scenario directory; ``edit`` maps the YAML text to new text."""
    dst = tmp_path / name
    shutil.copytree(scenario_path().parent, dst)
    if edit is not None:
        p = dst / "scenario.yaml"
        p.write_text(edit(p.read_text()))
    return dst / "scenario.yaml"


def _small(text):
    """Twelve channels per band on a ten-times coarser grid."""
    return text.replace("channels: 120, spacing_ghz: 32.5", "channels: 12, spacing_ghz: 325") \
               .replace("channels: 141, spacing_ghz: 32.5", "channels: 12, spacing_ghz: 325")


def _line_of(path, needle):
    for k, line in enumerate(path.read_text().splitlines(), start=1):
        if needle in line:
            return k
    raise AssertionError(needle)


# -- loading ------------------------------------------------------------------------------

def test_shipped_scenario_loads(shipped):
    sc = shipped.scenario
    assert len(sc.plan) == 381
    assert sc.recirculations == 15
    assert shipped.overhead == pytest.approx(1 / 32)
    assert [s.name for s in sc.loop_stages] == ["span", "gain_block_2", "wss", "gain_block_3",
                                                "front_end_loss", "gain_block_1", "band_voa"]
    assert isinstance(sc.loop_stages[0], FibreSpan)
    assert isinstance(sc.loop_stages[5], LumpedAmp)
    assert np.all(np.diff(sc.plan.frequencies) > 0)
    pumps = shipped.pump_sets["raman"]
    assert [p.wavelength for p in pumps] == [1365.0, 1385.0, 1405.0, 1425.0]
    assert shipped.fibres["ssmf"].length == 71.0


def test_recirculation_override(tmp_path):
    cfg = load_scenario(_copy_scenario(tmp_path, _small), recirculations=5)
    assert cfg.scenario.recirculations == 5
    assert len(cfg.scenario.plan) == 36


def test_validate_shipped_scenario_cli(capsys):
    assert run_cli(["validate-config", str(scenario_path())]) == EXIT_OK
    assert "OK" in capsys.readouterr().out


@pytest.mark.parametrize("edit, needle", [
    (lambda t: t.replace("    gamma: 1.4", "    gamm: 1.4"), "gamm: 1.4"),
    (lambda t: t.replace("recirculations: 15", "recirculations: fifteen"), "recirculations:"),
    (lambda t: t.replace("    gamma: 1.4", "    gamma: 1.4\n    gamma: 1.5"), "gamma: 1.5"),
    (lambda t: t.replace("{type: loss, name: front_end_loss", "{type: lens, name: front_end_loss"),
     "front_end_loss"),
    (lambda t: t.replace("pumps: raman}", "pumps: ramen}"), "pumps: ramen"),
])
def test_malformed_config_is_line_anchored(tmp_path, capsys, edit, needle):
    path = _copy_scenario(tmp_path, edit)
    line = _line_of(path, needle)
    assert run_cli(["validate-config", str(path)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert f"scenario.yaml:{line}:" in err


def test_yaml_syntax_error_is_line_anchored(tmp_path, capsys):
    path = _copy_scenario(tmp_path, lambda t: t.replace("  ssmf:\n", "  ssmf: [\n"))
    assert run_cli(["validate-config", str(path)]) == EXIT_CONFIG
    assert "scenario.yaml:" in capsys.readouterr().err


def test_missing_table_file(tmp_path):
    path = _copy_scenario(tmp_path)
    (path.parent / "voa.csv").unlink()
    with pytest.raises(ConfigError) as info:
        load_scenario(path)
    assert info.value.line == _line_of(path, "voa.csv")
    assert "voa.csv" in str(info.value)


def test_uncovered_table_names_stage_line(tmp_path, capsys):
    path = _copy_scenario(tmp_path)
    wss = path.parent / "wss.csv"
    lines = wss.read_text().splitlines()
    wss.write_text("\n".join(lines[:-40]) + "\n")  # drop the shortest S-band wavelengths
    assert run_cli(["validate-config", str(path)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert f"scenario.yaml:{_line_of(path, 'name: wss')}:" in err
    assert "'wss'" in err


def test_validate_scenario_returns_warnings(tmp_path):
    path = _copy_scenario(tmp_path, lambda t: t.replace(
        "gain_db: 13.0, noise_figure_db: noise_figure.csv", "gain_db: 13.0, noise_figure_db: 2.0"))
    warnings = validate_scenario(path)
    assert any("gain_block_1" in w for w in warnings)


# -- exit codes ---------------------------------------------------------------------------------

def test_solver_non_convergence_exit_code(tmp_path, capsys):
    path = _copy_scenario(tmp_path, lambda t: _small(t) + "  max_iterations: 1\n")
    assert run_cli(["solve-span", str(path), "-o", str(tmp_path / "o")]) == EXIT_SOLVER
    assert "mismatch" in capsys.readouterr().err
    assert run_cli(["run-link", str(path), "-o", str(tmp_path / "o2")]) == EXIT_SOLVER
    assert "recirculation 1, stage 'span'" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_invariant_violation_exit_code(tmp_path, capsys):
    path = _copy_scenario(tmp_path, lambda t: _small(t).replace("gain_db: 13.0", "gain_db: 400.0"))
    code = run_cli(["run-link", str(path), "--recirculations", "3", "--nli-method", "none",
                    "-o", str(tmp_path / "o")])
    assert code == EXIT_INVARIANT
    assert "recirculation 2, stage 'span'" in capsys.readouterr().err


# -- subcommands ----------------------------------------------------------------------------------

def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_solve_span_on_off_peak(tmp_path):
    out = tmp_path / "span"
    assert run_cli(["solve-span", str(scenario_path()), "--pumps", "off", "-o", str(out)]) == 0
    assert run_cli(["solve-span", str(scenario_path()), "--pumps", "on", "-o", str(out)]) == 0
    for name in ("profiles_pumps_off.csv", "profiles_pumps_on.csv", "onoff_gain.csv",
                 "spectrum_launch.csv", "spectrum_fibre_out.csv"):
        assert (out / name).is_file()
    rows = _read(out / "onoff_gain.csv")
    assert len(rows) == 381
    gain = np.array([float(r["onoff_gain_db"]) for r in rows])
    wl = np.array([float(r["wavelength_nm"]) for r in rows])
    assert 1500.0 <= wl[np.argmax(gain)] <= 1510.0


def test_run_link_is_deterministic(tmp_path):
    path = _copy_scenario(tmp_path, _small)
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert run_cli(["run-link", str(path), "--recirculations", "2", "-o", str(out)]) == 0
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    assert names == ["report.csv", "span_nli.csv", "summary.json", "trace.csv"]
    match, mismatch, errors = filecmp.cmpfiles(outs[0], outs[1], names, shallow=False)
    assert mismatch == [] and errors == []


def test_report_and_fits_outputs(tmp_path, capsys):
    path = _copy_scenario(tmp_path, _small)
    out = tmp_path / "out"
    assert run_cli(["report", str(path), "--recirculations", "1", "2", "-o", str(out)]) == 0
    assert "2 recirculations:" in capsys.readouterr().out
    snr1, snr2 = _read(out / "snr_1.csv"), _read(out / "snr_2.csv")
    assert len(snr1) == len(snr2) == 36
    ase1 = np.array([float(r["snr_ase_db"]) for r in snr1])
    ase2 = np.array([float(r["snr_ase_db"]) for r in snr2])
    assert np.all(ase2 < ase1)
    assert len(_read(out / "spectra.csv")) == 36
    assert run_cli(["solve-span", str(path), "--fits", "-o", str(out)]) == 0
    fits = _read(out / "fits_pumps_on.csv")
    assert {int(r["channel"]) for r in fits} == set(range(36))
    assert max(float(r["residual"]) for r in fits) < 0.5


@pytest.fixture(scope="module")
def shipped_run_link(tmp_path_factory):
    out = tmp_path_factory.mktemp("link15")
    assert run_cli(["run-link", str(scenario_path()), "--recirculations", "15",
                    "-o", str(out)]) == EXIT_OK
    return out


def test_run_link_total_snr_dip_at_1505(shipped_run_link):
    rep = read_report_csv(shipped_run_link / "report.csv")
    assert rep.recirculations == 15
    k = rep.worst_channel("S")
    assert k == int(np.argmin(np.abs(rep.wavelength - 1505.0)))


def test_run_link_global_total_snr_minimum(shipped_run_link):
    rep = read_report_csv(shipped_run_link / "report.csv")
    assert rep.worst_channel() == int(np.argmin(np.abs(rep.wavelength - 1505.0)))
