import json
import subprocess
import sys

import numpy as np
import pytest

from fiberlattice import pipeline
from fiberlattice.cli import main
from fiberlattice.config import ScenarioConfig
from fiberlattice.fitkit import FitError, double_gaussian_model, spectrum_model
from fiberlattice.io import write_csv


def run(argv, capsys=None):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out if capsys else ""
    return code, out


def test_empty_recipe_succeeds(tmp_path, capsys):
    code, _ = run(["pipeline", "--recipe", "empty", "--out", tmp_path], capsys)
    assert code == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["passed"] is True and summary["checks"] == []
    assert summary["config_hash"] == ScenarioConfig().digest()


def test_bad_config_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[trap]\nbogus = 1\n")
    assert main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "unknown keys" in capsys.readouterr().err


def test_unknown_recipe_exits_2(tmp_path):
    assert main(["pipeline", "--recipe", "fig9", "--out", str(tmp_path)]) == 2


def test_fig4_too_few_periods_fails_fast(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[scan]\nperiods_um = [1.0, 1.2]\n")
    assert main(["pipeline", "--recipe", "fig4", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert "at least 3" in summary["error"]["message"]
    assert not list(tmp_path.glob("loss_spectrum*"))


def test_config_rejects_short_frequency_grid():
    from fiberlattice.config import ConfigError
    with pytest.raises(ConfigError, match="n_freq"):
        ScenarioConfig.from_dict({"modulation": {"n_freq": 6}})


def test_fig3_summary_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["pipeline", "--recipe", "fig3", "--out", str(a), "--seed", "7"]) == 0
    assert main(["pipeline", "--recipe", "fig3", "--out", str(b), "--seed", "7"]) == 0
    sa, sb = (a / "summary.json").read_text(), (b / "summary.json").read_text()
    assert sa == sb
    assert (a / "fig3_spectrum.csv").read_bytes() == (b / "fig3_spectrum.csv").read_bytes()
    s = json.loads(sa)
    assert s["seed"] == 7 and s["recipe"] == "fig3"
    assert all(c["passed"] for c in s["checks"])


def test_failed_check_exits_1(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[synth]\np_abs_max_nW = 8.0\n")
    code = main(["pipeline", "--recipe", "fig3", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 1
    s = json.loads((tmp_path / "o" / "summary.json").read_text())
    names = {c["name"]: c["passed"] for c in s["checks"]}
    assert names["atom number within 3 sigma of 1270"] is False


def test_stage_error_keeps_partial_outputs(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise FitError("synthetic failure")
    monkeypatch.setattr(pipeline, "fit_lifetime", boom)
    assert main(["pipeline", "--recipe", "fig3", "--out", str(tmp_path)]) == 2
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["error"]["type"] == "FitError"
    assert s["passed"] is False


def test_mode_prints_csv(capsys):
    code, out = run(["mode"], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0].startswith("# n_eff,")
    neff = float(lines[0].split(",")[1])
    assert 1.0 < neff < 1.45
    assert lines[3] == "q,d_lat [m]"


def test_fit_subcommand(tmp_path, capsys):
    x = np.linspace(-40, 46, 87)
    y = spectrum_model(x * 1e6, 10.9, 3e6, 12e6, 0.0)
    data = write_csv(tmp_path / "spec.csv", {"detuning [MHz]": x, "transmission": y,
                                             "sigma": np.full(x.size, 0.01)})
    code, out = run(["fit", "--model", "spectrum", "--data", data, "--out", tmp_path], capsys)
    assert code == 0
    fit = json.loads((tmp_path / "spec_fit.json").read_text())
    assert fit["parameters"]["OD"]["value"] == pytest.approx(10.9, rel=1e-6)
    assert fit["parameters"]["delta_LS"]["value"] == pytest.approx(3e6, rel=1e-6)
    assert fit["metadata"]["model"] == "spectrum"
    assert (tmp_path / "spec_curve.csv").exists()
    assert "OD = 10.9" in out


def test_fit_double_gaussian_dips(tmp_path):
    f = np.linspace(60, 450, 60)
    y = 1 - double_gaussian_model(f * 1e3, 0.05, 0.6, 294e3, 12e3, 0.1, 1.0, 8e3)
    data = write_csv(tmp_path / "loss.csv", {"f_mod [kHz]": f, "survival": y,
                                             "stderr": np.full(f.size, 0.01)})
    assert main(["fit", "--model", "double-gaussian", "--dips", "--data", str(data),
                 "--out", str(tmp_path)]) == 0
    fit = json.loads((tmp_path / "loss_fit.json").read_text())
    assert fit["parameters"]["c1"]["value"] / 2 == pytest.approx(147e3, rel=1e-3)


def test_fit_bad_data_exits_2(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x,y\n1,2\n1,3\n")
    assert main(["fit", "--model", "fax", "--data", str(p), "--columns", "x,y"]) == 2
    assert main(["fit", "--model", "fax", "--data", str(tmp_path / "none.csv")]) == 2


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "fiberlattice", "pipeline", "--out", str(tmp_path)],
                       capture_output=True, text=True, timeout=300)
    assert r.returncode == 0, r.stderr
    r = subprocess.run([sys.executable, "-m", "fiberlattice", "--help"], capture_output=True,
                       text=True, timeout=300)
    assert all(c in r.stdout for c in ("mode", "field", "trap", "dynamics", "fit", "pipeline"))
