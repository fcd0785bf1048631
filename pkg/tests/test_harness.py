import json
import math
import shutil
import subprocess

import pytest

from plmmlab.cli import main
from plmmlab.exceptions import ConfigError
from plmmlab.harness import (
    PRESETS,
    ExperimentConfig,
    NumericalFailure,
    expansion_check,
    observed_orders,
    preset_config,
    run,
    sweep,
)

SHORT_RUN = {"problem": "double_pendulum", "pair": "plmm2", "h": 0.01, "t_end": 60 * 2 * math.pi}


def _write(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


# configuration -----------------------------------------------------------------------

def test_config_rejects_bad_input():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"h": -0.1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"problem": "kepler"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"pair": "nope"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"start_mode": "sloppy"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict([1, 2])
    with pytest.raises(ConfigError):
        preset_config("fig9")


def test_config_roundtrip_and_inline_pair():
    data = {"pair": {"name": "mine", "p": {"rho": [-1, 0, 1], "sigma": [0, 2]},
                     "q": {"rho": [-1, 0, 1], "sigma": [0, 2]}}, "hs": [0.1, 0.05]}
    cfg = ExperimentConfig.from_dict(data)
    assert cfg.resolve_pair().order == 2
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_preset_merge():
    cfg = ExperimentConfig.from_dict({"preset": "fig3", "t_end": 100.0})
    assert cfg.pair == "adams3" and cfg.t_end == 100.0 and cfg.h == 0.01


def test_presets_use_default_step_and_expected_classes():
    assert {k: p.expected for k, p in PRESETS.items()} == {
        "fig1": "bounded", "fig2": "exponential", "fig3": "linear", "fig4": "linear"}
    assert PRESETS["fig4"].initial_expected == "bounded"
    for name in PRESETS:
        assert preset_config(name).h == 0.01


def test_observed_orders():
    assert observed_orders([0.2, 0.1], [0.0, 0.0]) == ["exact"]
    assert observed_orders([0.2, 0.1, 0.05], [4e-4, 1e-4, 0.0]) == [pytest.approx(2.0), None]


# runs ----------------------------------------------------------------------------------

def test_run_bundle_is_reproducible(tmp_path):
    cfg_a = ExperimentConfig.from_dict({**SHORT_RUN, "output_dir": str(tmp_path / "a"),
                                        "initial_window": 40.0, "initial_period": 0.5})
    cfg_b = ExperimentConfig.from_dict({**cfg_a.to_dict(), "output_dir": str(tmp_path / "b")})
    res = run(cfg_a)
    run(cfg_b)
    for name in ("trajectory.csv", "drift.csv", "drift_initial.csv", "verdict.json", "plot.gp"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["config"]["pair"] == "plmm2"
    assert "time" not in json.dumps(manifest).lower().replace("t_end", "")
    verdict = json.loads((tmp_path / "a" / "verdict.json").read_text())
    assert verdict["label"]["label"] == "bounded"
    assert "initial_window" in verdict
    assert (tmp_path / "a" / "drift.csv").read_text().startswith("t,drift\n")
    assert (tmp_path / "a" / "trajectory.csv").read_text().startswith("t,p1,p2,q1,q2\n")
    assert set(res.files) >= {"manifest.json", "verdict.json"}


def test_run_with_too_few_samples_fails(tmp_path):
    cfg = ExperimentConfig.from_dict({**SHORT_RUN, "t_end": 10.0, "output_dir": str(tmp_path)})
    with pytest.raises(NumericalFailure):
        run(cfg)
    cfg = ExperimentConfig.from_dict({**SHORT_RUN, "initial_window": 5.0, "output_dir": str(tmp_path)})
    with pytest.raises(NumericalFailure):
        run(cfg)


# sweeps --------------------------------------------------------------------------------

def test_sweep_orders(tmp_path):
    cfg = ExperimentConfig.from_dict({"problem": "harmonic_oscillator", "t_end": 10.0,
                                      "pairs": ["plmm2", "adams3"], "output_dir": str(tmp_path)})
    table = {row["pair"]: row for row in sweep(cfg)["table"]}
    for o in table["plmm2"]["orders"]:
        assert abs(o - 2.0) <= 0.3
    for o in table["adams3"]["orders"]:
        assert abs(o - 3.0) <= 0.3
    assert (tmp_path / "convergence.csv").read_text().startswith("pair,h,error,observed_order\n")
    assert (tmp_path / "plmm2_h0.01" / "result.json").exists()


def test_sweep_trivial_is_exact_and_parallel_matches_serial(tmp_path):
    base = {"problem": "trivial", "t_end": 5.0, "pairs": ["plmm2", "sim_nosim"]}
    serial = sweep(ExperimentConfig.from_dict({**base, "output_dir": str(tmp_path / "s")}))
    parallel = sweep(ExperimentConfig.from_dict({**base, "workers": 2, "output_dir": str(tmp_path / "p")}))
    assert serial == parallel
    for row in serial["table"]:
        assert row["orders"] == ["exact", "exact"]
    assert (tmp_path / "s" / "convergence.csv").read_bytes() == (tmp_path / "p" / "convergence.csv").read_bytes()


def test_sweep_needs_two_steps(tmp_path):
    with pytest.raises(ConfigError):
        sweep(ExperimentConfig.from_dict({"hs": [0.01], "output_dir": str(tmp_path)}))


# expansion check --------------------------------------------------------------------------

def test_expansion_check_bundle(tmp_path):
    cfg = ExperimentConfig.from_dict({"problem": "harmonic_oscillator", "pair": "plmm2",
                                      "hs": [0.04, 0.02, 0.01], "output_dir": str(tmp_path)})
    res = expansion_check(cfg)
    assert res["expected_residual_order"] == 4
    for o in res["residual_orders"]:
        assert abs(o - 4) < 0.3
    assert all(v < 1e-12 for v in res["order_r_parasitic_max"].values())
    header = (tmp_path / "errors_h0.01.csv").read_text().splitlines()[0]
    assert header == "t,actual_p1,actual_q1,predicted_p1,predicted_q1"
    assert (tmp_path / "coefficients.csv").read_text().startswith("t,smooth")


# command line -------------------------------------------------------------------------------

def test_cli_analyze_pair(capsys):
    assert main(["analyze-pair", "plmm2"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["order"] == 2 and rep["sides"]["p"]["error_constants"][0] == pytest.approx(1 / 6)


def test_cli_analyze_pair_from_file(tmp_path, capsys):
    path = _write(tmp_path, {"p": {"rho": [-1, 1], "sigma": [0.5, 0.5]}, "q": {"rho": [-1, 1], "sigma": [0.5, 0.5]}},
                  "pair.json")
    assert main(["analyze-pair", str(path)]) == 0
    assert json.loads(capsys.readouterr().out)["symmetric"] is True


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["analyze-pair", "nope"]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["run", "--config", str(_write(tmp_path, {"h": "big"}))]) == 2
    short = _write(tmp_path, {**SHORT_RUN, "t_end": 10.0, "output_dir": str(tmp_path / "o")}, "short.json")
    assert main(["run", "--config", str(short)]) == 3
    with pytest.raises(SystemExit) as exc:
        main(["preset", "fig7"])
    assert exc.value.code == 2


def test_cli_run_sweep_and_expansion(tmp_path, capsys):
    cfg = _write(tmp_path, {**SHORT_RUN, "output_dir": str(tmp_path / "r")})
    assert main(["run", "--config", str(cfg)]) == 0
    assert json.loads(capsys.readouterr().out)["verdict"]["label"]["label"] == "bounded"
    cfg = _write(tmp_path, {"problem": "trivial", "t_end": 2.0, "hs": [0.1, 0.05]}, "sweep.json")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "convergence.json").exists()
    capsys.readouterr()
    cfg = _write(tmp_path, {"problem": "harmonic_oscillator", "hs": [0.02, 0.01], "t_check": 1.0}, "exp.json")
    assert main(["expansion-check", "--config", str(cfg), "--out", str(tmp_path / "e")]) == 0
    assert (tmp_path / "e" / "expansion.json").exists()


def test_cli_preset_with_overrides(tmp_path, capsys):
    assert main(["preset", "fig1", "--h", "0.01", "--t-end", str(60 * 2 * math.pi), "--out", str(tmp_path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["verdict"]["expected"] == "bounded"
    assert (tmp_path / "plot.gp").exists()


@pytest.mark.skipif(shutil.which("plmm-lab") is None, reason="console script not installed")
def test_console_script():
    proc = subprocess.run(["plmm-lab", "analyze-pair", "lmm2"], capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["name"] == "lmm2"
    proc = subprocess.run(["plmm-lab", "analyze-pair", "missing"], capture_output=True, text=True)
    assert proc.returncode == 2
