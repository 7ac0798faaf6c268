import json
from pathlib import Path

import numpy as np
import pytest

from idepde.cli import main
from idepde.config import load_scenario, signal_values, smallest_valid_K, system_from_json
from idepde.errors import ConfigError
from idepde.functionals import IdeSystem
from idepde.hyperbolic import HyperbolicSystem
from idepde.sampled import make_rng

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"
TOP_LEVEL = sorted(SCENARIOS.glob("*.json"))


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, json.loads(out)


class TestConfig:
    def test_smallest_K(self):
        assert smallest_valid_K([0.3, 1.0], 1.0) == 10
        assert smallest_valid_K([0.25, 0.5], 0.5) == 2
        assert smallest_valid_K([1.0], 1.0) == 1

    def test_misaligned_delay(self):
        raw = {"kind": "simulate-ide", "system_file": str(SCENARIOS / "systems/two_delays.json"),
               "numerics": {"K": 4}}
        with pytest.raises(ConfigError) as exc:
            load_scenario(raw)
        assert "smallest valid K is 10" in str(exc.value)

    def test_errors_collected(self):
        raw = {"kind": "simulate-ide", "system_file": str(SCENARIOS / "systems/two_delays.json"),
               "numerics": {"K": 4, "T": 0.33, "tol": -1.0},
               "outputs": {"snapshot_times": [5.0]}}
        with pytest.raises(ConfigError) as exc:
            load_scenario(raw)
        text = "\n".join(exc.value.violations)
        assert len(exc.value.violations) >= 3
        assert "tol must be positive" in text and "smallest valid K" in text and "outside [0" in text

    def test_unknown_kind_and_system(self):
        with pytest.raises(ConfigError) as exc:
            load_scenario({"kind": "bogus"})
        assert any("kind must be one of" in v for v in exc.value.violations)
        with pytest.raises(ConfigError) as exc:
            load_scenario({"kind": "simulate-ide", "system": {"type": "nope"}})
        assert any(v.startswith("system:") for v in exc.value.violations)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_scenario(tmp_path / "absent.json")

    def test_overrides_win(self):
        sc = load_scenario(SCENARIOS / "simulate_ide_example.json", {"K": 32, "T": 2.0, "seed": 7})
        assert (sc.K, sc.T, sc.seed) == (32, 2.0, 7)
        assert isinstance(sc.system, IdeSystem) and not sc.is_pde

    def test_system_types(self):
        for path in sorted((SCENARIOS / "systems").glob("*.json")):
            sys = system_from_json(json.loads(path.read_text()))
            assert isinstance(sys, (IdeSystem, HyperbolicSystem))

    def test_signals(self):
        t = np.linspace(0.0, 1.0, 5)
        rng = make_rng(0)
        np.testing.assert_array_equal(signal_values({"type": "step", "before": 1, "after": 2, "at": 0.5}, t, rng),
                                      [1, 1, 2, 2, 2])
        np.testing.assert_allclose(signal_values({"type": "ramp", "offset": 1, "slope": 2}, t, rng), 1 + 2 * t)
        assert np.all(signal_values({"type": "zero"}, t, rng) == 0)
        a = signal_values({"type": "random", "seed": 3}, t, rng)
        b = signal_values({"type": "random", "seed": 3}, t, make_rng(9))
        np.testing.assert_array_equal(a, b)


class TestCli:
    @pytest.mark.parametrize("path", TOP_LEVEL, ids=[p.stem for p in TOP_LEVEL])
    def test_scenarios_run(self, path, tmp_path, capsys):
        code, report = run(["run", path, "--out", tmp_path], capsys)
        assert code == 0, report
        assert (tmp_path / "report.json").exists()

    def test_deterministic_outputs(self, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run(["run", SCENARIOS / "simulate_pde_g1_5.json", "--out", out, "--K", 32], capsys)[0] == 0
        files = sorted(p.name for p in a.glob("*.csv"))
        assert files
        for name in files:
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_invalid_config_exit(self, tmp_path, capsys):
        code, report = run(["simulate-ide", "--system", SCENARIOS / "systems/two_delays.json",
                            "--K", 4, "--out", tmp_path], capsys)
        assert code == 2 and report["status"] == "invalid"
        assert not (tmp_path / "report.json").exists()

    def test_certificate_violation_exit(self, tmp_path, capsys):
        cert = tmp_path / "cert.json"
        cert.write_text(json.dumps({"weights": [1.0, 3.0], "lambda": 0.9}))
        code, report = run(["check-razumikhin", "--system", SCENARIOS / "systems/mean_recirculation_g2.json",
                            "--cert", cert, "--samples", 500, "--K", 16, "--out", tmp_path], capsys)
        assert code == 4 and report["violations"] > 0
        assert json.loads((tmp_path / "razumikhin.json").read_text())["witness"] is not None

    def test_escape_exit(self, tmp_path, capsys):
        system = tmp_path / "sys.json"
        system.write_text(json.dumps({"type": "point_plus_kernel", "delays": [0.125, 0.25],
                                      "A": [[[2.0]], [[1.0]]], "r": 0.25}))
        code, report = run(["simulate-ide", "--system", system, "--K", 16, "--T", 40,
                            "--out", tmp_path], capsys)
        assert code == 3

    def test_equivalence_transport_exact(self, tmp_path, capsys):
        code, report = run(["run", SCENARIOS / "equivalence_transport.json", "--out", tmp_path], capsys)
        assert code == 0 and report["ratio"] is None
        assert max(report["discrepancy"]) <= 1e-12

    def test_feedback_flags(self, tmp_path, capsys):
        code, report = run(["feedback-demo", "--g", 1.5, "--controller", "ide", "--K", 128,
                            "--out", tmp_path], capsys)
        assert code == 0 and report["controller"] == "ide"
        assert report["sup_by_time"]["2"] <= 1e-10
        assert report["controller_mismatch"] <= 1e-10
        assert (tmp_path / "controls.csv").exists()

    def test_single_criterion(self, tmp_path, capsys):
        code, report = run(["acceptance", "--criterion", 7, "--out", tmp_path], capsys)
        assert code == 0 and report["passed"]
