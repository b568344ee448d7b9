import json

import pandas as pd
import pytest

import main
import services.runner as runner
from core.errors import ConfigError, NonConvergenceError
from scenario import from_mapping
from services.runner import execute
from storage import load_summary, read_manifest, write_json

QUIET_CHAIN = {
    "geometry": {"kind": "chain", "N": 3, "a0": 0.5},
    "params": {"rabi": 0.0, "trap_freq": 1.0},
    "run": {"t_max": 1000.0, "sample_dt": 50.0, "stride": 1, "t_hold": 200.0},
}

SHORT_CHAIN_YAML = """
geometry: {kind: chain, N: 3, a0: 0.5}
params: {rabi: 0.05, trap_freq: 1.0}
run: {t_max: 100.0, sample_dt: 50.0, stride: 1, t_hold: 500.0}
"""


class TestExecute:
    def test_zpm_table(self, tmp_path):
        result = execute("zpm-table", from_mapping({}), output_dir=tmp_path)
        assert result["success"]
        table = pd.read_csv(tmp_path / "zpm_table.csv")
        assert list(table.columns) == ["species", "a=1.5", "a=1", "a=0.5"]
        assert len(table) == 5
        assert read_manifest(tmp_path)["status"] == "complete"

    def test_simulate_quiet_chain(self, tmp_path):
        result = execute("simulate", from_mapping(QUIET_CHAIN), output_dir=tmp_path)
        assert result["artifacts"] == ["trajectory.csv", "summary.json"]
        summary = load_summary(tmp_path / "summary.json")
        assert summary["converged"]
        assert summary["outcome"]["kind"] == "converged"
        assert summary["classification"]["kind"] == "uniform"
        assert summary["max_displacement"] == 0.0
        assert summary["final_positions"].shape == (3, 2)

    def test_simulate_with_disorder_records_seed(self, tmp_path):
        cfg = from_mapping({**QUIET_CHAIN, "ensemble": {"disorder_amplitude": 0.01, "base_seed": 9}})
        execute("simulate", cfg, output_dir=tmp_path)
        summary = load_summary(tmp_path / "summary.json")
        assert summary["seed"] is not None
        assert summary["disorder_amplitude"] == 0.01

    def test_two_atom_potential(self, tmp_path):
        cfg = from_mapping({
            "geometry": {"kind": "two_atom", "a0": 0.6},
            "potential": {"start": 0.5, "stop": 2.5, "points_per_lambda": 200,
                          "theta_values": [0.2 * 3.141592653589793, 1.5707963267948966]},
        })
        payload = execute("potential", cfg, output_dir=tmp_path)
        assert set(payload["artifacts"]) == {"potential.csv", "minima.json", "minima_scan.csv"}
        minima = json.loads((tmp_path / "minima.json").read_text())
        assert minima["units"] == "hbar*Gamma0"
        assert minima["minima"]
        assert set(minima["minima"][0]) == {"coordinate", "value"}

    def test_potential_needs_pair_or_ring(self, tmp_path):
        cfg = from_mapping({"geometry": {"kind": "chain", "N": 5}})
        with pytest.raises(ConfigError):
            execute("potential", cfg, output_dir=tmp_path)
        manifest = read_manifest(tmp_path)
        assert manifest["status"] == "failed"
        assert manifest["error"]["kind"] == "config"

    def test_require_converged(self, tmp_path):
        cfg = from_mapping({**QUIET_CHAIN, "run": {"t_max": 100.0, "sample_dt": 50.0, "t_hold": 500.0}})
        with pytest.raises(NonConvergenceError):
            execute("simulate", cfg, output_dir=tmp_path, require_converged=True)
        assert read_manifest(tmp_path)["status"] == "failed"

    def test_ensemble_artifacts(self, tmp_path):
        cfg = from_mapping({**QUIET_CHAIN, "ensemble": {"n_realizations": 2, "disorder_amplitude": 0.01}})
        execute("ensemble", cfg, output_dir=tmp_path)
        payload = json.loads((tmp_path / "ensemble.json").read_text())
        assert payload["outcome_counts"]["converged"] == 2
        assert [r["index"] for r in payload["realizations"]] == [0, 1]

    def test_unknown_command(self, tmp_path):
        with pytest.raises(ConfigError):
            execute("render", from_mapping({}), output_dir=tmp_path)

    def test_unexpected_failure_is_recorded(self, tmp_path, monkeypatch):
        def explode(out):
            raise RuntimeError("disk vanished")

        monkeypatch.setattr(runner, "_zpm_table", explode)
        with pytest.raises(RuntimeError):
            execute("zpm-table", from_mapping({}), output_dir=tmp_path)
        manifest = read_manifest(tmp_path)
        assert manifest["status"] == "failed"
        assert manifest["error"]["kind"] == "internal"
        assert "disk vanished" in manifest["error"]["error"]

    def test_summary_without_positions(self, tmp_path):
        summary = write_json(tmp_path / "summary.json", {"converged": True})
        cfg = from_mapping({"geometry": {"kind": "chain", "N": 4}})
        with pytest.raises(ConfigError) as info:
            execute("spectrum", cfg, output_dir=tmp_path / "out", from_summary=str(summary))
        assert "final_positions" in info.value.message
        manifest = read_manifest(tmp_path / "out")
        assert manifest["status"] == "failed"
        assert manifest["error"]["kind"] == "config"


class TestMain:
    def test_success(self, tmp_path, capsys):
        code = main.main(["zpm-table", "--output", str(tmp_path)])
        assert code == 0
        assert json.loads(capsys.readouterr().out)["success"] is True

    def test_config_error_exit_code(self, tmp_path, capsys):
        code = main.main(["simulate", "--config", str(tmp_path / "missing.yaml"), "--output", str(tmp_path)])
        assert code == 2
        error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert error["success"] is False
        assert error["kind"] == "config"

    def test_unknown_key_exit_code(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("params:\n  omega_trapp: 1.0\n", encoding="utf-8")
        assert main.main(["simulate", "--config", str(path), "--output", str(tmp_path / "out")]) == 2

    def test_timeout_with_require_converged(self, tmp_path):
        path = tmp_path / "short.yaml"
        path.write_text(SHORT_CHAIN_YAML, encoding="utf-8")
        code = main.main(["simulate", "--config", str(path), "--output", str(tmp_path / "out"),
                          "--require-converged"])
        assert code == 4

    def test_timeout_without_flag_succeeds(self, tmp_path):
        path = tmp_path / "short.yaml"
        path.write_text(SHORT_CHAIN_YAML, encoding="utf-8")
        assert main.main(["simulate", "--config", str(path), "--output", str(tmp_path / "out")]) == 0

    def test_missing_atom_count_is_a_config_error(self, tmp_path, capsys):
        path = tmp_path / "empty.yaml"
        path.write_text("", encoding="utf-8")
        assert main.main(["simulate", "--config", str(path), "--output", str(tmp_path / "out")]) == 2
        error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert error["key"] == "geometry.n_atoms"
        assert not (tmp_path / "out").exists()

    def test_zpm_table_accepts_an_empty_config(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("", encoding="utf-8")
        assert main.main(["zpm-table", "--config", str(path), "--output", str(tmp_path / "out")]) == 0
