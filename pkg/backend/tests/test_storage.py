import json
import math

import numpy as np
import pandas as pd
import pytest

from core.errors import ConfigError
from dynamics import IntegrationMode, StopCriteria, integrate
from model import SystemParams, build_geometry
from storage import (
    MANIFEST, RunDirectory, _atomic_write, load_summary, load_trajectory, read_manifest,
    trajectory_frame, write_csv, write_json,
)


def _broken(fh):
    fh.write("partial")
    raise RuntimeError("disk full")


class TestAtomicWrite:
    def test_no_temporary_files_left(self, tmp_path):
        write_json(tmp_path / "a.json", {"x": 1})
        assert [p.name for p in tmp_path.iterdir()] == ["a.json"]

    def test_failed_write_leaves_nothing(self, tmp_path):
        with pytest.raises(RuntimeError):
            _atomic_write(tmp_path / "b.json", _broken)
        assert list(tmp_path.iterdir()) == []

    def test_failed_write_keeps_previous_version(self, tmp_path):
        path = write_json(tmp_path / "c.json", {"version": 1})
        with pytest.raises(RuntimeError):
            _atomic_write(path, _broken)
        assert json.loads(path.read_text())["version"] == 1

    def test_creates_parent_directories(self, tmp_path):
        path = write_json(tmp_path / "deep" / "er" / "d.json", {})
        assert path.is_file()


class TestFormats:
    def test_csv_round_trips_doubles(self, tmp_path):
        values = np.array([0.1 + 0.2, math.pi / 3, 1e-17, -2.5e300, 1 / 7])
        path = write_csv(tmp_path / "v.csv", pd.DataFrame({"v": values}))
        back = pd.read_csv(path, float_precision="round_trip")["v"].to_numpy()
        np.testing.assert_array_equal(back, values)

    def test_json_handles_numpy_and_complex(self, tmp_path):
        path = write_json(tmp_path / "n.json", {"i": np.int64(3), "f": np.float64(0.5),
                                                "a": np.arange(3), "c": 1 + 2j})
        data = json.loads(path.read_text())
        assert data == {"i": 3, "f": 0.5, "a": [0, 1, 2], "c": [1.0, 2.0]}


class TestRunDirectory:
    def test_manifest_lifecycle(self, tmp_path):
        out = RunDirectory(tmp_path / "run", "simulate")
        out.start(config={"geometry": {"N": 3}})
        manifest = read_manifest(out.root)
        assert manifest["status"] == "running"
        assert manifest["config"]["geometry"]["N"] == 3

        out.csv("table.csv", pd.DataFrame({"x": [1.0]}))
        out.json("summary.json", {"ok": True})
        out.complete()
        manifest = read_manifest(out.root)
        assert manifest["status"] == "complete"
        assert manifest["artifacts"] == ["table.csv", "summary.json"]
        assert manifest["command"] == "simulate"

    def test_failure_is_recorded(self, tmp_path):
        out = RunDirectory(tmp_path, "sweep")
        out.start()
        out.fail({"success": False, "kind": "numerical", "error": "step size underflow"})
        manifest = json.loads((tmp_path / MANIFEST).read_text())
        assert manifest["status"] == "failed"
        assert manifest["error"]["kind"] == "numerical"

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ConfigError):
            read_manifest(tmp_path)


class TestReload:
    @pytest.fixture
    def trajectory(self):
        params = SystemParams(rabi=0.05, trap_freq=1.0)
        stop = StopCriteria(t_max=300.0, sample_dt=50.0, stride=1)
        return integrate(build_geometry("chain", 3, 0.5), params, IntegrationMode.FULL, stop)

    def test_trajectory_frame_columns(self, trajectory):
        frame = trajectory_frame(trajectory)
        assert list(frame.columns[:7]) == ["time", "x_0", "y_0", "px_0", "py_0", "re_sigma_0", "im_sigma_0"]
        assert len(frame.columns) == 1 + 6 * 3
        assert len(frame) == len(trajectory.samples)

    def test_trajectory_round_trip(self, tmp_path, trajectory):
        path = write_csv(tmp_path / "trajectory.csv", trajectory_frame(trajectory))
        states = load_trajectory(path)
        assert len(states) == len(trajectory.samples)
        for original, loaded in zip(trajectory.samples, states):
            assert loaded.time == original.time
            np.testing.assert_array_equal(loaded.positions, original.positions)
            np.testing.assert_array_equal(loaded.momenta, original.momenta)
            np.testing.assert_array_equal(loaded.coherences, original.coherences)

    def test_summary_round_trip(self, tmp_path):
        positions = np.array([[0.0, 0.0], [0.5000000000000001, 0.0], [1.1, 0.0]])
        write_json(tmp_path / "summary.json", {"final_positions": positions.tolist(), "converged": True})
        summary = load_summary(tmp_path / "summary.json")
        np.testing.assert_array_equal(summary["final_positions"], positions)
        assert summary["converged"] is True

    def test_missing_files(self, tmp_path):
        with pytest.raises(ConfigError):
            load_summary(tmp_path / "nope.json")
        with pytest.raises(ConfigError):
            load_trajectory(tmp_path / "nope.csv")
