import csv
import json
import shutil
import subprocess

import numpy as np
import pytest

from acoustrap.calibration import default_calibration, load_calibration
from acoustrap.cli import main
from acoustrap.core import MediumConfig, TransducerArray, Vec3, wavelength
from acoustrap.formats import load_hologram_csv, load_pgm
from acoustrap.hologram import make_focus_hologram, make_octahedral_hologram


def run_cli(*argv):
    return main(list(argv))


class TestHologramCommand:
    def test_focus_writes_csv_and_manifest(self, tmp_path, capsys):
        out = tmp_path / "focus"
        assert run_cli("hologram", "focus", "--at", "25,25,40", "--out-dir", str(out)) == 0
        holo = load_hologram_csv(out / "hologram.csv")
        expected = make_focus_hologram(TransducerArray(), Vec3(25, 25, 40), MediumConfig())
        assert np.max(np.abs(holo.phases - expected.phases)) < 1e-7
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["outputs"] == ["hologram.csv"]
        assert manifest["command"][0] == "acoustrap"
        assert "50x50" in capsys.readouterr().out

    def test_octa_emits_vertex_listing(self, tmp_path):
        out = tmp_path / "octa"
        rc = run_cli(
            "hologram", "octa", "--center", "25,25,40", "--diameter", "2.0",
            "--out-dir", str(out),
        )
        assert rc == 0
        doc = json.loads((out / "vertexes.json").read_text())
        assert doc["order"] == ["+x", "-x", "+y", "-y", "+z", "-z"]
        assert doc["vertexes_mm"][0] == [26.0, 25.0, 40.0]
        assert doc["vertexes_mm"][5] == [25.0, 25.0, 39.0]
        holo = load_hologram_csv(out / "hologram.csv")
        expected = make_octahedral_hologram(
            TransducerArray(), Vec3(25, 25, 40), 2.0, MediumConfig()
        )
        assert np.max(np.abs(holo.phases - expected.phases)) < 1e-7

    def test_octa_diameter_defaults_to_config_override(self, tmp_path):
        out = tmp_path / "octa_set"
        rc = run_cli(
            "hologram", "octa", "--center", "25,25,40",
            "--set", "trap.octahedron_diameter=2.0",
            "--out-dir", str(out),
        )
        assert rc == 0
        doc = json.loads((out / "vertexes.json").read_text())
        assert doc["vertexes_mm"][0] == [26.0, 25.0, 40.0]
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["trap"]["octahedron_diameter"] == 2.0

    def test_ib_cost_history(self, tmp_path):
        out = tmp_path / "ib"
        rc = run_cli(
            "hologram", "ib", "--targets", "25,25,40;26,25,40",
            "--iterations", "40", "--out-dir", str(out),
        )
        assert rc == 0
        with (out / "cost_history.csv").open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["iteration", "cost"]
        costs = [float(r[1]) for r in rows[1:]]
        assert len(costs) == 40
        assert all(b <= a + 1e-9 for a, b in zip(costs, costs[1:]))

    def test_focus_below_plane_is_geometry_error(self, tmp_path):
        assert run_cli(
            "hologram", "focus", "--at", "25,25,-5", "--out-dir", str(tmp_path)
        ) == 3

    def test_malformed_point_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run_cli("hologram", "focus", "--at", "25,25", "--out-dir", str(tmp_path))
        assert exc.value.code == 2


class TestFieldCommand:
    @pytest.fixture()
    def focus_csv(self, tmp_path):
        out = tmp_path / "holo"
        run_cli("hologram", "focus", "--at", "25,25,40", "--out-dir", str(out))
        return out / "hologram.csv"

    def test_slice_outputs(self, tmp_path, focus_csv):
        out = tmp_path / "field"
        rc = run_cli(
            "field", "--hologram", str(focus_csv), "--plane", "xoz",
            "--offset", "25", "--bounds", "24,26,39,41", "--resolution", "0.1",
            "--out-dir", str(out),
        )
        assert rc == 0
        img = load_pgm(out / "slice.pgm")
        assert img.dtype == np.uint16
        text = (out / "slice.csv").read_text().splitlines()
        assert "plane=xoz" in text[0]
        # focus sits mid-grid: the brightest pixel lands there
        peak = np.unravel_index(np.argmax(img), img.shape)
        assert abs(peak[0] - img.shape[0] // 2) <= 1
        assert abs(peak[1] - img.shape[1] // 2) <= 1

    def test_coarse_resolution_warns_but_completes(self, tmp_path, focus_csv):
        out = tmp_path / "coarse"
        lam = wavelength(MediumConfig(), TransducerArray())
        with pytest.warns(UserWarning, match="resolution"):
            rc = run_cli(
                "field", "--hologram", str(focus_csv), "--plane", "xoy",
                "--bounds", "20,30,20,30", "--resolution", f"{lam:.4f}",
                "--out-dir", str(out),
            )
        assert rc == 0
        assert (out / "slice.csv").exists()

    def test_grid_outside_tank_is_geometry_error(self, tmp_path, focus_csv):
        rc = run_cli(
            "field", "--hologram", str(focus_csv), "--plane", "xoy",
            "--bounds=-40,-35,20,25", "--resolution", "0.15",
            "--out-dir", str(tmp_path / "outside"),
        )
        assert rc == 3

    def test_bad_bounds_usage_error(self, tmp_path, focus_csv):
        with pytest.raises(SystemExit) as exc:
            run_cli(
                "field", "--hologram", str(focus_csv),
                "--bounds", "1,2,3", "--out-dir", str(tmp_path),
            )
        assert exc.value.code == 2

    def test_missing_hologram_file(self, tmp_path):
        rc = run_cli(
            "field", "--hologram", str(tmp_path / "absent.csv"),
            "--out-dir", str(tmp_path / "f"),
        )
        assert rc == 2


class TestCalibrateCommand:
    def test_noiseless_recovers_factory_jacobian(self, tmp_path, capsys):
        out = tmp_path / "cal"
        rc = run_cli(
            "calibrate", "--lattice", "1,1,2", "--moves", "10",
            "--scan-extent", "0.8", "--scan-step", "0.4",
            "--out-dir", str(out), "--seed", "3",
        )
        assert rc == 0
        jac, refs = load_calibration(out / "calibration.json")
        factory, _ = default_calibration()
        assert np.allclose(jac.matrix, factory.scaled(0.25).matrix, atol=1e-8)
        assert len(refs.points) == 2
        assert "residual RMS" in capsys.readouterr().out

    def test_bad_lattice_is_config_error(self, tmp_path):
        rc = run_cli("calibrate", "--lattice", "2,3", "--out-dir", str(tmp_path))
        assert rc == 2


class TestVisionCommand:
    def test_render_then_extract(self, tmp_path):
        out = tmp_path / "vis"
        rc = run_cli(
            "vision", "render", "--position", "25,25,40", "--frames", "2",
            "--camera", "both", "--seed", "5", "--out-dir", str(out),
        )
        assert rc == 0
        names = {p.name for p in out.iterdir()}
        assert {"background_h.pgm", "background_v.pgm", "frame_h_000.pgm",
                "frame_h_001.pgm", "frame_v_000.pgm", "frame_v_001.pgm",
                "observations.jsonl", "manifest.json"} <= names
        records = [
            json.loads(line) for line in (out / "observations.jsonl").read_text().splitlines()
        ]
        assert len(records) == 4 and all(r["valid"] for r in records)

        out2 = tmp_path / "extract"
        rc = run_cli(
            "vision", "extract",
            "--frame", str(out / "frame_h_000.pgm"),
            "--background", str(out / "background_h.pgm"),
            "--diameter-px", "6.3", "--seed", "2", "--out-dir", str(out2),
        )
        assert rc == 0
        obs = json.loads((out2 / "observation.json").read_text())
        assert obs["valid"]
        match = next(r for r in records if r["frame"] == "frame_h_000.pgm")
        assert abs(obs["u"] - match["u"]) < 0.5
        assert abs(obs["v"] - match["v"]) < 0.5

    def test_extract_empty_frame_exits_detection_code(self, tmp_path):
        out = tmp_path / "vis"
        run_cli(
            "vision", "render", "--position", "25,25,40", "--frames", "1",
            "--camera", "h", "--out-dir", str(out),
        )
        rc = run_cli(
            "vision", "extract",
            "--frame", str(out / "background_h.pgm"),
            "--background", str(out / "background_h.pgm"),
            "--diameter-px", "6.3", "--out-dir", str(tmp_path / "empty"),
        )
        assert rc == 4
        obs = json.loads((tmp_path / "empty" / "observation.json").read_text())
        assert not obs["valid"] and obs["reason"]


class TestSimulateCommand:
    def test_single_scenario_from_yaml(self, tmp_path, capsys):
        scenario = tmp_path / "scenario.yaml"
        scenario.write_text(
            "particle:\n"
            "  position: [25.0, 25.0, 50.0]\n"
            "  velocity: [0.0, 0.0, -10.0]\n"
            "  diameter_um: 400\n"
            "  contrast: positive\n"
            "seed: 7\n"
        )
        out = tmp_path / "run"
        rc = run_cli("simulate", "--scenario", str(scenario), "--out-dir", str(out))
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["outcome"] == "trapped"
        assert report["deviation_mm"] < 0.05
        assert "outcome=trapped" in capsys.readouterr().out

    def test_missing_scenario_file(self, tmp_path):
        rc = run_cli(
            "simulate", "--scenario", str(tmp_path / "none.yaml"),
            "--out-dir", str(tmp_path / "out"),
        )
        assert rc == 2

    def test_batch_outputs_and_determinism(self, tmp_path, capsys):
        argv = ("simulate", "--batch", "3", "--seed", "11")
        out1, out2 = tmp_path / "b1", tmp_path / "b2"
        assert run_cli(*argv, "--out-dir", str(out1)) == 0
        assert run_cli(*argv, "--out-dir", str(out2)) == 0

        lines = (out1 / "report.jsonl").read_text().splitlines()
        assert len(lines) == 3
        assert (out1 / "report.jsonl").read_bytes() == (out2 / "report.jsonl").read_bytes()
        assert (out1 / "summary.csv").read_bytes() == (out2 / "summary.csv").read_bytes()
        assert (out1 / "aggregate.json").read_bytes() == (out2 / "aggregate.json").read_bytes()

        with (out1 / "summary.csv").open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0][:6] == [
            "run", "material", "diameter_um", "outcome", "failure_reason", "time_to_trap_s",
        ]
        assert len(rows) == 4
        assert all(r[3] == "trapped" for r in rows[1:])

        aggregate = json.loads((out1 / "aggregate.json").read_text())
        assert aggregate["runs"] == 3
        assert aggregate["success_rate"] == 1.0
        assert aggregate["median_deviation_mm"] < 0.05
        assert "success rate 100.0%" in capsys.readouterr().out

    def test_rerun_reproduces_manifest(self, tmp_path):
        out = tmp_path / "again"
        argv = ("simulate", "--batch", "2", "--seed", "4", "--out-dir", str(out))
        assert run_cli(*argv) == 0
        first = {p.name: p.read_bytes() for p in out.iterdir()}
        assert run_cli(*argv) == 0
        second = {p.name: p.read_bytes() for p in out.iterdir()}
        assert first == second

    def test_bad_override_is_config_error(self, tmp_path):
        rc = run_cli(
            "simulate", "--batch", "1", "--set", "nonsense",
            "--out-dir", str(tmp_path),
        )
        assert rc == 2
        rc = run_cli(
            "simulate", "--batch", "1", "--set", "trap.unknown_key=1",
            "--out-dir", str(tmp_path),
        )
        assert rc == 2


class TestBenchCommand:
    def test_bench_report(self, tmp_path, capsys):
        out = tmp_path / "bench"
        rc = run_cli(
            "bench", "--repeats", "3", "--ib-iterations", "5", "--out-dir", str(out)
        )
        assert rc == 0
        doc = json.loads((out / "bench.json").read_text())
        assert doc["elements"] == 2500
        for key in ("focus_ms", "octahedral_ms", "iterative_ms"):
            assert doc[key] > 0.0
        assert doc["iterative_to_octahedral_ratio"] > 1.0
        assert doc["octahedral_within_transfer_window"] is True
        assert doc["octahedral_within_refresh_cadence"] is True
        assert "synthesis route" in capsys.readouterr().out


class TestEntryPoint:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run_cli("--version")
        assert exc.value.code == 0
        assert "acoustrap" in capsys.readouterr().out

    @pytest.mark.skipif(shutil.which("acoustrap") is None, reason="script not installed")
    def test_installed_script_smoke(self, tmp_path):
        proc = subprocess.run(
            ["acoustrap", "hologram", "focus", "--at", "25,25,40",
             "--out-dir", str(tmp_path)],
            capture_output=True, text=True, timeout=120,
        )
        assert proc.returncode == 0
        assert (tmp_path / "hologram.csv").exists()
        assert (tmp_path / "manifest.json").exists()
