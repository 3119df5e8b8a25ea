"""Config validation, pipeline orchestration, artifact determinism."""

import json
import math
import warnings
from pathlib import Path

import pytest

from qneumann.cli import export_artifacts, main, run_command
from qneumann.config import ConfigError, dump_json, load_config, pl_from_json

FLAT_SPEC = {"h1": {"constant": 0.0}, "h2": {"constant": 0.0}}
FLAT_FRAME = {
    "mode": "explicit",
    "v0": [1.0, 1.0],
    "v1": [-1.0, 1.0],
    "v2": [1.0, -1.0],
}


def write_config(tmp_path: Path, body: dict, name: str = "cfg.json") -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(body))
    return path


def flat_config(**extra) -> dict:
    body = {
        "spec": FLAT_SPEC,
        "frame": FLAT_FRAME,
        "gamma": 0.5,
        "grids": {"psi_n": 129, "lambda_samples": 16},
        "solver": {"R": 16.0, "n": 17},
    }
    body.update(extra)
    return body


@pytest.fixture(scope="module")
def flat_run(tmp_path_factory):
    """One full flat pipeline run shared by the artifact tests."""
    tmp = tmp_path_factory.mktemp("flat_run")
    cfg = write_config(tmp, flat_config())
    out = tmp / "out"
    code = main(["all", "--config", str(cfg), "--out", str(out)])
    return cfg, out, code


class TestLoadConfig:
    def test_minimal_defaults(self, tmp_path):
        cfg = load_config(write_config(tmp_path, {"spec": FLAT_SPEC}))
        assert cfg.gamma == "auto"
        assert cfg.epsilon == "auto"
        assert cfg.grids["psi_n"] == 513
        assert cfg.frame_cfg == {"mode": "search"}
        assert cfg.spec.h1.eval(3.0) == 0.0

    def test_pl_decoding_anchors_at_first_breakpoint(self, tmp_path):
        body = {
            "spec": {
                "h1": {
                    "breakpoints": [0.0],
                    "slopes": [0.0, 0.5],
                    "value_at_first_breakpoint": 1.0,
                },
                "h2": {"constant": 0.0},
            }
        }
        cfg = load_config(write_config(tmp_path, body))
        assert cfg.spec.h1.eval(0.0) == 1.0
        assert cfg.spec.h1.eval(2.0) == 2.0
        assert cfg.spec.h1.eval(-5.0) == 1.0

    def test_slope_count_mismatch(self):
        with pytest.raises(ConfigError, match="slopes"):
            pl_from_json(
                {
                    "breakpoints": [0.0, 1.0],
                    "slopes": [0.0, 1.0],
                    "value_at_first_breakpoint": 0.0,
                },
                "/spec/h1",
            )

    def test_gamma_out_of_range(self, tmp_path):
        path = write_config(tmp_path, {"spec": FLAT_SPEC, "gamma": 1.5})
        with pytest.raises(ConfigError, match="/gamma"):
            load_config(path)

    def test_inadmissible_slope_reported(self, tmp_path):
        body = {
            "spec": {
                "h1": {
                    "breakpoints": [0.0],
                    "slopes": [0.2, 1.1],
                    "value_at_first_breakpoint": 0.0,
                },
                "h2": {"constant": 0.0},
            }
        }
        with pytest.raises(ConfigError, match="1.1"):
            load_config(write_config(tmp_path, body))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "absent.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config(path)

    def test_schema_pointer_in_message(self, tmp_path):
        path = write_config(
            tmp_path, {"spec": FLAT_SPEC, "grids": {"psi_n": "big"}})
        with pytest.raises(ConfigError, match="/grids/psi_n"):
            load_config(path)

    def test_unknown_key_rejected(self, tmp_path):
        path = write_config(tmp_path, {"spec": FLAT_SPEC, "plots": True})
        with pytest.raises(ConfigError):
            load_config(path)

    def test_resolution_must_be_dyadic(self, tmp_path):
        path = write_config(
            tmp_path, {"spec": FLAT_SPEC, "grids": {"psi_n": 100}})
        with pytest.raises(ConfigError, match="power of two plus one"):
            load_config(path)


class TestDumpJson:
    def test_seventeen_digit_floats(self):
        assert dump_json({"x": 0.1 + 0.2}) == (
            '{\n  "x": 0.30000000000000004\n}\n')

    def test_floats_stay_floats(self):
        assert dump_json(2.0) == "2.0\n"
        assert dump_json(1e30) == "1e+30\n"

    def test_sorted_keys(self):
        assert dump_json({"b": 1, "a": 2}).index('"a"') < dump_json(
            {"b": 1, "a": 2}).index('"b"')

    def test_rejects_nan(self):
        with pytest.raises(ValueError, match="NaN"):
            dump_json(float("nan"))


class TestPipeline:
    def test_flat_all_green(self, flat_run):
        _, out, code = flat_run
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["ok"] is True
        assert all(st["ok"] for st in report["stages"].values())

    def test_reported_constants(self, flat_run):
        _, out, _ = flat_run
        report = json.loads((out / "report.json").read_text())
        consts = report["constants"]
        assert consts["gamma"] == 0.5
        assert consts["delta"] == pytest.approx(1.0, abs=1e-9)
        assert consts["C"] == pytest.approx(math.sqrt(2.0), abs=1e-9)
        assert consts["a"] == [0.0, 0.0]

    def test_epsilon_max_in_report(self, flat_run):
        _, out, _ = flat_run
        text = (out / "report.json").read_text()
        assert '"epsilon_max": 0.35355339059327373' in text

    def test_level_curve_diamond(self, flat_run):
        _, out, _ = flat_run
        levels = json.loads((out / "psi_levels.json").read_text())
        one = next(e for e in levels["levels"] if e["lambda"] == 1.0)
        assert one["polyline"] == [
            [-1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, -1.0]]
        assert one["closed"] is True

    def test_field_csv_layout(self, flat_run):
        _, out, _ = flat_run
        lines = (out / "psi.csv").read_text().splitlines()
        assert lines[0] == "x1,x2,value"
        assert len(lines) == 1 + 129 * 129
        phi_head = (out / "phi.csv").read_text().splitlines()[0]
        assert phi_head == "x1,x2,phi,g1,g2"

    def test_deterministic_report(self, flat_run, tmp_path):
        cfg, out, _ = flat_run
        out2 = tmp_path / "again"
        assert main(["all", "--config", str(cfg), "--out", str(out2)]) == 0
        assert (out2 / "report.json").read_bytes() == (
            out / "report.json").read_bytes()
        assert (out2 / "psi.csv").read_bytes() == (out / "psi.csv").read_bytes()

    def test_rerun_reuses_artifacts(self, flat_run):
        cfg, out, _ = flat_run
        before = (out / "psi.csv").stat().st_mtime_ns
        assert main(["all", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "psi.csv").stat().st_mtime_ns == before

    def test_isolated_stage_reuses_upstream(self, flat_run):
        cfg, out, _ = flat_run
        before = (out / "testfn.json").stat().st_mtime_ns
        assert main(["testfn", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "testfn.json").stat().st_mtime_ns == before

    def test_isolated_stage_missing_upstream(self, flat_run, tmp_path):
        cfg, _, _ = flat_run
        code = main(
            ["psi", "--config", str(cfg), "--out", str(tmp_path / "empty")])
        assert code == 2

    def test_changed_config_invalidates_cache(self, flat_run, tmp_path):
        cfg_body = flat_config()
        cfg_body["grids"]["psi_n"] = 65
        out = tmp_path / "out"
        cfg = write_config(tmp_path, cfg_body)
        assert main(["all", "--config", str(cfg), "--out", str(out)]) == 0
        first = (out / "psi.csv").read_bytes()
        cfg_body["grids"]["psi_n"] = 129
        cfg = write_config(tmp_path, cfg_body)
        assert main(["all", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "psi.csv").read_bytes() != first


class TestFailurePaths:
    def test_epsilon_above_bound(self, tmp_path, capsys):
        cfg = write_config(tmp_path, flat_config(epsilon=0.5))
        code = main(["all", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code == 1
        err = capsys.readouterr().err
        assert "0.353553" in err
        payload = json.loads((tmp_path / "o" / "testfn.json").read_text())
        assert payload["ok"] is False
        assert "admissible range" in payload["reason"]

    def test_no_certifiable_gamma(self, tmp_path):
        body = {
            "spec": {
                "h1": {
                    "breakpoints": [0.0],
                    "slopes": [0.9, 0.99],
                    "value_at_first_breakpoint": 0.0,
                },
                "h2": {"constant": 0.0},
            },
            "frame": FLAT_FRAME,
            "grids": {"lambda_samples": 16},
        }
        cfg = write_config(tmp_path, body)
        code = main(["check", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code == 1
        payload = json.loads((tmp_path / "o" / "check.json").read_text())
        assert payload["ok"] is False
        assert payload["gamma"] is None
        assert "no chord parameter" in payload["reason"]

    def test_explicit_gamma_outside_band(self, tmp_path):
        body = {
            "spec": {
                "h1": {
                    "breakpoints": [0.0],
                    "slopes": [0.2, 0.5],
                    "value_at_first_breakpoint": 0.0,
                },
                "h2": {
                    "breakpoints": [0.0],
                    "slopes": [0.4, 0.25],
                    "value_at_first_breakpoint": 0.0,
                },
            },
            "frame": FLAT_FRAME,
            "gamma": 0.9,
            "grids": {"lambda_samples": 16},
        }
        cfg = write_config(tmp_path, body)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            code = main(
                ["check", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code == 1
        payload = json.loads((tmp_path / "o" / "check.json").read_text())
        assert "chord-slope certificate fails" in payload["reason"]

    def test_usage_error_exit_codes(self, tmp_path):
        cfg = write_config(tmp_path, flat_config())
        assert main(["all", "--config", str(tmp_path / "nope.json")]) == 2
        assert main(["all", "--config", str(cfg), "--grid", "12"]) == 2
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate", "--config", str(cfg)])
        assert exc.value.code == 2


class TestVariants:
    def test_shifted_spec_example_frame(self, tmp_path):
        body = {
            "spec": {
                "h1": {
                    "breakpoints": [0.0],
                    "slopes": [0.0, 0.5],
                    "value_at_first_breakpoint": 1.0,
                },
                "h2": {"constant": 0.0},
            },
            "frame": {
                "mode": "example",
                "kind": "flat_side",
                "params": {"alpha1": 0.5},
            },
            "grids": {"psi_n": 129, "lambda_samples": 16},
            "solver": {"R": 16.0, "n": 17},
        }
        cfg = write_config(tmp_path, body)
        out = tmp_path / "out"
        assert main(["all", "--config", str(cfg), "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["constants"]["a"] == [1.0, 0.0]
        assert report["stages"]["solve"]["C1"] == 2.0
        assert report["stages"]["solve"]["C2"] == 13.0

    def test_dirichlet_zero_far_edge(self, tmp_path):
        body = flat_config(
            solver={"R": 16.0, "n": 17, "far_bc": "dirichlet_zero"})
        cfg = write_config(tmp_path, body)
        out = tmp_path / "out"
        assert main(["all", "--config", str(cfg), "--out", str(out)]) == 0
        payload = json.loads((out / "solve.json").read_text())
        assert payload["far_bc"] == "dirichlet_zero"
        assert payload["converged"] is True

    def test_cos_source_solver(self, tmp_path):
        body = flat_config(
            solver={
                "R": 16.0,
                "n": 17,
                "operator": {"g": {"kind": "cos_cos", "amplitude": 3.0}},
            })
        cfg = write_config(tmp_path, body)
        out = tmp_path / "out"
        assert main(["check", "--config", str(cfg), "--out", str(out)]) == 0
        assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 0
        payload = json.loads((out / "solve.json").read_text())
        assert payload["C2"] == 3.0
        assert payload["comparison"]["ok"] is True

    def test_lambda_samples_override(self, tmp_path):
        cfg = write_config(tmp_path, flat_config())
        out = tmp_path / "out"
        code = main(["check", "--config", str(cfg), "--out", str(out),
                     "--lambda-samples", "8"])
        assert code == 0
        payload = json.loads((out / "check.json").read_text())
        assert payload["lambda_count"] == 8


class TestExportArtifacts:
    def test_empty_stage_list_writes_nothing(self, tmp_path):
        assert export_artifacts(tmp_path, {}) == []
        assert list(tmp_path.iterdir()) == []

    def test_report_written_for_stages(self, tmp_path):
        paths = export_artifacts(tmp_path, {"check": {"ok": True, "gamma": 0.5}})
        assert paths == [tmp_path / "report.json"]
        report = json.loads(paths[0].read_text())
        assert report["ok"] is True
        assert report["constants"]["gamma"] == 0.5


class TestRunCommand:
    def test_direct_call_returns_status(self, tmp_path):
        cfg = load_config(write_config(tmp_path, flat_config()))
        assert run_command(cfg, "check", tmp_path / "out") == 0
        assert (tmp_path / "out" / "check.json").exists()

    def test_unknown_command_rejected(self, tmp_path):
        cfg = load_config(write_config(tmp_path, flat_config()))
        with pytest.raises(ConfigError, match="unknown command"):
            run_command(cfg, "bogus", tmp_path / "out")
