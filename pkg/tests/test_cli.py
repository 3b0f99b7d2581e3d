from __future__ import annotations

import json
from pathlib import Path

from tsdebate.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUN_FAILURE, main
from tsdebate.model import instance_to_dict, transcript_from_json

from .conftest import make_instance, make_series, sinusoid

FIXTURE_MANIFEST = Path(__file__).parent / "fixtures" / "dataset" / "manifest.json"


def write_instance(tmp_path: Path, instance=None) -> Path:
    inst = instance or make_instance(
        id="cli-inst",
        series=make_series(sinusoid(3, 32), id="cli-series"),
        labels=("increasing", "decreasing", "stable"),
    )
    path = tmp_path / "instance.json"
    path.write_text(json.dumps(instance_to_dict(inst)))
    return path


class TestRun:
    def test_successful_run_writes_transcript_and_charts(self, tmp_path, capsys):
        path = write_instance(tmp_path)
        code = main(["run", str(path), "--backend", "mock", "--out", str(tmp_path / "runs")])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "final answer:" in out
        assert "agreement:" in out
        instance_dir = tmp_path / "runs" / "adhoc" / "tsdebate" / "run1" / "cli-inst"
        transcript = transcript_from_json((instance_dir / "transcript.json").read_text())
        assert transcript.status == "ok"
        assert (instance_dir / "cli-inst.time.png").exists()
        assert (instance_dir / "cli-inst.freq.png").exists()

    def test_flags_override_defaults_in_snapshot(self, tmp_path):
        path = write_instance(tmp_path)
        code = main(
            ["run", str(path), "--backend", "mock", "--rounds", "3", "--reviewers", "2",
             "--out", str(tmp_path / "runs")]
        )
        assert code == EXIT_OK
        transcript = transcript_from_json(
            (tmp_path / "runs" / "adhoc" / "tsdebate" / "run1" / "cli-inst" / "transcript.json").read_text()
        )
        assert transcript.config["rounds"] == 3
        assert transcript.config["reviewers"] == 2

    def test_config_file_between_flags_and_defaults(self, tmp_path):
        path = write_instance(tmp_path)
        cfg = tmp_path / "tsdebate.ini"
        cfg.write_text("[debate]\nrounds = 4\nreviewers = 2\n")
        code = main(
            ["run", str(path), "--backend", "mock", "--config", str(cfg),
             "--reviewers", "1", "--out", str(tmp_path / "runs")]
        )
        assert code == EXIT_OK
        transcript = transcript_from_json(
            (tmp_path / "runs" / "adhoc" / "tsdebate" / "run1" / "cli-inst" / "transcript.json").read_text()
        )
        assert transcript.config["rounds"] == 4  # from config file
        assert transcript.config["reviewers"] == 1  # flag wins

    def test_missing_api_key_for_http_is_config_error(self, tmp_path, monkeypatch, capsys):
        monkeypatch.delenv("TSDEBATE_API_KEY", raising=False)
        path = write_instance(tmp_path)
        code = main(["run", str(path), "--backend", "http", "--out", str(tmp_path / "runs")])
        assert code == EXIT_CONFIG
        assert "TSDEBATE_API_KEY" in capsys.readouterr().err

    def test_run_failure_still_writes_transcript(self, tmp_path, capsys):
        bad = make_instance(
            id="bad-inst", series=make_series([1.0, 2.0], [3.0]), labels=("a", "b")
        )
        path = write_instance(tmp_path, instance=bad)
        code = main(["run", str(path), "--backend", "mock", "--out", str(tmp_path / "runs")])
        assert code == EXIT_RUN_FAILURE
        transcript = transcript_from_json(
            (tmp_path / "runs" / "adhoc" / "tsdebate" / "run1" / "bad-inst" / "transcript.json").read_text()
        )
        assert transcript.status == "failed"
        assert transcript.failure_stage == "validation"

    def test_missing_instance_file_is_config_error(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.json"), "--backend", "mock"]) == EXIT_CONFIG


class TestBench:
    def test_bench_mock_emits_reports(self, tmp_path, capsys):
        out = tmp_path / "runs"
        code = main(
            ["bench", str(FIXTURE_MANIFEST), "--backend", "mock", "--method", "tsdebate",
             "--runs", "1", "--cap", "100", "--out", str(out)]
        )
        assert code == EXIT_OK
        method_dir = out / "fixture6" / "tsdebate"
        report = json.loads((method_dir / "report.json").read_text())
        assert report["report"]["per_run"][0]["n"] == 6
        assert (method_dir / "report.txt").exists()
        run_dir = method_dir / "run1"
        assert len(list(run_dir.iterdir())) == 6
        printed = capsys.readouterr().out
        assert "dataset: fixture6" in printed

    def test_bench_three_runs_reports_per_run_rows_and_std(self, tmp_path):
        out = tmp_path / "runs"
        code = main(
            ["bench", str(FIXTURE_MANIFEST), "--backend", "mock", "--method", "zero_shot",
             "--runs", "3", "--out", str(out)]
        )
        assert code == EXIT_OK
        report = json.loads((out / "fixture6" / "zero_shot" / "report.json").read_text())
        assert len(report["report"]["per_run"]) == 3
        assert report["report"]["std"] is not None
        table = (out / "fixture6" / "zero_shot" / "report.txt").read_text()
        assert " std " in table or "\nstd" in table or " std" in table

    def test_bench_comparator_method(self, tmp_path):
        out = tmp_path / "runs"
        code = main(
            ["bench", str(FIXTURE_MANIFEST), "--backend", "mock", "--method", "cot_mm",
             "--runs", "1", "--out", str(out)]
        )
        assert code == EXIT_OK
        comparator_files = list((out / "fixture6" / "cot_mm" / "run1").glob("*/comparator.json"))
        assert len(comparator_files) == 6

    def test_bench_missing_manifest_is_config_error(self, tmp_path):
        assert main(["bench", str(tmp_path / "nope.json"), "--backend", "mock"]) == EXIT_CONFIG

    def test_parallel_runs_stay_deterministic(self, tmp_path):
        serial = tmp_path / "serial"
        parallel = tmp_path / "parallel"
        for out, workers in ((serial, "1"), (parallel, "3")):
            code = main(
                ["bench", str(FIXTURE_MANIFEST), "--backend", "mock", "--method", "tsdebate",
                 "--runs", "1", "--parallel", workers, "--out", str(out)]
            )
            assert code == EXIT_OK
        for rel in sorted(p.relative_to(serial) for p in serial.rglob("*") if p.is_file()):
            assert (serial / rel).read_bytes() == (parallel / rel).read_bytes(), rel


class TestInspect:
    def _transcript_path(self, tmp_path) -> Path:
        path = write_instance(tmp_path)
        main(["run", str(path), "--backend", "mock", "--out", str(tmp_path / "runs")])
        return tmp_path / "runs" / "adhoc" / "tsdebate" / "run1" / "cli-inst" / "transcript.json"

    def test_inspect_prints_sections_in_pipeline_order(self, tmp_path, capsys):
        t_path = self._transcript_path(tmp_path)
        capsys.readouterr()
        assert main(["inspect", str(t_path)]) == EXIT_OK
        out = capsys.readouterr().out
        knowledge = out.index("== domain knowledge ==")
        round1 = out.index("== round 1 evidence ==")
        reviewer = out.index("== reviewer 0 ==")
        synth = out.index("== synthesizer ==")
        tools = out.index("== tool log ==")
        assert knowledge < round1 < reviewer < synth < tools

    def test_claims_only(self, tmp_path, capsys):
        t_path = self._transcript_path(tmp_path)
        capsys.readouterr()
        assert main(["inspect", str(t_path), "--claims-only"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "reviewer 0:" in out
        assert "== round" not in out

    def test_inspect_does_not_mutate(self, tmp_path):
        t_path = self._transcript_path(tmp_path)
        before = t_path.read_bytes()
        main(["inspect", str(t_path)])
        assert t_path.read_bytes() == before

    def test_corrupt_transcript_reports_offset(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"format": "tsdebate-transcript/1", "instance_id": ')
        assert main(["inspect", str(bad)]) == EXIT_CONFIG
        assert "offset" in capsys.readouterr().err

    def test_failed_transcript_shows_failure_stage(self, tmp_path, capsys):
        bad = make_instance(id="bad2", series=make_series([1.0, 2.0], [3.0]), labels=("a", "b"))
        path = write_instance(tmp_path, instance=bad)
        main(["run", str(path), "--backend", "mock", "--out", str(tmp_path / "runs")])
        t_path = tmp_path / "runs" / "adhoc" / "tsdebate" / "run1" / "bad2" / "transcript.json"
        capsys.readouterr()
        main(["inspect", str(t_path)])
        out = capsys.readouterr().out
        assert "FAILED at stage validation" in out
