"""Operator entry point: run one instance, sweep a benchmark, inspect transcripts.

Config precedence is flags > config file > defaults; the config file is an INI
document with [backend], [rates], [budgets], [debate], and [paths] sections.
Only the API key comes from the environment (TSDEBATE_API_KEY).

Transcript layout: runs/<dataset>/<method>/run<id>/<instance_id>/ holding
transcript.json, <instance_id>.time.png, <instance_id>.freq.png, and request
captures when enabled.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Optional, Sequence

from .evalharness import (
    DatasetError,
    DatasetManifest,
    HttpScorer,
    InstanceScore,
    MetricReport,
    aggregate,
    cost_report,
    load_dataset,
    sample,
    score_instance,
)
from .gateway import HttpBackend, MockBackend
from .model import (
    CostLedger,
    DebateTranscript,
    TaskInstance,
    instance_from_dict,
    transcript_from_json,
    transcript_to_json,
)
from .orchestrator import Orchestrator, RunConfig, RunOutcome

API_KEY_ENV = "TSDEBATE_API_KEY"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUN_FAILURE = 3

METHODS = ("tsdebate", "zero_shot", "cot", "zero_shot_mm", "cot_mm")


class ConfigError(Exception):
    pass


# --- Configuration -------------------------------------------------------------


def _load_config_file(path: Optional[str]) -> dict[str, Any]:
    if not path:
        return {}
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, Any] = {}
    get = parser.get
    if parser.has_section("backend"):
        values["backend"] = get("backend", "kind", fallback=None)
        values["endpoint"] = get("backend", "endpoint", fallback=None)
        values["model"] = get("backend", "model", fallback=None)
    if parser.has_section("rates"):
        values["rate_input_per_million"] = parser.getfloat("rates", "input_per_million", fallback=None)
        values["rate_output_per_million"] = parser.getfloat("rates", "output_per_million", fallback=None)
    if parser.has_section("budgets"):
        values["analyst_budget"] = parser.getint("budgets", "analyst", fallback=None)
        values["reviewer_budget"] = parser.getint("budgets", "reviewer", fallback=None)
    if parser.has_section("debate"):
        values["rounds"] = parser.getint("debate", "rounds", fallback=None)
        values["reviewers"] = parser.getint("debate", "reviewers", fallback=None)
        seed = get("debate", "seed", fallback="")
        values["seed"] = int(seed) if seed else None
    if parser.has_section("paths"):
        values["runs_dir"] = get("paths", "runs_dir", fallback=None)
        values["templates_dir"] = get("paths", "templates_dir", fallback=None) or None
    return {k: v for k, v in values.items() if v is not None}


def build_config(args: argparse.Namespace) -> tuple[RunConfig, Path]:
    """flags > config file > defaults."""
    file_values = _load_config_file(getattr(args, "config", None))
    defaults = RunConfig()
    merged: dict[str, Any] = {}
    for name in (
        "rounds",
        "reviewers",
        "analyst_budget",
        "reviewer_budget",
        "model",
        "backend",
        "endpoint",
        "rate_input_per_million",
        "rate_output_per_million",
        "seed",
        "parallel",
        "capture",
        "templates_dir",
        "scorer_url",
    ):
        flag = getattr(args, name, None)
        if flag is not None and flag is not False:
            merged[name] = flag
        elif name in file_values:
            merged[name] = file_values[name]
        else:
            merged[name] = getattr(defaults, name)
    try:
        config = RunConfig(**merged)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    runs_dir = Path(getattr(args, "out", None) or file_values.get("runs_dir") or "runs")
    return config, runs_dir


def build_backend(config: RunConfig):
    if config.backend == "mock":
        return MockBackend()
    if config.backend == "http":
        api_key = os.environ.get(API_KEY_ENV, "").strip()
        if not api_key:
            raise ConfigError(
                f"HTTP backend needs an API key: set the {API_KEY_ENV} environment variable"
            )
        return HttpBackend(endpoint=config.endpoint, api_key=api_key)
    raise ConfigError(f"unknown backend {config.backend!r}: expected http or mock")


# --- Shared output helpers ----------------------------------------------------------


def _write_outcome(outcome: RunOutcome, directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    transcript_path = directory / "transcript.json"
    transcript_path.write_text(transcript_to_json(outcome.transcript), encoding="utf-8")
    iid = outcome.transcript.instance_id
    if outcome.time_chart is not None:
        (directory / f"{iid}.time.png").write_bytes(outcome.time_chart.png_bytes)
    if outcome.freq_chart is not None:
        (directory / f"{iid}.freq.png").write_bytes(outcome.freq_chart.png_bytes)
    return transcript_path


def _load_instances_file(path: str) -> list[TaskInstance]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read instance file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"instance file is not valid JSON (offset {exc.pos}): {exc.msg}") from exc
    entries = raw if isinstance(raw, list) else [raw]
    try:
        return [instance_from_dict(e) for e in entries]
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"malformed instance: {exc}") from exc


# --- run -------------------------------------------------------------------------------


def cmd_run(args: argparse.Namespace) -> int:
    config, runs_dir = build_config(args)
    backend = build_backend(config)
    instances = _load_instances_file(args.instance)
    if len(instances) != 1:
        raise ConfigError(f"run expects exactly one instance, file has {len(instances)}")
    instance = instances[0]
    orch = Orchestrator(backend, config)
    out_dir = runs_dir / "adhoc" / "tsdebate" / "run1" / instance.id
    capture_dir = out_dir / "captures" if config.capture else None
    outcome = orch.run_instance(instance, capture_dir=capture_dir)
    transcript_path = _write_outcome(outcome, out_dir)
    t = outcome.transcript
    print(f"transcript: {transcript_path}")
    if t.status == "ok":
        verdict = t.synthesizer
        answer = verdict.final_answer.display() if verdict.final_answer else "(unmapped)"
        print(f"final answer: {answer}")
        print(f"agreement: {verdict.agreement.value}  resolution: {verdict.resolution.value}")
        print(
            f"cost: {t.cost.input_tokens} in / {t.cost.output_tokens} out tokens, "
            f"${t.cost.estimated_cost:.4f}, {t.cost.wall_time:.1f}s"
        )
        return EXIT_OK
    print(f"run failed at stage {t.failure_stage}: {t.error}")
    return EXIT_RUN_FAILURE


# --- bench ---------------------------------------------------------------------------------


def _bench_one(
    orch: Orchestrator,
    method: str,
    instance: TaskInstance,
    run_dir: Path,
    capture: bool,
    scorer,
) -> tuple[InstanceScore, Any, bool]:
    """Returns (score, cost ledger entry, run_failed)."""
    if method == "tsdebate":
        capture_dir = run_dir / instance.id / "captures" if capture else None
        outcome = orch.run_instance(instance, capture_dir=capture_dir)
        _write_outcome(outcome, run_dir / instance.id)
        t = outcome.transcript
        answer = t.synthesizer.final_answer if t.synthesizer else None
        failed = t.status != "ok"
        return score_instance(instance, answer, scorer), t.cost, failed
    mode = "cot" if method.startswith("cot") else "zero_shot"
    multimodal = method.endswith("_mm")
    outcome = orch.run_comparator(instance, mode, multimodal=multimodal)
    run_dir.joinpath(instance.id).mkdir(parents=True, exist_ok=True)
    (run_dir / instance.id / "comparator.json").write_text(
        json.dumps(
            {
                "instance_id": instance.id,
                "method": method,
                "answer": outcome.answer.display() if outcome.answer else None,
                "flags": list(outcome.flags),
                "raw_text": outcome.raw_text,
                "input_tokens": outcome.input_tokens,
                "output_tokens": outcome.output_tokens,
                "estimated_cost": outcome.estimated_cost,
            },
            sort_keys=True,
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    ledger = CostLedger(
        rate_input_per_million=orch.config.rate_input_per_million,
        rate_output_per_million=orch.config.rate_output_per_million,
    ).add(outcome.input_tokens, outcome.output_tokens, outcome.wall_time)
    return score_instance(instance, outcome.answer, scorer), ledger, False


def _format_report(report: MetricReport, failures_per_run: list[int], cost_rows) -> str:
    lines = [f"dataset: {report.dataset}   method: {report.method}"]
    header = f"{'run':>4} {'n':>4} {'acc':>8} {'w-F1':>8} {'MAE':>10} {'MSE':>12} {'MAPE':>8} {'fmt-fail':>8} {'run-fail':>8}"
    lines.append(header)

    def fmt(v, width):
        return "{:>{w}}".format("-", w=width) if v is None else "{:>{w}.4f}".format(v, w=width)

    for i, m in enumerate(report.per_run):
        lines.append(
            f"{i + 1:>4} {m.n:>4} {fmt(m.accuracy, 8)} {fmt(m.weighted_f1, 8)} "
            f"{fmt(m.mae, 10)} {fmt(m.mse, 12)} {fmt(m.mape, 8)} "
            f"{m.format_failures:>8} {failures_per_run[i]:>8}"
        )
    mean = report.mean
    lines.append(
        f"{'mean':>4} {'':>4} {fmt(mean.get('accuracy'), 8)} {fmt(mean.get('weighted_f1'), 8)} "
        f"{fmt(mean.get('mae'), 10)} {fmt(mean.get('mse'), 12)} {fmt(mean.get('mape'), 8)}"
    )
    if report.std is not None:
        std = report.std
        lines.append(
            f"{'std':>4} {'':>4} {fmt(std.get('accuracy'), 8)} {fmt(std.get('weighted_f1'), 8)} "
            f"{fmt(std.get('mae'), 10)} {fmt(std.get('mse'), 12)} {fmt(std.get('mape'), 8)}"
        )
    lines.append("")
    lines.append(f"{'method':>12} {'samples':>8} {'time(s)':>8} {'in-tok':>10} {'out-tok':>10} {'cost($)':>10}")
    for row in cost_rows:
        lines.append(
            f"{row.method:>12} {row.samples:>8} {row.mean_wall_time:>8.2f} "
            f"{row.mean_input_tokens:>10.1f} {row.mean_output_tokens:>10.1f} {row.mean_cost:>10.4f}"
        )
    return "\n".join(lines) + "\n"


def cmd_bench(args: argparse.Namespace) -> int:
    config, runs_dir = build_config(args)
    backend = build_backend(config)
    try:
        manifest = DatasetManifest.load(args.manifest)
        instances = load_dataset(manifest)
    except DatasetError as exc:
        raise ConfigError(str(exc)) from exc
    method = args.method
    orch = Orchestrator(backend, config)
    scorer = HttpScorer(config.scorer_url) if config.scorer_url else None

    runs: list[list[InstanceScore]] = []
    failures_per_run: list[int] = []
    cost_entries = []
    for run_id in range(1, args.runs + 1):
        picked = sample(instances, run_id=run_id, cap=args.cap, strata_keys=manifest.strata_keys)
        run_dir = runs_dir / manifest.name / method / f"run{run_id}"
        with ThreadPoolExecutor(max_workers=max(1, config.parallel)) as pool:
            results = list(
                pool.map(
                    lambda inst: _bench_one(orch, method, inst, run_dir, config.capture, scorer),
                    picked,
                )
            )
        scores = [score for score, _, _ in results]
        failures = sum(1 for _, _, failed in results if failed)
        cost_entries.extend((method, ledger) for _, ledger, _ in results)
        runs.append(scores)
        failures_per_run.append(failures)
        print(f"run {run_id}: {len(picked)} instances, {failures} run failures")

    report = aggregate(manifest.name, method, runs)
    rows = cost_report(cost_entries)
    method_dir = runs_dir / manifest.name / method
    method_dir.mkdir(parents=True, exist_ok=True)
    report_payload = {
        "report": report.as_dict(),
        "run_failures": failures_per_run,
        "cost": [
            {
                "method": r.method,
                "samples": r.samples,
                "mean_wall_time": r.mean_wall_time,
                "mean_input_tokens": r.mean_input_tokens,
                "mean_output_tokens": r.mean_output_tokens,
                "mean_cost": r.mean_cost,
            }
            for r in rows
        ],
        "config": config.snapshot(),
    }
    (method_dir / "report.json").write_text(
        json.dumps(report_payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    table = _format_report(report, failures_per_run, rows)
    (method_dir / "report.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    print(f"reports: {method_dir}/report.json, {method_dir}/report.txt")
    return EXIT_OK


# --- inspect ----------------------------------------------------------------------------------


def _render_transcript(t: DebateTranscript, claims_only: bool = False) -> str:
    lines: list[str] = []
    if claims_only:
        for record in t.reviewer_records:
            for v in record.verdicts:
                lines.append(
                    f"reviewer {record.reviewer_id}: [{v.verification.value} | "
                    f"{v.domain_consistency.value}] {v.claim_text}"
                )
        return "\n".join(lines) + ("\n" if lines else "")
    lines.append(f"instance: {t.instance_id}   status: {t.status}")
    if t.knowledge is not None:
        lines.append("")
        lines.append("== domain knowledge ==")
        lines.append(t.knowledge.raw_text)
    for i, rnd in enumerate(t.rounds, start=1):
        lines.append("")
        lines.append(f"== round {i} evidence ==")
        for modality in sorted(rnd, key=lambda m: m.value):
            report = rnd[modality]
            marker = "" if report.usable else "  [UNUSABLE]"
            lines.append(f"-- {modality.value}{marker} --")
            lines.append(report.raw_text)
    for record in t.reviewer_records:
        lines.append("")
        lines.append(f"== reviewer {record.reviewer_id} =={'' if record.usable else '  [UNUSABLE]'}")
        for v in record.verdicts:
            lines.append(
                f"  claim [{v.verification.value} | {v.domain_consistency.value}]: {v.claim_text}"
            )
        lines.append(record.raw_text)
    if t.synthesizer is not None:
        lines.append("")
        lines.append("== synthesizer ==")
        lines.append(
            f"agreement: {t.synthesizer.agreement.value}   resolution: {t.synthesizer.resolution.value}"
        )
        lines.append(t.synthesizer.raw_text)
    if t.tool_log:
        lines.append("")
        lines.append("== tool log ==")
        for call in t.tool_log:
            lines.append(f"[{call.agent} #{call.seq}] {call.tool}({json.dumps(dict(call.arguments), sort_keys=True)})")
    lines.append("")
    lines.append(
        f"cost: {t.cost.input_tokens} in / {t.cost.output_tokens} out tokens, "
        f"${t.cost.estimated_cost:.4f}, {t.cost.wall_time:.1f}s"
    )
    if t.status != "ok":
        lines.append(f"FAILED at stage {t.failure_stage}: {t.error}")
    return "\n".join(lines) + "\n"


def cmd_inspect(args: argparse.Namespace) -> int:
    path = Path(args.transcript)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read transcript: {exc}") from exc
    try:
        transcript = transcript_from_json(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"corrupt transcript at offset {exc.pos}: {exc.msg}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    sys.stdout.write(_render_transcript(transcript, claims_only=args.claims_only))
    return EXIT_OK


# --- argument parsing ------------------------------------------------------------------------


def _add_shared_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file")
    p.add_argument("--model", help="model id")
    p.add_argument("--backend", choices=["http", "mock"], help="chat backend")
    p.add_argument("--rounds", type=int, help="analyst debate rounds")
    p.add_argument("--reviewers", type=int, help="parallel reviewers")
    p.add_argument("--analyst-budget", type=int, dest="analyst_budget", help="tool calls per analyst turn")
    p.add_argument("--reviewer-budget", type=int, dest="reviewer_budget", help="tool calls per reviewer/synthesizer turn")
    p.add_argument("--seed", type=int, help="seed forwarded to the backend")
    p.add_argument("--parallel", type=int, help="concurrent instance runs")
    p.add_argument("--capture", action="store_true", default=None, help="mirror requests to capture files")
    p.add_argument("--templates-dir", dest="templates_dir", help="prompt template override directory")
    p.add_argument("--scorer-url", dest="scorer_url", help="external open-ended QA scorer endpoint")
    p.add_argument("--out", help="output directory root (default: runs)")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsdebate",
        description="Multi-agent debate engine for time-series reasoning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one instance and write its transcript")
    run_p.add_argument("instance", help="instance JSON file")
    _add_shared_flags(run_p)
    run_p.set_defaults(func=cmd_run)

    bench_p = sub.add_parser("bench", help="run a benchmark sweep and emit reports")
    bench_p.add_argument("manifest", help="dataset manifest JSON file")
    bench_p.add_argument("--method", choices=METHODS, default="tsdebate")
    bench_p.add_argument("--runs", type=int, default=1, help="number of runs (seeds 2025+run_id)")
    bench_p.add_argument("--cap", type=int, default=100, help="per-run instance cap")
    _add_shared_flags(bench_p)
    bench_p.set_defaults(func=cmd_bench)

    inspect_p = sub.add_parser("inspect", help="pretty-print a stored transcript")
    inspect_p.add_argument("transcript", help="transcript.json path")
    inspect_p.add_argument("--claims-only", action="store_true", help="print only claim verdict lines")
    inspect_p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
