"""Dataset loading, seeded stratified sampling, metrics, and cost reporting.

Sampling uses seed 2025 + run_id and proportional allocation over strata with
largest-remainder rounding (residual slots to larger strata first), so a run id
always reproduces the same selection. Metric math is plain and mirrored by
brute-force oracles in the test suite.
"""

from __future__ import annotations

import json
import math
import random
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

from .model import (
    Answer,
    CostLedger,
    TaskInstance,
    TaskType,
    instance_from_dict,
)

SAMPLING_SEED_BASE = 2025
DEFAULT_CAP = 100

DISCRETE_TASKS = {TaskType.CLASSIFICATION, TaskType.MCQA, TaskType.ANOMALY}
VECTOR_TASKS = {TaskType.REGRESSION, TaskType.FORECASTING, TaskType.IMPUTATION}


class DatasetError(Exception):
    pass


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    task_family: str
    files: tuple[Path, ...]
    strata_keys: tuple[str, ...] = ()
    answer_space_defaults: Optional[dict[str, Any]] = None

    @staticmethod
    def load(path: str | Path) -> "DatasetManifest":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DatasetError(f"cannot read manifest {path}: {exc}") from exc
        for key in ("name", "task_family", "files"):
            if key not in data:
                raise DatasetError(f"manifest {path} missing field {key!r}")
        files = tuple((path.parent / f).resolve() for f in data["files"])
        for f in files:
            if not f.exists():
                raise DatasetError(f"manifest {path} references missing file {f}")
        return DatasetManifest(
            name=data["name"],
            task_family=data["task_family"],
            files=files,
            strata_keys=tuple(data.get("strata_keys", ())),
            answer_space_defaults=data.get("answer_space_defaults"),
        )


def load_dataset(manifest: DatasetManifest, require_ground_truth: bool = True) -> list[TaskInstance]:
    instances: list[TaskInstance] = []
    for file in manifest.files:
        try:
            raw = json.loads(file.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DatasetError(f"cannot read instance file {file}: {exc}") from exc
        if not isinstance(raw, list):
            raise DatasetError(f"{file}: expected a JSON array of instances")
        for i, entry in enumerate(raw):
            if "answer_space" not in entry and manifest.answer_space_defaults:
                entry = {**entry, "answer_space": manifest.answer_space_defaults}
            try:
                instance = instance_from_dict(entry)
            except (KeyError, ValueError, TypeError) as exc:
                raise DatasetError(f"{file}: instance {i}: malformed field: {exc}") from exc
            if require_ground_truth and instance.ground_truth is None:
                raise DatasetError(
                    f"{file}: instance {i} ({instance.id}): missing ground_truth"
                )
            instances.append(instance)
    if not instances:
        raise DatasetError(f"dataset {manifest.name} is empty")
    return instances


# --- Sampling ------------------------------------------------------------------


def _stratum_key(instance: TaskInstance, keys: Sequence[str]) -> tuple[str, ...]:
    return tuple(str(instance.strata.get(k, "")) for k in keys)


def sample(
    instances: Sequence[TaskInstance],
    run_id: int,
    cap: int = DEFAULT_CAP,
    strata_keys: Sequence[str] = (),
) -> list[TaskInstance]:
    """Deterministic stratified subset: n = min(cap, available), seed 2025+run_id."""
    if cap < 1:
        raise ValueError("cap must be ≥ 1")
    if not instances:
        raise DatasetError("cannot sample from an empty dataset")
    seed = SAMPLING_SEED_BASE + run_id
    ordered = sorted(instances, key=lambda i: i.id)
    n = min(cap, len(ordered))
    if n == len(ordered):
        return list(ordered)

    strata: dict[tuple[str, ...], list[TaskInstance]] = {}
    for inst in ordered:
        strata.setdefault(_stratum_key(inst, strata_keys), []).append(inst)

    total = len(ordered)
    quotas = {key: n * len(members) / total for key, members in strata.items()}
    counts = {key: math.floor(q) for key, q in quotas.items()}
    residual = n - sum(counts.values())
    # largest remainder first; residuals favor larger strata, then stable key order
    order = sorted(
        strata,
        key=lambda key: (-(quotas[key] - counts[key]), -len(strata[key]), key),
    )
    for key in order:
        if residual <= 0:
            break
        if counts[key] < len(strata[key]):
            counts[key] += 1
            residual -= 1

    rng = random.Random(seed)
    selected: list[TaskInstance] = []
    for key in sorted(strata):
        members = strata[key]
        k = min(counts[key], len(members))
        if k:
            selected.extend(rng.sample(members, k))
    return sorted(selected, key=lambda i: i.id)


# --- Per-instance scoring ----------------------------------------------------------

OpenQAScorer = Callable[[TaskInstance, str], float]


@dataclass
class InstanceScore:
    instance_id: str
    task_type: TaskType
    correct: Optional[int] = None
    truth_label: Optional[str] = None
    pred_label: Optional[str] = None
    abs_errors: tuple[float, ...] = ()
    sq_errors: tuple[float, ...] = ()
    ape: tuple[float, ...] = ()
    mape_skipped: int = 0
    open_score: Optional[float] = None
    format_failure: bool = False
    unscored: bool = False


def score_instance(
    instance: TaskInstance,
    answer: Optional[Answer],
    open_scorer: Optional[OpenQAScorer] = None,
) -> InstanceScore:
    truth = instance.ground_truth
    if truth is None:
        raise DatasetError(f"instance {instance.id} has no ground truth to score against")
    tt = instance.task_type
    if tt in DISCRETE_TASKS:
        truth_label = truth.display().strip().casefold()
        if answer is None:
            return InstanceScore(
                instance_id=instance.id,
                task_type=tt,
                correct=0,
                truth_label=truth_label,
                pred_label=None,
                format_failure=True,
            )
        pred_label = answer.display().strip().casefold()
        return InstanceScore(
            instance_id=instance.id,
            task_type=tt,
            correct=1 if pred_label == truth_label else 0,
            truth_label=truth_label,
            pred_label=pred_label,
        )
    if tt in VECTOR_TASKS:
        if answer is None or answer.values is None:
            return InstanceScore(instance_id=instance.id, task_type=tt, format_failure=True)
        tv = truth.values or ()
        pv = answer.values
        if len(tv) != len(pv):
            return InstanceScore(instance_id=instance.id, task_type=tt, format_failure=True)
        abs_errors = tuple(abs(p - t) for p, t in zip(pv, tv))
        sq_errors = tuple((p - t) ** 2 for p, t in zip(pv, tv))
        ape = tuple(abs(p - t) / abs(t) for p, t in zip(pv, tv) if t != 0)
        skipped = sum(1 for t in tv if t == 0)
        return InstanceScore(
            instance_id=instance.id,
            task_type=tt,
            abs_errors=abs_errors,
            sq_errors=sq_errors,
            ape=ape,
            mape_skipped=skipped,
        )
    # open-ended QA: defer to the external scorer hook when configured
    if answer is None:
        return InstanceScore(instance_id=instance.id, task_type=tt, format_failure=True)
    if open_scorer is None:
        return InstanceScore(instance_id=instance.id, task_type=tt, unscored=True)
    value = open_scorer(instance, answer.display())
    return InstanceScore(instance_id=instance.id, task_type=tt, open_score=value)


class HttpScorer:
    """Posts (query, truth, answer) to an external endpoint; expects {"score": x}."""

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout

    def __call__(self, instance: TaskInstance, answer_text: str) -> float:
        payload = json.dumps(
            {
                "query": instance.query,
                "truth": instance.ground_truth.display() if instance.ground_truth else "",
                "answer": answer_text,
            }
        ).encode("utf-8")
        req = urllib.request.Request(
            self.url, data=payload, headers={"Content-Type": "application/json"}, method="POST"
        )
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            data = json.loads(resp.read().decode("utf-8"))
        return float(data["score"])


# --- Aggregation ----------------------------------------------------------------------


def weighted_f1(pairs: Sequence[tuple[str, Optional[str]]]) -> Optional[float]:
    """Support-weighted mean of per-class F1 over the truth classes."""
    if not pairs:
        return None
    classes = sorted({t for t, _ in pairs})
    total = len(pairs)
    score = 0.0
    for c in classes:
        support = sum(1 for t, _ in pairs if t == c)
        tp = sum(1 for t, p in pairs if t == c and p == c)
        predicted = sum(1 for _, p in pairs if p == c)
        precision = tp / predicted if predicted else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        score += (support / total) * f1
    return score


def _mean(values: Sequence[float]) -> Optional[float]:
    return sum(values) / len(values) if values else None


@dataclass
class RunMetrics:
    n: int = 0
    accuracy: Optional[float] = None
    weighted_f1: Optional[float] = None
    mae: Optional[float] = None
    mse: Optional[float] = None
    mape: Optional[float] = None
    open_score: Optional[float] = None
    mape_skipped: int = 0
    format_failures: int = 0
    unscored: int = 0

    def as_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "accuracy": self.accuracy,
            "weighted_f1": self.weighted_f1,
            "mae": self.mae,
            "mse": self.mse,
            "mape": self.mape,
            "open_score": self.open_score,
            "mape_skipped": self.mape_skipped,
            "format_failures": self.format_failures,
            "unscored": self.unscored,
        }


def run_metrics(scores: Sequence[InstanceScore]) -> RunMetrics:
    discrete = [s for s in scores if s.correct is not None]
    pairs = [(s.truth_label, s.pred_label) for s in discrete if s.truth_label is not None]
    abs_errors = [e for s in scores for e in s.abs_errors]
    sq_errors = [e for s in scores for e in s.sq_errors]
    ape = [e for s in scores for e in s.ape]
    open_scores = [s.open_score for s in scores if s.open_score is not None]
    return RunMetrics(
        n=len(scores),
        accuracy=_mean([float(s.correct) for s in discrete]),
        weighted_f1=weighted_f1(pairs),
        mae=_mean(abs_errors),
        mse=_mean(sq_errors),
        mape=_mean(ape),
        open_score=_mean(open_scores),
        mape_skipped=sum(s.mape_skipped for s in scores),
        format_failures=sum(1 for s in scores if s.format_failure),
        unscored=sum(1 for s in scores if s.unscored),
    )


_METRIC_FIELDS = ("accuracy", "weighted_f1", "mae", "mse", "mape", "open_score")


@dataclass
class MetricReport:
    dataset: str
    method: str
    per_run: list[RunMetrics] = field(default_factory=list)
    mean: dict[str, Optional[float]] = field(default_factory=dict)
    std: Optional[dict[str, Optional[float]]] = None

    def as_dict(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset,
            "method": self.method,
            "per_run": [m.as_dict() for m in self.per_run],
            "mean": self.mean,
            "std": self.std,
        }


def aggregate(dataset: str, method: str, runs: Sequence[Sequence[InstanceScore]]) -> MetricReport:
    if not runs:
        raise ValueError("aggregate needs at least one run")
    per_run = [run_metrics(r) for r in runs]
    mean: dict[str, Optional[float]] = {}
    std: Optional[dict[str, Optional[float]]] = None
    for name in _METRIC_FIELDS:
        values = [getattr(m, name) for m in per_run if getattr(m, name) is not None]
        mean[name] = _mean(values)
    if len(per_run) >= 2:
        std = {}
        for name in _METRIC_FIELDS:
            values = [getattr(m, name) for m in per_run if getattr(m, name) is not None]
            if len(values) >= 2:
                mu = sum(values) / len(values)
                std[name] = math.sqrt(sum((v - mu) ** 2 for v in values) / (len(values) - 1))
            else:
                std[name] = None
    return MetricReport(dataset=dataset, method=method, per_run=per_run, mean=mean, std=std)


# --- Cost reporting -------------------------------------------------------------------------


@dataclass(frozen=True)
class CostRow:
    method: str
    samples: int
    mean_wall_time: float
    mean_input_tokens: float
    mean_output_tokens: float
    mean_cost: float


def cost_report(entries: Sequence[tuple[str, CostLedger]]) -> list[CostRow]:
    """Per-method averages over one ledger per sample."""
    by_method: dict[str, list[CostLedger]] = {}
    for method, ledger in entries:
        by_method.setdefault(method, []).append(ledger)
    rows = []
    for method in sorted(by_method):
        ledgers = by_method[method]
        n = len(ledgers)
        rows.append(
            CostRow(
                method=method,
                samples=n,
                mean_wall_time=sum(l.wall_time for l in ledgers) / n,
                mean_input_tokens=sum(l.input_tokens for l in ledgers) / n,
                mean_output_tokens=sum(l.output_tokens for l in ledgers) / n,
                mean_cost=sum(l.estimated_cost for l in ledgers) / n,
            )
        )
    return rows
