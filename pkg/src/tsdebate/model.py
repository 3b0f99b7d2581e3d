"""Domain types shared by every stage of the debate pipeline.

Everything here is an immutable value object: instances may be shared freely
across concurrently running agents. Serialization is plain JSON with sorted
keys so that transcripts are byte-stable across repeated runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Optional, Sequence


class TaskType(str, Enum):
    CLASSIFICATION = "classification"
    MCQA = "mcqa"
    REGRESSION = "regression"
    FORECASTING = "forecasting"
    IMPUTATION = "imputation"
    ANOMALY = "anomaly"
    OPEN_QA = "open_qa"


class TemporalScope(str, Enum):
    PAST_PRESENT = "past_present"
    FUTURE = "future"


class Modality(str, Enum):
    TEXT = "TEXT"
    VISUAL = "VISUAL"
    NUMERICAL = "NUMERICAL"


#: Canonical analyst ordering used everywhere evidence is listed.
MODALITY_ORDER = (Modality.TEXT, Modality.VISUAL, Modality.NUMERICAL)


class Verification(str, Enum):
    VERIFIED = "VERIFIED"
    UNVERIFIED = "UNVERIFIED"
    CONTRADICTED = "CONTRADICTED"


class DomainConsistency(str, Enum):
    MATCHES = "MATCHES"
    VIOLATES = "VIOLATES"
    NA = "NA"


class ConflictStatus(str, Enum):
    NO_CONFLICT = "NO_CONFLICT"
    DETECTED = "DETECTED"
    RESOLVED = "RESOLVED"


class Agreement(str, Enum):
    UNANIMOUS = "UNANIMOUS"
    SPLIT = "SPLIT"
    ALL_DIFFERENT = "ALL_DIFFERENT"


class Resolution(str, Enum):
    VERIFIED_RESOLUTION = "VERIFIED_RESOLUTION"
    UNRESOLVED = "UNRESOLVED"
    NO_CONFLICT = "NO_CONFLICT"
    APPROACH_ERROR = "APPROACH_ERROR"


class ApproachStatus(str, Enum):
    CORRECT = "CORRECT"
    MISMATCH = "MISMATCH"


class ScopeJudgment(str, Enum):
    FUTURE = "FUTURE"
    PAST_PRESENT = "PAST-PRESENT"


#: Analyst evidence below this total score is rejected (weight 0).
REJECTION_THRESHOLD = 40


def _is_missing(x: float) -> bool:
    return isinstance(x, float) and math.isnan(x)


@dataclass(frozen=True)
class TimeSeriesRecord:
    """An observed multichannel sequence; NaN marks a missing value."""

    id: str
    channels: tuple[tuple[float, ...], ...]
    channel_names: tuple[str, ...]
    timestamps: Optional[tuple[str, ...]] = None
    granularity: Optional[str] = None

    @staticmethod
    def build(
        id: str,
        channels: Sequence[Sequence[Optional[float]]],
        channel_names: Optional[Sequence[str]] = None,
        timestamps: Optional[Sequence[Any]] = None,
        granularity: Optional[str] = None,
    ) -> "TimeSeriesRecord":
        """Normalize raw inputs: None becomes NaN, names default to ch0..chN."""
        chans = tuple(
            tuple(float("nan") if v is None else float(v) for v in ch) for ch in channels
        )
        if channel_names is None:
            channel_names = [f"ch{i}" for i in range(len(chans))]
        ts = tuple(str(t) for t in timestamps) if timestamps is not None else None
        return TimeSeriesRecord(
            id=id,
            channels=chans,
            channel_names=tuple(channel_names),
            timestamps=ts,
            granularity=granularity,
        )

    @property
    def length(self) -> int:
        return len(self.channels[0]) if self.channels else 0

    @property
    def dim(self) -> int:
        return len(self.channels)

    def validate(self) -> list[str]:
        problems: list[str] = []
        if self.dim < 1:
            problems.append("series must have at least one channel")
            return problems
        t = self.length
        if t < 1:
            problems.append("series must have at least one sample")
        for i, ch in enumerate(self.channels):
            if len(ch) != t:
                problems.append(
                    f"channel length mismatch: channel {i} has {len(ch)} values, expected {t}"
                )
            for v in ch:
                if math.isinf(v):
                    problems.append(f"channel {i} contains a non-finite value that is not missing")
                    break
        if len(self.channel_names) != self.dim:
            problems.append(
                f"channel_names has {len(self.channel_names)} entries for {self.dim} channels"
            )
        if self.timestamps is not None and len(self.timestamps) != t:
            problems.append(f"timestamps has {len(self.timestamps)} entries for {t} samples")
        return problems


@dataclass(frozen=True)
class AnswerSpace:
    """Shape of the admissible answers for one task."""

    kind: str  # labels | options | vector | boolean | free_text
    labels: tuple[str, ...] = ()
    horizon: int = 0

    @staticmethod
    def for_labels(labels: Sequence[str]) -> "AnswerSpace":
        return AnswerSpace(kind="labels", labels=tuple(labels))

    @staticmethod
    def for_options(options: Sequence[str]) -> "AnswerSpace":
        return AnswerSpace(kind="options", labels=tuple(o.upper() for o in options))

    @staticmethod
    def for_vector(horizon: int) -> "AnswerSpace":
        return AnswerSpace(kind="vector", horizon=int(horizon))

    @staticmethod
    def boolean() -> "AnswerSpace":
        return AnswerSpace(kind="boolean", labels=("true", "false"))

    @staticmethod
    def free_text() -> "AnswerSpace":
        return AnswerSpace(kind="free_text")


@dataclass(frozen=True)
class Answer:
    """Typed answer; exactly one payload field is populated per kind."""

    kind: str  # label | option | vector | boolean | free_text
    label: Optional[str] = None
    option: Optional[str] = None
    values: Optional[tuple[float, ...]] = None
    flag: Optional[bool] = None
    text: Optional[str] = None

    @staticmethod
    def of_label(label: str) -> "Answer":
        return Answer(kind="label", label=label)

    @staticmethod
    def of_option(option: str) -> "Answer":
        return Answer(kind="option", option=option.upper())

    @staticmethod
    def of_vector(values: Sequence[float]) -> "Answer":
        return Answer(kind="vector", values=tuple(float(v) for v in values))

    @staticmethod
    def of_boolean(flag: bool) -> "Answer":
        return Answer(kind="boolean", flag=bool(flag))

    @staticmethod
    def of_text(text: str) -> "Answer":
        return Answer(kind="free_text", text=text)

    def display(self) -> str:
        if self.kind == "label":
            return self.label or ""
        if self.kind == "option":
            return self.option or ""
        if self.kind == "vector":
            return ", ".join(f"{v:g}" for v in (self.values or ()))
        if self.kind == "boolean":
            return "true" if self.flag else "false"
        return self.text or ""


def answers_equal(a: Optional[Answer], b: Optional[Answer], rel_tol: float = 1e-3) -> bool:
    """Agreement notion used for the reviewer agreement pattern.

    Discrete answers compare case-insensitively; vectors agree when every
    element matches within ``rel_tol`` relative tolerance.
    """
    if a is None or b is None:
        return False
    if a.kind != b.kind:
        return False
    if a.kind == "vector":
        va, vb = a.values or (), b.values or ()
        if len(va) != len(vb):
            return False
        return all(
            math.isclose(x, y, rel_tol=rel_tol, abs_tol=rel_tol) for x, y in zip(va, vb)
        )
    return a.display().strip().casefold() == b.display().strip().casefold()


def recompute_agreement(answers: Sequence[Optional[Answer]]) -> Agreement:
    """UNANIMOUS if all answers agree, ALL_DIFFERENT if pairwise distinct, else SPLIT."""
    present = [a for a in answers if a is not None]
    if not present:
        return Agreement.ALL_DIFFERENT
    all_same = all(answers_equal(present[0], a) for a in present[1:])
    if all_same:
        return Agreement.UNANIMOUS
    pairwise_distinct = all(
        not answers_equal(present[i], present[j])
        for i in range(len(present))
        for j in range(i + 1, len(present))
    )
    return Agreement.ALL_DIFFERENT if pairwise_distinct else Agreement.SPLIT


@dataclass(frozen=True)
class TaskInstance:
    id: str
    query: str
    series: TimeSeriesRecord
    task_type: TaskType
    answer_space: AnswerSpace
    context: Optional[str] = None
    ground_truth: Optional[Answer] = None
    temporal_scope: Optional[TemporalScope] = None
    strata: Mapping[str, str] = field(default_factory=dict)

    def scope(self) -> TemporalScope:
        """Dataset-provided scope, else: forecasting is future, all else past-present."""
        if self.temporal_scope is not None:
            return self.temporal_scope
        if self.task_type == TaskType.FORECASTING:
            return TemporalScope.FUTURE
        return TemporalScope.PAST_PRESENT


_VECTOR_TASKS = {TaskType.REGRESSION, TaskType.FORECASTING, TaskType.IMPUTATION}


def validate_instance(instance: TaskInstance) -> list[str]:
    """Collect invariant violations; an empty report means the instance is valid."""
    problems = instance.series.validate()
    space = instance.answer_space
    tt = instance.task_type
    if tt in _VECTOR_TASKS:
        if space.kind != "vector":
            problems.append(f"{tt.value} task requires a numeric-vector answer space")
        elif space.horizon < 1:
            problems.append("horizon must be ≥ 1")
    elif tt == TaskType.MCQA:
        if space.kind != "options" or not space.labels:
            problems.append("mcqa task requires option letters")
    elif tt in (TaskType.CLASSIFICATION, TaskType.ANOMALY):
        if space.kind not in ("labels", "boolean") or not space.labels:
            problems.append(f"{tt.value} task requires a label set")
    elif tt == TaskType.OPEN_QA:
        if space.kind != "free_text":
            problems.append("open_qa task requires a free-text answer space")
    if not instance.query.strip():
        problems.append("query must be non-empty")
    return problems


@dataclass(frozen=True)
class DomainKnowledge:
    """Elicited domain priors; the shared analysis contract for all agents."""

    domain: str = ""
    knowledge: str = ""
    key_signals: str = ""
    suggested_approach: str = ""
    pitfalls: str = ""
    modality_guidance: str = ""
    raw_text: str = ""
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class Statement:
    text: str
    tag: str  # OBSERVATION | INFERENCE


@dataclass(frozen=True)
class EvidenceReport:
    modality: Modality
    round: int
    understanding: str = ""
    other_perspectives: Optional[str] = None
    observations: tuple[Statement, ...] = ()
    inferences: tuple[Statement, ...] = ()
    limits: str = ""
    raw_text: str = ""
    flags: tuple[str, ...] = ()
    usable: bool = True

    @staticmethod
    def unusable(modality: Modality, round: int, raw_text: str, reason: str) -> "EvidenceReport":
        return EvidenceReport(
            modality=modality,
            round=round,
            raw_text=raw_text,
            flags=(f"unusable: {reason}",),
            usable=False,
        )


class ScoreBoundsError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreTriple:
    """Per-analyst evidence scores: inference 0-50, observation 0-30, honesty 0-20."""

    inference: int
    observation: int
    honesty: int
    total: int

    def __post_init__(self) -> None:
        if not 0 <= self.inference <= 50:
            raise ScoreBoundsError(f"inference score {self.inference} outside [0, 50]")
        if not 0 <= self.observation <= 30:
            raise ScoreBoundsError(f"observation score {self.observation} outside [0, 30]")
        if not 0 <= self.honesty <= 20:
            raise ScoreBoundsError(f"honesty score {self.honesty} outside [0, 20]")
        if self.total != self.inference + self.observation + self.honesty:
            raise ScoreBoundsError(
                f"total {self.total} != {self.inference}+{self.observation}+{self.honesty}"
            )

    @staticmethod
    def of(inference: int, observation: int, honesty: int) -> "ScoreTriple":
        return ScoreTriple(
            inference=inference,
            observation=observation,
            honesty=honesty,
            total=inference + observation + honesty,
        )


def normalize_weights(scores: Mapping[Modality, ScoreTriple]) -> dict[Modality, float]:
    """Weight = total / sum(totals of survivors); rejected analysts (<40) get 0."""
    survivors = {m: s.total for m, s in scores.items() if s.total >= REJECTION_THRESHOLD}
    denom = sum(survivors.values())
    weights = {m: 0.0 for m in scores}
    if denom > 0:
        for m, t in survivors.items():
            weights[m] = t / denom
    return weights


@dataclass(frozen=True)
class ClaimVerdict:
    claim_text: str
    verification: Verification
    domain_consistency: DomainConsistency
    explanation: str = ""


@dataclass(frozen=True)
class ReviewerRecord:
    reviewer_id: int
    task_restatement: str = ""
    task_type_judgment: Optional[ScopeJudgment] = None
    scores: Mapping[Modality, ScoreTriple] = field(default_factory=dict)
    weights: Mapping[Modality, float] = field(default_factory=dict)
    verdicts: tuple[ClaimVerdict, ...] = ()
    conflict: ConflictStatus = ConflictStatus.NO_CONFLICT
    key_evidence: str = ""
    calibrated_answer: Optional[Answer] = None
    raw_text: str = ""
    flags: tuple[str, ...] = ()
    usable: bool = True


@dataclass(frozen=True)
class ReviewerScore:
    """Synthesizer's five-criterion rubric, each 0-20."""

    task_understanding: int
    evidence_usage: int
    verification: int
    conflict_handling: int
    calibration: int
    total: int

    @staticmethod
    def of(task: int, evidence: int, verification: int, conflicts: int, calibration: int) -> "ReviewerScore":
        return ReviewerScore(
            task_understanding=task,
            evidence_usage=evidence,
            verification=verification,
            conflict_handling=conflicts,
            calibration=calibration,
            total=task + evidence + verification + conflicts + calibration,
        )

    def criteria(self) -> tuple[int, int, int, int, int]:
        return (
            self.task_understanding,
            self.evidence_usage,
            self.verification,
            self.conflict_handling,
            self.calibration,
        )


@dataclass(frozen=True)
class SynthesizerVerdict:
    approach_status: ApproachStatus = ApproachStatus.CORRECT
    reviewer_scores: Mapping[int, ReviewerScore] = field(default_factory=dict)
    agreement: Agreement = Agreement.UNANIMOUS
    resolution: Resolution = Resolution.NO_CONFLICT
    final_answer: Optional[Answer] = None
    raw_text: str = ""
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class ToolCall:
    agent: str
    tool: str
    arguments: Mapping[str, Any]
    result: str
    seq: int
    duration: float = 0.0


@dataclass(frozen=True)
class CostLedger:
    """Token/cost accounting; cost is always recomputed from the stored rates."""

    input_tokens: int = 0
    output_tokens: int = 0
    wall_time: float = 0.0
    rate_input_per_million: float = 0.40
    rate_output_per_million: float = 1.60

    @property
    def estimated_cost(self) -> float:
        return (
            self.input_tokens * self.rate_input_per_million / 1_000_000
            + self.output_tokens * self.rate_output_per_million / 1_000_000
        )

    def add(self, input_tokens: int, output_tokens: int, wall_time: float = 0.0) -> "CostLedger":
        if input_tokens < 0 or output_tokens < 0:
            raise ValueError("token counts must be non-negative")
        return CostLedger(
            input_tokens=self.input_tokens + input_tokens,
            output_tokens=self.output_tokens + output_tokens,
            wall_time=self.wall_time + wall_time,
            rate_input_per_million=self.rate_input_per_million,
            rate_output_per_million=self.rate_output_per_million,
        )


@dataclass(frozen=True)
class DebateTranscript:
    """Full run artifact for one instance."""

    instance_id: str
    knowledge: Optional[DomainKnowledge] = None
    rounds: tuple[Mapping[Modality, EvidenceReport], ...] = ()
    reviewer_records: tuple[ReviewerRecord, ...] = ()
    synthesizer: Optional[SynthesizerVerdict] = None
    tool_log: tuple[ToolCall, ...] = ()
    cost: CostLedger = field(default_factory=CostLedger)
    config: Mapping[str, Any] = field(default_factory=dict)
    status: str = "ok"  # ok | failed
    failure_stage: Optional[str] = None
    error: Optional[str] = None


# --- Serialization -----------------------------------------------------------

TRANSCRIPT_FORMAT = "tsdebate-transcript/1"


def _num(v: float) -> Any:
    return None if _is_missing(v) else v


def _series_to_dict(s: TimeSeriesRecord) -> dict[str, Any]:
    return {
        "id": s.id,
        "channels": [[_num(v) for v in ch] for ch in s.channels],
        "channel_names": list(s.channel_names),
        "timestamps": list(s.timestamps) if s.timestamps is not None else None,
        "granularity": s.granularity,
    }


def _series_from_dict(d: Mapping[str, Any]) -> TimeSeriesRecord:
    return TimeSeriesRecord.build(
        id=d["id"],
        channels=d["channels"],
        channel_names=d.get("channel_names"),
        timestamps=d.get("timestamps"),
        granularity=d.get("granularity"),
    )


def _answer_to_dict(a: Optional[Answer]) -> Optional[dict[str, Any]]:
    if a is None:
        return None
    return {
        "kind": a.kind,
        "label": a.label,
        "option": a.option,
        "values": list(a.values) if a.values is not None else None,
        "flag": a.flag,
        "text": a.text,
    }


def _answer_from_dict(d: Optional[Mapping[str, Any]]) -> Optional[Answer]:
    if d is None:
        return None
    values = d.get("values")
    return Answer(
        kind=d["kind"],
        label=d.get("label"),
        option=d.get("option"),
        values=tuple(values) if values is not None else None,
        flag=d.get("flag"),
        text=d.get("text"),
    )


def _space_to_dict(s: AnswerSpace) -> dict[str, Any]:
    return {"kind": s.kind, "labels": list(s.labels), "horizon": s.horizon}


def _space_from_dict(d: Mapping[str, Any]) -> AnswerSpace:
    return AnswerSpace(kind=d["kind"], labels=tuple(d.get("labels", ())), horizon=d.get("horizon", 0))


def instance_to_dict(inst: TaskInstance) -> dict[str, Any]:
    return {
        "id": inst.id,
        "query": inst.query,
        "context": inst.context,
        "series": _series_to_dict(inst.series),
        "task_type": inst.task_type.value,
        "answer_space": _space_to_dict(inst.answer_space),
        "ground_truth": _answer_to_dict(inst.ground_truth),
        "temporal_scope": inst.temporal_scope.value if inst.temporal_scope else None,
        "strata": dict(inst.strata),
    }


def instance_from_dict(d: Mapping[str, Any]) -> TaskInstance:
    scope = d.get("temporal_scope")
    return TaskInstance(
        id=d["id"],
        query=d["query"],
        context=d.get("context"),
        series=_series_from_dict(d["series"]),
        task_type=TaskType(d["task_type"]),
        answer_space=_space_from_dict(d["answer_space"]),
        ground_truth=_answer_from_dict(d.get("ground_truth")),
        temporal_scope=TemporalScope(scope) if scope else None,
        strata=dict(d.get("strata", {})),
    )


def _knowledge_to_dict(k: Optional[DomainKnowledge]) -> Optional[dict[str, Any]]:
    if k is None:
        return None
    return {
        "domain": k.domain,
        "knowledge": k.knowledge,
        "key_signals": k.key_signals,
        "suggested_approach": k.suggested_approach,
        "pitfalls": k.pitfalls,
        "modality_guidance": k.modality_guidance,
        "raw_text": k.raw_text,
        "flags": list(k.flags),
    }


def _knowledge_from_dict(d: Optional[Mapping[str, Any]]) -> Optional[DomainKnowledge]:
    if d is None:
        return None
    return DomainKnowledge(
        domain=d.get("domain", ""),
        knowledge=d.get("knowledge", ""),
        key_signals=d.get("key_signals", ""),
        suggested_approach=d.get("suggested_approach", ""),
        pitfalls=d.get("pitfalls", ""),
        modality_guidance=d.get("modality_guidance", ""),
        raw_text=d.get("raw_text", ""),
        flags=tuple(d.get("flags", ())),
    )


def _evidence_to_dict(e: EvidenceReport) -> dict[str, Any]:
    return {
        "modality": e.modality.value,
        "round": e.round,
        "understanding": e.understanding,
        "other_perspectives": e.other_perspectives,
        "observations": [{"text": s.text, "tag": s.tag} for s in e.observations],
        "inferences": [{"text": s.text, "tag": s.tag} for s in e.inferences],
        "limits": e.limits,
        "raw_text": e.raw_text,
        "flags": list(e.flags),
        "usable": e.usable,
    }


def _evidence_from_dict(d: Mapping[str, Any]) -> EvidenceReport:
    return EvidenceReport(
        modality=Modality(d["modality"]),
        round=d["round"],
        understanding=d.get("understanding", ""),
        other_perspectives=d.get("other_perspectives"),
        observations=tuple(Statement(s["text"], s["tag"]) for s in d.get("observations", ())),
        inferences=tuple(Statement(s["text"], s["tag"]) for s in d.get("inferences", ())),
        limits=d.get("limits", ""),
        raw_text=d.get("raw_text", ""),
        flags=tuple(d.get("flags", ())),
        usable=d.get("usable", True),
    )


def _triple_to_dict(t: ScoreTriple) -> dict[str, int]:
    return {"inference": t.inference, "observation": t.observation, "honesty": t.honesty, "total": t.total}


def _reviewer_to_dict(r: ReviewerRecord) -> dict[str, Any]:
    return {
        "reviewer_id": r.reviewer_id,
        "task_restatement": r.task_restatement,
        "task_type_judgment": r.task_type_judgment.value if r.task_type_judgment else None,
        "scores": {m.value: _triple_to_dict(t) for m, t in r.scores.items()},
        "weights": {m.value: w for m, w in r.weights.items()},
        "verdicts": [
            {
                "claim_text": v.claim_text,
                "verification": v.verification.value,
                "domain_consistency": v.domain_consistency.value,
                "explanation": v.explanation,
            }
            for v in r.verdicts
        ],
        "conflict": r.conflict.value,
        "key_evidence": r.key_evidence,
        "calibrated_answer": _answer_to_dict(r.calibrated_answer),
        "raw_text": r.raw_text,
        "flags": list(r.flags),
        "usable": r.usable,
    }


def _reviewer_from_dict(d: Mapping[str, Any]) -> ReviewerRecord:
    judgment = d.get("task_type_judgment")
    return ReviewerRecord(
        reviewer_id=d["reviewer_id"],
        task_restatement=d.get("task_restatement", ""),
        task_type_judgment=ScopeJudgment(judgment) if judgment else None,
        scores={
            Modality(m): ScoreTriple(**t) for m, t in d.get("scores", {}).items()
        },
        weights={Modality(m): w for m, w in d.get("weights", {}).items()},
        verdicts=tuple(
            ClaimVerdict(
                claim_text=v["claim_text"],
                verification=Verification(v["verification"]),
                domain_consistency=DomainConsistency(v["domain_consistency"]),
                explanation=v.get("explanation", ""),
            )
            for v in d.get("verdicts", ())
        ),
        conflict=ConflictStatus(d.get("conflict", "NO_CONFLICT")),
        key_evidence=d.get("key_evidence", ""),
        calibrated_answer=_answer_from_dict(d.get("calibrated_answer")),
        raw_text=d.get("raw_text", ""),
        flags=tuple(d.get("flags", ())),
        usable=d.get("usable", True),
    )


def _verdict_to_dict(v: Optional[SynthesizerVerdict]) -> Optional[dict[str, Any]]:
    if v is None:
        return None
    return {
        "approach_status": v.approach_status.value,
        "reviewer_scores": {
            str(rid): {
                "task_understanding": s.task_understanding,
                "evidence_usage": s.evidence_usage,
                "verification": s.verification,
                "conflict_handling": s.conflict_handling,
                "calibration": s.calibration,
                "total": s.total,
            }
            for rid, s in v.reviewer_scores.items()
        },
        "agreement": v.agreement.value,
        "resolution": v.resolution.value,
        "final_answer": _answer_to_dict(v.final_answer),
        "raw_text": v.raw_text,
        "flags": list(v.flags),
    }


def _verdict_from_dict(d: Optional[Mapping[str, Any]]) -> Optional[SynthesizerVerdict]:
    if d is None:
        return None
    return SynthesizerVerdict(
        approach_status=ApproachStatus(d["approach_status"]),
        reviewer_scores={
            int(rid): ReviewerScore(**s) for rid, s in d.get("reviewer_scores", {}).items()
        },
        agreement=Agreement(d["agreement"]),
        resolution=Resolution(d["resolution"]),
        final_answer=_answer_from_dict(d.get("final_answer")),
        raw_text=d.get("raw_text", ""),
        flags=tuple(d.get("flags", ())),
    )


def transcript_to_dict(t: DebateTranscript) -> dict[str, Any]:
    return {
        "format": TRANSCRIPT_FORMAT,
        "instance_id": t.instance_id,
        "knowledge": _knowledge_to_dict(t.knowledge),
        "rounds": [
            {m.value: _evidence_to_dict(e) for m, e in rnd.items()} for rnd in t.rounds
        ],
        "reviewer_records": [_reviewer_to_dict(r) for r in t.reviewer_records],
        "synthesizer": _verdict_to_dict(t.synthesizer),
        "tool_log": [
            {
                "agent": c.agent,
                "tool": c.tool,
                "arguments": dict(c.arguments),
                "result": c.result,
                "seq": c.seq,
                "duration": c.duration,
            }
            for c in t.tool_log
        ],
        "cost": {
            "input_tokens": t.cost.input_tokens,
            "output_tokens": t.cost.output_tokens,
            "wall_time": t.cost.wall_time,
            "rate_input_per_million": t.cost.rate_input_per_million,
            "rate_output_per_million": t.cost.rate_output_per_million,
            "estimated_cost": t.cost.estimated_cost,
        },
        "config": dict(t.config),
        "status": t.status,
        "failure_stage": t.failure_stage,
        "error": t.error,
    }


def transcript_from_dict(d: Mapping[str, Any]) -> DebateTranscript:
    if d.get("format") != TRANSCRIPT_FORMAT:
        raise ValueError(f"unrecognized transcript format: {d.get('format')!r}")
    cost = d.get("cost", {})
    return DebateTranscript(
        instance_id=d["instance_id"],
        knowledge=_knowledge_from_dict(d.get("knowledge")),
        rounds=tuple(
            {Modality(m): _evidence_from_dict(e) for m, e in rnd.items()}
            for rnd in d.get("rounds", ())
        ),
        reviewer_records=tuple(_reviewer_from_dict(r) for r in d.get("reviewer_records", ())),
        synthesizer=_verdict_from_dict(d.get("synthesizer")),
        tool_log=tuple(
            ToolCall(
                agent=c["agent"],
                tool=c["tool"],
                arguments=c.get("arguments", {}),
                result=c.get("result", ""),
                seq=c["seq"],
                duration=c.get("duration", 0.0),
            )
            for c in d.get("tool_log", ())
        ),
        cost=CostLedger(
            input_tokens=cost.get("input_tokens", 0),
            output_tokens=cost.get("output_tokens", 0),
            wall_time=cost.get("wall_time", 0.0),
            rate_input_per_million=cost.get("rate_input_per_million", 0.40),
            rate_output_per_million=cost.get("rate_output_per_million", 1.60),
        ),
        config=dict(d.get("config", {})),
        status=d.get("status", "ok"),
        failure_stage=d.get("failure_stage"),
        error=d.get("error"),
    )


def transcript_to_json(t: DebateTranscript) -> str:
    return json.dumps(transcript_to_dict(t), sort_keys=True, indent=2) + "\n"


def transcript_from_json(raw: str) -> DebateTranscript:
    return transcript_from_dict(json.loads(raw))
