"""End-to-end debate pipeline.

One instance runs as: elicit domain knowledge → render both charts → R analyst
rounds (round 1 strictly modality-isolated, later rounds conditioned on the
previous round) → J parallel tool-equipped reviewers → one synthesizer turn.
Zero-shot and chain-of-thought comparator modes share the same charts so
comparisons stay fair.
"""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Mapping, Optional

from .calc import calc_toolspec
from .charts import ChartArtifact, ChartError, render_freq_chart, render_time_chart
from .gateway import (
    CaptureRecorder,
    ChatMessage,
    ChatRequest,
    Gateway,
    GatewayError,
    DEFAULT_MAX_OUTPUT_TOKENS_ANALYST,
    DEFAULT_MAX_OUTPUT_TOKENS_REVIEWER,
)
from .model import (
    MODALITY_ORDER,
    Answer,
    DebateTranscript,
    DomainKnowledge,
    EvidenceReport,
    Modality,
    ReviewerRecord,
    SynthesizerVerdict,
    TaskInstance,
    TemporalScope,
    ToolCall,
    Verification,
    validate_instance,
)
from .parsing import (
    AnswerExtractionError,
    ParseFailure,
    extract_answer,
    parse_evidence,
    parse_knowledge,
    parse_reviewer,
    parse_synthesizer,
)
from .prompts import FORMAT_REPAIR_MESSAGE, PromptKit, answer_scaffold
from .series_tools import bound_text, get_info, render_info, series_toolkit

logger = logging.getLogger(__name__)

#: Reviewer task blocks embed at most this much numerical summary text.
EMBEDDED_SUMMARY_LIMIT = 1500

#: Non-multimodal comparators serialize at most this many points per channel.
COMPARATOR_SERIES_LIMIT = 512


class StageError(Exception):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"{stage}: {message}")


class NoUsableReviewersError(StageError):
    def __init__(self, message: str):
        super().__init__("reviewers", message)


class SynthesisUnparseableError(StageError):
    def __init__(self, message: str):
        super().__init__("synthesizer", message)


@dataclass
class RunConfig:
    rounds: int = 2
    reviewers: int = 3
    analyst_budget: int = 5
    reviewer_budget: int = 3
    model: str = "gpt-4.1-mini"
    backend: str = "mock"
    endpoint: str = "https://api.openai.com/v1"
    rate_input_per_million: float = 0.40
    rate_output_per_million: float = 1.60
    seed: Optional[int] = None
    parallel: int = 1
    capture: bool = False
    templates_dir: Optional[str] = None
    scorer_url: Optional[str] = None

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise ValueError("rounds must be ≥ 1")
        if self.reviewers < 1:
            raise ValueError("reviewers must be ≥ 1")

    def snapshot(self) -> dict[str, Any]:
        return {
            "rounds": self.rounds,
            "reviewers": self.reviewers,
            "analyst_budget": self.analyst_budget,
            "reviewer_budget": self.reviewer_budget,
            "model": self.model,
            "backend": self.backend,
            "rate_input_per_million": self.rate_input_per_million,
            "rate_output_per_million": self.rate_output_per_million,
            "seed": self.seed,
        }


@dataclass
class RunOutcome:
    transcript: DebateTranscript
    time_chart: Optional[ChartArtifact] = None
    freq_chart: Optional[ChartArtifact] = None
    capture: Optional[CaptureRecorder] = None


@dataclass
class ComparatorOutcome:
    answer: Optional[Answer]
    raw_text: str
    flags: tuple[str, ...]
    input_tokens: int
    output_tokens: int
    wall_time: float
    estimated_cost: float


def _flagged(record, flag: str):
    return dataclasses.replace(record, flags=tuple(record.flags) + (flag,))


class Orchestrator:
    def __init__(self, backend: Any, config: RunConfig, capture_dir=None):
        self.backend = backend
        self.config = config
        self.kit = PromptKit(templates_dir=config.templates_dir)
        self.capture_dir = capture_dir

    # -- shared plumbing ---------------------------------------------------

    def _request(
        self,
        agent_id: str,
        system: str,
        user: str,
        images: tuple[bytes, ...] = (),
        tools=(),
        max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS_ANALYST,
    ) -> ChatRequest:
        return ChatRequest(
            model=self.config.model,
            messages=(
                ChatMessage(role="system", text=system),
                ChatMessage(role="user", text=user, images=images),
            ),
            tools=tuple(tools),
            temperature=0.0,
            seed=self.config.seed,
            max_output_tokens=max_output_tokens,
            agent_id=agent_id,
        )

    def _turn_with_repair(self, gateway: Gateway, request: ChatRequest, parser):
        """One agent turn plus at most one format-repair retry.

        `parser` raises ParseFailure on malformed output; the repair turn
        re-asks with the format reminder and no tool access.
        """
        if request.tools:
            loop = gateway.run_tool_loop(request, request.tools, self._budget_for(request.agent_id))
            text, tool_log = loop.text, loop.tool_log
        else:
            reply = gateway.complete(request)
            text, tool_log = reply.text, []
        try:
            return parser(text), text, tool_log, None
        except ParseFailure as first_error:
            repair_messages = request.messages + (
                ChatMessage(role="assistant", text=text),
                ChatMessage(role="user", text=FORMAT_REPAIR_MESSAGE),
            )
            repair_request = dataclasses.replace(request, messages=repair_messages, tools=())
            try:
                reply = gateway.complete(repair_request)
            except GatewayError as exc:
                return None, text, tool_log, f"{first_error} (repair turn failed: {exc})"
            try:
                return parser(reply.text), reply.text, tool_log, None
            except ParseFailure as second_error:
                return None, reply.text, tool_log, str(second_error)

    def _budget_for(self, agent_id: str) -> int:
        if agent_id.startswith("analyst."):
            return self.config.analyst_budget
        return self.config.reviewer_budget

    @staticmethod
    def _task_block(instance: TaskInstance, include_context: bool) -> str:
        task = instance.query.strip()
        if include_context and instance.context and instance.context.strip():
            task = f"{task}\n\nCONTEXT:\n{instance.context.strip()}"
        return task

    def _reviewer_task_block(self, instance: TaskInstance) -> str:
        task = self._task_block(instance, include_context=True)
        summary = bound_text(render_info(get_info(instance.series)), EMBEDDED_SUMMARY_LIMIT)
        return (
            f"{task}\n\nNUMERICAL DATA SUMMARY:\n{summary}\n\n{answer_scaffold(instance)}"
        )

    # -- pipeline stages ------------------------------------------------------

    def elicit(self, gateway: Gateway, instance: TaskInstance) -> DomainKnowledge:
        system, user = self.kit.render_elicitation(instance.query, instance.context)
        try:
            reply = gateway.complete(self._request("elicit", system, user))
        except GatewayError as exc:
            raise StageError("elicitation", str(exc)) from exc
        return parse_knowledge(reply.text)

    def render_charts(self, instance: TaskInstance) -> tuple[ChartArtifact, ChartArtifact]:
        try:
            return render_time_chart(instance.series), render_freq_chart(instance.series)
        except ChartError as exc:
            raise StageError("charts", str(exc)) from exc

    def run_debate(
        self,
        gateway: Gateway,
        instance: TaskInstance,
        knowledge: DomainKnowledge,
        charts: tuple[ChartArtifact, ChartArtifact],
    ) -> tuple[list[dict[Modality, EvidenceReport]], list[ToolCall]]:
        rounds: list[dict[Modality, EvidenceReport]] = []
        tool_log: list[ToolCall] = []
        prior: Optional[dict[Modality, EvidenceReport]] = None
        for r in range(1, self.config.rounds + 1):
            with ThreadPoolExecutor(max_workers=len(MODALITY_ORDER)) as pool:
                futures = {
                    m: pool.submit(self._run_analyst, gateway, instance, knowledge, charts, m, r, prior)
                    for m in MODALITY_ORDER
                }
                results = {m: f.result() for m, f in futures.items()}
            round_reports: dict[Modality, EvidenceReport] = {}
            for m in MODALITY_ORDER:
                report, calls = results[m]
                round_reports[m] = report
                tool_log.extend(calls)
            rounds.append(round_reports)
            prior = round_reports
        return rounds, tool_log

    def _run_analyst(
        self,
        gateway: Gateway,
        instance: TaskInstance,
        knowledge: DomainKnowledge,
        charts: tuple[ChartArtifact, ChartArtifact],
        modality: Modality,
        round: int,
        prior: Optional[dict[Modality, EvidenceReport]],
    ) -> tuple[EvidenceReport, list[ToolCall]]:
        task = self._task_block(instance, include_context=(modality == Modality.TEXT))
        system, user = self.kit.render_analyst(modality, round, task, knowledge, prior)
        images: tuple[bytes, ...] = ()
        tools = ()
        if modality == Modality.VISUAL:
            images = (charts[0].png_bytes, charts[1].png_bytes)
        elif modality == Modality.NUMERICAL:
            tools = tuple(series_toolkit(instance.series))
        request = self._request(
            f"analyst.{modality.value}.r{round}", system, user, images=images, tools=tools
        )
        report, raw, tool_log, failure = self._turn_with_repair(
            gateway, request, lambda text: parse_evidence(text, modality, round)
        )
        if failure is not None:
            logger.warning("analyst %s round %d unusable: %s", modality.value, round, failure)
            report = EvidenceReport.unusable(modality, round, raw, failure)
        return report, tool_log

    def run_reviewers(
        self,
        gateway: Gateway,
        instance: TaskInstance,
        knowledge: DomainKnowledge,
        final_round: Mapping[Modality, EvidenceReport],
        charts: tuple[ChartArtifact, ChartArtifact],
    ) -> tuple[list[ReviewerRecord], list[ToolCall]]:
        if not any(r.usable for r in final_round.values()):
            raise StageError("reviewers", "no usable evidence in the final round")
        task = self._reviewer_task_block(instance)
        system, user = self.kit.render_reviewer(task, knowledge, final_round)
        images = (charts[0].png_bytes, charts[1].png_bytes)
        tools = tuple(series_toolkit(instance.series)) + (calc_toolspec(instance.series),)

        def _one(j: int) -> tuple[ReviewerRecord, list[ToolCall]]:
            request = self._request(
                f"reviewer.{j}",
                system,
                user,
                images=images,
                tools=tools,
                max_output_tokens=DEFAULT_MAX_OUTPUT_TOKENS_REVIEWER,
            )
            record, raw, tool_log, failure = self._turn_with_repair(
                gateway,
                request,
                lambda text: parse_reviewer(text, reviewer_id=j, instance=instance),
            )
            if failure is not None:
                logger.warning("reviewer %d unusable: %s", j, failure)
                record = ReviewerRecord(
                    reviewer_id=j,
                    raw_text=raw,
                    flags=(f"unusable: {failure}",),
                    usable=False,
                )
            elif instance.scope() == TemporalScope.FUTURE and any(
                v.verification == Verification.VERIFIED for v in record.verdicts
            ):
                record = _flagged(
                    record,
                    "temporal-verification violation: claim marked VERIFIED against data on a FUTURE task",
                )
            return record, tool_log

        with ThreadPoolExecutor(max_workers=self.config.reviewers) as pool:
            results = list(pool.map(_one, range(self.config.reviewers)))
        records = [record for record, _ in results]
        tool_log = [call for _, calls in results for call in calls]
        if not any(r.usable for r in records):
            raise NoUsableReviewersError("no usable reviewers after repair retries")
        return records, tool_log

    def run_synthesizer(
        self,
        gateway: Gateway,
        instance: TaskInstance,
        knowledge: DomainKnowledge,
        records: list[ReviewerRecord],
        charts: tuple[ChartArtifact, ChartArtifact],
    ) -> tuple[SynthesizerVerdict, list[ToolCall]]:
        usable = [r for r in records if r.usable]
        if not usable:
            raise NoUsableReviewersError("synthesizer needs at least one usable reviewer record")
        task = self._reviewer_task_block(instance)
        system, user = self.kit.render_synthesizer(task, knowledge, [r.raw_text for r in usable])
        tools = tuple(series_toolkit(instance.series)) + (calc_toolspec(instance.series),)
        request = self._request(
            "synthesizer",
            system,
            user,
            images=(charts[0].png_bytes, charts[1].png_bytes),
            tools=tools,
            max_output_tokens=DEFAULT_MAX_OUTPUT_TOKENS_REVIEWER,
        )
        verdict, raw, tool_log, failure = self._turn_with_repair(
            gateway,
            request,
            lambda text: parse_synthesizer(text, reviewer_records=usable, instance=instance),
        )
        if failure is not None:
            raise SynthesisUnparseableError(f"synthesis unparseable after repair: {failure}")
        return verdict, tool_log

    # -- whole instance ---------------------------------------------------------

    def run_instance(self, instance: TaskInstance, capture_dir=None) -> RunOutcome:
        capture = None
        if self.config.capture:
            capture = CaptureRecorder(directory=capture_dir or self.capture_dir)
        gateway = Gateway(
            self.backend,
            rate_input_per_million=self.config.rate_input_per_million,
            rate_output_per_million=self.config.rate_output_per_million,
            capture=capture,
        )
        knowledge: Optional[DomainKnowledge] = None
        rounds: list[dict[Modality, EvidenceReport]] = []
        records: list[ReviewerRecord] = []
        verdict: Optional[SynthesizerVerdict] = None
        tool_log: list[ToolCall] = []
        time_chart = freq_chart = None
        failure_stage: Optional[str] = None
        error: Optional[str] = None
        try:
            problems = validate_instance(instance)
            if problems:
                raise StageError("validation", "; ".join(problems))
            knowledge = self.elicit(gateway, instance)
            time_chart, freq_chart = self.render_charts(instance)
            charts = (time_chart, freq_chart)
            try:
                rounds, debate_calls = self.run_debate(gateway, instance, knowledge, charts)
                tool_log.extend(debate_calls)
            except GatewayError as exc:
                raise StageError("debate", str(exc)) from exc
            try:
                records, reviewer_calls = self.run_reviewers(
                    gateway, instance, knowledge, rounds[-1], charts
                )
                tool_log.extend(reviewer_calls)
            except GatewayError as exc:
                raise StageError("reviewers", str(exc)) from exc
            try:
                verdict, synth_calls = self.run_synthesizer(
                    gateway, instance, knowledge, records, charts
                )
                tool_log.extend(synth_calls)
            except GatewayError as exc:
                raise StageError("synthesizer", str(exc)) from exc
        except StageError as exc:
            failure_stage, error = exc.stage, str(exc)
            logger.error("instance %s failed at %s: %s", instance.id, exc.stage, exc)
        except GatewayError as exc:
            failure_stage, error = "gateway", str(exc)
            logger.error("instance %s failed in gateway: %s", instance.id, exc)
        transcript = DebateTranscript(
            instance_id=instance.id,
            knowledge=knowledge,
            rounds=tuple(rounds),
            reviewer_records=tuple(records),
            synthesizer=verdict,
            tool_log=tuple(tool_log),
            cost=gateway.ledger,
            config=self.config.snapshot(),
            status="ok" if failure_stage is None else "failed",
            failure_stage=failure_stage,
            error=error,
        )
        return RunOutcome(
            transcript=transcript, time_chart=time_chart, freq_chart=freq_chart, capture=capture
        )

    # -- comparators --------------------------------------------------------------

    def run_comparator(
        self,
        instance: TaskInstance,
        mode: str,
        multimodal: bool = False,
        charts: Optional[tuple[ChartArtifact, ChartArtifact]] = None,
    ) -> ComparatorOutcome:
        if mode not in ("zero_shot", "cot"):
            raise ValueError(f"unknown comparator mode {mode!r}")
        gateway = Gateway(
            self.backend,
            rate_input_per_million=self.config.rate_input_per_million,
            rate_output_per_million=self.config.rate_output_per_million,
        )
        task = self._task_block(instance, include_context=True)
        parts = [f"Task: {task}"]
        images: tuple[bytes, ...] = ()
        if multimodal:
            if charts is None:
                time_chart, freq_chart = self.render_charts(instance)
            else:
                time_chart, freq_chart = charts
            images = (time_chart.png_bytes, freq_chart.png_bytes)
            parts.append("Two charts are attached: a time-domain view and a frequency-domain view.")
        else:
            parts.append(self._serialize_series(instance))
        parts.append(answer_scaffold(instance))
        if mode == "cot":
            parts.append("Let's think step by step, then end with the final answer line.")
        parts.append("End your reply with one line: FINAL ANSWER: <answer>")
        system = "You answer time-series reasoning tasks accurately and concisely."
        request = self._request(
            f"comparator.{mode}" + ("_mm" if multimodal else ""),
            system,
            "\n\n".join(parts),
            images=images,
            max_output_tokens=DEFAULT_MAX_OUTPUT_TOKENS_REVIEWER,
        )
        reply = gateway.complete(request)
        flags: tuple[str, ...] = ()
        answer: Optional[Answer] = None
        line = next(
            (l for l in reply.text.splitlines() if l.upper().strip().startswith("FINAL ANSWER")),
            reply.text.strip().splitlines()[-1] if reply.text.strip() else "",
        )
        try:
            answer = extract_answer(line, instance)
        except AnswerExtractionError as exc:
            flags = (f"unmapped answer: {exc.raw}",)
        ledger = gateway.ledger
        return ComparatorOutcome(
            answer=answer,
            raw_text=reply.text,
            flags=flags,
            input_tokens=ledger.input_tokens,
            output_tokens=ledger.output_tokens,
            wall_time=ledger.wall_time,
            estimated_cost=ledger.estimated_cost,
        )

    @staticmethod
    def _serialize_series(instance: TaskInstance) -> str:
        series = instance.series
        lines = [f"SERIES ({series.length} samples, {series.dim} channel(s)):"]
        for ch in range(series.dim):
            values = series.channels[ch]
            if len(values) > COMPARATOR_SERIES_LIMIT:
                head = values[: COMPARATOR_SERIES_LIMIT // 2]
                tail = values[-COMPARATOR_SERIES_LIMIT // 2 :]
                rendered = (
                    ", ".join(f"{v:g}" for v in head)
                    + f", ... ({len(values) - len(head) - len(tail)} values elided) ..., "
                    + ", ".join(f"{v:g}" for v in tail)
                )
            else:
                rendered = ", ".join(f"{v:g}" for v in values)
            lines.append(f"{series.channel_names[ch]}: {rendered}")
        return "\n".join(lines)
