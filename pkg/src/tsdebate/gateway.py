"""Chat-completion gateway with tool calling, budgets, and cost accounting.

Two backends: an HTTP backend speaking the de-facto chat-completions wire
format, and deterministic offline backends (rule-based mock plus a scripted
harness) used for tests and the `--backend mock` CLI path. Deterministic
backends report zero durations so transcripts stay byte-identical across runs.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Sequence

from .model import CostLedger, ToolCall
from .series_tools import ToolError, ToolSpec

logger = logging.getLogger(__name__)

EXHAUSTION_MESSAGE = "tool budget exhausted — provide your answer now"
REPEATED_CALL_NOTICE = "repeated call notice: this tool was already called with identical arguments."

DEFAULT_MAX_OUTPUT_TOKENS_ANALYST = 1200
DEFAULT_MAX_OUTPUT_TOKENS_REVIEWER = 2000


class GatewayError(Exception):
    pass


class TransportError(GatewayError):
    pass


class DecodeError(GatewayError):
    pass


class ScriptExhaustedError(GatewayError):
    pass


@dataclass(frozen=True)
class ToolIntent:
    name: str
    arguments: Mapping[str, Any]
    call_id: str = ""


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant | tool
    text: str = ""
    images: tuple[bytes, ...] = ()  # png payloads, multimodal roles only
    tool_calls: tuple[ToolIntent, ...] = ()
    tool_call_id: str = ""


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[ChatMessage, ...]
    tools: tuple[ToolSpec, ...] = ()
    temperature: float = 0.0
    seed: Optional[int] = None
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS_ANALYST
    agent_id: str = "agent"


@dataclass(frozen=True)
class BackendReply:
    text: str = ""
    tool_intents: tuple[ToolIntent, ...] = ()
    input_tokens: int = 0
    output_tokens: int = 0
    duration: float = 0.0


@dataclass
class ToolBudget:
    limit: int
    used: int = 0


@dataclass
class ToolLoopResult:
    text: str
    tool_log: list[ToolCall]
    input_tokens: int
    output_tokens: int
    duration: float
    exhaustion_delivered: bool = False


_TEXT_TOOL_RE = re.compile(r"^TOOL:\s*([A-Za-z_][A-Za-z0-9_]*)\s*(\{.*\})?\s*$")


def parse_text_tool_intents(text: str) -> tuple[str, tuple[ToolIntent, ...]]:
    """Text-protocol fallback: `TOOL: name {json-args}` lines become intents."""
    kept: list[str] = []
    intents: list[ToolIntent] = []
    for line in text.splitlines():
        m = _TEXT_TOOL_RE.match(line.strip())
        if m:
            args: Mapping[str, Any] = {}
            if m.group(2):
                try:
                    args = json.loads(m.group(2))
                except json.JSONDecodeError:
                    kept.append(line)
                    continue
            intents.append(ToolIntent(name=m.group(1), arguments=args, call_id=f"text-{len(intents)}"))
        else:
            kept.append(line)
    return "\n".join(kept).strip(), tuple(intents)


def _approx_tokens(text: str) -> int:
    return max(1, len(text) // 4) if text else 0


def _request_chars(request: ChatRequest) -> int:
    return sum(len(m.text) for m in request.messages)


# --- Backends ---------------------------------------------------------------------


class ScriptedBackend:
    """Plays back explicit per-agent scripts; the test harness backend.

    Scripts map an agent id to the ordered replies its conversation should
    produce; each `complete` call for that agent pops the next one.
    """

    deterministic = True

    def __init__(self, scripts: Mapping[str, Sequence[BackendReply]]):
        self.scripts = {k: list(v) for k, v in scripts.items()}
        self.requests: list[ChatRequest] = []

    def complete(self, request: ChatRequest) -> BackendReply:
        self.requests.append(request)
        queue = self.scripts.get(request.agent_id)
        if not queue:
            raise ScriptExhaustedError(f"no scripted reply left for agent {request.agent_id!r}")
        reply = queue.pop(0)
        if reply.input_tokens == 0 and reply.output_tokens == 0:
            reply = replace(
                reply,
                input_tokens=_approx_tokens(" " * _request_chars(request)),
                output_tokens=_approx_tokens(reply.text),
            )
        return reply


_SCAFFOLD_CHOICE_RE = re.compile(r"ANSWER FORMAT: the final answer must be exactly one (?:of|option letter):\s*(.+)")
_SCAFFOLD_VECTOR_RE = re.compile(r"ANSWER FORMAT: the final answer must be exactly (\d+) comma-separated numbers")
_MEAN_RE = re.compile(r"mean=(-?\d+(?:\.\d+)?(?:e[-+]?\d+)?)")


class MockBackend:
    """Rule-based deterministic backend producing well-formed agent outputs.

    Replies depend only on the request content, so repeated runs are
    byte-identical. Discrete answers are picked from the answer-format
    scaffold embedded in the prompt via a stable hash.
    """

    deterministic = True

    def complete(self, request: ChatRequest) -> BackendReply:
        role = request.agent_id.split(".", 1)[0]
        user_text = "\n".join(m.text for m in request.messages if m.role in ("user", "tool"))
        if role == "elicit":
            text = self._knowledge()
        elif role == "analyst":
            reply = self._analyst(request)
            if reply is not None:
                return self._with_usage(request, reply)
            text = self._evidence(request)
        elif role == "reviewer":
            reply = self._maybe_tool_call(request)
            if reply is not None:
                return self._with_usage(request, reply)
            text = self._reviewer(request, user_text)
        elif role == "synthesizer":
            text = self._synthesizer(request, user_text)
        else:
            text = f"FINAL ANSWER: {self._answer(user_text)}"
        return self._with_usage(request, BackendReply(text=text))

    def _with_usage(self, request: ChatRequest, reply: BackendReply) -> BackendReply:
        chars = _request_chars(request) + 1600 * sum(len(m.images) for m in request.messages)
        return replace(
            reply,
            input_tokens=_approx_tokens(" " * chars),
            output_tokens=_approx_tokens(reply.text) + 2 * len(reply.tool_intents),
        )

    @staticmethod
    def _knowledge() -> str:
        return (
            "DOMAIN: time-series reasoning over the provided data window\n"
            "KNOWLEDGE: values evolve over an ordered index; typical ranges come from the observed window\n"
            "KEY SIGNALS: trend direction, level shifts, periodic structure, outliers\n"
            "SUGGESTED APPROACH: inspect summary statistics first, then detected features, then map findings onto the answer choices\n"
            "PITFALLS: extrapolating blindly beyond the observed window; confusing noise with structure\n"
            "MODALITY: NUMERICAL and VISUAL are most informative; TEXT supplies context"
        )

    @staticmethod
    def _has_tool_result(request: ChatRequest) -> bool:
        return any(m.role == "tool" for m in request.messages)

    def _maybe_tool_call(self, request: ChatRequest) -> Optional[BackendReply]:
        if request.tools and not self._has_tool_result(request):
            return BackendReply(tool_intents=(ToolIntent(name="get_info", arguments={}, call_id="mock-0"),))
        return None

    def _analyst(self, request: ChatRequest) -> Optional[BackendReply]:
        if request.agent_id.split(".")[1] == "NUMERICAL":
            return self._maybe_tool_call(request)
        return None

    def _evidence(self, request: ChatRequest) -> str:
        modality = request.agent_id.split(".")[1]
        round_tag = request.agent_id.rsplit(".r", 1)[-1]
        task_line = ""
        for m in request.messages:
            if m.role == "user":
                for line in m.text.splitlines():
                    if line.startswith("Task:"):
                        task_line = line[5:].strip()
                        break
                break
        task_line = task_line[:100]
        tool_note = ""
        for m in request.messages:
            if m.role == "tool":
                tool_note = m.text.splitlines()[0]
        lookups = {
            "TEXT": (
                "1. The provided context mentions conditions relevant to the question. [OBSERVATION]\n"
                "2. No textual statement contradicts the pattern in the data window. [OBSERVATION]",
                "Context alone suggests the observed pattern is consistent with its stated conditions.",
                "Text cannot provide exact numerical values or verify magnitudes.",
            ),
            "VISUAL": (
                "1. The time-domain chart shows a coherent overall shape without abrupt regime changes. [OBSERVATION]\n"
                "2. The frequency-domain chart concentrates power at low frequencies. [OBSERVATION]",
                "The visual structure supports a single dominant pattern rather than noise.",
                "Charts cannot give precise values; small differences are not resolvable visually.",
            ),
            "NUMERICAL": (
                f"1. {tool_note or 'Summary statistics were computed for the full window.'} [OBSERVATION]\n"
                "2. Detected feature counts are consistent with the summary statistics. [OBSERVATION]",
                "The computed statistics quantify the pattern the task asks about.",
                "Numbers describe the observed window only; future values are not measurable.",
            ),
        }
        obs, inf, limits = lookups[modality]
        other = ""
        if round_tag not in ("", "1"):
            other = (
                "OTHER PERSPECTIVES: The other analysts reported consistent structure from their "
                "views; nothing contradicts the numerical summary.\n\n"
            )
        return (
            f"UNDERSTANDING: The task asks: {task_line}\n\n"
            f"{other}"
            f"USEFUL OBSERVATIONS:\n{obs}\n\n"
            f"INFERENCES:\n1. {inf} [INFERENCE]\n\n"
            f"LIMITS: {limits}"
        )

    def _answer(self, user_text: str) -> str:
        m = _SCAFFOLD_CHOICE_RE.search(user_text)
        if m:
            options = [o.strip() for o in m.group(1).split("|") if o.strip()]
            digest = hashlib.sha256(m.group(1).encode("utf-8")).digest()
            return options[digest[0] % len(options)]
        v = _SCAFFOLD_VECTOR_RE.search(user_text)
        if v:
            h = int(v.group(1))
            mean = _MEAN_RE.search(user_text)
            value = mean.group(1) if mean else "0.0"
            return ", ".join([value] * h)
        return "the observed pattern matches the stated conditions"

    @staticmethod
    def _scope(user_text: str) -> str:
        return "FUTURE" if "predicted values" in user_text else "PAST-PRESENT"

    def _reviewer(self, request: ChatRequest, user_text: str) -> str:
        answer = self._answer(user_text)
        scope = self._scope(user_text)
        if scope == "FUTURE":
            verification = (
                "- The summary statistics describe the observed window: VERIFIED + DOMAIN: MATCHES - confirmed with get_info\n"
                "- The continuation of the pattern beyond the window: UNVERIFIED + DOMAIN: N-A - future values cannot be checked against past data"
            )
        else:
            verification = (
                "- The summary statistics match the analysts' description: VERIFIED + DOMAIN: MATCHES - confirmed with get_info\n"
                "- The interpretive reading of the pattern: UNVERIFIED + DOMAIN: MATCHES - plausible but not directly computable"
            )
        return (
            "TASK: Decide the answer the task asks for from the shared evidence.\n"
            f"TASK TYPE: {scope}\n\n"
            "SCORES:\n"
            "- TEXT: (Observation: 20/30, Inference: 35/50, Honesty: 15/20) = 70\n"
            "- VISUAL: (Observation: 22/30, Inference: 38/50, Honesty: 15/20) = 75\n"
            "- NUMERICAL: (Observation: 25/30, Inference: 40/50, Honesty: 16/20) = 81\n\n"
            "WEIGHTS:\n- TEXT: [31%]\n- VISUAL: [33%]\n- NUMERICAL: [36%]\n\n"
            "VERIFICATION (check against lookup tools, code executor, charts, text in task, domain knowledge (above)):\n"
            f"{verification}\n\n"
            "OUTSTANDING CONFLICTS: NO_CONFLICT - the analysts describe the same structure\n"
            "KEY EVIDENCE: numerical summary statistics and chart structure\n"
            f"CALIBRATED ANSWER: {answer}"
        )

    def _synthesizer(self, request: ChatRequest, user_text: str) -> str:
        answer = self._answer(user_text)
        scope = self._scope(user_text)
        n_reviewers = user_text.count("=== REVIEWER")
        score_lines = "\n".join(
            f"- Reviewer {i}: (Task: 17/20, Evidence: 16/20, Verification: 16/20, "
            f"Conflicts: 15/20, Calibration: 16/20) = 80"
            for i in range(max(1, n_reviewers))
        )
        return (
            "TASK: Choose the final calibrated answer from the reviewer evaluations.\n"
            f"TASK TYPE: {scope}\n\n"
            "APPROACH CHECK:\n"
            "- SUGGESTED: inspect summary statistics, then detected features\n"
            "- USED: reviewers verified the statistics with lookup tools\n"
            "- Status: CORRECT\n\n"
            f"REVIEWER SCORES:\n{score_lines}\n\n"
            "ANSWER VERIFICATION: the shared answer is consistent with the verified summary statistics\n\n"
            "CONFLICT STATUS:\n"
            "- Reviewer Agreement: UNANIMOUS\n"
            "- Approach Status: ALL_CORRECT\n"
            "- Analyst Agreement: no outstanding conflicts\n"
            "- Resolution: NO_CONFLICT\n\n"
            "CALIBRATED REASONING: verified statistics support the shared answer; no unresolved conflict remains.\n\n"
            f"FINAL ANSWER: {answer}"
        )


class HttpBackend:
    """Remote chat-completions backend with retry/backoff and seed forwarding."""

    deterministic = False

    def __init__(
        self,
        endpoint: str,
        api_key: str,
        timeout: float = 120.0,
        max_attempts: int = 3,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self.max_attempts = max_attempts
        self._sleep = sleep

    def _wire_messages(self, messages: Sequence[ChatMessage]) -> list[dict[str, Any]]:
        wire: list[dict[str, Any]] = []
        for m in messages:
            if m.role == "tool":
                wire.append({"role": "tool", "tool_call_id": m.tool_call_id, "content": m.text})
                continue
            if m.role == "assistant" and m.tool_calls:
                wire.append(
                    {
                        "role": "assistant",
                        "content": m.text or None,
                        "tool_calls": [
                            {
                                "id": c.call_id or f"call-{i}",
                                "type": "function",
                                "function": {"name": c.name, "arguments": json.dumps(dict(c.arguments))},
                            }
                            for i, c in enumerate(m.tool_calls)
                        ],
                    }
                )
                continue
            if m.images:
                content: list[dict[str, Any]] = [{"type": "text", "text": m.text}]
                for png in m.images:
                    b64 = base64.b64encode(png).decode("ascii")
                    content.append(
                        {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}}
                    )
                wire.append({"role": m.role, "content": content})
            else:
                wire.append({"role": m.role, "content": m.text})
        return wire

    def _payload(self, request: ChatRequest) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "model": request.model,
            "messages": self._wire_messages(request.messages),
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        if request.tools:
            payload["tools"] = [
                {
                    "type": "function",
                    "function": {"name": t.name, "description": t.description, "parameters": t.parameters},
                }
                for t in request.tools
            ]
        return payload

    def complete(self, request: ChatRequest) -> BackendReply:
        body = json.dumps(self._payload(request)).encode("utf-8")
        last_error: Optional[Exception] = None
        for attempt in range(self.max_attempts):
            started = time.perf_counter()
            try:
                req = urllib.request.Request(
                    f"{self.endpoint}/chat/completions",
                    data=body,
                    headers={
                        "Content-Type": "application/json",
                        "Authorization": f"Bearer {self.api_key}",
                    },
                    method="POST",
                )
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    raw = resp.read().decode("utf-8")
                return self._decode(raw, time.perf_counter() - started)
            except urllib.error.HTTPError as exc:
                detail = exc.read().decode("utf-8", "replace")[:300]
                if exc.code == 429:
                    retry_after = exc.headers.get("Retry-After")
                    wait = float(retry_after) if retry_after else 0.5 * 2**attempt
                    logger.warning("rate limited; waiting %.1fs", wait)
                    self._sleep(wait)
                    last_error = TransportError(f"HTTP 429: {detail}")
                    continue
                if 500 <= exc.code < 600 and attempt + 1 < self.max_attempts:
                    self._sleep(0.5 * 2**attempt)
                    last_error = TransportError(f"HTTP {exc.code}: {detail}")
                    continue
                raise TransportError(f"HTTP {exc.code}: {detail}") from exc
            except urllib.error.URLError as exc:
                last_error = TransportError(f"transport failure: {exc.reason}")
                if attempt + 1 < self.max_attempts:
                    self._sleep(0.5 * 2**attempt)
                    continue
        raise last_error or TransportError("request failed")

    @staticmethod
    def _decode(raw: str, duration: float) -> BackendReply:
        try:
            data = json.loads(raw)
            choice = data["choices"][0]["message"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise DecodeError(f"malformed provider response: {exc}; payload starts: {raw[:200]}") from exc
        usage = data.get("usage", {})
        intents: list[ToolIntent] = []
        for i, call in enumerate(choice.get("tool_calls") or ()):
            try:
                args = json.loads(call["function"].get("arguments") or "{}")
            except json.JSONDecodeError:
                args = {}
            intents.append(
                ToolIntent(name=call["function"]["name"], arguments=args, call_id=call.get("id", f"call-{i}"))
            )
        text = choice.get("content") or ""
        if not intents:
            # text-protocol fallback for providers without native tool calling
            text, parsed = parse_text_tool_intents(text)
            intents.extend(parsed)
        return BackendReply(
            text=text,
            tool_intents=tuple(intents),
            input_tokens=int(usage.get("prompt_tokens", 0)),
            output_tokens=int(usage.get("completion_tokens", 0)),
            duration=duration,
        )


# --- Capture ------------------------------------------------------------------------


@dataclass
class CaptureRecord:
    agent_id: str
    model: str
    tool_names: tuple[str, ...]
    image_parts: int
    messages: tuple[dict[str, Any], ...]
    reply_text: str = ""


class CaptureRecorder:
    """Mirrors requests/replies for fixtures and isolation assertions."""

    def __init__(self, directory: Optional[Path] = None):
        self.directory = directory
        self.records: list[CaptureRecord] = []
        self._lock = threading.Lock()

    def record(self, request: ChatRequest, reply: BackendReply) -> None:
        rec = CaptureRecord(
            agent_id=request.agent_id,
            model=request.model,
            tool_names=tuple(t.name for t in request.tools),
            image_parts=sum(len(m.images) for m in request.messages),
            messages=tuple(
                {"role": m.role, "text": m.text, "images": len(m.images)} for m in request.messages
            ),
            reply_text=reply.text,
        )
        with self._lock:
            self.records.append(rec)
            index = len(self.records)
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
            safe_agent = re.sub(r"[^A-Za-z0-9_.-]", "_", rec.agent_id)
            path = self.directory / f"{index:04d}_{safe_agent}.json"
            path.write_text(
                json.dumps(
                    {
                        "agent_id": rec.agent_id,
                        "model": rec.model,
                        "tool_names": list(rec.tool_names),
                        "image_parts": rec.image_parts,
                        "messages": list(rec.messages),
                        "reply_text": rec.reply_text,
                    },
                    sort_keys=True,
                    indent=2,
                ),
                encoding="utf-8",
            )

    def for_agent(self, prefix: str) -> list[CaptureRecord]:
        return [r for r in self.records if r.agent_id.startswith(prefix)]


# --- Gateway ---------------------------------------------------------------------------


class Gateway:
    """Shared front door for all agent turns; owns usage accounting."""

    def __init__(
        self,
        backend: Any,
        rate_input_per_million: float = 0.40,
        rate_output_per_million: float = 1.60,
        capture: Optional[CaptureRecorder] = None,
    ):
        self.backend = backend
        self.capture = capture
        self._lock = threading.Lock()
        self._ledger = CostLedger(
            rate_input_per_million=rate_input_per_million,
            rate_output_per_million=rate_output_per_million,
        )

    @property
    def deterministic(self) -> bool:
        return bool(getattr(self.backend, "deterministic", False))

    @property
    def ledger(self) -> CostLedger:
        with self._lock:
            return self._ledger

    def reset_ledger(self) -> None:
        with self._lock:
            self._ledger = CostLedger(
                rate_input_per_million=self._ledger.rate_input_per_million,
                rate_output_per_million=self._ledger.rate_output_per_million,
            )

    def _record(self, reply: BackendReply) -> None:
        duration = 0.0 if self.deterministic else reply.duration
        with self._lock:
            self._ledger = self._ledger.add(reply.input_tokens, reply.output_tokens, duration)

    def complete(self, request: ChatRequest) -> BackendReply:
        reply = self.backend.complete(request)
        self._record(reply)
        if self.capture is not None:
            self.capture.record(request, reply)
        return reply

    def run_tool_loop(
        self,
        request: ChatRequest,
        tools: Sequence[ToolSpec],
        budget_limit: int,
    ) -> ToolLoopResult:
        """Alternate model turns and tool results until a final text or exhaustion.

        Executed calls never exceed `budget_limit`; the first over-limit intent
        (and any further intents in the same reply) receive the exhaustion
        message, after which exactly one more model turn is forced.
        """
        specs = {t.name: t for t in tools}
        messages = list(request.messages)
        budget = ToolBudget(limit=budget_limit)
        seen: set[str] = set()
        log: list[ToolCall] = []
        total_in = total_out = 0
        total_duration = 0.0
        exhaustion_delivered = False
        forced_turn_pending = False
        final_text = ""
        max_turns = budget_limit + 4
        for _ in range(max_turns):
            reply = self.complete(replace(request, messages=tuple(messages)))
            total_in += reply.input_tokens
            total_out += reply.output_tokens
            total_duration += 0.0 if self.deterministic else reply.duration
            if not reply.tool_intents or forced_turn_pending:
                final_text = reply.text
                break
            messages.append(
                ChatMessage(role="assistant", text=reply.text, tool_calls=reply.tool_intents)
            )
            for intent in reply.tool_intents:
                if budget.used >= budget.limit:
                    if budget.used == budget.limit:
                        budget.used += 1  # answered, never executed
                    result = EXHAUSTION_MESSAGE
                    exhaustion_delivered = True
                else:
                    budget.used += 1
                    started = time.perf_counter()
                    result = self._dispatch(specs, intent, seen)
                    elapsed = 0.0 if self.deterministic else time.perf_counter() - started
                    log.append(
                        ToolCall(
                            agent=request.agent_id,
                            tool=intent.name,
                            arguments=dict(intent.arguments),
                            result=result,
                            seq=len(log) + 1,
                            duration=elapsed,
                        )
                    )
                messages.append(
                    ChatMessage(role="tool", text=result, tool_call_id=intent.call_id or intent.name)
                )
            if exhaustion_delivered:
                forced_turn_pending = True
        return ToolLoopResult(
            text=final_text,
            tool_log=log,
            input_tokens=total_in,
            output_tokens=total_out,
            duration=total_duration,
            exhaustion_delivered=exhaustion_delivered,
        )

    @staticmethod
    def _dispatch(specs: Mapping[str, ToolSpec], intent: ToolIntent, seen: set[str]) -> str:
        spec = specs.get(intent.name)
        if spec is None:
            available = ", ".join(sorted(specs))
            return f"unknown tool {intent.name!r}; available tools: {available}"
        key = intent.name + json.dumps(dict(intent.arguments), sort_keys=True)
        prefix = ""
        if key in seen:
            prefix = REPEATED_CALL_NOTICE + "\n"
        seen.add(key)
        try:
            return prefix + spec.handler(dict(intent.arguments))
        except ToolError as exc:
            return prefix + f"tool error: {exc}"
        except Exception as exc:  # surface, never abort the debate
            logger.exception("tool handler crashed: %s", intent.name)
            return prefix + f"tool error: internal failure in {intent.name}: {exc}"
