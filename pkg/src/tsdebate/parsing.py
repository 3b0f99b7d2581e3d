"""Parsers turning structured agent output into typed records.

Parsing is lenient and header-anchored: drifted spellings are accepted,
arithmetic inconsistencies are recomputed rather than rejected, and every
recovery leaves a flag on the record so nothing is silently repaired.
"""

from __future__ import annotations

import math
import re
from typing import Optional, Sequence

from .model import (
    Agreement,
    Answer,
    ApproachStatus,
    ClaimVerdict,
    ConflictStatus,
    DomainConsistency,
    DomainKnowledge,
    EvidenceReport,
    Modality,
    Resolution,
    ReviewerRecord,
    ReviewerScore,
    ScopeJudgment,
    ScoreTriple,
    Statement,
    SynthesizerVerdict,
    TaskInstance,
    TaskType,
    Verification,
    normalize_weights,
    recompute_agreement,
)


class ParseFailure(Exception):
    """The output is too malformed to recover; triggers one repair retry."""


class AnswerExtractionError(ValueError):
    def __init__(self, message: str, raw: str, vector: Optional[tuple[float, ...]] = None):
        super().__init__(message)
        self.raw = raw
        self.vector = vector


_ANSWER_LIKE_RE = re.compile(r"^\s*(FINAL ANSWER|CALIBRATED ANSWER|ANSWER)\s*:", re.IGNORECASE)


def _split_sections(raw: str, headers: Sequence[str]) -> dict[str, str]:
    """Header-anchored, case-insensitive, order-independent section split."""
    pattern = re.compile(
        r"^\s*(" + "|".join(re.escape(h) for h in headers) + r")\s*:\s*(.*)$",
        re.IGNORECASE,
    )
    sections: dict[str, list[str]] = {}
    current: Optional[str] = None
    for line in raw.splitlines():
        m = pattern.match(line)
        if m:
            current = m.group(1).upper()
            sections.setdefault(current, [])
            rest = m.group(2).strip()
            if rest:
                sections[current].append(rest)
        elif current is not None:
            sections[current].append(line)
    return {k: "\n".join(v).strip() for k, v in sections.items()}


# --- Knowledge -----------------------------------------------------------------

_KNOWLEDGE_HEADERS = (
    "DOMAIN",
    "KNOWLEDGE",
    "KEY SIGNALS",
    "SUGGESTED APPROACH",
    "PITFALLS",
    "MODALITY",
)


def parse_knowledge(raw: str) -> DomainKnowledge:
    """Extract the six labeled sections; unmatched ones stay empty."""
    sections = _split_sections(raw, _KNOWLEDGE_HEADERS)
    flags: list[str] = []
    if any(_ANSWER_LIKE_RE.match(line) for line in raw.splitlines()):
        flags.append("contains answer-like line despite elicitation instructions")
    return DomainKnowledge(
        domain=sections.get("DOMAIN", ""),
        knowledge=sections.get("KNOWLEDGE", ""),
        key_signals=sections.get("KEY SIGNALS", ""),
        suggested_approach=sections.get("SUGGESTED APPROACH", ""),
        pitfalls=sections.get("PITFALLS", ""),
        modality_guidance=sections.get("MODALITY", ""),
        raw_text=raw,
        flags=tuple(flags),
    )


# --- Evidence -----------------------------------------------------------------------

_EVIDENCE_HEADERS = (
    "UNDERSTANDING",
    "OTHER PERSPECTIVES",
    "USEFUL OBSERVATIONS",
    "OBSERVATIONS",
    "INFERENCES",
    "LIMITS",
)

_ITEM_RE = re.compile(r"^\s*(?:\d+[.)]\s*|[-*]\s+)(.*)$")
_TAG_RE = re.compile(r"\[\s*(OBSERVATION|INFERENCE)\s*\]\s*$", re.IGNORECASE)


def _split_items(block: str) -> list[str]:
    items: list[str] = []
    for line in block.splitlines():
        m = _ITEM_RE.match(line)
        if m and m.group(1).strip():
            items.append(m.group(1).strip())
        elif line.strip() and items:
            items[-1] += " " + line.strip()
        elif line.strip():
            items.append(line.strip())
    return items


def _tagged(items: list[str], expected: str, flags: list[str]) -> tuple[Statement, ...]:
    out = []
    for text in items:
        m = _TAG_RE.search(text)
        if m:
            tag = m.group(1).upper()
            text = _TAG_RE.sub("", text).strip()
            if tag != expected:
                flags.append(f"{tag} tag under {expected} section kept as written")
        else:
            tag = expected
            flags.append(f"missing [{expected}] tag inferred from section")
        out.append(Statement(text=text, tag=tag))
    return tuple(out)


def parse_evidence(raw: str, modality: Modality, round: int) -> EvidenceReport:
    if not raw or not raw.strip():
        raise ParseFailure("empty evidence report")
    flags: list[str] = []
    answer_lines = [l.strip() for l in raw.splitlines() if _ANSWER_LIKE_RE.match(l)]
    body_lines = [l for l in raw.splitlines() if not _ANSWER_LIKE_RE.match(l)]
    sections = _split_sections("\n".join(body_lines), _EVIDENCE_HEADERS)
    obs_block = sections.get("USEFUL OBSERVATIONS", sections.get("OBSERVATIONS", ""))
    observations = _tagged(_split_items(obs_block), "OBSERVATION", flags)
    inferences = _tagged(_split_items(sections.get("INFERENCES", "")), "INFERENCE", flags)
    if not observations and not inferences:
        raise ParseFailure("no observations and no inferences found")
    limits = sections.get("LIMITS", "")
    if answer_lines:
        flags.append("final-answer-like line despite evidence-only instructions")
        overflow = " | ".join(answer_lines)
        limits = f"{limits}\n[withheld answer line: {overflow}]".strip()
    other = sections.get("OTHER PERSPECTIVES")
    if round == 1 and other:
        flags.append("unexpected OTHER PERSPECTIVES section in round 1")
        other = None
    return EvidenceReport(
        modality=modality,
        round=round,
        understanding=sections.get("UNDERSTANDING", ""),
        other_perspectives=other if round >= 2 else None,
        observations=observations,
        inferences=inferences,
        limits=limits,
        raw_text=raw,
        flags=tuple(flags),
        usable=True,
    )


# --- Reviewer records ------------------------------------------------------------------

_SCORE_LINE_RE = re.compile(
    r"^\s*-?\s*(TEXT|VISUAL|NUMERICAL)\s*:?\s*\((?P<parts>[^)]*)\)\s*=\s*\[?(?P<total>\d+)\]?",
    re.IGNORECASE,
)
_SCORE_PART_RE = re.compile(r"([A-Za-z]+)\s*:?\s*(\d+)\s*/\s*(\d+)")
_WEIGHT_LINE_RE = re.compile(
    r"^\s*-?\s*(TEXT|VISUAL|NUMERICAL)\s*:?\s*\[?\s*(\d+(?:\.\d+)?)\s*(%)?\s*\]?",
    re.IGNORECASE,
)
_VERDICT_LINE_RE = re.compile(
    r"^\s*-\s*\[?(?P<claim>.+?)\]?\s*:\s*\[?(?P<v>VERIFIED|UNVERIFIED|CONTRADICTED)\]?"
    r"(?:\s*\+\s*\[?\s*DOMAIN\s*:\s*(?P<d>MATCHES|VIOLATES|N[-/ ]?A)\s*\]?)?"
    r"\s*(?:-\s*(?P<expl>.*))?$",
    re.IGNORECASE,
)

_BOUNDS = {"inference": 50, "observation": 30, "honesty": 20}


def _clamp(value: int, bound: int, label: str, flags: list[str]) -> int:
    if value < 0:
        flags.append(f"{label} score {value} clamped to 0")
        return 0
    if value > bound:
        flags.append(f"{label} score {value} clamped to {bound}")
        return bound
    return value


def _parse_score_line(line: str, flags: list[str]) -> Optional[tuple[Modality, ScoreTriple]]:
    m = _SCORE_LINE_RE.match(line)
    if m is None:
        return None
    modality = Modality(m.group(1).upper())
    components: dict[str, int] = {}
    named: dict[str, int] = {}
    for name, value, denom in _SCORE_PART_RE.findall(m.group("parts")):
        value = int(value)
        # denominators identify the axis regardless of stated order
        if denom == "50":
            components["inference"] = value
        elif denom == "30":
            components["observation"] = value
        elif denom == "20":
            components["honesty"] = value
        else:
            named[name.lower()] = value
    for axis in _BOUNDS:
        if axis not in components and axis in named:
            components[axis] = named[axis]
    if set(components) != set(_BOUNDS):
        flags.append(f"unreadable score components for {modality.value}")
        return None
    clamped = {
        axis: _clamp(components[axis], bound, f"{modality.value} {axis}", flags)
        for axis, bound in _BOUNDS.items()
    }
    triple = ScoreTriple.of(clamped["inference"], clamped["observation"], clamped["honesty"])
    stated = int(m.group("total"))
    if stated != triple.total:
        flags.append(
            f"{modality.value} stated total {stated} recomputed to {triple.total}"
        )
    return modality, triple


def _normalize_domain(token: Optional[str]) -> DomainConsistency:
    if token is None:
        return DomainConsistency.NA
    cleaned = token.upper().replace("-", "").replace("/", "").replace(" ", "")
    if cleaned == "MATCHES":
        return DomainConsistency.MATCHES
    if cleaned == "VIOLATES":
        return DomainConsistency.VIOLATES
    return DomainConsistency.NA


def _find_conflict(value: str) -> Optional[ConflictStatus]:
    upper = value.upper()
    hits: list[tuple[int, ConflictStatus]] = []
    for token, status in (
        ("NO_CONFLICT", ConflictStatus.NO_CONFLICT),
        ("NO CONFLICT", ConflictStatus.NO_CONFLICT),
        ("RESOLVED", ConflictStatus.RESOLVED),
        ("DETECTED", ConflictStatus.DETECTED),
    ):
        i = upper.find(token)
        if i >= 0:
            hits.append((i, status))
    if not hits:
        return None
    return min(hits)[1]


def _parse_scope(value: str) -> Optional[ScopeJudgment]:
    upper = value.upper()
    has_future = "FUTURE" in upper
    has_past = "PAST" in upper
    if has_future and not has_past:
        return ScopeJudgment.FUTURE
    if has_past and not has_future:
        return ScopeJudgment.PAST_PRESENT
    return None


_REVIEWER_HEADERS = (
    "TASK",
    "TASK TYPE",
    "SCORES",
    "WEIGHTS",
    "VERIFICATION",
    "OUTSTANDING CONFLICTS",
    "KEY EVIDENCE",
    "CALIBRATED ANSWER",
)


def parse_reviewer(
    raw: str,
    reviewer_id: int = 0,
    instance: Optional[TaskInstance] = None,
) -> ReviewerRecord:
    if not raw or not raw.strip():
        raise ParseFailure("empty reviewer output")
    flags: list[str] = []
    scores: dict[Modality, ScoreTriple] = {}
    for line in raw.splitlines():
        parsed = _parse_score_line(line, flags)
        if parsed:
            modality, triple = parsed
            if modality in scores:
                flags.append(f"duplicate score line for {modality.value} ignored")
            else:
                scores[modality] = triple

    stated_weights: dict[Modality, float] = {}
    in_weights = False
    verdicts: list[ClaimVerdict] = []
    in_verification = False
    for line in raw.splitlines():
        upper = line.strip().upper()
        if upper.startswith("WEIGHTS"):
            in_weights = True
            in_verification = False
            continue
        if upper.startswith("VERIFICATION"):
            in_verification = True
            in_weights = False
            continue
        if re.match(r"^[A-Z][A-Z ]+:", upper) and not line.strip().startswith("-"):
            in_weights = in_verification = False
        if in_weights:
            m = _WEIGHT_LINE_RE.match(line)
            if m:
                value = float(m.group(2))
                if m.group(3) or value > 1.0:
                    value /= 100.0
                stated_weights[Modality(m.group(1).upper())] = value
        if in_verification:
            m = _VERDICT_LINE_RE.match(line)
            if m:
                verdicts.append(
                    ClaimVerdict(
                        claim_text=m.group("claim").strip(),
                        verification=Verification(m.group("v").upper()),
                        domain_consistency=_normalize_domain(m.group("d")),
                        explanation=(m.group("expl") or "").strip(),
                    )
                )

    sections = _split_sections(raw, _REVIEWER_HEADERS)

    answer_line = sections.get("CALIBRATED ANSWER", "").strip()
    if not answer_line:
        raise ParseFailure("missing CALIBRATED ANSWER line")
    answer_line = answer_line.splitlines()[0].strip()

    if scores:
        weights = normalize_weights(scores)
        usable_stated = (
            set(stated_weights) == set(scores)
            and math.isclose(sum(stated_weights.values()), 1.0, abs_tol=1e-6)
            and all(
                stated_weights[m] == 0.0 for m, s in scores.items() if s.total < 40
            )
        )
        if usable_stated:
            weights = dict(stated_weights)
        elif stated_weights:
            flags.append("weights recomputed from scores (stated weights unusable)")
        else:
            flags.append("weights recomputed from scores (none stated)")
    else:
        weights = {}
        flags.append("no analyst scores parsed")

    conflict = _find_conflict(sections.get("OUTSTANDING CONFLICTS", ""))
    if conflict is None:
        conflict = ConflictStatus.NO_CONFLICT
        flags.append("conflict status missing; defaulted to NO_CONFLICT")

    calibrated: Optional[Answer] = None
    if instance is not None:
        try:
            calibrated = extract_answer(answer_line, instance)
        except AnswerExtractionError as exc:
            flags.append(f"unmapped answer: {exc.raw}")
    else:
        calibrated = Answer.of_text(answer_line)

    task_restatement = sections.get("TASK", "").split("\n")[0].strip()
    return ReviewerRecord(
        reviewer_id=reviewer_id,
        task_restatement=task_restatement,
        task_type_judgment=_parse_scope(sections.get("TASK TYPE", "")),
        scores=scores,
        weights=weights,
        verdicts=tuple(verdicts),
        conflict=conflict,
        key_evidence=sections.get("KEY EVIDENCE", "").strip(),
        calibrated_answer=calibrated,
        raw_text=raw,
        flags=tuple(flags),
        usable=True,
    )


# --- Synthesizer verdict ----------------------------------------------------------------

_REVIEWER_SCORE_RE = re.compile(
    r"^\s*-?\s*Reviewer\s+(?P<rid>\d+)\s*:?\s*\((?P<parts>[^)]*)\)\s*=\s*\[?(?P<total>\d+)\]?",
    re.IGNORECASE,
)
_CRITERION_RE = re.compile(r"([A-Za-z]+)\s*:?\s*(\d+)\s*/\s*20")

_CRITERIA_ORDER = ("task", "evidence", "verification", "conflicts", "calibration")

_SYNTH_HEADERS = (
    "TASK",
    "TASK TYPE",
    "APPROACH CHECK",
    "REVIEWER SCORES",
    "ANSWER VERIFICATION",
    "CONFLICT STATUS",
    "CALIBRATED REASONING",
    "FINAL ANSWER",
)


def _parse_reviewer_score(line: str, flags: list[str]) -> Optional[tuple[int, ReviewerScore]]:
    m = _REVIEWER_SCORE_RE.match(line)
    if m is None:
        return None
    rid = int(m.group("rid"))
    named = {name.lower(): int(v) for name, v in _CRITERION_RE.findall(m.group("parts"))}
    values = []
    for key in _CRITERIA_ORDER:
        matched = next((v for name, v in named.items() if name.startswith(key)), None)
        if matched is None:
            flags.append(f"reviewer {rid} criterion {key!r} missing; treated as 0")
            matched = 0
        values.append(_clamp(matched, 20, f"reviewer {rid} {key}", flags))
    score = ReviewerScore.of(*values)
    stated = int(m.group("total"))
    if stated != score.total:
        flags.append(f"reviewer {rid} stated total {stated} recomputed to {score.total}")
    if score.total >= 100:
        flags.append(f"reviewer {rid} total 100 clamped to 99 (perfect score disallowed)")
        values[-1] -= score.total - 99
        score = ReviewerScore.of(*values)
    return rid, score


def parse_synthesizer(
    raw: str,
    reviewer_records: Sequence[ReviewerRecord] = (),
    instance: Optional[TaskInstance] = None,
) -> SynthesizerVerdict:
    if not raw or not raw.strip():
        raise ParseFailure("empty synthesizer output")
    flags: list[str] = []
    sections = _split_sections(raw, _SYNTH_HEADERS)

    final_line = sections.get("FINAL ANSWER", "").strip()
    if not final_line:
        raise ParseFailure("missing FINAL ANSWER line")
    final_line = final_line.splitlines()[0].strip()

    approach = ApproachStatus.CORRECT
    status_line = ""
    for line in sections.get("APPROACH CHECK", "").splitlines():
        if "STATUS" in line.upper():
            status_line = line.upper()
            break
    if status_line:
        has_mismatch = "MISMATCH" in status_line or "INCORRECT" in status_line
        has_correct = "CORRECT" in status_line.replace("INCORRECT", "")
        if has_mismatch and not has_correct:
            approach = ApproachStatus.MISMATCH
        elif has_mismatch and has_correct:
            flags.append("ambiguous approach status; defaulted to CORRECT")
    else:
        flags.append("approach status missing; defaulted to CORRECT")

    reviewer_scores: dict[int, ReviewerScore] = {}
    for line in raw.splitlines():
        parsed = _parse_reviewer_score(line, flags)
        if parsed:
            rid, score = parsed
            reviewer_scores[rid] = score

    conflict_block = sections.get("CONFLICT STATUS", "")
    agreement: Optional[Agreement] = None
    resolution: Optional[Resolution] = None
    for line in conflict_block.splitlines():
        upper = line.upper()
        if "AGREEMENT" in upper and agreement is None:
            for token in Agreement:
                if token.value in upper:
                    agreement = token
                    break
        if "RESOLUTION" in upper and resolution is None:
            for token in (
                Resolution.VERIFIED_RESOLUTION,
                Resolution.APPROACH_ERROR,
                Resolution.UNRESOLVED,
                Resolution.NO_CONFLICT,
            ):
                if token.value in upper:
                    resolution = token
                    break
    if agreement is None:
        agreement = Agreement.UNANIMOUS
        flags.append("agreement token missing; defaulted to UNANIMOUS")
    if resolution is None:
        resolution = Resolution.NO_CONFLICT
        flags.append("resolution token missing; defaulted to NO_CONFLICT")

    if reviewer_records:
        answers = [r.calibrated_answer for r in reviewer_records if r.usable]
        recomputed = recompute_agreement(answers)
        if recomputed != agreement:
            flags.append(
                f"agreement {agreement.value} recomputed to {recomputed.value} from reviewer answers"
            )
            agreement = recomputed

    final_answer: Optional[Answer] = None
    if instance is not None:
        try:
            final_answer = extract_answer(final_line, instance)
        except AnswerExtractionError as exc:
            flags.append(f"unmapped answer: {exc.raw}")
    else:
        final_answer = Answer.of_text(final_line)

    return SynthesizerVerdict(
        approach_status=approach,
        reviewer_scores=reviewer_scores,
        agreement=agreement,
        resolution=resolution,
        final_answer=final_answer,
        raw_text=raw,
        flags=tuple(flags),
    )


# --- Final answers ---------------------------------------------------------------------------

_ANSWER_PREFIX_RE = re.compile(r"^\s*(?:FINAL ANSWER|CALIBRATED ANSWER|ANSWER)\s*:\s*", re.IGNORECASE)
_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?")

_TRUE_TOKENS = {"true", "yes"}
_FALSE_TOKENS = {"false", "no"}


def _strip_answer_prefix(line: str) -> str:
    return _ANSWER_PREFIX_RE.sub("", line).strip()


def _match_label(cleaned: str, original: str, labels: Sequence[str]) -> Optional[str]:
    folded = cleaned.casefold().strip(" .()[]'\"")
    for label in labels:
        if folded == label.casefold():
            return label
    # containment, longest label first so specific labels win over substrings
    for label in sorted(labels, key=len, reverse=True):
        if len(label) == 1:
            if re.search(rf"\b{re.escape(label.upper())}\b", original):
                return label
        elif re.search(re.escape(label), cleaned, re.IGNORECASE):
            return label
    return None


def extract_answer(line: str, instance: TaskInstance) -> Answer:
    """Map a final-answer line into the instance's typed answer space."""
    cleaned = _strip_answer_prefix(line)
    space = instance.answer_space
    if space.kind == "vector":
        numbers = [float(t) for t in _NUMBER_RE.findall(cleaned)]
        if len(numbers) != space.horizon:
            raise AnswerExtractionError(
                f"expected {space.horizon} numbers, found {len(numbers)}",
                raw=line,
                vector=tuple(numbers),
            )
        return Answer.of_vector(numbers)
    if space.kind == "boolean":
        token = cleaned.casefold().strip(" .!")
        if token in _TRUE_TOKENS:
            return Answer.of_boolean(True)
        if token in _FALSE_TOKENS:
            return Answer.of_boolean(False)
        for word in re.findall(r"[a-z]+", token):
            if word in _TRUE_TOKENS:
                return Answer.of_boolean(True)
            if word in _FALSE_TOKENS:
                return Answer.of_boolean(False)
        raise AnswerExtractionError("unmapped boolean answer", raw=line)
    if space.kind == "options":
        matched = _match_label(cleaned, cleaned, space.labels)
        if matched is None:
            raise AnswerExtractionError("unmapped answer", raw=line)
        return Answer.of_option(matched)
    if space.kind == "labels":
        matched = _match_label(cleaned, cleaned, space.labels)
        if matched is None:
            raise AnswerExtractionError("unmapped answer", raw=line)
        return Answer.of_label(matched)
    if instance.task_type == TaskType.OPEN_QA or space.kind == "free_text":
        if not cleaned:
            raise AnswerExtractionError("empty free-text answer", raw=line)
        return Answer.of_text(cleaned)
    raise AnswerExtractionError(f"unsupported answer space {space.kind!r}", raw=line)
