"""Prompt template store and per-role renderers.

Template bodies live as plain-text assets under ``templates/`` and can be
overridden via a templates directory (for prompt experimentation). Rendering
fails loudly when a placeholder is unbound and verifies that no template
placeholder survives in the output.
"""

from __future__ import annotations

import re
from pathlib import Path
from typing import Mapping, Optional, Sequence

from ..model import (
    MODALITY_ORDER,
    AnswerSpace,
    DomainKnowledge,
    EvidenceReport,
    Modality,
    TaskInstance,
    TaskType,
)

_TEMPLATES_DIR = Path(__file__).parent / "templates"

_PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")

TEMPLATE_IDS = (
    "elicitor_system",
    "elicitation",
    "analyst_system_text",
    "analyst_system_visual",
    "analyst_system_numerical",
    "analyst_round1",
    "analyst_roundn",
    "temporal_basics",
    "temporal_vcc",
    "evidence_rules",
    "knowledge_inclusion",
    "scoring_rubric",
    "review_protocol",
    "reviewer_system",
    "reviewer_turn",
    "decision_protocol",
    "synthesizer_system",
    "synthesizer_turn",
)

#: Sent once when an agent's output fails parsing, before the single retry.
FORMAT_REPAIR_MESSAGE = (
    "FORMAT REMINDER: your previous reply did not match the required output format. "
    "Respond again now, following the EXACT format requested above, including every "
    "required section header."
)

_MODALITY_NAMES = {
    Modality.TEXT: "text",
    Modality.VISUAL: "visual",
    Modality.NUMERICAL: "numerical",
}


class PromptError(Exception):
    pass


class StagingError(PromptError):
    """Raised when a stage is rendered before its inputs exist."""


class PromptKit:
    """Loads template assets and renders filled prompts for each agent role."""

    def __init__(self, templates_dir: Optional[str | Path] = None):
        self.override_dir = Path(templates_dir) if templates_dir else None
        self._cache: dict[str, str] = {}

    def body(self, template_id: str) -> str:
        if template_id not in TEMPLATE_IDS:
            raise PromptError(f"unknown template id {template_id!r}")
        if template_id not in self._cache:
            path = None
            if self.override_dir is not None:
                candidate = self.override_dir / f"{template_id}.txt"
                if candidate.exists():
                    path = candidate
            if path is None:
                path = _TEMPLATES_DIR / f"{template_id}.txt"
            self._cache[template_id] = path.read_text(encoding="utf-8").rstrip("\n")
        return self._cache[template_id]

    def placeholders(self, template_id: str) -> set[str]:
        return set(_PLACEHOLDER_RE.findall(self.body(template_id)))

    def fill(self, template_id: str, **bindings: str) -> str:
        body = self.body(template_id)
        required = self.placeholders(template_id)
        missing = sorted(k for k in required if k not in bindings or bindings[k] is None)
        if missing:
            raise PromptError(f"unbound placeholder(s) in {template_id}: {', '.join(missing)}")
        rendered = body
        for name in required:
            rendered = rendered.replace("{" + name + "}", str(bindings[name]))
        leftovers = [n for n in _PLACEHOLDER_RE.findall(rendered) if n in required]
        if leftovers:
            raise PromptError(
                f"placeholder token(s) remain after rendering {template_id}: {', '.join(leftovers)}"
            )
        return rendered

    # -- building blocks -------------------------------------------------

    def knowledge_block(self, knowledge: DomainKnowledge) -> str:
        return self.fill("knowledge_inclusion", domain_knowledge=knowledge.raw_text)

    def debate_history(self, reports: Mapping[Modality, EvidenceReport]) -> str:
        chunks = []
        for m in MODALITY_ORDER:
            report = reports.get(m)
            if report is None or not report.usable or not report.raw_text:
                text = "(no usable evidence this round)"
                rnd = report.round if report else 0
            else:
                text = report.raw_text
                rnd = report.round
            chunks.append(f"--- {m.value} ANALYST (round {rnd}) ---\n{text}")
        return "\n\n".join(chunks)

    # -- stage renderers ----------------------------------------------------

    def render_elicitation(self, query: str, context: Optional[str] = None) -> tuple[str, str]:
        if not query or not query.strip():
            raise PromptError("unbound placeholder(s) in elicitation: task_description is empty")
        task = query.strip()
        if context and context.strip():
            task = f"{task}\n\nCONTEXT:\n{context.strip()}"
        return self.body("elicitor_system"), self.fill("elicitation", task_description=task)

    def render_analyst(
        self,
        modality: Modality,
        round: int,
        task_text: str,
        knowledge: DomainKnowledge,
        prior_evidence: Optional[Mapping[Modality, EvidenceReport]] = None,
    ) -> tuple[str, str]:
        if round < 1:
            raise StagingError(f"round must be ≥ 1, got {round}")
        system = self.fill(
            f"analyst_system_{_MODALITY_NAMES[modality]}",
            temporal_basics=self.body("temporal_basics"),
            evidence_rules=self.body("evidence_rules"),
        )
        system = f"{system}\n\n{self.knowledge_block(knowledge)}"
        name = _MODALITY_NAMES[modality]
        if round == 1:
            user = self.fill("analyst_round1", task=task_text, modality_name=name)
        else:
            if prior_evidence is None or any(m not in prior_evidence for m in MODALITY_ORDER):
                raise StagingError(
                    f"round {round} prompt needs previous evidence from all three analysts"
                )
            user = self.fill(
                "analyst_roundn",
                debate_history=self.debate_history(prior_evidence),
                task=task_text,
                modality_name=name,
            )
        return system, user

    def render_reviewer(
        self,
        task_text: str,
        knowledge: DomainKnowledge,
        final_evidence: Mapping[Modality, EvidenceReport],
    ) -> tuple[str, str]:
        if any(m not in final_evidence for m in MODALITY_ORDER):
            raise StagingError("reviewer prompt needs final-round evidence from all three analysts")
        system = self.fill(
            "reviewer_system",
            knowledge_section=self.knowledge_block(knowledge),
            TEMPORAL_AWARENESS=self.body("temporal_vcc"),
            JUDGE_EVALUATION_CRITERIA=self.body("scoring_rubric"),
            JUDGE_PROTOCOL=self.body("review_protocol"),
        )
        user = self.fill(
            "reviewer_turn",
            task=task_text,
            final_debate_history=self.debate_history(final_evidence),
        )
        return system, user

    def render_synthesizer(
        self,
        task_text: str,
        knowledge: DomainKnowledge,
        reviewer_raw_texts: Sequence[str],
    ) -> tuple[str, str]:
        if not reviewer_raw_texts:
            raise StagingError("synthesizer prompt needs at least one reviewer record")
        system = self.fill(
            "synthesizer_system",
            knowledge_section=self.knowledge_block(knowledge),
            TEMPORAL_AWARENESS=self.body("temporal_vcc"),
            SYNTHESIZER_PROTOCOL=self.body("decision_protocol"),
        )
        responses = "\n\n".join(
            f"=== REVIEWER {i} ===\n{raw}" for i, raw in enumerate(reviewer_raw_texts)
        )
        user = self.fill(
            "synthesizer_turn",
            task_description_judge=task_text,
            all_judge_responses=responses,
        )
        return system, user


def answer_scaffold(instance: TaskInstance) -> str:
    """Task-type-specific restatement of the exact required answer format."""
    space: AnswerSpace = instance.answer_space
    if space.kind == "options":
        listed = " | ".join(space.labels)
        return f"ANSWER FORMAT: the final answer must be exactly one option letter: {listed}"
    if space.kind == "labels":
        listed = " | ".join(space.labels)
        return f"ANSWER FORMAT: the final answer must be exactly one of: {listed}"
    if space.kind == "vector":
        if instance.task_type == TaskType.IMPUTATION:
            what = "imputed values"
        else:
            what = "predicted values"
        return (
            f"ANSWER FORMAT: the final answer must be exactly {space.horizon} "
            f"comma-separated numbers ({what})"
        )
    if space.kind == "boolean":
        return "ANSWER FORMAT: the final answer must be exactly one of: true | false"
    return "ANSWER FORMAT: answer in one short sentence"
