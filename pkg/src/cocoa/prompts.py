"""Prompt construction and structured-output parsing.

Each pipeline stage renders exactly one golden template shipped under
cocoa/templates/. The templates reproduce the staged and unified prompt
formats literally, including the "### Thingking:" spelling in the
decision format block, so rendered prompts are stable byte-for-byte. The
parser accepts both that spelling and the conventional one.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Optional

from .types import Passage


class PromptError(ValueError):
    pass


class MissingBindingError(PromptError):
    pass


class ExtraBindingError(PromptError):
    pass


class ParseError(ValueError):
    pass


class StageId(str, Enum):
    INTERNAL_CANDIDATE = "internal_candidate"
    INTERNAL_INDUCTION = "internal_induction"
    EXTERNAL_CANDIDATE = "external_candidate"
    EXTERNAL_INDUCTION = "external_induction"
    DECISION = "decision"
    UNIFIED = "unified"
    ZERO_SHOT = "zero_shot"
    STANDARD_RAG = "standard_rag"
    COT = "cot"
    MERGE_CONTEXT = "merge_context"


#: template name -> placeholders it demands
TEMPLATE_PLACEHOLDERS: dict[str, tuple[str, ...]] = {
    "internal_candidate": ("{question}",),
    "internal_induction": ("{question}", "{answer}"),
    "external_candidate": ("{passages}", "{question}"),
    "external_induction": ("{passages}", "{question}", "{answer}"),
    "decision": ("{induction_in}", "{answer_in}", "{induction_ex}", "{answer_ex}", "{question}"),
    "decision_no_internal": ("{induction_ex}", "{answer_ex}", "{question}"),
    "decision_no_external": ("{induction_in}", "{answer_in}", "{question}"),
    "decision_no_think": ("{induction_in}", "{answer_in}", "{induction_ex}", "{answer_ex}", "{question}"),
    "unified": ("{passages}", "{question}"),
    "zero_shot": ("{question}",),
    "standard_rag": ("{passages}", "{question}"),
    "cot": ("{question}",),
    "merge_context": ("{passages}", "{question}"),
}

TEMPLATE_NAMES = tuple(TEMPLATE_PLACEHOLDERS)

_template_cache: dict[str, str] = {}


def load_template(name: str) -> str:
    if name not in TEMPLATE_PLACEHOLDERS:
        raise PromptError(f"unknown template {name!r}")
    if name not in _template_cache:
        text = resources.files("cocoa").joinpath(f"templates/{name}.txt").read_text(encoding="utf-8")
        _template_cache[name] = text
    return _template_cache[name]


@dataclass(frozen=True)
class PromptBindings:
    question: Optional[str] = None
    passages: Optional[tuple[Passage, ...]] = None
    candidate_internal: Optional[str] = None
    candidate_external: Optional[str] = None
    induction_internal: Optional[str] = None
    induction_external: Optional[str] = None
    task_instruction: Optional[str] = None

    def __post_init__(self) -> None:
        if self.passages is not None:
            object.__setattr__(self, "passages", tuple(self.passages))


def format_passages(passages: tuple[Passage, ...] | list[Passage]) -> str:
    """Render passages as numbered Title/Text line pairs separated by blank lines."""
    if not passages:
        raise PromptError("cannot format an empty passage list")
    blocks = [
        f"Passage #{i} Title: {p.title}\nPassage #{i} Text: {p.text}"
        for i, p in enumerate(passages, start=1)
    ]
    return "\n\n".join(blocks)


def _placeholder_value(placeholder: str, stage_template: str, b: PromptBindings) -> tuple[str, Optional[str]]:
    """Return (binding field name, substituted value or None when unbound)."""
    if placeholder == "{question}":
        if b.question is None:
            return "question", None
        if b.task_instruction is not None:
            return "question", f"{b.task_instruction}\n{b.question}"
        return "question", b.question
    if placeholder == "{passages}":
        if b.passages is None:
            return "passages", None
        return "passages", format_passages(b.passages)
    if placeholder == "{answer}":
        field = "candidate_internal" if stage_template == "internal_induction" else "candidate_external"
        return field, getattr(b, field)
    if placeholder == "{induction_in}":
        return "induction_internal", b.induction_internal
    if placeholder == "{answer_in}":
        return "candidate_internal", b.candidate_internal
    if placeholder == "{induction_ex}":
        return "induction_external", b.induction_external
    if placeholder == "{answer_ex}":
        return "candidate_external", b.candidate_external
    raise PromptError(f"unknown placeholder {placeholder!r}")


def render_template(name: str, bindings: PromptBindings) -> str:
    """Substitute placeholders in one named template, strictly.

    Every placeholder the template demands must be bound; any bound field
    the template does not use is rejected (task_instruction excepted, as
    it rides on the question).
    """
    template = load_template(name)
    needed = TEMPLATE_PLACEHOLDERS[name]
    used_fields: set[str] = set()
    out = template
    for ph in needed:
        field, value = _placeholder_value(ph, name, bindings)
        if value is None:
            raise MissingBindingError(f"template {name!r} demands {ph} but {field!r} is unbound")
        used_fields.add(field)
        out = out.replace(ph, value)

    all_fields = ("question", "passages", "candidate_internal", "candidate_external",
                  "induction_internal", "induction_external")
    for field in all_fields:
        if getattr(bindings, field) is not None and field not in used_fields:
            raise ExtraBindingError(f"binding {field!r} is not used by template {name!r}")
    return out


def render_prompt(
    stage: StageId,
    bindings: PromptBindings,
    *,
    include_internal: bool = True,
    include_external: bool = True,
    include_thinking: bool = True,
) -> str:
    """Render the template for a stage.

    The include_* switches select the ablated decision layouts and are
    only meaningful for StageId.DECISION.
    """
    name = stage.value
    if stage is StageId.DECISION:
        if not include_internal and not include_external:
            raise PromptError("decision prompt needs at least one knowledge branch")
        if not include_internal:
            name = "decision_no_internal"
        elif not include_external:
            name = "decision_no_external"
        elif not include_thinking:
            name = "decision_no_think"
    return render_template(name, bindings)


# ---------------------------------------------------------------------------
# Output parsing
# ---------------------------------------------------------------------------

PARSE_TAGGED_HASH = "tagged_hash"
PARSE_TAGGED_XML = "tagged_xml"
PARSE_FALLBACK = "fallback"

_HASH_MARKERS = {
    "background": ("### Background:",),
    "summary": ("### Summary:",),
    "thinking": ("### Thinking:", "### Thingking:"),
    "answer": ("### Short Answer:",),
}

_XML_TAGS = ("Internal", "External", "Thinking", "Answer")


@dataclass(frozen=True)
class ParsedSections:
    background: Optional[str] = None
    summary: Optional[str] = None
    thinking: Optional[str] = None
    answer: Optional[str] = None
    parse_mode: str = PARSE_FALLBACK


def _find_hash_sections(text: str) -> dict[str, str]:
    """Locate every known ### marker and slice the text between them."""
    hits: list[tuple[int, int, str]] = []  # (start, end-of-marker, field)
    for field, markers in _HASH_MARKERS.items():
        for marker in markers:
            pos = text.find(marker)
            if pos != -1:
                hits.append((pos, pos + len(marker), field))
                break
    hits.sort()
    sections: dict[str, str] = {}
    for i, (_, content_start, field) in enumerate(hits):
        content_end = hits[i + 1][0] if i + 1 < len(hits) else len(text)
        sections[field] = text[content_start:content_end].strip()
    return sections


def _find_xml_block(text: str, tag: str) -> Optional[str]:
    open_tag = f"<{tag}>"
    start = text.find(open_tag)
    if start == -1:
        return None
    start += len(open_tag)
    closers = (f"<\\\\{tag}>", f"<\\{tag}>", f"</{tag}>")
    ends = [m for m in (text.find(c, start) for c in closers) if m != -1]
    if ends:
        end = min(ends)
    else:
        # Unclosed block: stop at the next opening tag, or take the rest.
        nexts = [
            p for p in (text.find(f"<{t}>", start) for t in _XML_TAGS if t != tag) if p != -1
        ]
        end = min(nexts) if nexts else len(text)
    return text[start:end].strip()


def _fallback_answer(text: str) -> str:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    return lines[-1] if lines else ""


def parse_stage_output(stage: StageId, text: str) -> ParsedSections:
    """Extract the structured sections a stage's format block requests.

    Induction stages fall back to the whole (trimmed) output when the
    marker is absent; answer-bearing stages fall back to the last
    non-empty line. Fallbacks are recorded in parse_mode, never silent.
    """
    if not text.strip():
        raise ParseError(f"stage {stage.value}: empty generator output")

    if stage is StageId.UNIFIED:
        blocks = {tag: _find_xml_block(text, tag) for tag in _XML_TAGS}
        if blocks["Answer"]:
            return ParsedSections(
                background=blocks["Internal"],
                summary=blocks["External"],
                thinking=blocks["Thinking"],
                answer=blocks["Answer"],
                parse_mode=PARSE_TAGGED_XML,
            )
        return ParsedSections(
            background=blocks["Internal"],
            summary=blocks["External"],
            thinking=blocks["Thinking"],
            answer=_fallback_answer(text),
            parse_mode=PARSE_FALLBACK,
        )

    sections = _find_hash_sections(text)

    if stage is StageId.INTERNAL_INDUCTION:
        if sections.get("background"):
            return ParsedSections(background=sections["background"], parse_mode=PARSE_TAGGED_HASH)
        return ParsedSections(background=text.strip(), parse_mode=PARSE_FALLBACK)

    if stage is StageId.EXTERNAL_INDUCTION:
        if sections.get("summary"):
            return ParsedSections(summary=sections["summary"], parse_mode=PARSE_TAGGED_HASH)
        return ParsedSections(summary=text.strip(), parse_mode=PARSE_FALLBACK)

    # decision, candidates, and the single-call variants all yield answers
    thinking = sections.get("thinking")
    if sections.get("answer"):
        return ParsedSections(thinking=thinking, answer=sections["answer"], parse_mode=PARSE_TAGGED_HASH)
    return ParsedSections(thinking=thinking, answer=_fallback_answer(text), parse_mode=PARSE_FALLBACK)


def render_unified_sections(background: str, summary: str, thinking: str, answer: str) -> str:
    """Lay out the four sections exactly as the unified format block does.

    This is both the long-chain training-target layout and the inverse of
    parse_stage_output for the unified stage.
    """
    return (
        f"<Internal>\n{background}\n<\\\\Internal>\n"
        f"<External>\n{summary}\n<\\\\External>\n"
        f"<Thinking>\n{thinking}\n<\\\\Thinking>\n"
        f"<Answer>\n{answer}<\\\\Answer>"
    )
