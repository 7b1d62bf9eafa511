"""Shared domain types and their canonical JSON encoding.

All types are immutable value objects; lists are stored as tuples so
instances can be shared freely between concurrent workers.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional


class VariantId(str, Enum):
    """Closed set of pipeline variants accepted everywhere."""

    COCOA_ZERO = "cocoa_zero"
    NO_INTERNAL = "no_internal"
    NO_EXTERNAL = "no_external"
    NO_THINK = "no_think"
    ZERO_SHOT = "zero_shot"
    STANDARD_RAG = "standard_rag"
    COT = "cot"
    MERGE = "merge"
    UNIFIED = "unified"

    @classmethod
    def parse(cls, value: str) -> "VariantId":
        try:
            return cls(value)
        except ValueError:
            valid = ", ".join(v.value for v in cls)
            raise ValueError(f"unknown variant {value!r} (expected one of: {valid})") from None


# Variants whose decision stage is expected to carry a chain-of-thought.
_COT_REQUIRED_VARIANTS = frozenset(
    {VariantId.COCOA_ZERO, VariantId.NO_INTERNAL, VariantId.NO_EXTERNAL}
)


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    gold_answers: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "gold_answers", tuple(self.gold_answers))


@dataclass(frozen=True)
class Passage:
    id: str
    title: str
    text: str


@dataclass(frozen=True)
class CandidateAnswer:
    text: str
    source: str  # "internal" | "external"


@dataclass(frozen=True)
class InducedKnowledge:
    text: str
    source: str  # "internal" | "external"


@dataclass(frozen=True)
class Decision:
    cot: str
    answer: str


@dataclass(frozen=True)
class BranchResult:
    """Outcome of one Stage-I branch.

    The candidate is absent in unified mode, where only the induced
    knowledge sections are recovered from the single-pass output.
    """

    candidate: Optional[CandidateAnswer]
    induction: Optional[InducedKnowledge]


@dataclass(frozen=True)
class Transcript:
    stage: str
    prompt: str
    output: str


@dataclass(frozen=True)
class RecordMeta:
    elapsed_s: float = 0.0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    failed: bool = False
    error: Optional[str] = None
    flags: tuple[str, ...] = ()
    parse_modes: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "flags", tuple(self.flags))
        object.__setattr__(self, "parse_modes", tuple(tuple(p) for p in self.parse_modes))


@dataclass(frozen=True)
class PipelineRecord:
    query: Query
    variant: VariantId
    retrieved: tuple[Passage, ...] = ()
    internal: Optional[BranchResult] = None
    external: Optional[BranchResult] = None
    decision: Optional[Decision] = None
    transcripts: tuple[Transcript, ...] = ()
    meta: RecordMeta = field(default_factory=RecordMeta)

    def __post_init__(self) -> None:
        object.__setattr__(self, "retrieved", tuple(self.retrieved))
        object.__setattr__(self, "transcripts", tuple(self.transcripts))


def validate_record(record: PipelineRecord) -> list[str]:
    """Check every record invariant; return one message per violation.

    Validation reports and never raises. An empty list means the record
    is internally consistent.
    """
    problems: list[str] = []
    if not record.query.text.strip():
        problems.append("query.text: empty after trimming")

    seen_ids: set[str] = set()
    for passage in record.retrieved:
        if not passage.text:
            problems.append(f"retrieved[{passage.id}].text: empty")
        if passage.id in seen_ids:
            problems.append(f"retrieved: duplicate passage id {passage.id!r}")
        seen_ids.add(passage.id)

    for name, branch in (("internal", record.internal), ("external", record.external)):
        if branch is None:
            continue
        if branch.candidate is not None and not branch.candidate.text:
            problems.append(f"{name}.candidate.text: empty")
        if branch.induction is not None and not branch.induction.text:
            problems.append(f"{name}.induction.text: empty")

    if record.variant is VariantId.COCOA_ZERO:
        for name, branch in (("internal", record.internal), ("external", record.external)):
            if branch is None:
                problems.append(f"{name} branch required for cocoa_zero")
            else:
                if branch.candidate is None:
                    problems.append(f"{name}.candidate required for cocoa_zero")
                if branch.induction is None:
                    problems.append(f"{name}.induction required for cocoa_zero")

    if record.decision is None:
        if not record.meta.failed:
            problems.append("decision: missing on a non-failed record")
    else:
        if not record.decision.answer:
            problems.append("decision.answer: empty")
        if not record.decision.cot and record.variant in _COT_REQUIRED_VARIANTS:
            problems.append(f"decision.cot: empty for variant {record.variant.value}")

    for i, t in enumerate(record.transcripts):
        if not t.stage:
            problems.append(f"transcripts[{i}].stage: empty")
        if not t.output and not record.meta.failed:
            problems.append(f"transcripts[{i}].output: empty")

    return problems


# ---------------------------------------------------------------------------
# Canonical JSON encoding.
#
# Field names and ordering are fixed so that a serialized batch is
# byte-stable across runs; `include_timing=False` omits wall-clock fields
# for determinism diffs.
# ---------------------------------------------------------------------------

def _dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def query_to_dict(q: Query) -> dict:
    return {"id": q.id, "text": q.text, "gold_answers": list(q.gold_answers)}


def query_from_dict(d: dict) -> Query:
    return Query(id=d["id"], text=d["text"], gold_answers=tuple(d.get("gold_answers", ())))


def passage_to_dict(p: Passage) -> dict:
    return {"id": p.id, "title": p.title, "text": p.text}


def passage_from_dict(d: dict) -> Passage:
    return Passage(id=d["id"], title=d.get("title", ""), text=d["text"])


def _branch_to_dict(b: Optional[BranchResult]) -> Optional[dict]:
    if b is None:
        return None
    return {
        "candidate": None if b.candidate is None else {"text": b.candidate.text, "source": b.candidate.source},
        "induction": None if b.induction is None else {"text": b.induction.text, "source": b.induction.source},
    }


def _branch_from_dict(d: Optional[dict]) -> Optional[BranchResult]:
    if d is None:
        return None
    cand = d.get("candidate")
    ind = d.get("induction")
    return BranchResult(
        candidate=None if cand is None else CandidateAnswer(text=cand["text"], source=cand["source"]),
        induction=None if ind is None else InducedKnowledge(text=ind["text"], source=ind["source"]),
    )


def record_to_dict(record: PipelineRecord, include_timing: bool = True) -> dict:
    meta: dict[str, Any] = {}
    if include_timing:
        meta["elapsed_s"] = record.meta.elapsed_s
    meta.update(
        {
            "prompt_tokens": record.meta.prompt_tokens,
            "completion_tokens": record.meta.completion_tokens,
            "failed": record.meta.failed,
            "error": record.meta.error,
            "flags": list(record.meta.flags),
            "parse_modes": [[s, m] for s, m in record.meta.parse_modes],
        }
    )
    return {
        "query": query_to_dict(record.query),
        "variant": record.variant.value,
        "retrieved": [passage_to_dict(p) for p in record.retrieved],
        "internal": _branch_to_dict(record.internal),
        "external": _branch_to_dict(record.external),
        "decision": None if record.decision is None else {"cot": record.decision.cot, "answer": record.decision.answer},
        "transcripts": [{"stage": t.stage, "prompt": t.prompt, "output": t.output} for t in record.transcripts],
        "meta": meta,
    }


def record_from_dict(d: dict) -> PipelineRecord:
    dec = d.get("decision")
    meta = d.get("meta", {})
    return PipelineRecord(
        query=query_from_dict(d["query"]),
        variant=VariantId.parse(d["variant"]),
        retrieved=tuple(passage_from_dict(p) for p in d.get("retrieved", ())),
        internal=_branch_from_dict(d.get("internal")),
        external=_branch_from_dict(d.get("external")),
        decision=None if dec is None else Decision(cot=dec["cot"], answer=dec["answer"]),
        transcripts=tuple(
            Transcript(stage=t["stage"], prompt=t["prompt"], output=t["output"])
            for t in d.get("transcripts", ())
        ),
        meta=RecordMeta(
            elapsed_s=meta.get("elapsed_s", 0.0),
            prompt_tokens=meta.get("prompt_tokens", 0),
            completion_tokens=meta.get("completion_tokens", 0),
            failed=meta.get("failed", False),
            error=meta.get("error"),
            flags=tuple(meta.get("flags", ())),
            parse_modes=tuple((s, m) for s, m in meta.get("parse_modes", ())),
        ),
    )


def encode_query(q: Query) -> str:
    return _dumps(query_to_dict(q))


def decode_query(s: str) -> Query:
    return query_from_dict(json.loads(s))


def encode_passage(p: Passage) -> str:
    return _dumps(passage_to_dict(p))


def decode_passage(s: str) -> Passage:
    return passage_from_dict(json.loads(s))


def encode_record(record: PipelineRecord, include_timing: bool = True) -> str:
    return _dumps(record_to_dict(record, include_timing=include_timing))


def decode_record(s: str) -> PipelineRecord:
    return record_from_dict(json.loads(s))
