"""Turn pipeline records into long-chain SFT samples and DPO pairs.

An SFT target concatenates the two induced knowledge passages, the
reasoning trace, and the final answer in the unified tagged layout; it is
kept only when the final answer passes EM against the golds. A DPO pair
keeps the long chain as the chosen response and the raw single-call
zero-shot completion as the rejected one, only for queries the zero-shot
variant got wrong and the full pipeline got right.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Union

from .metrics import exact_match
from .prompts import PromptBindings, StageId, render_prompt, render_unified_sections
from .types import PipelineRecord, VariantId

#: fine-tuning defaults recorded as dataset provenance (not executed here)
TRAINING_DEFAULTS = {
    "dpo_beta": 0.2,
    "rpo_alpha": 0.2,
    "sft_epochs": 5,
    "sft_learning_rate": 3e-5,
    "dpo_learning_rate": 5e-6,
}

REJECT_EM_FAIL = "em_fail"
REJECT_ZS_CORRECT = "zs_correct"
REJECT_COCOA_INCORRECT = "cocoa_incorrect"


class SynthesisError(ValueError):
    pass


@dataclass(frozen=True)
class Rejection:
    query_id: str
    reason: str


@dataclass(frozen=True)
class SftSample:
    id: str
    prompt: str
    target: str
    meta: dict


@dataclass(frozen=True)
class DpoSample:
    id: str
    prompt: str
    chosen: str
    rejected: str
    meta: dict


def _require_complete(record: PipelineRecord) -> None:
    if record.variant is not VariantId.COCOA_ZERO:
        raise SynthesisError(
            f"query {record.query.id!r}: expected a cocoa_zero record, got {record.variant.value}"
        )
    if record.meta.failed:
        raise SynthesisError(f"query {record.query.id!r}: record is flagged failed")
    if record.internal is None or record.internal.induction is None:
        raise SynthesisError(f"query {record.query.id!r}: missing internal induction")
    if record.external is None or record.external.induction is None:
        raise SynthesisError(f"query {record.query.id!r}: missing external induction")
    if record.decision is None or not record.decision.answer:
        raise SynthesisError(f"query {record.query.id!r}: missing decision")
    if not record.retrieved:
        raise SynthesisError(f"query {record.query.id!r}: missing retrieved passages")


def long_chain_target(record: PipelineRecord) -> str:
    """The four intermediate results laid out as the unified format block."""
    _require_complete(record)
    return render_unified_sections(
        background=record.internal.induction.text,
        summary=record.external.induction.text,
        thinking=record.decision.cot,
        answer=record.decision.answer,
    )


def _unified_prompt(record: PipelineRecord) -> str:
    return render_prompt(
        StageId.UNIFIED,
        PromptBindings(question=record.query.text, passages=record.retrieved),
    )


def build_sft_sample(record: PipelineRecord, gold: Iterable[str]) -> Union[SftSample, Rejection]:
    """Long-chain sample, kept only when the final answer passes EM."""
    _require_complete(record)
    gold = list(gold)
    if exact_match(record.decision.answer, gold) != 1:
        return Rejection(query_id=record.query.id, reason=REJECT_EM_FAIL)
    return SftSample(
        id=record.query.id,
        prompt=_unified_prompt(record),
        target=long_chain_target(record),
        meta={"query_id": record.query.id, "source_variant": record.variant.value, "filter": "em_pass"},
    )


def build_dpo_sample(
    zero_shot_record: PipelineRecord,
    cocoa_record: PipelineRecord,
    gold: Iterable[str],
) -> Union[DpoSample, Rejection]:
    """Preference pair: kept when zero-shot missed and the pipeline hit."""
    if zero_shot_record.query.id != cocoa_record.query.id:
        raise SynthesisError(
            f"query id mismatch: {zero_shot_record.query.id!r} vs {cocoa_record.query.id!r}"
        )
    if zero_shot_record.variant is not VariantId.ZERO_SHOT:
        raise SynthesisError(
            f"query {zero_shot_record.query.id!r}: rejected side must be zero_shot, "
            f"got {zero_shot_record.variant.value}"
        )
    _require_complete(cocoa_record)
    if zero_shot_record.meta.failed or zero_shot_record.decision is None:
        raise SynthesisError(f"query {zero_shot_record.query.id!r}: zero_shot record incomplete")
    gold = list(gold)
    if exact_match(cocoa_record.decision.answer, gold) != 1:
        return Rejection(query_id=cocoa_record.query.id, reason=REJECT_COCOA_INCORRECT)
    if exact_match(zero_shot_record.decision.answer, gold) == 1:
        return Rejection(query_id=cocoa_record.query.id, reason=REJECT_ZS_CORRECT)
    if not zero_shot_record.transcripts:
        raise SynthesisError(f"query {zero_shot_record.query.id!r}: zero_shot transcript missing")
    rejected = zero_shot_record.transcripts[0].output  # the raw completion, not the parsed answer
    chosen = long_chain_target(cocoa_record)
    if chosen == rejected:
        raise SynthesisError(f"query {cocoa_record.query.id!r}: chosen equals rejected")
    return DpoSample(
        id=cocoa_record.query.id,
        prompt=_unified_prompt(cocoa_record),
        chosen=chosen,
        rejected=rejected,
        meta={
            "query_id": cocoa_record.query.id,
            "source_variant": cocoa_record.variant.value,
            "filter": "zs_wrong_cocoa_right",
        },
    )


def export_dataset(
    samples: list[Union[SftSample, DpoSample]], path: str | Path, fmt: str
) -> int:
    """Write samples as JSONL ordered by query id; returns the line count."""
    if fmt not in ("sft_jsonl", "dpo_jsonl"):
        raise SynthesisError(f"unknown export format {fmt!r}")
    if not samples:
        raise SynthesisError("no samples to export")
    expected = SftSample if fmt == "sft_jsonl" else DpoSample
    for s in samples:
        if not isinstance(s, expected):
            raise SynthesisError(f"sample {s.id!r} is not a {expected.__name__}")
    ids = Counter(s.id for s in samples)
    dupes = [i for i, c in ids.items() if c > 1]
    if dupes:
        raise SynthesisError(f"duplicate query ids in export: {sorted(dupes)}")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for s in sorted(samples, key=lambda x: x.id):
            if isinstance(s, SftSample):
                row = {"id": s.id, "prompt": s.prompt, "target": s.target, "meta": s.meta}
            else:
                row = {"id": s.id, "prompt": s.prompt, "chosen": s.chosen, "rejected": s.rejected, "meta": s.meta}
            fh.write(json.dumps(row, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")
            count += 1
    return count


def load_sft_dataset(path: str | Path) -> list[SftSample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                out.append(SftSample(id=row["id"], prompt=row["prompt"], target=row["target"], meta=row["meta"]))
    return out


def load_dpo_dataset(path: str | Path) -> list[DpoSample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                out.append(
                    DpoSample(
                        id=row["id"], prompt=row["prompt"], chosen=row["chosen"],
                        rejected=row["rejected"], meta=row["meta"],
                    )
                )
    return out


def write_manifest(
    path: str | Path,
    sft_count: int,
    dpo_count: int,
    rejections: Counter,
) -> None:
    """Dataset manifest: counts per rejection reason plus training defaults."""
    manifest = {
        "sft_samples": sft_count,
        "dpo_samples": dpo_count,
        "rejections": dict(sorted(rejections.items())),
        "training_defaults": TRAINING_DEFAULTS,
    }
    Path(path).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
