from __future__ import annotations

import pytest

from cocoa.types import (
    BranchResult,
    CandidateAnswer,
    Decision,
    InducedKnowledge,
    Passage,
    PipelineRecord,
    Query,
    RecordMeta,
    Transcript,
    VariantId,
    decode_passage,
    decode_query,
    decode_record,
    encode_passage,
    encode_query,
    encode_record,
    validate_record,
)


def full_record(variant=VariantId.COCOA_ZERO, **overrides) -> PipelineRecord:
    fields = dict(
        query=Query(id="q1", text="capital of France?", gold_answers=("Paris",)),
        variant=variant,
        retrieved=(Passage(id="p1", title="T", text="X"),),
        internal=BranchResult(CandidateAnswer("Paris", "internal"), InducedKnowledge("bg", "internal")),
        external=BranchResult(CandidateAnswer("Paris", "external"), InducedKnowledge("sum", "external")),
        decision=Decision(cot="both agree", answer="Paris"),
        transcripts=(
            Transcript("internal_candidate", "prompt1", "Paris"),
            Transcript("decision", "prompt2", "### Short Answer: Paris"),
        ),
        meta=RecordMeta(elapsed_s=0.25, prompt_tokens=10, completion_tokens=4, parse_modes=(("decision", "tagged_hash"),)),
    )
    fields.update(overrides)
    return PipelineRecord(**fields)


class TestRoundTrip:
    def test_query(self):
        q = Query(id="q#1", text="what is ünïcode?", gold_answers=("a", "b"))
        assert decode_query(encode_query(q)) == q

    def test_passage(self):
        p = Passage(id="p1", title="", text="text with\ttabs and\nnewlines  ")
        assert decode_passage(encode_passage(p)) == p

    def test_record(self):
        r = full_record()
        assert decode_record(encode_record(r)) == r

    def test_record_encoding_is_stable(self):
        r = full_record()
        once = encode_record(r)
        assert encode_record(decode_record(once)) == once

    def test_canonical_mode_drops_timing(self):
        r = full_record()
        canonical = encode_record(r, include_timing=False)
        assert "elapsed_s" not in canonical
        back = decode_record(canonical)
        assert back.meta.elapsed_s == 0.0
        assert back.meta.prompt_tokens == r.meta.prompt_tokens

    def test_failed_record_without_decision(self):
        r = full_record(decision=None, meta=RecordMeta(failed=True, error="decision: boom"))
        back = decode_record(encode_record(r))
        assert back.decision is None and back.meta.failed


class TestVariantId:
    def test_every_string_maps(self):
        for v in VariantId:
            assert VariantId.parse(v.value) is v

    def test_unknown_rejected(self):
        with pytest.raises(ValueError, match="unknown variant"):
            VariantId.parse("cocoa_one")


class TestValidateRecord:
    def test_complete_record_is_clean(self):
        assert validate_record(full_record()) == []

    def test_missing_internal_branch(self):
        violations = validate_record(full_record(internal=None))
        assert any("internal branch required for cocoa_zero" in v for v in violations)

    def test_empty_decision_answer(self):
        violations = validate_record(full_record(decision=Decision(cot="c", answer="")))
        assert any("decision.answer" in v for v in violations)

    def test_empty_cot_flagged_for_decision_variants(self):
        violations = validate_record(full_record(decision=Decision(cot="", answer="Paris")))
        assert any("decision.cot" in v for v in violations)

    def test_empty_cot_fine_for_single_call_variants(self):
        r = full_record(
            variant=VariantId.ZERO_SHOT,
            internal=None,
            external=None,
            retrieved=(),
            decision=Decision(cot="", answer="Paris"),
        )
        assert validate_record(r) == []

    def test_duplicate_retrieved_ids(self):
        p = Passage(id="p1", title="", text="x")
        violations = validate_record(full_record(retrieved=(p, p)))
        assert any("duplicate passage id" in v for v in violations)

    def test_validation_reports_instead_of_raising(self):
        r = full_record(
            query=Query(id="q", text="   "),
            decision=Decision(cot="", answer=""),
            internal=None,
        )
        violations = validate_record(r)
        assert len(violations) >= 3
