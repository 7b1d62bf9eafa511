from __future__ import annotations

import pytest

from cocoa.generation import MockBackend, MockRule, MockScript
from cocoa.pipeline import EXPECTED_TRANSCRIPT_COUNTS, Pipeline, PipelineConfig, StageError
from cocoa.types import Query, VariantId, encode_record, validate_record

from conftest import MOCK_RULES, QUERIES, make_pipeline

Q1 = QUERIES[0]  # capital of France -> Paris everywhere


class TestBranches:
    def test_internal_branch(self, mock_pipeline):
        branch = mock_pipeline.run_internal_branch(Q1)
        assert branch.candidate.text == "Paris"
        assert branch.candidate.source == "internal"
        assert branch.induction.text == "France is a European country whose capital is Paris."

    def test_internal_induction_fallback_to_whole_text(self, bm25_index):
        rules = [
            MockRule(match="Please provide background", response="Paris, no marker here."),
            MockRule(match="capital of France", response="Paris"),
        ]
        pipeline = make_pipeline(bm25_index, rules=rules)
        branch = pipeline.run_internal_branch(Q1)
        assert branch.induction.text == "Paris, no marker here."

    def test_empty_candidate_is_stage_error(self, bm25_index):
        rules = [MockRule(match="capital of France", response="   \n  ")]
        pipeline = make_pipeline(bm25_index, rules=rules)
        with pytest.raises(StageError, match="internal_candidate"):
            pipeline.run_internal_branch(Q1)

    def test_external_branch(self, mock_pipeline, bm25_index):
        ranked = bm25_index.search(Q1.text, 2)
        branch = mock_pipeline.run_external_branch(Q1, ranked)
        assert branch.candidate.source == "external"
        assert "Paris" in branch.induction.text

    def test_external_branch_needs_passages(self, mock_pipeline):
        from cocoa.retrieval import RankedPassages

        with pytest.raises(StageError, match="at least one"):
            mock_pipeline.run_external_branch(Q1, RankedPassages(items=(), k_requested=1))

    def test_overlong_summary_flagged_not_truncated(self, bm25_index):
        long_summary = "### Summary: " + " ".join(["word"] * 230)
        rules = [
            MockRule(match="Please provide background", response="### Background: fine."),
            MockRule(match="generate a summary", response=long_summary),
            MockRule(match="choose the best prediction", response="### Thinking: t\n### Short Answer: Paris"),
            MockRule(match="capital of France", response="Paris"),
        ]
        pipeline = make_pipeline(bm25_index, rules=rules)
        record = pipeline.run_cocoa_zero(Q1)
        assert not record.meta.failed
        assert "external_induction_over_200_words" in record.meta.flags
        assert len(record.external.induction.text.split()) == 230


class TestDecision:
    def test_decision_parses_thinking_and_answer(self, mock_pipeline, bm25_index):
        internal = mock_pipeline.run_internal_branch(Q1)
        external = mock_pipeline.run_external_branch(Q1, bm25_index.search(Q1.text, 2))
        decision = mock_pipeline.run_decision(Q1, internal, external)
        assert decision.answer == "Paris"
        assert decision.cot == "both sources agree on Paris"

    def test_decision_fallback_recorded(self, bm25_index):
        rules = [
            MockRule(match="Please provide background", response="### Background: b."),
            MockRule(match="generate a summary", response="### Summary: s."),
            MockRule(match="choose the best prediction", response="no markers at all\nParis"),
            MockRule(match="capital of France", response="Paris"),
        ]
        pipeline = make_pipeline(bm25_index, rules=rules)
        record = pipeline.run_cocoa_zero(Q1)
        assert record.decision.answer == "Paris"
        assert ("decision", "fallback") in record.meta.parse_modes

    def test_empty_decision_output_fails_query(self, bm25_index):
        rules = [
            MockRule(match="Please provide background", response="### Background: b."),
            MockRule(match="generate a summary", response="### Summary: s."),
            MockRule(match="choose the best prediction", response=""),
            MockRule(match="capital of France", response="Paris"),
        ]
        pipeline = make_pipeline(bm25_index, rules=rules)
        record = pipeline.run_cocoa_zero(Q1)
        assert record.meta.failed
        assert "decision" in record.meta.error


class TestTranscriptShapes:
    @pytest.mark.parametrize("variant", list(VariantId))
    def test_transcript_count_matches_contract(self, bm25_index, variant):
        pipeline = make_pipeline(bm25_index, variant=variant)
        record = pipeline.run_variant(Q1, variant)
        assert not record.meta.failed, record.meta.error
        assert len(record.transcripts) == EXPECTED_TRANSCRIPT_COUNTS[variant]
        assert validate_record(record) == []

    def test_cocoa_zero_stage_order(self, mock_pipeline):
        record = mock_pipeline.run_cocoa_zero(Q1)
        assert [t.stage for t in record.transcripts] == [
            "internal_candidate",
            "internal_induction",
            "external_candidate",
            "external_induction",
            "decision",
        ]

    def test_decision_prompt_embeds_all_four_components(self, mock_pipeline):
        record = mock_pipeline.run_cocoa_zero(Q1)
        decision_prompt = record.transcripts[-1].prompt
        for text in (
            record.internal.candidate.text,
            record.internal.induction.text,
            record.external.candidate.text,
            record.external.induction.text,
        ):
            assert text in decision_prompt

    def test_no_internal_has_no_internal_anywhere(self, bm25_index):
        record = make_pipeline(bm25_index).run_variant(Q1, VariantId.NO_INTERNAL)
        assert record.internal is None
        assert [t.stage for t in record.transcripts] == ["external_candidate", "external_induction", "decision"]
        assert "Internal" not in record.transcripts[-1].prompt

    def test_no_external_skips_retrieval(self, bm25_index):
        record = make_pipeline(bm25_index).run_variant(Q1, VariantId.NO_EXTERNAL)
        assert record.external is None
        assert record.retrieved == ()

    def test_no_think_decision_prompt_has_no_thinking_line(self, bm25_index):
        record = make_pipeline(bm25_index).run_variant(Q1, VariantId.NO_THINK)
        assert "Thingking" not in record.transcripts[-1].prompt

    def test_zero_shot_single_transcript_no_retrieval(self, bm25_index):
        record = make_pipeline(bm25_index).run_variant(Q1, VariantId.ZERO_SHOT)
        assert len(record.transcripts) == 1
        assert record.retrieved == ()
        assert record.decision.answer == "Paris"

    def test_merge_prompt_has_k_plus_one_passages(self, bm25_index):
        record = make_pipeline(bm25_index, k=2).run_variant(Q1, VariantId.MERGE)
        answer_prompt = record.transcripts[-1].prompt
        assert "Passage #3" in answer_prompt  # k=2 retrieved + 1 generated
        assert "Passage #4" not in answer_prompt
        assert record.internal.induction.text in answer_prompt

    def test_unified_sections_mapped(self, bm25_index):
        record = make_pipeline(bm25_index).run_variant(Q1, VariantId.UNIFIED)
        assert record.internal.candidate is None
        assert record.internal.induction.text == "France's capital is Paris."
        assert record.external.induction.text == "Passages agree: Paris."
        assert record.decision.cot == "consistent"
        assert record.decision.answer == "Paris"

    def test_unified_missing_thinking_flagged(self, bm25_index):
        rules = [
            MockRule(
                match="your background based on your knowledge",
                response="<Internal>\nbg\n<\\\\Internal>\n<External>\nsum\n<\\\\External>\n<Answer>\nParis<\\\\Answer>",
            )
        ]
        record = make_pipeline(bm25_index, rules=rules).run_variant(Q1, VariantId.UNIFIED)
        assert not record.meta.failed
        assert "unified_missing_thinking" in record.meta.flags
        assert record.decision.cot == ""

    def test_unified_fallback_answer_flagged(self, bm25_index):
        rules = [
            MockRule(match="your background based on your knowledge", response="No tags.\nParis")
        ]
        record = make_pipeline(bm25_index, rules=rules).run_variant(Q1, VariantId.UNIFIED)
        assert record.decision.answer == "Paris"
        assert "unified_fallback_answer" in record.meta.flags

    def test_cot_keeps_reasoning_prefix(self, bm25_index):
        rules = [MockRule(match="Please think step by step", response="Step 1: recall geography.\nStep 2: conclude.\nParis")]
        record = make_pipeline(bm25_index, rules=rules).run_variant(Q1, VariantId.COT)
        assert record.decision.answer == "Paris"
        assert record.decision.cot == "Step 1: recall geography.\nStep 2: conclude."


class TestDeterminismAndConcurrency:
    def test_two_runs_identical_except_timing(self, bm25_index):
        pipeline = make_pipeline(bm25_index)
        a = pipeline.run_cocoa_zero(Q1)
        b = pipeline.run_cocoa_zero(Q1)
        assert encode_record(a, include_timing=False) == encode_record(b, include_timing=False)
        assert a.meta.elapsed_s != 0.0

    def test_branch_concurrency_does_not_change_records(self, bm25_index):
        seq = make_pipeline(bm25_index, stage_branches_concurrent=False).run_cocoa_zero(Q1)
        par = make_pipeline(bm25_index, stage_branches_concurrent=True).run_cocoa_zero(Q1)
        assert encode_record(seq, include_timing=False) == encode_record(par, include_timing=False)

    def test_batch_preserves_order_and_matches_sequential(self, bm25_index):
        queries = [Query(id=f"q{i}", text=QUERIES[i % 3].text, gold_answers=("x",)) for i in range(12)]
        sequential = make_pipeline(bm25_index, concurrency_limit=1).run_batch(queries)
        concurrent = make_pipeline(bm25_index, concurrency_limit=4).run_batch(queries)
        assert [r.query.id for r in concurrent] == [q.id for q in queries]
        assert [encode_record(r, include_timing=False) for r in sequential] == [
            encode_record(r, include_timing=False) for r in concurrent
        ]

    def test_batch_with_one_failure_keeps_going(self, bm25_index):
        # q_bad matches no rule -> its record fails, the other 9 succeed
        queries = [Query(id=f"q{i}", text=Q1.text, gold_answers=("Paris",)) for i in range(9)]
        queries.insert(4, Query(id="q_bad", text="unanswerable mystery prompt", gold_answers=("?",)))
        records = make_pipeline(bm25_index).run_batch(queries)
        assert len(records) == 10
        failed = [r for r in records if r.meta.failed]
        assert len(failed) == 1
        assert failed[0].query.id == "q_bad"
        assert all(r.decision.answer == "Paris" for r in records if not r.meta.failed)

    def test_retrieval_required_variants_fail_without_retriever(self):
        pipeline = Pipeline(MockBackend(MockScript(list(MOCK_RULES))), retriever=None)
        record = pipeline.run_cocoa_zero(Q1)
        assert record.meta.failed
        assert "retrieve" in record.meta.error

    def test_no_retriever_is_fine_for_zero_shot(self):
        pipeline = Pipeline(MockBackend(MockScript(list(MOCK_RULES))), retriever=None)
        record = pipeline.run_variant(Q1, VariantId.ZERO_SHOT)
        assert not record.meta.failed

    def test_per_role_backend_override(self, bm25_index):
        decision_only = MockBackend(
            MockScript([MockRule(match="choose the best prediction",
                                 response="### Thinking: other model\n### Short Answer: Paris")])
        )
        pipeline = Pipeline(
            MockBackend(MockScript(list(MOCK_RULES))),
            retriever=bm25_index,
            config=PipelineConfig(k=2),
            role_backends={"decision_agent": decision_only},
        )
        record = pipeline.run_cocoa_zero(Q1)
        assert not record.meta.failed
        assert record.decision.cot == "other model"


class TestConfigValidation:
    def test_k_must_be_positive(self):
        with pytest.raises(ValueError, match="k must be"):
            PipelineConfig(k=0)

    def test_concurrency_must_be_positive(self):
        with pytest.raises(ValueError, match="concurrency_limit"):
            PipelineConfig(concurrency_limit=0)
