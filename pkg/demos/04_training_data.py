"""Turn pipeline records into long-chain SFT targets and DPO pairs."""
import tempfile
from pathlib import Path

from cocoa import (
    BranchResult,
    CandidateAnswer,
    Decision,
    DpoSample,
    InducedKnowledge,
    Passage,
    PipelineRecord,
    Query,
    Rejection,
    SftSample,
    Transcript,
    VariantId,
    build_dpo_sample,
    build_sft_sample,
    export_dataset,
)


def pipeline_record(qid, answer):
    return PipelineRecord(
        query=Query(id=qid, text="What is the capital of France?", gold_answers=("Paris",)),
        variant=VariantId.COCOA_ZERO,
        retrieved=(Passage(id="p1", title="France", text="Paris is the capital."),),
        internal=BranchResult(CandidateAnswer("Paris", "internal"),
                              InducedKnowledge("France's capital is Paris.", "internal")),
        external=BranchResult(CandidateAnswer("Paris", "external"),
                              InducedKnowledge("The passages agree on Paris.", "external")),
        decision=Decision(cot="both sources agree", answer=answer),
        transcripts=(Transcript("decision", "...", "..."),),
    )


def zero_shot(qid, answer):
    return PipelineRecord(
        query=Query(id=qid, text="What is the capital of France?", gold_answers=("Paris",)),
        variant=VariantId.ZERO_SHOT,
        decision=Decision(cot="", answer=answer),
        transcripts=(Transcript("zero_shot", "...", f"My guess is {answer}"),),
    )


good = pipeline_record("q1", "Paris")
sample = build_sft_sample(good, good.query.gold_answers)
assert isinstance(sample, SftSample)
print("SFT target (four sections, tagged):")
print(sample.target)
print()

bad = pipeline_record("q2", "London")
rejected = build_sft_sample(bad, bad.query.gold_answers)
assert isinstance(rejected, Rejection)
print(f"wrong answers are filtered out: {rejected.reason}")
print()

pair = build_dpo_sample(zero_shot("q1", "London"), good, good.query.gold_answers)
assert isinstance(pair, DpoSample)
print("DPO pair kept because zero-shot missed and the pipeline hit:")
print("  chosen  :", pair.chosen.splitlines()[-1])
print("  rejected:", pair.rejected)

workdir = Path(tempfile.mkdtemp(prefix="cocoa_demo_"))
export_dataset([sample], workdir / "sft.jsonl", "sft_jsonl")
export_dataset([pair], workdir / "dpo.jsonl", "dpo_jsonl")
print(f"\nwrote {workdir}/sft.jsonl and dpo.jsonl")
