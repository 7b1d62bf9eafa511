"""Run the two-stage pipeline and its ablations against a scripted mock.

The mock generator answers each stage by matching on the rendered prompt,
so the whole run is offline and reproducible byte for byte.
"""
import json
import tempfile
from pathlib import Path

from cocoa import (
    BM25Index,
    CorpusStore,
    EXPECTED_TRANSCRIPT_COUNTS,
    MockBackend,
    Pipeline,
    PipelineConfig,
    Query,
    VariantId,
    validate_record,
)
from cocoa.generation import MockRule, MockScript

workdir = Path(tempfile.mkdtemp(prefix="cocoa_demo_"))
rows = [
    {"id": "p1", "title": "France", "text": "Paris is the capital and largest city of France."},
    {"id": "p2", "title": "Germany", "text": "Berlin is the capital of Germany."},
]
(workdir / "corpus.jsonl").write_text("\n".join(json.dumps(r) for r in rows) + "\n")
store = CorpusStore.ingest(workdir / "corpus.jsonl", "jsonl", workdir / "store")

rules = [
    MockRule(match="Please provide background",
             response="### Background: France is a European country whose capital is Paris."),
    MockRule(match="generate a summary that meets",
             response="### Summary: The passages confirm Paris is the capital."),
    MockRule(match="choose the best prediction",
             response="### Thinking: internal and external agree\n### Short Answer: Paris"),
    MockRule(match="1. First, provide background", pattern=False,
             response="<Internal>\nParis is the capital.\n<\\\\Internal>\n<External>\nPassages agree.\n"
                      "<\\\\External>\n<Thinking>\nconsistent\n<\\\\Thinking>\n<Answer>\nParis<\\\\Answer>"),
    MockRule(match="capital of France", response="Paris"),
]

pipeline = Pipeline(
    MockBackend(MockScript(rules)),
    retriever=BM25Index(store),
    config=PipelineConfig(k=2),
)
query = Query(id="q1", text="What is the capital of France?", gold_answers=("Paris",))

record = pipeline.run_cocoa_zero(query)
print("stages executed:", [t.stage for t in record.transcripts])
print("internal candidate:", record.internal.candidate.text)
print("internal knowledge:", record.internal.induction.text)
print("external knowledge:", record.external.induction.text)
print("reasoning:", record.decision.cot)
print("final answer:", record.decision.answer)
print("record violations:", validate_record(record))
print()

print(f"{'variant':<14} calls")
for variant in VariantId:
    rec = pipeline.run_variant(query, variant)
    marker = "" if len(rec.transcripts) == EXPECTED_TRANSCRIPT_COUNTS[variant] else "  <- unexpected"
    print(f"{variant.value:<14} {len(rec.transcripts)}{marker}")
