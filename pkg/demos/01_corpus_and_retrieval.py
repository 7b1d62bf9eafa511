"""Build a tiny corpus, index it, and run lexical top-k retrieval."""
import json
import tempfile
from pathlib import Path

from cocoa import BM25Index, CorpusStore

workdir = Path(tempfile.mkdtemp(prefix="cocoa_demo_"))

rows = [
    {"id": "p1", "title": "France", "text": "Paris is the capital and largest city of France."},
    {"id": "p2", "title": "Baking", "text": "Banana bread is a sweet cake made from mashed bananas."},
    {"id": "p3", "title": "Engines", "text": "A car is powered by an engine, most often internal combustion."},
    {"id": "p4", "title": "Germany", "text": "Berlin is the capital of Germany."},
]
corpus_file = workdir / "corpus.jsonl"
corpus_file.write_text("\n".join(json.dumps(r) for r in rows) + "\n")

store = CorpusStore.ingest(corpus_file, "jsonl", workdir / "store")
print(f"ingested {len(store)} passages, checksum {store.checksum[:12]}")

index = BM25Index(store, k1=1.2, b=0.75)
print(f"index: {index.doc_count} docs, avg length {index.avg_doc_len:.2f} tokens\n")

for query in ("capital of France", "banana", "what powers a car"):
    ranked = index.search(query, k=2)
    print(f"query: {query!r}")
    for passage, score in ranked.items:
        print(f"  {score:6.3f}  {passage.id}  {passage.text[:60]}")
    print()

# Re-running the same search returns the identical ranking: ties are broken
# by passage id, so results never depend on iteration order.
again = index.search("capital of France", k=2)
assert [p.id for p in again.passages()] == [p.id for p in index.search("capital of France", k=2).passages()]
print("rankings are deterministic")
