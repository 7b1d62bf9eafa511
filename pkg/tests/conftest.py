from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from cocoa.corpus import CorpusStore
from cocoa.generation import MockBackend, MockRule, MockScript
from cocoa.pipeline import Pipeline, PipelineConfig
from cocoa.retrieval import BM25Index
from cocoa.types import Query, VariantId

CORPUS_ROWS = [
    {"id": "p1", "title": "France", "text": "Paris is the capital and largest city of France."},
    {"id": "p2", "title": "Banana bread", "text": "Banana bread is a sweet cake made from mashed bananas."},
    {"id": "p3", "title": "Car", "text": "A car is powered by an engine, most often internal combustion."},
    {"id": "p4", "title": "Germany", "text": "Berlin is the capital of Germany."},
]

QUERIES = [
    Query(id="q1", text="What is the capital of France?", gold_answers=("Paris",)),
    Query(id="q2", text="Which fruit is used in banana bread?", gold_answers=("banana",)),
    Query(id="q3", text="What powers a car?", gold_answers=("engine",)),
]

# One rule block per question: induction/summary/decision rules first
# (matched by their instruction anchors plus the question), then a bare
# question rule that answers the candidate/zero-shot/RAG prompts.
# q2's bare answer is wrong on purpose (zero-shot misses, pipeline decides
# right); q3's decision is wrong on purpose (exercises the SFT filter and
# the "Thingking" spelling).
MOCK_RULES = [
    MockRule(match=r"(?s)Please provide background.*capital of France", pattern=True,
             response="### Background: France is a European country whose capital is Paris."),
    MockRule(match=r"(?s)generate a summary that meets.*capital of France", pattern=True,
             response="### Summary: The passages say Paris is the capital of France."),
    MockRule(match=r"(?s)choose the best prediction.*capital of France", pattern=True,
             response="### Thinking: both sources agree on Paris\n### Short Answer: Paris"),
    MockRule(match=r"(?s)1. First, provide background.*capital of France", pattern=True,
             response="<Internal>\nFrance's capital is Paris.\n<\\\\Internal>\n<External>\nPassages agree: Paris.\n<\\\\External>\n<Thinking>\nconsistent\n<\\\\Thinking>\n<Answer>\nParis<\\\\Answer>"),
    MockRule(match="capital of France", response="Paris"),

    MockRule(match=r"(?s)Please provide background.*banana bread", pattern=True,
             response="### Background: Banana bread is made with ripe bananas."),
    MockRule(match=r"(?s)generate a summary that meets.*banana bread", pattern=True,
             response="### Summary: The recipe passages use mashed bananas."),
    MockRule(match=r"(?s)choose the best prediction.*banana bread", pattern=True,
             response="### Thinking: the passages name bananas\n### Short Answer: banana"),
    MockRule(match=r"(?s)1. First, provide background.*banana bread", pattern=True,
             response="<Internal>\nBread from bananas.\n<\\\\Internal>\n<External>\nMashed bananas.\n<\\\\External>\n<Thinking>\nclear\n<\\\\Thinking>\n<Answer>\nbanana<\\\\Answer>"),
    MockRule(match="banana bread", response="apple"),

    MockRule(match=r"(?s)Please provide background.*powers a car", pattern=True,
             response="### Background: Cars are powered by engines."),
    MockRule(match=r"(?s)generate a summary that meets.*powers a car", pattern=True,
             response="### Summary: The passages describe internal combustion engines."),
    MockRule(match=r"(?s)choose the best prediction.*powers a car", pattern=True,
             response="### Thingking: let me think\n### Short Answer: wheels"),
    MockRule(match=r"(?s)1. First, provide background.*powers a car", pattern=True,
             response="<Internal>\nEngines.\n<\\\\Internal>\n<External>\nCombustion.\n<\\\\External>\n<Thinking>\nhmm\n<\\\\Thinking>\n<Answer>\nwheels<\\\\Answer>"),
    MockRule(match="powers a car", response="wheels"),
]


def write_corpus_file(path: Path, rows=None) -> Path:
    rows = rows if rows is not None else CORPUS_ROWS
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")
    return path


def write_queries_file(path: Path, queries=None) -> Path:
    queries = queries if queries is not None else QUERIES
    lines = [
        json.dumps({"id": q.id, "text": q.text, "gold_answers": list(q.gold_answers)})
        for q in queries
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_mock_script_file(path: Path, rules=None) -> Path:
    rules = rules if rules is not None else MOCK_RULES
    lines = [
        json.dumps({"match": r.match, "pattern": r.pattern, "response": r.response})
        for r in rules
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def corpus_store(tmp_path) -> CorpusStore:
    src = write_corpus_file(tmp_path / "corpus.jsonl")
    return CorpusStore.ingest(src, "jsonl", tmp_path / "store")


@pytest.fixture
def bm25_index(corpus_store) -> BM25Index:
    return BM25Index(corpus_store)


def make_pipeline(index, rules=None, **config_kwargs) -> Pipeline:
    rules = rules if rules is not None else MOCK_RULES
    defaults = {"k": 2, "variant": VariantId.COCOA_ZERO}
    defaults.update(config_kwargs)
    return Pipeline(MockBackend(MockScript(list(rules))), retriever=index, config=PipelineConfig(**defaults))


@pytest.fixture
def mock_pipeline(bm25_index) -> Pipeline:
    return make_pipeline(bm25_index)


class _JsonHandler(BaseHTTPRequestHandler):
    """POST handler whose behaviour is injected via server attributes."""

    def do_POST(self):  # noqa: N802 - http.server API
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length) or b"{}")
        self.server.last_headers = dict(self.headers)  # type: ignore[attr-defined]
        status, payload = self.server.respond(body, self.path)  # type: ignore[attr-defined]
        raw = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def log_message(self, *args):  # silence test output
        pass


class LocalServer:
    def __init__(self, respond):
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), _JsonHandler)
        self._server.respond = respond  # type: ignore[attr-defined]
        self._server.last_headers = {}  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        self.url = f"http://127.0.0.1:{self._server.server_address[1]}"

    @property
    def last_headers(self) -> dict:
        return self._server.last_headers  # type: ignore[attr-defined]

    def close(self):
        self._server.shutdown()
        self._server.server_close()


@pytest.fixture
def local_server_factory():
    servers: list[LocalServer] = []

    def start(respond) -> LocalServer:
        server = LocalServer(respond)
        servers.append(server)
        return server

    yield start
    for s in servers:
        s.close()
