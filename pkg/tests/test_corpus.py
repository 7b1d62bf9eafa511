from __future__ import annotations

import json

import pytest

from cocoa.corpus import (
    CorpusError,
    CorpusStore,
    DuplicateIdError,
    MalformedRowError,
    PassageNotFoundError,
    ingest_corpus,
)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestIngestJsonl:
    def test_three_valid_rows(self, tmp_path):
        src = write(
            tmp_path / "c.jsonl",
            '{"id":"p1","title":"A","text":"first"}\n'
            '{"id":"p2","title":"","text":"second"}\n'
            '{"id":"p3","title":"C","text":"third"}\n',
        )
        handle = ingest_corpus(src, "jsonl", tmp_path / "store")
        assert handle.passage_count == 3
        assert handle.checksum

    def test_duplicate_id_names_the_id(self, tmp_path):
        src = write(
            tmp_path / "c.jsonl",
            '{"id":"p1","title":"","text":"a"}\n{"id":"p1","title":"","text":"b"}\n',
        )
        with pytest.raises(DuplicateIdError, match="'p1'"):
            CorpusStore.ingest(src, "jsonl", tmp_path / "store")

    def test_malformed_row_names_line(self, tmp_path):
        src = write(tmp_path / "c.jsonl", '{"id":"p1","title":"","text":"a"}\n{oops\n')
        with pytest.raises(MalformedRowError, match="line 2"):
            CorpusStore.ingest(src, "jsonl", tmp_path / "store")

    def test_missing_text_field(self, tmp_path):
        src = write(tmp_path / "c.jsonl", '{"id":"p1","title":"t"}\n')
        with pytest.raises(MalformedRowError, match="line 1"):
            CorpusStore.ingest(src, "jsonl", tmp_path / "store")

    def test_empty_file(self, tmp_path):
        src = write(tmp_path / "c.jsonl", "")
        with pytest.raises(CorpusError, match="no passages"):
            CorpusStore.ingest(src, "jsonl", tmp_path / "store")

    def test_missing_file(self, tmp_path):
        with pytest.raises(CorpusError, match="not found"):
            CorpusStore.ingest(tmp_path / "absent.jsonl", "jsonl", tmp_path / "store")

    def test_unknown_format(self, tmp_path):
        src = write(tmp_path / "c.jsonl", '{"id":"p1","title":"","text":"a"}\n')
        with pytest.raises(CorpusError, match="unknown corpus format"):
            CorpusStore.ingest(src, "csv", tmp_path / "store")


class TestIngestTsv:
    def test_valid_rows(self, tmp_path):
        src = write(tmp_path / "c.tsv", "p1\tfirst text\tTitle A\np2\tsecond text\t\n")
        store = CorpusStore.ingest(src, "tsv", tmp_path / "store")
        assert len(store) == 2
        assert store.get("p1").title == "Title A"
        assert store.get("p2").title == ""

    def test_two_columns_is_malformed(self, tmp_path):
        src = write(tmp_path / "c.tsv", "p1\tonly text\n")
        with pytest.raises(MalformedRowError, match="line 1"):
            CorpusStore.ingest(src, "tsv", tmp_path / "store")

    def test_empty_text_is_malformed(self, tmp_path):
        src = write(tmp_path / "c.tsv", "p1\t\ttitle\n")
        with pytest.raises(MalformedRowError, match="empty text"):
            CorpusStore.ingest(src, "tsv", tmp_path / "store")


class TestRoundTrip:
    def test_get_is_byte_identical(self, tmp_path):
        text = "Text with  double spaces, trailing spaces  \tand a tab."
        src = write(tmp_path / "c.jsonl", json.dumps({"id": "p1", "title": "T", "text": text}) + "\n")
        store = CorpusStore.ingest(src, "jsonl", tmp_path / "store")
        assert store.get("p1").text == text

    def test_unknown_id(self, tmp_path):
        src = write(tmp_path / "c.jsonl", '{"id":"p1","title":"","text":"a"}\n')
        store = CorpusStore.ingest(src, "jsonl", tmp_path / "store")
        with pytest.raises(PassageNotFoundError):
            store.get("missing")

    def test_thousand_rows_round_trip(self, tmp_path):
        # derived oracle: generate programmatically, then compare every row
        rows = [
            {"id": f"p{i:04d}", "title": f"title {i}", "text": f"body text number {i} with filler"}
            for i in range(1000)
        ]
        src = write(tmp_path / "c.jsonl", "\n".join(json.dumps(r) for r in rows) + "\n")
        store = CorpusStore.ingest(src, "jsonl", tmp_path / "store")
        assert len(store) == 1000
        for r in rows:
            p = store.get(r["id"])
            assert (p.id, p.title, p.text) == (r["id"], r["title"], r["text"])


class TestDeterminismAndPersistence:
    def test_same_input_same_checksum(self, tmp_path):
        body = '{"id":"p1","title":"","text":"a"}\n{"id":"p2","title":"","text":"b"}\n'
        s1 = CorpusStore.ingest(write(tmp_path / "c1.jsonl", body), "jsonl", tmp_path / "s1")
        s2 = CorpusStore.ingest(write(tmp_path / "c2.jsonl", body), "jsonl", tmp_path / "s2")
        assert s1.checksum == s2.checksum
        assert [p.id for p in s1] == [p.id for p in s2]

    def test_reopen_preserves_checksum_and_order(self, tmp_path):
        body = '{"id":"pz","title":"","text":"z"}\n{"id":"pa","title":"","text":"a"}\n'
        ingested = CorpusStore.ingest(write(tmp_path / "c.jsonl", body), "jsonl", tmp_path / "store")
        reopened = CorpusStore.open(tmp_path / "store")
        assert reopened.checksum == ingested.checksum
        assert [p.id for p in reopened] == ["pz", "pa"]  # file order, not sorted

    def test_open_detects_corruption(self, tmp_path):
        body = '{"id":"p1","title":"","text":"a"}\n'
        CorpusStore.ingest(write(tmp_path / "c.jsonl", body), "jsonl", tmp_path / "store")
        data = tmp_path / "store" / "passages.jsonl"
        data.write_text('{"id":"p1","title":"","text":"tampered"}\n', encoding="utf-8")
        with pytest.raises(CorpusError, match="checksum mismatch"):
            CorpusStore.open(tmp_path / "store")

    def test_open_missing_store(self, tmp_path):
        with pytest.raises(CorpusError, match="no corpus store"):
            CorpusStore.open(tmp_path / "nowhere")
