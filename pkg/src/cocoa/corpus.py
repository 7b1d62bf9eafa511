"""Ingest, persist, and serve the retrieval corpus.

Accepts the two dominant public corpus layouts: JSONL rows with
id/title/text fields, or TSV rows laid out as id<TAB>text<TAB>title.
A corpus is immutable once ingested; updates require re-ingest.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from .types import Passage, encode_passage

_META_NAME = "meta.json"
_DATA_NAME = "passages.jsonl"

FORMATS = ("jsonl", "tsv")


class CorpusError(ValueError):
    pass


class MalformedRowError(CorpusError):
    def __init__(self, line_no: int, detail: str):
        super().__init__(f"line {line_no}: {detail}")
        self.line_no = line_no


class DuplicateIdError(CorpusError):
    def __init__(self, passage_id: str, line_no: int):
        super().__init__(f"line {line_no}: duplicate passage id {passage_id!r}")
        self.passage_id = passage_id


class PassageNotFoundError(KeyError):
    pass


@dataclass(frozen=True)
class CorpusHandle:
    passage_count: int
    storage_path: Path
    checksum: str


def _parse_jsonl_row(line: str, line_no: int) -> Passage:
    try:
        row = json.loads(line)
    except json.JSONDecodeError as e:
        raise MalformedRowError(line_no, f"invalid JSON ({e.msg})") from None
    if not isinstance(row, dict):
        raise MalformedRowError(line_no, "row is not a JSON object")
    if "id" not in row or "text" not in row:
        raise MalformedRowError(line_no, "missing required field 'id' or 'text'")
    pid, text = row["id"], row["text"]
    title = row.get("title", "")
    if not isinstance(pid, str) or not isinstance(text, str) or not isinstance(title, str):
        raise MalformedRowError(line_no, "id/title/text must be strings")
    if not text:
        raise MalformedRowError(line_no, "empty text")
    return Passage(id=pid, title=title, text=text)


def _parse_tsv_row(line: str, line_no: int) -> Passage:
    cols = line.split("\t")
    if len(cols) != 3:
        raise MalformedRowError(line_no, f"expected 3 tab-separated columns, got {len(cols)}")
    pid, text, title = cols
    if not pid:
        raise MalformedRowError(line_no, "empty id")
    if not text:
        raise MalformedRowError(line_no, "empty text")
    return Passage(id=pid, title=title, text=text)


def _corpus_checksum(passages: list[Passage]) -> str:
    h = hashlib.sha256()
    for p in passages:
        h.update(encode_passage(p).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


class CorpusStore:
    """Frozen passage collection with id lookup and stable iteration order."""

    def __init__(self, passages: list[Passage], storage_path: Path, checksum: str):
        self._passages = list(passages)
        self._by_id = {p.id: p for p in passages}
        self._storage_path = Path(storage_path)
        self._checksum = checksum

    @classmethod
    def ingest(cls, path: str | Path, fmt: str, storage_dir: str | Path) -> "CorpusStore":
        """Parse `path` as `fmt`, persist under `storage_dir`, return the open store."""
        if fmt not in FORMATS:
            raise CorpusError(f"unknown corpus format {fmt!r} (expected one of {FORMATS})")
        path = Path(path)
        if not path.exists():
            raise CorpusError(f"corpus file not found: {path}")
        parse = _parse_jsonl_row if fmt == "jsonl" else _parse_tsv_row

        passages: list[Passage] = []
        seen: set[str] = set()
        with open(path, encoding="utf-8", newline="") as fh:
            for line_no, raw in enumerate(fh, start=1):
                line = raw.rstrip("\r\n")
                if not line:
                    continue
                p = parse(line, line_no)
                if p.id in seen:
                    raise DuplicateIdError(p.id, line_no)
                seen.add(p.id)
                passages.append(p)
        if not passages:
            raise CorpusError(f"corpus file {path} contains no passages")

        checksum = _corpus_checksum(passages)
        storage_dir = Path(storage_dir)
        storage_dir.mkdir(parents=True, exist_ok=True)
        with open(storage_dir / _DATA_NAME, "w", encoding="utf-8") as out:
            for p in passages:
                out.write(encode_passage(p))
                out.write("\n")
        meta = {"passage_count": len(passages), "checksum": checksum}
        (storage_dir / _META_NAME).write_text(json.dumps(meta, indent=2), encoding="utf-8")
        return cls(passages, storage_dir, checksum)

    @classmethod
    def open(cls, storage_dir: str | Path) -> "CorpusStore":
        """Open a previously ingested store, verifying its checksum."""
        storage_dir = Path(storage_dir)
        meta_path = storage_dir / _META_NAME
        data_path = storage_dir / _DATA_NAME
        if not meta_path.exists() or not data_path.exists():
            raise CorpusError(f"no corpus store at {storage_dir}")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        passages = []
        with open(data_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line:
                    row = json.loads(line)
                    passages.append(Passage(id=row["id"], title=row["title"], text=row["text"]))
        checksum = _corpus_checksum(passages)
        if checksum != meta["checksum"]:
            raise CorpusError(
                f"corpus store {storage_dir} is corrupt: checksum mismatch "
                f"({checksum[:12]} != {meta['checksum'][:12]})"
            )
        return cls(passages, storage_dir, checksum)

    @property
    def handle(self) -> CorpusHandle:
        return CorpusHandle(
            passage_count=len(self._passages),
            storage_path=self._storage_path,
            checksum=self._checksum,
        )

    @property
    def checksum(self) -> str:
        return self._checksum

    def get(self, passage_id: str) -> Passage:
        try:
            return self._by_id[passage_id]
        except KeyError:
            raise PassageNotFoundError(passage_id) from None

    def __len__(self) -> int:
        return len(self._passages)

    def __iter__(self) -> Iterator[Passage]:
        return iter(self._passages)


def ingest_corpus(path: str | Path, fmt: str, storage_dir: str | Path) -> CorpusHandle:
    """Ingest and return the handle only (store reopened on demand)."""
    return CorpusStore.ingest(path, fmt, storage_dir).handle


def get_passage(store: CorpusStore, passage_id: str) -> Passage:
    return store.get(passage_id)
