"""Non-strict exact match, token-level F1, and report aggregation.

Normalization lowercases, deletes punctuation, drops the articles
a/an/the, and splits on whitespace. EM is containment: a prediction is
correct when some gold's token sequence appears contiguously inside the
prediction's tokens ("art" never matches inside "Carthage" because
containment is over tokens, not raw substrings). F1 is the usual
token-multiset harmonic mean, maxed over golds. Avg is the arithmetic
mean of EM and F1, reported in percent.
"""
from __future__ import annotations

import csv
import json
import string
from collections import Counter
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable

from .types import PipelineRecord

_ARTICLES = frozenset({"a", "an", "the"})
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


class EvalError(ValueError):
    pass


def normalize_answer(text: str) -> list[str]:
    """Lowercase, strip punctuation, drop articles, split into tokens."""
    tokens = text.lower().translate(_PUNCT_TABLE).split()
    return [t for t in tokens if t not in _ARTICLES]


def _contains_contiguous(haystack: list[str], needle: list[str]) -> bool:
    n = len(needle)
    return any(haystack[i : i + n] == needle for i in range(len(haystack) - n + 1))


def exact_match(prediction: str, golds: Iterable[str]) -> int:
    """1 iff any gold's normalized tokens occur contiguously in the prediction's."""
    golds = list(golds)
    if not golds:
        raise EvalError("golds must be non-empty")
    pred_tokens = normalize_answer(prediction)
    for gold in golds:
        gold_tokens = normalize_answer(gold)
        if not gold_tokens:
            continue  # a gold that normalizes away cannot be contained
        if _contains_contiguous(pred_tokens, gold_tokens):
            return 1
    return 0


def _f1_single(pred_tokens: list[str], gold_tokens: list[str]) -> float:
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def f1_score(prediction: str, golds: Iterable[str]) -> float:
    """Max over golds of token-multiset F1."""
    golds = list(golds)
    if not golds:
        raise EvalError("golds must be non-empty")
    pred_tokens = normalize_answer(prediction)
    return max(_f1_single(pred_tokens, normalize_answer(g)) for g in golds)


def label_accuracy(prediction: str, golds: Iterable[str]) -> int:
    """Strict mode for label tasks: normalized prediction equals some gold exactly."""
    golds = list(golds)
    if not golds:
        raise EvalError("golds must be non-empty")
    pred = normalize_answer(prediction)
    return int(any(pred == normalize_answer(g) and pred for g in golds))


@dataclass(frozen=True)
class EvalRow:
    query_id: str
    prediction: str
    em: int
    f1: float


@dataclass(frozen=True)
class EvalReport:
    dataset: str
    variant: str
    n: int
    em_mean: float  # percent
    f1_mean: float  # percent
    avg: float  # percent
    rows: tuple[EvalRow, ...]


def evaluate_run(
    records: list[PipelineRecord],
    dataset_name: str = "",
    include_failed: bool = True,
) -> EvalReport:
    """Score each record's final answer against its query's gold answers.

    Failed records score 0/0 and are counted unless include_failed=False.
    """
    if not records:
        raise EvalError("no records to evaluate")
    rows: list[EvalRow] = []
    for record in records:
        golds = record.query.gold_answers
        if not golds:
            raise EvalError(f"query {record.query.id!r} has no gold answers")
        if record.meta.failed or record.decision is None:
            if include_failed:
                rows.append(EvalRow(query_id=record.query.id, prediction="", em=0, f1=0.0))
            continue
        prediction = record.decision.answer
        rows.append(
            EvalRow(
                query_id=record.query.id,
                prediction=prediction,
                em=exact_match(prediction, golds),
                f1=f1_score(prediction, golds),
            )
        )
    if not rows:
        raise EvalError("all records excluded from evaluation")
    n = len(rows)
    em_mean = 100.0 * sum(r.em for r in rows) / n
    f1_mean = 100.0 * sum(r.f1 for r in rows) / n
    return EvalReport(
        dataset=dataset_name,
        variant=records[0].variant.value,
        n=n,
        em_mean=em_mean,
        f1_mean=f1_mean,
        avg=(em_mean + f1_mean) / 2.0,
        rows=tuple(rows),
    )


def round2(x: float) -> float:
    """Half-up rounding to 2 decimals, applied only when reports are serialized."""
    return float(Decimal(str(x)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def report_to_dict(report: EvalReport, with_rows: bool = True) -> dict:
    out = {
        "dataset": report.dataset,
        "variant": report.variant,
        "n": report.n,
        "em": round2(report.em_mean),
        "f1": round2(report.f1_mean),
        "avg": round2(report.avg),
    }
    if with_rows:
        out["rows"] = [
            {"query_id": r.query_id, "prediction": r.prediction, "em": r.em, "f1": round(r.f1, 6)}
            for r in report.rows
        ]
    return out


def format_report_text(report: EvalReport) -> str:
    header = f"{'dataset':<20} {'variant':<14} {'n':>5} {'EM':>7} {'F1':>7} {'Avg':>7}"
    line = (
        f"{report.dataset or '-':<20} {report.variant:<14} {report.n:>5} "
        f"{round2(report.em_mean):>7.2f} {round2(report.f1_mean):>7.2f} {round2(report.avg):>7.2f}"
    )
    return header + "\n" + line + "\n"


def write_report(report: EvalReport, out_dir: str | Path, csv_rows: bool = False) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report_to_dict(report), ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    (out_dir / "report.txt").write_text(format_report_text(report), encoding="utf-8")
    if csv_rows:
        with open(out_dir / "rows.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["query_id", "prediction", "em", "f1"])
            for r in report.rows:
                writer.writerow([r.query_id, r.prediction, r.em, f"{r.f1:.6f}"])
