"""Command-line surface: ingest, index, run, eval, sweep-k, synthesize,
verify-losses.

Runs are configured by flags, by a JSON config file, or both (flags win).
Every run writes its resolved configuration beside its outputs so the
exact experiment can be replayed from that file alone.

Exit codes: 0 success, 1 partial failures (or failed verification),
2 configuration errors.
"""
from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .corpus import CorpusError, CorpusStore
from .generation import MockBackend, RemoteBackend, load_mock_script
from .losslab import run_verification
from .metrics import EvalError, evaluate_run, format_report_text, round2, write_report
from .pipeline import Pipeline, PipelineConfig, RETRIEVAL_VARIANTS
from .retrieval import BM25Index, RemoteRetriever, RetrievalError
from .synthesis import DpoSample, Rejection, SftSample, build_dpo_sample, build_sft_sample, export_dataset, write_manifest
from .types import PipelineRecord, Query, VariantId, decode_record, encode_record

DEFAULT_SWEEP_KS = (1, 3, 5, 10, 15, 20)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: str = ""
    out_dir: str = ""
    variant: str = "cocoa_zero"
    k: int = 5
    corpus_store: str | None = None
    retriever: str = "local_bm25"  # local_bm25 | remote
    retriever_endpoint: str | None = None
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    generator: str | None = None  # mock | remote
    generator_endpoint: str | None = None
    mock_script: str | None = None
    mock_strict: bool = False
    model_name: str = "default"
    temperature: float = 0.0
    max_tokens: int = 1024
    unified_max_tokens: int = 2048
    concurrency_limit: int = 4
    branches_concurrent: bool = True
    task_instruction: str | None = None
    seed: str = "default"
    include_timing: bool = False


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {p} is not valid JSON: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"config file {p} has unknown keys: {unknown}")
    return data


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """Merge config file and flags (flags win), then validate."""
    merged = _load_config_file(getattr(args, "config", None))
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            merged[f.name] = value
    cfg = RunConfig(**merged)

    if not cfg.dataset:
        raise ConfigError("a dataset path is required (--dataset)")
    if not Path(cfg.dataset).exists():
        raise ConfigError(f"dataset not found: {cfg.dataset}")
    if not cfg.out_dir:
        raise ConfigError("an output directory is required (--out-dir)")
    try:
        variant = VariantId.parse(cfg.variant)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if cfg.k < 1:
        raise ConfigError(f"k must be >= 1, got {cfg.k}")
    if cfg.concurrency_limit < 1:
        raise ConfigError(f"concurrency_limit must be >= 1, got {cfg.concurrency_limit}")

    backends = [b for b in (("mock" if cfg.mock_script else None), ("remote" if cfg.generator_endpoint else None)) if b]
    if cfg.generator is None:
        if len(backends) != 1:
            raise ConfigError("exactly one generator backend required: --mock-script or --generator-endpoint")
        cfg.generator = backends[0]
    if cfg.generator == "mock":
        if not cfg.mock_script:
            raise ConfigError("generator 'mock' needs --mock-script")
        if not Path(cfg.mock_script).exists():
            raise ConfigError(f"mock script not found: {cfg.mock_script}")
    elif cfg.generator == "remote":
        if not cfg.generator_endpoint:
            raise ConfigError("generator 'remote' needs --generator-endpoint")
    else:
        raise ConfigError(f"unknown generator backend {cfg.generator!r}")

    if variant in RETRIEVAL_VARIANTS:
        if cfg.retriever == "local_bm25":
            if not cfg.corpus_store:
                raise ConfigError(f"variant {variant.value} needs --corpus-store with the local retriever")
            if not Path(cfg.corpus_store).exists():
                raise ConfigError(f"corpus store not found: {cfg.corpus_store}")
        elif cfg.retriever == "remote":
            if not cfg.retriever_endpoint:
                raise ConfigError("remote retriever needs --retriever-endpoint")
        else:
            raise ConfigError(f"unknown retriever {cfg.retriever!r}")
    return cfg


def make_pipeline(cfg: RunConfig) -> Pipeline:
    if cfg.generator == "mock":
        backend = MockBackend(load_mock_script(cfg.mock_script, strict_sequence=cfg.mock_strict))
    else:
        backend = RemoteBackend(cfg.generator_endpoint)

    variant = VariantId.parse(cfg.variant)
    retriever = None
    if variant in RETRIEVAL_VARIANTS:
        if cfg.retriever == "local_bm25":
            store = CorpusStore.open(cfg.corpus_store)
            retriever = BM25Index(store, k1=cfg.bm25_k1, b=cfg.bm25_b)
        else:
            retriever = RemoteRetriever(cfg.retriever_endpoint)

    pconfig = PipelineConfig(
        k=cfg.k,
        variant=variant,
        concurrency_limit=cfg.concurrency_limit,
        stage_branches_concurrent=cfg.branches_concurrent,
        temperature=cfg.temperature,
        max_tokens=cfg.max_tokens,
        unified_max_tokens=cfg.unified_max_tokens,
        model_name=cfg.model_name,
        task_instruction=cfg.task_instruction,
    )
    return Pipeline(backend, retriever=retriever, config=pconfig)


def load_queries(path: str | Path) -> list[Query]:
    queries = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}:{line_no}: invalid query JSON ({e.msg})") from None
            if "id" not in row or "text" not in row or not str(row["text"]).strip():
                raise ConfigError(f"{path}:{line_no}: query rows need non-empty 'id' and 'text'")
            queries.append(Query(id=str(row["id"]), text=row["text"], gold_answers=tuple(row.get("gold_answers", ()))))
    if not queries:
        raise ConfigError(f"dataset {path} holds no queries")
    return queries


def load_records(path: str | Path) -> list[PipelineRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(decode_record(line))
    if not records:
        raise ConfigError(f"records file {path} is empty")
    return records


def write_records(records: list[PipelineRecord], path: Path, include_timing: bool) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(encode_record(r, include_timing=include_timing))
            fh.write("\n")


def _freeze_config(cfg: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.json").write_text(json.dumps(asdict(cfg), indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(args: argparse.Namespace) -> int:
    store = CorpusStore.ingest(args.input, args.format, args.store)
    h = store.handle
    print(f"ingested {h.passage_count} passages -> {h.storage_path} (checksum {h.checksum[:12]})")
    return 0


def cmd_index(args: argparse.Namespace) -> int:
    store = CorpusStore.open(args.store)
    index = BM25Index(store, k1=args.k1, b=args.b)
    stats = {
        "corpus_checksum": index.corpus_checksum,
        "doc_count": index.doc_count,
        "avg_doc_len": index.avg_doc_len,
        "k1": index.k1,
        "b": index.b,
    }
    out = Path(args.out) if args.out else Path(args.store) / "index.json"
    out.write_text(json.dumps(stats, indent=2) + "\n", encoding="utf-8")
    print(f"indexed {index.doc_count} passages (avg length {index.avg_doc_len:.2f}) -> {out}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    out_dir = Path(cfg.out_dir)
    _freeze_config(cfg, out_dir)
    pipeline = make_pipeline(cfg)
    queries = load_queries(cfg.dataset)
    records = pipeline.run_batch(queries)
    write_records(records, out_dir / "records.jsonl", include_timing=cfg.include_timing)
    failures = sum(1 for r in records if r.meta.failed)
    print(f"{len(records)} records -> {out_dir / 'records.jsonl'} ({failures} failed)")
    return 1 if failures else 0


def cmd_eval(args: argparse.Namespace) -> int:
    records = load_records(args.records)
    try:
        report = evaluate_run(records, dataset_name=args.dataset_name, include_failed=not args.exclude_failed)
    except EvalError as e:
        raise ConfigError(str(e)) from None
    out_dir = Path(args.out_dir)
    write_report(report, out_dir, csv_rows=args.csv)
    print(format_report_text(report), end="")
    return 0


def cmd_sweep_k(args: argparse.Namespace) -> int:
    try:
        ks = tuple(int(v) for v in args.ks.split(",")) if args.ks else DEFAULT_SWEEP_KS
    except ValueError:
        raise ConfigError(f"--ks must be comma-separated integers, got {args.ks!r}") from None
    cfg = build_run_config(args)
    out_dir = Path(cfg.out_dir)
    _freeze_config(cfg, out_dir)
    queries = load_queries(cfg.dataset)

    table = []
    any_failed = False
    for k in ks:
        k_cfg = replace(cfg, k=k, out_dir=str(out_dir / f"k_{k}"))
        pipeline = make_pipeline(k_cfg)
        records = pipeline.run_batch(queries)
        write_records(records, Path(k_cfg.out_dir) / "records.jsonl", include_timing=cfg.include_timing)
        any_failed = any_failed or any(r.meta.failed for r in records)
        report = evaluate_run(records, dataset_name=args.dataset_name)
        table.append(
            {"k": k, "n": report.n, "em": round2(report.em_mean), "f1": round2(report.f1_mean), "avg": round2(report.avg)}
        )

    (out_dir / "sweep.json").write_text(json.dumps({"rows": table}, indent=2) + "\n", encoding="utf-8")
    lines = [f"{'k':>4} {'n':>5} {'EM':>7} {'F1':>7} {'Avg':>7}"]
    for row in table:
        lines.append(f"{row['k']:>4} {row['n']:>5} {row['em']:>7.2f} {row['f1']:>7.2f} {row['avg']:>7.2f}")
    text = "\n".join(lines) + "\n"
    (out_dir / "sweep.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 1 if any_failed else 0


def cmd_synthesize(args: argparse.Namespace) -> int:
    cocoa_records = load_records(args.records)
    zs_by_id = {}
    if args.zero_shot_records:
        zs_by_id = {r.query.id: r for r in load_records(args.zero_shot_records)}

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sft_samples: list[SftSample] = []
    dpo_samples: list[DpoSample] = []
    rejections: Counter = Counter()

    for record in cocoa_records:
        golds = record.query.gold_answers
        if not golds:
            raise ConfigError(f"query {record.query.id!r} has no gold answers; cannot filter")
        result = build_sft_sample(record, golds)
        if isinstance(result, Rejection):
            rejections[f"sft:{result.reason}"] += 1
        else:
            sft_samples.append(result)
        zs = zs_by_id.get(record.query.id)
        if zs is not None:
            pair = build_dpo_sample(zs, record, golds)
            if isinstance(pair, Rejection):
                rejections[f"dpo:{pair.reason}"] += 1
            else:
                dpo_samples.append(pair)

    if sft_samples:
        export_dataset(sft_samples, out_dir / "sft.jsonl", "sft_jsonl")
    if dpo_samples:
        export_dataset(dpo_samples, out_dir / "dpo.jsonl", "dpo_jsonl")
    write_manifest(out_dir / "manifest.json", len(sft_samples), len(dpo_samples), rejections)
    print(f"sft={len(sft_samples)} dpo={len(dpo_samples)} rejections={dict(rejections)} -> {out_dir}")
    return 0


def cmd_verify_losses(args: argparse.Namespace) -> int:
    report = run_verification(seed=args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "losses_report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    for check in report["checks"]:
        print(f"[{'PASS' if check['passed'] else 'FAIL'}] {check['name']}")
    print(f"report -> {out_dir / 'losses_report.json'}")
    return 0 if report["all_passed"] else 1


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config; flags override its values")
    p.add_argument("--dataset", help="queries JSONL: {id, text, gold_answers}")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--variant", choices=[v.value for v in VariantId])
    p.add_argument("--k", type=int)
    p.add_argument("--corpus-store", dest="corpus_store")
    p.add_argument("--retriever", choices=["local_bm25", "remote"])
    p.add_argument("--retriever-endpoint", dest="retriever_endpoint")
    p.add_argument("--bm25-k1", dest="bm25_k1", type=float)
    p.add_argument("--bm25-b", dest="bm25_b", type=float)
    p.add_argument("--generator", choices=["mock", "remote"])
    p.add_argument("--generator-endpoint", dest="generator_endpoint")
    p.add_argument("--mock-script", dest="mock_script")
    p.add_argument("--mock-strict", dest="mock_strict", action="store_const", const=True)
    p.add_argument("--model", dest="model_name")
    p.add_argument("--temperature", type=float)
    p.add_argument("--max-tokens", dest="max_tokens", type=int)
    p.add_argument("--concurrency", dest="concurrency_limit", type=int)
    p.add_argument("--sequential-branches", dest="branches_concurrent", action="store_const", const=False)
    p.add_argument("--task-instruction", dest="task_instruction")
    p.add_argument("--seed", dest="seed")
    p.add_argument("--keep-timing", dest="include_timing", action="store_const", const=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cocoa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="ingest a passage corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--format", required=True, choices=["jsonl", "tsv"])
    p.add_argument("--store", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("index", help="build the lexical index and record its stats")
    p.add_argument("--store", required=True)
    p.add_argument("--k1", type=float, default=1.2)
    p.add_argument("--b", type=float, default=0.75)
    p.add_argument("--out")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("run", help="run a pipeline variant over a query dataset")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score a records file")
    p.add_argument("--records", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--dataset-name", dest="dataset_name", default="")
    p.add_argument("--exclude-failed", action="store_true")
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-k", help="run a variant over a range of retrieval depths")
    _add_run_flags(p)
    p.add_argument("--ks", help="comma-separated depths (default 1,3,5,10,15,20)")
    p.add_argument("--dataset-name", dest="dataset_name", default="")
    p.set_defaults(func=cmd_sweep_k)

    p = sub.add_parser("synthesize", help="emit SFT/DPO training data from records")
    p.add_argument("--records", required=True, help="cocoa_zero records JSONL")
    p.add_argument("--zero-shot-records", dest="zero_shot_records", help="zero_shot records JSONL for DPO pairs")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("verify-losses", help="run the numerical verification suite")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify_losses)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CorpusError, RetrievalError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
