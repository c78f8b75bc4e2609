"""Operator command line: ingest, chunks, index, distill, query, evaluate, serve.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Stdout is reserved
for data (``--format json`` prints a single JSON document); logs go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import chunking, corpus, distillation, evaluation, generation, retrieval
from .config import AppConfig, load_config
from .errors import AdmitragError
from .figures import render_report_figure

logger = logging.getLogger("admitrag")

USAGE_ERROR = 1
RUNTIME_ERROR = 2


class CliError(Exception):
    """Runtime failure that should exit 2 with a message on stderr."""


class UsageError(Exception):
    """Bad invocation that should exit 1 with a message on stderr."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; this tool reserves 2 for
    # runtime failures.
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _load_kb(path: str) -> corpus.KnowledgeBase:
    try:
        return corpus.KnowledgeBase.load(path)
    except AdmitragError as exc:
        raise CliError(str(exc)) from exc


def _chunk_params(args: argparse.Namespace) -> chunking.ChunkingParams:
    try:
        return chunking.ChunkingParams(chunk_size=args.chunk_size, overlap=args.overlap)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _build_generation_client(args: argparse.Namespace, config: AppConfig, model_id: str):
    if getattr(args, "script", None):
        return generation.ScriptedGenerationClient.from_file(args.script)
    endpoint = config.gen_endpoint_finetuned if model_id == config.finetuned_model_id else config.gen_endpoint_base
    if not endpoint:
        raise CliError("no generation endpoint configured; set GEN_ENDPOINT_BASE/_FINETUNED or pass --script")
    return generation.RemoteGenerationClient(endpoint=endpoint, model_id=model_id, api_key=config.gen_api_key or None)


def cmd_ingest(args: argparse.Namespace) -> int:
    if args.doc_id and len(args.files) > 1:
        raise UsageError("--doc-id only makes sense with a single input file")
    rules = corpus.load_redaction_rules(args.redaction_rules) if args.redaction_rules else []
    kb_path = Path(args.kb)
    kb = corpus.KnowledgeBase.load(kb_path) if kb_path.exists() else corpus.KnowledgeBase()
    for file_path in args.files:
        p = Path(file_path)
        if not p.exists():
            raise CliError(f"input file not found: {p}")
        raw = corpus.decode_utf8(p.read_bytes())
        doc = corpus.Document(
            doc_id=args.doc_id or p.stem,
            source_kind=args.source_kind,
            title=args.title or p.stem,
            text=raw,
            metadata={"source_path": str(p)},
        )
        revision = kb.upsert_document(doc, rules)
        logger.info("ingested %s as %s revision %d", p, doc.doc_id, revision)
    kb.save(kb_path)
    print(f"{len(args.files)} file(s) ingested into {kb_path} ({len(kb)} documents)")
    return 0


def cmd_chunks(args: argparse.Namespace) -> int:
    if args.chunks_cmd != "dump":
        raise UsageError("unknown chunks subcommand")
    kb = _load_kb(args.kb)
    doc = kb.get(args.doc)
    if doc is None:
        raise CliError(f"document {args.doc!r} not found in {args.kb}")
    params = _chunk_params(args)
    for chunk in chunking.chunk_document(doc, params):
        print(json.dumps(chunk.to_json(), ensure_ascii=False))
    return 0


def cmd_index(args: argparse.Namespace, config: AppConfig) -> int:
    kb = _load_kb(args.kb)
    params = _chunk_params(args)
    if args.provider == "remote":
        provider = retrieval.RemoteEmbeddingProvider(dim=args.dim)
    else:
        provider = retrieval.ReferenceEmbeddingProvider(dim=args.dim)
    try:
        index = retrieval.rebuild_index(kb, params, provider)
    except AdmitragError as exc:
        raise CliError(str(exc)) from exc
    index.save(args.out)
    print(f"indexed {len(index)} chunks from {len(kb)} documents -> {args.out} (watermark {index.kb_revision_watermark})")
    return 0


def cmd_distill(args: argparse.Namespace, config: AppConfig) -> int:
    kb = _load_kb(args.kb)
    if len(kb) == 0:
        raise CliError(f"knowledge base {args.kb} has no documents")
    client = _build_generation_client(args, config, config.base_model_id)
    try:
        records, report = distillation.distill_kb(
            kb.documents(),
            client,
            pairs_per_batch=args.pairs_per_batch,
            batch_size=args.batch_size,
            min_grounding=args.min_grounding,
        )
    except distillation.DistillationError as exc:
        partial = getattr(exc, "partial_records", None)
        if partial:
            distillation.write_dataset(partial, args.out)
            logger.error("job failed, wrote %d partial records to %s", len(partial), args.out)
        raise CliError(str(exc)) from exc
    distillation.write_dataset(records, args.out)
    print(json.dumps({"out": str(args.out), **report.to_json()}, ensure_ascii=False))
    return 0


def cmd_query(args: argparse.Namespace, config: AppConfig) -> int:
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    kb = _load_kb(args.kb)
    try:
        index = retrieval.VectorIndex.load(args.index)
    except AdmitragError as exc:
        raise CliError(str(exc)) from exc
    params = _chunk_params(args)
    if args.provider == "remote":
        provider = retrieval.RemoteEmbeddingProvider(dim=index.dim)
        retrieval.attach_texts(index, kb, params)
    else:
        provider = retrieval.ReferenceEmbeddingProvider(dim=index.dim)
        retrieval.attach_texts(index, kb, params, provider=provider)
    qvec = provider.embed([args.text])[0]
    hits = retrieval.search(index, qvec, args.k)
    payload: dict = {
        "query": args.text,
        "hits": [
            {"rank": h.rank, "score": round(h.score, 4), "chunk_id": h.chunk_id, "text": index.texts[h.chunk_id][:120]}
            for h in hits
        ],
    }
    draft = None
    if args.config:
        pipeline = generation.PipelineConfig.for_name(
            args.config,
            base_model_id=config.base_model_id,
            finetuned_model_id=config.finetuned_model_id,
            top_k=args.k,
        )
        model_id = config.finetuned_model_id if pipeline.name in ("finetuned_only", "finetuned_rag") else config.base_model_id
        client = _build_generation_client(args, config, model_id)
        try:
            draft = generation.run_pipeline(pipeline, args.text, index, provider, client)
        except AdmitragError as exc:
            raise CliError(str(exc)) from exc
        payload["draft"] = draft.to_json()
    if args.format == "json":
        print(json.dumps(payload, ensure_ascii=False))
    else:
        for hit in payload["hits"]:
            excerpt = hit["text"].replace("\n", " ")
            print(f"{hit['rank']:>2}  {hit['score']:.4f}  {hit['chunk_id']}  {excerpt}")
        if draft is not None:
            print(f"--- draft ({draft.config_name}) ---")
            print(draft.response_text)
    return 0


def _responses_from_dir(responses_dir: Path) -> dict[str, dict[str, str]]:
    """Per-config response maps from ``<config>.jsonl`` files of {inquiry_id, text}."""
    responses: dict[str, dict[str, str]] = {}
    for name in evaluation.CONFIG_ORDER:
        path = responses_dir / f"{name}.jsonl"
        if not path.exists():
            continue
        per_config: dict[str, str] = {}
        with path.open(encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    per_config[obj["inquiry_id"]] = obj["text"]
        responses[name] = per_config
    return responses


def cmd_evaluate(args: argparse.Namespace, config: AppConfig) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    satisfaction = evaluation.load_satisfaction(args.satisfaction) if args.satisfaction else []
    judgments = evaluation.load_judgments(args.judgments) if args.judgments else None

    if args.aggregates:
        aggregates = json.loads(Path(args.aggregates).read_text(encoding="utf-8"))
        rows = {
            name: evaluation.MetricRow(
                fact_recall_pct=row["fact_recall_pct"],
                precise_data_recall_pct=row["precise_data_recall_pct"],
                user_satisfaction_mean=row.get("user_satisfaction_mean"),
            )
            for name, row in aggregates.items()
        }
        report = evaluation.build_report(rows, benchmark_id=args.benchmark or "aggregates")
    else:
        if not args.benchmark:
            raise UsageError("--benchmark is required unless --aggregates is given")
        benchmark_path = Path(args.benchmark)
        if not benchmark_path.exists():
            raise UsageError(f"benchmark file not found: {benchmark_path}")
        benchmark = evaluation.load_benchmark(benchmark_path)
        if args.live:
            responses = _live_responses(args, config, benchmark)
        elif args.responses_dir:
            responses = _responses_from_dir(Path(args.responses_dir))
            if not responses:
                raise CliError(f"no <config>.jsonl response files found in {args.responses_dir}")
        else:
            raise UsageError("one of --responses-dir or --live is required")
        rows = {}
        for name, per_config in responses.items():
            try:
                rows[name] = evaluation.MetricRow(
                    fact_recall_pct=evaluation.fact_recall(per_config, benchmark, judgments),
                    precise_data_recall_pct=evaluation.precise_data_recall(per_config, benchmark, judgments),
                    user_satisfaction_mean=evaluation.satisfaction_mean(satisfaction, name),
                )
            except evaluation.EvaluationError as exc:
                raise CliError(f"config {name}: {exc}") from exc
        report = evaluation.build_report(rows, benchmark_id=str(args.benchmark), case_count=len(benchmark))

    csv_text = evaluation.render_csv(report)
    (out_dir / "report.csv").write_text(csv_text, encoding="utf-8")
    (out_dir / "report.md").write_text(evaluation.render_markdown(report), encoding="utf-8")
    (out_dir / "report.json").write_text(
        json.dumps(report.to_json(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    render_report_figure(report, out_dir / "report.png")
    if args.format == "json":
        print(json.dumps(report.to_json(), ensure_ascii=False))
    else:
        print(csv_text, end="")
    return 0


def _live_responses(
    args: argparse.Namespace, config: AppConfig, benchmark: list[evaluation.BenchmarkCase]
) -> dict[str, dict[str, str]]:
    """Run the requested pipelines over the benchmark against a KB + index."""
    if not args.kb or not args.index:
        raise UsageError("--live requires --kb and --index")
    kb = _load_kb(args.kb)
    index = retrieval.VectorIndex.load(args.index)
    params = _chunk_params(args)
    retrieval.attach_texts(index, kb, params)
    provider = retrieval.ReferenceEmbeddingProvider(dim=index.dim)
    config_names = evaluation.CONFIG_ORDER if args.configs == "all" else tuple(args.configs.split(","))
    responses: dict[str, dict[str, str]] = {}
    for name in config_names:
        if name not in evaluation.CONFIG_ORDER:
            raise UsageError(f"unknown config {name!r}")
        pipeline = generation.PipelineConfig.for_name(
            name, base_model_id=config.base_model_id, finetuned_model_id=config.finetuned_model_id, top_k=args.k
        )
        model_id = config.finetuned_model_id if name in ("finetuned_only", "finetuned_rag") else config.base_model_id
        client = _build_generation_client(args, config, model_id)
        per_config: dict[str, str] = {}
        for case in benchmark:
            try:
                draft = generation.run_pipeline(
                    pipeline, case.inquiry_text, index, provider, client, inquiry_id=case.inquiry_id
                )
            except AdmitragError as exc:
                raise CliError(f"config {name}, case {case.inquiry_id}: {exc}") from exc
            per_config[case.inquiry_id] = draft.response_text
        responses[name] = per_config
    return responses


def cmd_serve(args: argparse.Namespace, config: AppConfig) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(config)
    host, port = config.host, config.port
    logger.info("serving on %s:%d (pipeline %s)", host, port, config.active_config)
    uvicorn.run(app, host=host, port=port, log_config=None)
    return 0


def _add_chunk_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--chunk-size", type=int, default=chunking.DEFAULT_CHUNK_SIZE)
    parser.add_argument("--overlap", type=int, default=chunking.DEFAULT_OVERLAP)


def build_parser() -> _Parser:
    parser = _Parser(prog="admitrag", description="Admissions inquiry RAG toolkit")
    parser.add_argument("--config", dest="config_file", default=None, help="TOML config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="ingest plain-text files into a knowledge base")
    p.add_argument("files", nargs="+")
    p.add_argument("--kb", required=True)
    p.add_argument("--source-kind", required=True, choices=corpus.SOURCE_KINDS)
    p.add_argument("--redaction-rules", default=None)
    p.add_argument("--doc-id", default=None, help="override doc id (single file only)")
    p.add_argument("--title", default=None)

    p = sub.add_parser("chunks", help="inspect chunking output")
    chunks_sub = p.add_subparsers(dest="chunks_cmd", required=True)
    d = chunks_sub.add_parser("dump", help="dump a document's chunks as JSON-Lines")
    d.add_argument("--kb", required=True)
    d.add_argument("--doc", required=True)
    _add_chunk_flags(d)

    p = sub.add_parser("index", help="build the vector index")
    p.add_argument("--kb", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--provider", choices=("reference", "remote"), default="reference")
    p.add_argument("--dim", type=int, default=retrieval.DEFAULT_DIM)
    _add_chunk_flags(p)

    p = sub.add_parser("distill", help="distill the knowledge base into an Alpaca dataset")
    p.add_argument("--kb", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pairs-per-batch", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--min-grounding", type=float, default=distillation.DEFAULT_MIN_GROUNDING)
    p.add_argument("--script", default=None, help="scripted generator fixture (JSON map)")

    p = sub.add_parser("query", help="ad-hoc retrieval query")
    p.add_argument("--kb", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--provider", choices=("reference", "remote"), default="reference")
    p.add_argument("--config", dest="config", default=None, choices=generation.PIPELINE_NAMES)
    p.add_argument("--script", default=None, help="scripted generator fixture (JSON map)")
    p.add_argument("--format", choices=("text", "json"), default="text")
    _add_chunk_flags(p)

    p = sub.add_parser("evaluate", help="compute metrics and render the comparison report")
    p.add_argument("--benchmark", default=None)
    p.add_argument("--responses-dir", default=None)
    p.add_argument("--live", action="store_true")
    p.add_argument("--aggregates", default=None, help="precomputed per-config metric JSON")
    p.add_argument("--configs", default="all")
    p.add_argument("--satisfaction", default=None)
    p.add_argument("--judgments", default=None)
    p.add_argument("--kb", default=None)
    p.add_argument("--index", default=None)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--script", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("text", "json"), default="text")
    _add_chunk_flags(p)

    p = sub.add_parser("serve", help="run the HTTP service")

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = load_config(args.config_file)
        if args.command == "ingest":
            return cmd_ingest(args)
        if args.command == "chunks":
            return cmd_chunks(args)
        if args.command == "index":
            return cmd_index(args, config)
        if args.command == "distill":
            return cmd_distill(args, config)
        if args.command == "query":
            return cmd_query(args, config)
        if args.command == "evaluate":
            return cmd_evaluate(args, config)
        if args.command == "serve":
            return cmd_serve(args, config)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    except AdmitragError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
