"""Command-line entry point wiring all modules.

Subcommands: ``validate`` (dataset linting), ``index`` (chunk + embed a
manual into a flat vector index), ``classify`` (one-shot routing),
``eval`` (run a standardized suite and emit a report), ``gen`` (run a
dataset-construction pipeline from a job config), ``report`` (re-render a
JSON report as Markdown).

Exit codes: 0 on success, 1 on validation/metric errors, 2 on usage errors.
Every run prints its resolved config snapshot to stderr; stdout carries the
results. Flags override config-file values, which override defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

try:  # stdlib on 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from . import agent, corpus, datagen, evaluation, retrieval, routing, templates
from .errors import DbqaError
from .gateway import BackendConfig, load_backend_config


def _print_config(snapshot: dict) -> None:
    print("config: " + json.dumps(snapshot, sort_keys=True, ensure_ascii=False), file=sys.stderr)


def _cmd_validate(args: argparse.Namespace) -> int:
    _print_config({"command": "validate", "dataset": args.dataset})
    scan = corpus.scan_dataset(args.dataset)
    if scan.problems:
        for line_no, message in scan.problems:
            print(f"{args.dataset}:{line_no}: {message}", file=sys.stderr)
        print(f"{len(scan.problems)} problem(s) in {len(scan.dataset)} record(s)", file=sys.stderr)
        return 1
    print(f"{len(scan.dataset)} records valid")
    return 0


def _cmd_index(args: argparse.Namespace) -> int:
    manual_path = Path(args.manual)
    chunks_path = Path(args.chunks) if args.chunks else Path(str(args.out) + ".chunks.jsonl")
    _print_config(
        {
            "command": "index",
            "manual": str(manual_path),
            "out": str(args.out),
            "chunks": str(chunks_path),
            "seg_len": args.seg_len,
            "overlap": args.overlap,
            "embedder": args.embedder,
            "endpoint": args.endpoint,
            "dim": args.dim,
        }
    )
    doc = corpus.Document(
        doc_id=manual_path.stem,
        title=manual_path.stem,
        body=manual_path.read_text(encoding="utf-8"),
    )
    chunks = retrieval.segment_text(doc, seg_len=args.seg_len, overlap=args.overlap)
    if args.embedder == "remote":
        if not args.endpoint:
            print("error: --embedder remote requires --endpoint", file=sys.stderr)
            return 2
        embedder = retrieval.RemoteEmbedder(args.endpoint, dim=args.dim)
    else:
        embedder = retrieval.TrigramEmbedder(dim=args.dim)
    index = retrieval.build_index(chunks, embedder)
    retrieval.write_index(index, args.out)
    retrieval.save_chunks(chunks, chunks_path)
    print(f"indexed {len(index)} chunks (dim {index.dim}) -> {args.out}")
    return 0


def _cmd_classify(args: argparse.Namespace) -> int:
    _print_config(
        {
            "command": "classify",
            "kind": args.kind,
            "model": args.model,
            "endpoint": args.endpoint,
            "rules": args.rules,
        }
    )
    backend = load_backend_config(args.model) if args.model else None
    ruleset = routing.load_ruleset(args.rules) if args.rules else None
    decision = routing.classify(
        args.question,
        kind=args.kind,
        backend=backend,
        endpoint_url=args.endpoint,
        ruleset=ruleset,
    )
    print(
        json.dumps(
            {
                "category": decision.category.value,
                "classifier_kind": decision.classifier_kind,
                "confidence": decision.confidence,
                "fallback_reason": decision.fallback_reason,
            },
            sort_keys=True,
            ensure_ascii=False,
        )
    )
    return 0


def _load_chunk_store(path: str) -> dict[str, str]:
    return {c.chunk_id: c.text for c in retrieval.load_chunks(path)}


def _cmd_eval(args: argparse.Namespace) -> int:
    file_conf: dict = {}
    if args.config:
        with open(args.config, "rb") as fh:
            file_conf = tomllib.load(fh)

    def resolved(flag_value, key, default):
        if flag_value is not None:
            return flag_value
        return file_conf.get(key, default)

    seed = int(resolved(args.seed, "seed", 0))
    jobs = int(resolved(args.jobs, "jobs", 1))
    swap = bool(resolved(args.swap_judge or None, "swap_judge_positions", False))
    chunks_path = resolved(args.chunks, "chunks", None)
    pool_path = resolved(args.pool, "pool", None)
    templates_dir = resolved(args.templates, "templates", None)
    competitor_path = resolved(args.competitor, "competitor", None)
    judge_path = resolved(args.judge, "judge", None)

    store = templates.TemplateStore.from_dir(templates_dir) if templates_dir else None
    config = evaluation.SuiteConfig(
        seed=seed,
        store=store,
        chunks=_load_chunk_store(chunks_path) if chunks_path else None,
        pool=agent.load_tool_pool(pool_path) if pool_path else agent.default_tool_pool(),
        swap_judge_positions=swap,
        jobs=jobs,
    )
    _print_config(
        {
            "command": "eval",
            "suite": args.suite,
            "dataset": args.dataset,
            "model": args.model,
            "competitor": competitor_path,
            "judge": judge_path,
            "seed": seed,
            "jobs": jobs,
            "swap_judge_positions": swap,
            "chunks": chunks_path,
            "pool": pool_path,
            "templates": templates_dir,
            "out": args.out,
            "format": args.format,
        }
    )
    dataset = corpus.load_dataset(args.dataset)
    report = evaluation.run_suite(
        dataset,
        args.suite,
        load_backend_config(args.model),
        load_backend_config(competitor_path) if competitor_path else None,
        load_backend_config(judge_path) if judge_path else None,
        config,
    )
    rendered = report.to_markdown() if args.format == "md" else report.to_json()
    if args.out:
        Path(args.out).write_text(rendered, encoding="utf-8")
        print(f"report written to {args.out}")
    else:
        sys.stdout.write(rendered)
    if report.failures:
        print(f"{len(report.failures)} record(s) failed", file=sys.stderr)
        return 1
    return 0


def _cmd_gen(args: argparse.Namespace) -> int:
    with open(args.config, "rb") as fh:
        conf = tomllib.load(fh)
    pipeline = args.pipeline or conf.get("pipeline")
    if pipeline not in ("forum", "product", "instance"):
        print(f"error: unknown pipeline {pipeline!r}", file=sys.stderr)
        return 2
    if "backend" not in conf:
        print("error: job config needs a [backend] section", file=sys.stderr)
        return 2
    backend_conf = conf["backend"]
    if backend_conf.get("kind") == "scripted":
        from .gateway import Script, ScriptEntry

        entries = [
            ScriptEntry(response=e["response"], match=e.get("match"))
            for e in backend_conf.get("script", [])
        ]
        backend = BackendConfig(
            kind="scripted",
            model_name=backend_conf.get("model_name", "scripted"),
            script=Script(entries),
        )
    else:
        backend = BackendConfig(
            kind="remote",
            model_name=backend_conf.get("model_name", ""),
            endpoint_url=backend_conf.get("endpoint_url"),
            timeout_s=float(backend_conf.get("timeout_s", 30.0)),
            max_retries=int(backend_conf.get("max_retries", 2)),
        )
    options = dict(conf.get(pipeline, {}))
    options.update(conf.get("thresholds", {}))
    out_path = args.out or conf.get("out")
    job = datagen.GenerationJob(
        pipeline=pipeline,
        backend=backend,
        seed=int(conf.get("seed", 0)),
        out_path=Path(out_path) if out_path else None,
        lang=conf.get("lang", "en"),
        options=options,
    )
    _print_config(
        {
            "command": "gen",
            "pipeline": pipeline,
            "config": args.config,
            "seed": job.seed,
            "lang": job.lang,
            "out": str(job.out_path) if job.out_path else None,
        }
    )
    dataset = datagen.run_generation_job(job)
    print(f"generated {len(dataset)} record(s)" + (f" -> {job.out_path}" if job.out_path else ""))
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    _print_config({"command": "report", "in": args.infile, "format": args.format, "out": args.out})
    report = evaluation.EvalReport.from_json(Path(args.infile).read_text(encoding="utf-8"))
    rendered = report.to_markdown() if args.format == "md" else report.to_json()
    if args.out:
        Path(args.out).write_text(rendered, encoding="utf-8")
        print(f"report written to {args.out}")
    else:
        sys.stdout.write(rendered)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dbqa",
        description="Database Q&A testbed: datasets, routing, retrieval, tools, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a JSONL dataset")
    p.add_argument("dataset")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("index", help="chunk and embed a manual into a flat vector index")
    p.add_argument("--manual", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--chunks", help="chunk store JSONL path (default: <out>.chunks.jsonl)")
    p.add_argument("--seg-len", type=int, default=retrieval.DEFAULT_SEGMENT_CHARS)
    p.add_argument("--overlap", type=int, default=retrieval.DEFAULT_OVERLAP_CHARS)
    p.add_argument("--embedder", choices=("trigram", "remote"), default="trigram")
    p.add_argument("--endpoint", help="embedding service URL (remote embedder)")
    p.add_argument("--dim", type=int, default=256)
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("classify", help="classify one question")
    p.add_argument("--question", required=True)
    p.add_argument("--kind", choices=routing.CLASSIFIER_KINDS, default="rules")
    p.add_argument("--model", help="backend config TOML (llm_prompt kind)")
    p.add_argument("--endpoint", help="classifier service URL (remote kinds)")
    p.add_argument("--rules", help="ruleset JSON (rules kind; default packaged)")
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("eval", help="run a standardized evaluation suite")
    p.add_argument("--suite", required=True, choices=evaluation.SUITES)
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True, help="model backend config TOML")
    p.add_argument("--competitor", help="competitor backend config TOML")
    p.add_argument("--judge", help="judge backend config TOML")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="report path (default: stdout)")
    p.add_argument("--format", choices=("json", "md"), default="json")
    p.add_argument("--jobs", type=int, help="per-record concurrency (default 1)")
    p.add_argument("--swap-judge", action="store_true", help="judge both candidate orders")
    p.add_argument("--chunks", help="chunk store JSONL (product suite)")
    p.add_argument("--pool", help="tool pool JSON (instance suite; default built-in)")
    p.add_argument("--templates", help="template directory (default packaged English)")
    p.add_argument("--config", help="TOML file supplying defaults for the flags above")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gen", help="run a dataset-construction pipeline")
    p.add_argument("--pipeline", choices=("forum", "product", "instance"))
    p.add_argument("--config", required=True, help="job config TOML")
    p.add_argument("--out", help="output dataset path (overrides config)")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("report", help="re-render a JSON report")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", choices=("json", "md"), default="md")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    """Parse arguments and dispatch; returns the process exit status."""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DbqaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
