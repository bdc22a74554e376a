"""Command-line entry points.

    longview gen-synthetic --seed 42 --out corpus/ --questions 100
    longview answer --pipeline sva --corpus corpus/ --questions corpus/questions.jsonl \
        --out answers.jsonl --backend oracle
    longview eval --answers answers.jsonl --questions corpus/questions.jsonl --report report.json
    longview build --corpus corpus/
    longview bench-kernels
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .config import EngineConfig, load_config
from .errors import LongviewError, NotFound
from .gateway import CallLedger, Gateway, ScriptedBackend, http_backend_from_env
from .harness import (
    GroundTruthScript,
    HarnessConfig,
    OracleBackend,
    evaluate,
    generate_corpus,
    generate_questions,
    load_answers,
    load_question_rows,
    save_answers,
    write_corpus,
)
from .queryparse import question_from_dict, save_questions
from .stores import build_stores_from_dir, ensure_persisted_graph, materialize
from .sva import answer_question_sva
from .tmkg import answer_question_tmkg


def _cmd_gen(args) -> int:
    config = HarnessConfig(
        days=args.days,
        hours_per_day=args.hours,
        events_per_day=args.events_per_day,
        density=args.density,
    )
    manifest, lanes, script = generate_corpus(args.seed, config)
    out = Path(args.out)
    write_corpus(out, manifest, lanes, script)
    if args.questions > 0:
        questions, meta = generate_questions(script, args.questions)
        save_questions(questions, out / "questions.jsonl", extra=meta)
    print(f"wrote corpus to {out} ({len(script.happenings)} happenings, seed {args.seed})")
    return 0


def _make_gateway(args, corpus_dir: Path, config: EngineConfig) -> Gateway:
    ledger = CallLedger()
    if args.backend == "oracle":
        script_path = Path(args.script) if args.script else corpus_dir / "script.json"
        if not script_path.exists():
            raise NotFound(f"oracle backend needs a script file, none at {script_path}")
        script = GroundTruthScript.load(script_path)
        rows = load_question_rows(args.questions)
        meta = {row["id"]: row for row in rows}
        oracle = OracleBackend(script, meta, noise_p=args.noise, noise_seed=args.noise_seed)
        backend = ScriptedBackend(unknown_policy="consult", consult=oracle.complete, backend_id="oracle")
        channels = {"primary": backend}
    elif args.backend == "http":
        channels = {}
        for name in ("primary", "alt", "prior"):
            built = http_backend_from_env(name, retries=config.http_retries)
            if built is not None:
                channels[name] = built
        if not channels:
            raise LongviewError("http backend selected but MODEL_ENDPOINT is not set")
    else:  # none: every stage uses its local fallback
        channels = {}
    routes = {}
    if "alt" in channels:
        routes["tmkg_answer"] = ["primary", "alt"]
    if "prior" in channels:
        routes["prior"] = ["prior"]
    return Gateway(channels=channels, routes=routes, ledger=ledger, max_inflight=config.max_inflight)


def _cmd_answer(args) -> int:
    config = load_config(args.config)
    corpus_dir = Path(args.corpus)
    stores = build_stores_from_dir(corpus_dir, config=config)
    gateway = _make_gateway(args, corpus_dir, config)
    rows = load_question_rows(args.questions)
    questions = [question_from_dict(row) for row in rows]
    answers = []
    started = time.perf_counter()
    if args.pipeline == "tmkg":
        graph = ensure_persisted_graph(stores, corpus_dir)
        for q in questions:
            answers.append(answer_question_tmkg(q, stores, gateway, config, graph=graph))
    else:
        for q in questions:
            answers.append(answer_question_sva(q, stores, gateway, config))
    save_answers(answers, args.out)
    if args.ledger:
        gateway.ledger.dump(args.ledger)
    elapsed = time.perf_counter() - started
    print(f"answered {len(answers)} questions with {args.pipeline} in {elapsed:.1f}s -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    answers = load_answers(args.answers)
    rows = load_question_rows(args.questions)
    report = evaluate(answers, rows)
    report.save(args.report)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_build(args) -> int:
    config = load_config(args.config)
    stores = build_stores_from_dir(args.corpus, config=config)
    materialize(stores, args.corpus)
    print(f"materialized documents, catalogs, and graph segments under {args.corpus}")
    return 0


def _cmd_bench(args) -> int:
    from .benchmarks import run_kernel_benchmark

    run_kernel_benchmark(n_docs=args.docs, n_queries=args.queries)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="longview")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-synthetic", help="generate a synthetic corpus with ground truth")
    gen.add_argument("--seed", type=int, default=42)
    gen.add_argument("--out", required=True)
    gen.add_argument("--days", type=int, default=4)
    gen.add_argument("--hours", type=int, default=2)
    gen.add_argument("--events-per-day", type=int, default=12)
    gen.add_argument("--density", type=float, default=1.0)
    gen.add_argument("--questions", type=int, default=100)
    gen.set_defaults(func=_cmd_gen)

    ans = sub.add_parser("answer", help="answer questions with one pipeline")
    ans.add_argument("--pipeline", choices=("sva", "tmkg"), required=True)
    ans.add_argument("--corpus", required=True)
    ans.add_argument("--questions", required=True)
    ans.add_argument("--out", required=True)
    ans.add_argument("--backend", choices=("oracle", "http", "none"), default="oracle")
    ans.add_argument("--script", default=None, help="ground-truth script for the oracle backend")
    ans.add_argument("--noise", type=float, default=0.0, help="oracle flip rate on non-target windows")
    ans.add_argument("--noise-seed", type=int, default=0)
    ans.add_argument("--ledger", default=None, help="dump the call ledger to this path")
    ans.add_argument("--config", default=None)
    ans.set_defaults(func=_cmd_answer)

    ev = sub.add_parser("eval", help="score answers against gold labels")
    ev.add_argument("--answers", required=True)
    ev.add_argument("--questions", required=True)
    ev.add_argument("--report", required=True)
    ev.set_defaults(func=_cmd_eval)

    build = sub.add_parser("build", help="materialize derived artifacts for a corpus")
    build.add_argument("--corpus", required=True)
    build.add_argument("--config", default=None)
    build.set_defaults(func=_cmd_build)

    bench = sub.add_parser("bench-kernels", help="compare compiled and pure-Python kernels")
    bench.add_argument("--docs", type=int, default=2000)
    bench.add_argument("--queries", type=int, default=200)
    bench.set_defaults(func=_cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LongviewError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
