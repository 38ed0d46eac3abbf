"""Operator entry points: run traces, benchmark, verify, generate corpora.

Examples:
    threadrun gen-corpus --seed 0 --n 20 --depth 4 --branching 3 --out trees.jsonl
    threadrun run --corpus trees.jsonl --index 0 --threshold 0
    threadrun bench --corpus trees.jsonl --thresholds 0,1,2,8,none --out bench.csv
    threadrun verify --seed 0 --cases 40
    threadrun serve --port 8080

Set THREADRUN_LOG=debug for step-level logging.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time

from .model import ModelConfig, ScriptedModel, TinyTransformer
from .scheduler import BatchConfig, Engine
from .schema import (
    ToolSpec,
    deep_recursion_tree,
    load_corpus,
    random_tree,
    save_corpus,
    tool_chain_tree,
)
from .tokenizer import build_tokenizer
from .toolhub import ToolHub, mock_tool
from .traces import Trace, load_traces, make_trace
from . import verify

NO_PRUNING = 1 << 30  # threshold large enough that nothing ever pops


def _backend(args):
    if getattr(args, "model_config", None):
        cfg = ModelConfig.from_json_file(args.model_config)
        if args.position_limit:
            cfg.position_limit = args.position_limit
        if args.seed is not None:
            cfg.seed = args.seed
        return TinyTransformer(cfg)
    return ScriptedModel(position_limit=args.position_limit or 8192)


def _engine(args, backend, threshold, batch=1, hub=None) -> Engine:
    cfg = BatchConfig(
        max_batch=batch,
        buffer_threshold=threshold,
        position_limit=backend.position_limit,
        pool_pages=args.pool_pages or 0,
        max_queue=max(64, batch * 4),
    )
    return Engine(backend, cfg, hub=hub)


def _load_run_traces(args, tok) -> list[Trace]:
    if args.trace:
        return load_traces(args.trace)
    if args.corpus:
        trees = load_corpus(args.corpus)
        return [make_trace(t, tok) for t in trees]
    raise SystemExit("provide --trace or --corpus")


def cmd_run(args) -> int:
    tok = build_tokenizer()
    traces = _load_run_traces(args, tok)
    trace = traces[args.index]
    backend = _backend(args)
    threshold = NO_PRUNING if args.threshold is None else args.threshold
    engine = _engine(args, backend, threshold)
    rid = engine.submit(
        args.prompt, [ToolSpec(n) for n in trace.tool_names],
        script=trace.script,
        tool_responses=trace.tool_responses or None,
    )
    engine.run_until_done(deadline_s=args.deadline)
    result = engine.result(rid)
    doc = {"request_id": rid, **result}
    if result["status"] == "finished":
        doc["tree"] = json.loads(result["text"])
    text = json.dumps(doc, indent=2, ensure_ascii=False)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    print(text)
    return 0 if result["status"] == "finished" else 1


def _bench_one(traces, threshold, args, tok):
    hub = None
    overrides = True
    names = sorted({n for t in traces for n in t.tool_names})
    if args.tool_latency > 0:
        # Echo semantics behind a fixed latency, matching corpus tool results.
        hub = ToolHub()

        def slow_echo(params, i, _ms=args.tool_latency):
            time.sleep(_ms / 1000.0)
            return params

        for name in names:
            hub.register(ToolSpec(name, f"echo after {args.tool_latency} ms"), slow_echo)
        overrides = False

    backend = ScriptedModel(position_limit=args.position_limit or 1 << 20)
    engine = _engine(args, backend, threshold, batch=args.batch, hub=hub)
    rids = []
    for trace in traces:
        rids.append(engine.submit(
            "bench:", [ToolSpec(n) for n in trace.tool_names],
            script=trace.script,
            tool_responses=(trace.tool_responses or None) if overrides else None,
        ))
    t0 = time.monotonic()
    flops = 0
    while not engine.all_terminal():
        flops += engine.step().flops_units
    wall = time.monotonic() - t0
    finished = [engine.result(r) for r in rids]
    bad = [r for r in finished if r["status"] != "finished"]
    if bad:
        raise SystemExit(f"bench replay failed: {bad[0]}")
    tokens = sum(r["metrics"]["output_len"] for r in finished)
    return {
        "threshold": "none" if threshold == NO_PRUNING else threshold,
        "tokens_per_sec": round(tokens / wall, 1),
        "flops_units": flops,
        "kv_pruned_mean": round(sum(r["metrics"]["kv_pruned"] for r in finished) / len(finished), 4),
        "max_cache_mean": round(sum(r["metrics"]["max_cache"] for r in finished) / len(finished), 1),
    }


def cmd_bench(args) -> int:
    tok = build_tokenizer()
    traces = _load_run_traces(args, tok)
    thresholds = []
    for part in args.thresholds.split(","):
        part = part.strip()
        thresholds.append(NO_PRUNING if part in ("none", "inf") else int(part))
    rows = [] if not traces else [_bench_one(traces, t, args, tok) for t in thresholds]
    buf = io.StringIO()
    buf.write("# deterministic given --seed and corpus, except tokens_per_sec (wall clock)\n")
    writer = csv.DictWriter(buf, fieldnames=["threshold", "tokens_per_sec", "flops_units",
                                             "kv_pruned_mean", "max_cache_mean"])
    writer.writeheader()
    writer.writerows(rows)
    out = buf.getvalue()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(out)
    sys.stdout.write(out)
    return 0


def cmd_verify(args) -> int:
    rows = verify.run_all(seed=args.seed or 0, cases=args.cases)
    failed = False
    for name, ok, detail in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {name:16s} {detail}")
        failed = failed or not ok
    return 1 if failed else 0


def cmd_gen_corpus(args) -> int:
    trees = []
    for i in range(args.n):
        if args.profile == "deep":
            trees.append(deep_recursion_tree(args.depth, args.branching, seed=args.seed + i))
        elif args.profile == "toolchain":
            trees.append(tool_chain_tree(args.calls, seed=args.seed + i))
        else:
            trees.append(random_tree(args.seed + i, args.depth, args.branching, args.tool_prob))
    save_corpus(trees, args.out)
    print(f"wrote {len(trees)} trees to {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn
    from .gateway import create_app

    cfg = ModelConfig.from_json_file(args.model_config) if args.model_config else ModelConfig()
    if args.position_limit:
        cfg.position_limit = args.position_limit
    backend = TinyTransformer(cfg)
    hub = ToolHub()
    spec, impl = mock_tool("echo")
    hub.register(spec, impl)
    engine = Engine(backend, BatchConfig(
        max_batch=args.batch, buffer_threshold=args.threshold or 1,
        position_limit=cfg.position_limit, pool_pages=args.pool_pages or 0), hub=hub)
    app = create_app(engine)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="threadrun", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--model-config", help="JSON model config; omit for the scripted backend")
        p.add_argument("--threshold", type=int, default=None, help="pruning buffer size")
        p.add_argument("--batch", type=int, default=1)
        p.add_argument("--pool-pages", type=int, default=0)
        p.add_argument("--position-limit", type=int, default=0)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--corpus", help="tree corpus file (one JSON tree per line)")
        p.add_argument("--out", help="output path")

    p = sub.add_parser("run", help="replay one trace and print tree + metrics")
    common(p)
    p.add_argument("--trace", help="trace file (one JSON trace per line)")
    p.add_argument("--index", type=int, default=0, help="which trace/tree to run")
    p.add_argument("--prompt", default="task:")
    p.add_argument("--deadline", type=float, default=120.0)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("bench", help="sweep thresholds over a corpus, emit CSV")
    common(p)
    p.add_argument("--trace", help="trace file instead of --corpus")
    p.add_argument("--thresholds", default="0,1,2,8,none")
    p.add_argument("--tool-latency", type=int, default=0, help="mock tool latency in ms")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("verify", help="run the oracle suites")
    common(p)
    p.add_argument("--cases", type=int, default=40)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("gen-corpus", help="write a corpus of random trees")
    common(p)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--branching", type=int, default=3)
    p.add_argument("--tool-prob", type=float, default=0.2)
    p.add_argument("--calls", type=int, default=8, help="tool calls for --profile toolchain")
    p.add_argument("--profile", choices=["random", "deep", "toolchain"], default="random")
    p.set_defaults(fn=cmd_gen_corpus)

    p = sub.add_parser("serve", help="start the HTTP gateway with a toy model")
    common(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(fn=cmd_serve)

    args = parser.parse_args(argv)
    if args.command == "gen-corpus" and args.seed is None:
        args.seed = 0
    if args.command == "gen-corpus" and not args.out:
        parser.error("gen-corpus requires --out")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
