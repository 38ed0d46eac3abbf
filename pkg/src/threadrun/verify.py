"""Verification suites: replay harness plus the cross-implementation checks.

Each suite pits the runtime against an independent oracle: fresh prefill
for prune/extend numerics, a rule transcription for eviction order, page
accounting identities, and the batch parser for grammar round trips.  The
CLI's ``verify`` subcommand runs them all; the acceptance tests reuse the
same entry points with pinned parameters.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .model import ModelConfig, ScriptedModel, TinyTransformer
from .oracles import batch_parse, masked_argmax, surgery
from .paging import PageTable, gather
from .pruning import oracle_evictions
from .scheduler import BatchConfig, Engine, StepReport
from .schema import ReasoningTree, ToolSpec, parse_tree_text, random_tree, serialize_tree
from .tokenizer import build_tokenizer
from .traces import Trace, make_trace
from .tracker import ThreadGrammar


@dataclass
class ReplayOutcome:
    rid: str
    result: dict
    reports: list[StepReport] = field(default_factory=list)
    peak_live: int = 0
    mean_live: float = 0.0
    eviction_log: list = field(default_factory=list)
    engine: Engine | None = None

    @property
    def finished(self) -> bool:
        return self.result["status"] == "finished"


def run_replay(
    trace: Trace,
    threshold: int,
    *,
    backend=None,
    position_limit: int = 8192,
    pool_pages: int = 0,
    subsume: bool = True,
    prompt: str = "task:",
    tools: tuple[ToolSpec, ...] = (),
    check_masks: bool = True,
    check_pages: bool = True,
    on_prune=None,
) -> ReplayOutcome:
    """Run one trace to completion on a fresh engine, auditing each step."""
    backend = backend or ScriptedModel(position_limit=position_limit)
    cfg = BatchConfig(
        buffer_threshold=threshold,
        position_limit=backend.position_limit,
        pool_pages=pool_pages or 4 * backend.position_limit,
        subsume=subsume,
        check_masks=check_masks,
    )
    engine = Engine(backend, cfg)
    rid = engine.submit(prompt, list(tools), script=trace.script,
                        tool_responses=trace.tool_responses or None)
    req = engine.requests[rid]
    reports = []
    live_sum = 0
    peak = 0
    pruned_before = 0
    while not engine.all_terminal():
        report = engine.step()
        reports.append(report)
        n = report.request_live.get(rid, 0)
        live_sum += n
        peak = max(peak, n)
        if check_pages:
            total_live = sum(len(r.live) for r in engine.requests.values())
            assert len(engine.pool.allocated) == total_live, "page leak"
        if on_prune is not None and req.metrics.pruned_tokens > pruned_before:
            pruned_before = req.metrics.pruned_tokens
            if req.status.value == "decoding":
                on_prune(engine, req)
    result = engine.result(rid)
    return ReplayOutcome(
        rid=rid, result=result, reports=reports, peak_live=peak,
        mean_live=live_sum / max(len(reports), 1),
        eviction_log=list(req.eviction_log), engine=engine,
    )


# ---------------------------------------------------------------------------
# Numeric equivalence (the paper's re-encode equation, checked mechanically)
# ---------------------------------------------------------------------------

def kv_equivalence_check(engine: Engine, req, rtol: float = 1e-5,
                         greedy_steps: int = 8) -> tuple[float, float]:
    """Compare working memory against a fresh prefill of the pruned sequence.

    Returns the worst K and V relative errors; raises AssertionError when
    above rtol or when the next ``greedy_steps`` unmasked greedy tokens
    diverge between the runtime state and the fresh-prefill state.
    """
    model = engine.backend
    live_tokens = [req.logical[i] for i in req.live]
    n = len(live_tokens)
    scratch = model.make_pool(n + greedy_steps + 2)
    oracle_table = PageTable("oracle")
    oracle_logits = model.prefill(live_tokens, list(range(n)), oracle_table, scratch)

    k_run, v_run = gather(engine.pool, req.table)
    k_ora, v_ora = gather(scratch, oracle_table)
    k_rel = float(np.abs(k_run - k_ora).max() / np.abs(k_ora).max())
    v_rel = float(np.abs(v_run - v_ora).max() / np.abs(v_ora).max())
    assert k_rel < rtol, f"K mismatch: rel err {k_rel:.3e}"
    assert v_rel < rtol, f"V mismatch: rel err {v_rel:.3e}"

    run_pool = model.make_pool(n + greedy_steps + 2)
    run_table = PageTable("runtime")
    run_table.pages = run_pool.alloc("runtime", n)
    run_pool.K[run_table.pages] = engine.pool.K[req.table.pages]
    run_pool.V[run_table.pages] = engine.pool.V[req.table.pages]

    logits_run = req.last_logits
    logits_ora = oracle_logits
    for _ in range(greedy_steps):
        t_run = int(np.argmax(logits_run))
        t_ora = int(np.argmax(logits_ora))
        assert t_run == t_ora, f"greedy continuation diverged: {t_run} vs {t_ora}"
        logits_run = model.decode_step(t_run, len(run_table), run_table, run_pool)
        logits_ora = model.decode_step(t_ora, len(oracle_table), oracle_table, scratch)
    return k_rel, v_rel


def suite_prune_extend(seeds=range(20), max_depth: int = 4, branching: int = 2,
                       tool_prob: float = 0.25, threshold: int = 0,
                       rtol: float = 1e-5, config: ModelConfig | None = None) -> dict:
    """Replay random trees on the toy transformer, verifying every eviction."""
    tok = build_tokenizer()
    cfg = config or ModelConfig(position_limit=2048)
    tools = (ToolSpec("search"), ToolSpec("calc"))
    checked = 0
    worst = 0.0

    def hook(engine, req):
        nonlocal checked, worst
        k, v = kv_equivalence_check(engine, req, rtol=rtol)
        worst = max(worst, k, v)
        checked += 1

    for seed in seeds:
        tree = random_tree(seed, max_depth, branching, tool_prob=tool_prob)
        trace = make_trace(tree, tok)
        out = run_replay(
            trace, threshold, backend=TinyTransformer(cfg),
            position_limit=cfg.position_limit, tools=tools, on_prune=hook,
        )
        assert out.finished, f"seed {seed}: {out.result}"
        assert out.result["text"] == trace.text, f"seed {seed}: text drift"
    return {"trees": len(list(seeds)), "evictions_checked": checked, "worst_rel_err": worst}


# ---------------------------------------------------------------------------
# Eviction order and retention
# ---------------------------------------------------------------------------

def suite_eviction_order(seeds=range(100), thresholds=(0, 1, 2, 5),
                         max_depth: int = 4, branching: int = 3,
                         tool_prob: float = 0.2, subsume: bool = True) -> dict:
    """Runtime eviction order must equal the rule oracle; retention must hold."""
    tok = build_tokenizer()
    tools = (ToolSpec("search"), ToolSpec("calc"))
    runs = 0
    evictions = 0
    for seed in seeds:
        tree = random_tree(seed, max_depth, branching, tool_prob=tool_prob)
        trace = make_trace(tree, tok)
        parsed, _, events = batch_parse(trace.text, tok)
        for t in thresholds:
            out = run_replay(trace, t, tools=tools, subsume=subsume, check_masks=False)
            assert out.finished, f"seed {seed} T={t}: {out.result}"
            expected = oracle_evictions(events, t, subsume=subsume)
            got = [(s.start, s.end) for s in out.eviction_log]
            assert got == [(s.start, s.end) for s in expected], f"seed {seed} T={t}"
            check_retention(parsed, out.eviction_log)
            evictions += len(got)
            runs += 1
    return {"runs": runs, "evictions": evictions}


def check_retention(tree: ReasoningTree, eviction_log) -> None:
    """A task's thought/conclusion may go only with an enclosing list span."""
    nodes = list(tree.walk())
    list_spans = [n.subtasks_span for n in nodes if n.subtasks_span is not None]
    for i, span in enumerate(eviction_log):
        evicted_so_far = eviction_log[: i + 1]
        assert any(
            ls.start == span.start and ls.end >= span.end for ls in list_spans
        ), f"evicted span {span} is not a subtask-list span"
        for node in nodes:
            for own in (node.thought_span, node.conclusion_span):
                if own is None or not (span.start <= own.start and own.end <= span.end):
                    continue
                # Some evicted list must enclose this node entirely.
                assert any(
                    e.start <= node.span.start and node.span.end <= e.end
                    for e in evicted_so_far
                ), f"retention violated for task at {node.span}"


# ---------------------------------------------------------------------------
# Working-memory content vs list surgery
# ---------------------------------------------------------------------------

def suite_memory_content(seeds=range(30), threshold: int = 0) -> dict:
    """At every step, live tokens equal the logical sequence minus applied
    spans minus the still-unencoded tail."""
    tok = build_tokenizer()
    checked = 0
    for seed in seeds:
        tree = random_tree(seed, 4, 2, tool_prob=0.0)
        trace = make_trace(tree, tok)
        backend = ScriptedModel(position_limit=8192)
        cfg = BatchConfig(buffer_threshold=threshold, position_limit=8192,
                          pool_pages=16384, check_masks=False)
        engine = Engine(backend, cfg)
        rid = engine.submit("p:", script=trace.script)
        req = engine.requests[rid]
        while not engine.all_terminal():
            engine.step()
            if req.status.value != "decoding":
                break
            pending = set(req.pending)
            expect = [i for i in surgery(list(range(len(req.logical))), req.applied_spans)
                      if i not in pending]
            assert req.live == expect, f"seed {seed}: live diverged from surgery"
            checked += 1
    return {"steps_checked": checked}


# ---------------------------------------------------------------------------
# Grammar round trips and masks
# ---------------------------------------------------------------------------

def suite_round_trip(seeds=range(200)) -> dict:
    tok = build_tokenizer()
    for seed in seeds:
        tree = random_tree(seed, 4, 3, tool_prob=0.3)
        text = serialize_tree(tree, tok)
        back = parse_tree_text(text)
        assert back == tree, f"seed {seed}: round trip broke"
        assert tok.detokenize(tok.tokenize(text)) == text.encode("utf-8")
    return {"trees": len(list(seeds))}


def suite_grammar_replay(seeds=range(100), tools=(ToolSpec("search"), ToolSpec("calc")),
                         depth_limit: int = 16) -> dict:
    """Every prefix of every corpus tree admits its actual next token."""
    tok = build_tokenizer()
    grammar = ThreadGrammar(list(tools), depth_limit, tok)
    tokens = 0
    for seed in seeds:
        tree = random_tree(seed, 4, 3, tool_prob=0.3)
        text = serialize_tree(tree)
        _, ids, expected_events = batch_parse(text, tok)
        tracker = grammar.tracker()
        got = []
        for tid in ids:
            assert tracker.allowed_mask().admits(tid), f"seed {seed}: rejected {tid}"
            got.extend(tracker.feed(tid))
        assert tracker.done
        assert [(e.kind, e.offset, e.depth) for e in got] == \
               [(e.kind, e.offset, e.depth) for e in expected_events], f"seed {seed}"
        tokens += len(ids)
    return {"trees": len(list(seeds)), "tokens": tokens}


def suite_masked_argmax(cases: int = 300, vocab: int = 512, seed: int = 0) -> dict:
    from .model import sample
    from .tracker import TokenMask
    rng = np.random.default_rng(seed)
    for _ in range(cases):
        logits = rng.standard_normal(vocab).astype(np.float32)
        k = int(rng.integers(1, vocab))
        ids = rng.choice(vocab, size=k, replace=False).tolist()
        mask = TokenMask(ids)
        assert sample(logits, mask) == masked_argmax(logits, ids)
    return {"cases": cases}


# ---------------------------------------------------------------------------
# Page accounting
# ---------------------------------------------------------------------------

def suite_page_accounting(seeds=range(40), threshold: int = 1) -> dict:
    """Random replays leak nothing; freed pages are reusable immediately."""
    tok = build_tokenizer()
    steps = 0
    for seed in seeds:
        tree = random_tree(seed, 4, 2, tool_prob=0.2)
        trace = make_trace(tree, tok)
        out = run_replay(trace, threshold, tools=(ToolSpec("search"), ToolSpec("calc")),
                         check_masks=False, check_pages=True)
        assert out.finished, f"seed {seed}: {out.result}"
        assert out.engine.pool.free_count == out.engine.pool.capacity
        steps += len(out.reports)
    return {"replays": len(list(seeds)), "steps": steps}


ALL_SUITES = {
    "round-trip": lambda seed, cases: suite_round_trip(range(seed, seed + cases)),
    "grammar-replay": lambda seed, cases: suite_grammar_replay(range(seed, seed + cases)),
    "eviction-order": lambda seed, cases: suite_eviction_order(range(seed, seed + max(cases // 4, 1))),
    "memory-content": lambda seed, cases: suite_memory_content(range(seed, seed + max(cases // 4, 1))),
    "page-accounting": lambda seed, cases: suite_page_accounting(range(seed, seed + max(cases // 2, 1))),
    "masked-argmax": lambda seed, cases: suite_masked_argmax(cases=max(cases, 10), seed=seed),
    "prune-extend": lambda seed, cases: suite_prune_extend(range(seed, seed + max(cases // 10, 2))),
}


def run_all(seed: int = 0, cases: int = 40, names=None) -> list[tuple[str, bool, str]]:
    rows = []
    for name, fn in ALL_SUITES.items():
        if names and name not in names:
            continue
        t0 = time.time()
        try:
            info = fn(seed, cases)
            rows.append((name, True, f"{info} [{time.time() - t0:.1f}s]"))
        except AssertionError as e:
            rows.append((name, False, str(e)))
    return rows
