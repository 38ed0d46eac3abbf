"""Numeric check: pruning plus re-encoding equals decoding the pruned text.

Keys are rotated by position when written, so evicting a span and keeping
the survivors' pages as-is would leave stale positions behind.  The
runtime instead re-encodes every retained token after the evicted span at
its new position.  This script replays a tree on the toy transformer and,
each time an eviction lands, compares the working memory's K/V pages and
the next greedy tokens against a from-scratch prefill of the pruned
sequence.
"""

import numpy as np

from threadrun import BatchConfig, Engine, ModelConfig, TinyTransformer, ToolSpec
from threadrun import build_tokenizer, random_tree
from threadrun.traces import make_trace
from threadrun.verify import kv_equivalence_check

tok = build_tokenizer()
config = ModelConfig(position_limit=2048)  # 2 layers, 4 heads, head dim 16
print(f"toy transformer: {config.layers} layers, {config.heads} heads x "
      f"{config.head_dim} dims, float32\n")

tree = random_tree(seed=12, max_depth=4, max_branching=2, tool_prob=0.3)
trace = make_trace(tree, tok)

engine = Engine(
    TinyTransformer(config),
    BatchConfig(buffer_threshold=0, position_limit=2048, pool_pages=4096),
)
rid = engine.submit(
    "solve it", tools=[ToolSpec("search"), ToolSpec("calc")],
    script=trace.script, tool_responses=trace.tool_responses,
)
req = engine.requests[rid]

checked = 0
seen = 0
while not engine.all_terminal():
    engine.step()
    if req.metrics.pruned_tokens > seen and req.status.value == "decoding":
        seen = req.metrics.pruned_tokens
        k_err, v_err = kv_equivalence_check(engine, req, rtol=1e-5, greedy_steps=8)
        checked += 1
        print(f"eviction {checked}: live={len(req.live):4d} tokens   "
              f"K rel err {k_err:.2e}   V rel err {v_err:.2e}   "
              f"next 8 greedy tokens identical")

result = engine.result(rid)
assert result["status"] == "finished"
assert result["text"] == trace.text
print(f"\nreplay finished; {checked} evictions verified against fresh prefill")
print(f"metrics: {result['metrics']}")
