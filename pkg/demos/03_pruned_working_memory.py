"""Subtask pruning: bounded working memory for unbounded generation.

A deep recursion trace emits ~23x more tokens than the position limit
allows.  With the pruning buffer at 1, completed subtask lists leave the
cache as soon as a newer list displaces them, retained suffixes are
re-encoded at recycled positions, and the run finishes with the position
counter never crossing the limit.
"""

from threadrun import BatchConfig, Engine, ScriptedModel, build_tokenizer, deep_recursion_tree
from threadrun.traces import make_trace

P = 256
tok = build_tokenizer()
trace = make_trace(deep_recursion_tree(levels=9, branching=2), tok)
print(f"trace: {len(trace.script)} tokens to emit, position limit {P} "
      f"({len(trace.script) / P:.1f}x)\n")

engine = Engine(
    ScriptedModel(position_limit=P),
    BatchConfig(buffer_threshold=1, position_limit=P, pool_pages=4 * P),
)
rid = engine.submit("go:", script=trace.script)

# Sample the live working-memory size as the run progresses.
history = []
while not engine.all_terminal():
    report = engine.step()
    history.append(report.request_live.get(rid, 0))

result = engine.result(rid)
m = result["metrics"]
assert result["status"] == "finished"

print("working-memory size over the run (one bar per ~3% of steps):")
stride = max(len(history) // 32, 1)
for i in range(0, len(history), stride):
    n = history[i]
    print(f"  step {i:5d}  {'#' * (n // 8):<32s} {n}")

print(f"\noutput length:        {m['output_len']}")
print(f"peak working memory:  {m['max_cache']}  (= position high water "
      f"{m['position_high_water']}, under the limit of {P})")
print(f"tokens pruned:        {m['pruned_tokens']}")
print(f"kv pruned:            {m['kv_pruned']:.1%}  (1 - max_cache / output_len)")
