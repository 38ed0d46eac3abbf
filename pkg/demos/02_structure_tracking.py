"""Incremental structure tracking and constrained-decoding masks.

The tracker consumes the emission stream token by token, announcing task
and subtask-list boundaries at exact offsets, and exposing exactly which
tokens may come next.  Everything a decoder needs to stay schema-valid
comes from these two calls: allowed_mask() before sampling, feed() after.
"""

from threadrun import ReasoningTree, TaskNode, ThreadGrammar, ToolSpec, ToolUse
from threadrun import build_tokenizer, serialize_tree

tok = build_tokenizer()
grammar = ThreadGrammar([ToolSpec("lookup")], depth_limit=8, tokenizer=tok)

tree = ReasoningTree([
    TaskNode(
        thought="plan",
        tooluse=ToolUse("lookup", {"key": "x"}, {"value": 42}),
        subtasks=[TaskNode(thought="verify", conclusion="checks out")],
        conclusion="x is 42",
    ),
])
text = serialize_tree(tree)
ids = tok.tokenize(text)

tracker = grammar.tracker()

print("mask at the start of the document:")
mask = tracker.allowed_mask()
print(" ", [tok.piece(i) for i in mask.ids], "\n")

print("replaying the document, printing lifecycle events:\n")
for tid in ids:
    assert tracker.allowed_mask().admits(tid)   # completeness along the corpus
    for event in tracker.feed(tid):
        line = f"  @{event.offset:<4d} depth {event.depth}  {event.kind}"
        if event.kind == "ToolParamsReady":
            line += f"  params={event.payload['parameters_text']}"
        if event.kind == "SubtaskListClosed":
            line += (f"  evictable span [{event.payload['span_start']}, "
                     f"{event.payload['span_end']})")
        print(line)
assert tracker.done

# Masks are state-dependent.  Inside a string almost everything goes; right
# after a task opens, only the thought key fits.
fresh = grammar.tracker()
for tid in tok.tokenize('[{"thought":"some tho'):
    fresh.feed(tid)
inside = fresh.allowed_mask()
print(f"\ninside a thought string: {len(inside)} tokens admitted "
      f"(bytes, escapes, the closing quote)")

fresh2 = grammar.tracker()
for tid in tok.tokenize("[{"):
    fresh2.feed(tid)
opening = fresh2.allowed_mask()
print(f"right after a task opens: {len(opening)} admitted -> "
      f"{[tok.piece(i) for i in opening.ids]}")
