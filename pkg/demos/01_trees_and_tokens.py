"""Reasoning trees, canonical text, and the byte tokenizer.

A document is a JSON array of tasks; every task carries a thought, an
optional tool call, an optional subtask list, and a conclusion.  The
tokenizer is byte-level with a handful of merged pieces: each schema key
is one token, and the three boundary digraphs keep task transitions to a
single token.
"""

from threadrun import (
    ReasoningTree,
    TaskNode,
    ToolUse,
    build_tokenizer,
    parse_tree_text,
    random_tree,
    serialize_tree,
)

tok = build_tokenizer()
print(f"vocabulary: {tok.vocab_size} tokens "
      f"(256 bytes + {tok.vocab_size - 256} merged pieces)\n")

# -- a hand-built tree -------------------------------------------------------

tree = ReasoningTree([
    TaskNode(
        thought="find the population, then compare",
        tooluse=ToolUse("search", {"q": "population of Reykjavik"},
                        {"answer": 139000}),
        subtasks=[
            TaskNode(thought="sanity check the number", conclusion="plausible"),
        ],
        conclusion="about 139k people",
    ),
])

text = serialize_tree(tree, tok)
print("canonical form:")
print(" ", text, "\n")

ids = tok.tokenize(text)
print(f"{len(text)} characters -> {len(ids)} tokens; first ten pieces:")
print(" ", [tok.piece(t) for t in ids[:10]], "\n")

# Round trip: parse the text back and compare structurally.
assert parse_tree_text(text) == tree
print("parse(serialize(tree)) == tree\n")

# Token spans land on the nodes during serialization; the subtasks span is
# the evictable extent (leading comma through closing bracket).
root = tree.root_tasks[0]
print(f"root task span:       tokens [{root.span.start}, {root.span.end})")
print(f"evictable list span:  tokens [{root.subtasks_span.start}, {root.subtasks_span.end})")
span_text = tok.detokenize(ids[root.subtasks_span.start:root.subtasks_span.end])
print(f"list span text:       {span_text.decode()}\n")

# -- generated corpora -------------------------------------------------------

gen = random_tree(seed=7, max_depth=3, max_branching=3, tool_prob=0.3)
gen_text = serialize_tree(gen)
print(f"random tree (seed 7): {len(gen_text)} chars, "
      f"{sum(1 for _ in gen.walk())} tasks, "
      f"{sum(1 for n in gen.walk() if n.tooluse)} tool calls")
assert random_tree(7, 3, 3, tool_prob=0.3) == gen
print("same seed, same tree")
