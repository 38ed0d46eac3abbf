"""Replay traces and mask-driven generation instruments.

A trace is the scripted side of a request: the exact token stream the
model would emit, with tool-result values cut out (the runtime inserts
those itself when the mocked tool responds) and recorded separately by
call index.  Replaying a trace through the engine must reproduce the
original document text.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .oracles import result_value_token_spans
from .schema import ReasoningTree, serialize_tree
from .tokenizer import ByteTokenizer
from .tracker import Tracker


@dataclass
class Trace:
    script: list[int]
    tool_responses: dict[int, object] = field(default_factory=dict)
    tool_names: list[str] = field(default_factory=list)
    text: str = ""          # full document text the replay should reproduce

    def to_json(self) -> str:
        return json.dumps({
            "script": self.script,
            "tool_responses": {str(k): v for k, v in self.tool_responses.items()},
            "tool_names": self.tool_names,
        }, separators=(",", ":"), ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "Trace":
        d = json.loads(text)
        return cls(
            script=list(d["script"]),
            tool_responses={int(k): v for k, v in d.get("tool_responses", {}).items()},
            tool_names=list(d.get("tool_names", [])),
        )


def make_trace(tree: ReasoningTree, tokenizer: ByteTokenizer) -> Trace:
    """Script a tree for replay: result values become insertion responses."""
    text = serialize_tree(tree)
    ids = tokenizer.tokenize(text)
    cut = result_value_token_spans(text, tokenizer)
    drop = set()
    for span in cut:
        drop.update(range(span.start, span.end))
    script = [t for i, t in enumerate(ids) if i not in drop]
    responses = {}
    names = []
    for i, node in enumerate(n for n in tree.walk() if n.tooluse is not None):
        responses[i] = node.tooluse.tool_result
        if node.tooluse.tool_name not in names:
            names.append(node.tooluse.tool_name)
    return Trace(script=script, tool_responses=responses, tool_names=names, text=text)


def save_traces(traces: list[Trace], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t in traces:
            f.write(t.to_json() + "\n")


def load_traces(path: str | Path) -> list[Trace]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(Trace.from_json(line))
    return out


# ---------------------------------------------------------------------------
# Mask-guided random generation
# ---------------------------------------------------------------------------

# Once over budget the walk picks the most closing admissible token; this
# order always makes progress toward Done from any reachable state.  The
# quote must come first: inside strings, brackets are ordinary content.
_CLOSE_PRIORITY = (
    b'"', b"}]", b"]", b"}", b'"conclusion":', b",", b"n", b"0", b"{", b"[",
)

_CONTENT = [bytes([b]) for b in range(0x61, 0x7B)] + [b" "]  # a-z and space


def random_mask_walk(tracker: Tracker, tokenizer: ByteTokenizer, seed: int,
                     budget: int = 120, max_tokens: int = 5000) -> list[int]:
    """Emit tokens chosen from the allowed mask until the document completes.

    Below the budget, choices are randomized with a mild preference for
    readable string content; past it, the walk steers toward closure.  Every
    emitted token is checked against the mask before feeding, so a
    completed walk certifies mask-then-feed consistency along its path.
    """
    rng = random.Random(seed)
    piece_of = tokenizer.piece
    close_ids = []
    for p in _CLOSE_PRIORITY:
        tid = tokenizer.piece_to_id.get(p)
        if tid is not None:
            close_ids.append(tid)
    content_ids = [tokenizer.piece_to_id[p] for p in _CONTENT]

    out: list[int] = []
    while not tracker.done:
        if len(out) >= max_tokens:
            raise RuntimeError("walk failed to terminate")
        mask = tracker.allowed_mask()
        if len(out) >= budget:
            tid = next((c for c in close_ids if mask.admits(c)), None)
            if tid is None:
                tid = min(i for i in mask.ids if len(piece_of(i)) == 1 and piece_of(i)[0] >= 0x20)
        else:
            easy = [c for c in content_ids if mask.admits(c)]
            if easy and rng.random() < 0.75:
                # inside strings mostly; end them at a humane length
                quote = tokenizer.piece_to_id[b'"']
                if mask.admits(quote) and rng.random() < 0.25:
                    tid = quote
                else:
                    tid = rng.choice(easy)
            else:
                tid = rng.choice(mask.ids)
        assert mask.admits(tid)
        tracker.feed(tid)
        out.append(tid)
    return out
