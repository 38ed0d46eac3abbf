"""Recursive task-tree data model, canonical serialization, and generators.

A reasoning document is a JSON array of task objects.  Each task carries a
``thought``, an optional tool call (``tool_name`` / ``parameters`` /
``tool_result``, flattened into the task object in that order), an optional
``subtasks`` array of child tasks, and a ``conclusion``.  Canonical form has
no insignificant whitespace and minimal string escapes, so serialization is
bit-stable and round trips exactly.

``serialize_tree`` doubles as the reference byte-geometry oracle: when given
a tokenizer it records where every structural boundary lands in token space
(task opens/closes, subtask-list extents, keyword positions).  The structure
tracker is tested against these markers.
"""

from __future__ import annotations

import json
import random
import re
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path

from .tokenizer import ByteTokenizer

DEFAULT_DEPTH_LIMIT = 16

_NAME_RE = re.compile(r"^[A-Za-z0-9_.\-]+$")


class InvalidTree(ValueError):
    """Tree violates the schema's field-order or nesting invariants."""


@dataclass(frozen=True)
class TokenSpan:
    """Half-open range of logical token indices."""

    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start <= self.end):
            raise ValueError(f"bad span [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start

    def contains(self, other: "TokenSpan") -> bool:
        return self.start <= other.start and other.end <= self.end

    def overlaps(self, other: "TokenSpan") -> bool:
        return self.start < other.end and other.start < self.end

    def shift(self, delta: int) -> "TokenSpan":
        return TokenSpan(self.start + delta, self.end + delta)


@dataclass
class ToolSpec:
    """Description of a dispatchable tool."""

    name: str
    description: str = ""
    param_schema: dict = field(default_factory=lambda: {"type": "object"})
    output_schema: dict = field(default_factory=lambda: {})
    endpoint: str = "mock:echo"
    timeout_ms: int = 5000

    def __post_init__(self):
        if not _NAME_RE.match(self.name):
            raise ValueError(f"tool name must be an identifier: {self.name!r}")


@dataclass
class ToolUse:
    tool_name: str
    parameters: dict
    tool_result: object = None


@dataclass
class TaskNode:
    """One task: thought, optional tool use, optional subtasks, conclusion.

    ``depth`` and the span fields are derived bookkeeping and excluded from
    equality; structural equality covers field presence and contents only.
    """

    thought: str
    tooluse: ToolUse | None = None
    subtasks: list["TaskNode"] | None = None
    conclusion: str = ""
    depth: int = field(default=0, compare=False)
    span: TokenSpan | None = field(default=None, compare=False)
    subtasks_span: TokenSpan | None = field(default=None, compare=False)
    thought_span: TokenSpan | None = field(default=None, compare=False)
    conclusion_span: TokenSpan | None = field(default=None, compare=False)


@dataclass
class ReasoningTree:
    root_tasks: list[TaskNode]

    def walk(self):
        """Yield every task in document order."""
        stack = list(reversed(self.root_tasks))
        while stack:
            node = stack.pop()
            yield node
            if node.subtasks:
                stack.extend(reversed(node.subtasks))


def validate_tree(tree: ReasoningTree, depth_limit: int = DEFAULT_DEPTH_LIMIT) -> None:
    """Raise InvalidTree unless the tree satisfies all schema invariants."""
    if not tree.root_tasks:
        raise InvalidTree("tree has no root tasks")

    def check(node: TaskNode, depth: int):
        if depth > depth_limit:
            raise InvalidTree(f"task depth {depth} exceeds limit {depth_limit}")
        if not isinstance(node.thought, str):
            raise InvalidTree("thought must be a string")
        if not isinstance(node.conclusion, str) or not node.conclusion:
            raise InvalidTree("conclusion must be a non-empty string")
        if node.tooluse is not None:
            tu = node.tooluse
            if not _NAME_RE.match(tu.tool_name or ""):
                raise InvalidTree(f"bad tool name {tu.tool_name!r}")
            if not isinstance(tu.parameters, dict):
                raise InvalidTree("tool parameters must be a JSON object")
        if node.subtasks is not None:
            if not node.subtasks:
                raise InvalidTree("subtasks present but empty; omit instead")
            for child in node.subtasks:
                check(child, depth + 1)
        node.depth = depth

    for root in tree.root_tasks:
        check(root, 0)


# ---------------------------------------------------------------------------
# Canonical serialization with byte-geometry markers
# ---------------------------------------------------------------------------

# Marker kinds mirror the tracker's event names so tests can diff directly.
M_TASK_OPENED = "TaskOpened"
M_THOUGHT_CLOSED = "ThoughtClosed"
M_TOOL_PARAMS_READY = "ToolParamsReady"
M_TOOL_RESULT_SLOT = "ToolResultSlotOpened"
M_LIST_OPENED = "SubtaskListOpened"
M_LIST_CLOSED = "SubtaskListClosed"
M_TASK_CLOSED = "TaskClosed"
M_DONE = "Done"
# Extra geometry marker with no tracker-event counterpart.
M_RESULT_CLOSED = "ToolResultClosed"


@dataclass
class Marker:
    kind: str
    byte_offset: int
    depth: int
    node: TaskNode | None = None
    payload: dict | None = None


def _dump(value) -> str:
    return json.dumps(value, separators=(",", ":"), ensure_ascii=False)


class _Writer:
    """Emits canonical text while tracking byte offsets of boundaries."""

    def __init__(self):
        self.parts: list[str] = []
        self.nbytes = 0
        self.markers: list[Marker] = []

    def emit(self, text: str) -> int:
        """Append text, returning the byte offset where it starts."""
        at = self.nbytes
        self.parts.append(text)
        self.nbytes += len(text.encode("utf-8"))
        return at

    def mark(self, kind: str, byte_offset: int, depth: int, node=None, payload=None):
        self.markers.append(Marker(kind, byte_offset, depth, node, payload))

    def text(self) -> str:
        return "".join(self.parts)


def _write_task(w: _Writer, node: TaskNode, depth: int):
    open_at = w.emit("{")
    w.mark(M_TASK_OPENED, open_at, depth, node)

    w.emit('"thought":')
    thought_at = w.emit(_dump(node.thought))
    thought_end = w.nbytes
    w.mark(M_THOUGHT_CLOSED, thought_end - 1, depth, node)
    node.thought_span = TokenSpan(thought_at, thought_end)  # bytes; tokens later

    if node.tooluse is not None:
        tu = node.tooluse
        w.emit(',"tool_name":')
        w.emit(_dump(tu.tool_name))
        w.emit(',"parameters":')
        params_text = _dump(tu.parameters)
        if not params_text.startswith("{"):
            raise InvalidTree("tool parameters must serialize to a JSON object")
        w.emit(params_text)
        w.mark(
            M_TOOL_PARAMS_READY,
            w.nbytes - 1,
            depth,
            node,
            {"tool_name": tu.tool_name, "parameters_text": params_text},
        )
        w.emit(",")
        slot_at = w.emit('"tool_result":')
        w.mark(
            M_TOOL_RESULT_SLOT,
            slot_at,
            depth,
            node,
            {"tool_name": tu.tool_name, "parameters_text": params_text},
        )
        w.emit(_dump(tu.tool_result))
        w.mark(M_RESULT_CLOSED, w.nbytes - 1, depth, node)

    if node.subtasks:
        comma_at = w.emit(",")
        w.emit('"subtasks":')
        bracket_at = w.emit("[")
        w.mark(M_LIST_OPENED, bracket_at, depth + 1, node)
        for i, child in enumerate(node.subtasks):
            if i:
                w.emit(",")
            _write_task(w, child, depth + 1)
        close_at = w.emit("]")
        # Evictable extent: leading comma through closing bracket (bytes).
        w.mark(
            M_LIST_CLOSED,
            close_at,
            depth + 1,
            node,
            {"span_start_byte": comma_at, "span_end_byte": close_at + 1},
        )
        node.subtasks_span = TokenSpan(comma_at, close_at + 1)  # bytes; tokens later

    w.emit(',"conclusion":')
    concl_at = w.emit(_dump(node.conclusion))
    node.conclusion_span = TokenSpan(concl_at, w.nbytes)  # bytes; tokens later

    close_at = w.emit("}")
    w.mark(M_TASK_CLOSED, close_at, depth, node)
    node.span = TokenSpan(open_at, close_at + 1)  # bytes; tokens later
    node.depth = depth


def serialize_with_markers(tree: ReasoningTree) -> tuple[str, list[Marker]]:
    """Canonical text plus boundary markers at byte offsets."""
    validate_tree(tree)
    w = _Writer()
    w.emit("[")
    for i, root in enumerate(tree.root_tasks):
        if i:
            w.emit(",")
        _write_task(w, root, 0)
    end_at = w.emit("]")
    w.mark(M_DONE, end_at, 0)
    return w.text(), w.markers


def token_boundaries(tokenizer: ByteTokenizer, ids: list[int]) -> list[int]:
    """Cumulative byte offsets; entry i is where token i starts."""
    bounds = [0]
    for t in ids:
        bounds.append(bounds[-1] + len(tokenizer.piece(t)))
    return bounds


def token_of(bounds: list[int], byte_offset: int) -> int:
    """Index of the token whose piece contains the given byte."""
    return bisect_right(bounds, byte_offset) - 1


def serialize_tree(tree: ReasoningTree, tokenizer: ByteTokenizer | None = None) -> str:
    """Serialize to canonical JSON; with a tokenizer, populate token spans.

    Span fields on each node are rewritten from byte units to token units:
    ``span`` covers the task object, ``subtasks_span`` the evictable
    comma-through-bracket extent, and the thought/conclusion spans the
    string value tokens.
    """
    text, markers = serialize_with_markers(tree)
    if tokenizer is None:
        return text
    ids = tokenizer.tokenize(text)
    bounds = token_boundaries(tokenizer, ids)

    def to_tokens(byte_span: TokenSpan) -> TokenSpan:
        return TokenSpan(token_of(bounds, byte_span.start), token_of(bounds, byte_span.end - 1) + 1)

    for node in tree.walk():
        node.span = to_tokens(node.span)
        node.thought_span = to_tokens(node.thought_span)
        node.conclusion_span = to_tokens(node.conclusion_span)
        if node.subtasks_span is not None:
            node.subtasks_span = to_tokens(node.subtasks_span)
    return text


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOOL_KEYS = ["tool_name", "parameters", "tool_result"]


def _task_from_obj(obj: dict, depth: int) -> TaskNode:
    if not isinstance(obj, dict):
        raise InvalidTree(f"task must be an object, got {type(obj).__name__}")
    keys = list(obj.keys())
    if not keys or keys[0] != "thought" or keys[-1] != "conclusion":
        raise InvalidTree(f"task keys out of order: {keys}")
    middle = keys[1:-1]
    expected = []
    if middle[:3] == _TOOL_KEYS:
        expected.extend(_TOOL_KEYS)
    if len(middle) > len(expected):
        expected.append("subtasks")
    if middle != expected:
        raise InvalidTree(f"unexpected task keys: {keys}")

    tooluse = None
    if "tool_name" in obj:
        tooluse = ToolUse(obj["tool_name"], obj["parameters"], obj["tool_result"])
    subtasks = None
    if "subtasks" in obj:
        raw = obj["subtasks"]
        if not isinstance(raw, list) or not raw:
            raise InvalidTree("subtasks must be a non-empty array")
        subtasks = [_task_from_obj(child, depth + 1) for child in raw]
    return TaskNode(
        thought=obj["thought"],
        tooluse=tooluse,
        subtasks=subtasks,
        conclusion=obj["conclusion"],
        depth=depth,
    )


def parse_tree_text(text: str) -> ReasoningTree:
    """Parse canonical document text back into a tree (strict key order)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise InvalidTree(f"not valid JSON: {e}") from e
    if not isinstance(doc, list) or not doc:
        raise InvalidTree("document root must be a non-empty task array")
    tree = ReasoningTree([_task_from_obj(obj, 0) for obj in doc])
    validate_tree(tree)
    return tree


def task_to_obj(node: TaskNode) -> dict:
    """Plain dict in canonical key order (insertion order preserved)."""
    d: dict = {"thought": node.thought}
    if node.tooluse is not None:
        d["tool_name"] = node.tooluse.tool_name
        d["parameters"] = node.tooluse.parameters
        d["tool_result"] = node.tooluse.tool_result
    if node.subtasks:
        d["subtasks"] = [task_to_obj(c) for c in node.subtasks]
    d["conclusion"] = node.conclusion
    return d


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

_WORDS = (
    "check", "the", "bound", "first", "then", "split", "cases", "combine",
    "series", "root", "apply", "lemma", "reduce", "term", "solve", "verify",
    "count", "pairs", "sum", "limit", "holds", "final", "answer", "step",
)

# Occasionally exercise escaping and multi-byte text.
_SPICY_WORDS = ('say "hi"', "a\\b", "café", "line\nbreak", "tab\there")


def _phrase(rng: random.Random, lo: int = 2, hi: int = 6) -> str:
    n = rng.randint(lo, hi)
    words = [rng.choice(_WORDS) for _ in range(n)]
    if rng.random() < 0.08:
        words[rng.randrange(n)] = rng.choice(_SPICY_WORDS)
    return " ".join(words)


def _random_params(rng: random.Random) -> dict:
    kind = rng.randrange(3)
    if kind == 0:
        return {"q": _phrase(rng, 1, 3)}
    if kind == 1:
        return {"x": rng.randint(-50, 50), "y": rng.randint(0, 9)}
    return {"q": rng.choice(_WORDS), "k": rng.randint(1, 5), "deep": {"f": rng.random() < 0.5}}


def random_tree(
    seed: int,
    max_depth: int,
    max_branching: int,
    tool_prob: float = 0.0,
    tool_names: tuple[str, ...] = ("search", "calc"),
) -> ReasoningTree:
    """Deterministic random tree within the given depth/branching bounds.

    When branching allows, one spine path always reaches max_depth so depth
    bounds are exercised, not just permitted.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    rng = random.Random(seed)

    def build(depth: int, spine: bool) -> TaskNode:
        node = TaskNode(thought=_phrase(rng), conclusion=_phrase(rng))
        if tool_prob > 0 and rng.random() < tool_prob:
            params = _random_params(rng)
            node.tooluse = ToolUse(rng.choice(tool_names), params, dict(params))
        can_recurse = max_branching >= 1 and depth + 1 < max_depth
        if can_recurse and (spine or rng.random() < 0.55):
            k = rng.randint(1, max_branching)
            node.subtasks = [build(depth + 1, spine and i == 0) for i in range(k)]
        return node

    n_roots = 1 if max_branching < 1 else rng.randint(1, max_branching)
    roots = [build(0, i == 0) for i in range(n_roots)]
    tree = ReasoningTree(roots)
    validate_tree(tree)
    return tree


def deep_recursion_tree(levels: int, branching: int, seed: int = 0,
                        text_chars: int = 1) -> ReasoningTree:
    """Full recursion tree with terse texts, for long-horizon traces.

    Total token count grows as branching**levels while the live working
    memory under pruning stays proportional to levels * branching, so these
    traces generate far beyond the position limit.
    """
    rng = random.Random(seed)
    letters = "abcdefghijklmnopqrstuvwxyz"

    def text() -> str:
        return "".join(rng.choice(letters) for _ in range(text_chars))

    def build(depth: int) -> TaskNode:
        node = TaskNode(thought=text(), conclusion=text())
        if depth + 1 < levels:
            node.subtasks = [build(depth + 1) for _ in range(branching)]
        return node

    tree = ReasoningTree([build(0)])
    validate_tree(tree)
    return tree


def tool_chain_tree(
    n_calls: int,
    tool_name: str = "echo",
    payload_words: int = 12,
    seed: int = 0,
) -> ReasoningTree:
    """Sequential tool calls, each inside its own prunable subtask list.

    Each root task spawns one child that calls the tool; the child list
    completes immediately after, so with a small buffer every call's tokens
    (parameters and response) leave working memory before the next call.
    Tool results equal the parameters, matching an echo tool.
    """
    rng = random.Random(seed)
    roots = []
    for i in range(n_calls):
        params = {"q": " ".join(rng.choice(_WORDS) for _ in range(payload_words)), "i": i}
        child = TaskNode(
            thought=rng.choice(_WORDS),
            tooluse=ToolUse(tool_name, params, dict(params)),
            conclusion=rng.choice(_WORDS),
        )
        roots.append(TaskNode(thought=rng.choice(_WORDS), subtasks=[child], conclusion=rng.choice(_WORDS)))
    tree = ReasoningTree(roots)
    validate_tree(tree)
    return tree


# ---------------------------------------------------------------------------
# Corpus files: one JSON tree per line
# ---------------------------------------------------------------------------

def save_corpus(trees: list[ReasoningTree], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for tree in trees:
            f.write(serialize_tree(tree) + "\n")


def load_corpus(path: str | Path) -> list[ReasoningTree]:
    trees = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                trees.append(parse_tree_text(line))
    return trees
