"""Reference oracles, independent of the incremental machinery they check.

The batch parser goes text -> tree -> re-serialization with byte markers,
so event offsets come from pure byte geometry rather than from the
tracker's automaton.  The remaining helpers are deliberately naive
(list surgery, linear scans) so they can arbitrate against the optimized
paths.
"""

from __future__ import annotations

from .schema import (
    Marker,
    ReasoningTree,
    TokenSpan,
    parse_tree_text,
    serialize_with_markers,
    token_boundaries,
    token_of,
)
from .tokenizer import ByteTokenizer
from .tracker import StructureEvent

# Marker kinds that correspond to tracker events (markers may grow extras).
EVENT_KINDS = {
    "TaskOpened", "ThoughtClosed", "ToolParamsReady", "ToolResultSlotOpened",
    "SubtaskListOpened", "SubtaskListClosed", "TaskClosed", "Done",
}


def batch_parse(text: str, tokenizer: ByteTokenizer):
    """Parse a canonical document and derive token-offset events.

    Returns (tree, token ids, events).  The tree carries token spans; event
    payloads are normalized to the tracker's payload shapes.
    """
    tree = parse_tree_text(text)
    round_trip, markers = serialize_with_markers(tree)
    if round_trip != text:
        raise ValueError("document is not in canonical form")
    ids = tokenizer.tokenize(text)
    bounds = token_boundaries(tokenizer, ids)

    def tok(byte_offset: int) -> int:
        return token_of(bounds, byte_offset)

    events = []
    for m in markers:
        if m.kind not in EVENT_KINDS:
            continue
        payload = None
        if m.kind == "SubtaskListClosed":
            payload = {
                "span_start": tok(m.payload["span_start_byte"]),
                "span_end": tok(m.payload["span_end_byte"] - 1) + 1,
            }
        elif m.kind in ("ToolParamsReady", "ToolResultSlotOpened"):
            payload = dict(m.payload)
        events.append(StructureEvent(m.kind, tok(m.byte_offset), m.depth, payload))

    _spans_to_tokens(tree, bounds)
    return tree, ids, events


def _spans_to_tokens(tree: ReasoningTree, bounds: list[int]) -> None:
    def conv(span: TokenSpan) -> TokenSpan:
        return TokenSpan(token_of(bounds, span.start), token_of(bounds, span.end - 1) + 1)

    for node in tree.walk():
        node.span = conv(node.span)
        node.thought_span = conv(node.thought_span)
        node.conclusion_span = conv(node.conclusion_span)
        if node.subtasks_span is not None:
            node.subtasks_span = conv(node.subtasks_span)


def result_value_token_spans(text: str, tokenizer: ByteTokenizer) -> list[TokenSpan]:
    """Token spans of each tool_result value, in document (call) order."""
    tree = parse_tree_text(text)
    _, markers = serialize_with_markers(tree)
    ids = tokenizer.tokenize(text)
    bounds = token_boundaries(tokenizer, ids)
    spans = []
    slot_end = None
    for m in markers:
        if m.kind == "ToolResultSlotOpened":
            slot_end = m.byte_offset + len('"tool_result":')
        elif m.kind == "ToolResultClosed":
            assert slot_end is not None
            spans.append(
                TokenSpan(token_of(bounds, slot_end), token_of(bounds, m.byte_offset) + 1)
            )
            slot_end = None
    return spans


def surgery(sequence: list, spans: list[TokenSpan]) -> list:
    """Delete span ranges from a logical sequence; naive reference."""
    drop = set()
    for s in spans:
        drop.update(range(s.start, s.end))
    return [x for i, x in enumerate(sequence) if i not in drop]


def masked_argmax(logits, allowed_ids) -> int:
    """Brute-force greedy pick: highest logit among allowed, lowest id ties."""
    best = None
    best_v = None
    for tid in sorted(allowed_ids):
        v = float(logits[tid])
        if best_v is None or v > best_v:
            best, best_v = tid, v
    if best is None:
        raise ValueError("empty mask")
    return best


def assert_marker_order(markers: list[Marker]) -> None:
    offs = [m.byte_offset for m in markers]
    assert offs == sorted(offs), "markers out of byte order"
