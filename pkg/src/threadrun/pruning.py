"""Fixed-size pruning buffer, eviction plans, and the KV-pruned metric.

When a subtask list completes it enters a FIFO buffer of capacity T (the
threshold).  Overflow pops the earliest list, producing a plan that evicts
the list's token span and re-encodes every retained token after it so
positions are reassigned and pages recycled.  A closing parent list absorbs
buffered child lists nested inside it (they would be evicted with the
parent anyway); the flag ``subsume=False`` keeps them queued individually
instead.
"""

from __future__ import annotations

from dataclasses import dataclass

from .paging import PageTable
from .schema import TokenSpan
from .tracker import SUBTASK_LIST_CLOSED, StructureEvent


class ZeroLength(ValueError):
    pass


class SpanOutOfRange(RuntimeError):
    pass


@dataclass
class PrunePlan:
    evict_spans: list[TokenSpan]
    reencode_from: int
    freed_token_count: int


@dataclass
class RequestMetrics:
    output_len: int = 0
    max_cache: int = 0
    position_high_water: int = 0
    tool_calls: int = 0
    pruned_tokens: int = 0

    @property
    def kv_pruned(self) -> float:
        if self.output_len <= 0:
            return 0.0
        return kv_pruned_pct(self.max_cache, self.output_len)

    def to_dict(self) -> dict:
        return {
            "output_len": self.output_len,
            "max_cache": self.max_cache,
            "kv_pruned": self.kv_pruned,
            "position_high_water": self.position_high_water,
            "tool_calls": self.tool_calls,
            "pruned_tokens": self.pruned_tokens,
        }


class PruneBuffer:
    """FIFO of completed subtask-list spans with capacity ``threshold``."""

    def __init__(self, threshold: int, subsume: bool = True):
        if threshold < 0:
            raise ValueError("threshold must be >= 0")
        self.threshold = threshold
        self.subsume = subsume
        self.entries: list[TokenSpan] = []

    def on_list_closed(self, span: TokenSpan) -> PrunePlan | None:
        """Admit a completed list; evict the earliest entry on overflow."""
        if self.subsume:
            self.entries = [e for e in self.entries if not span.contains(e)]
        self.entries.append(span)
        if self.subsume:
            assert all(
                self.entries[i].start < self.entries[i + 1].start
                for i in range(len(self.entries) - 1)
            ), "buffer entries out of start order"
        if len(self.entries) > self.threshold:
            victim = self.entries.pop(0)
            return PrunePlan([victim], victim.start, len(victim))
        return None


def coalesce(plans: list[PrunePlan]) -> PrunePlan:
    """Merge one step's plans into a single plan with disjoint sorted spans."""
    if not plans:
        raise ValueError("no plans to coalesce")
    spans = sorted((s for p in plans for s in p.evict_spans), key=lambda s: s.start)
    merged: list[TokenSpan] = []
    for s in spans:
        if merged and s.start <= merged[-1].end:
            if s.end > merged[-1].end:
                merged[-1] = TokenSpan(merged[-1].start, s.end)
        else:
            merged.append(s)
    return PrunePlan(merged, merged[0].start, sum(len(s) for s in merged))


def apply(
    plan: PrunePlan,
    table: PageTable,
    live: list[int],
    tokens: list[int],
) -> tuple[list[int], list[int], int, list[int]]:
    """Carry a plan out against one request's working memory.

    ``live`` is the working memory as sorted logical indices, aligned with
    the page table; ``tokens`` is the full logical sequence.  Returns
    (freed page ids, suffix token ids to re-encode, suffix start position,
    new live list).  Freed pages cover both the evicted spans and the
    retained suffix, whose tokens get fresh pages during re-encoding.
    """
    if len(live) != len(table):
        raise SpanOutOfRange("live list and page table desynchronized")
    for s in plan.evict_spans:
        if s.end > len(tokens):
            raise SpanOutOfRange(f"span [{s.start},{s.end}) beyond logical length {len(tokens)}")

    evict = set()
    for s in plan.evict_spans:
        evict.update(range(s.start, s.end))

    suffix_start = 0
    while suffix_start < len(live) and live[suffix_start] < plan.reencode_from:
        suffix_start += 1

    freed = table.truncate_from(suffix_start)
    new_live = live[:suffix_start] + [i for i in live[suffix_start:] if i not in evict]
    suffix_tokens = [tokens[i] for i in new_live[suffix_start:]]
    return freed, suffix_tokens, suffix_start, new_live


def kv_pruned_pct(max_cache: float, output_len: float) -> float:
    """1 - max_cache/output_len, clamped into [0, 1)."""
    if output_len <= 0:
        raise ZeroLength("output_len must be positive")
    value = 1.0 - max_cache / output_len
    if value < 0.0:
        return 0.0
    return min(value, 1.0 - 1e-12)


def oracle_evictions(
    events: list[StructureEvent],
    threshold: int,
    subsume: bool = True,
) -> list[TokenSpan]:
    """Brute-force replay of the pruning rule over a trace's event stream.

    Kept deliberately separate from PruneBuffer: a plain transcription of
    "push each completed list; past the threshold, pop and prune the
    earliest" used to arbitrate the runtime's eviction order.
    """
    queued: list[TokenSpan] = []
    order: list[TokenSpan] = []
    for ev in events:
        if ev.kind != SUBTASK_LIST_CLOSED:
            continue
        span = TokenSpan(ev.payload["span_start"], ev.payload["span_end"])
        if subsume:
            queued = [q for q in queued if not span.contains(q)]
        queued.append(span)
        if len(queued) > threshold:
            order.append(queued.pop(0))
    return order
