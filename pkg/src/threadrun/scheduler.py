"""Continuous-batching decode loop over pruned working memories.

Each step advances every decoding request by one forward: any due prune
plan is carried out first (pages freed, retained suffix queued for
re-encoding), then one extension batch encodes the re-encode suffix plus
all tokens awaiting their first encode (the sampled frontier token and any
inserted tool-response tokens), and the logits select the next token under
the grammar mask.  Requests waiting on tools are parked without stalling
the rest of the batch; their responses are tokenized and join the encode
queue when they arrive.

Positions are recycled: the next position always equals the working-memory
length, so total generation is bounded by the position limit only through
the peak working-memory size, not the output length.
"""

from __future__ import annotations

import itertools
import json
import logging
import os
import queue
import threading
import time
from dataclasses import dataclass, field
from enum import Enum

from . import pruning
from .model import EmptyMask, PositionOverflow, sample
from .paging import OutOfPages, PageTable
from .pruning import PruneBuffer, PrunePlan, RequestMetrics
from .schema import DEFAULT_DEPTH_LIMIT, TokenSpan, ToolSpec, parse_tree_text
from .toolhub import Handle, ToolCall, ToolHub, ToolResponse
from .tokenizer import ByteTokenizer, build_tokenizer
from .tracker import (
    DONE,
    Rejected,
    SUBTASK_LIST_CLOSED,
    TASK_OPENED,
    TOOL_RESULT_SLOT_OPENED,
    ThreadGrammar,
)

logger = logging.getLogger("threadrun")
if os.environ.get("THREADRUN_LOG"):
    logging.basicConfig(level=os.environ["THREADRUN_LOG"].upper())


class PromptTooLong(ValueError):
    pass


class QueueFull(RuntimeError):
    pass


class Deadline(RuntimeError):
    def __init__(self, partial):
        super().__init__("deadline reached with requests still active")
        self.partial = partial


class ScriptError(RuntimeError):
    pass


class TokenLimit(RuntimeError):
    pass


# Per-request failures; they never touch other requests in the batch.
_FAULTS = (PositionOverflow, EmptyMask, Rejected, ScriptError, TokenLimit)


class Status(str, Enum):
    QUEUED = "queued"
    DECODING = "decoding"
    AWAITING_TOOL = "awaiting_tool"
    EXTENDING = "extending"
    FINISHED = "finished"
    FAILED = "failed"


TERMINAL = (Status.FINISHED, Status.FAILED)


@dataclass
class BatchConfig:
    max_batch: int = 8
    buffer_threshold: int = 1
    position_limit: int = 256
    pool_pages: int = 0          # 0: max_batch * position_limit
    step_deadline_ms: int = 0    # informational watchdog; 0 disables
    max_queue: int = 64
    starvation_steps: int = 50
    depth_limit: int = DEFAULT_DEPTH_LIMIT
    subsume: bool = True
    check_masks: bool = True
    max_output_tokens: int = 200_000

    def __post_init__(self):
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")


@dataclass
class StepReport:
    step: int
    active: int
    awaiting_tool: int
    finished: int
    failed: int
    pages_free: int
    flops_units: int
    request_live: dict = field(default_factory=dict)
    decoded: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "step": self.step, "active": self.active,
            "awaiting_tool": self.awaiting_tool, "finished": self.finished,
            "pages_free": self.pages_free, "flops_units": self.flops_units,
        }, separators=(",", ":"))


def attention_flops_estimate(report: StepReport) -> int:
    """Attention cost of the step in token-visibility units."""
    return report.flops_units


class RequestState:
    def __init__(self, rid: str, prompt_tokens: list[int], tools: list[ToolSpec],
                 grammar: ThreadGrammar, threshold: int, subsume: bool,
                 max_output_tokens: int):
        self.rid = rid
        self.prompt_tokens = prompt_tokens
        self.logical: list[int] = list(prompt_tokens)
        self.pending: list[int] = []      # logical indices awaiting first encode
        self.live: list[int] = []         # encoded, retained logical indices
        self.table = PageTable(rid)
        self.tools = tools
        self.grammar = grammar
        self.tracker = grammar.tracker()
        self.buffer = PruneBuffer(threshold, subsume=subsume)
        self.plans: list[PrunePlan] = []
        self.status = Status.QUEUED
        self.failure: str | None = None
        self.metrics = RequestMetrics()
        self.script: list[int] | None = None
        self.script_pos = 0
        self.tool_responses_override: dict[int, object] | None = None
        self.pending_tool: Handle | None = None
        self.max_output_tokens = max_output_tokens
        self.starved_steps = 0
        self.eviction_log: list[TokenSpan] = []   # generation-relative, pop order
        self.applied_spans: list[TokenSpan] = []  # logical, application order
        self.transitions: list[str] = [Status.QUEUED.value]
        self.subscribers: list[queue.Queue] = []
        self.first_encoded: set[int] = set()
        self.last_logits = None

    # -- helpers -----------------------------------------------------------

    @property
    def prompt_len(self) -> int:
        return len(self.prompt_tokens)

    @property
    def encoded_count(self) -> int:
        return len(self.logical) - len(self.pending)

    def set_status(self, status: Status):
        if status != self.status:
            self.status = status
            self.transitions.append(status.value)

    def emit(self, kind: str, offset: int, payload=None):
        event = {"kind": kind, "offset": offset, "payload": payload}
        for q in self.subscribers:
            q.put(event)

    def generated_tokens(self) -> list[int]:
        return self.logical[self.prompt_len:]


class Engine:
    """One stepping loop owning all request mutation."""

    def __init__(self, backend, config: BatchConfig | None = None,
                 tokenizer: ByteTokenizer | None = None, hub: ToolHub | None = None,
                 script_provider=None):
        self.backend = backend
        self.config = config or BatchConfig()
        # With a replay backend, maps a submitted prompt to its trace
        # (an object carrying .script and .tool_responses).
        self.script_provider = script_provider
        if self.config.position_limit != backend.position_limit:
            raise ValueError(
                f"config position_limit {self.config.position_limit} != backend's "
                f"{backend.position_limit}")
        self.tokenizer = tokenizer or build_tokenizer()
        self.hub = hub or ToolHub()
        pages = self.config.pool_pages or self.config.max_batch * self.config.position_limit
        self.pool = backend.make_pool(pages)
        self.requests: dict[str, RequestState] = {}
        self.queue: list[str] = []
        self.results: dict[str, dict] = {}
        self.step_index = 0
        self._ids = itertools.count()
        self._grammars: dict[tuple, ThreadGrammar] = {}
        self._lock = threading.RLock()

    # -- submission ----------------------------------------------------------

    def _grammar_for(self, tools: list[ToolSpec]) -> ThreadGrammar:
        key = (tuple(sorted(t.name for t in tools)), self.config.depth_limit)
        g = self._grammars.get(key)
        if g is None:
            g = ThreadGrammar(tools, self.config.depth_limit, self.tokenizer)
            self._grammars[key] = g
        return g

    def submit(self, prompt, tools: list[ToolSpec] | tuple = (), *,
               threshold: int | None = None, script: list[int] | None = None,
               tool_responses: dict[int, object] | None = None,
               max_output_tokens: int | None = None,
               subsume: bool | None = None) -> str:
        with self._lock:
            if isinstance(prompt, (str, bytes)):
                prompt_tokens = self.tokenizer.tokenize(prompt)
            else:
                prompt_tokens = list(prompt)
            if script is None and self.script_provider is not None:
                trace = self.script_provider(prompt)
                if trace is not None:
                    script = list(trace.script)
                    if tool_responses is None and trace.tool_responses:
                        tool_responses = dict(trace.tool_responses)
            if len(prompt_tokens) >= self.config.position_limit:
                raise PromptTooLong(
                    f"prompt of {len(prompt_tokens)} tokens >= limit {self.config.position_limit}")
            if len(self.queue) >= self.config.max_queue:
                raise QueueFull(f"queue at capacity {self.config.max_queue}")
            rid = f"r{next(self._ids)}"
            req = RequestState(
                rid, prompt_tokens, list(tools), self._grammar_for(list(tools)),
                self.config.buffer_threshold if threshold is None else threshold,
                self.config.subsume if subsume is None else subsume,
                max_output_tokens or self.config.max_output_tokens,
            )
            req.script = list(script) if script is not None else None
            req.tool_responses_override = tool_responses
            self.requests[rid] = req
            self.queue.append(rid)
            return rid

    def subscribe(self, rid: str) -> queue.Queue:
        with self._lock:
            q: queue.Queue = queue.Queue()
            self.requests[rid].subscribers.append(q)
            return q

    # -- stepping ------------------------------------------------------------

    def _active_count(self) -> int:
        return sum(1 for r in self.requests.values()
                   if r.status in (Status.DECODING, Status.AWAITING_TOOL, Status.EXTENDING))

    def step(self) -> StepReport:
        with self._lock:
            return self._step_locked()

    def _step_locked(self) -> StepReport:
        flops = 0
        decoded: dict[str, int] = {}
        parked: list[RequestState] = []

        # Admit queued requests while batch slots remain.
        while self.queue and self._active_count() < self.config.max_batch:
            req = self.requests[self.queue[0]]
            try:
                flops += self._activate(req)
            except OutOfPages:
                req.starved_steps += 1
                parked.append(req)
                break
            except _FAULTS as e:
                self._fail(req, f"{type(e).__name__}: {e}")
            self.queue.pop(0)

        # Deliver finished tool calls.
        for req in list(self.requests.values()):
            if req.pending_tool is not None:
                resp = req.pending_tool.poll()
                if resp is not None:
                    req.pending_tool = None
                    try:
                        self._integrate(req, resp)
                    except _FAULTS as e:
                        self._fail(req, f"{type(e).__name__}: {e}")

        # Advance decoders.
        for req in list(self.requests.values()):
            if req.status is not Status.DECODING:
                continue
            try:
                before = len(req.first_encoded)
                flops += self._advance(req)
                decoded[req.rid] = len(req.first_encoded) - before
                req.starved_steps = 0
            except OutOfPages:
                req.starved_steps += 1
                parked.append(req)
            except _FAULTS as e:
                self._fail(req, f"{type(e).__name__}: {e}")

        self._detect_starvation(parked)

        self.step_index += 1
        statuses = [r.status for r in self.requests.values()]
        report = StepReport(
            step=self.step_index,
            active=sum(s is Status.DECODING for s in statuses),
            awaiting_tool=sum(s is Status.AWAITING_TOOL for s in statuses),
            finished=sum(s is Status.FINISHED for s in statuses),
            failed=sum(s is Status.FAILED for s in statuses),
            pages_free=self.pool.free_count,
            flops_units=flops,
            request_live={r.rid: len(r.live) for r in self.requests.values()
                          if r.status not in TERMINAL},
            decoded=decoded,
        )
        logger.debug("step %s", report.to_json())
        return report

    def _detect_starvation(self, parked: list["RequestState"]):
        over = [r for r in parked if r.starved_steps > self.config.starvation_steps]
        if over:
            victim = max(over, key=lambda r: len(r.live))
            self._fail(victim, "OutOfPages: starved past deadlock limit")

    # -- request lifecycle -----------------------------------------------------

    def _activate(self, req: RequestState) -> int:
        logits = None
        flops = 0
        if req.prompt_tokens:
            positions = list(range(len(req.prompt_tokens)))
            logits = self.backend.prefill(req.prompt_tokens, positions, req.table, self.pool)
            req.live = list(range(len(req.prompt_tokens)))
            for i, p in enumerate(positions):
                flops += p + 1
                req.first_encoded.add(i)
            self._touch_memory(req)
        req.set_status(Status.DECODING)
        self._select_next(req, logits)
        return flops

    def _advance(self, req: RequestState) -> int:
        """Apply due prunes, run one extension forward, select the next token."""
        self._apply_due_plans(req)
        flops = 0

        assert req.pending, "decoding request with empty encode queue"
        batch_idx = req.pending
        batch_tokens = [req.logical[i] for i in batch_idx]
        start = len(req.live)
        if start + len(batch_tokens) > self.backend.position_limit:
            raise PositionOverflow(start + len(batch_tokens) - 1, self.backend.position_limit)

        logits = self.backend.extend(batch_tokens, start, req.table, self.pool)
        req.last_logits = logits
        for i, idx in enumerate(batch_idx):
            if idx not in req.first_encoded:
                flops += start + i + 1
                req.first_encoded.add(idx)
        req.live = req.live + batch_idx
        req.pending = []
        self._touch_memory(req)

        self._select_next(req, logits)
        return flops

    def _apply_due_plans(self, req: RequestState) -> None:
        # A plan becomes due once its spans are fully materialized in cache;
        # the list-closing token itself is still pending when the plan is
        # created, so a self-evicting plan (threshold 0) waits one step.
        due = [p for p in req.plans
               if max(s.end for s in p.evict_spans) <= req.encoded_count]
        if not due:
            return
        req.plans = [p for p in req.plans if p not in due]
        plan = pruning.coalesce(due)
        offset = req.encoded_count - req.prompt_len
        freed, _suffix_tokens, suffix_start, new_live = pruning.apply(
            plan, req.table, req.live, req.logical)
        self.pool.free(freed)
        pruned = len(req.live) - len(new_live)
        req.metrics.pruned_tokens += pruned
        req.applied_spans.extend(plan.evict_spans)
        # Re-encode suffix joins the front of the encode queue (Eq. 1 batch).
        suffix_idx = new_live[suffix_start:]
        req.pending = suffix_idx + req.pending
        req.live = new_live[:suffix_start]
        req.emit("subtask_pruned", offset, {
            "spans": [[s.start - req.prompt_len, s.end - req.prompt_len]
                      for s in plan.evict_spans],
            "pruned_tokens": pruned,
            "reencoded": len(suffix_idx),
        })

    def _select_next(self, req: RequestState, logits) -> None:
        mask = None
        if req.script is None or self.config.check_masks:
            mask = req.tracker.allowed_mask()
        if req.script is not None:
            if req.script_pos >= len(req.script):
                raise ScriptError("script exhausted before document completed")
            tid = req.script[req.script_pos]
            req.script_pos += 1
            if mask is not None and not mask.admits(tid):
                raise ScriptError(
                    f"scripted token {tid} ({self.tokenizer.piece(tid)!r}) not admitted")
        else:
            if logits is None:
                raise ScriptError("model backend produced no logits to sample from")
            tid = sample(logits, mask)

        offset = len(req.logical) - req.prompt_len
        req.logical.append(tid)
        req.pending.append(len(req.logical) - 1)
        req.metrics.output_len += 1
        req.emit("token", offset, {
            "token_id": tid,
            "piece": self.tokenizer.piece(tid).decode("utf-8", "replace"),
        })
        if req.metrics.output_len > req.max_output_tokens:
            raise TokenLimit(f"output exceeded {req.max_output_tokens} tokens")

        for event in req.tracker.feed(tid):
            self._handle_event(req, event)

    def _handle_event(self, req: RequestState, event) -> None:
        if event.kind == TASK_OPENED:
            req.emit("task_opened", event.offset, {"depth": event.depth})
        elif event.kind == SUBTASK_LIST_CLOSED:
            span = TokenSpan(event.payload["span_start"] + req.prompt_len,
                             event.payload["span_end"] + req.prompt_len)
            plan = req.buffer.on_list_closed(span)
            if plan is not None:
                req.plans.append(plan)
                req.eviction_log.extend(
                    TokenSpan(s.start - req.prompt_len, s.end - req.prompt_len)
                    for s in plan.evict_spans)
        elif event.kind == TOOL_RESULT_SLOT_OPENED:
            self._dispatch_tool(req, event)
        elif event.kind == DONE:
            self._finish(req)

    def _dispatch_tool(self, req: RequestState, event) -> None:
        call_index = req.metrics.tool_calls
        req.metrics.tool_calls += 1
        name = event.payload["tool_name"]
        params = json.loads(event.payload["parameters_text"])
        req.emit("tool_call", event.offset,
                 {"call_index": call_index, "tool_name": name, "parameters": params})
        call = ToolCall(req.rid, call_index, name, params)
        if req.tool_responses_override is not None:
            value = req.tool_responses_override.get(call_index)
            resp = ToolResponse(req.rid, call_index, ok=True, value=value)
            req.pending_tool = Handle(call, None, immediate=resp)
        else:
            req.pending_tool = self.hub.dispatch(call)
        req.set_status(Status.AWAITING_TOOL)

    def _integrate(self, req: RequestState, resp: ToolResponse) -> None:
        """Tokenize a tool response into the result slot and resume decoding."""
        if req.status in TERMINAL:
            logger.info("dropping tool response for terminal request %s", req.rid)
            return
        req.set_status(Status.EXTENDING)
        value = resp.result_value()
        if _json_depth(value) > req.grammar.json_depth_limit - 1:
            value = {"error": "tool response exceeds nesting limit"}
        text = json.dumps(value, separators=(",", ":"), ensure_ascii=False)
        ids = self.tokenizer.tokenize(text)
        offset = len(req.logical) - req.prompt_len
        for tid in ids:
            req.logical.append(tid)
            req.pending.append(len(req.logical) - 1)
            for event in req.tracker.feed(tid):
                self._handle_event(req, event)
        req.metrics.output_len += len(ids)
        req.emit("tool_response", offset,
                 {"call_index": resp.call_index, "value": value, "ok": resp.ok,
                  "latency_ms": resp.latency_ms})
        if req.status is Status.EXTENDING:
            req.set_status(Status.DECODING)

    def integrate_tool_response(self, rid: str, value: object) -> None:
        """Directly deliver a JSON response to an awaiting request."""
        with self._lock:
            req = self.requests[rid]
            if req.status in TERMINAL:
                logger.info("dropping late response for %s", rid)
                return
            if req.status is not Status.AWAITING_TOOL:
                raise RuntimeError(f"request {rid} is not awaiting a tool")
            req.pending_tool = None
            self._integrate(req, ToolResponse(rid, req.metrics.tool_calls - 1, ok=True, value=value))

    def _touch_memory(self, req: RequestState) -> None:
        n = len(req.live)
        if n > req.metrics.max_cache:
            req.metrics.max_cache = n
        if n > req.metrics.position_high_water:
            req.metrics.position_high_water = n
        assert len(req.live) == len(req.table), "live list desynchronized from page table"

    def _finish(self, req: RequestState) -> None:
        self.pool.free(req.table.truncate_from(0))
        req.live = []
        req.set_status(Status.FINISHED)
        text = self.tokenizer.detokenize_text(req.generated_tokens())
        self.results[req.rid] = {
            "status": Status.FINISHED.value,
            "text": text,
            "metrics": req.metrics.to_dict(),
        }
        req.emit("finished", len(req.logical) - req.prompt_len, {
            "answer": _answer_of(text),
            "metrics": req.metrics.to_dict(),
        })

    def _fail(self, req: RequestState, reason: str) -> None:
        if req.status in TERMINAL:
            return
        self.pool.free(req.table.truncate_from(0))
        req.live = []
        req.failure = reason
        req.set_status(Status.FAILED)
        partial = self.tokenizer.detokenize(req.generated_tokens()).decode("utf-8", "replace")
        self.results[req.rid] = {
            "status": Status.FAILED.value,
            "failure": reason,
            "partial_text": partial,
            "metrics": req.metrics.to_dict(),
        }
        req.emit("failed", len(req.logical) - req.prompt_len, {"reason": reason})
        logger.warning("request %s failed: %s", req.rid, reason)

    # -- results ----------------------------------------------------------------

    def result(self, rid: str) -> dict | None:
        with self._lock:
            out = self.results.get(rid)
            if out is None:
                return None
            out = dict(out)
            if out["status"] == Status.FINISHED.value:
                out["answer"] = _answer_of(out["text"])
            return out

    def status_of(self, rid: str) -> str:
        with self._lock:
            return self.requests[rid].status.value

    def all_terminal(self) -> bool:
        with self._lock:
            return all(r.status in TERMINAL for r in self.requests.values()) and not self.queue

    def run_until_done(self, deadline_s: float | None = None) -> list[tuple[str, dict]]:
        start = time.monotonic()
        while not self.all_terminal():
            report = self.step()
            if deadline_s is not None and time.monotonic() - start > deadline_s:
                raise Deadline([(rid, self.result(rid)) for rid in self.requests])
            if report.active == 0 and report.awaiting_tool > 0:
                time.sleep(0.0005)
        return [(rid, self.result(rid)) for rid in self.requests]

    def health(self) -> dict:
        with self._lock:
            return {
                "pool": self.pool.snapshot(),
                "queued": len(self.queue),
                "active": self._active_count(),
                "finished": sum(1 for r in self.requests.values() if r.status is Status.FINISHED),
                "failed": sum(1 for r in self.requests.values() if r.status is Status.FAILED),
                "step": self.step_index,
            }


def _answer_of(text: str) -> str:
    try:
        tree = parse_tree_text(text)
        return tree.root_tasks[-1].conclusion
    except Exception:
        return ""


def _json_depth(value, depth: int = 0) -> int:
    if isinstance(value, dict):
        return max([depth + 1] + [_json_depth(v, depth + 1) for v in value.values()])
    if isinstance(value, list):
        return max([depth + 1] + [_json_depth(v, depth + 1) for v in value])
    return depth
