"""Tool registry and dispatcher.

Dispatch validates parameters against the tool's schema, then runs the
call on a worker thread (local mock callable or HTTP POST), so the
scheduler's stepping loop never blocks on tool latency.  Validation and
transport failures become Error outcomes that the runtime encodes into the
tool_result slot; they never crash a request.

Wire contract for HTTP tools: POST {"name": ..., "parameters": {...}} to
the endpoint; the response body is the raw JSON tool output.
"""

import json
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass

import jsonschema
import requests

from .schema import ToolSpec

DEFAULT_RESPONSE_CAP = 4096


class DuplicateTool(ValueError):
    pass


@dataclass
class ToolCall:
    request_id: str
    call_index: int
    tool_name: str
    parameters: dict
    dispatched_at: float = 0.0
    deadline: float = 0.0


@dataclass
class ToolResponse:
    request_id: str
    call_index: int
    ok: bool
    value: object = None
    error_kind: str | None = None
    error_message: str | None = None
    latency_ms: float = 0.0

    def result_value(self) -> object:
        """The JSON value to encode into the tool_result slot."""
        if self.ok:
            return self.value
        return {"error": f"{self.error_kind}: {self.error_message}"}


class Handle:
    """One in-flight call; poll() is nonblocking and reports Ready once."""

    def __init__(self, call: ToolCall, future: Future | None, immediate: ToolResponse | None = None):
        self.call = call
        self.future = future
        self.immediate = immediate
        self.consumed = False

    def poll(self) -> ToolResponse | None:
        if self.consumed:
            raise RuntimeError("handle already consumed")
        now = time.monotonic()
        if self.immediate is not None:
            self.consumed = True
            return self.immediate
        if self.future.done():
            self.consumed = True
            resp = self.future.result()
            resp.latency_ms = (now - self.call.dispatched_at) * 1000.0
            return resp
        if now > self.call.deadline:
            self.consumed = True
            self.future.cancel()
            return ToolResponse(
                self.call.request_id, self.call.call_index, ok=False,
                error_kind="Timeout",
                error_message=f"no response within {int((self.call.deadline - self.call.dispatched_at) * 1000)} ms",
                latency_ms=(now - self.call.dispatched_at) * 1000.0,
            )
        return None


class ToolHub:
    """Per-engine registry; dispatches concurrently with the stepping loop."""

    def __init__(self, max_workers: int = 8, response_cap: int = DEFAULT_RESPONSE_CAP):
        self._tools: dict[str, tuple[ToolSpec, object]] = {}
        self._executor: ThreadPoolExecutor | None = None
        self._dispatched: set[tuple[str, int]] = set()
        self._lock = threading.Lock()
        self._max_workers = max_workers
        self.response_cap = response_cap

    def register(self, spec: ToolSpec, impl=None) -> None:
        """Register a tool; impl(params, call_index) for local mocks, or
        None to POST to spec.endpoint."""
        with self._lock:
            if spec.name in self._tools:
                raise DuplicateTool(spec.name)
            self._tools[spec.name] = (spec, impl)

    def names(self) -> list[str]:
        return list(self._tools)

    def specs(self) -> list[ToolSpec]:
        return [spec for spec, _ in self._tools.values()]

    def _pool(self) -> ThreadPoolExecutor:
        if self._executor is None:
            self._executor = ThreadPoolExecutor(max_workers=self._max_workers)
        return self._executor

    def dispatch(self, call: ToolCall) -> Handle:
        key = (call.request_id, call.call_index)
        with self._lock:
            if key in self._dispatched:
                raise RuntimeError(f"duplicate dispatch for {key}")
            self._dispatched.add(key)

        entry = self._tools.get(call.tool_name)
        call.dispatched_at = time.monotonic()
        if entry is None:
            resp = ToolResponse(call.request_id, call.call_index, ok=False,
                                error_kind="UnknownTool", error_message=call.tool_name)
            return Handle(call, None, immediate=resp)
        spec, impl = entry
        call.deadline = call.dispatched_at + spec.timeout_ms / 1000.0
        try:
            jsonschema.validate(call.parameters, spec.param_schema)
        except jsonschema.ValidationError as e:
            resp = ToolResponse(call.request_id, call.call_index, ok=False,
                                error_kind="ParamsInvalid", error_message=e.message)
            return Handle(call, None, immediate=resp)

        if impl is not None:
            fut = self._pool().submit(self._run_local, impl, call)
        else:
            fut = self._pool().submit(self._run_http, spec, call)
        return Handle(call, fut)

    def _cap(self, value: object) -> object:
        text = json.dumps(value, separators=(",", ":"), ensure_ascii=False)
        if len(text.encode("utf-8")) <= self.response_cap:
            return value
        prefix = text[: self.response_cap // 2]
        return {"truncated": True, "prefix": prefix}

    def _run_local(self, impl, call: ToolCall) -> ToolResponse:
        try:
            value = impl(call.parameters, call.call_index)
        except Exception as e:  # mock raised: report, do not crash the loop
            return ToolResponse(call.request_id, call.call_index, ok=False,
                                error_kind="ServerError", error_message=str(e))
        return ToolResponse(call.request_id, call.call_index, ok=True, value=self._cap(value))

    def _run_http(self, spec: ToolSpec, call: ToolCall) -> ToolResponse:
        try:
            resp = requests.post(
                spec.endpoint,
                json={"name": call.tool_name, "parameters": call.parameters},
                timeout=max(spec.timeout_ms / 1000.0, 0.05),
            )
        except requests.RequestException as e:
            return ToolResponse(call.request_id, call.call_index, ok=False,
                                error_kind="ConnectionError", error_message=str(e))
        if resp.status_code != 200:
            return ToolResponse(call.request_id, call.call_index, ok=False,
                                error_kind="ServerError", error_message=f"status {resp.status_code}")
        try:
            value = resp.json()
        except ValueError as e:
            return ToolResponse(call.request_id, call.call_index, ok=False,
                                error_kind="NotJson", error_message=str(e))
        return ToolResponse(call.request_id, call.call_index, ok=True, value=self._cap(value))

    def shutdown(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=False, cancel_futures=True)
            self._executor = None


def poll(handle: Handle) -> ToolResponse | None:
    """Nonblocking check; returns the response exactly once when ready."""
    return handle.poll()


# ---------------------------------------------------------------------------
# Mock tools
# ---------------------------------------------------------------------------

def mock_tool(kind: str, name: str | None = None, *, latency_ms: int = 0,
              value: object = None, corpus: dict | None = None,
              responses: list | None = None, timeout_ms: int = 5000):
    """Build (ToolSpec, impl) for a mock.

    Kinds: ``echo`` returns the parameters; ``fixed_latency`` sleeps then
    returns ``value``; ``search_fixture`` returns top-k corpus docs for a
    query; ``failing`` simulates timeout or a server fault; ``scripted``
    replays ``responses`` by call index (trace replay).
    """
    name = name or kind

    if kind == "echo":
        spec = ToolSpec(name, "echoes its parameters", timeout_ms=timeout_ms)
        return spec, lambda params, i: params
    if kind == "fixed_latency":
        spec = ToolSpec(name, f"returns after {latency_ms} ms", timeout_ms=timeout_ms)

        def impl(params, i, _ms=latency_ms, _v=value):
            time.sleep(_ms / 1000.0)
            return _v
        return spec, impl
    if kind == "search_fixture":
        corpus = corpus or {}
        spec = ToolSpec(
            name, "fixture search",
            param_schema={
                "type": "object",
                "properties": {"q": {"type": "string"}, "k": {"type": "integer"}},
                "required": ["q"],
            },
            timeout_ms=timeout_ms,
        )

        def impl(params, i, _c=corpus):
            q = params["q"].lower()
            k = params.get("k", 3)
            scored = []
            for doc_id, text in _c.items():
                score = sum(1 for w in q.split() if w in str(text).lower())
                scored.append((-score, doc_id))
            scored.sort()
            return {"results": [{"id": d, "text": _c[d]} for _, d in scored[:k]]}
        return spec, impl
    if kind == "failing":
        mode = value or "timeout"
        spec = ToolSpec(name, f"always fails ({mode})", timeout_ms=timeout_ms)

        def impl(params, i, _mode=mode, _t=timeout_ms):
            if _mode == "timeout":
                time.sleep(_t / 1000.0 + 0.2)
                return {}
            raise RuntimeError("simulated tool fault")
        return spec, impl
    if kind == "scripted":
        spec = ToolSpec(name, "replays fixed responses", timeout_ms=timeout_ms)
        responses = responses or []

        def impl(params, i, _r=responses):
            return _r[i]
        return spec, impl
    raise ValueError(f"unknown mock kind {kind!r}")


def make_tool_server_app(impls: dict[str, object]):
    """FastAPI app speaking the tool wire contract, for integration tests."""
    from fastapi import FastAPI, HTTPException, Request

    app = FastAPI()

    @app.post("/")
    async def call(request: Request):
        body = await request.json()
        name = body.get("name")
        impl = impls.get(name)
        if impl is None:
            raise HTTPException(status_code=404, detail=f"unknown tool {name}")
        try:
            return impl(body.get("parameters") or {}, -1)
        except Exception as e:
            raise HTTPException(status_code=500, detail=str(e))

    return app
