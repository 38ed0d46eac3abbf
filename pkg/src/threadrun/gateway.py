"""HTTP front door: submit generations, stream events, read results.

POST /v1/generate            submit; stream=true yields newline-delimited
                             JSON events over a chunked response
GET  /v1/requests/{id}       status, and for terminal requests the full
                             document, reconstructed tree, and metrics
GET  /v1/health              pool and batch snapshot

A request's context is sent once; tool calls resolve inside the runtime,
so a multi-tool generation completes over a single connection with no
client-side message-list growth.
"""

from __future__ import annotations

import json
import threading
import time
from contextlib import asynccontextmanager

from fastapi import FastAPI, HTTPException
from fastapi.responses import StreamingResponse
from pydantic import BaseModel, Field

from .schema import InvalidTree, ToolSpec, parse_tree_text, task_to_obj, validate_tree
from .scheduler import Engine, PromptTooLong, QueueFull


class ToolSpecBody(BaseModel):
    name: str
    description: str = ""
    param_schema: dict = Field(default_factory=lambda: {"type": "object"})
    output_schema: dict = Field(default_factory=dict)
    endpoint: str = "mock:echo"
    timeout_ms: int = 5000


class Limits(BaseModel):
    max_output_tokens: int | None = None
    deadline_ms: int | None = None


class GenerateBody(BaseModel):
    system: str = ""
    prompt: str = ""
    tools: list[ToolSpecBody] = Field(default_factory=list)
    buffer_threshold: int | None = None
    stream: bool = False
    limits: Limits = Field(default_factory=Limits)


class EngineRunner:
    """Background thread driving the engine's stepping loop."""

    def __init__(self, engine: Engine):
        self.engine = engine
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self):
        if self._thread is None:
            self._thread = threading.Thread(target=self._loop, daemon=True)
            self._thread.start()

    def stop(self):
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2)
            self._thread = None

    def _loop(self):
        while not self._stop.is_set():
            report = self.engine.step()
            if report.active == 0:
                time.sleep(0.001)


def create_app(engine: Engine, run_engine: bool = True) -> FastAPI:
    runner = EngineRunner(engine)

    @asynccontextmanager
    async def lifespan(app):
        if run_engine:
            runner.start()
        yield
        runner.stop()

    app = FastAPI(title="threadrun", version="0.1.0", lifespan=lifespan)
    app.state.engine = engine
    app.state.runner = runner

    @app.post("/v1/generate")
    def generate(body: GenerateBody):
        if body.buffer_threshold is not None and body.buffer_threshold < 0:
            raise HTTPException(400, "buffer_threshold must be >= 0")
        names = [t.name for t in body.tools]
        if len(set(names)) != len(names):
            raise HTTPException(400, "tool names must be unique")
        tools = []
        for t in body.tools:
            try:
                spec = ToolSpec(**t.model_dump())
            except ValueError as e:
                raise HTTPException(400, str(e))
            tools.append(spec)
            if t.name not in engine.hub.names():
                engine.hub.register(spec)

        prompt = body.system + "\n" + body.prompt if body.system else body.prompt
        try:
            with engine._lock:
                rid = engine.submit(
                    prompt, tools,
                    threshold=body.buffer_threshold,
                    max_output_tokens=body.limits.max_output_tokens,
                )
                stream_q = engine.subscribe(rid) if body.stream else None
        except PromptTooLong as e:
            raise HTTPException(422, str(e))
        except QueueFull as e:
            raise HTTPException(429, str(e))

        if not body.stream:
            return {"request_id": rid}

        deadline = None
        if body.limits.deadline_ms:
            deadline = time.monotonic() + body.limits.deadline_ms / 1000.0

        def lines():
            yield json.dumps({"kind": "accepted", "offset": -1,
                              "payload": {"request_id": rid}}) + "\n"
            while True:
                try:
                    event = stream_q.get(timeout=0.25)
                except Exception:
                    if deadline is not None and time.monotonic() > deadline:
                        yield json.dumps({"kind": "deadline", "offset": -1,
                                          "payload": {"request_id": rid}}) + "\n"
                        return
                    continue
                yield json.dumps(event, separators=(",", ":"), ensure_ascii=False) + "\n"
                if event["kind"] in ("finished", "failed"):
                    return

        return StreamingResponse(lines(), media_type="application/x-ndjson")

    @app.get("/v1/requests/{rid}")
    def get_result(rid: str):
        with engine._lock:
            if rid not in engine.requests:
                raise HTTPException(404, f"unknown request {rid}")
            status = engine.status_of(rid)
            result = engine.result(rid)
        if result is None:
            return {"request_id": rid, "status": status}
        out = {"request_id": rid, "status": result["status"], "metrics": result["metrics"]}
        if result["status"] == "finished":
            out["text"] = result["text"]
            out["answer"] = result.get("answer", "")
            try:
                tree = parse_tree_text(result["text"])
                validate_tree(tree)
                out["tree"] = [task_to_obj(n) for n in tree.root_tasks]
            except InvalidTree:
                out["tree"] = None
        else:
            out["failure"] = result.get("failure")
            out["partial_text"] = result.get("partial_text")
        return out

    @app.get("/v1/health")
    def health():
        return engine.health()

    return app
