"""The HTTP gateway: one request, streamed events, tools handled inside.

Starts the service on a local port with a scripted backend and an echo
tool, POSTs a streaming generation, and prints the event lines as they
arrive.  The client sends its context exactly once; the tool round trip
happens runtime-side.
"""

import json
import threading
import time

import requests
import uvicorn

from threadrun import BatchConfig, Engine, ScriptedModel, ToolHub, create_app, mock_tool
from threadrun import build_tokenizer, random_tree
from threadrun.traces import Trace, make_trace

tok = build_tokenizer()
tree = random_tree(seed=11, max_depth=3, max_branching=3, tool_prob=0.6)
trace = make_trace(tree, tok)

hub = ToolHub()
for name in trace.tool_names:
    spec, impl = mock_tool("echo", name)
    hub.register(spec, impl)

engine = Engine(
    ScriptedModel(position_limit=4096),
    BatchConfig(buffer_threshold=1, position_limit=4096),
    hub=hub,
    script_provider=lambda prompt: Trace(script=trace.script, tool_responses={},
                                         tool_names=trace.tool_names),
)

server = uvicorn.Server(uvicorn.Config(create_app(engine), host="127.0.0.1",
                                       port=8972, log_level="error"))
thread = threading.Thread(target=server.run, daemon=True)
thread.start()
while not server.started:
    time.sleep(0.02)

base = "http://127.0.0.1:8972"
print("health:", requests.get(f"{base}/v1/health").json(), "\n")

body = {
    "system": "solve the task with the available tools",
    "prompt": "what does the corpus say?",
    "tools": [{"name": n} for n in trace.tool_names],
    "buffer_threshold": 1,
    "stream": True,
}
print("streaming events (tokens elided):")
rid = None
with requests.post(f"{base}/v1/generate", json=body, stream=True) as r:
    for line in r.iter_lines():
        event = json.loads(line)
        if event["kind"] == "accepted":
            rid = event["payload"]["request_id"]
        if event["kind"] == "token":
            continue
        print(f"  @{event['offset']:<5d} {event['kind']:<15s} "
              f"{json.dumps(event['payload'])[:90]}")
        if event["kind"] in ("finished", "failed"):
            break

doc = requests.get(f"{base}/v1/requests/{rid}").json()
print(f"\nfinal status: {doc['status']}")
print(f"answer:       {doc['answer']}")
print(f"metrics:      {doc['metrics']}")

server.should_exit = True
thread.join(timeout=3)
