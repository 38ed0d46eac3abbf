"""Desk-scale runtime for decoding recursive reasoning trees.

Grammar-constrained decoding over a task-tree JSON dialect, a page-size-1
KV cache whose completed-subtask pages are pruned through a fixed-size
buffer and re-encoded to recycle positions, and in-runtime tool calls that
never stall the decode batch.
"""

__version__ = "0.1.0"

from .tokenizer import ByteTokenizer, build_tokenizer
from .schema import (
    InvalidTree,
    ReasoningTree,
    TaskNode,
    TokenSpan,
    ToolSpec,
    ToolUse,
    deep_recursion_tree,
    parse_tree_text,
    random_tree,
    serialize_tree,
    tool_chain_tree,
    validate_tree,
)
from .tracker import Rejected, StructureEvent, ThreadGrammar, TokenMask, Tracker
from .paging import KvPage, OutOfPages, PagePool, PageTable, gather
from .pruning import PruneBuffer, PrunePlan, RequestMetrics, kv_pruned_pct, oracle_evictions
from .model import ModelConfig, ScriptedModel, TinyTransformer, sample
from .toolhub import ToolCall, ToolHub, ToolResponse, mock_tool
from .scheduler import BatchConfig, Engine, Status, attention_flops_estimate
from .traces import Trace, make_trace, random_mask_walk
from .gateway import create_app

__all__ = [
    "ByteTokenizer",
    "build_tokenizer",
    "InvalidTree",
    "ReasoningTree",
    "TaskNode",
    "TokenSpan",
    "ToolSpec",
    "ToolUse",
    "deep_recursion_tree",
    "parse_tree_text",
    "random_tree",
    "serialize_tree",
    "tool_chain_tree",
    "validate_tree",
    "Rejected",
    "StructureEvent",
    "ThreadGrammar",
    "TokenMask",
    "Tracker",
    "KvPage",
    "OutOfPages",
    "PagePool",
    "PageTable",
    "gather",
    "PruneBuffer",
    "PrunePlan",
    "RequestMetrics",
    "kv_pruned_pct",
    "oracle_evictions",
    "ModelConfig",
    "ScriptedModel",
    "TinyTransformer",
    "sample",
    "ToolCall",
    "ToolHub",
    "ToolResponse",
    "mock_tool",
    "BatchConfig",
    "Engine",
    "Status",
    "attention_flops_estimate",
    "Trace",
    "make_trace",
    "random_mask_walk",
    "create_app",
]
