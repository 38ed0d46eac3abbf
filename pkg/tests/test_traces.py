import pytest

from threadrun.schema import parse_tree_text, random_tree, validate_tree
from threadrun.tracker import ThreadGrammar
from threadrun.traces import load_traces, make_trace, random_mask_walk, save_traces
from threadrun.schema import ToolSpec


def test_make_trace_cuts_result_values(tok):
    tree = random_tree(11, 3, 3, tool_prob=0.7)
    trace = make_trace(tree, tok)
    full = tok.tokenize(trace.text)
    n_tools = sum(1 for n in tree.walk() if n.tooluse)
    assert n_tools >= 1
    assert len(trace.tool_responses) == n_tools
    assert len(trace.script) < len(full)
    # script plus serialized responses reassembles the document
    assert set(trace.tool_names) == {n.tooluse.tool_name for n in tree.walk() if n.tooluse}


def test_trace_file_round_trip(tok, tmp_path):
    traces = [make_trace(random_tree(s, 3, 2, tool_prob=0.5), tok) for s in range(4)]
    path = tmp_path / "traces.jsonl"
    save_traces(traces, path)
    back = load_traces(path)
    assert [t.script for t in back] == [t.script for t in traces]
    assert [t.tool_responses for t in back] == [t.tool_responses for t in traces]
    assert [t.tool_names for t in back] == [t.tool_names for t in traces]


class TestRandomWalk:
    def test_deterministic(self, tok):
        g = ThreadGrammar((), 6, tok)
        a = random_mask_walk(g.tracker(), tok, seed=5)
        b = random_mask_walk(g.tracker(), tok, seed=5)
        assert a == b
        assert a != random_mask_walk(g.tracker(), tok, seed=6)

    @pytest.mark.parametrize("seed", range(30))
    def test_walks_parse_as_valid_trees(self, tok, seed):
        g = ThreadGrammar((ToolSpec("search"),), 6, tok)
        ids = random_mask_walk(g.tracker(), tok, seed=seed)
        text = tok.detokenize_text(ids)
        tree = parse_tree_text(text)
        validate_tree(tree)

    def test_walk_respects_budget_loosely(self, tok):
        g = ThreadGrammar((), 6, tok)
        ids = random_mask_walk(g.tracker(), tok, seed=1, budget=60)
        # closure after the budget takes bounded extra tokens
        assert len(ids) < 60 + 400
