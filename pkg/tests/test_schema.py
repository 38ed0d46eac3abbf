import json

import pytest

from threadrun.schema import (
    InvalidTree,
    ReasoningTree,
    TaskNode,
    TokenSpan,
    ToolSpec,
    ToolUse,
    deep_recursion_tree,
    load_corpus,
    parse_tree_text,
    random_tree,
    save_corpus,
    serialize_tree,
    serialize_with_markers,
    task_to_obj,
    tool_chain_tree,
    validate_tree,
)


def minimal_tree():
    return ReasoningTree([TaskNode(thought="think", conclusion="done")])


def fig1_tree():
    # One top task with two subtasks whose outputs aggregate upward.
    return ReasoningTree([
        TaskNode(
            thought="split the problem",
            subtasks=[
                TaskNode(thought="part one", conclusion="left result"),
                TaskNode(thought="part two", conclusion="right result"),
            ],
            conclusion="combined result",
        ),
    ])


class TestSerialize:
    def test_minimal(self):
        text = serialize_tree(minimal_tree())
        assert text == '[{"thought":"think","conclusion":"done"}]'

    def test_two_subtasks_nest_inside_parent_array(self):
        text = serialize_tree(fig1_tree())
        doc = json.loads(text)
        assert len(doc) == 1
        subtasks = doc[0]["subtasks"]
        assert [t["thought"] for t in subtasks] == ["part one", "part two"]

    def test_matches_json_dumps_canonical_form(self):
        for seed in range(25):
            tree = random_tree(seed, 4, 3, tool_prob=0.4)
            expected = json.dumps([task_to_obj(n) for n in tree.root_tasks],
                                  separators=(",", ":"), ensure_ascii=False)
            assert serialize_tree(tree) == expected

    def test_field_order(self):
        tree = ReasoningTree([TaskNode(
            thought="t",
            tooluse=ToolUse("search", {"q": "x"}, {"q": "x"}),
            subtasks=[TaskNode(thought="c", conclusion="cc")],
            conclusion="z",
        )])
        keys = list(json.loads(serialize_tree(tree))[0].keys())
        assert keys == ["thought", "tool_name", "parameters", "tool_result",
                        "subtasks", "conclusion"]

    def test_round_trip(self):
        for seed in range(40):
            tree = random_tree(seed, 4, 3, tool_prob=0.35)
            assert parse_tree_text(serialize_tree(tree)) == tree

    def test_seed7_round_trip(self, tok):
        tree = random_tree(7, 3, 3, tool_prob=0.2)
        text = serialize_tree(tree, tok)
        assert parse_tree_text(text) == tree


class TestSpans:
    def test_byte_spans_nest_and_are_disjoint(self):
        for seed in range(20):
            tree = random_tree(seed, 4, 3, tool_prob=0.3)
            serialize_with_markers(tree)  # spans in byte units

            def walk(node):
                if node.subtasks:
                    spans = [c.span for c in node.subtasks]
                    for c, span in zip(node.subtasks, spans):
                        assert node.subtasks_span.contains(span)
                        assert node.span.contains(span)
                        walk(c)
                    for a, b in zip(spans, spans[1:]):
                        assert a.end <= b.start

            for root in tree.root_tasks:
                walk(root)

    def test_token_spans_nest_and_share_only_boundary_tokens(self, tok):
        # The task-close/task-open digraph puts adjacent siblings' boundary
        # bytes in one token, so sibling token spans may share exactly it.
        for seed in range(20):
            tree = random_tree(seed, 4, 3, tool_prob=0.3)
            serialize_tree(tree, tok)

            def walk(node):
                if node.subtasks:
                    spans = [c.span for c in node.subtasks]
                    for c, span in zip(node.subtasks, spans):
                        assert node.subtasks_span.contains(span)
                        assert node.span.contains(span)
                        walk(c)
                    for a, b in zip(spans, spans[1:]):
                        assert a.end - 1 <= b.start

            for root in tree.root_tasks:
                walk(root)

    def test_span_validation(self):
        with pytest.raises(ValueError):
            TokenSpan(4, 2)


class TestValidate:
    def test_empty_conclusion_rejected(self):
        tree = ReasoningTree([TaskNode(thought="x", conclusion="")])
        with pytest.raises(InvalidTree):
            validate_tree(tree)

    def test_empty_subtasks_rejected(self):
        tree = ReasoningTree([TaskNode(thought="x", subtasks=[], conclusion="y")])
        with pytest.raises(InvalidTree):
            validate_tree(tree)

    def test_no_roots_rejected(self):
        with pytest.raises(InvalidTree):
            validate_tree(ReasoningTree([]))

    def test_depth_limit(self):
        node = TaskNode(thought="x", conclusion="y")
        for _ in range(20):
            node = TaskNode(thought="x", subtasks=[node], conclusion="y")
        with pytest.raises(InvalidTree):
            validate_tree(ReasoningTree([node]), depth_limit=16)

    def test_bad_tool_name(self):
        tree = ReasoningTree([TaskNode(
            thought="x", tooluse=ToolUse("not a name!", {}, {}), conclusion="y")])
        with pytest.raises(InvalidTree):
            validate_tree(tree)

    def test_key_order_enforced_on_parse(self):
        with pytest.raises(InvalidTree):
            parse_tree_text('[{"conclusion":"c","thought":"t"}]')
        with pytest.raises(InvalidTree):
            parse_tree_text('[{"thought":"t","conclusion":"c","extra":1}]')


class TestGenerators:
    def test_degenerate_bounds_single_leaf(self):
        tree = random_tree(1, 1, 0, tool_prob=0)
        assert len(tree.root_tasks) == 1
        assert tree.root_tasks[0].subtasks is None

    def test_determinism(self):
        a = random_tree(7, 3, 3, tool_prob=0.3)
        b = random_tree(7, 3, 3, tool_prob=0.3)
        assert a == b

    def test_deep_chain_reaches_bound(self):
        tree = random_tree(9, 5, 2, tool_prob=0)
        deepest = 0
        for node in tree.walk():
            deepest = max(deepest, node.depth)
        assert deepest == 4  # five levels, depth indices 0..4

    def test_depth_bound_respected(self):
        for seed in range(10):
            tree = random_tree(seed, 3, 4, tool_prob=0.2)
            assert all(n.depth <= 2 for n in tree.walk())

    def test_tool_results_echo_parameters(self):
        tree = random_tree(5, 3, 3, tool_prob=1.0)
        used = [n.tooluse for n in tree.walk() if n.tooluse]
        assert used and all(tu.tool_result == tu.parameters for tu in used)

    def test_deep_recursion_tree_shape(self):
        tree = deep_recursion_tree(4, 2)
        depths = [n.depth for n in tree.walk()]
        assert max(depths) == 3
        assert len(depths) == 2 ** 4 - 1

    def test_tool_chain_tree(self):
        tree = tool_chain_tree(5)
        calls = [n for n in tree.walk() if n.tooluse]
        assert len(calls) == 5
        assert all(n.depth == 1 for n in calls)


def test_corpus_round_trip(tmp_path):
    trees = [random_tree(s, 3, 2, tool_prob=0.3) for s in range(5)]
    path = tmp_path / "corpus.jsonl"
    save_corpus(trees, path)
    back = load_corpus(path)
    assert back == trees


def test_tool_spec_name_validation():
    with pytest.raises(ValueError):
        ToolSpec("bad name with spaces")
