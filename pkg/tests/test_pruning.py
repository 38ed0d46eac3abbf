import random

import pytest

from threadrun.oracles import batch_parse, surgery
from threadrun.paging import PagePool, PageTable
from threadrun.pruning import (
    PruneBuffer,
    PrunePlan,
    RequestMetrics,
    SpanOutOfRange,
    ZeroLength,
    apply,
    coalesce,
    kv_pruned_pct,
    oracle_evictions,
)
from threadrun.schema import ReasoningTree, TaskNode, TokenSpan, random_tree, serialize_tree


def span(a, b):
    return TokenSpan(a, b)


class TestBuffer:
    def test_threshold_zero_evicts_immediately(self):
        buf = PruneBuffer(0)
        plan = buf.on_list_closed(span(5, 9))
        assert plan is not None
        assert plan.evict_spans == [span(5, 9)]
        assert plan.reencode_from == 5
        assert plan.freed_token_count == 4
        assert buf.entries == []

    def test_threshold_one_pops_earliest(self):
        buf = PruneBuffer(1)
        assert buf.on_list_closed(span(2, 6)) is None
        plan = buf.on_list_closed(span(10, 14))
        assert plan.evict_spans == [span(2, 6)]
        assert buf.entries == [span(10, 14)]

    def test_parent_subsumes_nested_child(self):
        buf = PruneBuffer(2)
        assert buf.on_list_closed(span(4, 8)) is None      # child list
        assert buf.on_list_closed(span(2, 12)) is None     # enclosing parent
        assert buf.entries == [span(2, 12)]

    def test_subsume_disabled_keeps_nested_entries(self):
        buf = PruneBuffer(2, subsume=False)
        buf.on_list_closed(span(4, 8))
        buf.on_list_closed(span(2, 12))
        assert buf.entries == [span(4, 8), span(2, 12)]
        plan = buf.on_list_closed(span(20, 24))
        assert plan.evict_spans == [span(4, 8)]

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValueError):
            PruneBuffer(-1)


class TestCoalesce:
    def test_single_plan_identity(self):
        p = PrunePlan([span(3, 7)], 3, 4)
        out = coalesce([p])
        assert out.evict_spans == [span(3, 7)]
        assert out.reencode_from == 3

    def test_disjoint_union(self):
        out = coalesce([PrunePlan([span(10, 12)], 10, 2), PrunePlan([span(2, 5)], 2, 3)])
        assert out.evict_spans == [span(2, 5), span(10, 12)]
        assert out.reencode_from == 2
        assert out.freed_token_count == 5

    def test_randomized_matches_set_union(self):
        rng = random.Random(1)
        for _ in range(200):
            plans = []
            for _ in range(rng.randint(1, 5)):
                a = rng.randrange(0, 50)
                b = a + rng.randrange(1, 10)
                plans.append(PrunePlan([span(a, b)], a, b - a))
            out = coalesce(plans)
            expect = set()
            for p in plans:
                for s in p.evict_spans:
                    expect.update(range(s.start, s.end))
            got = set()
            for s in out.evict_spans:
                ids = set(range(s.start, s.end))
                assert not (ids & got), "coalesced spans overlap"
                got |= ids
            assert got == expect
            assert out.reencode_from == min(expect)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            coalesce([])


class TestApply:
    def _setup(self, n):
        pool = PagePool(2 * n)
        table = PageTable("r")
        table.append(pool.alloc("r", n))
        return pool, table

    def test_worked_example(self):
        # S = [t1, t1.1, t1.2, t2, t2.1, x_k]; evict the two level-1 subtask
        # tokens; suffix re-encodes from position 1.
        tokens = [101, 111, 112, 102, 121, 999]
        pool, table = self._setup(6)
        plan = PrunePlan([span(1, 3)], 1, 2)
        freed, suffix, start, new_live = apply(plan, table, list(range(6)), tokens)
        assert len(freed) == 5                      # 2 evicted + 3 re-encoded
        assert suffix == [102, 121, 999]
        assert start == 1
        assert new_live == [0, 3, 4, 5]
        assert len(table) == 1

    def test_suffix_final_span_means_nothing_to_reencode(self):
        tokens = list(range(10))
        pool, table = self._setup(10)
        plan = PrunePlan([span(6, 10)], 6, 4)
        freed, suffix, start, new_live = apply(plan, table, list(range(10)), tokens)
        assert suffix == [] and start == 6
        assert len(freed) == 4
        assert new_live == [0, 1, 2, 3, 4, 5]

    def test_overlap_with_prior_eviction(self):
        # live already lost [4, 6); a parent span covering it evicts the rest
        tokens = list(range(12))
        pool, table = self._setup(10)
        live = [0, 1, 2, 3, 6, 7, 8, 9, 10, 11]
        plan = PrunePlan([span(2, 9)], 2, 7)
        freed, suffix, start, new_live = apply(plan, table, live, tokens)
        assert new_live == [0, 1, 9, 10, 11]
        assert suffix == [9, 10, 11]
        assert start == 2

    def test_out_of_range(self):
        pool, table = self._setup(4)
        with pytest.raises(SpanOutOfRange):
            apply(PrunePlan([span(2, 9)], 2, 7), table, [0, 1, 2, 3], [1, 2, 3, 4])

    def test_random_traces_match_list_surgery(self):
        rng = random.Random(3)
        for _ in range(100):
            n = rng.randrange(8, 40)
            tokens = [rng.randrange(500) for _ in range(n)]
            pool, table = self._setup(n)
            live = list(range(n))
            a = rng.randrange(0, n - 2)
            b = a + rng.randrange(1, n - a)
            plan = PrunePlan([span(a, b)], a, b - a)
            _, suffix, start, new_live = apply(plan, table, live, tokens)
            assert new_live == surgery(list(range(n)), [span(a, b)])
            assert suffix == [tokens[i] for i in new_live[start:]]


class TestMetric:
    def test_paper_math_row(self):
        assert kv_pruned_pct(1569.2, 3362.2) == pytest.approx(0.533, abs=1e-3)

    def test_paper_aime_row(self):
        assert kv_pruned_pct(3218.6, 8974.7) == pytest.approx(0.641, abs=1e-3)

    def test_no_pruning_is_zero(self):
        assert kv_pruned_pct(500, 500) == 0.0

    def test_clamped_to_unit_interval(self):
        assert kv_pruned_pct(900, 300) == 0.0
        assert 0.0 <= kv_pruned_pct(1, 10**9) < 1.0

    def test_zero_length(self):
        with pytest.raises(ZeroLength):
            kv_pruned_pct(10, 0)

    def test_metrics_emission_shape(self):
        m = RequestMetrics(output_len=100, max_cache=60, position_high_water=60,
                           tool_calls=2, pruned_tokens=55)
        d = m.to_dict()
        assert set(d) == {"output_len", "max_cache", "kv_pruned",
                          "position_high_water", "tool_calls", "pruned_tokens"}
        assert d["kv_pruned"] == pytest.approx(0.4)


class TestOracle:
    def test_large_threshold_never_evicts(self, tok):
        tree = random_tree(4, 4, 3)
        _, _, events = batch_parse(serialize_tree(tree), tok)
        assert oracle_evictions(events, 99) == []

    def test_fig1_trace_threshold_zero(self, tok):
        tree = ReasoningTree([TaskNode(
            thought="split",
            subtasks=[TaskNode(thought="a", conclusion="ra"),
                      TaskNode(thought="b", conclusion="rb")],
            conclusion="joined",
        )])
        text = serialize_tree(tree, tok)
        _, _, events = batch_parse(text, tok)
        order = oracle_evictions(events, 0)
        assert len(order) == 1
        assert order[0] == tree.root_tasks[0].subtasks_span

    def test_matches_buffer_implementation(self, tok):
        for seed in range(30):
            tree = random_tree(seed, 4, 3, tool_prob=0.2)
            _, _, events = batch_parse(serialize_tree(tree), tok)
            for t in (0, 1, 2, 5):
                for subsume in (True, False):
                    buf = PruneBuffer(t, subsume=subsume)
                    got = []
                    for ev in events:
                        if ev.kind != "SubtaskListClosed":
                            continue
                        plan = buf.on_list_closed(
                            TokenSpan(ev.payload["span_start"], ev.payload["span_end"]))
                        if plan:
                            got.extend(plan.evict_spans)
                    assert got == oracle_evictions(events, t, subsume=subsume)
