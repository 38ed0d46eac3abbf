import random

import numpy as np
import pytest

from threadrun.paging import DoubleFree, KvPage, OutOfPages, PagePool, PageTable, gather


class TestAllocation:
    def test_alloc_zero(self):
        pool = PagePool(4)
        assert pool.alloc("r", 0) == []
        assert pool.free_count == 4

    def test_alloc_then_free_restores_accounting(self):
        pool = PagePool(8)
        ids = pool.alloc("r", 5)
        assert pool.free_count == 3 and len(pool.allocated) == 5
        pool.free(ids)
        assert pool.free_count == 8 and not pool.allocated

    def test_out_of_pages(self):
        pool = PagePool(4)
        with pytest.raises(OutOfPages) as info:
            pool.alloc("r", 5)
        assert info.value.needed == 5 and info.value.available == 4
        assert pool.free_count == 4  # nothing half-allocated

    def test_double_free(self):
        pool = PagePool(4)
        ids = pool.alloc("r", 1)
        pool.free(ids)
        with pytest.raises(DoubleFree):
            pool.free(ids)

    def test_freed_pages_immediately_reusable(self):
        pool = PagePool(2)
        a = pool.alloc("r1", 2)
        pool.free(a)
        b = pool.alloc("r2", 2)
        assert sorted(b) == sorted(a)

    def test_random_interleavings_never_leak(self):
        rng = random.Random(0)
        pool = PagePool(64)
        held: dict[str, list[int]] = {}
        for step in range(2000):
            rid = f"r{rng.randrange(6)}"
            if rng.random() < 0.55:
                n = rng.randrange(0, 5)
                if n <= pool.free_count:
                    held.setdefault(rid, []).extend(pool.alloc(rid, n))
            elif held.get(rid):
                k = rng.randrange(1, len(held[rid]) + 1)
                pool.free(held[rid][:k])
                del held[rid][:k]
            live = sum(len(v) for v in held.values())
            assert len(pool.allocated) == live
            assert pool.free_count == 64 - live
            for rid2, pages in held.items():
                assert pool.live_tokens(rid2) == len(pages)

    def test_snapshot(self):
        pool = PagePool(4)
        pool.alloc("a", 1)
        pool.alloc("b", 2)
        snap = pool.snapshot()
        assert snap == {
            "capacity": 4, "free": 1, "allocated": 3,
            "per_request": {"a": {"live_tokens": 1}, "b": {"live_tokens": 2}},
        }


class TestGather:
    def _pool(self, n=8):
        return PagePool(n, kv_shape=(2, 3, 4))

    def test_single_token(self):
        pool = self._pool()
        table = PageTable("r")
        [pid] = pool.alloc("r", 1)
        pool.K[pid] = 1.5
        pool.V[pid] = -2.0
        table.append([pid])
        k, v = gather(pool, table)
        assert k.shape == (2, 1, 3, 4)
        assert np.all(k == 1.5) and np.all(v == -2.0)

    def test_order_follows_logical_order(self):
        pool = self._pool()
        table = PageTable("r")
        ids = pool.alloc("r", 6)
        for i, pid in enumerate(ids):
            pool.K[pid] = i
        table.append(ids)
        # working memory after pruning logical span [1, 3): surgery on the table
        freed = [table.pages[1], table.pages[2]]
        table.pages = [table.pages[0]] + table.pages[3:]
        pool.free(freed)
        k, _ = gather(pool, table)
        assert k[0, :, 0, 0].tolist() == [0.0, 3.0, 4.0, 5.0]

    def test_gather_deterministic(self):
        pool = self._pool()
        table = PageTable("r")
        ids = pool.alloc("r", 4)
        for i, pid in enumerate(ids):
            pool.K[pid] = i * 0.25
        table.append(ids)
        k1, v1 = gather(pool, table)
        k2, v2 = gather(pool, table)
        assert np.array_equal(k1, k2) and np.array_equal(v1, v2)

    def test_empty_table_rejected(self):
        with pytest.raises(ValueError):
            gather(self._pool(), PageTable("r"))

    def test_accounting_pool_has_no_arrays(self):
        pool = PagePool(4)
        table = PageTable("r")
        table.append(pool.alloc("r", 1))
        with pytest.raises(RuntimeError):
            gather(pool, table)

    def test_kv_page_view(self):
        pool = self._pool()
        [pid] = pool.alloc("r", 1)
        pool.K[pid] = 7.0
        page = KvPage(pool, pid)
        assert page.k.shape == (2, 3, 4)
        assert np.all(page.k == 7.0)


def test_table_truncate_returns_page_ids():
    pool = PagePool(8)
    table = PageTable("r")
    ids = pool.alloc("r", 5)
    table.append(ids)
    removed = table.truncate_from(2)
    assert removed == ids[2:]
    assert table.pages == ids[:2]
    table.check()
