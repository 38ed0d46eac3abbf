"""Page-size-1 KV cache: physical pool, free list, per-request page tables.

Every page holds exactly one token's per-layer key and value vectors, so
pruning can evict arbitrary token subsets per request.  The pool may be
created accounting-only (no arrays) for runtime-logic tests driven by the
scripted backend.
"""

from __future__ import annotations

import numpy as np


class OutOfPages(RuntimeError):
    def __init__(self, needed: int, available: int):
        self.needed = needed
        self.available = available
        super().__init__(f"need {needed} pages, {available} free")


class DoubleFree(RuntimeError):
    def __init__(self, page_id: int):
        self.page_id = page_id
        super().__init__(f"page {page_id} freed while not allocated")


class PagePool:
    """Fixed pool of single-token KV pages with free-list accounting.

    With ``kv_shape=(layers, heads, head_dim)`` the pool owns the K and V
    arrays indexed by page id; without it the pool is accounting-only.
    """

    def __init__(self, capacity: int, kv_shape: tuple[int, int, int] | None = None,
                 dtype=np.float32):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        # LIFO free list keeps reuse deterministic and cache-friendly.
        self.free_list: list[int] = list(range(capacity - 1, -1, -1))
        self.allocated: dict[int, object] = {}
        self.K = self.V = None
        if kv_shape is not None:
            layers, heads, head_dim = kv_shape
            self.K = np.zeros((capacity, layers, heads, head_dim), dtype=dtype)
            self.V = np.zeros((capacity, layers, heads, head_dim), dtype=dtype)

    @property
    def free_count(self) -> int:
        return len(self.free_list)

    def alloc(self, request_id, n: int) -> list[int]:
        if n < 0:
            raise ValueError("n must be >= 0")
        if n > len(self.free_list):
            raise OutOfPages(n, len(self.free_list))
        ids = [self.free_list.pop() for _ in range(n)]
        for pid in ids:
            self.allocated[pid] = request_id
        return ids

    def free(self, page_ids) -> None:
        for pid in page_ids:
            if pid not in self.allocated:
                raise DoubleFree(pid)
            del self.allocated[pid]
            self.free_list.append(pid)

    def live_tokens(self, request_id) -> int:
        return sum(1 for owner in self.allocated.values() if owner == request_id)

    def snapshot(self) -> dict:
        per_request: dict = {}
        for owner in self.allocated.values():
            key = str(owner)
            per_request.setdefault(key, {"live_tokens": 0})
            per_request[key]["live_tokens"] += 1
        return {
            "capacity": self.capacity,
            "free": len(self.free_list),
            "allocated": len(self.allocated),
            "per_request": per_request,
        }


class PageTable:
    """Ordered map from a request's working-memory index to physical page."""

    def __init__(self, request_id):
        self.request_id = request_id
        self.pages: list[int] = []

    def __len__(self) -> int:
        return len(self.pages)

    def append(self, page_ids: list[int]) -> None:
        self.pages.extend(page_ids)

    def truncate_from(self, working_index: int) -> list[int]:
        """Drop all entries at or after the index; return their page ids."""
        removed = self.pages[working_index:]
        del self.pages[working_index:]
        return removed

    def check(self) -> None:
        if len(set(self.pages)) != len(self.pages):
            raise AssertionError("page table not injective")


class KvPage:
    """View of one page's per-layer key/value states."""

    def __init__(self, pool: PagePool, page_id: int):
        self.page_id = page_id
        self.k = pool.K[page_id]
        self.v = pool.V[page_id]


def gather(pool: PagePool, table: PageTable) -> tuple[np.ndarray, np.ndarray]:
    """Working-memory K and V in logical order, shape (layers, n, heads, dim)."""
    if pool.K is None:
        raise RuntimeError("accounting-only pool has no KV arrays")
    if not table.pages:
        raise ValueError("empty page table")
    k = pool.K[table.pages].transpose(1, 0, 2, 3)
    v = pool.V[table.pages].transpose(1, 0, 2, 3)
    return k, v
