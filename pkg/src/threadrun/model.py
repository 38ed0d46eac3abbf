"""Model backends: a seeded toy rotary-attention transformer and a replay model.

The toy transformer exists to make position reuse observable: keys are
rotated by position at encode time, so re-encoding a retained suffix at new
positions must reproduce exactly what a fresh prefill of the pruned
sequence would compute.  Attention is exact and dense over gathered pages.
The scripted model exercises runtime logic (paging, pruning, scheduling)
without numerics by replaying a fixed token stream; it performs identical
page accounting but writes no numbers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .paging import PagePool, PageTable
from .tracker import TokenMask


class PositionOverflow(RuntimeError):
    def __init__(self, position: int, limit: int):
        super().__init__(f"position {position} >= limit {limit}")
        self.position = position
        self.limit = limit


class EmptyExtend(ValueError):
    pass


class EmptyMask(RuntimeError):
    """Grammar dead end: no token admissible."""


@dataclass
class ModelConfig:
    layers: int = 2
    heads: int = 4
    head_dim: int = 16
    vocab: int = 512
    position_limit: int = 256
    rope_base: float = 10000.0
    seed: int = 0
    precision: str = "float32"

    @property
    def model_dim(self) -> int:
        return self.heads * self.head_dim

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32

    def kv_shape(self) -> tuple[int, int, int]:
        return (self.layers, self.heads, self.head_dim)

    def to_json_file(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2))

    @classmethod
    def from_json_file(cls, path: str | Path) -> "ModelConfig":
        return cls(**json.loads(Path(path).read_text()))


def _rmsnorm(x: np.ndarray) -> np.ndarray:
    return x / np.sqrt(np.mean(np.square(x), axis=-1, keepdims=True) + 1e-6)


def _silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


class TinyTransformer:
    """Decoder-only transformer with rotary positions over single-token pages.

    Weights are fully determined by the config seed.  All forwards share one
    code path: encode ``tokens`` at ``positions`` attending to the pages
    already in ``table`` plus causal self-attention within the batch, write
    one page per token, append the pages to the table, and return logits for
    the last position.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        dt = config.dtype
        dm = config.model_dim
        rng = np.random.default_rng(config.seed)
        scale = 1.0 / np.sqrt(dm)

        def mat(*shape):
            return (rng.standard_normal(shape) * scale).astype(dt)

        self.emb = mat(config.vocab, dm)
        self.layers = []
        for _ in range(config.layers):
            self.layers.append({
                "wq": mat(dm, dm), "wk": mat(dm, dm), "wv": mat(dm, dm), "wo": mat(dm, dm),
                "w1": mat(dm, 4 * dm), "w2": mat(4 * dm, dm),
            })
        half = config.head_dim // 2
        self.inv_freq = (config.rope_base ** (-np.arange(half) / half)).astype(dt)

    @property
    def vocab_size(self) -> int:
        return self.config.vocab

    @property
    def position_limit(self) -> int:
        return self.config.position_limit

    def make_pool(self, capacity: int) -> PagePool:
        return PagePool(capacity, kv_shape=self.config.kv_shape(), dtype=self.config.dtype)

    def _rope(self, x: np.ndarray, positions: np.ndarray) -> np.ndarray:
        # x: (n, heads, head_dim); rotate-half convention.
        half = self.config.head_dim // 2
        ang = positions[:, None] * self.inv_freq[None, :]          # (n, half)
        cos = np.cos(ang)[:, None, :]
        sin = np.sin(ang)[:, None, :]
        x1, x2 = x[..., :half], x[..., half:]
        return np.concatenate([x1 * cos - x2 * sin, x1 * sin + x2 * cos], axis=-1)

    def _forward(self, tokens, positions, table: PageTable, pool: PagePool) -> np.ndarray:
        cfg = self.config
        n = len(tokens)
        for p in positions:
            if p >= cfg.position_limit:
                raise PositionOverflow(int(p), cfg.position_limit)
        new_pages = pool.alloc(table.request_id, n)
        pos = np.asarray(positions, dtype=cfg.dtype)
        prefix = table.pages
        m = len(prefix)

        h = self.emb[np.asarray(tokens, dtype=np.int64)]           # (n, dm)
        col = np.arange(m + n)
        causal = col[None, :] > (m + np.arange(n))[:, None]        # (n, m+n)

        for li, layer in enumerate(self.layers):
            x = _rmsnorm(h)
            q = self._rope((x @ layer["wq"]).reshape(n, cfg.heads, cfg.head_dim), pos)
            k = self._rope((x @ layer["wk"]).reshape(n, cfg.heads, cfg.head_dim), pos)
            v = (x @ layer["wv"]).reshape(n, cfg.heads, cfg.head_dim)
            pool.K[new_pages, li] = k
            pool.V[new_pages, li] = v
            if m:
                k_all = np.concatenate([pool.K[prefix, li], k], axis=0)
                v_all = np.concatenate([pool.V[prefix, li], v], axis=0)
            else:
                k_all, v_all = k, v
            scores = np.einsum("qhd,khd->hqk", q, k_all) / np.sqrt(cfg.head_dim)
            scores = np.where(causal[None, :, :], -np.inf, scores)
            scores = scores - scores.max(axis=-1, keepdims=True)
            w = np.exp(scores)
            w = w / w.sum(axis=-1, keepdims=True)
            ctx = np.einsum("hqk,khd->qhd", w, v_all).reshape(n, cfg.model_dim)
            h = h + ctx.astype(cfg.dtype) @ layer["wo"]
            h = h + _silu(_rmsnorm(h) @ layer["w1"]) @ layer["w2"]

        table.append(new_pages)
        return _rmsnorm(h[-1]) @ self.emb.T

    def prefill(self, tokens: list[int], positions: list[int], table: PageTable,
                pool: PagePool) -> np.ndarray:
        if len(tokens) != len(positions):
            raise ValueError("tokens and positions must align")
        if not tokens:
            raise EmptyExtend("nothing to prefill")
        return self._forward(tokens, positions, table, pool)

    def extend(self, tokens: list[int], start_position: int, table: PageTable,
               pool: PagePool) -> np.ndarray:
        if not tokens:
            raise EmptyExtend("nothing to extend")
        positions = list(range(start_position, start_position + len(tokens)))
        return self._forward(tokens, positions, table, pool)

    def decode_step(self, last_token: int, position: int, table: PageTable,
                    pool: PagePool) -> np.ndarray:
        return self._forward([last_token], [position], table, pool)


def sample(logits: np.ndarray, mask: TokenMask) -> int:
    """Greedy pick among admitted tokens; ties break toward the lowest id."""
    allowed = mask.as_array(len(logits))
    if not allowed.any():
        raise EmptyMask("no admissible token")
    masked = np.where(allowed, logits, -np.inf)
    return int(np.argmax(masked))


class ScriptedModel:
    """Replay backend: emits a fixed token stream, ignoring KV contents.

    Page accounting matches the real model (one page per token, appended to
    the table) so memory invariants are exercised; logits are None and
    token selection pops the script, asserting mask admission.
    """

    def __init__(self, vocab: int = 512, position_limit: int = 256):
        self.vocab = vocab
        self.position_limit = position_limit

    @property
    def vocab_size(self) -> int:
        return self.vocab

    def make_pool(self, capacity: int) -> PagePool:
        return PagePool(capacity)

    def _forward(self, n: int, positions, table: PageTable, pool: PagePool):
        for p in positions:
            if p >= self.position_limit:
                raise PositionOverflow(int(p), self.position_limit)
        table.append(pool.alloc(table.request_id, n))
        return None

    def prefill(self, tokens, positions, table, pool):
        if not tokens:
            raise EmptyExtend("nothing to prefill")
        return self._forward(len(tokens), positions, table, pool)

    def extend(self, tokens, start_position, table, pool):
        if not tokens:
            raise EmptyExtend("nothing to extend")
        positions = range(start_position, start_position + len(tokens))
        return self._forward(len(tokens), positions, table, pool)

    def decode_step(self, last_token, position, table, pool):
        return self._forward(1, [position], table, pool)
