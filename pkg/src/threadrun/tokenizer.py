"""Byte-level tokenizer with merged pieces for the reasoning-tree dialect.

Every byte value 0..255 is a token, so any byte string tokenizes and the
round trip ``detokenize(tokenize(s)) == s`` holds unconditionally.  On top
of the byte alphabet we merge a small set of multi-byte pieces: the six
schema key names (quoted, colon included) and the three structural
digraphs that canonical serialization produces at task boundaries.  Merged
keys make keyword detection single-token for the structure tracker, and
the boundary digraphs let a task close and its enclosing list close within
one token.

Tokenization is greedy longest-match and therefore deterministic.
"""

from __future__ import annotations

# Schema key names, each a single token including quotes and colon.
KEY_THOUGHT = b'"thought":'
KEY_TOOL_NAME = b'"tool_name":'
KEY_PARAMETERS = b'"parameters":'
KEY_TOOL_RESULT = b'"tool_result":'
KEY_SUBTASKS = b'"subtasks":'
KEY_CONCLUSION = b'"conclusion":'

SCHEMA_KEYS = (
    KEY_THOUGHT,
    KEY_TOOL_NAME,
    KEY_PARAMETERS,
    KEY_TOOL_RESULT,
    KEY_SUBTASKS,
    KEY_CONCLUSION,
)

# Structural digraphs: list-open + task-open, task-close + list-close,
# task-close + next-task-open.
DIGRAPH_OPEN = b"[{"
DIGRAPH_CLOSE = b"}]"
DIGRAPH_NEXT = b"},{"

MERGED_PIECES = SCHEMA_KEYS + (DIGRAPH_OPEN, DIGRAPH_CLOSE, DIGRAPH_NEXT)


class ByteTokenizer:
    """Greedy longest-match tokenizer over bytes plus merged pieces."""

    def __init__(self, merged: tuple[bytes, ...] = MERGED_PIECES):
        self.pieces: list[bytes] = [bytes([b]) for b in range(256)]
        for piece in merged:
            if len(piece) < 2:
                raise ValueError("merged pieces must be multi-byte")
            self.pieces.append(piece)
        self.vocab_size = len(self.pieces)
        if self.vocab_size > 512:
            raise ValueError("vocabulary exceeds 512 tokens")
        self.piece_to_id = {p: i for i, p in enumerate(self.pieces)}
        # Multi-byte candidates grouped by first byte, longest first.
        self._by_first: dict[int, list[tuple[bytes, int]]] = {}
        for piece, tid in self.piece_to_id.items():
            if len(piece) > 1:
                self._by_first.setdefault(piece[0], []).append((piece, tid))
        for cands in self._by_first.values():
            cands.sort(key=lambda pt: -len(pt[0]))

    def tokenize(self, data: bytes | str) -> list[int]:
        if isinstance(data, str):
            data = data.encode("utf-8")
        out: list[int] = []
        i = 0
        n = len(data)
        while i < n:
            b = data[i]
            for piece, tid in self._by_first.get(b, ()):
                if data.startswith(piece, i):
                    out.append(tid)
                    i += len(piece)
                    break
            else:
                out.append(b)
                i += 1
        return out

    def piece(self, token_id: int) -> bytes:
        return self.pieces[token_id]

    def detokenize(self, ids: list[int]) -> bytes:
        return b"".join(self.pieces[t] for t in ids)

    def detokenize_text(self, ids: list[int]) -> str:
        return self.detokenize(ids).decode("utf-8")

    def token_for(self, piece: bytes) -> int:
        """Id of an exact piece; raises KeyError if it is not in the table."""
        return self.piece_to_id[piece]


def build_tokenizer() -> ByteTokenizer:
    """The standard tokenizer build shared by serializer, tracker, and model."""
    return ByteTokenizer()
