import random

import pytest

from threadrun.tokenizer import (
    DIGRAPH_CLOSE,
    DIGRAPH_NEXT,
    DIGRAPH_OPEN,
    SCHEMA_KEYS,
    ByteTokenizer,
    build_tokenizer,
)


def test_empty_input(tok):
    assert tok.tokenize("") == []
    assert tok.detokenize([]) == b""


def test_braces_are_two_structural_tokens(tok):
    ids = tok.tokenize("{}")
    assert len(ids) == 2
    assert tok.detokenize(ids) == b"{}"


def test_vocab_within_bound(tok):
    assert tok.vocab_size <= 512
    assert tok.vocab_size == 256 + len(SCHEMA_KEYS) + 3


def test_schema_keys_are_single_tokens(tok):
    for key in SCHEMA_KEYS:
        ids = tok.tokenize(key)
        assert len(ids) == 1
        assert tok.piece(ids[0]) == key


def test_boundary_digraphs_merge(tok):
    assert len(tok.tokenize(DIGRAPH_OPEN)) == 1
    assert len(tok.tokenize(DIGRAPH_CLOSE)) == 1
    assert len(tok.tokenize(DIGRAPH_NEXT)) == 1


def test_greedy_is_deterministic(tok):
    text = '[{"thought":"a"},{"thought":"b"}]'
    assert tok.tokenize(text) == tok.tokenize(text)


@pytest.mark.parametrize("seed", range(8))
def test_random_bytes_round_trip(tok, seed):
    rng = random.Random(seed)
    data = bytes(rng.randrange(256) for _ in range(1024))
    assert tok.detokenize(tok.tokenize(data)) == data


def test_unicode_round_trip(tok):
    text = 'café ☃ "quoted" \\back\\ \nline'
    assert tok.detokenize_text(tok.tokenize(text)) == text


def test_pieces_concatenate_to_input(tok):
    rng = random.Random(99)
    data = bytes(rng.randrange(256) for _ in range(512))
    ids = tok.tokenize(data)
    assert b"".join(tok.piece(t) for t in ids) == data


def test_rejects_single_byte_merged_piece():
    with pytest.raises(ValueError):
        ByteTokenizer(merged=(b"a",))


def test_build_is_stable():
    a, b = build_tokenizer(), build_tokenizer()
    assert a.pieces == b.pieces
