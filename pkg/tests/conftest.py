import pytest

from threadrun.tokenizer import build_tokenizer


@pytest.fixture(scope="session")
def tok():
    return build_tokenizer()
