from __future__ import annotations

import pytest

from corpusgen import generate_corpus, write_price_table


@pytest.fixture(scope="session")
def registry():
    from aavescan.registry import load_registry

    return load_registry()


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory) -> str:
    """Full fixture corpus (6 chains, ~50k rows), built once per session."""
    path = tmp_path_factory.mktemp("corpus")
    generate_corpus(str(path))
    return str(path)


@pytest.fixture(scope="session")
def mini_corpus_dir(tmp_path_factory) -> str:
    """Tiny corpus for fast wiring tests (2 chains, ~170 rows each)."""
    path = tmp_path_factory.mktemp("mini_corpus")
    generate_corpus(str(path), scale=0.02, chains=["ethereum", "base"])
    return str(path)


@pytest.fixture(scope="session")
def price_table_path(tmp_path_factory) -> str:
    path = tmp_path_factory.mktemp("prices") / "prices.yaml"
    write_price_table(str(path))
    return str(path)
