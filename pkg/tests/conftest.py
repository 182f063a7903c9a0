from __future__ import annotations

from pathlib import Path

import pytest

from mtcoverage.conllu import parse_conllu

FIXTURES = Path(__file__).parent / "fixtures"
MOCK_SCORER = Path(__file__).parent / "mock_scorer.py"


def load_fixture(name: str):
    sentences = parse_conllu((FIXTURES / name).read_text(encoding="utf-8"))
    return sentences[0] if len(sentences) == 1 else sentences


@pytest.fixture
def example_sentence():
    return load_fixture("example.conllu")


@pytest.fixture
def apple_sentence():
    return load_fixture("apple.conllu")


@pytest.fixture
def landing_sentence():
    return load_fixture("landing.conllu")


@pytest.fixture
def german_sentence():
    return load_fixture("german.conllu")


@pytest.fixture
def chinese_sentence():
    return load_fixture("chinese.conllu")


@pytest.fixture
def gold_path():
    return FIXTURES / "gold.tsv"
