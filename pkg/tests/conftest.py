"""Shared test fixtures and independent oracles."""

from __future__ import annotations

import random
from functools import lru_cache

import pytest

from asrfix.kb import KnowledgeBase
from asrfix.metrics import normalize
from asrfix.prompts import Hypothesis, NBestSet


def oracle_distance(a: str, b: str) -> int:
    """Brute-force memoized Levenshtein, structured unlike the production
    suffix-table implementation on purpose."""

    @lru_cache(maxsize=None)
    def go(i: int, j: int) -> int:
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        best = go(i + 1, j + 1) + (a[i] != b[j])
        best = min(best, go(i + 1, j) + 1)
        best = min(best, go(i, j + 1) + 1)
        return best

    return go(0, 0)


def random_pair(rng: random.Random, max_len: int = 12, alphabet_size: int = 20) -> tuple[str, str]:
    alphabet = [chr(ord("a") + i) for i in range(alphabet_size)]
    hyp = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, max_len)))
    ref = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, max_len)))
    return hyp, ref


@pytest.fixture
def norm():
    return normalize


@pytest.fixture
def case_nbest() -> NBestSet:
    """Three-source n-best set around the '敌人在哪' utterance."""
    return NBestSet(
        hypotheses=(
            Hypothesis("src-c", "DNA在哪"),
            Hypothesis("src-b", "滴哪在哪"),
            Hypothesis("src-a", "敌人在哪"),
        ),
        context="小队语音：卡点防守",
        utterance_id="utt-dna-001",
    )


@pytest.fixture
def small_kb() -> KnowledgeBase:
    kb = KnowledgeBase()
    kb.add_pairs([("敌人", "DNA"), ("遇袭", "预习"), ("4号", "适合")])
    return kb
