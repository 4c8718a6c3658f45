import random
from pathlib import Path

import numpy as np
import pytest

from domainvocab.wordpiece import SPECIAL_TOKENS, Vocab

DATA = Path(__file__).parent / "data"

# pieces of the six-way split of "bronchoconstriction" plus near-miss distractors
BRONCHO_PIECES = ("bro", "##nch", "##oco", "##nst", "##ric", "##tion")
BASE_TOKENS = SPECIAL_TOKENS + (
    "the", "a", "of", "in", "and", "is", "was", "patients", "with", "lung", "cat", "dog",
    "bro", "br", "b", "##nch", "##nc", "##n", "##oco", "##oc", "##o", "##nst", "##ns",
    "##ric", "##ri", "##r", "##tion", "##ti", "##t", "##s", "##ed", "asthma", "acute",
    "severe", "##ly", "c", "##a", "##t", "d", "##g", "l", "##u", "##ng", ".", ",",
)


@pytest.fixture
def base_vocab():
    return Vocab(tuple(dict.fromkeys(BASE_TOKENS)))


def make_vocab(tokens):
    return Vocab(tuple(dict.fromkeys(SPECIAL_TOKENS + tuple(tokens))))


def synthetic_words(n_words, seed=0, n_syllables=30):
    """Pseudo-words built from a fixed syllable set (multi-piece under a small vocab)."""
    rng = random.Random(seed)
    sylls = ["ba", "ko", "ri", "tu", "ne", "sa", "mi", "lo", "pe", "da", "vu", "xi", "ch", "or", "an"][: max(3, n_syllables)]
    words = set()
    while len(words) < n_words:
        words.add("".join(rng.choice(sylls) for _ in range(rng.randint(1, 4))))
    return sorted(words)


def zipf_text(n_tokens, vocab_words, seed=0, exponent=1.1):
    rng = np.random.default_rng(seed)
    ranks = np.arange(1, len(vocab_words) + 1)
    p = ranks ** -exponent
    p /= p.sum()
    idx = rng.choice(len(vocab_words), size=n_tokens, p=p)
    return [vocab_words[i] for i in idx]
