"""Cut tokenized documents into model-length sequences."""

from __future__ import annotations

import json
from typing import Iterator

from .corpus_scan import SEGMENTERS, CorpusSource
from .wordpiece import Vocab, basic_tokenize, encode_word

DEFAULT_MAX_LEN = 128


def _sentence_words(sentence: str, vocab: Vocab, budget: int) -> list[list[int]]:
    words = []
    for w in basic_tokenize(sentence, vocab.options):
        ids = [p[0] for p in encode_word(w, vocab)]
        # a word longer than a whole sequence is truncated, never split
        words.append(ids[:budget])
    return words


def pack_document(document: str, vocab: Vocab, max_len: int = DEFAULT_MAX_LEN, segmenter: str = "rule") -> Iterator[list[int]]:
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    budget = max_len - 2
    if budget == 0:
        return
    current: list[int] = []
    for sentence in SEGMENTERS[segmenter](document):
        words = _sentence_words(sentence, vocab, budget)
        n = sum(len(w) for w in words)
        if n == 0:
            continue
        if len(current) + n <= budget:
            for w in words:
                current.extend(w)
            continue
        if current:
            yield [vocab.cls_id, *current, vocab.sep_id]
            current = []
        for w in words:
            if len(current) + len(w) > budget:
                yield [vocab.cls_id, *current, vocab.sep_id]
                current = []
            current.extend(w)
    if current:
        yield [vocab.cls_id, *current, vocab.sep_id]


def pack_sequences(corpus: CorpusSource, vocab: Vocab, max_len: int = DEFAULT_MAX_LEN, segmenter: str = "rule") -> list[list[int]]:
    """Tokenize sentences and concatenate them within each document up to ``max_len - 2``.

    Each sequence is wrapped in CLS/SEP. Sequences never span documents, and
    a sentence that does not fit is split only at word boundaries.
    """
    out = []
    for doc in corpus.iter_documents():
        out.extend(pack_document(doc, vocab, max_len, segmenter))
    return out


def write_sequences(sequences, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for seq in sequences:
            fh.write(json.dumps(seq) + "\n")


def read_sequences(path) -> list[list[int]]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
