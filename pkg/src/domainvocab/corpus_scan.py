"""Parallel corpus scanning: word frequencies and sampled sentences per target token."""

from __future__ import annotations

import hashlib
import json
import random
import re
import unicodedata
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .wordpiece import Vocab, basic_tokenize, encode_word

CONTEXT_MIN = 1
CONTEXT_MAX = 20

# lowercased forms, trailing period included
ABBREVIATIONS = frozenset(
    """
    e.g. i.e. etc. al. vs. cf. approx. ca. fig. figs. eq. eqs. ref. refs. no. nos.
    vol. pp. p. dr. mr. mrs. ms. prof. st. jr. sr. inc. ltd. co. corp. dept. univ.
    jan. feb. mar. apr. jun. jul. aug. sep. sept. oct. nov. dec. approx. resp. min. max.
    """.split()
)

_BOUNDARY = re.compile(r"[.!?][\"')\]]*\s+(?=[A-Z0-9])")


class CorpusError(IOError):
    pass


class UnknownTargetError(KeyError):
    def __init__(self, tokens):
        self.tokens = tuple(tokens)
        super().__init__(f"targets not in vocab: {list(self.tokens)}")


@dataclass(frozen=True)
class CorpusSource:
    """Ordered shards; each shard is a text file or an in-memory list of documents."""

    shards: tuple
    names: tuple[str, ...]

    @classmethod
    def from_directory(cls, path) -> "CorpusSource":
        root = Path(path)
        if not root.is_dir():
            raise CorpusError(f"corpus directory not found: {root}")
        files = sorted(root.glob("*.txt"))
        return cls(tuple(str(f) for f in files), tuple(f.name for f in files))

    @classmethod
    def from_texts(cls, shards: Sequence[Sequence[str]]) -> "CorpusSource":
        return cls(
            tuple(tuple(docs) for docs in shards),
            tuple(f"shard-{i:03d}" for i in range(len(shards))),
        )

    def __len__(self):
        return len(self.shards)

    def documents(self, index: int) -> Iterator[str]:
        return iter_shard(self.shards[index], self.names[index])

    def iter_documents(self) -> Iterator[str]:
        for i in range(len(self)):
            yield from self.documents(i)


def iter_shard(shard, name: str) -> Iterator[str]:
    if not isinstance(shard, str):
        yield from shard
        return
    try:
        with open(shard, encoding="utf-8", newline="") as fh:
            for line in fh:
                yield line.rstrip("\r\n")
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusError(f"cannot read shard {name}: {exc}") from exc


def segment_sentences(document: str) -> list[str]:
    """Rule-based sentence split.

    Breaks after ``.``, ``!`` or ``?`` (plus closing quotes/brackets) when
    whitespace and an uppercase letter or digit follow, unless the word
    ending there is a known abbreviation or a capital initial such as ``J.``.
    """
    sentences = []
    start = 0
    for match in _BOUNDARY.finditer(document):
        end = match.start() + 1
        if document[match.start()] == ".":
            tail = document[max(start, end - 32):end].split()
            word = tail[-1].lstrip("([{\"'") if tail else ""
            if word.lower() in ABBREVIATIONS or (len(word) == 2 and word[0].isupper()):
                continue
        piece = document[start:match.end()].strip()
        if piece:
            sentences.append(piece)
        start = match.end()
    tail = document[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def _split_lines(document: str) -> list[str]:
    text = document.strip()
    return [text] if text else []


SEGMENTERS = {"rule": segment_sentences, "document": _split_lines}


# --- frequencies -------------------------------------------------------------

def _strip_punct(word: str) -> str:
    start, end = 0, len(word)
    while start < end and unicodedata.category(word[start]).startswith("P"):
        start += 1
    while end > start and unicodedata.category(word[end - 1]).startswith("P"):
        end -= 1
    return word[start:end]


def count_shard_words(shard, name: str) -> Counter:
    raw = Counter()
    for doc in iter_shard(shard, name):
        raw.update(doc.casefold().split())
    counts = Counter()
    for word, c in raw.items():
        word = _strip_punct(word)
        if word:
            counts[word] += c
    return counts


def _map_shards(fn, corpus: CorpusSource, workers: int, initializer=None, initargs=()):
    args = list(zip(corpus.shards, corpus.names))
    if workers <= 1 or len(args) <= 1:
        if initializer is not None:
            initializer(*initargs)
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(
        max_workers=min(workers, len(args)), initializer=initializer, initargs=initargs
    ) as pool:
        return list(pool.map(fn, *zip(*args)))


def count_frequencies(corpus: CorpusSource, workers: int = 1) -> Counter:
    """Exact case-folded word counts; merge is plain addition, so workers never matter."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    total = Counter()
    for part in _map_shards(count_shard_words, corpus, workers):
        total.update(part)
    return total


def write_frequencies(table: Counter, path) -> None:
    rows = sorted(table.items(), key=lambda kv: (-kv[1], kv[0]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for word, count in rows:
            fh.write(f"{word}\t{count}\n")


def read_frequencies(path) -> Counter:
    table = Counter()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            word, sep, count = line.rpartition("\t")
            if not sep:
                raise CorpusError(f"{path}:{lineno}: expected 'word<TAB>count'")
            table[word] = int(count)
    return table


# --- sampling ------------------------------------------------------------------

def _derive_seed(*parts) -> int:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


def sample_context_count(token: str, seed: int, low: int = CONTEXT_MIN, high: int = CONTEXT_MAX) -> int:
    """Number of sentences to sample for ``token``: uniform on [low, high], fixed by (token, seed)."""
    if not 1 <= low <= high:
        raise ValueError(f"need 1 <= low <= high, got {low}, {high}")
    return low + _derive_seed("context-count", seed, token) % (high - low + 1)


@dataclass(frozen=True)
class SentenceHit:
    token: str
    sentence: tuple[int, ...]
    target_span: tuple[int, int]
    shard: str
    offset: int
    sentence_index: int = 0

    @property
    def source(self) -> tuple[str, int, int]:
        return (self.shard, self.offset, self.sentence_index)

    def to_json(self) -> str:
        return json.dumps(
            {
                "token": self.token,
                "sentence_token_ids": list(self.sentence),
                "span": list(self.target_span),
                "shard": self.shard,
                "offset": self.offset,
                "sentence_index": self.sentence_index,
            },
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, line: str) -> "SentenceHit":
        rec = json.loads(line)
        return cls(
            rec["token"],
            tuple(rec["sentence_token_ids"]),
            tuple(rec["span"]),
            rec["shard"],
            rec["offset"],
            rec.get("sentence_index", 0),
        )


class Reservoir:
    """Algorithm R over a stream of unknown length, keeping ``size`` items."""

    __slots__ = ("size", "seen", "items", "_rng")

    def __init__(self, size: int, seed: int):
        self.size = size
        self.seen = 0
        self.items = []
        self._rng = random.Random(seed)

    def offer(self, item) -> None:
        self.seen += 1
        if len(self.items) < self.size:
            self.items.append(item)
            return
        j = self._rng.randrange(self.seen)
        if j < self.size:
            self.items[j] = item


def merge_reservoirs(parts: Sequence[tuple[list, int]], size: int, rng: np.random.Generator) -> list:
    """Combine per-shard uniform samples into one uniform sample of the union.

    ``parts`` holds ``(sample, population_count)`` per shard. How many items
    each shard contributes follows the multivariate hypergeometric law over
    the population counts; each shard then gives a uniform subset of its own
    sample of that size.
    """
    counts = np.array([n for _, n in parts], dtype=np.int64)
    total = int(counts.sum())
    k = min(size, total)
    if k == 0:
        return []
    if len(parts) == 1:
        take = np.array([k])
    else:
        take = rng.multivariate_hypergeometric(counts, k)
    out = []
    for (sample, _), t in zip(parts, take):
        t = int(t)
        if t == 0:
            continue
        if t == len(sample):
            out.extend(sample)
        else:
            picks = rng.choice(len(sample), size=t, replace=False)
            out.extend(sample[i] for i in sorted(picks))
    return out


# --- scanning ------------------------------------------------------------------

_SCAN_STATE = {}


def _init_scan(vocab, target_ids, sizes, seed, segmenter, dedup):
    _SCAN_STATE.update(
        vocab=vocab, target_ids=target_ids, sizes=sizes, seed=seed,
        segmenter=segmenter, dedup=dedup,
    )


def _scan_shard(shard, name):
    st = _SCAN_STATE
    vocab = st["vocab"]
    target_ids = st["target_ids"]
    sizes = st["sizes"]
    seed = st["seed"]
    split = SEGMENTERS[st["segmenter"]]
    seen_sentences = set() if st["dedup"] else None
    options = vocab.options
    cache = {}
    reservoirs = {}

    for offset, doc in enumerate(iter_shard(shard, name)):
        for s_idx, sentence in enumerate(split(doc)):
            words = basic_tokenize(sentence, options)
            found = False
            encoded = []
            for w in words:
                entry = cache.get(w)
                if entry is None:
                    ids = tuple(p[0] for p in encode_word(w, vocab))
                    entry = (ids, any(i in target_ids for i in ids))
                    cache[w] = entry
                encoded.append(entry)
                found = found or entry[1]
            if not found:
                continue
            if seen_sentences is not None:
                key = hashlib.blake2b(sentence.encode("utf-8"), digest_size=16).digest()
                if key in seen_sentences:
                    continue
                seen_sentences.add(key)
            sent_ids = tuple(i for ids, _ in encoded for i in ids)
            positions = {}
            for pos, tid in enumerate(sent_ids):
                if tid in target_ids:
                    positions.setdefault(tid, []).append(pos)
            for tid, pos_list in positions.items():
                res = reservoirs.get(tid)
                if res is None:
                    res = reservoirs[tid] = Reservoir(sizes[tid], _derive_seed("reservoir", seed, tid, name))
                res.offer((sent_ids, tuple(pos_list), offset, s_idx))
    return {tid: (res.items, res.seen) for tid, res in reservoirs.items()}


def scan_for_tokens(
    corpus: CorpusSource,
    targets: Iterable[str],
    vocab: Vocab,
    cap: int = CONTEXT_MAX,
    seed: int = 0,
    workers: int = 1,
    min_count: int = CONTEXT_MIN,
    segmenter: str = "rule",
    dedup: bool = False,
) -> dict[str, list[SentenceHit]]:
    """Sample up to ``m`` sentences per target token, ``m = sample_context_count(token, seed)``.

    A sentence qualifies when its domain tokenization contains the target id.
    Each qualifying sentence is equally likely to be chosen, regardless of
    sharding or worker count. A chosen sentence gives one hit per occurrence
    of the token. ``dedup`` drops repeated sentences within a shard.
    """
    if cap < 1 or min_count < 1 or min_count > cap:
        raise ValueError(f"need 1 <= min_count <= cap, got {min_count}, {cap}")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if segmenter not in SEGMENTERS:
        raise ValueError(f"unknown segmenter {segmenter!r}; choose from {sorted(SEGMENTERS)}")
    targets = sorted(set(targets))
    missing = [t for t in targets if t not in vocab]
    if missing:
        raise UnknownTargetError(missing)
    target_ids = {vocab.id_of[t]: t for t in targets}
    sizes = {tid: sample_context_count(tok, seed, min_count, cap) for tid, tok in target_ids.items()}

    shard_results = _map_shards(
        _scan_shard, corpus, workers,
        initializer=_init_scan,
        initargs=(vocab, frozenset(target_ids), sizes, seed, segmenter, dedup),
    )

    result = {}
    for tid, token in target_ids.items():
        parts = []
        order = []
        for shard_idx, res in enumerate(shard_results):
            if tid in res:
                parts.append(res[tid])
                order.append(shard_idx)
        rng = np.random.default_rng(_derive_seed("merge", seed, tid))
        tagged = [([(idx, item) for item in sample], n) for idx, (sample, n) in zip(order, parts)]
        chosen = merge_reservoirs(tagged, sizes[tid], rng)
        chosen.sort(key=lambda x: (x[0], x[1][2], x[1][3]))
        hits = []
        for shard_idx, (sent_ids, pos_list, offset, s_idx) in chosen:
            for pos in pos_list:
                hits.append(SentenceHit(token, sent_ids, (pos, pos + 1), corpus.names[shard_idx], offset, s_idx))
        result[token] = hits
    return result


def write_hits(result: dict[str, list[SentenceHit]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for token in sorted(result):
            for hit in result[token]:
                fh.write(hit.to_json() + "\n")


def read_hits(path, targets: Iterable[str] = ()) -> dict[str, list[SentenceHit]]:
    """Load JSONL hits; tokens in ``targets`` with no records map to an empty list."""
    result = {t: [] for t in targets}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                hit = SentenceHit.from_json(line)
                result.setdefault(hit.token, []).append(hit)
    return result
