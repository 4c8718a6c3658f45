"""Corpus frequency categories, embedding anisotropy and frequency-stratified export."""

from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .transfer import EmbeddingMatrix
from .wordpiece import Vocab

DEFAULT_BOUNDARIES = (10, 100, 1000)
CATEGORY_NAMES = ("rare", "low", "mid", "high")


def _check_boundaries(boundaries) -> tuple[int, int, int]:
    b = tuple(int(x) for x in boundaries)
    if len(b) != 3 or b[0] < 1 or not b[0] < b[1] < b[2]:
        raise ValueError(f"boundaries must be 3 strictly ascending positive ints, got {boundaries}")
    return b


def category_of(count: int, boundaries: Sequence[int]) -> int:
    """0 for counts below the first boundary (including absent words), 3 for >= the last."""
    return bisect_right(boundaries, count)


@dataclass(frozen=True)
class FrequencyHistogram:
    boundaries: tuple[int, int, int]
    counts: tuple[int, int, int, int]

    def labels(self) -> list[str]:
        b0, b1, b2 = self.boundaries
        return [f"[1,{b0})", f"[{b0},{b1})", f"[{b1},{b2})", f"[{b2},inf)"]


def bucket_frequencies(table: Mapping[str, int], boundaries=DEFAULT_BOUNDARIES) -> FrequencyHistogram:
    b = _check_boundaries(boundaries)
    counts = [0, 0, 0, 0]
    for c in table.values():
        if c >= 1:
            counts[category_of(c, b)] += 1
    return FrequencyHistogram(b, tuple(counts))


@dataclass(frozen=True)
class CorpusComparison:
    a: FrequencyHistogram
    b: FrequencyHistogram
    distinct_a: int
    distinct_b: int
    overlap: int

    @property
    def ratios(self) -> list[float | None]:
        return [x / y if y else None for x, y in zip(self.a.counts, self.b.counts)]

    @property
    def zero_overlap(self) -> bool:
        return self.overlap == 0

    def swapped(self) -> "CorpusComparison":
        return CorpusComparison(self.b, self.a, self.distinct_b, self.distinct_a, self.overlap)

    def to_tsv(self, names=("a", "b")) -> str:
        lines = [f"category\trange\t{names[0]}\t{names[1]}\tratio"]
        for name, label, x, y, r in zip(CATEGORY_NAMES, self.a.labels(), self.a.counts, self.b.counts, self.ratios):
            lines.append(f"{name}\t{label}\t{x}\t{y}\t{'' if r is None else repr(r)}")
        return "\n".join(lines) + "\n"

    def to_json(self, names=("a", "b")) -> str:
        return json.dumps(
            {
                "boundaries": list(self.a.boundaries),
                "categories": list(CATEGORY_NAMES),
                names[0]: list(self.a.counts),
                names[1]: list(self.b.counts),
                "ratio": self.ratios,
                "distinct_words": {names[0]: self.distinct_a, names[1]: self.distinct_b},
                "overlap": self.overlap,
                "zero_overlap": self.zero_overlap,
            },
            indent=2,
        ) + "\n"


def compare_corpora(table_a: Mapping[str, int], table_b: Mapping[str, int], boundaries=DEFAULT_BOUNDARIES) -> CorpusComparison:
    present_a = {w for w, c in table_a.items() if c >= 1}
    present_b = {w for w, c in table_b.items() if c >= 1}
    return CorpusComparison(
        bucket_frequencies(table_a, boundaries),
        bucket_frequencies(table_b, boundaries),
        len(present_a),
        len(present_b),
        len(present_a & present_b),
    )


def _unrank_pairs(index: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Map linear indices over the upper triangle (i < j, row-major) to (i, j)."""
    rows = np.arange(n, dtype=np.int64)
    offsets = rows * n - rows * (rows + 1) // 2
    i = np.searchsorted(offsets, index, side="right") - 1
    return i, index - offsets[i] + i + 1


def _pair_cosines(X: np.ndarray, sq: np.ndarray, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    # same reduction for dot and squared norms, so identical rows give exactly 1
    dots = np.einsum("ij,ij->i", X[i], X[j])
    return np.clip(dots / np.sqrt(sq[i] * sq[j]), -1.0, 1.0)


def anisotropy(vectors, pairs: int | None = None, seed: int = 0, chunk: int = 1 << 16) -> float:
    """Mean cosine similarity over sampled unordered pairs of distinct vectors.

    When ``pairs`` is None or covers every pair, the exact all-pairs mean is
    returned; otherwise ``pairs`` distinct pairs are drawn uniformly without
    replacement using ``seed``.
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least two vectors")
    sq = np.einsum("ij,ij->i", X, X)
    zero = np.flatnonzero(sq == 0)
    if zero.size:
        raise ValueError(f"zero vector at index {int(zero[0])}")
    n = X.shape[0]
    total_pairs = n * (n - 1) // 2
    if pairs is None or pairs >= total_pairs:
        count = total_pairs
        idx_chunks = (np.arange(s, min(s + chunk, total_pairs), dtype=np.int64) for s in range(0, total_pairs, chunk))
    else:
        if pairs < 1:
            raise ValueError("pairs must be >= 1")
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(total_pairs, size=pairs, replace=False))
        count = pairs
        idx_chunks = (idx[s:s + chunk] for s in range(0, pairs, chunk))
    parts = []
    for idx in idx_chunks:
        i, j = _unrank_pairs(idx, n)
        parts.append(_pair_cosines(X, sq, i, j))
    return float(math.fsum(np.concatenate(parts)) / count)


def export_freq_stratified(
    matrix: EmbeddingMatrix,
    table: Mapping[str, int],
    vocab: Vocab,
    path,
    boundaries=DEFAULT_BOUNDARIES,
) -> int:
    """TSV rows ``token, frequency, category, v_0 .. v_{d-1}`` for external projection.

    Rows are the input-embedding rows of the matrix. Tokens are looked up in
    the word table verbatim, so continuation pieces and absent tokens get
    frequency 0 and the lowest category.
    """
    b = _check_boundaries(boundaries)
    n, d = matrix.shape
    if n != len(vocab):
        raise ValueError(f"matrix has {n} rows but vocab has {len(vocab)} tokens")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("token\tfrequency\tcategory\t" + "\t".join(f"v{k}" for k in range(d)) + "\n")
        for tid, token in enumerate(vocab.tokens):
            freq = int(table.get(token, 0))
            comps = "\t".join(format(float(x), ".9g") for x in matrix.rows[tid])
            fh.write(f"{token}\t{freq}\t{CATEGORY_NAMES[category_of(freq, b)]}\t{comps}\n")
    return n
