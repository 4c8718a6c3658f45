"""Embedding providers: the static and last-layer contextual vectors of a base model.

Real encoders run elsewhere and reach this package through
:class:`ExchangeProvider`; the synthetic providers here back tests and demos.
"""

from __future__ import annotations

from typing import Protocol, Sequence, runtime_checkable

import numpy as np


@runtime_checkable
class EmbeddingProvider(Protocol):
    dim: int
    reentrant: bool

    def static_vector(self, token_id: int) -> np.ndarray:
        """Input-embedding row for a base token id (float32, shape ``(dim,)``)."""

    def contextual_vectors(self, sentence: Sequence[int], span: tuple[int, int]) -> np.ndarray:
        """Last-layer vectors for ``sentence[start:end]``, shape ``(end - start, dim)``."""


class StaticProvider:
    """Context-free provider over a fixed embedding table.

    ``contextual_vectors`` ignores the sentence and returns the static rows.
    """

    reentrant = True

    def __init__(self, table: np.ndarray):
        table = np.asarray(table, dtype=np.float32)
        if table.ndim != 2:
            raise ValueError("embedding table must be 2-D")
        self.table = table
        self.dim = table.shape[1]

    def static_vector(self, token_id):
        return self.table[token_id]

    def contextual_vectors(self, sentence, span):
        start, end = span
        return self.table[np.asarray(sentence[start:end], dtype=np.int64)].astype(np.float64)


class WindowContextProvider(StaticProvider):
    """Synthetic encoder: each position mixes its static row with its neighbours'.

    ``h[i] = E[s[i]] + weight * mean(E[s[j]] for 0 < |i - j| <= window)``,
    computed in float64. Deterministic, so it works as a stand-in for a
    frozen model in tests.
    """

    def __init__(self, table: np.ndarray, window: int = 2, weight: float = 0.5):
        super().__init__(table)
        self.window = window
        self.weight = weight

    @classmethod
    def random(cls, vocab_size: int, dim: int, seed: int = 0, **kwargs):
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, 1.0, size=(vocab_size, dim)).astype(np.float32), **kwargs)

    def contextual_vectors(self, sentence, span):
        ids = np.asarray(sentence, dtype=np.int64)
        rows = self.table[ids].astype(np.float64)
        start, end = span
        out = np.empty((end - start, self.dim))
        for k, i in enumerate(range(start, end)):
            lo, hi = max(0, i - self.window), min(len(ids), i + self.window + 1)
            neigh = [j for j in range(lo, hi) if j != i]
            ctx = rows[neigh].mean(axis=0) if neigh else np.zeros(self.dim)
            out[k] = rows[i] + self.weight * ctx
        return out


class ExchangeProvider(StaticProvider):
    """Provider whose contextual vectors were computed out of process.

    ``responses`` maps ``(sentence ids, span)`` to the vectors an external
    encoder returned for that request (see ``transfer.read_context_responses``).
    """

    def __init__(self, table: np.ndarray, responses: dict):
        super().__init__(table)
        self.responses = responses

    def contextual_vectors(self, sentence, span):
        key = (tuple(sentence), tuple(span))
        try:
            return self.responses[key]
        except KeyError:
            raise KeyError(f"no precomputed vectors for span {span} of a {len(sentence)}-token sentence") from None
