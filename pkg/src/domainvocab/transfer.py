"""Embedding-matrix construction for a domain vocabulary on top of a base model.

New tokens get either the mean of their base subtoken embeddings (the
distilled vector) or that mean averaged with the token's last-layer
representations in sampled corpus sentences (the contextualized vector).
"""

from __future__ import annotations

import enum
import json
import struct
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus_scan import SentenceHit
from .providers import EmbeddingProvider
from .wordpiece import SPECIAL_TOKENS, Vocab, VocabError, encode_word, word_groups

SCRATCH_STD = 0.02


class DistillationError(ValueError):
    pass


class MissingHitsError(KeyError):
    def __init__(self, tokens):
        self.tokens = tuple(tokens)
        super().__init__(f"no scan result for new tokens: {list(self.tokens)[:20]}")


class MatrixFormatError(ValueError):
    pass


class Provenance(enum.IntEnum):
    COPIED = 0
    DISTILLED = 1
    CONTEXTUALIZED = 2
    RANDOM = 3


class InitMode(str, enum.Enum):
    SCRATCH = "scratch"
    CONTINUED = "continued"
    AVERAGED = "averaged"
    CONTEXTUALIZED = "contextualized"


@dataclass(frozen=True)
class TokenMapping:
    domain: Vocab
    base: Vocab
    shared: tuple[tuple[int, int], ...]
    new: tuple[int, ...]

    @property
    def coverage_ratio(self) -> float:
        return len(self.shared) / len(self.domain)

    def new_tokens(self) -> list[str]:
        return [self.domain.tokens[i] for i in self.new]


def diff_vocab(domain: Vocab, base: Vocab) -> TokenMapping:
    """Split the domain vocab into tokens shared with the base vocab and new ones."""
    for name, vocab in (("domain", domain), ("base", base)):
        missing = [s for s in SPECIAL_TOKENS if s not in vocab]
        if missing:
            raise VocabError(f"{name} vocab is missing special tokens: {missing}")
    shared = []
    new = []
    for did, tok in enumerate(domain.tokens):
        bid = base.id_of.get(tok)
        if bid is None:
            new.append(did)
        else:
            shared.append((did, bid))
    return TokenMapping(domain, base, tuple(shared), tuple(new))


def base_pieces(token: str, base: Vocab) -> list[int]:
    """Base-vocab ids of a domain token; continuation tokens split in continuation mode."""
    prefix = base.prefix
    if token.startswith(prefix) and len(token) > len(prefix):
        return [p[0] for p in encode_word(token[len(prefix):], base, continuation=True)]
    return [p[0] for p in encode_word(token, base)]


def _mean_rows(rows) -> np.ndarray:
    total = np.array(rows[0], dtype=np.float64)
    for row in rows[1:]:
        total = total + np.asarray(row, dtype=np.float64)
    return total / len(rows)


def distill(token: str, base: Vocab, provider: EmbeddingProvider) -> np.ndarray:
    """Mean of the static vectors of the token's base-vocab pieces (float64)."""
    pieces = base_pieces(token, base)
    if not pieces:
        raise DistillationError(f"token {token!r} has no base pieces")
    if base.unk_id in pieces:
        raise DistillationError(f"token {token!r} contains characters unknown to the base vocab")
    return _mean_rows([provider.static_vector(p) for p in pieces])


def align_hit(hit: SentenceHit, domain: Vocab, base: Vocab) -> tuple[tuple[int, ...], tuple[int, int]]:
    """Re-tokenize a hit's sentence with the base vocab.

    Returns the base-id sentence and the span of base pieces that overlap the
    characters of the target domain token.
    """
    start, end = hit.target_span
    groups = word_groups(hit.sentence, domain)
    base_ids = []
    base_span = None
    prefix_len = len(domain.prefix)
    for g_start, g_end in groups:
        pieces = [domain.tokens[i] for i in hit.sentence[g_start:g_end]]
        if domain.unk_id in hit.sentence[g_start:g_end]:
            word_pieces = [(base.unk_id, 0, 1)]
            target_chars = None
        else:
            offsets = []
            pos = 0
            for k, piece in enumerate(pieces):
                text = piece[prefix_len:] if k > 0 else piece
                offsets.append((pos, pos + len(text)))
                pos += len(text)
            word = pieces[0] + "".join(p[prefix_len:] for p in pieces[1:])
            word_pieces = encode_word(word, base)
            target_chars = None
            if g_start <= start < g_end:
                target_chars = (offsets[start - g_start][0], offsets[end - 1 - g_start][1])
        if target_chars is not None:
            a, b = target_chars
            covered = [k for k, (_, ps, pe) in enumerate(word_pieces) if ps < b and pe > a]
            base_span = (len(base_ids) + covered[0], len(base_ids) + covered[-1] + 1)
        base_ids.extend(p[0] for p in word_pieces)
    if base_span is None:
        raise ValueError(f"hit span {hit.target_span} does not fall inside a word")
    return tuple(base_ids), base_span


def hit_representation(hit: SentenceHit, domain: Vocab, base: Vocab, provider: EmbeddingProvider) -> np.ndarray:
    sentence, span = align_hit(hit, domain, base)
    vectors = np.asarray(provider.contextual_vectors(sentence, span), dtype=np.float64)
    if vectors.shape != (span[1] - span[0], provider.dim):
        raise ValueError(f"provider returned shape {vectors.shape} for span {span}")
    return _mean_rows(list(vectors))


def _hit_order(hit: SentenceHit):
    return (hit.shard, hit.offset, hit.sentence_index, hit.target_span, hit.sentence)


def contextualize(
    token: str,
    hits: Sequence[SentenceHit],
    base: Vocab,
    provider: EmbeddingProvider,
    domain: Vocab,
    include_distilled: bool = True,
    _lock=None,
) -> np.ndarray:
    """Average the distilled vector with the token's per-sentence representations.

    Each hit contributes the mean last-layer vector over the base pieces
    covering the token. With ``include_distilled`` the distilled vector is one
    more member of the average; with no hits the distilled vector is returned
    unchanged. Hits are put in canonical order first, so the result does not
    depend on their order.
    """
    distilled = distill(token, base, provider)
    if not hits:
        return distilled
    reps = []
    for hit in sorted(hits, key=_hit_order):
        if _lock is not None:
            with _lock:
                reps.append(hit_representation(hit, domain, base, provider))
        else:
            reps.append(hit_representation(hit, domain, base, provider))
    members = [distilled] + reps if include_distilled else reps
    return _mean_rows(members)


@dataclass(eq=False)
class EmbeddingMatrix:
    rows: np.ndarray
    provenance: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = np.ascontiguousarray(self.rows, dtype=np.float32)
        self.provenance = np.asarray(self.provenance, dtype=np.uint8)
        if self.rows.ndim != 2 or self.provenance.shape != (self.rows.shape[0],):
            raise MatrixFormatError("rows must be |V| x d with one provenance tag per row")
        if not np.all(np.isfinite(self.rows)):
            raise MatrixFormatError("matrix contains non-finite values")
        if self.provenance.size and self.provenance.max() > max(Provenance):
            raise MatrixFormatError("unknown provenance tag")

    @property
    def shape(self):
        return self.rows.shape

    def __eq__(self, other):
        if not isinstance(other, EmbeddingMatrix):
            return NotImplemented
        return (
            self.rows.shape == other.rows.shape
            and np.array_equal(self.rows.view(np.uint32), other.rows.view(np.uint32))
            and np.array_equal(self.provenance, other.provenance)
            and self.meta == other.meta
        )

    def provenance_counts(self) -> dict[str, int]:
        return {p.name.lower(): int((self.provenance == p).sum()) for p in Provenance}


def _new_row(token, mode, base, provider, domain, hits, include_distilled, on_unknown, lock):
    try:
        if mode is InitMode.AVERAGED or not hits[token]:
            return distill(token, base, provider), Provenance.DISTILLED
        vec = contextualize(token, hits[token], base, provider, domain, include_distilled, _lock=lock)
        return vec, Provenance.CONTEXTUALIZED
    except DistillationError:
        if on_unknown == "random":
            return None, Provenance.RANDOM
        raise


def build_embedding_matrix(
    mode: str | InitMode,
    mapping: TokenMapping,
    provider: EmbeddingProvider | None = None,
    hits: Mapping[str, Sequence[SentenceHit]] | None = None,
    seed: int = 0,
    dim: int | None = None,
    include_distilled: bool = True,
    on_unknown: str = "error",
    workers: int = 1,
) -> EmbeddingMatrix:
    """Initialize token embeddings for one of the four modes.

    scratch: every domain row ~ N(0, 0.02^2). continued: the base vocab is
    kept and every row copied. averaged / contextualized: shared rows copied
    from the base model, new rows distilled / contextualized (distilled when a
    token has no sentences). ``on_unknown="random"`` draws a random row for new
    tokens whose base split hits UNK instead of failing.
    """
    mode = InitMode(mode)
    if on_unknown not in ("error", "random"):
        raise ValueError("on_unknown must be 'error' or 'random'")
    rng = np.random.default_rng(seed)
    meta = {"mode": mode.value, "seed": int(seed)}

    if mode is InitMode.SCRATCH:
        d = dim if dim is not None else (provider.dim if provider is not None else None)
        if d is None:
            raise ValueError("scratch mode needs dim or a provider")
        rows = rng.normal(0.0, SCRATCH_STD, size=(len(mapping.domain), d))
        meta["vocab_sha256"] = mapping.domain.sha256()
        return EmbeddingMatrix(rows, np.full(len(mapping.domain), Provenance.RANDOM), meta)

    if provider is None:
        raise ValueError(f"{mode.value} mode needs an embedding provider")
    d = provider.dim

    if mode is InitMode.CONTINUED:
        rows = np.stack([np.asarray(provider.static_vector(i), dtype=np.float32) for i in range(len(mapping.base))])
        meta["vocab_sha256"] = mapping.base.sha256()
        return EmbeddingMatrix(rows, np.full(len(mapping.base), Provenance.COPIED), meta)

    if mode is InitMode.CONTEXTUALIZED:
        if hits is None:
            raise MissingHitsError(mapping.new_tokens())
        missing = [t for t in mapping.new_tokens() if t not in hits]
        if missing:
            raise MissingHitsError(missing)

    n = len(mapping.domain)
    rows = np.zeros((n, d), dtype=np.float32)
    prov = np.zeros(n, dtype=np.uint8)
    for did, bid in mapping.shared:
        rows[did] = provider.static_vector(bid)
        prov[did] = Provenance.COPIED

    lock = None if getattr(provider, "reentrant", False) or workers <= 1 else threading.Lock()
    tokens = mapping.new_tokens()

    def work(token):
        return _new_row(token, mode, mapping.base, provider, mapping.domain, hits, include_distilled, on_unknown, lock)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, tokens))
    else:
        results = [work(t) for t in tokens]

    random_fill = rng.normal(0.0, SCRATCH_STD, size=(len(tokens), d))
    for k, (did, (vec, tag)) in enumerate(zip(mapping.new, results)):
        rows[did] = random_fill[k] if vec is None else vec
        prov[did] = tag
    meta["vocab_sha256"] = mapping.domain.sha256()
    return EmbeddingMatrix(rows, prov, meta)


# --- matrix file ---------------------------------------------------------------

MATRIX_MAGIC = b"DVEMBMAT"
MATRIX_VERSION = 1
_HEADER = struct.Struct("<8sIQI")


def export_matrix(matrix: EmbeddingMatrix, path) -> None:
    """Write the binary matrix plus a ``<path>.json`` manifest sidecar.

    Layout: magic, version, |V| (u64), d (u32), row-major little-endian
    float32 rows, then one provenance byte per row.
    """
    path = Path(path)
    n, d = matrix.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MATRIX_MAGIC, MATRIX_VERSION, n, d))
        fh.write(matrix.rows.astype("<f4", copy=False).tobytes(order="C"))
        fh.write(matrix.provenance.tobytes())
    manifest = dict(matrix.meta)
    manifest.update(rows=n, dim=d, provenance=matrix.provenance_counts())
    Path(str(path) + ".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def import_matrix(path, expected_dim: int | None = None) -> EmbeddingMatrix:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise MatrixFormatError(f"{path}: truncated header ({len(data)} bytes)")
    magic, version, n, d = _HEADER.unpack_from(data)
    if magic != MATRIX_MAGIC:
        raise MatrixFormatError(f"{path}: bad magic {magic!r}")
    if version != MATRIX_VERSION:
        raise MatrixFormatError(f"{path}: unsupported version {version}")
    if expected_dim is not None and d != expected_dim:
        raise MatrixFormatError(f"{path}: dimension {d} does not match expected {expected_dim}")
    expected = _HEADER.size + n * d * 4 + n
    if len(data) != expected:
        raise MatrixFormatError(f"{path}: expected {expected} bytes for {n}x{d}, found {len(data)}")
    body = np.frombuffer(data, dtype="<f4", count=n * d, offset=_HEADER.size).reshape(n, d)
    prov = np.frombuffer(data, dtype=np.uint8, count=n, offset=_HEADER.size + n * d * 4)
    meta = {}
    sidecar = Path(str(path) + ".json")
    if sidecar.exists():
        manifest = json.loads(sidecar.read_text(encoding="utf-8"))
        if manifest.get("rows", n) != n or manifest.get("dim", d) != d:
            raise MatrixFormatError(f"{sidecar}: manifest shape disagrees with {path}")
        meta = {k: v for k, v in manifest.items() if k not in ("rows", "dim", "provenance")}
    return EmbeddingMatrix(body.astype(np.float32), prov.copy(), meta)


# --- provider exchange -------------------------------------------------------------

@dataclass(frozen=True)
class ContextRequest:
    index: int
    sentence: tuple[int, ...]
    span: tuple[int, int]


def context_requests(mapping: TokenMapping, hits: Mapping[str, Sequence[SentenceHit]]) -> list[ContextRequest]:
    """Distinct (base sentence, span) pairs an external encoder must answer."""
    seen = {}
    for token in mapping.new_tokens():
        for hit in sorted(hits.get(token, ()), key=_hit_order):
            key = align_hit(hit, mapping.domain, mapping.base)
            if key not in seen:
                seen[key] = len(seen)
    return [ContextRequest(i, s, sp) for (s, sp), i in seen.items()]


def write_context_requests(requests: Sequence[ContextRequest], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for req in requests:
            fh.write(json.dumps({"index": req.index, "sentence_ids": list(req.sentence), "span": list(req.span)}) + "\n")


def read_context_requests(path) -> list[ContextRequest]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out.append(ContextRequest(rec["index"], tuple(rec["sentence_ids"]), tuple(rec["span"])))
    return out


RESPONSE_MAGIC = b"DVCTXRSP"
_RESP_HEADER = struct.Struct("<8sIQI")
_RESP_ENTRY = struct.Struct("<QI")


def write_context_responses(vectors: Sequence[np.ndarray], dim: int, path) -> None:
    """Consumer side: one ``(span length, dim)`` float32 block per request index."""
    with open(path, "wb") as fh:
        fh.write(_RESP_HEADER.pack(RESPONSE_MAGIC, 1, len(vectors), dim))
        for i, block in enumerate(vectors):
            block = np.asarray(block, dtype="<f4").reshape(-1, dim)
            fh.write(_RESP_ENTRY.pack(i, block.shape[0]))
            fh.write(block.tobytes(order="C"))


def read_context_responses(path, requests: Sequence[ContextRequest], dim: int) -> dict:
    """Load responses keyed by ``(sentence, span)``, checking count, order and shape."""
    data = Path(path).read_bytes()
    if len(data) < _RESP_HEADER.size:
        raise MatrixFormatError(f"{path}: truncated header")
    magic, version, count, d = _RESP_HEADER.unpack_from(data)
    if magic != RESPONSE_MAGIC or version != 1:
        raise MatrixFormatError(f"{path}: not a context response file")
    if d != dim:
        raise MatrixFormatError(f"{path}: dimension {d}, expected {dim}")
    if count != len(requests):
        raise MatrixFormatError(f"{path}: {count} responses for {len(requests)} requests")
    pos = _RESP_HEADER.size
    out = {}
    for req in requests:
        if pos + _RESP_ENTRY.size > len(data):
            raise MatrixFormatError(f"{path}: truncated at request {req.index}")
        index, n_vec = _RESP_ENTRY.unpack_from(data, pos)
        pos += _RESP_ENTRY.size
        if index != req.index:
            raise MatrixFormatError(f"{path}: response {index} out of order, expected {req.index}")
        if n_vec != req.span[1] - req.span[0]:
            raise MatrixFormatError(f"{path}: request {index} wants {req.span[1] - req.span[0]} vectors, got {n_vec}")
        size = n_vec * d * 4
        if pos + size > len(data):
            raise MatrixFormatError(f"{path}: truncated at request {index}")
        block = np.frombuffer(data, dtype="<f4", count=n_vec * d, offset=pos).reshape(n_vec, d)
        out[(req.sentence, req.span)] = block.astype(np.float64)
        pos += size
    if pos != len(data):
        raise MatrixFormatError(f"{path}: {len(data) - pos} trailing bytes")
    return out
