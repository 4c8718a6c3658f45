"""WordPiece vocabulary, greedy longest-match tokenizer, trainer and word grouping."""

from __future__ import annotations

import heapq
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)
CONTINUATION_PREFIX = "##"
MAX_WORD_CHARS = 100


class VocabError(ValueError):
    pass


@dataclass(frozen=True)
class TokenizerOptions:
    lowercase: bool = True
    strip_accents: bool = True
    split_cjk: bool = True
    max_word_chars: int = MAX_WORD_CHARS


@dataclass(frozen=True, eq=False)
class Vocab:
    """Ordered token inventory; the position of a token is its id."""

    tokens: tuple[str, ...]
    options: TokenizerOptions = TokenizerOptions()
    prefix: str = CONTINUATION_PREFIX
    id_of: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        tokens = tuple(self.tokens)
        object.__setattr__(self, "tokens", tokens)
        id_of = {}
        dupes = []
        for i, tok in enumerate(tokens):
            if tok in id_of:
                dupes.append(tok)
            id_of[tok] = i
        if dupes:
            raise VocabError(f"duplicate tokens in vocab: {sorted(set(dupes))[:10]}")
        missing = [s for s in SPECIAL_TOKENS if s not in id_of]
        if missing:
            raise VocabError(f"vocab is missing special tokens: {missing}")
        object.__setattr__(self, "id_of", id_of)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.id_of

    def __eq__(self, other):
        if not isinstance(other, Vocab):
            return NotImplemented
        return self.tokens == other.tokens and self.options == other.options

    def __hash__(self):
        return hash(self.tokens)

    @property
    def pad_id(self) -> int:
        return self.id_of[PAD]

    @property
    def unk_id(self) -> int:
        return self.id_of[UNK]

    @property
    def cls_id(self) -> int:
        return self.id_of[CLS]

    @property
    def sep_id(self) -> int:
        return self.id_of[SEP]

    @property
    def mask_id(self) -> int:
        return self.id_of[MASK]

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(self.id_of[s] for s in SPECIAL_TOKENS)

    def is_continuation(self, token_id: int) -> bool:
        return self.tokens[token_id].startswith(self.prefix)

    def convert_ids(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def sha256(self) -> str:
        import hashlib

        return hashlib.sha256(vocab_text(self).encode("utf-8")).hexdigest()


def vocab_text(vocab: Vocab) -> str:
    return "".join(tok + "\n" for tok in vocab.tokens)


def save_vocab(vocab: Vocab, path) -> None:
    """Write ``vocab.txt``: one token per line, line number is the id."""
    Path(path).write_text(vocab_text(vocab), encoding="utf-8")


def load_vocab(path, options: TokenizerOptions | None = None) -> Vocab:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return Vocab(tuple(line.rstrip("\r") for line in lines), options or TokenizerOptions())


# --- normalization -------------------------------------------------------

def _is_whitespace(char):
    if char in " \t\n\r":
        return True
    return unicodedata.category(char) == "Zs"


def _is_control(char):
    if char in "\t\n\r":
        return False
    return unicodedata.category(char).startswith("C")


def _is_punctuation(char):
    cp = ord(char)
    # all non-alphanumeric printable ASCII counts as punctuation
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return unicodedata.category(char).startswith("P")


def _is_cjk(cp):
    return (
        0x4E00 <= cp <= 0x9FFF
        or 0x3400 <= cp <= 0x4DBF
        or 0x20000 <= cp <= 0x2A6DF
        or 0x2A700 <= cp <= 0x2B73F
        or 0x2B740 <= cp <= 0x2B81F
        or 0x2B820 <= cp <= 0x2CEAF
        or 0xF900 <= cp <= 0xFAFF
        or 0x2F800 <= cp <= 0x2FA1F
    )


def _strip_accents(text):
    return "".join(c for c in unicodedata.normalize("NFD", text) if unicodedata.category(c) != "Mn")


_ASCII_CONTROLS = {c: None for c in range(32) if chr(c) not in "\t\n\r"}
_ASCII_CONTROLS[127] = None
_ASCII_WORD = re.compile(r"[A-Za-z0-9]+|[^\sA-Za-z0-9]")


def _basic_tokenize_slow(text: str, options: TokenizerOptions) -> list[str]:
    chars = []
    for char in text:
        cp = ord(char)
        if cp == 0 or cp == 0xFFFD or _is_control(char):
            continue
        if _is_whitespace(char):
            chars.append(" ")
        elif options.split_cjk and _is_cjk(cp):
            chars.extend((" ", char, " "))
        else:
            chars.append(char)
    words = []
    for token in "".join(chars).split():
        if options.lowercase:
            token = token.lower()
        if options.strip_accents:
            token = _strip_accents(token)
        current = []
        for char in token:
            if _is_punctuation(char):
                if current:
                    words.append("".join(current))
                    current = []
                words.append(char)
            else:
                current.append(char)
        if current:
            words.append("".join(current))
    return words


def basic_tokenize(text: str, options: TokenizerOptions = TokenizerOptions()) -> list[str]:
    """Split text into normalized surface words (whitespace, punctuation, CJK)."""
    if text.isascii():
        text = text.translate(_ASCII_CONTROLS)
        if options.lowercase:
            text = text.lower()
        return _ASCII_WORD.findall(text)
    return _basic_tokenize_slow(text, options)


# --- greedy longest match --------------------------------------------------

def encode_word(word: str, vocab: Vocab, continuation: bool = False) -> list[tuple[int, int, int]]:
    """Greedy longest-match-first split of one normalized word.

    Returns ``(token_id, char_start, char_end)`` triples. An unmatchable or
    overlong word yields a single UNK covering the whole word. With
    ``continuation`` every piece, including the first, carries the prefix.
    """
    n = len(word)
    if n == 0:
        return []
    if n > vocab.options.max_word_chars:
        return [(vocab.unk_id, 0, n)]
    id_of = vocab.id_of
    prefix = vocab.prefix
    pieces = []
    start = 0
    while start < n:
        end = n
        found = None
        while start < end:
            sub = word[start:end]
            if start > 0 or continuation:
                sub = prefix + sub
            tid = id_of.get(sub)
            if tid is not None:
                found = tid
                break
            end -= 1
        if found is None:
            return [(vocab.unk_id, 0, n)]
        pieces.append((found, start, end))
        start = end
    return pieces


def tokenize(text: str, vocab: Vocab) -> list[str]:
    return vocab.convert_ids(encode(text, vocab))


def encode(text: str, vocab: Vocab) -> list[int]:
    ids = []
    for word in basic_tokenize(text, vocab.options):
        ids.extend(piece[0] for piece in encode_word(word, vocab))
    return ids


def decode(ids: Sequence[int], vocab: Vocab) -> str:
    """Join pieces back into space-separated words."""
    words = []
    for tid in ids:
        tok = vocab.tokens[tid]
        if tok.startswith(vocab.prefix) and words:
            words[-1] += tok[len(vocab.prefix):]
        else:
            words.append(tok)
    return " ".join(words)


# --- word groups --------------------------------------------------------------

@dataclass(frozen=True)
class WordGroup:
    ranges: tuple[tuple[int, int], ...]

    def __iter__(self):
        return iter(self.ranges)

    def __len__(self):
        return len(self.ranges)

    def positions(self) -> list[int]:
        return [p for start, end in self.ranges for p in range(start, end)]


def word_groups(ids: Sequence[int], vocab: Vocab) -> WordGroup:
    """Group each head token with the continuation tokens that follow it."""
    specials = vocab.special_ids
    ranges = []
    start = None
    for pos, tid in enumerate(ids):
        if tid in specials:
            if start is not None:
                ranges.append((start, pos))
                start = None
            continue
        if vocab.is_continuation(tid):
            if start is None:
                raise VocabError(
                    f"continuation token {vocab.tokens[tid]!r} at position {pos} has no head token"
                )
            continue
        if start is not None:
            ranges.append((start, pos))
        start = pos
    if start is not None:
        ranges.append((start, len(ids)))
    return WordGroup(tuple(ranges))


# --- training -----------------------------------------------------------------

def count_words(documents: Iterable[str], options: TokenizerOptions = TokenizerOptions()) -> Counter:
    counts = Counter()
    for doc in documents:
        counts.update(basic_tokenize(doc, options))
    return counts


def _split_word(word, prefix):
    return [word[0]] + [prefix + c for c in word[1:]]


def _merge_symbols(left, right, prefix):
    return left + right[len(prefix):] if right.startswith(prefix) else left + right


def _apply_merge(symbols, left, right, merged):
    out = []
    i = 0
    n = len(symbols)
    while i < n:
        if i + 1 < n and symbols[i] == left and symbols[i + 1] == right:
            out.append(merged)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


class _PairStats:
    """Incremental pair and symbol counts over a weighted word list."""

    def __init__(self, words, freqs):
        self.words = words
        self.freqs = freqs
        self.pair_count = Counter()
        self.symbol_count = Counter()
        self.pair_words = {}
        self.symbol_pairs = {}
        for idx, symbols in enumerate(words):
            self._add(idx, symbols, 1)

    def _add(self, idx, symbols, sign):
        freq = self.freqs[idx] * sign
        for s in symbols:
            self.symbol_count[s] += freq
        for pair in zip(symbols, symbols[1:]):
            self.pair_count[pair] += freq
            if sign > 0:
                self.pair_words.setdefault(pair, set()).add(idx)
                for s in pair:
                    self.symbol_pairs.setdefault(s, set()).add(pair)

    def score(self, pair) -> Fraction:
        return Fraction(
            self.pair_count[pair], self.symbol_count[pair[0]] * self.symbol_count[pair[1]]
        )

    def merge(self, left, right, merged):
        """Apply a merge; return the pairs whose score may have changed."""
        touched = set()
        for idx in sorted(self.pair_words.pop((left, right), ())):
            old = self.words[idx]
            new = _apply_merge(old, left, right, merged)
            if new == old:
                continue
            self._add(idx, old, -1)
            self._add(idx, new, 1)
            touched.update(zip(old, old[1:]))
            touched.update(zip(new, new[1:]))
            self.words[idx] = new
        for s in (left, right, merged):
            touched.update(self.symbol_pairs.get(s, ()))
        return touched


def train_vocab(
    documents: Iterable[str] | Counter,
    target_size: int,
    specials: Sequence[str] = SPECIAL_TOKENS,
    options: TokenizerOptions = TokenizerOptions(),
    min_pair_count: int = 2,
) -> Vocab:
    """Train a WordPiece vocab by likelihood-ratio pair merging.

    Starts from the specials plus every character (word-initial and
    continuation forms) seen in training, then repeatedly merges the adjacent
    pair maximizing ``count(pair) / (count(left) * count(right))`` until
    ``target_size`` tokens exist or no pair occurs ``min_pair_count`` times.
    Score ties go to the lexicographically smallest ``(left, right)``.
    ``documents`` may be raw texts or a precomputed word Counter.
    """
    word_counts = documents if isinstance(documents, Counter) else count_words(documents, options)
    word_counts = {w: c for w, c in word_counts.items() if c > 0}
    if not word_counts:
        raise VocabError("cannot train a vocab on an empty corpus")
    prefix = CONTINUATION_PREFIX
    ordered = sorted(word_counts)
    words = [_split_word(w, prefix) for w in ordered]
    freqs = [word_counts[w] for w in ordered]
    alphabet = sorted({s for symbols in words for s in symbols})
    for s in specials:
        if s in alphabet:
            alphabet.remove(s)
    if target_size <= len(specials) + len(alphabet):
        raise VocabError(
            f"target_size {target_size} must exceed specials ({len(specials)}) "
            f"+ alphabet ({len(alphabet)})"
        )
    tokens = list(specials) + alphabet
    present = set(tokens)

    stats = _PairStats(words, freqs)
    heap = [(-stats.score(p), p) for p, c in stats.pair_count.items() if c >= min_pair_count]
    heapq.heapify(heap)
    while len(tokens) < target_size and heap:
        neg_score, pair = heapq.heappop(heap)
        count = stats.pair_count.get(pair, 0)
        if count < min_pair_count or stats.score(pair) != -neg_score:
            continue
        left, right = pair
        merged = _merge_symbols(left, right, prefix)
        if merged not in present:
            tokens.append(merged)
            present.add(merged)
        for p in stats.merge(left, right, merged):
            if stats.pair_count.get(p, 0) >= min_pair_count:
                heapq.heappush(heap, (-stats.score(p), p))
    return Vocab(tuple(tokens), options)
