"""MLM example construction: position selection and input corruption."""

from __future__ import annotations

import enum
import json
import struct
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .wordpiece import Vocab, WordGroup, word_groups


class Strategy(str, enum.Enum):
    TOKEN = "TOKEN"
    WHOLE_WORD = "WHOLE_WORD"


class Corruption(str, enum.Enum):
    EIGHTY_TEN_TEN = "EIGHTY_TEN_TEN"
    MASK_ONLY = "MASK_ONLY"


class Action(str, enum.Enum):
    MASK = "mask"
    RANDOM = "random"
    KEEP = "keep"


class NoEligiblePositionsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class MaskingConfig:
    strategy: Strategy = Strategy.TOKEN
    rate: float = 0.15
    corruption: Corruption = Corruption.EIGHTY_TEN_TEN

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(self, "corruption", Corruption(self.corruption))
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"masking rate must be in [0, 1], got {self.rate}")

    def describe(self) -> str:
        return f"{self.strategy.value}/{self.rate:g}/{self.corruption.value}"


@dataclass(frozen=True)
class MlmExample:
    original: tuple[int, ...]
    corrupted: tuple[int, ...]
    labels: dict[int, int]
    selected: tuple[int, ...]
    actions: tuple[Action, ...] = field(default=(), compare=False)

    def to_json(self) -> str:
        return json.dumps(
            {
                "original": list(self.original),
                "corrupted": list(self.corrupted),
                "labels": {str(p): self.labels[p] for p in self.selected},
                "selected": list(self.selected),
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "MlmExample":
        rec = json.loads(line)
        labels = {int(p): v for p, v in rec["labels"].items()}
        return cls(tuple(rec["original"]), tuple(rec["corrupted"]), labels, tuple(rec["selected"]))


def target_count(rate: float, eligible: int) -> int:
    """``round(rate * eligible)``, at least 1 when both are positive."""
    if rate <= 0 or eligible == 0:
        return 0
    return min(eligible, max(1, int(round(rate * eligible))))


def select_positions(
    ids: Sequence[int], groups: WordGroup, config: MaskingConfig, rng: np.random.Generator
) -> tuple[int, ...]:
    """Choose prediction positions among the non-special positions covered by ``groups``.

    TOKEN draws exactly ``target_count`` positions without replacement.
    WHOLE_WORD walks a random permutation of the word groups and takes whole
    groups until the selected count first reaches the target.
    """
    if not ids:
        raise ValueError("cannot mask an empty sequence")
    eligible = groups.positions()
    if config.rate > 0 and not eligible:
        warnings.warn("sequence has no maskable positions", NoEligiblePositionsWarning, stacklevel=2)
        return ()
    k = target_count(config.rate, len(eligible))
    if k == 0:
        return ()
    if config.strategy is Strategy.TOKEN:
        picks = rng.choice(len(eligible), size=k, replace=False)
        return tuple(sorted(eligible[i] for i in picks))
    chosen = []
    for g in rng.permutation(len(groups)):
        start, end = groups.ranges[g]
        chosen.extend(range(start, end))
        if len(chosen) >= k:
            break
    return tuple(sorted(chosen))


@lru_cache(maxsize=8)
def _replacement_pool(vocab: Vocab) -> np.ndarray:
    specials = vocab.special_ids
    return np.array([i for i in range(len(vocab)) if i not in specials], dtype=np.int64)


def apply_corruption(
    ids: Sequence[int],
    selected: Sequence[int],
    config: MaskingConfig,
    rng: np.random.Generator,
    vocab: Vocab,
) -> MlmExample:
    """Corrupt selected positions; labels always hold the original ids.

    EIGHTY_TEN_TEN: per position, 0.8 MASK, 0.1 a uniformly random non-special
    id (possibly the original), 0.1 unchanged. MASK_ONLY: always MASK.
    """
    original = tuple(ids)
    corrupted = list(original)
    selected = tuple(sorted(selected))
    actions = []
    if config.corruption is Corruption.MASK_ONLY:
        for p in selected:
            corrupted[p] = vocab.mask_id
            actions.append(Action.MASK)
    else:
        pool = _replacement_pool(vocab)
        for p in selected:
            u = rng.random()
            if u < 0.8:
                corrupted[p] = vocab.mask_id
                actions.append(Action.MASK)
            elif u < 0.9:
                corrupted[p] = int(pool[rng.integers(len(pool))])
                actions.append(Action.RANDOM)
            else:
                actions.append(Action.KEEP)
    labels = {p: original[p] for p in selected}
    return MlmExample(original, tuple(corrupted), labels, selected, tuple(actions))


def build_example(ids: Sequence[int], vocab: Vocab, config: MaskingConfig, seed: int) -> MlmExample:
    rng = np.random.default_rng(seed)
    selected = select_positions(ids, word_groups(ids, vocab), config, rng)
    return apply_corruption(ids, selected, config, rng, vocab)


# --- packed binary format ---------------------------------------------------------
# per example: u32 n, then n x u32 original, n x u32 corrupted, n x i32 label (-1 = none)

_LEN = struct.Struct("<I")


def write_packed(examples: Iterable[MlmExample], fh: BinaryIO) -> int:
    count = 0
    for ex in examples:
        n = len(ex.original)
        labels = np.full(n, -1, dtype="<i4")
        for p, v in ex.labels.items():
            labels[p] = v
        fh.write(_LEN.pack(n))
        fh.write(np.asarray(ex.original, dtype="<u4").tobytes())
        fh.write(np.asarray(ex.corrupted, dtype="<u4").tobytes())
        fh.write(labels.tobytes())
        count += 1
    return count


def read_packed(fh: BinaryIO) -> list[MlmExample]:
    data = fh.read()
    out = []
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise ValueError("truncated packed example header")
        (n,) = _LEN.unpack_from(data, pos)
        pos += 4
        if pos + 12 * n > len(data):
            raise ValueError("truncated packed example body")
        original = np.frombuffer(data, "<u4", n, pos)
        corrupted = np.frombuffer(data, "<u4", n, pos + 4 * n)
        labels = np.frombuffer(data, "<i4", n, pos + 8 * n)
        pos += 12 * n
        selected = tuple(int(p) for p in np.nonzero(labels >= 0)[0])
        out.append(
            MlmExample(
                tuple(int(x) for x in original),
                tuple(int(x) for x in corrupted),
                {p: int(labels[p]) for p in selected},
                selected,
            )
        )
    return out
