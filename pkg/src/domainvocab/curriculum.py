"""Four-phase masking curriculum, learning-rate plan, MLM loss and difficulty ranking."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .masking import Corruption, MaskingConfig, MlmExample, Strategy, build_example
from .wordpiece import Vocab

CL_PEAK_LR = 1e-4
PRETRAIN_MAX_LR = 5e-4
WARMUP_PROPORTION = 0.06
DEFAULT_STEP_RATIO = (1.0, 1.25, 1.5, 1.75)

PHASE_CONFIGS = {
    "0.1": MaskingConfig(Strategy.TOKEN, 0.15, Corruption.EIGHTY_TEN_TEN),
    "0.2": MaskingConfig(Strategy.WHOLE_WORD, 0.15, Corruption.EIGHTY_TEN_TEN),
    "0.3": MaskingConfig(Strategy.WHOLE_WORD, 0.2, Corruption.EIGHTY_TEN_TEN),
    "0.4": MaskingConfig(Strategy.WHOLE_WORD, 0.2, Corruption.MASK_ONLY),
}
VERSIONS = tuple(PHASE_CONFIGS)


class ZeroProbabilityError(ArithmeticError):
    """A predictor gave probability 0 to a label: the loss is +inf."""

    def __init__(self, position: int, label: int):
        self.position = position
        self.label = label
        super().__init__(f"zero probability for label {label} at position {position} (loss is +inf)")


def phase_config(version) -> MaskingConfig:
    key = version if isinstance(version, str) else f"{float(version):.1f}"
    try:
        return PHASE_CONFIGS[key]
    except KeyError:
        raise ValueError(f"unknown curriculum version {version!r}; expected one of {list(VERSIONS)}") from None


@dataclass(frozen=True)
class CurriculumPhase:
    version: str
    masking: MaskingConfig
    steps: int
    peak_lr: float = CL_PEAK_LR


def default_phases(base_steps: int, ratio: Sequence[float] = DEFAULT_STEP_RATIO, peak_lr: float = CL_PEAK_LR):
    """The four phases with later phases getting proportionally more steps."""
    if len(ratio) != len(VERSIONS):
        raise ValueError(f"need {len(VERSIONS)} step ratios, got {len(ratio)}")
    return [
        CurriculumPhase(v, PHASE_CONFIGS[v], int(round(base_steps * r)), peak_lr)
        for v, r in zip(VERSIONS, ratio)
    ]


@dataclass(frozen=True)
class LrPlan:
    peak_lr: float
    warmup_fraction: float
    phase_steps: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "phase_steps", tuple(int(s) for s in self.phase_steps))
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in [0, 1)")
        if self.peak_lr < 0:
            raise ValueError("peak_lr must be non-negative")
        if not self.phase_steps or any(s <= 0 for s in self.phase_steps):
            raise ValueError("every phase needs a positive step count")

    @property
    def total_steps(self) -> int:
        return sum(self.phase_steps)

    @property
    def boundaries(self) -> tuple[int, ...]:
        return tuple(int(x) for x in np.cumsum(self.phase_steps))

    @classmethod
    def for_phases(cls, phases: Sequence[CurriculumPhase], warmup_fraction: float = WARMUP_PROPORTION):
        return cls(phases[0].peak_lr, warmup_fraction, tuple(p.steps for p in phases))


def lr_at(global_step: int, plan: LrPlan, phase_boundaries: Sequence[int] | None = None) -> float:
    """One global warmup-then-linear-decay schedule across all phases.

    A phase restart does not re-warm; it continues from wherever the global
    decay has reached, so the rate keeps dropping phase to phase.
    """
    total = plan.total_steps
    if phase_boundaries is not None and tuple(phase_boundaries) != plan.boundaries:
        raise ValueError(f"phase boundaries {tuple(phase_boundaries)} disagree with plan {plan.boundaries}")
    if not 0 <= global_step <= total:
        raise ValueError(f"step {global_step} outside [0, {total}]")
    warmup = plan.warmup_fraction * total
    if global_step < warmup:
        return plan.peak_lr * global_step / warmup
    return max(0.0, plan.peak_lr * (total - global_step) / (total - warmup))


def phase_of(global_step: int, boundaries: Sequence[int]) -> int:
    for i, end in enumerate(boundaries):
        if global_step < end:
            return i
    return len(boundaries) - 1


def emit_schedule(phases: Sequence[CurriculumPhase], plan: LrPlan, path=None) -> list[dict]:
    """Per-step manifest rows ``step,phase,strategy,rate,corruption,lr``; written as CSV when ``path`` is given."""
    if [p.steps for p in phases] != list(plan.phase_steps):
        raise ValueError("phase step budgets disagree with the learning-rate plan")
    bounds = plan.boundaries
    rows = []
    for step in range(plan.total_steps):
        phase = phases[phase_of(step, bounds)]
        rows.append(
            {
                "step": step,
                "phase": phase.version,
                "strategy": phase.masking.strategy.value,
                "rate": phase.masking.rate,
                "corruption": phase.masking.corruption.value,
                "lr": lr_at(step, plan),
            }
        )
    if path is not None:
        Path(path).write_text(schedule_csv(rows), encoding="utf-8", newline="")
    return rows


def schedule_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "phase", "strategy", "rate", "corruption", "lr"])
    for r in rows:
        writer.writerow([r["step"], r["phase"], r["strategy"], repr(r["rate"]), r["corruption"], repr(r["lr"])])
    return buf.getvalue()


def read_schedule(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            {**r, "step": int(r["step"]), "rate": float(r["rate"]), "lr": float(r["lr"])}
            for r in csv.DictReader(fh)
        ]


# --- evaluation ---------------------------------------------------------------------

class MaskedPredictor(Protocol):
    vocab_size: int

    def prob(self, context: Sequence[int], position: int) -> np.ndarray:
        """Distribution over the vocab for the token at ``position``."""


def mlm_loss(predictor: MaskedPredictor, example: MlmExample) -> float:
    """Mean negative log-likelihood of the labels at the selected positions (nats)."""
    if not example.selected:
        raise ValueError("example has no selected positions")
    terms = []
    for p in example.selected:
        label = example.labels[p]
        prob = float(predictor.prob(example.corrupted, p)[label])
        if prob <= 0.0:
            raise ZeroProbabilityError(p, label)
        terms.append(-math.log(prob))
    return math.fsum(terms) / len(terms)


def example_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def evaluation_examples(
    corpus_sample: Sequence[Sequence[int]], vocab: Vocab, config: MaskingConfig, seed: int, n_examples: int
) -> list[MlmExample]:
    if n_examples < 1:
        raise ValueError("n_examples must be >= 1")
    if not corpus_sample:
        raise ValueError("empty corpus sample")
    return [
        build_example(corpus_sample[i % len(corpus_sample)], vocab, config, example_seed(seed, i))
        for i in range(n_examples)
    ]


def pseudo_perplexity(
    predictor: MaskedPredictor,
    corpus_sample: Sequence[Sequence[int]],
    config: MaskingConfig,
    seed: int,
    n_examples: int,
    vocab: Vocab,
) -> float:
    """``exp`` of the mean per-example MLM loss over seeded examples.

    Example ``i`` masks ``corpus_sample[i % len]`` with its own seed derived
    from ``(seed, i)``, so the value does not depend on evaluation order.
    """
    losses = [
        mlm_loss(predictor, ex)
        for ex in evaluation_examples(corpus_sample, vocab, config, seed, n_examples)
        if ex.selected
    ]
    if not losses:
        raise ValueError("no example had a maskable position")
    return math.exp(math.fsum(losses) / len(losses))


@dataclass(frozen=True)
class DifficultyEntry:
    rank: int
    config: MaskingConfig
    perplexity: float


def difficulty_rank(
    predictor: MaskedPredictor,
    corpus_sample: Sequence[Sequence[int]],
    configs: Sequence[MaskingConfig],
    seed: int,
    vocab: Vocab,
    n_examples: int | None = None,
    rel_tol: float = 1e-12,
) -> list[DifficultyEntry]:
    """Sort configs by pseudo-perplexity, easiest first; tied values share a rank."""
    if len(configs) < 2:
        raise ValueError("need at least two configs to rank")
    n = n_examples if n_examples is not None else len(corpus_sample)
    scored = [(pseudo_perplexity(predictor, corpus_sample, c, seed, n, vocab), i, c) for i, c in enumerate(configs)]
    scored.sort(key=lambda t: (t[0], t[1]))
    out = []
    rank = 0
    for k, (ppl, _, cfg) in enumerate(scored):
        if k > 0 and not math.isclose(ppl, scored[k - 1][0], rel_tol=rel_tol):
            rank = k
        out.append(DifficultyEntry(rank, cfg, ppl))
    return out


def difficulty_tsv(entries: Sequence[DifficultyEntry]) -> str:
    lines = ["rank\tstrategy\trate\tcorruption\tperplexity"]
    for e in entries:
        c = e.config
        lines.append(f"{e.rank}\t{c.strategy.value}\t{c.rate!r}\t{c.corruption.value}\t{e.perplexity!r}")
    return "\n".join(lines) + "\n"


class UniformPredictor:
    reentrant = True

    def __init__(self, vocab_size: int):
        self.vocab_size = vocab_size
        self._dist = np.full(vocab_size, 1.0 / vocab_size)

    def prob(self, context, position):
        return self._dist


class BackoffBigramPredictor:
    """Context-sensitive stand-in for a masked LM, fit on token-id sequences.

    Combines a left bigram ``P(w | left)`` and a right bigram ``P(w | right)``,
    each smoothed toward the unigram by additive backoff, using only
    neighbours that are not MASK. A visible (non-MASK) token at the predicted
    position gets extra mass ``keep_weight``, as an MLM can copy its input.
    """

    reentrant = True

    def __init__(
        self,
        sequences: Sequence[Sequence[int]],
        vocab_size: int,
        mask_id: int,
        backoff: float = 1.0,
        keep_weight: float = 0.5,
    ):
        self.vocab_size = vocab_size
        self.mask_id = mask_id
        self.backoff = backoff
        self.keep_weight = keep_weight
        V = vocab_size
        unigram = np.ones(V)
        follow = np.zeros((V, V))
        for seq in sequences:
            ids = np.asarray(seq, dtype=np.int64)
            np.add.at(unigram, ids, 1.0)
            if len(ids) > 1:
                np.add.at(follow, (ids[:-1], ids[1:]), 1.0)
        self.unigram = unigram / unigram.sum()
        b = backoff * self.unigram
        self.left = (follow + b) / (follow.sum(axis=1, keepdims=True) + backoff)
        self.right = (follow.T + b) / (follow.sum(axis=0)[:, None] + backoff)

    def prob(self, context, position):
        dist = self.unigram
        n = len(context)
        left = context[position - 1] if position > 0 else None
        right = context[position + 1] if position + 1 < n else None
        parts = []
        if left is not None and left != self.mask_id:
            parts.append(self.left[left])
        if right is not None and right != self.mask_id:
            parts.append(self.right[right])
        if len(parts) == 1:
            dist = parts[0]
        elif len(parts) == 2:
            joint = parts[0] * parts[1] / self.unigram
            dist = joint / joint.sum()
        seen = context[position]
        if seen != self.mask_id and self.keep_weight > 0:
            dist = (1.0 - self.keep_weight) * dist
            dist = dist.copy()
            dist[seen] += self.keep_weight
        return dist
