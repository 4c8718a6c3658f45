"""End-to-end acceptance checks; each prints one PASS/FAIL line."""

import math
import os
import time
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from domainvocab.analysis import anisotropy, bucket_frequencies, compare_corpora
from domainvocab.corpus_scan import CorpusSource, count_frequencies, scan_for_tokens
from domainvocab.curriculum import (
    VERSIONS,
    BackoffBigramPredictor,
    LrPlan,
    UniformPredictor,
    default_phases,
    difficulty_rank,
    lr_at,
    phase_config,
    pseudo_perplexity,
)
from domainvocab.masking import Action, MaskingConfig, apply_corruption
from domainvocab.packing import pack_sequences
from domainvocab.providers import StaticProvider, WindowContextProvider
from domainvocab.transfer import Provenance, build_embedding_matrix, contextualize, diff_vocab, distill
from domainvocab.wordpiece import SPECIAL_TOKENS, Vocab, train_vocab

from conftest import BASE_TOKENS, BRONCHO_PIECES, make_vocab, synthetic_words, zipf_text


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail

    return emit


def syllable_setup(n_new, seed):
    sylls = ["ba", "ko", "ri", "tu", "ne", "sa", "mi", "lo", "pe", "da"]
    base = make_vocab(sylls + ["##" + s for s in sylls] + ["."])
    rng = np.random.default_rng(seed)
    new = set()
    while len(new) < n_new:
        new.add("".join(rng.choice(sylls, size=rng.integers(2, 5))))
    new = sorted(new)
    domain = make_vocab(list(base.tokens[len(SPECIAL_TOKENS):]) + new)
    sents = [" ".join(rng.choice(new, size=rng.integers(3, 8))).capitalize() + "." for _ in range(2000)]
    hits = scan_for_tokens(CorpusSource.from_texts([sents[:900], sents[900:]]), new, domain, seed=seed)
    return base, domain, new, hits


def test_c1_six_piece_distillation(report):
    vocab = Vocab(tuple(dict.fromkeys(BASE_TOKENS)))
    table = np.random.default_rng(1).normal(size=(len(vocab), 768)).astype(np.float32)
    start = time.perf_counter()
    got = distill("bronchoconstriction", vocab, StaticProvider(table))
    elapsed = time.perf_counter() - start
    rows = [[float(x) for x in table[vocab.id_of[p]]] for p in BRONCHO_PIECES]
    oracle = np.array([math.fsum(r[c] for r in rows) / 6 for c in range(768)])
    err = float(np.max(np.abs(got - oracle)))
    report(1, err <= 1e-9 and elapsed < 1.0, f"max abs error {err:.2e}, {elapsed * 1000:.1f} ms")


def test_c2_context_fallback(report):
    base, domain, new, hits = syllable_setup(100, seed=2)
    provider = StaticProvider(np.random.default_rng(3).normal(size=(len(base), 32)))
    exact_empty = all(np.array_equal(contextualize(t, [], base, provider, domain), distill(t, base, provider)) for t in new)
    worst = max(
        float(np.max(np.abs(contextualize(t, hits[t], base, provider, domain) - distill(t, base, provider)))) for t in new
    )
    with_hits = sum(bool(hits[t]) for t in new)
    report(2, exact_empty and worst <= 1e-9 and with_hits >= 90, f"empty-hit exact={exact_empty}, max deviation {worst:.2e} over {len(new)} tokens ({with_hits} with hits)")


def test_c3_copy_exactness(report):
    sylls = [a + b for a in "bcdfgklmnprst" for b in "aeiou"]
    base_words = sylls + ["##" + s for s in sylls] + [s + t for s in sylls[:40] for t in sylls[:12]]
    base = make_vocab(base_words[: 500 - len(SPECIAL_TOKENS)])
    assert len(base) == 500
    rng = np.random.default_rng(4)
    keep = [base.tokens[i] for i in sorted(rng.choice(np.arange(len(SPECIAL_TOKENS), 500), 250, replace=False))]
    fresh = sorted({"".join(rng.choice(sylls[:20], 3)) for _ in range(300)} - set(base.tokens))[:250]
    domain = make_vocab(keep + fresh)
    mapping = diff_vocab(domain, base)
    provider = WindowContextProvider.random(len(base), 24, seed=5)
    sents = [" ".join(rng.choice(fresh, 6)) + "." for _ in range(500)]
    hits = scan_for_tokens(CorpusSource.from_texts([sents]), mapping.new_tokens(), domain, seed=1)
    mismatches = 0
    for mode in ("averaged", "contextualized"):
        m = build_embedding_matrix(mode, mapping, provider, hits)
        for did, bid in mapping.shared:
            same = np.array_equal(m.rows[did].view(np.uint32), provider.static_vector(bid).view(np.uint32))
            mismatches += (not same) or m.provenance[did] != Provenance.COPIED
    report(3, mismatches == 0, f"{len(mapping.shared)} shared rows x 2 modes, {mismatches} mismatches")


def test_c4_corruption_ratios(report):
    vocab = Vocab(tuple(dict.fromkeys(BASE_TOKENS)))
    ids = [vocab.id_of["lung"]] * 1000
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    counts = Counter()
    for _ in range(100):
        counts.update(apply_corruption(ids, range(1000), MaskingConfig("TOKEN", 1.0, "EIGHTY_TEN_TEN"), rng, vocab).actions)
    total = sum(counts.values())
    props = [counts[a] / total for a in (Action.MASK, Action.RANDOM, Action.KEEP)]
    only = apply_corruption(ids * 100, range(100_000), MaskingConfig("TOKEN", 1.0, "MASK_ONLY"), rng, vocab)
    mask_only = sum(c == vocab.mask_id for c in only.corrupted) / 100_000
    elapsed = time.perf_counter() - start
    ok = total == 100_000 and all(abs(p - e) <= 0.01 for p, e in zip(props, (0.8, 0.1, 0.1))) and mask_only == 1.0
    report(4, ok and elapsed < 10, f"80-10-10 observed {tuple(round(p, 4) for p in props)}, MASK_ONLY {mask_only}, {elapsed:.2f} s")


def test_c5_reservoir_uniformity(report):
    sents = [f"Item s{i} has zeta here." for i in range(100)]
    vocab = make_vocab(["item", "has", "here", ".", "zeta"] + [f"s{i}" for i in range(100)])
    corpus = CorpusSource.from_texts([sents[:13], sents[13:50], sents[50:]])
    counts = Counter()
    for seed in range(10_000):
        for hit in scan_for_tokens(corpus, ["zeta"], vocab, seed=seed, cap=20)["zeta"]:
            counts[hit.source] += 1
    observed = [counts[("shard-%03d" % s, o, 0)] for s, n in enumerate((13, 37, 50)) for o in range(n)]
    assert sum(observed) == sum(counts.values())
    p = stats.chisquare(observed).pvalue
    report(5, p > 0.001, f"chi-square over 100 sentences, 10^4 seeds: p = {p:.4f}")


def test_c6_curriculum_ordering(report):
    words = synthetic_words(3000, seed=21)
    toks = zipf_text(100_000, words, seed=22)
    docs = []
    for i in range(0, len(toks), 100):
        chunk = toks[i:i + 100]
        docs.append(" ".join(" ".join(chunk[j:j + 10]).capitalize() + "." for j in range(0, len(chunk), 10)))
    vocab = train_vocab(docs[:800], 600)
    train = pack_sequences(CorpusSource.from_texts([docs[:900]]), vocab, 64)
    held = pack_sequences(CorpusSource.from_texts([docs[900:]]), vocab, 64)
    configs = [phase_config(v) for v in VERSIONS]
    pred = BackoffBigramPredictor(train, len(vocab), vocab.mask_id)
    entries = difficulty_rank(pred, held, configs, 0, vocab, n_examples=len(held))
    first = entries[0]
    strict = first.config == configs[0] and first.rank == 0 and entries[1].rank == 1
    uniform_err = max(
        abs(pseudo_perplexity(UniformPredictor(len(vocab)), held, c, 0, len(held), vocab) - len(vocab)) for c in configs
    )
    detail = ", ".join(f"{e.config.describe()}={e.perplexity:.3f}" for e in entries)
    report(6, strict and uniform_err <= 1e-6, f"{detail}; uniform |ppl - |V|| <= {uniform_err:.1e}")


def test_c7_schedule_shape(report):
    plans = [
        LrPlan(1e-4, 0.06, (10_000,)),
        LrPlan.for_phases(default_phases(1000, peak_lr=5e-4), 0.06),
        LrPlan(1e-4, 0.1, (250, 250, 250, 250)),
    ]
    problems = []
    for plan in plans:
        T, peak = plan.total_steps, plan.peak_lr
        w = plan.warmup_fraction * T
        if lr_at(0, plan) != 0.0 or lr_at(T, plan) != 0.0:
            problems.append(f"endpoints {plan}")
        if not math.isclose(lr_at(int(w), plan), peak, rel_tol=1e-12):
            problems.append(f"peak {plan}")
        lrs = [lr_at(s, plan) for s in range(T + 1)]
        for s, v in enumerate(lrs):
            closed = peak * s / w if s < w else peak * (T - s) / (T - w)
            if not math.isclose(v, closed, rel_tol=1e-12, abs_tol=1e-18):
                problems.append(f"step {s} of {plan}")
                break
        tail = lrs[math.ceil(w):]
        if any(b > a for a, b in zip(tail, tail[1:])):
            problems.append(f"decay not monotone {plan}")
    report(7, not problems, f"3 parameterizations (peak 1e-4 and 5e-4, warmup 0.06 and 0.1): {problems or 'all closed-form checks hold'}")


@pytest.mark.slow
def test_c8_scan_determinism_and_speed(report, tmp_path):
    words = np.array(synthetic_words(2000, seed=31))
    caps = np.char.capitalize(words)
    dots = np.char.add(words, ".")
    rng = np.random.default_rng(32)
    p = np.arange(1, len(words) + 1) ** -1.1
    p /= p.sum()
    size = 0
    for k in range(8):
        idx = rng.choice(len(words), size=(31_000, 60), p=p)
        cols = np.arange(60) % 12
        grid = np.where(cols == 0, caps[idx], np.where(cols == 11, dots[idx], words[idx]))
        text = "\n".join(" ".join(row) for row in grid.tolist()) + "\n"
        (tmp_path / f"shard{k}.txt").write_text(text, encoding="utf-8")
        size += len(text.encode("utf-8"))
    vocab = make_vocab(words.tolist() + ["."])
    corpus = CorpusSource.from_directory(tmp_path)
    targets = words[::10].tolist()
    t0 = time.perf_counter()
    one = scan_for_tokens(corpus, targets, vocab, seed=7, workers=1)
    t1 = time.perf_counter()
    eight = scan_for_tokens(corpus, targets, vocab, seed=7, workers=8)
    t2 = time.perf_counter()
    identical = one == eight
    speedup = (t1 - t0) / (t2 - t1)
    cores = os.cpu_count() or 1
    if cores >= 4:
        ok = identical and speedup >= 2.0
        speed = f"speedup {speedup:.2f}x on {cores} cores"
    else:
        ok = identical
        speed = f"speedup {speedup:.2f}x; 2x bound not applicable on {cores} core(s)"
    report(8, ok and size >= 100_000_000, f"{size / 1e6:.0f} MB, 8 vs 1 workers identical={identical}, {speed}")


def brute_buckets(counts, bounds=(10, 100, 1000)):
    out = [0, 0, 0, 0]
    for c in counts:
        if c < 1:
            continue
        k = 0
        while k < 3 and c >= bounds[k]:
            k += 1
        out[k] += 1
    return out


def test_c9_frequency_analytics(report):
    words = synthetic_words(20_000, seed=41)
    table = Counter(zipf_text(1_000_000, words, seed=42))
    single = list(bucket_frequencies(table).counts) == brute_buckets(table.values())
    corpora = []
    for seed, exponent in ((43, 1.3), (44, 0.9)):
        toks = zipf_text(200_000, words, seed=seed, exponent=exponent)
        corpora.append([" ".join(toks[i:i + 20]) for i in range(0, len(toks), 20)])
    ta, tb = (count_frequencies(CorpusSource.from_texts([c])) for c in corpora)
    oracle_a = brute_buckets(Counter(w for line in corpora[0] for w in line.split()).values())
    oracle_b = brute_buckets(Counter(w for line in corpora[1] for w in line.split()).values())
    cmp = compare_corpora(ta, tb)
    ok = single and list(cmp.a.counts) == oracle_a and list(cmp.b.counts) == oracle_b
    report(9, ok, f"10^6-token Zipf buckets {list(bucket_frequencies(table).counts)}; corpora A {oracle_a}, B {oracle_b}")


def test_c10_anisotropy_oracle(report):
    X = np.random.default_rng(51).normal(size=(20, 32)) + 0.2
    vals = []
    for i in range(20):
        for j in range(i + 1, 20):
            a, b = X[i].tolist(), X[j].tolist()
            dot = math.fsum(p * q for p, q in zip(a, b))
            vals.append(dot / math.sqrt(math.fsum(p * p for p in a) * math.fsum(q * q for q in b)))
    oracle = math.fsum(vals) / len(vals)
    err = abs(anisotropy(X, pairs=190) - oracle)
    same = anisotropy(np.tile(X[0], (20, 1)))
    report(10, err <= 1e-12 and same == 1.0, f"all-pairs error {err:.1e}, identical vectors -> {same!r}")
