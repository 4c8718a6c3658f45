import random
import re
from collections import Counter, defaultdict
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from domainvocab.wordpiece import (
    SPECIAL_TOKENS,
    TokenizerOptions,
    Vocab,
    VocabError,
    _basic_tokenize_slow,
    basic_tokenize,
    decode,
    encode,
    encode_word,
    load_vocab,
    save_vocab,
    tokenize,
    train_vocab,
    word_groups,
)

from conftest import BRONCHO_PIECES, DATA, make_vocab, synthetic_words


def reference_trainer(word_counts, target, specials=SPECIAL_TOKENS):
    """Recompute every pair score from scratch each round; no incremental state."""
    words = {w: [w[0]] + ["##" + c for c in w[1:]] for w in word_counts}
    vocab = list(specials) + sorted({s for syms in words.values() for s in syms})
    while len(vocab) < target:
        pair_c, sym_c = defaultdict(int), defaultdict(int)
        for w, syms in words.items():
            f = word_counts[w]
            for s in syms:
                sym_c[s] += f
            for a, b in zip(syms, syms[1:]):
                pair_c[(a, b)] += f
        cands = [(p, c) for p, c in pair_c.items() if c >= 2]
        if not cands:
            break
        (a, b), _ = min(cands, key=lambda pc: (-Fraction(pc[1], sym_c[pc[0][0]] * sym_c[pc[0][1]]), pc[0]))
        merged = a + b[2:] if b.startswith("##") else a + b
        if merged not in vocab:
            vocab.append(merged)
        for w, syms in words.items():
            out, i = [], 0
            while i < len(syms):
                if i + 1 < len(syms) and syms[i] == a and syms[i + 1] == b:
                    out.append(merged)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            words[w] = out
    return vocab


def toy_sentences(n=50, seed=3):
    rng = random.Random(seed)
    words = synthetic_words(60, seed=seed)
    out = []
    for _ in range(n):
        sent = " ".join(rng.choice(words) for _ in range(rng.randint(4, 12)))
        out.append(sent.capitalize() + rng.choice([".", "!", ", ok."]))
    return out


class TestEncode:
    def test_six_piece_split(self, base_vocab):
        assert tokenize("bronchoconstriction", base_vocab) == list(BRONCHO_PIECES)

    def test_whole_word_in_vocab(self, base_vocab):
        assert tokenize("asthma", base_vocab) == ["asthma"]

    def test_unknown_character_gives_unk(self):
        vocab = make_vocab(["a", "b"])
        assert encode("∆∆∆", vocab) == [vocab.unk_id]

    def test_partial_match_failure_is_single_unk(self, base_vocab):
        # "lungz": "lung" matches but "##z" does not, so the whole word is UNK
        assert tokenize("lungz", base_vocab) == ["[UNK]"]

    def test_overlong_word_is_unk(self):
        vocab = make_vocab(["a", "##a"])
        assert encode("a" * 100, vocab) == [vocab.id_of["a"]] + [vocab.id_of["##a"]] * 99
        assert encode("a" * 101, vocab) == [vocab.unk_id]

    def test_case_and_accent_folding(self, base_vocab):
        assert tokenize("THE Lúng", base_vocab) == ["the", "lung"]

    def test_punctuation_split(self, base_vocab):
        assert tokenize("asthma, the lung.", base_vocab) == ["asthma", ",", "the", "lung", "."]

    def test_cjk_split(self):
        assert basic_tokenize("ab中文c") == ["ab", "中", "文", "c"]
        assert basic_tokenize("ab中文c", TokenizerOptions(split_cjk=False)) == ["ab中文c"]

    def test_offsets(self, base_vocab):
        pieces = encode_word("bronchoconstriction", base_vocab)
        assert [(s, e) for _, s, e in pieces] == [(0, 3), (3, 6), (6, 9), (9, 12), (12, 15), (15, 19)]

    def test_continuation_mode(self, base_vocab):
        pieces = encode_word("nchoco", base_vocab, continuation=True)
        assert base_vocab.convert_ids(p[0] for p in pieces) == ["##nch", "##oco"]

    @given(st.text(alphabet=st.characters(max_codepoint=127), max_size=60))
    @settings(max_examples=300)
    def test_ascii_fast_path_matches_reference(self, text):
        assert basic_tokenize(text) == _basic_tokenize_slow(text, TokenizerOptions())

    @given(st.text(alphabet="abcdrnotis", min_size=1, max_size=20))
    def test_round_trip(self, word):
        vocab = make_vocab(list("abcdrnotis") + ["##" + c for c in "abcdrnotis"] + ["bro", "##nch"])
        ids = encode(word, vocab)
        assert vocab.unk_id not in ids
        assert decode(ids, vocab) == word

    def test_pure(self, base_vocab):
        text = "Severe asthma in patients with bronchoconstriction."
        assert encode(text, base_vocab) == encode(text, base_vocab)


class TestVocab:
    def test_duplicates_rejected(self):
        with pytest.raises(VocabError, match="duplicate"):
            Vocab(SPECIAL_TOKENS + ("a", "a"))

    def test_specials_required(self):
        with pytest.raises(VocabError, match="special"):
            Vocab(("[PAD]", "a"))

    def test_file_round_trip(self, tmp_path, base_vocab):
        path = tmp_path / "vocab.txt"
        save_vocab(base_vocab, path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[base_vocab.id_of["##nch"]] == "##nch"
        assert load_vocab(path) == base_vocab

    def test_bert_style_special_ids(self, tmp_path):
        tokens = ["[PAD]"] + [f"[unused{i}]" for i in range(99)] + ["[UNK]", "[CLS]", "[SEP]", "[MASK]", "a"]
        path = tmp_path / "vocab.txt"
        path.write_text("\n".join(tokens) + "\n", encoding="utf-8")
        vocab = load_vocab(path)
        assert (vocab.pad_id, vocab.unk_id, vocab.cls_id, vocab.sep_id, vocab.mask_id) == (0, 100, 101, 102, 103)


class TestWordGroups:
    def test_six_pieces_one_group(self, base_vocab):
        ids = [base_vocab.id_of[t] for t in BRONCHO_PIECES]
        assert word_groups(ids, base_vocab).ranges == ((0, 6),)

    def test_specials_excluded(self, base_vocab):
        v = base_vocab
        ids = [v.cls_id, v.id_of["the"], v.id_of["cat"], v.sep_id]
        assert word_groups(ids, v).ranges == ((1, 2), (2, 3))

    def test_hand_labeled_fixture(self, base_vocab):
        lines = (DATA / "word_groups_fixture.tsv").read_text(encoding="utf-8").splitlines()
        tokens = lines[0].split()
        expected = tuple(tuple(int(x) for x in r.split("-")) for r in lines[1].split())
        ids = [base_vocab.id_of[t] for t in tokens]
        assert len(ids) == 10
        assert word_groups(ids, base_vocab).ranges == expected

    def test_leading_continuation_rejected(self, base_vocab):
        with pytest.raises(VocabError):
            word_groups([base_vocab.id_of["##nch"], base_vocab.id_of["the"]], base_vocab)
        with pytest.raises(VocabError):
            word_groups([base_vocab.cls_id, base_vocab.id_of["##nch"]], base_vocab)

    @given(st.lists(st.sampled_from(["the", "bro", "##nch", "##oco", "lung", "##s", "[CLS]", "[SEP]", "[MASK]", "[PAD]"]), max_size=30))
    def test_partition_of_non_special_positions(self, toks):
        from conftest import BASE_TOKENS

        vocab = Vocab(tuple(dict.fromkeys(BASE_TOKENS)))
        ids = [vocab.id_of[t] for t in toks]
        try:
            groups = word_groups(ids, vocab)
        except VocabError:
            return
        covered = groups.positions()
        assert covered == [i for i, t in enumerate(ids) if t not in vocab.special_ids]
        for start, end in groups:
            assert not vocab.is_continuation(ids[start])
            assert all(vocab.is_continuation(ids[p]) for p in range(start + 1, end))


class TestTrainVocab:
    def test_repeated_word(self):
        vocab = train_vocab(["lung " * 10], 40)
        assert "lung" in vocab
        assert len(vocab) <= 40

    def test_size_bound(self):
        for target in (42, 60, 90):
            assert len(train_vocab(toy_sentences(), target)) <= target

    def test_matches_reference_scorer(self):
        sents = toy_sentences()
        counts = Counter(w for s in sents for w in re.findall(r"[a-z0-9]+|[^\sa-z0-9]", s.lower()))
        expected = reference_trainer(counts, 120)
        assert list(train_vocab(sents, 120).tokens) == expected

    def test_stops_when_no_pair_repeats(self):
        vocab = train_vocab(["ab cd"], 100)
        # every pair occurs once, so only specials + alphabet remain
        assert list(vocab.tokens) == list(SPECIAL_TOKENS) + sorted(["a", "##b", "c", "##d"])

    def test_deterministic(self):
        sents = toy_sentences(seed=9)
        assert train_vocab(sents, 150) == train_vocab(list(sents), 150)

    def test_covers_alphabet(self):
        sents = toy_sentences()
        vocab = train_vocab(sents, 100)
        for s in sents:
            assert vocab.unk_id not in encode(s, vocab)

    def test_empty_corpus(self):
        with pytest.raises(VocabError, match="empty"):
            train_vocab([], 100)

    def test_target_too_small(self):
        with pytest.raises(VocabError, match="target_size"):
            train_vocab(["abcdef"], 8)
