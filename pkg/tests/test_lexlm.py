import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridasr.errors import BadOrder, DuplicateUttId, EmptyPronunciation, MalformedArpa
from hybridasr.lexicon import SymbolTable, clean_corpus, load_lexicon
from hybridasr.ngram import count_ngrams, estimate_lm, perplexity, read_arpa, write_arpa


def test_clean_corpus():
    text, vocab = clean_corpus(["utt1 Salaam,  SALAAM", "utt2 it's well-known!", "utt3 ... ", "utt4 room 42"])
    assert text["utt1"] == ["salaam", "salaam"]
    assert text["utt2"] == ["it's", "well-known"]
    assert "utt3" not in text
    assert text["utt4"] == ["room", "42"]
    assert vocab == sorted(set(vocab)) and "42" in vocab
    with pytest.raises(DuplicateUttId):
        clean_corpus(["a x", "a y"])


def test_load_lexicon(tmp_path):
    p = tmp_path / "lexicon.txt"
    p.write_text("haan h aa n\nacha 0.6 a ch a\nacha 0.4 a c h a\nsil sil\n")
    lex = load_lexicon(p, vocab={"haan", "acha", "nahi"})
    assert ("haan", ("h", "aa", "n"), 1.0) in lex.entries
    assert sorted(p for p, _ in lex.prons("acha")) == [("a", "c", "h", "a"), ("a", "ch", "a")]
    assert lex.oov_words == ["nahi"]
    assert lex.phone_set[0] == "sil" and lex.phone_table["sil"] == 1
    assert lex.phone_table["<eps>"] == 0 and lex.word_table["<eps>"] == 0
    p.write_text("word\n")
    with pytest.raises(EmptyPronunciation):
        load_lexicon(p)


def test_symbol_table_roundtrip(tmp_path):
    t = SymbolTable(["b", "a"])
    t.write(tmp_path / "w.txt")
    assert SymbolTable.read(tmp_path / "w.txt") == t
    assert t["b"] == 1 and t.symbol(2) == "a"


def test_counts():
    c = count_ngrams([["a", "b"]], 2)
    assert dict(c[1]) == {("<s>", "a"): 1, ("a", "b"): 1, ("b", "</s>"): 1}
    assert all(not t for t in count_ngrams([], 3))
    assert count_ngrams([["a", "a"]] * 3, 1)[0][("a",)] == 6
    with pytest.raises(BadOrder):
        count_ngrams([], 0)


def _wb_oracle(text, word, hist, order):
    """Interpolated Witten-Bell evaluated recursively from raw counts."""
    c = count_ngrams(text, order)
    h = tuple(hist)[-(order - 1):] if order > 1 else ()

    def p(w, h):
        if not h:
            uni = {k[0]: v for k, v in c[0].items() if k[0] != "<s>"}
            n, t = sum(uni.values()), len(uni)
            if w == "<unk>":
                return t / (n + t)
            return uni.get(w, 0) / (n + t)
        cont = {k[-1]: v for k, v in c[len(h)].items() if k[:-1] == h}
        if not cont:
            return p(w, h[1:])
        ch, th = sum(cont.values()), len(cont)
        return (cont.get(w, 0) + th * p(w, h[1:])) / (ch + th)

    return p(word, h)


CORPORA = [
    [["a", "b"], ["a", "b"], ["a", "c"]],
    [["x", "y", "z"], ["y", "y"], ["z", "x", "y", "x"]],
    [["one"], ["one", "two", "three"], ["three", "two", "one"], ["two", "two"]],
]


@pytest.mark.parametrize("text", CORPORA)
@pytest.mark.parametrize("order", [1, 2, 3])
def test_witten_bell_normalized_and_matches_oracle(text, order):
    lm = estimate_lm(count_ngrams(text, order), order)
    words = lm.predicted_words()
    for h in lm.histories():
        assert sum(lm.prob(w, h) for w in words) == pytest.approx(1.0, abs=1e-6)
        for w in words:
            assert lm.prob(w, h) == pytest.approx(_wb_oracle(text, w, h, order), abs=1e-12)
    assert all(p <= 0 for tab in lm.probs for p in tab.values())
    for n in range(2, order + 1):
        assert all(g[:-1] in lm.probs[n - 2] for g in lm.probs[n - 1])


def test_witten_bell_hand_example():
    lm = estimate_lm(count_ngrams(CORPORA[0], 2), 2)
    assert lm.prob("b", ["a"]) == pytest.approx((2 + 2 * lm.prob("b")) / 5)


def test_unsmoothed():
    lm = estimate_lm(count_ngrams([["a", "b"]], 2), 2, "none")
    assert lm.log10_prob("b", ["a"]) == 0.0
    assert perplexity(lm, [["a", "b"]]) == pytest.approx(1.0)
    lm = estimate_lm(count_ngrams([["a", "b"], ["b", "a"]], 2), 2, "none")
    assert lm.prob("a", ["a"]) == 0.0  # seen history, unseen continuation


def test_uniform_unigram_perplexity():
    text = [["a", "b", "c"]]
    lm = estimate_lm(count_ngrams(text, 1), 1, "none")
    assert perplexity(lm, text) == pytest.approx(4.0)  # a, b, c, </s> equiprobable


def test_sentence_factorization_and_perplexity():
    text = CORPORA[1]
    lm = estimate_lm(count_ngrams(text, 3), 3)
    test = [["x", "y"], ["z", "q"], ["y"]]
    direct = 0.0
    n = 0
    for s in test:
        hist = ["<s>"]
        for w in s + ["</s>"]:
            direct += math.log10(_wb_oracle(text, w if w in lm.vocab else "<unk>", hist, 3))
            hist.append(w)
            n += 1
        assert lm.sentence_log10(s) == pytest.approx(
            sum(lm.log10_prob(w, (["<s>"] + s)[: i + 1]) for i, w in enumerate(s + ["</s>"]))
        )
    assert perplexity(lm, test) == pytest.approx(10 ** (-direct / n))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.sampled_from("abcd"), min_size=1, max_size=6), min_size=1, max_size=8), st.integers(1, 3))
def test_arpa_roundtrip(tmp_path_factory, text, order):
    lm = estimate_lm(count_ngrams(text, order), order)
    path = tmp_path_factory.mktemp("arpa") / "lm.arpa"
    write_arpa(lm, path)
    back = read_arpa(path)
    assert back.num_entries() == lm.num_entries()
    for tab, tab2 in zip(lm.probs, back.probs):
        assert tab.keys() == tab2.keys()
        assert all(abs(tab[k] - tab2[k]) <= 1e-6 for k in tab)
    assert all(abs(lm.backoffs[k] - back.backoffs[k]) <= 1e-6 for k in lm.backoffs)


def test_read_arpa_fixture_and_errors(tmp_path):
    p = tmp_path / "u.arpa"
    p.write_text("\\data\\\nngram 1=2\n\n\\1-grams:\n-0.30103 a\n-0.30103 </s>\n\n\\end\\\n")
    lm = read_arpa(p)
    assert lm.order == 1 and lm.prob("a") == pytest.approx(0.5)
    p.write_text("\\data\\\nngram 1=3\n\n\\1-grams:\n-0.30103 a\n-0.30103 </s>\n\n\\end\\\n")
    with pytest.raises(MalformedArpa):
        read_arpa(p)
    p.write_text("\\data\\\nngram 1=1\n\n\\1-grams:\n-0.30103 a\n")
    with pytest.raises(MalformedArpa):
        read_arpa(p)
