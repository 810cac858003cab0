import json
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridasr.errors import EmptyCorpus, EmptyReference
from hybridasr.score import (
    AlignmentCounts,
    align_tokens,
    cer,
    mer,
    per_metric,
    score_corpus,
    ser,
    wer,
    wil,
)

from oracles import edit_distance


def pairs_with_total_length(alphabet, max_total):
    for n in range(max_total + 1):
        for m in range(max_total - n + 1):
            for a in product(alphabet, repeat=n):
                for b in product(alphabet, repeat=m):
                    yield a, b


def test_alignment_examples():
    assert align_tokens("a b c".split(), "a b c".split()) == AlignmentCounts(3, 0, 0, 0)
    assert align_tokens("a b c".split(), "a x c d".split()) == AlignmentCounts(2, 1, 0, 1)
    assert align_tokens([], ["a"]) == AlignmentCounts(0, 0, 0, 1)
    assert align_tokens(["a"], []) == AlignmentCounts(0, 0, 1, 0)


def test_wer_examples():
    assert wer(align_tokens("a b c".split(), "a b c".split())) == 0.0
    assert wer(align_tokens(["ok"], "x ok y".split())) == pytest.approx(2.0)
    assert wer(align_tokens("a b c".split(), "a x c".split())) == pytest.approx(1 / 3)
    with pytest.raises(EmptyReference):
        wer(align_tokens([], ["a"]))


def test_two_hundred_percent_case():
    c = align_tokens(["ok"], ["x", "ok", "y"])
    assert (c.S, c.D, c.I, c.H) == (0, 0, 2, 1)
    assert wer(c) == 2.0


@pytest.mark.parametrize(
    "ref,hyp,expected",
    [("abc", "abc", 0.0), ("janbaaz", "jaanbaz", 2 / 7), ("a", "", 1.0)],
)
def test_cer_examples(ref, hyp, expected):
    assert cer(ref, hyp) == pytest.approx(expected)


def test_janbaaz_tie_break():
    c = align_tokens("janbaaz", "jaanbaz")
    assert (c.S, c.D, c.I) == (0, 1, 1)


def test_ser_examples():
    good, bad = AlignmentCounts(2), AlignmentCounts(1, 1)
    assert ser([good] * 4) == 0.0
    assert ser([good, good, good, bad]) == 0.25
    assert ser([bad] * 3) == 1.0
    with pytest.raises(EmptyCorpus):
        ser([])


def test_mer_wil_per_examples():
    ref, hyp = "a b c".split(), "a x c d".split()
    c = align_tokens(ref, hyp)
    assert mer(c) == pytest.approx(0.5)
    assert wil(c) == pytest.approx(2 / 3)
    assert per_metric(ref, hyp) == pytest.approx(2 / 3)
    same = align_tokens(ref, ref)
    assert mer(same) == wil(same) == per_metric(ref, ref) == 0.0
    empty = align_tokens(ref, [])
    assert mer(empty) == wil(empty) == per_metric(ref, []) == 1.0


def test_minimality_exhaustive():
    """Every pair over {a, b, c} with combined length <= 8 against the recursive oracle."""
    n = 0
    for a, b in pairs_with_total_length("abc", 8):
        c = align_tokens(a, b)
        assert c.errors == edit_distance(a, b), (a, b)
        assert c.n_ref == len(a) and c.n_hyp == len(b)
        n += 1
    assert n > 80000


def test_minimality_random_long(rng):
    for _ in range(3000):
        a = tuple(rng.choice(list("abc"), rng.integers(0, 9)))
        b = tuple(rng.choice(list("abc"), rng.integers(0, 9)))
        c = align_tokens(a, b)
        assert c.errors == edit_distance(a, b)
        assert min(c.H, c.S, c.D, c.I) >= 0


def test_per_never_exceeds_wer(rng):
    for _ in range(10000):
        a = list(rng.integers(0, 4, rng.integers(1, 9)))
        b = list(rng.integers(0, 4, rng.integers(0, 9)))
        assert per_metric(a, b) <= wer(align_tokens(a, b)) + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from("xyz"), min_size=1, max_size=10), st.lists(st.sampled_from("xyz"), max_size=10))
def test_metric_ranges(ref, hyp):
    c = align_tokens(ref, hyp)
    assert 0 <= mer(c) <= 1
    assert 0 <= wil(c) <= 1
    assert (wer(c) == 0) == (ref == hyp)


def test_corpus_wer_pools_counts(tmp_path):
    refs = {"u1": ["a"], "u2": "a b c d".split()}
    hyps = {"u1": ["b"], "u2": "a b c d".split()}
    rep = score_corpus(refs, hyps)
    assert rep.wer == pytest.approx(1 / 5)
    assert rep.wer != pytest.approx(np.mean([1.0, 0.0]))
    assert rep.ser == 0.5 and rep.num_utts == 2
    d = json.loads(rep.to_json())
    assert d["counts"] == {"H": 4, "S": 1, "D": 0, "I": 0}
    assert rep.to_text().splitlines()[-1].startswith("WER 20.00 SER 50.00")


def test_missing_hypothesis_counts_as_deletions():
    rep = score_corpus({"u1": ["a", "b"]}, {})
    assert rep.wer == 1.0 and rep.counts.D == 2
