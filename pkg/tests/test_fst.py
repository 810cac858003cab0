import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridasr.errors import (
    DeterminizationBudgetExceeded,
    EmptyFst,
    NegativeEpsilonCycle,
    NotAcceptor,
    NotDeterministic,
    SemiringMismatch,
    SymbolTableMismatch,
    WrongSemiring,
)
from hybridasr.fst.algorithms import (
    compose,
    determinize_acceptor,
    minimize,
    minimize_cycle,
    push_weights,
    reverse,
    rm_epsilon,
    shortest_distance,
    shortest_path,
)
from hybridasr.fst.core import LOG, TROPICAL, Fst, linear_fst, log_plus
from hybridasr.fst.oracle import equivalent_brute, string_weights
from hybridasr.lexicon import SymbolTable

from fstgen import determinizable_acceptor, random_acceptor, random_dag_acceptor


def _fst(text, semiring=TROPICAL):
    return Fst.from_text(text, semiring)


def identity_acceptor(labels, semiring=TROPICAL):
    f = Fst(semiring)
    s = f.add_state()
    f.set_start(s)
    f.set_final(s)
    for x in labels:
        f.add_arc(s, x, x, 0.0, s)
    return f


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50))
def test_log_plus_commutative_associative(a, b, c):
    assert log_plus(a, b) == pytest.approx(log_plus(b, a), abs=1e-9)
    assert log_plus(log_plus(a, b), c) == pytest.approx(log_plus(a, log_plus(b, c)), abs=1e-9)
    assert not math.isnan(log_plus(a, b))
    assert log_plus(a, math.inf) == a


def test_zero_weight_arcs_not_stored():
    f = Fst()
    f.add_states(2)
    f.add_arc(0, 1, 1, math.inf, 1)
    assert f.num_arcs == 0


def test_sort_arcs_idempotent(rng):
    f = random_acceptor(rng)
    once = f.copy().sort_arcs().arcs
    assert f.copy().sort_arcs().sort_arcs().arcs == once


def test_text_and_binary_roundtrip(tmp_path, rng):
    f = random_acceptor(rng, eps_prob=0.3)
    g = Fst.from_text(f.to_text())
    assert equivalent_brute(f, g, 5)
    f.write(tmp_path / "f.fst")
    h = Fst.read(tmp_path / "f.fst")
    assert h.arcs == f.arcs and h.finals == f.finals and h.start == f.start


def test_compose_identity_and_empty(rng):
    x = random_acceptor(rng)
    assert equivalent_brute(compose(x, identity_acceptor([1, 2, 3])), x, 6)
    assert compose(x, Fst()).num_states == 0


def test_compose_checks():
    with pytest.raises(SemiringMismatch):
        compose(Fst(TROPICAL), Fst(LOG))
    a, b = Fst(), Fst()
    a.osyms = SymbolTable(["x"])
    b.isyms = SymbolTable(["y"])
    with pytest.raises(SymbolTableMismatch):
        compose(a, b)


def _pair_weights(fst, max_len):
    """Enumerate every path (epsilon arcs assumed acyclic) into (in, out) -> weight."""
    out = {}

    def go(s, i, o, w, depth):
        if len(i) > max_len or len(o) > max_len or depth > 4 * max_len + fst.num_states:
            return
        if fst.finals[s] != math.inf:
            k = (i, o)
            tot = w + fst.finals[s]
            out[k] = tot if k not in out else (min(out[k], tot) if fst.semiring == TROPICAL else log_plus(out[k], tot))
        for a in fst.arcs[s]:
            go(a.nextstate, i + ((a.ilabel,) if a.ilabel else ()), o + ((a.olabel,) if a.olabel else ()), w + a.weight, depth + 1)

    if fst.start >= 0:
        go(fst.start, (), (), 0.0, 0)
    return out


def _random_dag_transducer(rng, semiring, n=4, eps=0.3):
    f = Fst(semiring)
    f.add_states(n)
    f.set_start(0)
    for s in range(n):
        for d in range(s + 1, n):
            for _ in range(2):
                if rng.random() < 0.5:
                    il = 0 if rng.random() < eps else int(rng.integers(1, 3))
                    ol = 0 if rng.random() < eps else int(rng.integers(1, 3))
                    f.add_arc(s, il, ol, float(rng.uniform(0.1, 2)), d)
    f.set_final(n - 1, 0.0)
    return f


@pytest.mark.parametrize("semiring", [TROPICAL, LOG])
def test_compose_transducers_against_path_pairs(semiring):
    rng = np.random.default_rng(7)
    for _ in range(60):
        a = _random_dag_transducer(rng, semiring)
        b = _random_dag_transducer(rng, semiring)
        pa, pb = _pair_weights(a, 6), _pair_weights(b, 6)
        want = {}
        for (i, m), wa in pa.items():
            for (m2, o), wb in pb.items():
                if m == m2:
                    k = (i, o)
                    tot = wa + wb
                    want[k] = tot if k not in want else (min(want[k], tot) if semiring == TROPICAL else log_plus(want[k], tot))
        got = _pair_weights(compose(a, b), 6)
        assert got.keys() == want.keys()
        for k in want:
            assert got[k] == pytest.approx(want[k], abs=1e-9)


def test_rm_epsilon_examples():
    f = _fst("0 1 0 0 1.0\n1 2 1 1 2.0\n2 0.0\n")
    g = rm_epsilon(f)
    assert not g.has_epsilons()
    w = string_weights(g, 2)
    assert w[(1,)] == pytest.approx(3.0)
    f = _fst("0 1 0 0 1.0\n0 2 0 0 3.0\n1 3 1 1 0.0\n2 3 1 1 0.0\n3 0.0\n")
    assert string_weights(rm_epsilon(f), 1)[(1,)] == pytest.approx(1.0)
    free = _fst("0 1 1 1 0.5\n1 0.0\n")
    assert rm_epsilon(free).arcs == free.arcs


def test_rm_epsilon_negative_cycle():
    f = _fst("0 1 0 0 -1.0\n1 0 0 0 0.5\n1 2 1 1 0.0\n2 0.0\n")
    with pytest.raises(NegativeEpsilonCycle):
        rm_epsilon(f)


@pytest.mark.parametrize("semiring", [TROPICAL, LOG])
def test_rm_epsilon_cyclic(semiring):
    rng = np.random.default_rng(3)
    for _ in range(40):
        f = random_acceptor(rng, semiring, eps_prob=0.3, acyclic_eps=False)
        assert equivalent_brute(f, rm_epsilon(f), 5)


def test_determinize_hand_example():
    f = _fst("0 1 1 1 2.0\n0 2 1 1 5.0\n1 0.0\n2 0.0\n")
    d = determinize_acceptor(f)
    assert d.is_deterministic()
    assert [a.weight for a in d.arcs[d.start]] == [2.0]
    nxt = d.arcs[d.start][0].nextstate
    assert d.finals[nxt] == pytest.approx(0.0)
    assert string_weights(d, 1)[(1,)] == pytest.approx(2.0)


def test_determinize_errors():
    with pytest.raises(NotAcceptor):
        determinize_acceptor(_fst("0 1 1 2 0.0\n1 0.0\n"))
    # a classic non-determinizable tropical graph (fails the twins property)
    f = _fst("0 1 1 1 0.0\n0 2 1 1 0.0\n1 1 2 2 1.0\n2 2 2 2 2.0\n1 3 3 3 0.0\n2 3 4 4 0.0\n3 0.0\n")
    with pytest.raises(DeterminizationBudgetExceeded):
        determinize_acceptor(f)


def test_deterministic_input_stays_small(rng):
    for _ in range(20):
        f = determinize_acceptor(random_dag_acceptor(rng))
        g = determinize_acceptor(f)
        assert g.num_states <= f.num_states
        assert equivalent_brute(f, g, 6)


def test_minimize_merges_redundant_branches():
    # 0 -a-> 1 -b-> 3 and 0 -c-> 2 -b-> 4: states 1/2 and 3/4 are equivalent
    f = _fst("0 1 1 1 1.0\n0 2 3 3 1.0\n1 3 2 2 0.5\n2 4 2 2 0.5\n3 0.0\n4 0.0\n")
    assert f.num_states == 5
    m = minimize(f)
    assert m.num_states == 3
    assert equivalent_brute(f, m, 4)
    with pytest.raises(NotDeterministic):
        minimize(_fst("0 1 1 1 0\n0 2 1 1 0\n1 0\n2 0\n"))


@pytest.mark.parametrize("semiring", [TROPICAL, LOG])
def test_push_normalizes(semiring):
    rng = np.random.default_rng(11)
    for _ in range(30):
        f = random_acceptor(rng, semiring)
        p = push_weights(f)
        assert equivalent_brute(f, p, 5)
        if p.num_states == 0:
            continue
        # every state except the start has outgoing mass one after pushing
        for s in range(p.num_states):
            if s == p.start:
                continue
            ws = [a.weight for a in p.arcs[s]] + [p.finals[s]]
            tot = min(ws) if semiring == TROPICAL else -np.logaddexp.reduce(-np.array(ws))
            assert tot == pytest.approx(0.0, abs=1e-7)


def test_reverse_involution(rng):
    for _ in range(30):
        f = random_acceptor(rng)
        assert equivalent_brute(reverse(reverse(f)), f, 5)
        r = reverse(f)
        wf, wr = string_weights(f, 4), string_weights(r, 4, sorted({a.ilabel for arcs in f.arcs for a in arcs}))
        for k, w in wf.items():
            assert wr[tuple(reversed(k))] == pytest.approx(w) or (math.isinf(w) and math.isinf(wr[tuple(reversed(k))]))


def test_minimize_cycle_never_grows():
    rng = np.random.default_rng(5)
    for _ in range(40):
        for sr in (TROPICAL, LOG):
            d = determinize_acceptor(determinizable_acceptor(rng, sr))
            g = minimize_cycle(d)
            assert g.num_states <= d.num_states
            assert equivalent_brute(d, g, 6)


def test_shortest_path():
    f = linear_fst([1, 2, 3], weights=[0.5, 0.5, 1.0])
    path, w = shortest_path(f)
    assert [a.ilabel for a in path] == [1, 2, 3] and w == pytest.approx(2.0)
    diamond = _fst("0 1 1 1 1.0\n1 3 2 2 1.0\n0 2 3 3 3.0\n2 3 4 4 0.0\n3 0.0\n")
    path, w = shortest_path(diamond)
    assert [a.ilabel for a in path] == [1, 2] and w == pytest.approx(2.0)
    with pytest.raises(EmptyFst):
        shortest_path(Fst())
    with pytest.raises(WrongSemiring):
        shortest_path(Fst(LOG))


def test_shortest_path_random_dags(rng):
    for _ in range(50):
        f = random_dag_acceptor(rng, max_states=8)
        w = string_weights(f, 8)
        best = min(w.values())
        if math.isinf(best):
            continue
        path, pw = shortest_path(f)
        assert pw == pytest.approx(best)
        assert w[tuple(a.ilabel for a in path)] == pytest.approx(best)


def test_shortest_distance_log_matches_oracle(rng):
    for _ in range(20):
        f = random_acceptor(rng, LOG)
        if f.num_states == 0:
            continue
        total = shortest_distance(f, reverse=True)[f.start]
        # total mass over all strings approaches the potential of the start
        ws = np.array(list(string_weights(f, 12).values()))
        approx = -np.logaddexp.reduce(-ws)
        assert approx >= total - 1e-9


def test_equivalent_brute_basics(rng):
    f = random_dag_acceptor(rng)
    assert equivalent_brute(f, f, 5)
    empty = Fst()
    assert equivalent_brute(empty, empty, 3)
    assert not equivalent_brute(linear_fst([1]), empty, 3)
