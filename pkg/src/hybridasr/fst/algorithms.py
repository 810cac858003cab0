"""Composition, epsilon removal, determinization, pushing, minimization,
reversal and shortest paths over :class:`~hybridasr.fst.core.Fst`."""
import heapq
import math
from collections import defaultdict, deque

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import (
    DeterminizationBudgetExceeded,
    EmptyFst,
    NegativeEpsilonCycle,
    NotAcceptor,
    NotDeterministic,
    NumericalFailure,
    SemiringMismatch,
    SymbolTableMismatch,
    WrongSemiring,
)
from .core import LOG, ONE, TROPICAL, ZERO, Arc, Fst, plus, plus_all

__all__ = [
    "compose",
    "rm_epsilon",
    "determinize_acceptor",
    "push_weights",
    "minimize",
    "reverse",
    "minimize_cycle",
    "shortest_path",
    "shortest_distance",
    "project",
    "relabel",
    "merge_parallel_arcs",
]

QUANT = 1e-9


def _check_pair(a, b):
    if a.semiring != b.semiring:
        raise SemiringMismatch(f"{a.semiring} vs {b.semiring}")
    if a.osyms is not None and b.isyms is not None and a.osyms != b.isyms:
        raise SymbolTableMismatch("output symbols of left operand differ from input symbols of right operand")


def compose(a, b, connect=True):
    """Composition with the three-state epsilon filter.

    Filter state 0: free; 1: only left-side output-epsilon moves allowed;
    2: only right-side input-epsilon moves allowed. This keeps exactly one
    epsilon path per pair of underlying paths.
    """
    _check_pair(a, b)
    out = Fst(a.semiring, a.isyms, b.osyms)
    if a.start < 0 or b.start < 0:
        return out
    b_index = []
    for arcs in b.arcs:
        idx = defaultdict(list)
        for arc in arcs:
            idx[arc.ilabel].append(arc)
        b_index.append(idx)
    ids = {}
    queue = deque()

    def state(qa, qb, f):
        key = (qa, qb, f)
        s = ids.get(key)
        if s is None:
            s = ids[key] = out.add_state()
            queue.append(key)
        return s

    out.set_start(state(a.start, b.start, 0))
    while queue:
        qa, qb, f = key = queue.popleft()
        s = ids[key]
        fw = a.finals[qa] + b.finals[qb]
        if fw != ZERO:
            out.set_final(s, fw)
        bi = b_index[qb]
        for ea in a.arcs[qa]:
            if ea.olabel != 0:
                for eb in bi.get(ea.olabel, ()):
                    out.add_arc(s, ea.ilabel, eb.olabel, ea.weight + eb.weight, state(ea.nextstate, eb.nextstate, 0))
            else:
                if f != 2:
                    out.add_arc(s, ea.ilabel, 0, ea.weight, state(ea.nextstate, qb, 1))
                if f == 0:
                    for eb in bi.get(0, ()):
                        out.add_arc(s, ea.ilabel, eb.olabel, ea.weight + eb.weight, state(ea.nextstate, eb.nextstate, 0))
        if f != 1:
            for eb in bi.get(0, ()):
                out.add_arc(s, 0, eb.olabel, eb.weight, state(qa, eb.nextstate, 2))
    return out.connect() if connect else out


def project(fst, side="input"):
    out = fst.copy()
    for s, arcs in enumerate(out.arcs):
        out.arcs[s] = [
            Arc(a.ilabel, a.ilabel, a.weight, a.nextstate) if side == "input" else Arc(a.olabel, a.olabel, a.weight, a.nextstate)
            for a in arcs
        ]
    if side == "input":
        out.osyms = out.isyms
    else:
        out.isyms = out.osyms
    return out


def relabel(fst, imap=None, omap=None):
    out = fst.copy()
    for s, arcs in enumerate(out.arcs):
        out.arcs[s] = [
            Arc(imap[a.ilabel] if imap else a.ilabel, omap[a.olabel] if omap else a.olabel, a.weight, a.nextstate)
            for a in arcs
        ]
    return out


def merge_parallel_arcs(fst):
    """Combine arcs with identical (ilabel, olabel, nextstate) using semiring plus."""
    out = fst.copy()
    for s, arcs in enumerate(out.arcs):
        acc = {}
        for a in arcs:
            k = (a.ilabel, a.olabel, a.nextstate)
            acc[k] = plus(fst.semiring, acc.get(k, ZERO), a.weight)
        out.arcs[s] = [Arc(k[0], k[1], w, k[2]) for k, w in acc.items() if w != ZERO]
    return out.sort_arcs()


# ---------------------------------------------------------------- epsilon removal


def _eps_closure_tropical(fst, eps_arcs, src):
    n = fst.num_states
    dist = {src: ONE}
    queue = deque([src])
    in_queue = {src}
    hops = {src: 0}
    while queue:
        q = queue.popleft()
        in_queue.discard(q)
        dq = dist[q]
        for w, r in eps_arcs[q]:
            nd = dq + w
            if nd < dist.get(r, ZERO) - 1e-12:
                dist[r] = nd
                hops[r] = hops[q] + 1
                if hops[r] > n:
                    raise NegativeEpsilonCycle(f"negative-weight epsilon cycle reachable from state {src}")
                if r not in in_queue:
                    queue.append(r)
                    in_queue.add(r)
    if dist[src] < ONE - 1e-12:
        raise NegativeEpsilonCycle(f"negative-weight epsilon cycle through state {src}")
    return dist


def _eps_closures_log(fst, eps_arcs):
    """All-pairs epsilon closure in the log semiring.

    Acyclic epsilon subgraphs use memoized recursion; cyclic ones solve
    ``(I - E) D = I`` in the probability domain.
    """
    n = fst.num_states
    involved = sorted({q for q in range(n) if eps_arcs[q]} | {r for q in range(n) for _, r in eps_arcs[q]})
    order = _topo_order(eps_arcs, involved)
    closures = {}
    if order is not None:
        for q in reversed(order):
            acc = {q: ONE}
            for w, r in eps_arcs[q]:
                for t, wt in closures.get(r, {r: ONE}).items():
                    acc[t] = plus(LOG, acc.get(t, ZERO), w + wt)
            closures[q] = acc
        return closures
    pos = {q: i for i, q in enumerate(involved)}
    m = len(involved)
    rows, cols, vals = [], [], []
    for q in involved:
        for w, r in eps_arcs[q]:
            rows.append(pos[q])
            cols.append(pos[r])
            vals.append(math.exp(-w))
    e = sp.csc_matrix((vals, (rows, cols)), shape=(m, m))
    d = spla.spsolve(sp.identity(m, format="csc") - e, sp.identity(m, format="csc"))
    d = d.toarray() if sp.issparse(d) else np.atleast_2d(d)
    if np.any(d < -1e-12) or not np.all(np.isfinite(d)):
        raise NumericalFailure("epsilon closure diverges (cycle mass >= 1)")
    for q in involved:
        row = d[pos[q]]
        closures[q] = {involved[j]: -math.log(v) for j, v in enumerate(row) if v > 0}
    return closures


def _topo_order(adj, nodes):
    indeg = {q: 0 for q in nodes}
    for q in nodes:
        for _, r in adj[q]:
            indeg[r] += 1
    queue = deque(q for q in nodes if indeg[q] == 0)
    order = []
    while queue:
        q = queue.popleft()
        order.append(q)
        for _, r in adj[q]:
            indeg[r] -= 1
            if indeg[r] == 0:
                queue.append(r)
    return order if len(order) == len(nodes) else None


def rm_epsilon(fst):
    """Remove arcs with epsilon on both tapes, preserving the weighted relation."""
    if not fst.has_epsilons():
        return fst.copy()
    n = fst.num_states
    eps_arcs = [[(a.weight, a.nextstate) for a in arcs if a.ilabel == 0 and a.olabel == 0] for arcs in fst.arcs]
    if fst.semiring == LOG:
        closures = _eps_closures_log(fst, eps_arcs)
    else:
        closures = {}
        for q in range(n):
            if eps_arcs[q]:
                closures[q] = _eps_closure_tropical(fst, eps_arcs, q)
    out = Fst(fst.semiring, fst.isyms, fst.osyms)
    out.add_states(n)
    out.set_start(fst.start)
    sr = fst.semiring
    for q in range(n):
        closure = closures.get(q, {q: ONE})
        acc = {}
        fw = ZERO
        for r, d in closure.items():
            fw = plus(sr, fw, d + fst.finals[r])
            for a in fst.arcs[r]:
                if a.ilabel == 0 and a.olabel == 0:
                    continue
                k = (a.ilabel, a.olabel, a.nextstate)
                acc[k] = plus(sr, acc.get(k, ZERO), d + a.weight)
        out.finals[q] = fw
        out.arcs[q] = [Arc(k[0], k[1], w, k[2]) for k, w in acc.items() if w != ZERO]
    return out.connect().sort_arcs()


# ---------------------------------------------------------------- determinization


def _quant(w):
    return round(w / QUANT) if w != ZERO else None


def determinize_acceptor(fst, budget_factor=100):
    """Weighted subset construction for acceptors.

    Subset states are sets of (state, residual weight); the residual is what
    remains after the common prefix weight has been emitted on the arc.
    """
    if not fst.is_acceptor():
        raise NotAcceptor("determinization requires ilabel == olabel on every arc")
    if fst.has_epsilons():
        fst = rm_epsilon(fst)
    out = Fst(fst.semiring, fst.isyms, fst.osyms)
    if fst.start < 0:
        return out
    sr = fst.semiring
    budget = budget_factor * max(fst.num_states, 1)
    ids = {}
    subsets = []

    def state(subset):
        key = tuple(sorted((q, _quant(r)) for q, r in subset.items()))
        s = ids.get(key)
        if s is None:
            if len(subsets) >= budget:
                raise DeterminizationBudgetExceeded(f"more than {budget} subset states")
            s = ids[key] = out.add_state()
            subsets.append(subset)
        return s

    out.set_start(state({fst.start: ONE}))
    i = 0
    while i < len(subsets):
        subset = subsets[i]
        out.finals[i] = plus_all(sr, (r + fst.finals[q] for q, r in subset.items()))
        by_label = defaultdict(list)
        for q, r in sorted(subset.items()):
            for a in fst.arcs[q]:
                by_label[a.ilabel].append((r + a.weight, a.nextstate))
        for label in sorted(by_label):
            items = by_label[label]
            w = plus_all(sr, (x for x, _ in items))
            nxt = {}
            for x, d in items:
                nxt[d] = plus(sr, nxt.get(d, ZERO), x)
            residual = {d: x - w for d, x in nxt.items()}
            out.add_arc(i, label, label, w, state(residual))
        i += 1
    return out.connect().sort_arcs()


# ---------------------------------------------------------------- shortest distance / pushing


def shortest_distance(fst, reverse=False):
    """Per-state potentials.

    Forward (``reverse=False``): distance from the start to each state.
    Backward: distance from each state to the final weights, i.e. the total
    weight of all accepting suffixes.
    """
    n = fst.num_states
    if n == 0:
        return []
    if fst.semiring == LOG:
        return _shortest_distance_log(fst, reverse)
    # tropical: label-correcting (Bellman-Ford with a queue)
    if reverse:
        adj = [[] for _ in range(n)]
        for s, arcs in enumerate(fst.arcs):
            for a in arcs:
                adj[a.nextstate].append((a.weight, s))
        dist = list(fst.finals)
        queue = deque(s for s in range(n) if dist[s] != ZERO)
    else:
        adj = [[(a.weight, a.nextstate) for a in arcs] for arcs in fst.arcs]
        dist = [ZERO] * n
        dist[fst.start] = ONE
        queue = deque([fst.start])
    in_queue = set(queue)
    hops = [0] * n
    while queue:
        q = queue.popleft()
        in_queue.discard(q)
        for w, r in adj[q]:
            nd = dist[q] + w
            if nd < dist[r] - 1e-12:
                dist[r] = nd
                hops[r] = hops[q] + 1
                if hops[r] > n:
                    raise NumericalFailure("negative-weight cycle in tropical shortest distance")
                if r not in in_queue:
                    queue.append(r)
                    in_queue.add(r)
    return dist


def _shortest_distance_log(fst, reverse):
    n = fst.num_states
    rows, cols, vals = [], [], []
    for s, arcs in enumerate(fst.arcs):
        for a in arcs:
            rows.append(s)
            cols.append(a.nextstate)
            vals.append(math.exp(-a.weight))
    m = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    if reverse:
        rhs = np.exp(-np.asarray(fst.finals, dtype=float))
        mat = sp.identity(n, format="csc") - m.tocsc()
    else:
        rhs = np.zeros(n)
        rhs[fst.start] = 1.0
        mat = sp.identity(n, format="csc") - m.T.tocsc()
    p = spla.spsolve(mat, rhs) if n > 1 or m.nnz else rhs / mat.toarray()[0, 0]
    p = np.atleast_1d(p)
    if not np.all(np.isfinite(p)) or np.any(p < -1e-10):
        raise NumericalFailure("log-semiring shortest distance does not converge")
    with np.errstate(divide="ignore"):
        return (-np.log(np.maximum(p, 0.0))).tolist()


def push_weights(fst):
    """Reweight toward the initial state so each state's outgoing mass is one."""
    if fst.num_states == 0:
        return fst.copy()
    v = shortest_distance(fst, reverse=True)
    out = Fst(fst.semiring, fst.isyms, fst.osyms)
    out.add_states(fst.num_states)
    for s, arcs in enumerate(fst.arcs):
        if v[s] == ZERO:
            continue
        for a in arcs:
            if v[a.nextstate] != ZERO:
                out.add_arc(s, a.ilabel, a.olabel, a.weight + v[a.nextstate] - v[s], a.nextstate)
        if fst.finals[s] != ZERO:
            out.finals[s] = fst.finals[s] - v[s]
    start = fst.start
    has_incoming = any(a.nextstate == start for arcs in fst.arcs for a in arcs)
    total = v[start]
    if total == ZERO:
        return Fst(fst.semiring, fst.isyms, fst.osyms)
    if has_incoming:
        # fresh start state carries the total weight on its arcs
        s0 = out.add_state()
        for a in out.arcs[start]:
            out.add_arc(s0, a.ilabel, a.olabel, a.weight + total, a.nextstate)
        if out.finals[start] != ZERO:
            out.finals[s0] = out.finals[start] + total
        out.set_start(s0)
    else:
        out.arcs[start] = [Arc(a.ilabel, a.olabel, a.weight + total, a.nextstate) for a in out.arcs[start]]
        if out.finals[start] != ZERO:
            out.finals[start] += total
        out.set_start(start)
    return out.connect().sort_arcs()


# ---------------------------------------------------------------- minimization


def minimize(fst, allow_nondet=False):
    """Merge equivalent states by partition refinement.

    Signatures are (final weight, multiset of (ilabel, olabel, weight,
    next class)). For deterministic acceptors this is classic minimization;
    with ``allow_nondet`` it merges bisimilar states of any graph, which
    still preserves the weighted language.
    """
    if not allow_nondet and not fst.is_deterministic():
        raise NotDeterministic("minimize requires a deterministic acceptor")
    n = fst.num_states
    if n == 0:
        return fst.copy()
    cls = [_quant(w) for w in fst.finals]
    relabel_ = {}
    cls = [relabel_.setdefault(c, len(relabel_)) for c in cls]
    num = len(relabel_)
    while True:
        sigs = {}
        new = []
        for s in range(n):
            sig = (cls[s], tuple(sorted((a.ilabel, a.olabel, _quant(a.weight), cls[a.nextstate]) for a in fst.arcs[s])))
            new.append(sigs.setdefault(sig, len(sigs)))
        if len(sigs) == num:
            cls = new
            break
        cls, num = new, len(sigs)
    out = Fst(fst.semiring, fst.isyms, fst.osyms)
    out.add_states(num)
    done = [False] * num
    for s in range(n):
        c = cls[s]
        if done[c]:
            continue
        done[c] = True
        out.finals[c] = fst.finals[s]
        for a in fst.arcs[s]:
            out.add_arc(c, a.ilabel, a.olabel, a.weight, cls[a.nextstate])
    out.set_start(cls[fst.start])
    return out.connect().sort_arcs()


def reverse(fst):
    """Epsilon-free reversal.

    A lone final state with weight one becomes the new start; otherwise a
    super-initial state takes copies of the reversed arcs leaving every final
    state (with the final weight multiplied in).
    """
    n = fst.num_states
    out = Fst(fst.semiring, fst.isyms, fst.osyms)
    if n == 0:
        return out
    out.add_states(n)
    for s, arcs in enumerate(fst.arcs):
        for a in arcs:
            out.add_arc(a.nextstate, a.ilabel, a.olabel, a.weight, s)
    out.set_final(fst.start, ONE)
    finals = fst.final_states()
    if len(finals) == 1 and fst.finals[finals[0]] == ONE:
        out.set_start(finals[0])
        return out.connect().sort_arcs()
    s0 = out.add_state()
    sr = fst.semiring
    acc = {}
    for f in finals:
        for a in out.arcs[f]:
            k = (a.ilabel, a.olabel, a.nextstate)
            acc[k] = plus(sr, acc.get(k, ZERO), a.weight + fst.finals[f])
    for k, w in acc.items():
        out.add_arc(s0, k[0], k[1], w, k[2])
    if fst.start in finals:
        out.finals[s0] = fst.finals[fst.start]
    out.set_start(s0)
    return out.connect().sort_arcs()


def minimize_cycle(fst, repetitions=3):
    """Repeated (push; minimize; reverse) shrinking for acceptor graphs.

    An odd number of reversals leaves the graph reversed, so a final
    reversal (followed by one more merge pass) restores the orientation.
    The smaller of the result and the input is returned.
    """
    g = fst
    for _ in range(repetitions):
        g = reverse(minimize(push_weights(g), allow_nondet=True))
    if repetitions % 2:
        g = minimize(push_weights(reverse(g)), allow_nondet=True)
    # reversal can add a super-initial state per pass, so a direct merge may beat the cycle
    candidates = [g, minimize(push_weights(fst), allow_nondet=True), minimize(fst, allow_nondet=True)]
    g = min(candidates, key=lambda x: x.num_states)
    return g if g.num_states <= fst.num_states else fst.copy()


# ---------------------------------------------------------------- shortest path


def shortest_path(fst):
    """Best path in the tropical semiring: ``(arcs, weight)``.

    ``arcs`` is a list of :class:`Arc`; Dijkstra is used when all weights are
    non-negative, Bellman-Ford otherwise.
    """
    if fst.semiring != TROPICAL:
        raise WrongSemiring("shortest_path needs the tropical semiring")
    if fst.start < 0 or fst.num_states == 0:
        raise EmptyFst("no states")
    n = fst.num_states
    dist = [ZERO] * n
    back = [None] * n
    dist[fst.start] = ONE
    nonneg = all(a.weight >= 0 for arcs in fst.arcs for a in arcs)
    if nonneg:
        heap = [(ONE, fst.start)]
        done = [False] * n
        while heap:
            d, q = heapq.heappop(heap)
            if done[q]:
                continue
            done[q] = True
            for a in fst.arcs[q]:
                nd = d + a.weight
                if nd < dist[a.nextstate]:
                    dist[a.nextstate] = nd
                    back[a.nextstate] = (q, a)
                    heapq.heappush(heap, (nd, a.nextstate))
    else:
        for _ in range(n):
            changed = False
            for q in range(n):
                if dist[q] == ZERO:
                    continue
                for a in fst.arcs[q]:
                    nd = dist[q] + a.weight
                    if nd < dist[a.nextstate] - 1e-12:
                        dist[a.nextstate] = nd
                        back[a.nextstate] = (q, a)
                        changed = True
            if not changed:
                break
        else:
            raise NumericalFailure("negative-weight cycle")
    best, best_w = -1, ZERO
    for s in range(n):
        w = dist[s] + fst.finals[s]
        if w < best_w:
            best, best_w = s, w
    if best < 0:
        raise EmptyFst("no accepting path")
    path = []
    s = best
    while back[s] is not None:
        q, a = back[s]
        path.append(a)
        s = q
    path.reverse()
    return path, best_w
