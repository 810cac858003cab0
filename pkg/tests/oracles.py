"""Straight-line reference implementations used as test oracles."""
import math
from functools import lru_cache
from itertools import product

import numpy as np


@lru_cache(maxsize=None)
def _dft_tables(n):
    k = np.arange(n // 2 + 1)[:, None]
    i = np.arange(n)[None, :]
    ang = -2.0 * np.pi * k * i / n
    return np.cos(ang), np.sin(ang)


def dft_power(frame, n):
    """Direct O(N^2) DFT power of a zero-padded frame, bins 0..n/2."""
    x = np.zeros(n)
    x[: len(frame)] = frame
    cos, sin = _dft_tables(n)
    re = (cos * x).sum(axis=1)
    im = (sin * x).sum(axis=1)
    return re * re + im * im


def mel(f):
    return 1127.0 * math.log(1.0 + f / 700.0)


def filter_weight(j, f_hz, num_bins, rate, low=20.0):
    """Weight of triangle ``j`` at frequency ``f_hz``, evaluated from its definition."""
    lo, hi = mel(low), mel(rate / 2.0)
    step = (hi - lo) / (num_bins + 1)
    left, center, right = lo + j * step, lo + (j + 1) * step, lo + (j + 2) * step
    m = mel(f_hz)
    if left < m <= center:
        return (m - left) / (center - left)
    if center < m < right:
        return (right - m) / (right - center)
    return 0.0


def dct2(v, k):
    n = len(v)
    s = sum(v[i] * math.cos(math.pi * k * (2 * i + 1) / (2 * n)) for i in range(n))
    return s * math.sqrt((1.0 if k == 0 else 2.0) / n)


@lru_cache(maxsize=None)
def _filter_table(num_bins, n, rate):
    return np.array([[filter_weight(j, b * rate / n, num_bins, rate) for b in range(n // 2 + 1)] for j in range(num_bins)])


def reference_mfcc(x, rate=16000, win=400, shift=160, preemph=0.97, num_bins=23, num_ceps=13, floor=1e-10):
    n = 1
    while n < win:
        n *= 2
    weights = _filter_table(num_bins, n, rate)
    out = []
    for t in range(1 + (len(x) - win) // shift):
        seg = x[t * shift : t * shift + win]
        y = np.empty(win)
        for i in range(win):
            y[i] = seg[i] - preemph * seg[max(i - 1, 0)]
            y[i] *= 0.54 - 0.46 * math.cos(2 * math.pi * i / (win - 1))
        p = dft_power(y, n)
        logs = [math.log(max(float(weights[j] @ p), floor)) for j in range(num_bins)]
        out.append([dct2(logs, k) for k in range(num_ceps)])
    return np.array(out)


def edit_distance(a, b):
    """Plain recursive Levenshtein distance over tuples (memoized)."""
    memo = {}

    def go(i, j):
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        key = (i, j)
        if key not in memo:
            memo[key] = min(
                go(i + 1, j) + 1,
                go(i, j + 1) + 1,
                go(i + 1, j + 1) + (a[i] != b[j]),
            )
        return memo[key]

    return go(0, 0)


def all_strings(alphabet, max_len):
    for n in range(max_len + 1):
        yield from product(alphabet, repeat=n)


def den_logprob_brute(arcs, init, logits, leaky=0.0):
    """Total log-probability by enumerating every (jump, arc) choice sequence.

    ``arcs`` is a list of (src, dst, pdf, prob). Before each frame the path
    either stays put (weight 1) or jumps to any state s (weight leaky*init[s]);
    it then takes one arc emitting exp(logit). All states are final.
    """
    n = len(init)
    T = len(logits)

    def moves(s):
        yield s, 1.0
        if leaky:
            for s2 in range(n):
                yield s2, leaky * init[s2]

    def go(t, s):
        if t == T:
            return 1.0
        total = 0.0
        for s2, wj in moves(s):
            for a, b, p, w in arcs:
                if a == s2:
                    total += wj * w * math.exp(logits[t][p]) * go(t + 1, b)
        return total

    return math.log(sum(init[s] * go(0, s) for s in range(n)))


def den_forward_log(arcs, init, logits):
    """Plain log-domain forward recursion without leaky jumps."""
    n = len(init)
    alpha = np.log(np.maximum(np.asarray(init, dtype=float), 0.0) + 0.0)
    for t in range(len(logits)):
        nxt = np.full(n, -np.inf)
        for a, b, p, w in arcs:
            nxt[b] = np.logaddexp(nxt[b], alpha[a] + math.log(w) + logits[t][p])
        alpha = nxt
    return float(np.logaddexp.reduce(alpha))


def count_paths(fst):
    """Number of accepting paths of an acyclic FST and the set of their lengths."""
    from functools import lru_cache

    @lru_cache(maxsize=None)
    def go(s):
        paths = {0: 1} if fst.finals[s] != float("inf") else {}
        for a in fst.arcs[s]:
            for n, c in go(a.nextstate).items():
                k = n + (1 if a.ilabel else 0)
                paths[k] = paths.get(k, 0) + c
        return dict(paths)

    p = go(fst.start)
    return sum(p.values()), set(p)


def decode_brute(fst, loglikes, label2pdf, acoustic_scale, max_eps=12):
    """Minimum path cost over every path emitting exactly ``len(loglikes)`` frames (plain DFS)."""
    T = len(loglikes)
    best = [math.inf]

    def go(s, t, cost, eps_run):
        if t == T and fst.finals[s] != math.inf:
            best[0] = min(best[0], cost + fst.finals[s])
        for a in fst.arcs[s]:
            if a.ilabel == 0:
                if eps_run < max_eps:
                    go(a.nextstate, t, cost + a.weight, eps_run + 1)
            elif t < T:
                ac = -acoustic_scale * loglikes[t][label2pdf[a.ilabel]]
                go(a.nextstate, t + 1, cost + a.weight + ac, 0)

    go(fst.start, 0, 0.0, 0)
    return best[0]
