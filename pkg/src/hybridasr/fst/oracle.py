"""Exhaustive reference evaluation of small acceptors (test oracle)."""
import numpy as np

from .core import LOG, TROPICAL, ZERO

__all__ = ["string_weights", "equivalent_brute", "labels_of"]


def labels_of(fst):
    return sorted({a.ilabel for arcs in fst.arcs for a in arcs} - {0})


def _matrices(fst, labels):
    n = fst.num_states
    mats = {x: np.full((n, n), np.inf) for x in list(labels) + [0]}
    for s, arcs in enumerate(fst.arcs):
        for a in arcs:
            m = mats.get(a.ilabel)
            if m is None:
                continue
            if fst.semiring == TROPICAL:
                m[s, a.nextstate] = min(m[s, a.nextstate], a.weight)
            else:
                m[s, a.nextstate] = -np.logaddexp(-m[s, a.nextstate], -a.weight)
    return mats


def _star(m, semiring):
    n = m.shape[0]
    if semiring == LOG:
        p = np.exp(-m)
        with np.errstate(divide="ignore"):
            return -np.log(np.maximum(np.linalg.inv(np.eye(n) - p), 0.0))
    d = m.copy()
    np.fill_diagonal(d, np.minimum(np.diag(d), 0.0))
    for k in range(n):
        d = np.minimum(d, d[:, k : k + 1] + d[k : k + 1, :])
    if np.any(np.diag(d) < 0):
        raise ValueError("negative epsilon cycle")
    return d


def _step(v, m, semiring):
    # v: (batch, n) prefix weights; m: (n, n) transition weights
    if semiring == TROPICAL:
        return np.min(v[:, :, None] + m[None, :, :], axis=1)
    with np.errstate(divide="ignore"):
        return -np.log(np.exp(-v) @ np.exp(-m))


def string_weights(fst, max_len, labels=None):
    """Total weight of every input string up to ``max_len`` (dict tuple -> weight).

    Sums over all paths, including epsilon paths (epsilon closure is applied
    exactly via the matrix star), so it works as a path-enumeration oracle.
    """
    labels = labels_of(fst) if labels is None else list(labels)
    n = fst.num_states
    out = {}
    if n == 0 or fst.start < 0:
        return {s: ZERO for s in _strings(labels, max_len)}
    sr = fst.semiring
    mats = _matrices(fst, labels)
    star = _star(mats[0], sr)
    step_m = {x: _step(mats[x], star, sr) for x in labels}  # label then closure
    finals = np.asarray(fst.finals, dtype=float)
    v0 = np.full((1, n), np.inf)
    v0[0, fst.start] = 0.0
    level = _step(v0, star, sr)
    keys = [()]
    for length in range(max_len + 1):
        if sr == TROPICAL:
            tot = np.min(level + finals[None, :], axis=1)
        else:
            with np.errstate(divide="ignore"):
                tot = -np.log(np.exp(-(level + finals[None, :])).sum(axis=1))
        for k, w in zip(keys, tot):
            out[k] = float(w)
        if length == max_len or not labels:
            break
        nxt, nkeys = [], []
        for x in labels:
            nxt.append(_step(level, step_m[x], sr))
            nkeys.extend(k + (x,) for k in keys)
        level = np.concatenate(nxt, axis=0)
        keys = nkeys
    return out


def _strings(labels, max_len):
    keys = [()]
    out = [()]
    for _ in range(max_len):
        keys = [k + (x,) for x in labels for k in keys]
        out.extend(keys)
    return out


def equivalent_brute(a, b, max_len, tol=1e-6):
    if a.semiring != b.semiring:
        return False
    labels = sorted(set(labels_of(a)) | set(labels_of(b)))
    wa = string_weights(a, max_len, labels)
    wb = string_weights(b, max_len, labels)
    for k in wa:
        x, y = wa[k], wb[k]
        if np.isinf(x) or np.isinf(y):
            if not (np.isinf(x) and np.isinf(y)):
                return False
        elif abs(x - y) > tol:
            return False
    return True
