"""Phonetic decision-tree state tying with data-driven phone questions."""
import heapq
import math
from dataclasses import dataclass

import numpy as np

from ..errors import InsufficientData
from ..graph.topology import BOUNDARY, ContextDependency, TreeNode
from .align import phone_contexts

__all__ = ["GaussStats", "accumulate_tree_stats", "cluster_phone_questions", "build_tree"]

LOG_2PI = math.log(2.0 * math.pi)
VAR_FLOOR = 1e-3


@dataclass
class GaussStats:
    count: float
    sum: np.ndarray
    sumsq: np.ndarray

    def __add__(self, other):
        return GaussStats(self.count + other.count, self.sum + other.sum, self.sumsq + other.sumsq)

    def loglike(self):
        """Data log-likelihood under its own ML diagonal Gaussian."""
        if self.count <= 0:
            return 0.0
        mean = self.sum / self.count
        var = np.maximum(self.sumsq / self.count - mean * mean, VAR_FLOOR)
        return -0.5 * self.count * (len(mean) * (LOG_2PI + 1.0) + float(np.log(var).sum()))


def _sum_stats(items):
    it = iter(items)
    total = next(it)
    for s in it:
        total = total + s
    return total


def accumulate_tree_stats(alignments, feats, tm, width):
    """Single-Gaussian stats keyed by (phone, pdf_class, left, right)."""
    stats = {}
    for utt, ali in alignments.items():
        x = feats[utt]
        x = x.frames if hasattr(x, "frames") else x
        segs = tm.phone_segments(ali)
        ctxs = phone_contexts([p for p, _, _ in segs], width)
        for (p, a, b), (l, r) in zip(segs, ctxs):
            states = tm.tid2state[ali[a:b]]
            for j in np.unique(states):
                sel = x[a:b][states == j]
                key = (p, tm.topo.states[int(j)].pdf_class, l, r)
                s = GaussStats(float(len(sel)), sel.sum(0), (sel * sel).sum(0))
                stats[key] = stats[key] + s if key in stats else s
    return stats


def cluster_phone_questions(stats, phones):
    """Bottom-up clustering of per-phone pooled stats; every cluster formed is a question.

    Returns a sorted list of frozensets, including singletons and a
    boundary-only question.
    """
    pooled = {}
    for (p, _, _, _), s in stats.items():
        pooled[p] = pooled[p] + s if p in pooled else s
    clusters = {frozenset([p]): pooled[p] for p in sorted(phones) if p in pooled}
    questions = set(clusters)
    while len(clusters) > 1:
        best = None
        keys = sorted(clusters, key=lambda c: sorted(c))
        for i in range(len(keys)):
            for j in range(i + 1, len(keys)):
                a, b = keys[i], keys[j]
                loss = clusters[a].loglike() + clusters[b].loglike() - (clusters[a] + clusters[b]).loglike()
                if best is None or loss < best[0] - 1e-9:
                    best = (loss, a, b)
        _, a, b = best
        clusters[a | b] = clusters.pop(a) + clusters.pop(b)
        questions.add(a | b)
    questions.add(frozenset([BOUNDARY]))
    return sorted(questions, key=lambda q: (len(q), sorted(q)))


def _best_split(items, questions, positions, min_count):
    """items: list of ((left, right), GaussStats). Returns (gain, position, qset) or None."""
    total = _sum_stats(s for _, s in items)
    base = total.loglike()
    best = None
    for pos in positions:
        idx = 0 if pos < 0 else 1
        for q in questions:
            yes = [s for c, s in items if c[idx] in q]
            if not yes or len(yes) == len(items):
                continue
            ys = _sum_stats(yes)
            ns = GaussStats(total.count - ys.count, total.sum - ys.sum, total.sumsq - ys.sumsq)
            if ys.count < min_count or ns.count < min_count:
                continue
            gain = ys.loglike() + ns.loglike() - base
            if best is None or gain > best[0] + 1e-9:
                best = (gain, pos, q)
    return best


def build_tree(stats, phones, topo, width, max_leaves, min_gain=150.0, min_count=20.0, questions=None):
    """Greedy likelihood-gain splitting of per-(phone, pdf_class) roots.

    Raises :class:`InsufficientData` when there are no statistics at all.
    """
    if not stats:
        raise InsufficientData("no statistics for tree building")
    if questions is None:
        questions = cluster_phone_questions(stats, phones)
    pdf_classes = sorted({s.pdf_class for s in topo.states})
    if max_leaves < len(phones) * len(pdf_classes):
        raise ValueError(f"max_leaves {max_leaves} below the {len(phones) * len(pdf_classes)} roots")
    positions = [p for p, ok in ((-1, width >= 2), (1, width == 3)) if ok]
    roots = {}
    groups = {}
    for (p, c, l, r), s in sorted(stats.items(), key=lambda kv: kv[0]):
        groups.setdefault((p, c), []).append(((l, r), s))
    heap = []
    counter = 0
    num_leaves = 0

    def push(node, items):
        nonlocal counter
        if len(items) > 1:
            cand = _best_split(items, questions, positions, min_count)
            if cand is not None and cand[0] >= min_gain:
                heapq.heappush(heap, (-cand[0], counter, node, items, cand))
                counter += 1

    for p in sorted(phones):
        for c in pdf_classes:
            node = TreeNode()
            roots[(p, c)] = node
            num_leaves += 1
            push(node, groups.get((p, c), []))
    while heap and num_leaves < max_leaves:
        _, _, node, items, (gain, pos, q) = heapq.heappop(heap)
        idx = 0 if pos < 0 else 1
        node.position = pos
        node.phones = frozenset(q)
        node.yes, node.no = TreeNode(), TreeNode()
        num_leaves += 1
        push(node.yes, [it for it in items if it[0][idx] in q])
        push(node.no, [it for it in items if it[0][idx] not in q])
    n = 0

    def number(node):
        nonlocal n
        if node.is_leaf:
            node.pdf = n
            n += 1
        else:
            number(node.yes)
            number(node.no)

    for key in sorted(roots):
        number(roots[key])
    return ContextDependency(width, roots, n)
