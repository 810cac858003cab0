"""Numerator supervision for chain training: construction, chunking, normalization."""
import logging
from dataclasses import dataclass, replace

from ..errors import EmptyAlignment
from ..fst.algorithms import compose, rm_epsilon
from ..fst.core import LOG, ONE, TROPICAL, Fst
from ..gmm.align import phone_contexts, subsample_alignment

__all__ = [
    "ChainSupervision",
    "make_numerator_fst",
    "state_times",
    "chunk_sizes",
    "split_supervision",
    "compose_with_normalization",
]

log = logging.getLogger(__name__)


@dataclass
class ChainSupervision:
    fst: Fst
    num_frames: int
    utt_id: str = ""
    index: int = 0
    start_frame: int = 0
    weight: float = 1.0


def _windows(starts, total, tol):
    k = len(starts)
    lo, hi = [], []
    for i, b in enumerate(starts):
        if i == 0:
            lo.append(0)
            hi.append(0)
        else:
            lo.append(max(i, b - tol))
            hi.append(min(total - (k - i), b + tol))
    return lo, hi


def make_numerator_fst(ali, gmm_tm, chain_tm, tol=2, factor=3):
    """Frame-synchronous acceptor over pdf+1 labels at the subsampled rate.

    Each phone boundary of the (subsampled) alignment may move by up to
    ``tol`` output frames; every phone keeps at least one frame. States are
    (frame, phone index, hmm state) and the arc into a state carries that
    state's pdf.
    """
    if len(ali) == 0:
        raise EmptyAlignment("empty alignment")
    sub = subsample_alignment(ali, gmm_tm, chain_tm, factor)
    segs = chain_tm.phone_segments(sub)
    total = len(sub)
    phones = [p for p, _, _ in segs]
    ctxs = phone_contexts(phones, chain_tm.ctx.width)
    pdfs = [
        [chain_tm.ctx.pdf(p, chain_tm.topo.states[j].pdf_class, l, r) for j in range(chain_tm.topo.num_states)]
        for p, (l, r) in zip(phones, ctxs)
    ]
    lo, hi = _windows([a for _, a, _ in segs], total, tol)
    k = len(segs)
    fst = Fst(TROPICAL)
    start = fst.add_state()
    fst.set_start(start)
    ids = {}

    def node(t, i, j):
        key = (t, i, j)
        if key not in ids:
            ids[key] = fst.add_state()
        return ids[key]

    def ok(t, i, j):
        if j == 0:
            return lo[i] <= t <= hi[i]
        nxt_hi = hi[i + 1] if i + 1 < k else total
        return lo[i] < t < nxt_hi

    fst.add_arc(start, pdfs[0][0] + 1, 0, ONE, node(0, 0, 0))
    frontier = [(0, 0, 0)]
    for t in range(total - 1):
        nxt = []
        for (_, i, j) in frontier:
            src = ids[(t, i, j)]
            for i2, j2 in ((i, 1), (i + 1, 0)):
                if i2 < k and ok(t + 1, i2, j2):
                    new = (t + 1, i2, j2) not in ids
                    fst.add_arc(src, pdfs[i2][j2] + 1, 0, ONE, node(t + 1, i2, j2))
                    if new:
                        nxt.append((t + 1, i2, j2))
        frontier = nxt
    for (t, i, j), s in ids.items():
        if t == total - 1 and i == k - 1:
            fst.set_final(s)
    for s in range(fst.num_states):
        fst.arcs[s] = [a._replace(olabel=a.ilabel) for a in fst.arcs[s]]
    return fst.connect().sort_arcs()


def state_times(fst):
    """Frame index of every state of a frame-synchronous acceptor (-1 if unreachable)."""
    times = [-1] * fst.num_states
    if fst.start < 0:
        return times
    times[fst.start] = 0
    order = [fst.start]
    for s in order:
        for a in fst.arcs[s]:
            t = times[s] + (1 if a.ilabel else 0)
            if times[a.nextstate] == -1:
                times[a.nextstate] = t
                order.append(a.nextstate)
    return times


def chunk_sizes(num_frames, primary=50, alternates=(40, 60), max_alternates=2):
    """Chunk lengths covering as much of ``num_frames`` as possible.

    At most ``max_alternates`` chunks may use a non-primary size. Ties on
    waste prefer fewer alternate chunks. Returns [] when even the smallest
    size does not fit.
    """
    sizes = sorted(set(alternates) - {primary})
    best = None
    combos = [()]
    for _ in range(max_alternates):
        combos += [c + (s,) for c in combos for s in sizes if not c or s >= c[-1]]
    for alts in sorted(set(combos)):
        used = sum(alts)
        if used > num_frames:
            continue
        n_primary = (num_frames - used) // primary
        waste = num_frames - used - n_primary * primary
        if n_primary == 0 and not alts:
            continue
        key = (waste, len(alts), alts)
        if best is None or key < best[0]:
            best = (key, [primary] * n_primary + list(alts))
    return best[1] if best else []


def split_supervision(sup, primary=50, alternates=(40, 60)):
    """Cut a frame-synchronous supervision into chunks at frame boundaries.

    Leftover frames are split evenly between the two ends. No weight is
    moved at the cut points: a chunk's start fans out to every state at its
    first frame and every state at its last frame is final.
    """
    sizes = chunk_sizes(sup.num_frames, primary, alternates)
    if not sizes:
        log.info("skipping %s: %d frames shorter than any chunk size", sup.utt_id, sup.num_frames)
        return []
    times = state_times(sup.fst)
    waste = sup.num_frames - sum(sizes)
    out = []
    a = waste // 2
    for idx, n in enumerate(sizes):
        b = a + n
        fst = Fst(sup.fst.semiring)
        fst.add_states(sup.fst.num_states + 1)
        s0 = sup.fst.num_states
        fst.set_start(s0)
        seen = set()
        for s, arcs in enumerate(sup.fst.arcs):
            t = times[s]
            if t < a or t >= b:
                continue
            for arc in arcs:
                src = s0 if t == a else s
                if t == a:
                    key = (arc.ilabel, arc.nextstate)
                    if key in seen:
                        continue
                    seen.add(key)
                fst.add_arc(src, arc.ilabel, arc.olabel, ONE, arc.nextstate)
        for s, t in enumerate(times):
            if t == b:
                fst.set_final(s)
        out.append(ChainSupervision(fst.connect().sort_arcs(), n, sup.utt_id, idx, sup.start_frame + a, sup.weight))
        a = b
    return out


def compose_with_normalization(sup, norm):
    """Numerator composed with the normalization FST; None (logged) when nothing survives."""
    num = sup.fst.with_semiring(LOG) if sup.fst.semiring != LOG else sup.fst
    composed = compose(num, norm)
    if composed.num_states == 0 or composed.start < 0:
        log.info("discarding %s chunk %d: no path survives the normalization FST", sup.utt_id, sup.index)
        return None
    composed = rm_epsilon(composed).connect()
    if composed.num_states == 0:
        log.info("discarding %s chunk %d: no path survives the normalization FST", sup.utt_id, sup.index)
        return None
    return replace(sup, fst=composed.sort_arcs())
