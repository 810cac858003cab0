"""Forced alignment and alignment conversion between transition models."""
import math

import numpy as np

from ..decode import DecodeOptions, GraphArrays, decode_utterance
from ..errors import AlignmentFailed, NoPathSurvived, ValidationError
from ..graph.topology import BOUNDARY

__all__ = [
    "align_utterance",
    "segment_tids",
    "equal_alignment",
    "phone_contexts",
    "convert_alignment",
    "subsample_alignment",
    "write_alignments",
    "read_alignments",
]


def align_utterance(am, graph, feats, tm, beam=10.0, acoustic_scale=0.1, retry_factor=4.0):
    """Viterbi path of ``graph`` under the GMM scores; one retry with a wider beam."""
    frames = feats.frames if hasattr(feats, "frames") else np.asarray(feats)
    if frames.shape[0] < 1:
        raise AlignmentFailed("empty feature matrix")
    g = graph if isinstance(graph, GraphArrays) else GraphArrays(graph)
    loglikes = am.loglikes(frames)
    for b in (beam, beam * retry_factor):
        try:
            res = decode_utterance(g, loglikes, tm.tid2pdf, DecodeOptions(beam=b, max_active=2**40, acoustic_scale=acoustic_scale))
        except NoPathSurvived:
            continue
        if len(res.alignment) == frames.shape[0]:
            return np.asarray(res.alignment, dtype=np.int64)
    raise AlignmentFailed(f"no alignment survived at beam {beam * retry_factor}")


def segment_tids(tm, phone, left, right, lengths):
    """Transition ids for one phone occupying ``lengths[j]`` frames in HMM state j.

    States with length 0 are skipped; the topology must permit the implied jumps.
    """
    topo = tm.topo
    n = topo.num_states
    visited = [j for j, L in enumerate(lengths) if L > 0]
    out = []
    for idx, j in enumerate(visited):
        nxt = visited[idx + 1] if idx + 1 < len(visited) else n
        st = topo.states[j]
        pdf = tm.ctx.pdf(phone, st.pdf_class, left, right)
        first = tm.tid(phone, j, pdf, 0)
        dests = [d for d, _ in st.transitions]
        if j not in dests and lengths[j] > 1:
            raise ValidationError(f"state {j} has no self-loop")
        if nxt not in dests:
            raise ValidationError(f"topology has no transition {j} -> {nxt}")
        loop = first + dests.index(j) if j in dests else -1
        out.extend([loop] * (lengths[j] - 1))
        out.append(first + dests.index(nxt))
    return out


def _split_even(n, k):
    base, extra = divmod(n, k)
    return [base + (1 if i < extra else 0) for i in range(k)]


def phone_contexts(phones, width):
    """(left, right) context per position; the utterance edges give BOUNDARY."""
    out = []
    for i in range(len(phones)):
        left = phones[i - 1] if i > 0 and width >= 2 else BOUNDARY
        right = phones[i + 1] if i + 1 < len(phones) and width == 3 else BOUNDARY
        out.append((left, right))
    return out


def equal_alignment(tm, phones, num_frames):
    """Split frames evenly over phones and, within a phone, over its states."""
    n_states = tm.topo.num_states
    if num_frames < len(phones) * n_states or not phones:
        raise AlignmentFailed(f"{num_frames} frames too few for {len(phones)} phones")
    ctxs = phone_contexts(phones, tm.ctx.width)
    out = []
    for p, (l, r), L in zip(phones, ctxs, _split_even(num_frames, len(phones))):
        out.extend(segment_tids(tm, p, l, r, _split_even(L, n_states)))
    return np.asarray(out, dtype=np.int64)


def _state_lengths(tm, tids):
    lengths = [0] * tm.topo.num_states
    for t in tids:
        lengths[int(tm.tid2state[t])] += 1
    return lengths


def convert_alignment(ali, old_tm, new_tm):
    """Re-express an alignment under another tree with the same topology."""
    segs = old_tm.phone_segments(ali)
    phones = [p for p, _, _ in segs]
    ctxs = phone_contexts(phones, new_tm.ctx.width)
    out = []
    for (p, a, b), (l, r) in zip(segs, ctxs):
        out.extend(segment_tids(new_tm, p, l, r, _state_lengths(old_tm, ali[a:b])))
    return np.asarray(out, dtype=np.int64)


def subsample_alignment(ali, old_tm, new_tm, factor=3):
    """Map a full-rate alignment onto ``new_tm`` (chain topology) at 1/``factor`` rate.

    Phone boundaries are divided by ``factor`` and rounded, then forced
    monotone so every phone keeps at least one output frame. The output has
    ``ceil(T / factor)`` frames.
    """
    segs = old_tm.phone_segments(ali)
    phones = [p for p, _, _ in segs]
    total = math.ceil(len(ali) / factor)
    k = len(segs)
    if k > total:
        raise AlignmentFailed(f"{k} phones do not fit in {total} subsampled frames")
    starts = [int(round(a / factor)) for _, a, _ in segs]
    starts[0] = 0
    for i in range(1, k):
        starts[i] = max(starts[i], starts[i - 1] + 1)
    for i in range(k - 1, 0, -1):
        starts[i] = min(starts[i], total - (k - i), starts[i + 1] - 1 if i + 1 < k else total - 1)
    bounds = starts + [total]
    ctxs = phone_contexts(phones, new_tm.ctx.width)
    out = []
    for i, (p, (l, r)) in enumerate(zip(phones, ctxs)):
        n = bounds[i + 1] - bounds[i]
        out.extend(segment_tids(new_tm, p, l, r, [1, n - 1]))
    return np.asarray(out, dtype=np.int64)


def write_alignments(alis, path):
    with open(path, "w") as f:
        for utt in sorted(alis):
            f.write(" ".join([utt] + [str(int(t)) for t in alis[utt]]) + "\n")


def read_alignments(path):
    out = {}
    with open(path) as f:
        for line in f:
            parts = line.split()
            if parts:
                out[parts[0]] = np.asarray([int(x) for x in parts[1:]], dtype=np.int64)
    return out
