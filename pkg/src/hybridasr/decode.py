"""Beam-pruned Viterbi decoding and forced alignment over compiled graphs."""
from dataclasses import dataclass, field

import numpy as np

from ._kernels import viterbi_search
from .errors import DimensionMismatch, NoPathSurvived

__all__ = [
    "DecodeOptions",
    "DecodeResult",
    "GraphArrays",
    "decode_utterance",
    "gmm_scorer",
    "chain_scorer",
    "write_hypotheses",
]


@dataclass
class DecodeOptions:
    beam: float = 16.0
    max_active: int = 7000
    acoustic_scale: float = 0.1

    def __post_init__(self):
        if not self.beam > 0:
            raise ValueError("beam must be positive")
        if self.max_active < 1:
            raise ValueError("max_active must be >= 1")


@dataclass
class DecodeResult:
    words: list
    total_cost: float
    acoustic_cost: float
    graph_cost: float
    alignment: list = field(default_factory=list)
    active_counts: np.ndarray = None


class GraphArrays:
    """CSR view of an :class:`~hybridasr.fst.core.Fst` for the search kernel."""

    def __init__(self, fst):
        n = fst.num_states
        counts = np.array([len(a) for a in fst.arcs], dtype=np.int64)
        self.arc_start = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=self.arc_start[1:])
        m = int(self.arc_start[-1])
        self.ilabels = np.empty(m, np.int64)
        self.olabels = np.empty(m, np.int64)
        self.weights = np.empty(m)
        self.nexts = np.empty(m, np.int64)
        k = 0
        for arcs in fst.arcs:
            for a in arcs:
                self.ilabels[k] = a.ilabel
                self.olabels[k] = a.olabel
                self.weights[k] = a.weight
                self.nexts[k] = a.nextstate
                k += 1
        self.finals = np.asarray(fst.finals, dtype=float) if n else np.zeros(0)
        self.start = fst.start
        self.num_states = n


def decode_utterance(graph, loglikes, label2pdf, opts=None):
    """Best path of ``graph`` against a ``(T, num_pdfs)`` log-likelihood matrix.

    ``label2pdf`` maps graph input labels to score columns. Raises
    :class:`NoPathSurvived` when no token reaches a final state.
    """
    opts = opts or DecodeOptions()
    g = graph if isinstance(graph, GraphArrays) else GraphArrays(graph)
    loglikes = np.ascontiguousarray(loglikes, dtype=np.float64)
    if loglikes.ndim != 2 or loglikes.shape[0] < 1:
        raise NoPathSurvived("no frames to decode")
    if g.num_states == 0:
        raise NoPathSurvived("empty graph")
    l2p = np.asarray(label2pdf, dtype=np.int64)
    if l2p[g.ilabels].max(initial=0) >= loglikes.shape[1]:
        raise DimensionMismatch(f"graph needs {l2p[g.ilabels].max() + 1} score columns, got {loglikes.shape[1]}")
    max_active = min(int(opts.max_active), 2**62)
    best, total, ac, gc, rprev, ril, rol, counts = viterbi_search(
        g.arc_start, g.ilabels, g.olabels, g.weights, g.nexts, g.finals, g.start,
        l2p, loglikes, float(opts.acoustic_scale), float(opts.beam), max_active,
    )
    if best == -1:
        raise NoPathSurvived(f"no final state reached after {loglikes.shape[0]} frames (beam {opts.beam})")
    words, ali = [], []
    r = best
    while r >= 0:
        if ril[r]:
            ali.append(int(ril[r]))
        if rol[r]:
            words.append(int(rol[r]))
        r = rprev[r]
    words.reverse()
    ali.reverse()
    return DecodeResult(words, float(total), float(ac), float(gc), ali, counts)


def gmm_scorer(am):
    """Scores are per-pdf GMM log-likelihoods; graph labels map through tid2pdf."""

    def score(frames):
        if frames.shape[1] != am.dim:
            raise DimensionMismatch(f"model dim {am.dim} vs features {frames.shape[1]}")
        return am.loglikes(frames)

    return score


def chain_scorer(net, log_priors=None):
    """Raw network outputs at the subsampled rate (no softmax, no prior)."""

    def score(frames):
        if frames.shape[1] != net.input_dim:
            raise DimensionMismatch(f"net input dim {net.input_dim} vs features {frames.shape[1]}")
        out = net.infer(frames)
        if log_priors is not None:
            out = out - log_priors
        return out

    return score


def write_hypotheses(hyps, table, path):
    with open(path, "w") as f:
        for utt in sorted(hyps):
            f.write(" ".join([utt] + [table.symbol(w) for w in hyps[utt]]) + "\n")
