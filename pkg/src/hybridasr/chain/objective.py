"""LF-MMI objective: denominator and numerator forward-backward."""
import logging
from dataclasses import dataclass

import numpy as np

from .._kernels import den_forward_backward
from ..errors import DimensionMismatch, DiscardChunk, NumericalFailure
from ..fst.core import ZERO
from .supervision import state_times

__all__ = [
    "denominator_forward_backward",
    "numerator_forward_backward",
    "ObjfResult",
    "chain_objective_and_grad",
    "CLAMP",
]

log = logging.getLogger(__name__)

CLAMP = (-30.0, 30.0)


def denominator_forward_backward(den, logits, leaky=1e-5):
    """Total log-probability of ``logits`` under the denominator graph and per-frame pdf occupancies."""
    logits = np.ascontiguousarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] < 1:
        raise DimensionMismatch("logits must be a nonempty (frames, pdfs) matrix")
    if logits.shape[1] != den.num_pdfs:
        raise DimensionMismatch(f"logits have {logits.shape[1]} columns, graph has {den.num_pdfs} pdfs")
    if not np.all(np.isfinite(logits)):
        raise NumericalFailure("non-finite logits")
    lp, post, ok = den_forward_backward(
        den.arc_src, den.arc_dst, den.arc_pdf, den.arc_prob, den.initial_probs, logits, float(leaky)
    )
    if not ok:
        raise NumericalFailure("denominator alpha sum underflowed")
    return float(lp), post


def _fst_arrays(fst):
    times = state_times(fst)
    src, dst, pdf, w, t = [], [], [], [], []
    for s, arcs in enumerate(fst.arcs):
        if times[s] < 0:
            continue
        for a in arcs:
            if a.ilabel == 0:
                raise DiscardChunk("numerator still has epsilon arcs")
            src.append(s)
            dst.append(a.nextstate)
            pdf.append(a.ilabel - 1)
            w.append(a.weight)
            t.append(times[s])
    return (np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64), np.array(pdf, dtype=np.int64),
            np.array(w, dtype=float), np.array(t, dtype=np.int64), np.array(times, dtype=np.int64))


def numerator_forward_backward(fst, logits):
    """Log-domain forward-backward over an acyclic frame-synchronous acceptor.

    Arc weights are -log probabilities; final weights count at the last frame.
    """
    T, P = logits.shape
    if fst.num_states == 0 or fst.start < 0:
        raise DiscardChunk("empty numerator")
    src, dst, pdf, w, t_arc, times = _fst_arrays(fst)
    if len(pdf) and pdf.max() >= P:
        raise DimensionMismatch(f"numerator label {pdf.max() + 1} exceeds {P} pdfs")
    n = fst.num_states
    alpha = np.full(n, -np.inf)
    alpha[fst.start] = 0.0
    score = logits[t_arc, pdf] - w if len(pdf) else np.zeros(0)
    order = np.argsort(t_arc, kind="stable")
    bounds = np.searchsorted(t_arc[order], np.arange(T + 1))
    for t in range(T):
        sel = order[bounds[t]:bounds[t + 1]]
        np.logaddexp.at(alpha, dst[sel], alpha[src[sel]] + score[sel])
    finals = np.array(fst.finals, dtype=float)
    end = (times == T) & (finals != ZERO)
    if not end.any():
        raise DiscardChunk("numerator has no complete path of the chunk length")
    logz = float(np.logaddexp.reduce(alpha[end] - finals[end]))
    if not np.isfinite(logz):
        raise DiscardChunk("numerator has zero total weight")
    beta = np.full(n, -np.inf)
    beta[end] = -finals[end]
    post = np.zeros((T, P))
    for t in range(T - 1, -1, -1):
        sel = order[bounds[t]:bounds[t + 1]]
        arc_lp = alpha[src[sel]] + score[sel] + beta[dst[sel]] - logz
        np.add.at(post[t], pdf[sel], np.exp(arc_lp))
        np.logaddexp.at(beta, src[sel], score[sel] + beta[dst[sel]])
    return logz, post


@dataclass
class ObjfResult:
    objf: float  # per frame, after clamping
    grad: np.ndarray  # d(num_logprob - den_logprob)/d logits, zero when clamped
    xent_targets: np.ndarray
    num_logprob: float
    den_logprob: float
    clamped: bool


def chain_objective_and_grad(sup, den, logits, leaky=1e-5, clamp=CLAMP):
    """Per-frame LF-MMI objective, its logit gradient and cross-entropy targets.

    The denominator pass runs first. The returned gradient is that of the
    chunk's total objective ``num_logprob - den_logprob`` (``num_frames``
    times the per-frame value); it is zeroed when the per-frame value falls
    outside ``clamp``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[0] != sup.num_frames:
        raise DimensionMismatch(f"logits have {logits.shape[0]} frames, supervision has {sup.num_frames}")
    den_lp, den_post = denominator_forward_backward(den, logits, leaky)
    num_lp, num_post = numerator_forward_backward(sup.fst, logits)
    objf = (num_lp - den_lp) / sup.num_frames
    clamped = not (clamp[0] <= objf <= clamp[1])
    if clamped:
        log.warning("objective %.3f for %s chunk %d clamped to [%g, %g]", objf, sup.utt_id, sup.index, *clamp)
        objf = float(np.clip(objf, *clamp))
        grad = np.zeros_like(logits)
    else:
        grad = sup.weight * (num_post - den_post)
    return ObjfResult(float(objf), grad, num_post, num_lp, den_lp, clamped)
