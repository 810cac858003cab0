"""Phone language model and the chain denominator / normalization graphs."""
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import EmptyAlignments, ValidationError
from ..fst.algorithms import compose, minimize_cycle, project, rm_epsilon
from ..fst.core import LOG, ONE, ZERO, Fst
from ..ngram import count_ngrams, estimate_lm
from .hclg import CdLabels, make_context_fst, make_grammar_fst, make_h_fst

__all__ = [
    "train_phone_lm",
    "DenominatorGraph",
    "compile_denominator_graph",
    "make_normalization_fst",
    "INIT_STEPS",
]

INIT_STEPS = 100


def train_phone_lm(phone_seqs, order=4):
    """Unsmoothed phone n-gram from 1-best phone sequences.

    Lookup of a history never seen in training falls back to its longest
    seen suffix; a seen history assigns zero probability to unseen phones.
    """
    seqs = [list(s) for s in phone_seqs if len(s)]
    if not seqs:
        raise EmptyAlignments("no phone sequences to train the phone LM")
    return estimate_lm(count_ngrams(seqs, order), order, smoothing="none")


@dataclass
class DenominatorGraph:
    fst: Fst
    initial_probs: np.ndarray
    num_pdfs: int
    topology: str = "chain_two_state"
    context_width: int = 2

    def __post_init__(self):
        self.initial_probs = np.asarray(self.initial_probs, dtype=float)
        if self.fst.has_epsilons():
            raise ValidationError("denominator graph must be epsilon-free")
        src, dst, pdf, prob = [], [], [], []
        for s, arcs in enumerate(self.fst.arcs):
            for a in arcs:
                if not 1 <= a.ilabel <= self.num_pdfs:
                    raise ValidationError(f"label {a.ilabel} outside [1, {self.num_pdfs}]")
                src.append(s)
                dst.append(a.nextstate)
                pdf.append(a.ilabel - 1)
                prob.append(math.exp(-a.weight))
        self.arc_src = np.asarray(src, dtype=np.int64)
        self.arc_dst = np.asarray(dst, dtype=np.int64)
        self.arc_pdf = np.asarray(pdf, dtype=np.int64)
        self.arc_prob = np.asarray(prob, dtype=float)

    @property
    def num_states(self):
        return self.fst.num_states

    def write(self, path):
        path = Path(path)
        self.fst.write(path)
        sidecar = {
            "num_pdfs": int(self.num_pdfs),
            "topology": self.topology,
            "context_width": int(self.context_width),
            "initial_probs": [float(x) for x in self.initial_probs],
        }
        Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path):
        fst = Fst.read(path)
        meta = json.loads(Path(str(path) + ".json").read_text())
        return cls(fst, np.array(meta["initial_probs"]), meta["num_pdfs"], meta["topology"], meta["context_width"])


def _initial_probs(fst, steps=INIT_STEPS):
    """Average of the first ``steps`` state distributions of the graph's Markov chain, starting at its start state."""
    n = fst.num_states
    rows, cols, vals = [], [], []
    for s, arcs in enumerate(fst.arcs):
        for a in arcs:
            rows.append(s)
            cols.append(a.nextstate)
            vals.append(math.exp(-a.weight))
    rows, cols, vals = np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64), np.array(vals)
    v = np.zeros(n)
    v[fst.start] = 1.0
    acc = np.zeros(n)
    for _ in range(steps):
        acc += v
        nxt = np.bincount(cols, weights=v[rows] * vals, minlength=n)
        total = nxt.sum()
        if total <= 0:
            break
        v = nxt / total
    total = acc.sum()
    if total <= 0:
        acc = np.full(n, 1.0 / n)
        total = 1.0
    return acc / total


def compile_denominator_graph(phone_lm, tm, phone_table):
    """Phone LM -> context expansion -> HMM expansion over pdf+1 labels -> shrink.

    ``tm`` must use the chain topology; its tree's context width (1 or 2)
    decides the context expansion.
    """
    if tm.topo.kind != "chain_two_state":
        raise ValidationError("denominator graph needs the chain topology")
    width = tm.ctx.width
    if width == 3:
        raise ValidationError("denominator graph supports context width 1 or 2")
    p = make_grammar_fst(phone_lm, phone_table)
    cd = CdLabels(width, len(phone_table))
    phone_ids = sorted(tm.phones)
    cp = p if width == 1 else compose(make_context_fst(phone_ids, width, cd), p)
    labels = {a.ilabel for arcs in cp.arcs for a in arcs} - {0}
    h = make_h_fst(tm, cd, labels, use_pdf_labels=True)
    hcp = compose(h, cp)
    g = rm_epsilon(project(hcp, "input").with_semiring(LOG)).connect()
    g = minimize_cycle(g, repetitions=3)
    for s in range(g.num_states):
        g.finals[s] = ONE
    init = _initial_probs(g)
    return DenominatorGraph(g.sort_arcs(), init, tm.num_pdfs, tm.topo.kind, width)


def make_normalization_fst(den):
    """Denominator FST plus a super-initial state with epsilon arcs carrying -log initial_probs."""
    fst = den.fst.copy()
    s0 = fst.add_state()
    for s, p in enumerate(den.initial_probs):
        if p > 0:
            fst.add_arc(s0, 0, 0, -math.log(p), s)
    fst.set_start(s0)
    for s in range(den.fst.num_states):
        fst.finals[s] = ONE
    fst.finals[s0] = ZERO
    return fst
