"""Weighted FST container and semiring arithmetic.

Weights are stored as negated log values (costs) in both supported
semirings; ``inf`` is semiring zero and ``0.0`` is semiring one.
"""
import math
import struct
from collections import namedtuple
from pathlib import Path

import numpy as np

from ..errors import FstError

__all__ = ["Arc", "Fst", "TROPICAL", "LOG", "plus", "times", "ZERO", "ONE", "linear_fst"]

TROPICAL = "tropical"
LOG = "log"
SEMIRINGS = {TROPICAL: 0, LOG: 1}
ZERO = math.inf
ONE = 0.0

Arc = namedtuple("Arc", "ilabel olabel weight nextstate")


def log_plus(a, b):
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    if a > b:
        a, b = b, a
    return a - math.log1p(math.exp(a - b))


def plus(semiring, a, b):
    if semiring == TROPICAL:
        return a if a <= b else b
    return log_plus(a, b)


def times(a, b):
    return a + b


def plus_all(semiring, weights):
    out = ZERO
    if semiring == TROPICAL:
        for w in weights:
            if w < out:
                out = w
        return out
    for w in weights:
        out = log_plus(out, w)
    return out


class Fst:
    """Mutable builder; algorithms treat inputs as read-only and return new graphs."""

    def __init__(self, semiring=TROPICAL, isyms=None, osyms=None):
        if semiring not in SEMIRINGS:
            raise FstError(f"unknown semiring {semiring!r}")
        self.semiring = semiring
        self.start = -1
        self.arcs = []
        self.finals = []
        self.isyms = isyms
        self.osyms = osyms

    # construction
    def add_state(self):
        self.arcs.append([])
        self.finals.append(ZERO)
        return len(self.arcs) - 1

    def add_states(self, n):
        for _ in range(n):
            self.add_state()
        return len(self.arcs)

    def set_start(self, s):
        self.start = s

    def set_final(self, s, w=ONE):
        self.finals[s] = w

    def add_arc(self, s, ilabel, olabel, weight, nextstate):
        if weight == ZERO:
            return
        self.arcs[s].append(Arc(ilabel, olabel, float(weight), nextstate))

    # inspection
    @property
    def num_states(self):
        return len(self.arcs)

    @property
    def num_arcs(self):
        return sum(len(a) for a in self.arcs)

    def is_final(self, s):
        return self.finals[s] != ZERO

    def final_states(self):
        return [s for s, w in enumerate(self.finals) if w != ZERO]

    def is_acceptor(self):
        return all(a.ilabel == a.olabel for arcs in self.arcs for a in arcs)

    def has_epsilons(self):
        return any(a.ilabel == 0 and a.olabel == 0 for arcs in self.arcs for a in arcs)

    def is_deterministic(self):
        """True for an epsilon-free acceptor with unique labels leaving each state."""
        for arcs in self.arcs:
            labels = [a.ilabel for a in arcs]
            if 0 in labels or len(set(labels)) != len(labels):
                return False
        return self.is_acceptor()

    def copy(self):
        out = Fst(self.semiring, self.isyms, self.osyms)
        out.start = self.start
        out.arcs = [list(a) for a in self.arcs]
        out.finals = list(self.finals)
        return out

    def with_semiring(self, semiring):
        out = self.copy()
        out.semiring = semiring
        return out

    def sort_arcs(self):
        for arcs in self.arcs:
            arcs.sort(key=lambda a: (a.ilabel, a.olabel, a.nextstate))
        return self

    def connect(self):
        """Drop states not on a start-to-final path and renumber densely (in place)."""
        n = self.num_states
        if n == 0 or self.start < 0:
            self.arcs, self.finals, self.start = [], [], -1
            return self
        fwd = [False] * n
        fwd[self.start] = True
        stack = [self.start]
        while stack:
            s = stack.pop()
            for a in self.arcs[s]:
                if not fwd[a.nextstate]:
                    fwd[a.nextstate] = True
                    stack.append(a.nextstate)
        preds = [[] for _ in range(n)]
        for s, arcs in enumerate(self.arcs):
            for a in arcs:
                preds[a.nextstate].append(s)
        bwd = [w != ZERO for w in self.finals]
        stack = [s for s in range(n) if bwd[s]]
        while stack:
            s = stack.pop()
            for p in preds[s]:
                if not bwd[p]:
                    bwd[p] = True
                    stack.append(p)
        keep = [s for s in range(n) if fwd[s] and bwd[s]]
        if not keep or not (fwd[self.start] and bwd[self.start]):
            self.arcs, self.finals, self.start = [], [], -1
            return self
        # keep the start state first so renumbering is canonical
        keep.remove(self.start)
        keep.insert(0, self.start)
        new_id = {s: i for i, s in enumerate(keep)}
        self.arcs = [
            [Arc(a.ilabel, a.olabel, a.weight, new_id[a.nextstate]) for a in self.arcs[s] if a.nextstate in new_id]
            for s in keep
        ]
        self.finals = [self.finals[s] for s in keep]
        self.start = 0
        return self

    def __repr__(self):
        return f"Fst({self.semiring}, states={self.num_states}, arcs={self.num_arcs})"

    # serialization
    def to_text(self):
        lines = []
        order = [self.start] + [s for s in range(self.num_states) if s != self.start] if self.start >= 0 else []
        for s in order:
            for a in self.arcs[s]:
                lines.append(f"{s} {a.nextstate} {a.ilabel} {a.olabel} {a.weight!r}")
        for s in order:
            if self.finals[s] != ZERO:
                lines.append(f"{s} {self.finals[s]!r}")
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_text(cls, text, semiring=TROPICAL):
        fst = cls(semiring)
        rows = [ln.split() for ln in text.splitlines() if ln.strip()]

        def need(s):
            while fst.num_states <= s:
                fst.add_state()

        for row in rows:
            src = int(row[0])
            need(src)
            if fst.start < 0:
                fst.start = src
            if len(row) >= 4:
                dst = int(row[1])
                need(dst)
                w = float(row[4]) if len(row) > 4 else ONE
                fst.add_arc(src, int(row[2]), int(row[3]), w, dst)
            else:
                fst.set_final(src, float(row[1]) if len(row) > 1 else ONE)
        return fst

    def write(self, path):
        narcs = self.num_arcs
        with open(path, "wb") as f:
            f.write(b"WFST" + struct.pack("<BIQi", SEMIRINGS[self.semiring], self.num_states, narcs, self.start))
            f.write(np.asarray(self.finals, dtype="<f8").tobytes())
            rec = np.zeros(narcs, dtype=[("src", "<u4"), ("il", "<i4"), ("ol", "<i4"), ("w", "<f8"), ("dst", "<u4")])
            i = 0
            for s, arcs in enumerate(self.arcs):
                for a in arcs:
                    rec[i] = (s, a.ilabel, a.olabel, a.weight, a.nextstate)
                    i += 1
            f.write(rec.tobytes())

    @classmethod
    def read(cls, path):
        data = Path(path).read_bytes()
        if data[:4] != b"WFST":
            raise FstError(f"{path}: not a binary FST")
        sr, n, narcs, start = struct.unpack_from("<BIQi", data, 4)
        pos = 4 + struct.calcsize("<BIQi")
        semiring = {v: k for k, v in SEMIRINGS.items()}[sr]
        fst = cls(semiring)
        fst.add_states(n)
        fst.start = start
        fst.finals = np.frombuffer(data, "<f8", n, pos).tolist()
        pos += 8 * n
        rec = np.frombuffer(data, [("src", "<u4"), ("il", "<i4"), ("ol", "<i4"), ("w", "<f8"), ("dst", "<u4")], narcs, pos)
        for src, il, ol, w, dst in rec.tolist():
            fst.arcs[src].append(Arc(il, ol, w, dst))
        return fst


def linear_fst(ilabels, olabels=None, weights=None, semiring=TROPICAL):
    """A single-path FST (an acceptor when ``olabels`` is omitted)."""
    olabels = ilabels if olabels is None else olabels
    weights = [ONE] * len(ilabels) if weights is None else weights
    fst = Fst(semiring)
    fst.add_states(len(ilabels) + 1)
    fst.set_start(0)
    for i, (il, ol, w) in enumerate(zip(ilabels, olabels, weights)):
        fst.add_arc(i, il, ol, w, i + 1)
    fst.set_final(len(ilabels))
    return fst
