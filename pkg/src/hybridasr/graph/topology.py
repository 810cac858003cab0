"""HMM topologies, phonetic context trees and the transition model.

A transition id names one outgoing transition of one (phone, hmm state,
pdf) tuple. Taking a transition consumes one frame, scored by the pdf of the
state it leaves; a transition whose destination equals the number of states
leaves the phone.
"""
import math
from dataclasses import dataclass

import numpy as np

from ..errors import BadContextWidth, ValidationError
from ..serialize import read_arrays, write_arrays

__all__ = ["HmmState", "HmmTopology", "TreeNode", "ContextDependency", "TransitionModel", "BOUNDARY"]

BOUNDARY = 0  # context phone index used for utterance edges


@dataclass(frozen=True)
class HmmState:
    pdf_class: int
    transitions: tuple  # ((dest, prob), ...); dest == num_states exits the phone


@dataclass(frozen=True)
class HmmTopology:
    kind: str
    states: tuple

    def __post_init__(self):
        for i, st in enumerate(self.states):
            total = sum(p for _, p in st.transitions)
            if abs(total - 1.0) > 1e-9:
                raise ValidationError(f"state {i} transition probabilities sum to {total}")

    @property
    def num_states(self):
        return len(self.states)

    @property
    def num_pdf_classes(self):
        return len({s.pdf_class for s in self.states})

    @classmethod
    def three_state(cls, self_loop=0.5):
        fwd = 1.0 - self_loop
        return cls("three_state", tuple(HmmState(j, ((j, self_loop), (j + 1, fwd))) for j in range(3)))

    @classmethod
    def chain_two_state(cls):
        # the first state is visited once; the second may repeat zero or more times
        return cls("chain_two_state", (HmmState(0, ((1, 0.5), (2, 0.5))), HmmState(1, ((1, 0.5), (2, 0.5)))))

    @classmethod
    def from_kind(cls, kind):
        if kind == "three_state":
            return cls.three_state()
        if kind == "chain_two_state":
            return cls.chain_two_state()
        raise ValidationError(f"unknown topology {kind!r}")

    def min_frames(self):
        """Fewest frames needed to traverse the phone."""
        n = self.num_states
        best = [math.inf] * (n + 1)
        best[0] = 0
        for j in range(n):
            for d, _ in self.states[j].transitions:
                if d > j:
                    best[d] = min(best[d], best[j] + 1)
        return best[n]


@dataclass
class TreeNode:
    pdf: int = -1
    position: int = 0  # -1 left context, +1 right context
    phones: frozenset = frozenset()
    yes: "TreeNode" = None
    no: "TreeNode" = None

    @property
    def is_leaf(self):
        return self.yes is None

    def leaves(self):
        if self.is_leaf:
            return [self.pdf]
        return self.yes.leaves() + self.no.leaves()


class ContextDependency:
    """Map (phone, pdf_class, left, right) to a pdf id.

    ``width`` is 1 (monophone), 2 (left biphone) or 3 (triphone). Roots are
    per (phone, pdf_class); phones are phone-table ids and ``BOUNDARY`` (0)
    marks a missing context at the utterance edge.
    """

    def __init__(self, width, roots, num_pdfs):
        if width not in (1, 2, 3):
            raise BadContextWidth(f"context width {width} not in (1, 2, 3)")
        self.width = width
        self.roots = roots
        self.num_pdfs = num_pdfs

    @classmethod
    def monophone(cls, phones, topo, width=1):
        roots = {}
        n = 0
        for p in phones:
            for c in sorted({s.pdf_class for s in topo.states}):
                roots[(p, c)] = TreeNode(pdf=n)
                n += 1
        return cls(width, roots, n)

    def pdf(self, phone, pdf_class, left=BOUNDARY, right=BOUNDARY):
        node = self.roots[(phone, pdf_class)]
        while not node.is_leaf:
            ctx = left if node.position < 0 else right
            node = node.yes if ctx in node.phones else node.no
        return node.pdf

    def leaves(self, phone, pdf_class):
        return sorted(set(self.roots[(phone, pdf_class)].leaves()))

    # preorder serialization: leaf -> [0, pdf]; question -> [1, pos, n, phones..., yes..., no...]
    def to_array(self):
        out = [self.width, self.num_pdfs, len(self.roots)]

        def emit(node):
            if node.is_leaf:
                out.extend([0, node.pdf])
            else:
                ph = sorted(node.phones)
                out.extend([1, node.position, len(ph)] + ph)
                emit(node.yes)
                emit(node.no)

        for (p, c) in sorted(self.roots):
            out.extend([p, c])
            emit(self.roots[(p, c)])
        return np.asarray(out, dtype=np.int32)

    @classmethod
    def from_array(cls, arr):
        arr = [int(x) for x in arr]
        width, num_pdfs, nroots = arr[:3]
        pos = 3

        def parse():
            nonlocal pos
            kind = arr[pos]
            if kind == 0:
                node = TreeNode(pdf=arr[pos + 1])
                pos += 2
                return node
            position, n = arr[pos + 1], arr[pos + 2]
            phones = frozenset(arr[pos + 3 : pos + 3 + n])
            pos += 3 + n
            yes = parse()
            no = parse()
            return TreeNode(position=position, phones=phones, yes=yes, no=no)

        roots = {}
        for _ in range(nroots):
            p, c = arr[pos], arr[pos + 1]
            pos += 2
            roots[(p, c)] = parse()
        return cls(width, roots, num_pdfs)


class TransitionModel:
    def __init__(self, topo, ctx, phones):
        self.topo = topo
        self.ctx = ctx
        self.phones = list(phones)
        tuples = []
        for p in self.phones:
            for j, st in enumerate(topo.states):
                for pdf in ctx.leaves(p, st.pdf_class):
                    tuples.append((p, j, pdf))
        self.tuples = sorted(set(tuples))
        self._tuple_index = {t: i for i, t in enumerate(self.tuples)}
        first, pdf, phone, state, dest, logp = [0], [-1], [-1], [-1], [-1], [0.0]
        for p, j, d in self.tuples:
            first.append(len(pdf))
            for dst, prob in topo.states[j].transitions:
                pdf.append(d)
                phone.append(p)
                state.append(j)
                dest.append(dst)
                logp.append(math.log(prob))
        self._first_tid = first[1:]
        self.tid2pdf = np.asarray(pdf, dtype=np.int64)
        self.tid2phone = np.asarray(phone, dtype=np.int64)
        self.tid2state = np.asarray(state, dtype=np.int64)
        self.tid2dest = np.asarray(dest, dtype=np.int64)
        self.tid_logprob = np.asarray(logp)
        self.num_pdfs = ctx.num_pdfs
        used = set(self.tid2pdf[1:].tolist())
        if used != set(range(self.num_pdfs)):
            raise ValidationError("some pdf ids are not reachable from any transition id")

    @property
    def num_transition_ids(self):
        return len(self.tid2pdf) - 1

    def tid(self, phone, state, pdf, trans_index):
        return self._first_tid[self._tuple_index[(phone, state, pdf)]] + trans_index

    def tids_for(self, phone, state, pdf):
        first = self._first_tid[self._tuple_index[(phone, state, pdf)]]
        return list(range(first, first + len(self.topo.states[state].transitions)))

    def describe(self, tid):
        return int(self.tid2phone[tid]), int(self.tid2state[tid]), int(self.tid2pdf[tid]), int(self.tid2dest[tid])

    def is_exit(self, tid):
        return self.tid2dest[tid] == self.topo.num_states

    def phone_segments(self, tids):
        """Split a frame-level transition-id sequence into ``(phone, start, end)`` segments."""
        segs = []
        start = 0
        for t, tid in enumerate(tids):
            if self.is_exit(tid):
                segs.append((int(self.tid2phone[tid]), start, t + 1))
                start = t + 1
        if start != len(tids):
            raise ValidationError("alignment does not end at a phone boundary")
        return segs

    def to_arrays(self):
        return {
            "tm_tuples": np.asarray(self.tuples, dtype=np.int64).reshape(-1, 3),
            "tm_phones": np.asarray(self.phones, dtype=np.int64),
            "tm_tree": self.ctx.to_array(),
        }

    @classmethod
    def from_arrays(cls, topo_kind, arrays):
        topo = HmmTopology.from_kind(topo_kind)
        ctx = ContextDependency.from_array(arrays["tm_tree"])
        return cls(topo, ctx, arrays["tm_phones"].tolist())

    def write(self, path):
        write_arrays(path, {"topology": self.topo.kind}, self.to_arrays())

    @classmethod
    def read(cls, path):
        meta, arrays = read_arrays(path)
        return cls.from_arrays(meta["topology"], arrays)
