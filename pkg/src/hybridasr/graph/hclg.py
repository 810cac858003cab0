"""L, G, C and H construction and their composition into decoding graphs."""
import math

from ..errors import BadContextWidth, EmptyLexicon
from ..fst.algorithms import compose, rm_epsilon
from ..fst.core import ONE, TROPICAL, Fst
from ..lexicon import BOS, EOS, UNK
from .topology import BOUNDARY

__all__ = [
    "CdLabels",
    "make_lexicon_fst",
    "make_grammar_fst",
    "make_context_fst",
    "make_h_fst",
    "compile_hclg",
    "build_decoding_graph",
    "build_training_graph",
    "word_acceptor",
]

LN10 = math.log(10.0)


class CdLabels:
    """Integer codes for context-dependent phones.

    Phone ids come from the phone table, so id 0 (epsilon) doubles as the
    utterance-boundary context.
    """

    def __init__(self, width, num_phone_ids):
        if width not in (1, 2, 3):
            raise BadContextWidth(f"context width {width} not in (1, 2, 3)")
        self.width = width
        self.np = num_phone_ids

    def encode(self, left, center, right=BOUNDARY):
        if self.width == 1:
            return center
        if self.width == 2:
            return left * self.np + center
        return (left * self.np + center) * self.np + right

    def decode(self, label):
        """Return (left, center, right)."""
        if self.width == 1:
            return BOUNDARY, label, BOUNDARY
        if self.width == 2:
            return label // self.np, label % self.np, BOUNDARY
        lc, r = divmod(label, self.np)
        l, c = divmod(lc, self.np)
        return l, c, r


def make_lexicon_fst(lex, sil_prob=0.5):
    """Phones-to-words transducer with optional silence between words.

    Start state S goes to the loop state by epsilon (cost -ln(1-p)) or by a
    silence phone (cost -ln p); every pronunciation runs from the loop state
    back to S, emitting the word on its first phone arc.
    """
    if not lex.entries:
        raise EmptyLexicon("lexicon has no entries")
    if not 0.0 <= sil_prob < 1.0:
        raise ValueError("sil_prob must be in [0, 1)")
    pt, wt = lex.phone_table, lex.word_table
    fst = Fst(TROPICAL, pt, wt)
    start = fst.add_state()
    fst.set_start(start)
    if sil_prob > 0:
        loop = fst.add_state()
        fst.add_arc(start, 0, 0, -math.log(1.0 - sil_prob), loop)
        fst.add_arc(start, pt[lex.silence_phone], 0, -math.log(sil_prob), loop)
        fst.set_final(loop)
    else:
        loop = start
        fst.set_final(start)
    for word, pron, prob in sorted(lex.entries):
        src = loop
        for i, ph in enumerate(pron):
            dst = start if i == len(pron) - 1 else fst.add_state()
            fst.add_arc(src, pt[ph], wt[word] if i == 0 else 0, -math.log(prob) if i == 0 else ONE, dst)
            src = dst
    return fst.sort_arcs()


def make_grammar_fst(lm, table, semiring=TROPICAL):
    """N-gram acceptor: one state per history, epsilon back-off arcs.

    Words absent from ``table`` (for instance ``<unk>``) get no arcs, so they
    can never be recognized.
    """
    order = lm.order
    states = sorted(lm._states, key=lambda h: (len(h), h))
    ids = {}
    fst = Fst(semiring, table, table)
    for h in states:
        ids[h] = fst.add_state()

    def state_for(ctx):
        ctx = ctx[len(ctx) - (order - 1) :] if order > 1 else ()
        while ctx not in ids:
            ctx = ctx[1:]
        return ids[ctx]

    start_hist = (BOS,) if order > 1 and (BOS,) in ids else ()
    fst.set_start(ids[start_hist])
    cont = {}
    for table_n in lm.probs:
        for g, lp in table_n.items():
            cont.setdefault(g[:-1], []).append((g[-1], lp))
    for h in states:
        s = ids[h]
        for w, lp in sorted(cont.get(h, ())):
            cost = -lp * LN10
            if w == EOS:
                fst.set_final(s, cost)
            elif w in (BOS, UNK) or w not in table:
                continue
            else:
                fst.add_arc(s, table[w], table[w], cost, state_for(h + (w,)))
        if h and not lm.closed:
            bow = lm.backoffs.get(h, 0.0)
            fst.add_arc(s, 0, 0, -bow * LN10, state_for(h[1:]))
    return fst.sort_arcs()


def make_context_fst(phone_ids, width, cd=None):
    """Context transducer from CD labels (input) to phones (output).

    Width 1 is the identity; width 2 emits (left, phone) at once; width 3
    keeps (left, current) in the state and emits the CD label for the
    current phone once its right context has been read.
    """
    cd = cd or CdLabels(width, max(phone_ids) + 1)
    fst = Fst(TROPICAL)
    if width == 1:
        s = fst.add_state()
        fst.set_start(s)
        fst.set_final(s)
        for p in phone_ids:
            fst.add_arc(s, p, p, ONE, s)
        return fst
    if width == 2:
        ids = {a: fst.add_state() for a in [BOUNDARY] + list(phone_ids)}
        fst.set_start(ids[BOUNDARY])
        for a, s in ids.items():
            fst.set_final(s)
            for p in phone_ids:
                fst.add_arc(s, cd.encode(a, p), p, ONE, ids[p])
        return fst
    if width != 3:
        raise BadContextWidth(f"context width {width} not supported")
    start = fst.add_state()
    fst.set_start(start)
    fst.set_final(start)
    final = fst.add_state()
    fst.set_final(final)
    ids = {}
    for a in [BOUNDARY] + list(phone_ids):
        for b in phone_ids:
            ids[(a, b)] = fst.add_state()
    for p in phone_ids:
        fst.add_arc(start, 0, p, ONE, ids[(BOUNDARY, p)])
    for (a, b), s in ids.items():
        for r in phone_ids:
            fst.add_arc(s, cd.encode(a, b, r), r, ONE, ids[(b, r)])
        fst.add_arc(s, cd.encode(a, b, BOUNDARY), 0, ONE, final)
    return fst


def make_h_fst(tm, cd, labels, use_pdf_labels=False, transition_scale=1.0, semiring=TROPICAL):
    """HMM transducer from transition ids (or pdf+1) to CD labels.

    A hub state is the start and final state. The first frame of a phone is
    an arc out of the hub carrying the CD label; later frames stay inside the
    phone's private states and the exit transition returns to the hub.
    """
    topo, ctx = tm.topo, tm.ctx
    fst = Fst(semiring)
    hub = fst.add_state()
    fst.set_start(hub)
    fst.set_final(hub)
    n = topo.num_states
    for k in sorted(labels):
        if k == 0:
            continue
        left, phone, right = cd.decode(k)
        inner = {}

        def target(dst):
            if dst == n:
                return hub
            if dst not in inner:
                inner[dst] = fst.add_state()
            return inner[dst]

        def tids(j):
            pdf = ctx.pdf(phone, topo.states[j].pdf_class, left, right)
            return pdf, tm.tids_for(phone, j, pdf)

        pdf0, t0 = tids(0)
        for (dst, prob), tid in zip(topo.states[0].transitions, t0):
            il = pdf0 + 1 if use_pdf_labels else tid
            fst.add_arc(hub, il, k, -transition_scale * math.log(prob), target(dst))
        done = set()
        while True:
            todo = [j for j in inner if j not in done]
            if not todo:
                break
            for j in todo:
                done.add(j)
                pdf, tj = tids(j)
                for (dst, prob), tid in zip(topo.states[j].transitions, tj):
                    il = pdf + 1 if use_pdf_labels else tid
                    fst.add_arc(inner[j], il, 0, -transition_scale * math.log(prob), target(dst))
    return fst


def compile_hclg(h, c, l, g):
    """H o (C o (L o G)), epsilon-removed and trimmed. ``c`` may be None (monophone)."""
    lg = compose(l, g)
    clg = compose(c, lg) if c is not None else lg
    hclg = compose(h, clg)
    return rm_epsilon(hclg).connect().sort_arcs()


def _clg(lex, g, width, sil_prob):
    phone_ids = [lex.phone_table[p] for p in lex.phone_set]
    cd = CdLabels(width, len(lex.phone_table))
    l = make_lexicon_fst(lex, sil_prob)
    lg = compose(l, g)
    if width == 1:
        clg = lg
    else:
        clg = compose(make_context_fst(phone_ids, width, cd), lg)
    labels = {a.ilabel for arcs in clg.arcs for a in arcs} - {0}
    return clg, cd, labels


def build_decoding_graph(lex, lm, tm, sil_prob=0.5):
    g = make_grammar_fst(lm, lex.word_table)
    clg, cd, labels = _clg(lex, g, tm.ctx.width, sil_prob)
    h = make_h_fst(tm, cd, labels)
    return rm_epsilon(compose(h, clg)).connect().sort_arcs()


def word_acceptor(words, table):
    fst = Fst(TROPICAL, table, table)
    fst.add_states(len(words) + 1)
    fst.set_start(0)
    for i, w in enumerate(words):
        fst.add_arc(i, table[w], table[w], ONE, i + 1)
    fst.set_final(len(words))
    return fst


def build_training_graph(lex, words, tm, sil_prob=0.5):
    """Utterance graph constraining decoding to the transcript ``words``."""
    g = word_acceptor(words, lex.word_table)
    clg, cd, labels = _clg(lex, g, tm.ctx.width, sil_prob)
    h = make_h_fst(tm, cd, labels)
    return rm_epsilon(compose(h, clg)).connect().sort_arcs()
