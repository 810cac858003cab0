"""N-gram counting, Witten-Bell / unsmoothed estimation and ARPA I/O.

Probabilities are stored as log10 values keyed by word tuples. A model
without back-off weights (the unsmoothed variant) uses "closed" lookup:
it only backs off from histories that were never seen, and an unseen
continuation of a seen history has probability zero.
"""
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import BadOrder, MalformedArpa
from .lexicon import BOS, EOS, UNK

__all__ = ["count_ngrams", "estimate_lm", "ArpaLm", "write_arpa", "read_arpa", "perplexity"]

LOG10_ZERO = -99.0
NEG_INF = float("-inf")


def count_ngrams(text, order):
    """Counts of all n-grams up to ``order`` over ``<s> w1 .. wn </s>`` padded sequences.

    ``counts[n-1]`` maps n-tuples to counts. ``<s>`` is never predicted, so
    the unigram ``(<s>,)`` counts as a history only.
    """
    if order < 1:
        raise BadOrder(f"order must be >= 1, got {order}")
    counts = [Counter() for _ in range(order)]
    for words in text:
        seq = [BOS] + list(words) + [EOS]
        for i in range(len(seq)):
            for n in range(1, order + 1):
                if i + 1 - n < 0:
                    break
                counts[n - 1][tuple(seq[i + 1 - n : i + 1])] += 1
    return counts


def merge_counts(a, b):
    return [x + y for x, y in zip(a, b)]


@dataclass
class ArpaLm:
    order: int
    probs: list  # probs[n-1]: n-tuple -> log10 P
    backoffs: dict = field(default_factory=dict)  # history tuple -> log10 bow

    def __post_init__(self):
        self.vocab = {w[0] for w in self.probs[0]}
        self.closed = not self.backoffs
        self._states = {()}
        for n in range(2, self.order + 1):
            self._states.update(k[:-1] for k in self.probs[n - 1])

    def is_state(self, history):
        return tuple(history) in self._states

    def _map(self, w):
        return w if w in self.vocab else UNK

    def log10_prob(self, word, history=()):
        """log10 P(word | history); ``-inf`` when the model assigns zero."""
        word = self._map(word)
        h = tuple(self._map(w) if w != BOS else w for w in history)
        h = h[len(h) - (self.order - 1) :] if self.order > 1 else ()
        if self.closed:
            while h and h not in self._states:
                h = h[1:]
            return self.probs[len(h)].get(h + (word,), NEG_INF)
        total = 0.0
        while True:
            p = self.probs[len(h)].get(h + (word,))
            if p is not None:
                return total + p
            if not h:
                return NEG_INF
            total += self.backoffs.get(h, 0.0)
            h = h[1:]

    def prob(self, word, history=()):
        lp = self.log10_prob(word, history)
        return 0.0 if lp == NEG_INF else 10.0**lp

    def sentence_log10(self, words):
        hist = [BOS]
        total = 0.0
        for w in list(words) + [EOS]:
            total += self.log10_prob(w, hist)
            hist.append(w)
        return total

    def predicted_words(self):
        return sorted(w for w in self.vocab if w != BOS)

    def histories(self):
        return sorted(self._states, key=lambda h: (len(h), h))

    def num_entries(self):
        return [len(p) for p in self.probs]


def _wb_unigrams(c1, vocab):
    tokens = {w[0]: c for w, c in c1.items() if w[0] != BOS}
    n = sum(tokens.values())
    t = len(tokens)
    extra = sorted(set(vocab or ()) - set(tokens) - {BOS, EOS}) if vocab else []
    if UNK not in tokens and UNK not in extra:
        extra.append(UNK)
    if t == 0:
        raise BadOrder("no unigram events to estimate from")
    out = {}
    for w, c in tokens.items():
        out[(w,)] = c / (n + t)
    share = t / (n + t) / len(extra)
    for w in extra:
        out[(w,)] = out.get((w,), 0.0) + share
    return out


def estimate_lm(counts, order, smoothing="witten_bell", vocab=None):
    """Estimate an ArpaLm from :func:`count_ngrams` tables.

    ``witten_bell`` interpolates every order with the next lower one, giving
    ``bow(h) = T(h) / (c(h) + T(h))``; ``<unk>`` (and any ``vocab`` word not
    seen in training) shares the unigram back-off mass. ``none`` is plain
    relative frequency with no back-off entries.
    """
    if order < 1 or order > len(counts):
        raise BadOrder(f"order {order} not supported by {len(counts)} count tables")
    if smoothing not in ("witten_bell", "none"):
        raise ValueError(f"unknown smoothing {smoothing!r}")
    if not counts[0]:
        raise BadOrder("empty counts")
    probs = [dict() for _ in range(order)]
    backoffs = {}

    if smoothing == "none":
        c1 = {w: c for w, c in counts[0].items() if w[0] != BOS}
        total = sum(c1.values())
        probs[0] = {w: math.log10(c / total) for w, c in c1.items()}
        probs[0][(BOS,)] = LOG10_ZERO
        for n in range(2, order + 1):
            hist = Counter()
            for g, c in counts[n - 1].items():
                hist[g[:-1]] += c
            probs[n - 1] = {g: math.log10(c / hist[g[:-1]]) for g, c in counts[n - 1].items()}
        return ArpaLm(order, probs, {})

    lin = _wb_unigrams(counts[0], vocab)
    probs[0] = {w: math.log10(p) for w, p in lin.items()}
    probs[0][(BOS,)] = LOG10_ZERO
    lower = dict(lin)  # linear probabilities of every stored entry so far, all orders
    lower_bow = {}

    def lower_prob(word, h):
        total = 1.0
        while True:
            p = lower.get(h + (word,))
            if p is not None:
                return total * p
            total *= lower_bow.get(h, 1.0)
            h = h[1:]

    for n in range(2, order + 1):
        cont = {}
        for g, c in counts[n - 1].items():
            cont.setdefault(g[:-1], []).append((g[-1], c))
        new = {}
        for h, items in cont.items():
            ch = sum(c for _, c in items)
            th = len(items)
            bow = th / (ch + th)
            for w, c in items:
                new[h + (w,)] = (c + th * lower_prob(w, h[1:])) / (ch + th)
            lower_bow[h] = bow
        lower.update(new)
        probs[n - 1] = {g: math.log10(p) for g, p in new.items()}
    backoffs = {h: math.log10(b) for h, b in lower_bow.items()}
    return ArpaLm(order, probs, backoffs)


def _fmt(x):
    return f"{x:.6f}"


def write_arpa(lm, path):
    lines = ["", "\\data\\"]
    for n in range(1, lm.order + 1):
        lines.append(f"ngram {n}={len(lm.probs[n - 1])}")
    for n in range(1, lm.order + 1):
        lines += ["", f"\\{n}-grams:"]
        for g in sorted(lm.probs[n - 1]):
            row = f"{_fmt(lm.probs[n - 1][g])}\t{' '.join(g)}"
            if g in lm.backoffs:
                row += f"\t{_fmt(lm.backoffs[g])}"
            lines.append(row)
    lines += ["", "\\end\\", ""]
    Path(path).write_text("\n".join(lines))


_SECTION = re.compile(r"\\(\d+)-grams:")


def read_arpa(path):
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    try:
        i = lines.index("\\data\\")
    except ValueError:
        raise MalformedArpa(f"{path}: missing \\data\\ header") from None
    declared = {}
    i += 1
    while i < len(lines) and not lines[i].startswith("\\"):
        if lines[i]:
            m = re.fullmatch(r"ngram\s+(\d+)\s*=\s*(\d+)", lines[i])
            if not m:
                raise MalformedArpa(f"{path}: bad header line {lines[i]!r}")
            declared[int(m.group(1))] = int(m.group(2))
        i += 1
    if not declared:
        raise MalformedArpa(f"{path}: no ngram counts in header")
    order = max(declared)
    probs = [dict() for _ in range(order)]
    backoffs = {}
    seen = set()
    cur = None
    ended = False
    for ln in lines[i:]:
        if not ln:
            continue
        if ln == "\\end\\":
            ended = True
            break
        m = _SECTION.fullmatch(ln)
        if m:
            cur = int(m.group(1))
            if cur not in declared:
                raise MalformedArpa(f"{path}: section {cur} not in header")
            seen.add(cur)
            continue
        if cur is None:
            raise MalformedArpa(f"{path}: entry outside a section: {ln!r}")
        parts = ln.split()
        if len(parts) not in (cur + 1, cur + 2):
            raise MalformedArpa(f"{path}: bad {cur}-gram line {ln!r}")
        try:
            g = tuple(parts[1 : cur + 1])
            probs[cur - 1][g] = float(parts[0])
            if len(parts) == cur + 2:
                backoffs[g] = float(parts[-1])
        except ValueError:
            raise MalformedArpa(f"{path}: non-numeric field in {ln!r}") from None
    if not ended:
        raise MalformedArpa(f"{path}: missing \\end\\")
    for n, c in declared.items():
        if n not in seen:
            raise MalformedArpa(f"{path}: missing \\{n}-grams: section")
        if len(probs[n - 1]) != c:
            raise MalformedArpa(f"{path}: header says {c} {n}-grams, found {len(probs[n - 1])}")
    return ArpaLm(order, probs, backoffs)


def perplexity(lm, text):
    total = 0.0
    n = 0
    for words in text:
        total += lm.sentence_log10(words)
        n += len(words) + 1
    if n == 0:
        return float("nan")
    return 10.0 ** (-total / n)
