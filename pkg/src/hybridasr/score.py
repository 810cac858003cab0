"""Edit-distance scoring: WER, CER, SER, MER, WIL and PER."""
import json
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EmptyCorpus, EmptyReference

__all__ = [
    "AlignmentCounts",
    "align_tokens",
    "wer",
    "cer",
    "ser",
    "mer",
    "wil",
    "per_metric",
    "UttScore",
    "ScoreReport",
    "score_corpus",
    "read_transcripts",
]


@dataclass
class AlignmentCounts:
    H: int = 0
    S: int = 0
    D: int = 0
    I: int = 0  # noqa: E741

    @property
    def n_ref(self):
        return self.H + self.S + self.D

    @property
    def n_hyp(self):
        return self.H + self.S + self.I

    @property
    def errors(self):
        return self.S + self.D + self.I

    def __add__(self, other):
        return AlignmentCounts(self.H + other.H, self.S + other.S, self.D + other.D, self.I + other.I)


def align_tokens(ref, hyp):
    """Unit-cost Levenshtein alignment.

    Among equally cheap backtraces, a diagonal step (hit or substitution)
    is preferred, then a deletion, then an insertion.
    """
    ref, hyp = list(ref), list(hyp)
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            d[i, j] = min(sub, d[i - 1, j] + 1, d[i, j - 1] + 1)
    c = AlignmentCounts()
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            if ref[i - 1] == hyp[j - 1]:
                c.H += 1
            else:
                c.S += 1
            i, j = i - 1, j - 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            c.D += 1
            i -= 1
        else:
            c.I += 1
            j -= 1
    return c


def wer(c):
    if c.n_ref < 1:
        raise EmptyReference("WER needs at least one reference word")
    return c.errors / c.n_ref


def cer(ref, hyp):
    """Character error rate over strings (spaces count as characters)."""
    if len(ref) < 1:
        raise EmptyReference("CER needs a nonempty reference")
    return wer(align_tokens(ref, hyp))


def ser(per_utt):
    per_utt = list(per_utt)
    if not per_utt:
        raise EmptyCorpus("SER needs at least one utterance")
    return sum(1 for c in per_utt if c.errors > 0) / len(per_utt)


def mer(c):
    total = c.H + c.S + c.D + c.I
    if c.n_ref < 1 or total < 1:
        raise EmptyReference("MER needs at least one reference word")
    return c.errors / total


def wil(c):
    if c.n_ref < 1:
        raise EmptyReference("WIL needs at least one reference word")
    if c.n_hyp == 0 or c.H == 0:
        return 1.0
    return 1.0 - (c.H / c.n_ref) * (c.H / c.n_hyp)


def _per_errors(ref, hyp):
    rc, hc = Counter(ref), Counter(hyp)
    common = sum(min(rc[w], hc[w]) for w in rc)
    return max(len(ref), len(hyp)) - common


def per_metric(ref, hyp):
    """Position-independent error rate from bag-of-words overlap."""
    if len(ref) < 1:
        raise EmptyReference("PER needs at least one reference word")
    return _per_errors(list(ref), list(hyp)) / len(ref)


@dataclass
class UttScore:
    utt_id: str
    counts: AlignmentCounts
    char_counts: AlignmentCounts
    per_errors: int

    @property
    def wer(self):
        return wer(self.counts)


@dataclass
class ScoreReport:
    wer: float
    cer: float
    ser: float
    mer: float
    wil: float
    per: float
    counts: AlignmentCounts
    num_utts: int
    utts: list = field(default_factory=list)

    def to_text(self):
        lines = []
        for u in self.utts:
            c = u.counts
            lines.append(f"{u.utt_id} H={c.H} S={c.S} D={c.D} I={c.I} WER={wer(c) * 100:.2f}")
        c = self.counts
        lines.append(
            f"WER {self.wer * 100:.2f} SER {self.ser * 100:.2f} CER {self.cer * 100:.2f} "
            f"MER {self.mer * 100:.2f} WIL {self.wil * 100:.2f} PER {self.per * 100:.2f} "
            f"[H={c.H} S={c.S} D={c.D} I={c.I} N={c.n_ref} utts={self.num_utts}]"
        )
        return "\n".join(lines) + "\n"

    def to_json(self):
        d = {k: getattr(self, k) for k in ("wer", "cer", "ser", "mer", "wil", "per", "num_utts")}
        d["counts"] = asdict(self.counts)
        d["utts"] = [{"utt_id": u.utt_id, **asdict(u.counts), "wer": u.wer} for u in self.utts]
        return json.dumps(d, sort_keys=True, indent=1) + "\n"


def score_corpus(refs, hyps):
    """Pooled-count corpus metrics. Utterances missing from ``hyps`` score as empty output."""
    if not refs:
        raise EmptyCorpus("no reference utterances")
    utts = []
    for utt in sorted(refs):
        r, h = list(refs[utt]), list(hyps.get(utt, []))
        utts.append(UttScore(utt, align_tokens(r, h), align_tokens(" ".join(r), " ".join(h)), _per_errors(r, h)))
    total = AlignmentCounts()
    chars = AlignmentCounts()
    for u in utts:
        total = total + u.counts
        chars = chars + u.char_counts
    if total.n_ref < 1:
        raise EmptyReference("corpus has no reference words")
    return ScoreReport(
        wer=wer(total),
        cer=wer(chars),
        ser=ser([u.counts for u in utts]),
        mer=mer(total),
        wil=wil(total),
        per=sum(u.per_errors for u in utts) / total.n_ref,
        counts=total,
        num_utts=len(utts),
        utts=utts,
    )


def read_transcripts(path):
    out = {}
    with open(path) as f:
        for line in f:
            parts = line.split()
            if parts:
                out[parts[0]] = parts[1:]
    return out
