"""Transcript cleaning, symbol tables and pronunciation lexicons."""
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DuplicateUttId, EmptyPronunciation, MalformedLine

log = logging.getLogger(__name__)

__all__ = ["SymbolTable", "Lexicon", "clean_transcript", "clean_corpus", "load_lexicon", "SIL", "EPS"]

EPS = "<eps>"
SIL = "sil"
BOS, EOS, UNK = "<s>", "</s>", "<unk>"

_NON_WORD = re.compile(r"[^\w'\-]+")


class SymbolTable:
    """Dense symbol <-> id map with id 0 reserved for epsilon."""

    def __init__(self, symbols=()):
        self._sym = [EPS]
        self._id = {EPS: 0}
        for s in symbols:
            self.add(s)

    def add(self, sym):
        if sym not in self._id:
            self._id[sym] = len(self._sym)
            self._sym.append(sym)
        return self._id[sym]

    def __getitem__(self, sym):
        return self._id[sym]

    def get(self, sym, default=None):
        return self._id.get(sym, default)

    def symbol(self, i):
        return self._sym[i]

    def __contains__(self, sym):
        return sym in self._id

    def __len__(self):
        return len(self._sym)

    def __iter__(self):
        return iter(self._sym)

    def __eq__(self, other):
        return isinstance(other, SymbolTable) and self._sym == other._sym

    def write(self, path):
        Path(path).write_text("".join(f"{s} {i}\n" for i, s in enumerate(self._sym)))

    @classmethod
    def read(cls, path):
        table = cls()
        rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
        if rows and rows[0][0] == EPS:
            rows = rows[1:]
        for row in rows:
            i = table.add(row[0])
            if len(row) > 1 and int(row[1]) != i:
                raise MalformedLine(f"{path}: symbol {row[0]} has id {row[1]}, expected dense id {i}")
        return table


def clean_transcript(text):
    """Lowercase, drop punctuation (keeping intra-word ``-`` and ``'``)."""
    words = []
    for tok in _NON_WORD.sub(" ", text.lower().replace("_", " ")).split():
        tok = tok.strip("-'")
        if tok:
            words.append(tok)
    return words


def clean_corpus(lines):
    """Parse ``utt_id transcript`` lines.

    Returns ``(text, vocab)``: a dict from utterance id to word list, and the
    sorted list of unique words. Utterances whose transcript is empty after
    cleaning are dropped with a warning.
    """
    text = {}
    for line in lines:
        if not line.strip():
            continue
        utt, _, rest = line.strip().partition(" ")
        if utt in text:
            raise DuplicateUttId(utt)
        words = clean_transcript(rest)
        if not words:
            log.warning("dropping %s: empty transcript", utt)
            text[utt] = None
            continue
        text[utt] = words
    text = {u: w for u, w in text.items() if w is not None}
    vocab = sorted({w for ws in text.values() for w in ws})
    return text, vocab


@dataclass
class Lexicon:
    entries: list
    phone_set: list
    word_table: SymbolTable
    phone_table: SymbolTable
    silence_phone: str = SIL
    oov_words: list = field(default_factory=list)

    @classmethod
    def from_entries(cls, entries, vocab=None):
        phones = sorted({p for _, pron, _ in entries for p in pron} - {SIL})
        phone_set = [SIL] + phones
        words = sorted({w for w, _, _ in entries})
        word_table = SymbolTable(words + [BOS, EOS, UNK])
        oov = sorted(set(vocab or ()) - set(words))
        return cls(list(entries), phone_set, word_table, SymbolTable(phone_set), SIL, oov)

    def prons(self, word):
        return [(pron, prob) for w, pron, prob in self.entries if w == word]

    def pron_map(self):
        out = {}
        for w, pron, prob in self.entries:
            out.setdefault(w, []).append((pron, prob))
        return out

    @property
    def nonsilence_phones(self):
        return [p for p in self.phone_set if p != self.silence_phone]

    def write(self, path):
        Path(path).write_text(
            "".join(f"{w} {prob:g} {' '.join(pron)}\n" for w, pron, prob in self.entries)
        )


def _parse_prob(tok):
    try:
        v = float(tok)
    except ValueError:
        return None
    return v if 0.0 < v <= 1.0 else None


def load_lexicon(path, vocab=None):
    """Read ``word [prob] phone ...`` lines; OOVs of ``vocab`` are reported, not fatal."""
    entries = []
    seen = set()
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        word, rest = parts[0], parts[1:]
        prob = _parse_prob(rest[0]) if rest else None
        if prob is not None:
            rest = rest[1:]
        elif rest and re.fullmatch(r"[-+]?\d*\.\d+|[-+]?\d+\.\d*", rest[0]):
            raise MalformedLine(f"{path}:{n}: pronunciation probability {rest[0]} not in (0, 1]")
        if not rest:
            raise EmptyPronunciation(f"{path}:{n}: {word} has no phones")
        key = (word, tuple(rest))
        if key in seen:
            raise MalformedLine(f"{path}:{n}: duplicate pronunciation for {word}")
        seen.add(key)
        entries.append((word, tuple(rest), 1.0 if prob is None else prob))
    lex = Lexicon.from_entries(entries, vocab)
    if lex.oov_words:
        log.warning("%d vocabulary words missing from lexicon: %s", len(lex.oov_words), " ".join(lex.oov_words[:20]))
    return lex
