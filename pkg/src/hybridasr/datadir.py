"""Conventional data directories: wav.scp, text, utt2spk, spk2utt."""
from dataclasses import dataclass, field
from pathlib import Path

from .audio import read_wav_scp
from .errors import MissingArtifact, ValidationFailed

__all__ = ["DataDir", "read_table", "write_table", "invert_utt2spk"]


def read_table(path):
    """``key rest-of-line`` text file as a dict of strings."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        if key in out:
            raise ValidationFailed(f"{path}:{n}: duplicate key {key}")
        out[key] = rest.strip()
    return out


def write_table(table, path):
    Path(path).write_text("".join(f"{k} {table[k]}".rstrip() + "\n" for k in sorted(table)))


def invert_utt2spk(utt2spk):
    spk2utt = {}
    for utt in sorted(utt2spk):
        spk2utt.setdefault(utt2spk[utt], []).append(utt)
    return spk2utt


@dataclass
class DataDir:
    path: Path
    wav_scp: dict = field(default_factory=dict)
    text: dict = field(default_factory=dict)
    utt2spk: dict = field(default_factory=dict)
    spk2utt: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path):
        path = Path(path)
        for name in ("wav.scp", "text", "utt2spk"):
            if not (path / name).exists():
                raise MissingArtifact(f"{path / name} not found")
        wav = read_wav_scp(path / "wav.scp")
        text = {u: t.split() for u, t in read_table(path / "text").items()}
        utt2spk = read_table(path / "utt2spk")
        spk2utt = None
        if (path / "spk2utt").exists():
            spk2utt = {s: u.split() for s, u in read_table(path / "spk2utt").items()}
        d = cls(path, wav, text, utt2spk, spk2utt if spk2utt is not None else invert_utt2spk(utt2spk))
        d.validate()
        return d

    def validate(self):
        """Utterance ids must agree across files and spk2utt must invert utt2spk."""
        for utt in sorted(self.wav_scp):
            if utt not in self.utt2spk:
                raise ValidationFailed(f"utterance {utt} in wav.scp has no utt2spk entry")
            if utt not in self.text:
                raise ValidationFailed(f"utterance {utt} in wav.scp has no transcript")
        for name, table in (("utt2spk", self.utt2spk), ("text", self.text)):
            for utt in sorted(table):
                if utt not in self.wav_scp:
                    raise ValidationFailed(f"utterance {utt} in {name} has no wav.scp entry")
        expected = invert_utt2spk(self.utt2spk)
        got = {s: sorted(u) for s, u in self.spk2utt.items()}
        if got != expected:
            for spk in sorted(set(got) | set(expected)):
                a, b = set(got.get(spk, ())), set(expected.get(spk, ()))
                bad = sorted(a ^ b)
                if bad:
                    raise ValidationFailed(f"spk2utt disagrees with utt2spk for utterance {bad[0]} (speaker {spk})")
        return self

    @property
    def utts(self):
        return sorted(self.wav_scp)

    def write(self, path=None):
        path = Path(path or self.path)
        path.mkdir(parents=True, exist_ok=True)
        write_table(self.wav_scp, path / "wav.scp")
        write_table({u: " ".join(w) for u, w in self.text.items()}, path / "text")
        write_table(self.utt2spk, path / "utt2spk")
        write_table({s: " ".join(u) for s, u in invert_utt2spk(self.utt2spk).items()}, path / "spk2utt")
