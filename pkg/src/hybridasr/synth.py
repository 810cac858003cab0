"""Deterministic synthetic spoken language for desk-scale experiments.

Each phone is a two-formant tone complex. Every spoken token jitters its
formants, and formant tracks are smoothed across phone boundaries so
neighbouring phones colour each other, which gives context-dependent
models something to learn.
"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, write_wav
from .datadir import DataDir
from .errors import BadConfig

__all__ = ["SynthConfig", "PHONES", "make_lexicon", "synthesize_utterance", "add_noise", "generate_corpus"]

# phone -> (F1, F2) in Hz
PHONES = {
    "a": (750, 1300), "e": (450, 2000), "i": (300, 2300), "o": (500, 900),
    "u": (350, 800), "m": (280, 1100), "n": (280, 1600), "l": (400, 1500),
    "r": (550, 1700), "k": (650, 1900), "t": (600, 2400), "b": (420, 1100),
    "s": (800, 2200), "d": (650, 1600),
}


@dataclass
class SynthConfig:
    vocab_size: int = 20
    num_train: int = 300
    num_test: int = 60
    noise_snr_db: float = 20.0
    seed: int = 0
    sample_rate: int = 16000
    num_train_speakers: int = 10
    num_test_speakers: int = 2
    min_phone_ms: float = 80.0
    max_phone_ms: float = 160.0
    max_words: int = 8
    coart_ms: float = 50.0
    formant_jitter: float = 0.12
    formant_drift: float = 0.03
    breath_db: float = -25.0

    def __post_init__(self):
        if self.vocab_size < 2:
            raise BadConfig("vocab_size must be >= 2")
        if self.num_train < 10 or self.num_test < 10:
            raise BadConfig("need at least 10 utterances per set")
        if self.num_train % 2 or self.num_test % 2:
            raise BadConfig("utterance counts must be even (clean/noisy pairs)")
        if not 0 < self.min_phone_ms <= self.max_phone_ms:
            raise BadConfig("bad phone duration range")


def make_lexicon(vocab_size, rng):
    """``vocab_size`` distinct words of 2-4 phones; the spelling is the phone string."""
    names = sorted(PHONES)
    words = {}
    while len(words) < vocab_size:
        n = int(rng.integers(2, 5))
        pron = tuple(names[i] for i in rng.integers(0, len(names), n))
        word = "".join(pron)
        if word not in words and pron not in words.values():
            words[word] = pron
    return dict(sorted(words.items()))


def _speaker(rng):
    return {"scale": float(rng.uniform(0.94, 1.06)), "f0": float(rng.uniform(100.0, 180.0)), "gain": float(rng.uniform(0.2, 0.35))}


def synthesize_utterance(words, lexicon, speaker, cfg, rng):
    """Return float samples for ``words`` with silence at the edges and between words."""
    fs = cfg.sample_rate
    f1, f2, env = [], [], []

    def add(n, formants, voiced):
        # each token drifts linearly by a random fraction across its duration
        drift = 1.0 + (cfg.formant_drift * rng.standard_normal(2) if voiced else np.zeros(2))
        ramp = np.linspace(0.0, 1.0, n)
        f1.append(formants[0] * (1.0 + (drift[0] - 1.0) * ramp))
        f2.append(formants[1] * (1.0 + (drift[1] - 1.0) * ramp))
        env.append(np.full(n, 1.0 if voiced else 0.0))

    last = PHONES["a"]
    add(int(fs * rng.uniform(0.15, 0.3)), last, False)
    for k, w in enumerate(words):
        if k:
            add(int(fs * rng.uniform(0.05, 0.25)), last, False)
        for ph in lexicon[w]:
            n = int(fs * rng.uniform(cfg.min_phone_ms, cfg.max_phone_ms) / 1000.0)
            last = tuple(f * (1.0 + cfg.formant_jitter * rng.standard_normal()) for f in PHONES[ph])
            add(n, last, True)
    add(int(fs * rng.uniform(0.15, 0.3)), last, False)
    f1, f2, env = np.concatenate(f1), np.concatenate(f2), np.concatenate(env)
    width = max(1, int(fs * cfg.coart_ms / 1000.0))
    kernel = np.ones(width) / width
    f1 = np.convolve(np.pad(f1, width, mode="edge"), kernel, mode="same")[width:-width] * speaker["scale"]
    f2 = np.convolve(np.pad(f2, width, mode="edge"), kernel, mode="same")[width:-width] * speaker["scale"]
    ramp = max(1, int(fs * 0.005))
    env = np.convolve(env, np.ones(ramp) / ramp, mode="same")
    t = np.arange(len(env)) / fs
    ph1 = 2 * np.pi * np.cumsum(f1) / fs
    ph2 = 2 * np.pi * np.cumsum(f2) / fs
    voicing = 1.0 + 0.5 * np.sin(2 * np.pi * speaker["f0"] * t)
    breath = 10.0 ** (cfg.breath_db / 20.0) * rng.standard_normal(len(env))
    x = speaker["gain"] * env * (voicing * (np.sin(ph1) + 0.6 * np.sin(ph2)) / 2.4 + breath)
    return x


def add_noise(x, snr_db, rng):
    """White Gaussian noise scaled so the realized signal-to-noise ratio is exactly ``snr_db``."""
    noise = rng.standard_normal(len(x))
    ps = float(np.mean(x * x))
    pn = float(np.mean(noise * noise))
    return x + noise * np.sqrt(ps / (pn * 10.0 ** (snr_db / 10.0)))


def _make_set(name, n_pairs, speakers, lexicon, cfg, rng, out):
    wav_dir = out / name / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    vocab = sorted(lexicon)
    d = DataDir(out / name)
    for i in range(n_pairs):
        spk = speakers[i % len(speakers)]
        nw = int(rng.integers(1, cfg.max_words + 1))
        words = [vocab[j] for j in rng.integers(0, len(vocab), nw)]
        x = synthesize_utterance(words, lexicon, spk[1], cfg, rng)
        for kind, sig in (("clean", x), ("noisy", add_noise(x, cfg.noise_snr_db, rng))):
            utt = f"{spk[0]}-{name}{i:04d}-{kind}"
            rel = f"wav/{utt}.wav"
            write_wav(AudioBuffer(sig, cfg.sample_rate, utt), out / name / rel)
            d.wav_scp[utt] = rel
            d.text[utt] = list(words)
            d.utt2spk[utt] = spk[0]
    d.write()
    return d


def generate_corpus(out_dir, cfg=None):
    """Write ``train/`` and ``test/`` data directories plus ``lexicon.txt`` under ``out_dir``."""
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lexicon = make_lexicon(cfg.vocab_size, rng)
    (out / "lexicon.txt").write_text("".join(f"{w} {' '.join(p)}\n" for w, p in lexicon.items()))
    total = cfg.num_train_speakers + cfg.num_test_speakers
    speakers = [(f"spk{k:02d}", _speaker(rng)) for k in range(total)]
    train = _make_set("train", cfg.num_train // 2, speakers[: cfg.num_train_speakers], lexicon, cfg, rng, out)
    test = _make_set("test", cfg.num_test // 2, speakers[cfg.num_train_speakers :], lexicon, cfg, rng, out)
    return train, test, lexicon
