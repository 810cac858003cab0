"""MFCC / log-Mel filterbank extraction, deltas and per-speaker CMVN.

Framing follows the "snip edges" convention: only frames that fit entirely
inside the signal are produced, so ``T = 1 + (n - W) // S`` for ``n >= W``.
"""
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadConfig, DimensionMismatch

__all__ = [
    "FeatureConfig",
    "FeatureMatrix",
    "CmvnStats",
    "frame_and_window",
    "power_spectrum",
    "mel_filterbank",
    "mel_log_energies",
    "dct_matrix",
    "mfcc_from_fbank",
    "fbank_from_mfcc",
    "append_deltas",
    "compute_features",
    "accumulate_cmvn",
    "apply_cmvn",
    "write_feature_archive",
    "read_feature_archive",
    "write_cmvn_stats",
    "read_cmvn_stats",
]

LOW_FREQ_HZ = 20.0
KINDS = {"mfcc": 0, "fbank": 1}


@dataclass
class FeatureConfig:
    window_ms: float = 25.0
    shift_ms: float = 10.0
    num_mel_bins: int = 23
    num_cepstra: int = 13
    preemph: float = 0.97
    kind: str = "mfcc"
    delta_order: int = 0
    delta_window: int = 2
    dither: float = 0.0
    log_floor: float = 1e-10

    def __post_init__(self):
        if not (self.window_ms > self.shift_ms > 0):
            raise BadConfig("need window_ms > shift_ms > 0")
        if self.kind not in KINDS:
            raise BadConfig(f"unknown feature kind {self.kind!r}")
        if self.kind == "mfcc" and self.num_cepstra > self.num_mel_bins:
            raise BadConfig("num_cepstra must not exceed num_mel_bins")
        if not 0.0 <= self.preemph < 1.0:
            raise BadConfig("preemph must be in [0, 1)")
        if self.delta_order not in (0, 1, 2):
            raise BadConfig("delta_order must be 0, 1 or 2")

    def window_samples(self, rate):
        return int(round(self.window_ms * rate / 1000.0))

    def shift_samples(self, rate):
        return int(round(self.shift_ms * rate / 1000.0))

    @classmethod
    def for_gmm(cls, **kw):
        return cls(kind="mfcc", num_mel_bins=23, num_cepstra=13, **kw)

    @classmethod
    def for_chain(cls, **kw):
        return cls(kind="fbank", num_mel_bins=40, **kw)


@dataclass
class FeatureMatrix:
    frames: np.ndarray
    frame_shift_ms: float = 10.0
    kind: str = "mfcc"
    utt_id: str = ""

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def dim(self):
        return self.frames.shape[1]


def frame_and_window(samples, rate, cfg, rng=None):
    """Cut ``samples`` into pre-emphasized, Hamming-windowed frames."""
    x = np.asarray(samples, dtype=np.float64)
    win = cfg.window_samples(rate)
    shift = cfg.shift_samples(rate)
    if win < 2 or shift < 1:
        raise BadConfig("window/shift too small for sample rate")
    if len(x) < win:
        return np.zeros((0, win))
    if cfg.dither > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        x = x + cfg.dither * rng.standard_normal(len(x))
    num = 1 + (len(x) - win) // shift
    idx = np.arange(win)[None, :] + shift * np.arange(num)[:, None]
    frames = x[idx]
    prev = np.concatenate([frames[:, :1], frames[:, :-1]], axis=1)
    frames = frames - cfg.preemph * prev
    i = np.arange(win)
    hamming = 0.54 - 0.46 * np.cos(2 * np.pi * i / (win - 1))
    return frames * hamming


def fft_size(win):
    n = 1
    while n < win:
        n *= 2
    return n


def power_spectrum(frames):
    n = fft_size(frames.shape[1]) if frames.shape[1] else 1
    spec = np.fft.rfft(frames, n=n, axis=1)
    return spec.real ** 2 + spec.imag ** 2


def hz_to_mel(f):
    return 1127.0 * np.log(1.0 + np.asarray(f) / 700.0)


def mel_filterbank(num_bins, nfft, rate, low=LOW_FREQ_HZ, high=None):
    """Triangular filters, equally spaced in Mel, over the rfft bins.

    Returns a ``(num_bins, nfft // 2 + 1)`` weight matrix.
    """
    if num_bins < 3:
        raise BadConfig("need at least 3 mel bins")
    high = rate / 2.0 if high is None else high
    mlo, mhi = hz_to_mel(low), hz_to_mel(high)
    edges = mlo + (mhi - mlo) * np.arange(num_bins + 2) / (num_bins + 1)
    fft_mel = hz_to_mel(np.arange(nfft // 2 + 1) * rate / nfft)
    left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (fft_mel[None, :] - left) / (center - left)
    down = (right - fft_mel[None, :]) / (right - center)
    weights = np.clip(np.minimum(up, down), 0.0, None)
    if np.any(weights.sum(axis=1) <= 0):
        raise BadConfig(f"{num_bins} mel bins exceed the resolution of a {nfft}-point FFT")
    return weights


def mel_log_energies(spec, cfg, rate):
    nfft = 2 * (spec.shape[1] - 1)
    fb = mel_filterbank(cfg.num_mel_bins, nfft, rate)
    energies = spec @ fb.T
    return np.log(np.maximum(energies, cfg.log_floor))


def dct_matrix(n):
    """Orthonormal DCT-II as an ``(n, n)`` matrix (rows are basis vectors)."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.sqrt(2.0 / n) * np.cos(np.pi * k * (2 * i + 1) / (2 * n))
    m[0] /= np.sqrt(2.0)
    return m


def mfcc_from_fbank(fbank, cfg):
    d = fbank.shape[1]
    if cfg.num_cepstra > d:
        raise BadConfig("num_cepstra exceeds number of mel bins")
    return fbank @ dct_matrix(d)[: cfg.num_cepstra].T


def fbank_from_mfcc(mfcc, num_mel_bins):
    """Invert the DCT (exact when all cepstra were kept)."""
    m = dct_matrix(num_mel_bins)[: mfcc.shape[1]]
    return mfcc @ m


def _delta(c, n):
    t = c.shape[0]
    denom = 2.0 * sum(k * k for k in range(1, n + 1))
    padded = np.concatenate([np.repeat(c[:1], n, axis=0), c, np.repeat(c[-1:], n, axis=0)])
    d = np.zeros_like(c)
    for k in range(1, n + 1):
        d += k * (padded[n + k : n + k + t] - padded[n - k : n - k + t])
    return d / denom


def append_deltas(feat, n=2, order=2):
    """Append delta (and delta-delta) coefficients; edges replicate frames."""
    if order not in (1, 2) or n < 1:
        raise BadConfig(f"bad delta config n={n} order={order}")
    c = feat.frames
    if c.shape[0] < 1:
        raise BadConfig("deltas need at least one frame")
    parts = [c]
    for _ in range(order):
        parts.append(_delta(parts[-1], n))
    return FeatureMatrix(np.concatenate(parts, axis=1), feat.frame_shift_ms, feat.kind, feat.utt_id)


def compute_features(audio, cfg, rng=None):
    """Full pipeline from an :class:`~hybridasr.audio.AudioBuffer` (no CMVN)."""
    rate = audio.sample_rate_hz
    frames = frame_and_window(audio.samples, rate, cfg, rng)
    if frames.shape[0] == 0:
        dim = cfg.num_mel_bins if cfg.kind == "fbank" else cfg.num_cepstra
        out = np.zeros((0, dim * (cfg.delta_order + 1)))
        return FeatureMatrix(out, cfg.shift_ms, cfg.kind, audio.source_id)
    fbank = mel_log_energies(power_spectrum(frames), cfg, rate)
    x = fbank if cfg.kind == "fbank" else mfcc_from_fbank(fbank, cfg)
    feat = FeatureMatrix(x, cfg.shift_ms, cfg.kind, audio.source_id)
    if cfg.delta_order:
        feat = append_deltas(feat, cfg.delta_window, cfg.delta_order)
    return feat


@dataclass
class CmvnStats:
    """Mergeable (count, sum, sum of squares) accumulator."""

    count: int = 0
    sum: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sumsq: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def add(self, frames):
        frames = np.asarray(frames, dtype=np.float64)
        if self.count == 0 and self.sum.size == 0:
            self.sum = np.zeros(frames.shape[1])
            self.sumsq = np.zeros(frames.shape[1])
        elif frames.shape[1] != self.sum.size:
            raise DimensionMismatch(f"stats dim {self.sum.size} vs frames dim {frames.shape[1]}")
        self.count += frames.shape[0]
        self.sum = self.sum + frames.sum(axis=0)
        self.sumsq = self.sumsq + (frames ** 2).sum(axis=0)
        return self

    def merge(self, other):
        if self.sum.size == 0:
            return CmvnStats(other.count, other.sum.copy(), other.sumsq.copy())
        if other.sum.size and other.sum.size != self.sum.size:
            raise DimensionMismatch("cannot merge stats of different dimension")
        if other.sum.size == 0:
            return CmvnStats(self.count, self.sum.copy(), self.sumsq.copy())
        return CmvnStats(self.count + other.count, self.sum + other.sum, self.sumsq + other.sumsq)

    @property
    def dim(self):
        return self.sum.size


def accumulate_cmvn(feats, utt2spk=None):
    """Per-speaker CMVN stats; without ``utt2spk`` each utterance is its own speaker."""
    stats = {}
    for utt, feat in feats.items():
        spk = utt2spk[utt] if utt2spk else utt
        stats.setdefault(spk, CmvnStats()).add(feat.frames)
    return stats


def apply_cmvn(feat, stats, std_floor=1e-5):
    x = feat.frames
    if stats.dim != x.shape[1]:
        raise DimensionMismatch(f"cmvn dim {stats.dim} vs feature dim {x.shape[1]}")
    if stats.count < 1:
        raise BadConfig("cmvn stats are empty")
    mean = stats.sum / stats.count
    y = x - mean
    if stats.count >= 2:
        var = stats.sumsq / stats.count - mean ** 2
        y = y / np.maximum(np.sqrt(np.maximum(var, 0.0)), std_floor)
    return FeatureMatrix(y, feat.frame_shift_ms, feat.kind, feat.utt_id)


def write_feature_archive(feats, path, kind="mfcc"):
    """Binary archive plus a text index ``<path>.idx`` of ``utt_id byte_offset``."""
    path = Path(path)
    index = []
    with open(path, "wb") as f:
        f.write(b"FEAT" + struct.pack("<IB", 1, KINDS[kind]))
        for utt in sorted(feats):
            x = np.ascontiguousarray(feats[utt].frames, dtype="<f4")
            index.append((utt, f.tell()))
            name = utt.encode("utf-8")
            f.write(struct.pack("<I", len(name)) + name)
            f.write(struct.pack("<II", x.shape[0], x.shape[1] if x.ndim == 2 else 0))
            f.write(x.tobytes())
    Path(str(path) + ".idx").write_text("".join(f"{u} {o}\n" for u, o in index))


def read_feature_archive(path, frame_shift_ms=10.0):
    data = Path(path).read_bytes()
    if data[:4] != b"FEAT":
        raise BadConfig(f"{path}: not a feature archive")
    _, kind_code = struct.unpack_from("<IB", data, 4)
    kind = {v: k for k, v in KINDS.items()}[kind_code]
    pos = 9
    feats = {}
    while pos < len(data):
        (n,) = struct.unpack_from("<I", data, pos)
        utt = data[pos + 4 : pos + 4 + n].decode("utf-8")
        pos += 4 + n
        t, d = struct.unpack_from("<II", data, pos)
        pos += 8
        x = np.frombuffer(data, dtype="<f4", count=t * d, offset=pos).reshape(t, d)
        pos += 4 * t * d
        feats[utt] = FeatureMatrix(x.astype(np.float64), frame_shift_ms, kind, utt)
    return feats


def write_cmvn_stats(stats, path):
    lines = []
    for spk in sorted(stats):
        s = stats[spk]
        vals = " ".join(repr(float(v)) for v in np.concatenate([s.sum, s.sumsq]))
        lines.append(f"{spk} {s.count} {s.dim} {vals}\n")
    Path(path).write_text("".join(lines))


def read_cmvn_stats(path):
    stats = {}
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        spk, count, dim = parts[0], int(parts[1]), int(parts[2])
        vals = np.array([float(v) for v in parts[3:]])
        if len(vals) != 2 * dim:
            raise DimensionMismatch(f"cmvn line for {spk} has {len(vals)} values, expected {2 * dim}")
        stats[spk] = CmvnStats(count, vals[:dim], vals[dim:])
    return stats
