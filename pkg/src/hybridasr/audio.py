"""Reading, writing and normalizing PCM audio.

The pipeline consumes mono 16 kHz audio. Everything here works on
:class:`AudioBuffer`, whose samples are floats in ``[-1, 1]``; stereo
buffers carry a ``(num_samples, 2)`` array until :func:`to_mono` is applied.
"""
import struct
import wave
from dataclasses import dataclass, replace
from math import gcd
from pathlib import Path

import numpy as np

from .errors import BadConfig, NotWav, TruncatedFile, UnsupportedEncoding, UnsupportedRate

__all__ = [
    "AudioBuffer",
    "read_wav",
    "write_wav",
    "to_mono",
    "resample",
    "slice_and_pad",
    "read_wav_scp",
    "write_wav_scp",
]

SUPPORTED_SOURCE_RATES = (8000, 16000, 22050, 44100, 48000)
TARGET_RATES = (8000, 16000)
RESAMPLE_TAPS = 16
KAISER_BETA = 6.0


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate_hz: int
    source_id: str = ""

    @property
    def num_channels(self):
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    @property
    def num_samples(self):
        return self.samples.shape[0]

    @property
    def duration_seconds(self):
        return self.num_samples / self.sample_rate_hz


def _read_chunks(data):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8 : pos + 8 + size]
        yield cid, size, body
        pos += 8 + size + (size & 1)


def read_wav(path, source_id=None):
    """Decode a RIFF/WAVE PCM file (8 or 16 bit, 1 or 2 channels).

    Stereo files are returned as two-column buffers; sample rate is kept.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise NotWav(f"{path}: missing RIFF/WAVE magic")
    fmt = None
    pcm = None
    for cid, size, body in _read_chunks(data):
        if cid == b"fmt ":
            if len(body) < 16:
                raise TruncatedFile(f"{path}: short fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            if len(body) < size:
                raise TruncatedFile(f"{path}: data chunk declares {size} bytes, has {len(body)}")
            pcm = body
    if fmt is None:
        raise TruncatedFile(f"{path}: no fmt chunk")
    if pcm is None:
        raise TruncatedFile(f"{path}: no data chunk")
    tag, channels, rate, _, block_align, bits = fmt
    if tag != 1:
        raise UnsupportedEncoding(f"{path}: format tag {tag} is not PCM")
    if bits not in (8, 16) or channels not in (1, 2):
        raise UnsupportedEncoding(f"{path}: {bits}-bit, {channels} channels")
    usable = len(pcm) - len(pcm) % block_align
    if bits == 16:
        x = np.frombuffer(pcm[:usable], dtype="<i2").astype(np.float64) / 32768.0
    else:
        x = (np.frombuffer(pcm[:usable], dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    if channels == 2:
        x = x.reshape(-1, 2)
    if source_id is None:
        source_id = path.stem
    return AudioBuffer(x, int(rate), source_id)


def write_wav(audio, path):
    """Write 16-bit PCM. Samples are clipped to the representable range."""
    x = np.asarray(audio.samples, dtype=np.float64)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(audio.num_channels)
        w.setsampwidth(2)
        w.setframerate(audio.sample_rate_hz)
        w.writeframes(pcm.tobytes())


def to_mono(audio):
    if audio.samples.ndim == 1:
        return audio
    return replace(audio, samples=audio.samples.mean(axis=1))


def _kaiser(u, half_width, beta=KAISER_BETA):
    r = np.clip(1.0 - (u / half_width) ** 2, 0.0, None)
    w = np.i0(beta * np.sqrt(r)) / np.i0(beta)
    return np.where(np.abs(u) <= half_width, w, 0.0)


def _polyphase_table(up, down, taps=RESAMPLE_TAPS):
    # One row of taps per output phase; each row sums to one (unity DC gain).
    cutoff = min(1.0, up / down)
    half = taps // 2
    offsets = np.arange(-half + 1, half + 1)
    phases = np.arange(up)
    frac = (phases * down % up) / up
    u = frac[:, None] - offsets[None, :]
    h = cutoff * np.sinc(cutoff * u) * _kaiser(u, half)
    h /= h.sum(axis=1, keepdims=True)
    return offsets, h


def resample(audio, target_hz):
    """Windowed-sinc polyphase resampling to 8 or 16 kHz (mono input)."""
    if target_hz not in TARGET_RATES:
        raise UnsupportedRate(f"target rate {target_hz} not in {TARGET_RATES}")
    src = audio.sample_rate_hz
    if src not in SUPPORTED_SOURCE_RATES:
        raise UnsupportedRate(f"source rate {src} not in {SUPPORTED_SOURCE_RATES}")
    if src == target_hz:
        return audio
    x = to_mono(audio).samples
    g = gcd(src, target_hz)
    up, down = target_hz // g, src // g
    n_out = int(round(len(x) * up / down))
    offsets, table = _polyphase_table(up, down)
    n = np.arange(n_out)
    base = n * down // up
    phase = n % up
    pad = RESAMPLE_TAPS
    xp = np.concatenate([np.zeros(pad), x, np.zeros(pad)])
    idx = base[:, None] + offsets[None, :] + pad
    y = np.einsum("ij,ij->i", xp[idx], table[phase]) if n_out else np.zeros(0)
    return AudioBuffer(np.clip(y, -1.0, 1.0), target_hz, audio.source_id)


def slice_and_pad(audio, max_seconds=30.0, pad_seconds=0.5):
    """Split into slices no longer than ``max_seconds`` including padding.

    Each slice gets ``pad_seconds`` of zeros on both ends; slice ids append a
    four digit index to the source id.
    """
    if not (max_seconds > 2 * pad_seconds >= 0):
        raise BadConfig(f"need max_seconds > 2*pad_seconds >= 0, got {max_seconds}, {pad_seconds}")
    rate = audio.sample_rate_hz
    pad = int(round(pad_seconds * rate))
    payload = int(np.floor((max_seconds - 2 * pad_seconds) * rate + 1e-9))
    x = to_mono(audio).samples
    starts = list(range(0, len(x), payload)) or [0]
    zeros = np.zeros(pad)
    out = []
    for i, s in enumerate(starts):
        piece = np.concatenate([zeros, x[s : s + payload], zeros])
        out.append(AudioBuffer(piece, rate, f"{audio.source_id}-{i:04d}"))
    return out


def read_wav_scp(path):
    table = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        utt, _, wav = line.strip().partition(" ")
        table[utt] = wav.strip()
    return table


def write_wav_scp(table, path):
    Path(path).write_text("".join(f"{u} {p}\n" for u, p in sorted(table.items())))
