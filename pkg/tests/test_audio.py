import struct
import wave

import numpy as np
import pytest

from hybridasr.audio import AudioBuffer, read_wav, resample, slice_and_pad, to_mono, write_wav
from hybridasr.errors import NotWav, TruncatedFile, UnsupportedEncoding, UnsupportedRate


def _write_raw(path, pcm, rate=16000, channels=1, width=2):
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(width)
        w.setframerate(rate)
        w.writeframes(pcm)


def test_roundtrip_16bit(tmp_path, rng):
    x = np.round(rng.uniform(-0.9, 0.9, 1000) * 32768) / 32768
    write_wav(AudioBuffer(x, 16000, "a"), tmp_path / "a.wav")
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate_hz == 16000
    assert back.source_id == "a"
    np.testing.assert_array_equal(back.samples, x)


def test_8bit_and_stereo(tmp_path):
    _write_raw(tmp_path / "b.wav", bytes([128, 255, 0, 192]), width=1, channels=2)
    a = read_wav(tmp_path / "b.wav")
    assert a.num_channels == 2
    np.testing.assert_allclose(a.samples, [[0.0, 127 / 128], [-1.0, 0.5]])
    np.testing.assert_allclose(to_mono(a).samples, [127 / 256, -0.25])


def test_errors(tmp_path):
    (tmp_path / "x.wav").write_bytes(b"not a wav file at all")
    with pytest.raises(NotWav):
        read_wav(tmp_path / "x.wav")
    _write_raw(tmp_path / "t.wav", b"\x00\x01" * 100)
    data = (tmp_path / "t.wav").read_bytes()
    (tmp_path / "t.wav").write_bytes(data[:-50])
    with pytest.raises(TruncatedFile):
        read_wav(tmp_path / "t.wav")
    fmt = struct.pack("<HHIIHH", 3, 1, 16000, 64000, 4, 32)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", 8) + b"\x00" * 8
    (tmp_path / "f.wav").write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(UnsupportedEncoding):
        read_wav(tmp_path / "f.wav")


@pytest.mark.parametrize("src", [8000, 22050, 44100, 48000])
def test_resample_dc_and_length(src):
    a = AudioBuffer(np.full(src, 0.25), src)
    out = resample(a, 16000)
    assert out.num_samples == 16000
    # away from the zero-padded edges the DC gain is exactly one
    np.testing.assert_allclose(out.samples[50:-50], 0.25, atol=1e-12)


def test_resample_preserves_inband_sine():
    t = np.arange(48000) / 48000
    out = resample(AudioBuffer(0.5 * np.sin(2 * np.pi * 1000 * t), 48000), 16000)
    ref = 0.5 * np.sin(2 * np.pi * 1000 * np.arange(16000) / 16000)
    assert np.max(np.abs(out.samples[100:-100] - ref[100:-100])) < 5e-3


def test_resample_rejects_rates():
    with pytest.raises(UnsupportedRate):
        resample(AudioBuffer(np.zeros(10), 11025), 16000)
    with pytest.raises(UnsupportedRate):
        resample(AudioBuffer(np.zeros(10), 16000), 22050)


def test_slice_and_pad():
    a = AudioBuffer(np.ones(16000 * 70), 16000, "rec")
    parts = slice_and_pad(a, 30.0, 0.5)
    assert [p.source_id for p in parts] == ["rec-0000", "rec-0001", "rec-0002"]
    assert all(p.duration_seconds <= 30.0 for p in parts)
    assert sum(p.num_samples - 16000 for p in parts) == 16000 * 70
    assert np.all(parts[0].samples[:8000] == 0) and np.all(parts[0].samples[-8000:] == 0)
