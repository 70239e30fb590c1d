import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from nn3a.audio import (AudioFormatError, ChannelError, StftConfig, cola_sum, frame_signal,
                        istft, read_wav, sqrt_hann, stft, write_wav)

CFG = StftConfig()


def test_default_geometry():
    assert (CFG.win_len, CFG.hop_len, CFG.fft_len, CFG.num_bins) == (320, 160, 512, 257)


def test_cola_constant():
    overlap = cola_sum(CFG.window, CFG.hop_len)
    assert np.max(np.abs(overlap - 1.0)) < 1e-10


def test_non_cola_window_rejected():
    with pytest.raises(ValueError):
        StftConfig(window=np.hanning(320))


def test_read_pcm16_scaling(tmp_path):
    path = tmp_path / "x.wav"
    wavfile.write(path, 16000, np.array([16384, -32768, 0] * 100, dtype=np.int16))
    sig = read_wav(path)
    assert sig.sample_rate == 16000
    assert abs(sig.samples[0] - 0.5) <= 1 / 32768
    assert sig.samples[1] == -1.0


def test_read_one_second(tmp_path):
    path = tmp_path / "x.wav"
    wavfile.write(path, 16000, np.zeros(16000, dtype=np.float32))
    assert len(read_wav(path)) == 16000


def test_read_stereo_rejected(tmp_path):
    path = tmp_path / "x.wav"
    wavfile.write(path, 16000, np.zeros((100, 2), dtype=np.int16))
    with pytest.raises(ChannelError):
        read_wav(path)


def test_read_unsupported_encoding(tmp_path):
    path = tmp_path / "x.wav"
    wavfile.write(path, 16000, np.zeros(100, dtype=np.uint8))
    with pytest.raises(AudioFormatError):
        read_wav(path)


def test_write_saturates(tmp_path):
    path = tmp_path / "x.wav"
    write_wav(path, np.array([2.0, -2.0, 0.25]))
    _, data = wavfile.read(path)
    assert data.tolist() == [32767, -32768, 8192]


def test_bin_centered_cosine_matches_closed_form():
    k0 = 64
    n = np.arange(16000)
    x = np.cos(2 * np.pi * k0 * n / CFG.fft_len)
    X = stft(x, CFG)
    t = 10
    # closed form: windowed cosine = half the window spectrum shifted to +-k0
    start = t * CFG.hop_len - CFG.pre_pad
    m = np.arange(CFG.win_len)
    k = np.arange(CFG.num_bins)[:, None]
    phase = 2 * np.pi * k0 * (start + m) / CFG.fft_len
    kernel = np.exp(-2j * np.pi * k * m / CFG.fft_len)
    expected = (CFG.window * np.cos(phase) * kernel).sum(axis=1)
    np.testing.assert_allclose(X[t], expected, atol=1e-9)
    energy = np.abs(X[t]) ** 2
    assert np.argmax(energy) == k0
    assert energy[k0 - 3:k0 + 4].sum() / energy.sum() > 0.99


def test_zero_signal():
    assert not np.any(stft(np.zeros(1000), CFG))
    assert not np.any(istft(np.zeros((7, 257), complex), CFG, length=1000))


def test_impulse_frame_zero_matches_direct_dft():
    x = np.zeros(800)
    x[0] = 1.0
    X = stft(x, CFG)
    frame = np.zeros(CFG.win_len)
    frame[CFG.pre_pad] = CFG.window[CFG.pre_pad]
    k = np.arange(CFG.num_bins)[:, None]
    m = np.arange(CFG.win_len)
    direct = (frame * np.exp(-2j * np.pi * k * m / CFG.fft_len)).sum(axis=1)
    np.testing.assert_allclose(X[0], direct, atol=1e-12)


def test_frame_count_and_alignment():
    x = np.arange(1, 1001, dtype=float)
    frames = frame_signal(x, CFG)
    assert frames.shape == (7, 320)
    # frame t ends on original sample t*hop + hop - 1
    assert frames[2, -1] == x[2 * 160 + 159]
    assert np.all(frames[0, :160] == 0)


def test_single_frame_is_doubly_windowed(rng):
    raw = rng.standard_normal(CFG.win_len)
    frame = np.fft.rfft(raw * CFG.window, CFG.fft_len)
    out = istft(frame[None, :], CFG)
    np.testing.assert_allclose(out, raw * CFG.window**2, atol=1e-12)


def test_inconsistent_frames_rejected():
    with pytest.raises(ValueError):
        istft(np.zeros((3, 100), complex), CFG)


def test_round_trip_white_noise(rng):
    x = rng.standard_normal(48000)
    y = istft(stft(x, CFG), CFG, length=len(x))
    interior = slice(0, len(x) - CFG.hop_len)
    err = np.linalg.norm(y[interior] - x[interior]) / np.linalg.norm(x[interior])
    assert err < 1e-6


def test_parseval_per_frame(rng):
    x = rng.standard_normal(3200)
    X = stft(x, CFG)
    frames = frame_signal(x, CFG) * CFG.window
    spec_energy = (np.abs(X[:, 0]) ** 2 + np.abs(X[:, -1]) ** 2
                   + 2 * np.sum(np.abs(X[:, 1:-1]) ** 2, axis=1)) / CFG.fft_len
    np.testing.assert_allclose(spec_energy, np.sum(frames**2, axis=1), rtol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=1, max_value=3000), st.integers(0, 2**32 - 1))
def test_round_trip_property(n, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, n)
    y = istft(stft(x, CFG), CFG, length=n)
    interior = slice(0, max(0, n - CFG.hop_len))
    if interior.stop > 0:
        err = np.linalg.norm(y[interior] - x[interior]) / max(np.linalg.norm(x[interior]), 1e-300)
        assert err < 1e-6
