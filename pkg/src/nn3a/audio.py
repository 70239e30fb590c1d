"""WAV I/O and the STFT/ISTFT pair used by every processing stage.

Frames are stored as a ``(num_frames, num_bins)`` complex array. Frame ``t``
covers original samples ``[t*hop - (win - hop), t*hop + hop)``: the signal is
pre-padded with ``win - hop`` zeros so that each frame ends on the newest hop
of audio, which is what a streaming front end sees.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 16000


class AudioFormatError(ValueError):
    pass


class ChannelError(AudioFormatError):
    pass


@dataclass
class TimeSignal:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ChannelError("TimeSignal must be mono")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("TimeSignal contains non-finite samples")

    def __len__(self):
        return len(self.samples)


def read_wav(path) -> TimeSignal:
    """Read a mono PCM16 or float32 WAV file into [-1, 1] amplitudes."""
    try:
        rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise
    except ValueError as exc:
        raise AudioFormatError(f"{path}: {exc}") from exc
    if data.ndim != 1:
        raise ChannelError(f"{path}: expected mono, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioFormatError(f"{path}: unsupported sample format {data.dtype}")
    return TimeSignal(samples, int(rate))


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0 - 2.0**-15)
    return np.round(clipped * 32768.0).astype(np.int16)


def write_wav(path, signal) -> None:
    """Write PCM16 with a saturating clamp."""
    if isinstance(signal, TimeSignal):
        samples, rate = signal.samples, signal.sample_rate
    else:
        samples, rate = signal, SAMPLE_RATE
    wavfile.write(str(path), int(rate), to_pcm16(samples))


def sqrt_hann(n: int) -> np.ndarray:
    """Periodic square-root Hann window."""
    k = np.arange(n)
    return np.sqrt(0.5 - 0.5 * np.cos(2.0 * np.pi * k / n))


@dataclass(frozen=True)
class StftConfig:
    win_len: int = 320
    hop_len: int = 160
    fft_len: int = 512
    window: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.window is None:
            object.__setattr__(self, "window", sqrt_hann(self.win_len))
        win = np.asarray(self.window, dtype=np.float64)
        object.__setattr__(self, "window", win)
        if self.hop_len * 2 != self.win_len:
            raise ValueError("hop_len must be win_len / 2")
        if self.fft_len < self.win_len:
            raise ValueError("fft_len must be >= win_len")
        if win.shape != (self.win_len,):
            raise ValueError("window length must equal win_len")
        overlap = cola_sum(win, self.hop_len)
        if np.max(np.abs(overlap - overlap.mean())) > 1e-10 or overlap.mean() <= 0:
            raise ValueError("window does not satisfy COLA for this hop")

    @property
    def num_bins(self) -> int:
        return self.fft_len // 2 + 1

    @property
    def pre_pad(self) -> int:
        return self.win_len - self.hop_len

    def num_frames(self, num_samples: int) -> int:
        return max(1, -(-num_samples // self.hop_len))

    def header(self) -> dict:
        return {"win_len": self.win_len, "hop_len": self.hop_len,
                "fft_len": self.fft_len, "window": "sqrt_hann"}


def cola_sum(window: np.ndarray, hop: int) -> np.ndarray:
    """Summed squared-window overlap over one hop period (analysis x synthesis)."""
    sq = window**2
    total = np.zeros(hop)
    for start in range(0, len(sq), hop):
        chunk = sq[start:start + hop]
        total[:len(chunk)] += chunk
    return total


def frame_signal(samples: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Cut the edge-padded signal into ``(num_frames, win_len)`` raw frames."""
    x = np.asarray(samples, dtype=np.float64)
    n_frames = cfg.num_frames(len(x))
    total = (n_frames - 1) * cfg.hop_len + cfg.win_len
    padded = np.zeros(total)
    padded[cfg.pre_pad:cfg.pre_pad + len(x)] = x
    idx = np.arange(cfg.win_len)[None, :] + cfg.hop_len * np.arange(n_frames)[:, None]
    return padded[idx]


def stft(signal, cfg: StftConfig | None = None) -> np.ndarray:
    cfg = cfg or StftConfig()
    x = signal.samples if isinstance(signal, TimeSignal) else signal
    frames = frame_signal(x, cfg) * cfg.window
    return np.fft.rfft(frames, n=cfg.fft_len, axis=-1)


def istft(frames: np.ndarray, cfg: StftConfig | None = None,
          length: int | None = None) -> np.ndarray:
    """Overlap-add resynthesis.

    Without ``length`` the raw overlap-add timeline (including the pre-pad) is
    returned, ``(T - 1) * hop + win`` samples long. With ``length`` the pre-pad
    is dropped and the result trimmed or zero-extended to ``length`` samples.
    """
    cfg = cfg or StftConfig()
    frames = np.asarray(frames)
    if frames.ndim != 2 or frames.shape[1] != cfg.num_bins:
        raise ValueError(f"expected frames of shape (T, {cfg.num_bins}), got {frames.shape}")
    n_frames = frames.shape[0]
    time_frames = np.fft.irfft(frames, n=cfg.fft_len, axis=-1)[:, :cfg.win_len] * cfg.window
    out = np.zeros((n_frames - 1) * cfg.hop_len + cfg.win_len if n_frames else 0)
    for t in range(n_frames):
        out[t * cfg.hop_len:t * cfg.hop_len + cfg.win_len] += time_frames[t]
    if length is None:
        return out
    out = out[cfg.pre_pad:cfg.pre_pad + length]
    if len(out) < length:
        out = np.concatenate([out, np.zeros(length - len(out))])
    return out
