"""Bulk delay estimation between the far-end reference and the microphone.

Lag convention: a positive lag means the echo in the microphone arrives
``lag`` samples after the far-end reference, so ``apply_delay(farend, lag)``
lines the two up.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SILENCE_DBFS = -60.0


class DegenerateShiftError(ValueError):
    pass


@dataclass(frozen=True)
class DelayEstimate:
    lag: int
    confidence: float


def _rms_dbfs(x: np.ndarray) -> float:
    rms = np.sqrt(np.mean(x**2)) if len(x) else 0.0
    return 20.0 * np.log10(rms) if rms > 0 else -np.inf


def estimate_delay(mic, farend, max_lag: int = 8000, block: int = 4096,
                   guard: int = 2) -> DelayEstimate:
    """GCC-PHAT over non-overlapping microphone blocks.

    Every block of ``block`` microphone samples is correlated against the
    far-end segment extended by ``max_lag`` on both sides; the raw cross
    spectra are summed over blocks before phase-transform weighting.
    Confidence is ``1 - second_peak / peak`` where the second peak is searched
    outside ``guard`` samples of the main one.
    """
    mic = np.asarray(getattr(mic, "samples", mic), dtype=np.float64)
    far = np.asarray(getattr(farend, "samples", farend), dtype=np.float64)
    if _rms_dbfs(far) < SILENCE_DBFS or _rms_dbfs(mic) < SILENCE_DBFS:
        return DelayEstimate(0, 0.0)
    max_lag = int(max_lag)
    seg_len = block + 2 * max_lag
    nfft = 1 << int(np.ceil(np.log2(seg_len)))
    far_pad = np.concatenate([np.zeros(max_lag), far, np.zeros(max_lag + block)])
    cross = np.zeros(nfft // 2 + 1, dtype=np.complex128)
    for start in range(0, max(len(mic) - block + 1, 1), block):
        m = mic[start:start + block]
        f = far_pad[start:start + seg_len]
        cross += np.conj(np.fft.rfft(m, nfft)) * np.fft.rfft(f, nfft)
    mag = np.abs(cross)
    phat = np.where(mag > 1e-12 * mag.max(initial=0.0), cross / np.maximum(mag, 1e-300), 0.0)
    corr = np.fft.irfft(phat, nfft)[:2 * max_lag + 1]
    # corr[k] peaks where far_pad[n + k] == mic[n], i.e. k = max_lag - lag
    k = int(np.argmax(corr))
    peak = corr[k]
    if peak <= 0:
        return DelayEstimate(0, 0.0)
    rest = corr.copy()
    rest[max(0, k - guard):k + guard + 1] = -np.inf
    second = max(float(rest.max(initial=-np.inf)), 0.0)
    confidence = float(np.clip(1.0 - second / peak, 0.0, 1.0))
    return DelayEstimate(max_lag - k, confidence)


def apply_delay(signal, lag: int) -> np.ndarray:
    """Shift by ``lag`` samples, zero-filling and preserving length."""
    x = np.asarray(getattr(signal, "samples", signal), dtype=np.float64)
    lag = int(lag)
    n = len(x)
    if abs(lag) >= n and n > 0:
        raise DegenerateShiftError(f"shift of {lag} samples on a {n}-sample signal")
    out = np.zeros_like(x)
    if lag >= 0:
        out[lag:] = x[:n - lag]
    else:
        out[:lag] = x[-lag:]
    return out
