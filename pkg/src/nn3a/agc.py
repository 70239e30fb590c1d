"""VAD-gated, amplify-only automatic gain control.

A peak detector tracks the speech level only while the model reports near-end
speech; the gain toward the target peak is held otherwise, so noise-only
stretches are never pumped up.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import SAMPLE_RATE

FULL_SCALE_MAX = 1.0 - 2.0**-15


@dataclass(frozen=True)
class AgcConfig:
    target_peak_dbfs: float = -6.0
    max_gain_db: float = 18.0
    attack_ms: float = 10.0
    release_ms: float = 200.0       # gain slew
    peak_release_ms: float = 3000.0  # peak tracker decay
    vad_gate: float = 0.5

    def __post_init__(self):
        if self.max_gain_db < 0:
            raise ValueError("max_gain_db must be >= 0")
        if not 0.0 < self.vad_gate < 1.0:
            raise ValueError("vad_gate must lie in (0, 1)")
        if min(self.attack_ms, self.release_ms, self.peak_release_ms) <= 0:
            raise ValueError("time constants must be positive")

    @property
    def target_peak(self) -> float:
        return 10.0 ** (self.target_peak_dbfs / 20.0)

    @property
    def max_gain(self) -> float:
        return 10.0 ** (self.max_gain_db / 20.0)


@dataclass
class AgcState:
    tracked_peak: float = 0.0
    current_gain: float = 1.0
    desired_gain: float = 1.0


def _coef(time_ms: float, block: int, rate: int) -> float:
    return float(np.exp(-block / (rate * time_ms * 1e-3)))


def agc_step(state: AgcState, samples: np.ndarray, vad_prob: float,
             cfg: AgcConfig = AgcConfig(), sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Advance the controller by one hop-sized block and return the gained samples."""
    samples = np.asarray(samples, dtype=np.float64)
    n = len(samples)
    if n == 0:
        return samples.copy()
    release = _coef(cfg.release_ms, n, sample_rate)
    if vad_prob >= cfg.vad_gate:
        peak = float(np.max(np.abs(samples)))
        if peak > state.tracked_peak:
            a = _coef(cfg.attack_ms, n, sample_rate)
        else:
            a = _coef(cfg.peak_release_ms, n, sample_rate)
        state.tracked_peak = a * state.tracked_peak + (1.0 - a) * peak
        if state.tracked_peak > 0.0:
            desired = cfg.target_peak / state.tracked_peak
        else:
            desired = cfg.max_gain
        state.desired_gain = float(np.clip(desired, 1.0, cfg.max_gain))

    previous = state.current_gain
    state.current_gain = state.desired_gain + (previous - state.desired_gain) * release
    ramp = previous + (state.current_gain - previous) * (np.arange(1, n + 1) / n)
    return np.clip(samples * ramp, -1.0, FULL_SCALE_MAX)


def agc_process(signal: np.ndarray, vad_probs, cfg: AgcConfig = AgcConfig(),
                hop: int = 160, sample_rate: int = SAMPLE_RATE, return_gain: bool = False):
    """Apply :func:`agc_step` block by block; block ``k`` uses ``vad_probs[k]``."""
    signal = np.asarray(signal, dtype=np.float64)
    vad_probs = np.asarray(vad_probs, dtype=np.float64)
    state = AgcState()
    out = np.empty_like(signal)
    gains = np.empty_like(signal)
    for k, start in enumerate(range(0, len(signal), hop)):
        block = signal[start:start + hop]
        prev = state.current_gain
        vad = vad_probs[min(k, len(vad_probs) - 1)] if len(vad_probs) else 0.0
        out[start:start + hop] = agc_step(state, block, vad, cfg, sample_rate)
        m = len(block)
        gains[start:start + hop] = prev + (state.current_gain - prev) * (np.arange(1, m + 1) / m)
    if return_gain:
        return out, gains
    return out
