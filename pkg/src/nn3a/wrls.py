"""Per-bin weighted recursive least squares echo canceller.

Each frequency bin runs an independent ``L``-tap filter over the far-end STFT
history. The weight ``gamma = |E|^(beta - 2)`` comes from a generalized
Gaussian source prior on the near-end signal; it shrinks the influence of
frames with a large error (near-end speech) so the filter keeps adapting
through double talk without a separate detector.

Order of operations in :func:`wrls_step` is prediction-then-correction: the
echo estimate of frame ``t`` is produced with taps solved at frame ``t - 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import StftConfig, stft


@dataclass(frozen=True)
class WrlsConfig:
    taps: int = 5
    beta: float = 0.2
    lam: float = 0.995
    eps: float = 1e-3
    gamma_floor: float = 1e-3

    def __post_init__(self):
        if self.taps < 1:
            raise ValueError("taps must be >= 1")
        if not 0.0 <= self.beta <= 2.0:
            raise ValueError("beta must lie in [0, 2]")
        if not 0.0 < self.lam <= 1.0:
            raise ValueError("lambda must lie in (0, 1]")
        if self.eps <= 0 or self.gamma_floor <= 0:
            raise ValueError("eps and gamma_floor must be positive")


@dataclass
class WrlsState:
    w: np.ndarray       # (F, L) taps
    xline: np.ndarray   # (F, L) far-end history, newest first
    R: np.ndarray       # (F, L, L) weighted covariance
    r: np.ndarray       # (F, L) weighted cross-correlation
    cfg: WrlsConfig
    resets: np.ndarray = field(default=None)  # per-bin count of solver resets
    last_gamma: np.ndarray = field(default=None)

    @property
    def num_bins(self) -> int:
        return self.w.shape[0]


def wrls_init(cfg: WrlsConfig, num_bins: int) -> WrlsState:
    L = cfg.taps
    eye = np.broadcast_to(np.eye(L, dtype=np.complex128), (num_bins, L, L))
    return WrlsState(
        w=np.zeros((num_bins, L), dtype=np.complex128),
        xline=np.zeros((num_bins, L), dtype=np.complex128),
        R=cfg.eps * eye.copy(),
        r=np.zeros((num_bins, L), dtype=np.complex128),
        cfg=cfg,
        resets=np.zeros(num_bins, dtype=np.int64),
        last_gamma=np.ones(num_bins),
    )


def source_weight(err_mag: np.ndarray, beta: float, floor: float) -> np.ndarray:
    """gamma = max(|E|, floor) ** (beta - 2)."""
    return np.maximum(err_mag, floor) ** (beta - 2.0)


def wrls_step(state: WrlsState, D: np.ndarray, X: np.ndarray):
    """Filter one frame and update the taps. Returns ``(E, Y)``."""
    cfg = state.cfg
    D = np.asarray(D, dtype=np.complex128)
    X = np.asarray(X, dtype=np.complex128)
    if D.shape != (state.num_bins,) or X.shape != (state.num_bins,):
        raise ValueError("frame size does not match filter state")

    state.xline[:, 1:] = state.xline[:, :-1]
    state.xline[:, 0] = X
    x = state.xline
    Y = np.einsum("fl,fl->f", state.w.conj(), x)
    E = D - Y

    gamma = source_weight(np.abs(E), cfg.beta, cfg.gamma_floor)
    state.last_gamma = gamma
    outer = x[:, :, None] * x.conj()[:, None, :]
    state.R *= cfg.lam
    state.R += gamma[:, None, None] * outer
    state.r *= cfg.lam
    state.r += gamma[:, None] * x * D.conj()[:, None]

    ridge = cfg.eps * np.eye(cfg.taps)
    w = np.linalg.solve(state.R + ridge, state.r[:, :, None])[:, :, 0]
    bad = ~np.all(np.isfinite(w), axis=1)
    if np.any(bad):
        _reset_bins(state, bad)
        w[bad] = 0.0
    state.w = w
    return E, Y


def _reset_bins(state: WrlsState, bad: np.ndarray) -> None:
    L = state.cfg.taps
    state.R[bad] = state.cfg.eps * np.eye(L)
    state.r[bad] = 0.0
    state.xline[bad] = 0.0
    state.resets[bad] += 1


@dataclass
class LinearOutput:
    E: np.ndarray
    Y: np.ndarray
    D: np.ndarray
    X: np.ndarray
    state: WrlsState


def wrls_process(mic, farend, cfg: WrlsConfig | None = None,
                 stft_cfg: StftConfig | None = None) -> LinearOutput:
    """Run the linear stage over whole signals, returning all four spectral streams."""
    cfg = cfg or WrlsConfig()
    stft_cfg = stft_cfg or StftConfig()
    mic = np.asarray(getattr(mic, "samples", mic), dtype=np.float64)
    farend = np.asarray(getattr(farend, "samples", farend), dtype=np.float64)
    n = max(len(mic), len(farend))
    mic = np.pad(mic, (0, n - len(mic)))
    farend = np.pad(farend, (0, n - len(farend)))
    D = stft(mic, stft_cfg)
    X = stft(farend, stft_cfg)
    state = wrls_init(cfg, stft_cfg.num_bins)
    E = np.empty_like(D)
    Y = np.empty_like(D)
    for t in range(D.shape[0]):
        E[t], Y[t] = wrls_step(state, D[t], X[t])
    return LinearOutput(E, Y, D, X, state)
