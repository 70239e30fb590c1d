"""Inference path: delay compensation, linear filter, mask/VAD model, resynthesis, AGC."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .agc import AgcConfig, agc_process
from .audio import SAMPLE_RATE, StftConfig, istft, stft
from .delay import apply_delay, estimate_delay
from .model import ModelConfig, ModelError, StreamingModel, apply_mask, assemble_features
from .training import compute_psm, compute_vad_labels
from .wrls import WrlsConfig, wrls_init, wrls_step

DELAY_MODES = ("auto", "fixed", "off")


class InputError(ValueError):
    pass


@dataclass
class PipelineConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    wrls: WrlsConfig = field(default_factory=WrlsConfig)
    agc: AgcConfig = field(default_factory=AgcConfig)
    use_agc: bool = True
    bypass_model: bool = False
    delay_mode: str = "auto"
    delay_ms: float = 0.0
    max_delay_ms: float = 500.0
    min_delay_confidence: float = 0.5
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.delay_mode not in DELAY_MODES:
            raise ValueError(f"delay_mode must be one of {DELAY_MODES}")


@dataclass
class EnhanceResult:
    enhanced: np.ndarray
    vad: np.ndarray
    E: np.ndarray
    Y: np.ndarray
    D: np.ndarray
    X: np.ndarray
    delay_samples: int
    delay_confidence: float
    diagnostics: list = field(default_factory=list)
    gain: np.ndarray | None = None


class FrameProcessor:
    """One audio stream's worth of filter and model state."""

    def __init__(self, cfg: PipelineConfig, model_cfg: ModelConfig | None = None, params=None):
        self.cfg = cfg
        self.model_cfg = model_cfg
        self.linear = not (model_cfg is not None and model_cfg.end_to_end and not cfg.bypass_model)
        self.wrls = wrls_init(cfg.wrls, cfg.stft.num_bins)
        self.model = None
        if model_cfg is not None and not cfg.bypass_model:
            if model_cfg.num_bins != cfg.stft.num_bins:
                raise ModelError(f"model expects {model_cfg.num_bins} bins, STFT gives {cfg.stft.num_bins}")
            self.model = StreamingModel(model_cfg, params)

    def step(self, D, X, oracle_S=None, oracle_vad=1.0):
        """Returns ``(S_hat, vad_prob, E, Y)`` for one frame.

        Without a model the VAD output is 0, which keeps the AGC at unity gain.
        """
        if self.linear:
            E, Y = wrls_step(self.wrls, D, X)
        else:
            E, Y = D, np.zeros_like(D)
        if oracle_S is not None:
            mask, vad = compute_psm(oracle_S, E), oracle_vad
        elif self.model is not None:
            feats = assemble_features({"E": E, "Y": Y, "D": D, "X": X}, self.model_cfg.input_set)
            out = self.model.step(feats)
            mask, vad = out.mask, out.vad_prob
        else:
            return E.copy(), 0.0, E, Y
        return apply_mask(E, mask), vad, E, Y


def align_farend(mic, far, cfg: PipelineConfig):
    """Apply the configured delay policy; returns ``(far_aligned, lag, confidence)``."""
    if cfg.delay_mode == "off":
        return far, 0, 1.0
    if cfg.delay_mode == "fixed":
        lag, conf = int(round(cfg.delay_ms * cfg.sample_rate / 1000.0)), 1.0
    else:
        max_lag = int(cfg.max_delay_ms * cfg.sample_rate / 1000.0)
        est = estimate_delay(mic, far, max_lag=max_lag)
        lag, conf = est.lag, est.confidence
        # a negative lag is non-physical and a weak peak is untrustworthy
        if conf < cfg.min_delay_confidence or lag < 0:
            lag = 0
    if lag == 0:
        return far, 0, conf
    return apply_delay(far, lag), lag, conf


def enhance(mic, farend, cfg: PipelineConfig | None = None, model_cfg: ModelConfig | None = None,
            params=None, oracle_near=None, debug: bool = False) -> EnhanceResult:
    cfg = cfg or PipelineConfig()
    mic = np.asarray(getattr(mic, "samples", mic), dtype=np.float64)
    far = np.asarray(getattr(farend, "samples", farend), dtype=np.float64)
    if len(mic) == 0:
        raise InputError("microphone signal is empty")
    if len(far) < len(mic):
        far = np.concatenate([far, np.zeros(len(mic) - len(far))])
    far = far[:len(mic)]
    far, lag, conf = align_farend(mic, far, cfg)

    D = stft(mic, cfg.stft)
    X = stft(far, cfg.stft)
    S = labels = None
    if oracle_near is not None:
        near = np.asarray(getattr(oracle_near, "samples", oracle_near), dtype=np.float64)
        S = stft(near, cfg.stft)
        labels = compute_vad_labels(near, cfg.stft)
    proc = FrameProcessor(cfg, model_cfg, params)
    T = D.shape[0]
    S_hat = np.empty_like(D)
    E = np.empty_like(D)
    Y = np.empty_like(D)
    vad = np.empty(T)
    diagnostics = []
    mic_energy = err_energy = 0.0
    for t in range(T):
        S_hat[t], vad[t], E[t], Y[t] = proc.step(
            D[t], X[t], None if S is None else S[t], 1.0 if labels is None else labels[t])
        if debug:
            mic_energy += float(np.sum(np.abs(D[t]) ** 2))
            err_energy += float(np.sum(np.abs(E[t]) ** 2))
            g = proc.wrls.last_gamma
            diagnostics.append({
                "frame": t,
                "erle_so_far_db": 10.0 * np.log10((mic_energy + 1e-20) / (err_energy + 1e-20)),
                "tap_norm": float(np.mean(np.linalg.norm(proc.wrls.w, axis=1))),
                "gamma_mean": float(np.mean(g)), "gamma_min": float(np.min(g)),
                "gamma_max": float(np.max(g)), "vad": float(vad[t]),
            })
    out = istft(S_hat, cfg.stft, length=len(mic))
    gain = None
    if cfg.use_agc:
        out, gain = agc_process(out, vad, cfg.agc, hop=cfg.stft.hop_len,
                                sample_rate=cfg.sample_rate, return_gain=True)
    return EnhanceResult(out, vad, E, Y, D, X, lag, conf, diagnostics, gain)
