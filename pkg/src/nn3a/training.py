"""Training targets, losses, exact gradients and a small SGD trainer.

Losses are summed over frequency and averaged over frames, so the step size
does not depend on utterance length.
"""
from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .audio import StftConfig, frame_signal, stft
from .model import FROZEN, ModelConfig, assemble_features, forward_sequence, init_params
from .wrls import WrlsConfig, wrls_process

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7
PSM_EPS = 1e-10
VAD_GATE_DB = -40.0


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


def compute_psm(S: np.ndarray, E: np.ndarray) -> np.ndarray:
    """Phase-sensitive mask Real(S / E), clamped to [0, 1]."""
    raw = np.real(S * np.conj(E)) / (np.abs(E) ** 2 + PSM_EPS)
    return np.clip(raw, 0.0, 1.0)


def frame_rms(samples: np.ndarray, stft_cfg: StftConfig | None = None) -> np.ndarray:
    stft_cfg = stft_cfg or StftConfig()
    frames = frame_signal(np.asarray(getattr(samples, "samples", samples)), stft_cfg)
    return np.sqrt(np.mean(frames**2, axis=1))


def active_frames(samples, stft_cfg: StftConfig | None = None,
                  gate_db: float = VAD_GATE_DB) -> np.ndarray:
    """Frames whose RMS is within ``gate_db`` of the loudest frame."""
    rms = frame_rms(samples, stft_cfg)
    peak = rms.max(initial=0.0)
    if peak <= 0.0:
        return np.zeros(len(rms), dtype=bool)
    return rms > peak * 10.0 ** (gate_db / 20.0)


def compute_vad_labels(near_clean, stft_cfg: StftConfig | None = None) -> np.ndarray:
    return active_frames(near_clean, stft_cfg).astype(np.float64)


@dataclass(frozen=True)
class LossConfig:
    alpha: float | None = 1.1  # None means unweighted
    vad_loss_scale: float = 1.0

    def __post_init__(self):
        if self.alpha is not None and not self.alpha > 1.0:
            raise ConfigError(f"alpha must be > 1 when weighting is enabled, got {self.alpha}")
        if self.vad_loss_scale < 0:
            raise ConfigError("vad_loss_scale must be nonnegative")


UNWEIGHTED = LossConfig(alpha=None)


def loss_weights(psm: np.ndarray, alpha: float | None) -> np.ndarray:
    """Per-bin weights ``alpha - psm``; all ones when ``alpha`` is None."""
    psm = np.asarray(psm, dtype=np.float64)
    if alpha is None:
        return np.ones_like(psm)
    if not alpha > 1.0:
        raise ConfigError(f"alpha must be > 1, got {alpha}")
    return alpha - psm


def compute_loss(masks, vad_probs, psm, vad_labels, cfg: LossConfig = LossConfig()):
    """Return ``(total, mask_loss, vad_loss)``."""
    masks = np.atleast_2d(masks)
    psm = np.atleast_2d(psm)
    T = masks.shape[0]
    weights = loss_weights(psm, cfg.alpha)
    mask_loss = np.sum(weights * (masks - psm) ** 2) / T
    p = np.clip(np.atleast_1d(vad_probs), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.atleast_1d(vad_labels)
    vad_loss = np.sum(-y * np.log(p) - (1.0 - y) * np.log(1.0 - p)) / T
    return mask_loss + cfg.vad_loss_scale * vad_loss, mask_loss, vad_loss


def backward(features, params, model_cfg: ModelConfig, psm, vad_labels,
             loss_cfg: LossConfig = LossConfig()):
    """Exact reverse-mode gradients of the total loss.

    Returns ``(loss_tuple, grads)``; ``grads`` mirrors every trainable
    tensor of ``params`` (the frozen feature statistics are left out).
    """
    masks, vad, cache = forward_sequence(features, params, model_cfg, keep=True)
    losses = compute_loss(masks, vad, psm, vad_labels, loss_cfg)
    T = masks.shape[0]
    grads = OrderedDict((k, np.zeros_like(v)) for k, v in params.items() if k not in FROZEN)

    weights = loss_weights(psm, loss_cfg.alpha)
    d_mask_logit = (2.0 / T) * weights * (masks - psm) * masks * (1.0 - masks)
    inside = (vad > PROB_CLAMP) & (vad < 1.0 - PROB_CLAMP)
    d_vad_logit = np.where(inside, (vad - vad_labels) * loss_cfg.vad_loss_scale / T, 0.0)

    h = cache["h"]
    grads["mask.weight"] = d_mask_logit.T @ h
    grads["mask.bias"] = d_mask_logit.sum(axis=0)
    grads["vad.weight"] = d_vad_logit[None, :] @ h
    grads["vad.bias"] = np.array([d_vad_logit.sum()])
    dh = d_mask_logit @ params["mask.weight"] + np.outer(d_vad_logit, params["vad.weight"][0])

    for j in reversed(range(model_cfg.num_layers)):
        p = f"layer{j}."
        h_in, u, z, h_tilde = cache["layers"][j]
        memory = params[p + "memory"]
        d_tilde = dh.copy()
        d_memory = np.zeros_like(memory)
        for tau in range(min(memory.shape[0], T)):
            d_tilde[:T - tau] += memory[tau] * dh[tau:]
            d_memory[tau] = np.sum(dh[tau:] * h_tilde[:T - tau], axis=0)
        grads[p + "memory"] = d_memory
        grads[p + "out.weight"] = d_tilde.T @ z
        grads[p + "out.bias"] = d_tilde.sum(axis=0)
        du = (d_tilde @ params[p + "out.weight"]) * (u > 0)
        grads[p + "in.weight"] = du.T @ h_in
        grads[p + "in.bias"] = du.sum(axis=0)
        dh = dh + du @ params[p + "in.weight"]

    da0 = dh * (cache["a0"] > 0)
    grads["input.weight"] = da0.T @ cache["x"]
    grads["input.bias"] = da0.sum(axis=0)

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name}")
    return losses, grads


@dataclass
class TrainingExample:
    features: np.ndarray   # (T, feature_dim)
    psm: np.ndarray        # (T, F)
    vad_labels: np.ndarray  # (T,)
    name: str = ""


def prepare_example(mic, farend, near_clean, input_set: str,
                    wrls_cfg: WrlsConfig | None = None,
                    stft_cfg: StftConfig | None = None, name: str = "") -> TrainingExample:
    """Run the linear stage and build features and targets for one utterance."""
    stft_cfg = stft_cfg or StftConfig()
    S = stft(near_clean, stft_cfg)
    if input_set == "DX":
        D = stft(mic, stft_cfg)
        X = stft(farend, stft_cfg)
        signals = {"D": D, "X": X}
        masked = D
    else:
        lin = wrls_process(mic, farend, wrls_cfg, stft_cfg)
        signals = {"E": lin.E, "Y": lin.Y, "D": lin.D, "X": lin.X}
        masked = lin.E
    return TrainingExample(
        features=assemble_features(signals, input_set),
        psm=compute_psm(S, masked),
        vad_labels=compute_vad_labels(near_clean, stft_cfg),
        name=name,
    )


@dataclass(frozen=True)
class TrainConfig:
    step_size: float = 1e-2
    clip_norm: float = 5.0
    steps: int = 500
    batch_size: int = 4
    seed: int = 0
    divergence_threshold: float = 1e3


@dataclass
class TrainResult:
    params: "OrderedDict[str, np.ndarray]"
    loss_curve: list = field(default_factory=list)       # total loss per step
    mask_loss_curve: list = field(default_factory=list)
    vad_loss_curve: list = field(default_factory=list)


def feature_stats(examples, floor: float = 1e-3):
    """Per-dimension mean and standard deviation over all training frames."""
    allf = np.concatenate([ex.features for ex in examples])
    return allf.mean(axis=0), allf.std(axis=0) + floor


def clip_gradients(grads, max_norm: float) -> float:
    norm = float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def train_toy(examples, model_cfg: ModelConfig, loss_cfg: LossConfig = LossConfig(),
              train_cfg: TrainConfig = TrainConfig(), params=None) -> TrainResult:
    """Clipped mini-batch SGD. Deterministic for a given seed."""
    if not examples:
        raise TrainingError("no training examples")
    rng = np.random.default_rng(train_cfg.seed)
    if params is None:
        params = init_params(model_cfg, seed=train_cfg.seed)
        params["feature.mean"], params["feature.scale"] = feature_stats(examples)
    else:
        params = OrderedDict((k, v.copy()) for k, v in params.items())
    result = TrainResult(params)
    order = np.array([], dtype=int)
    for step in range(train_cfg.steps):
        if len(order) < train_cfg.batch_size:
            order = np.concatenate([order, rng.permutation(len(examples))])
        batch, order = order[:train_cfg.batch_size], order[train_cfg.batch_size:]

        total = np.zeros(3)
        acc = None
        for idx in batch:
            ex = examples[idx]
            losses, grads = backward(ex.features, params, model_cfg, ex.psm, ex.vad_labels, loss_cfg)
            total += losses
            if acc is None:
                acc = grads
            else:
                for k in acc:
                    acc[k] += grads[k]
        total /= len(batch)
        if not np.isfinite(total[0]) or total[0] > train_cfg.divergence_threshold:
            raise TrainingError(
                f"loss diverged at step {step} ({total[0]:.3g}); try a smaller step size")
        for k in acc:
            acc[k] /= len(batch)
        clip_gradients(acc, train_cfg.clip_norm)
        for k in acc:
            params[k] -= train_cfg.step_size * acc[k]
        result.loss_curve.append(float(total[0]))
        result.mask_loss_curve.append(float(total[1]))
        result.vad_loss_curve.append(float(total[2]))
        if step % 100 == 0:
            log.debug("step %d loss %.4f", step, total[0])
    return result


def gradient_check(example: TrainingExample, params, model_cfg: ModelConfig,
                   loss_cfg: LossConfig = LossConfig(), step: float = 1e-6,
                   max_entries: int | None = None, seed: int = 0) -> dict:
    """Compare analytic gradients with central differences.

    Returns, per tensor, ``|fd - analytic| / max(|fd|, |analytic|)`` with
    norms taken over the probed entries. ``max_entries`` limits how many
    coordinates are probed per tensor (chosen at random).
    """
    _, grads = backward(example.features, params, model_cfg, example.psm,
                        example.vad_labels, loss_cfg)

    def loss():
        masks, vad = forward_sequence(example.features, params, model_cfg)
        return compute_loss(masks, vad, example.psm, example.vad_labels, loss_cfg)[0]

    rng = np.random.default_rng(seed)
    errors = {}
    for name, g in grads.items():
        flat = params[name].reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        fd = np.empty(len(idx))
        for n, i in enumerate(idx):
            keep = flat[i]
            flat[i] = keep + step
            up = loss()
            flat[i] = keep - step
            down = loss()
            flat[i] = keep
            fd[n] = (up - down) / (2 * step)
        an = g.reshape(-1)[idx]
        scale = max(np.linalg.norm(fd), np.linalg.norm(an))
        errors[name] = float(np.linalg.norm(fd - an) / scale) if scale > 0 else 0.0
    return errors
