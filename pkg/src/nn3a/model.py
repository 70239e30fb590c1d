"""DFSMN multi-task model: residual echo / noise mask plus near-end VAD.

Two evaluation paths exist on purpose. :class:`StreamingModel` runs one frame
at a time with ring buffers (what the real-time pipeline uses) and
:func:`forward_sequence` evaluates a whole utterance at once and keeps the
activations needed by :mod:`nn3a.training`. Both must agree to ~1e-10.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

SIGNAL_ORDER = "EYDX"
INPUT_SETS = ("EX", "EY", "EYD", "EYDX", "DX")
LOG_FLOOR = 1e-7
FEATURE_VERSION = "logmag-std-v1"
# per-dimension standardization statistics; stored with the weights, never trained
FROZEN = ("feature.mean", "feature.scale")


class ModelError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_set: str = "EYD"
    num_layers: int = 3
    hidden_dim: int = 64
    projection_dim: int = 16
    memory_order: int = 8
    num_bins: int = 257

    def __post_init__(self):
        if self.input_set not in INPUT_SETS:
            raise ModelError(f"input_set must be one of {INPUT_SETS}, got {self.input_set!r}")
        if self.num_layers < 1 or self.memory_order < 0:
            raise ModelError("need num_layers >= 1 and memory_order >= 0")
        if min(self.hidden_dim, self.projection_dim, self.num_bins) < 1:
            raise ModelError("dimensions must be positive")

    @property
    def end_to_end(self) -> bool:
        """DX mode: no linear stage, mask is applied to the microphone spectrum."""
        return self.input_set == "DX"

    @property
    def feature_dim(self) -> int:
        return len(self.input_set) * self.num_bins


def production_config(input_set: str = "EX") -> ModelConfig:
    return ModelConfig(input_set=input_set, num_layers=12, hidden_dim=512,
                       projection_dim=512, memory_order=20, num_bins=257)


def param_shapes(cfg: ModelConfig) -> "OrderedDict[str, tuple]":
    H, P = cfg.hidden_dim, cfg.projection_dim
    shapes = OrderedDict()
    shapes["feature.mean"] = (cfg.feature_dim,)
    shapes["feature.scale"] = (cfg.feature_dim,)
    shapes["input.weight"] = (H, cfg.feature_dim)
    shapes["input.bias"] = (H,)
    for j in range(cfg.num_layers):
        shapes[f"layer{j}.in.weight"] = (P, H)
        shapes[f"layer{j}.in.bias"] = (P,)
        shapes[f"layer{j}.out.weight"] = (H, P)
        shapes[f"layer{j}.out.bias"] = (H,)
        shapes[f"layer{j}.memory"] = (cfg.memory_order + 1, H)
    shapes["mask.weight"] = (cfg.num_bins, H)
    shapes["mask.bias"] = (cfg.num_bins,)
    shapes["vad.weight"] = (1, H)
    shapes["vad.bias"] = (1,)
    return shapes


def param_count(cfg: ModelConfig, trainable_only: bool = True) -> int:
    return int(sum(np.prod(s) for k, s in param_shapes(cfg).items()
                   if not (trainable_only and k in FROZEN)))


def init_params(cfg: ModelConfig, seed: int = 0) -> "OrderedDict[str, np.ndarray]":
    """He-style init for weights, zero biases, small memory coefficients."""
    rng = np.random.default_rng(seed)
    params = OrderedDict()
    for name, shape in param_shapes(cfg).items():
        if name == "feature.scale":
            params[name] = np.ones(shape)
        elif name.endswith("bias") or name == "feature.mean":
            params[name] = np.zeros(shape)
        elif name.endswith("memory"):
            params[name] = rng.normal(0.0, 0.1 / np.sqrt(shape[0]), shape)
        else:
            fan_in = shape[1]
            params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
    params["input.weight"] *= 0.1  # log-magnitude inputs are large
    return params


def zero_params(cfg: ModelConfig) -> "OrderedDict[str, np.ndarray]":
    """All-zero weights with identity feature standardization."""
    params = OrderedDict((k, np.zeros(s)) for k, s in param_shapes(cfg).items())
    params["feature.scale"] = np.ones(cfg.feature_dim)
    return params


def normalize_features(features: np.ndarray, params) -> np.ndarray:
    return (features - params["feature.mean"]) / params["feature.scale"]


def check_params(cfg: ModelConfig, params) -> None:
    for name, shape in param_shapes(cfg).items():
        if name not in params:
            raise ModelError(f"missing tensor {name}")
        if tuple(params[name].shape) != shape:
            raise ModelError(f"tensor {name} has shape {params[name].shape}, expected {shape}")


def assemble_features(signals: dict, input_set: str) -> np.ndarray:
    """Concatenate log-magnitudes of the configured spectra in E, Y, D, X order.

    ``signals`` maps letters to complex arrays of shape ``(F,)`` or ``(T, F)``.
    """
    parts = []
    for name in SIGNAL_ORDER:
        if name not in input_set:
            continue
        if name not in signals or signals[name] is None:
            raise ModelError(f"input set {input_set} needs signal {name}")
        parts.append(np.log(np.abs(signals[name]) + LOG_FLOOR))
    return np.concatenate(parts, axis=-1)


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class LayerState:
    """Ring buffer of the last ``memory_order + 1`` projected activations."""

    def __init__(self, memory_order: int, dim: int):
        self.buf = np.zeros((memory_order + 1, dim))
        self.pos = 0  # slot holding the newest entry

    def push(self, v: np.ndarray) -> None:
        self.pos = (self.pos + 1) % len(self.buf)
        self.buf[self.pos] = v

    def history(self) -> np.ndarray:
        """Rows ordered by lag: row tau is the entry pushed tau frames ago."""
        order = (self.pos - np.arange(len(self.buf))) % len(self.buf)
        return self.buf[order]


def dfsmn_layer(h_prev: np.ndarray, state: LayerState, params, j: int) -> np.ndarray:
    p = f"layer{j}."
    memory = params[p + "memory"]
    if memory.shape != state.buf.shape or h_prev.shape != (memory.shape[1],):
        raise ModelError(f"layer {j}: shape mismatch")
    inner = relu(params[p + "in.weight"] @ h_prev + params[p + "in.bias"])
    h_tilde = params[p + "out.weight"] @ inner + params[p + "out.bias"]
    state.push(h_tilde)
    return h_prev + h_tilde + np.sum(memory * state.history(), axis=0)


@dataclass
class MaskVadOutput:
    mask: np.ndarray
    vad_prob: float


class StreamingModel:
    """Frame-by-frame inference with per-stream layer state."""

    def __init__(self, cfg: ModelConfig, params):
        check_params(cfg, params)
        self.cfg = cfg
        self.params = params
        self.reset()

    def reset(self):
        self.states = [LayerState(self.cfg.memory_order, self.cfg.hidden_dim)
                       for _ in range(self.cfg.num_layers)]

    def step(self, features: np.ndarray) -> MaskVadOutput:
        p = self.params
        features = np.asarray(features, dtype=np.float64)
        if features.shape != (self.cfg.feature_dim,):
            raise ModelError(f"feature dim {features.shape} != ({self.cfg.feature_dim},)")
        h = relu(p["input.weight"] @ normalize_features(features, p) + p["input.bias"])
        for j, state in enumerate(self.states):
            h = dfsmn_layer(h, state, p, j)
            if not np.all(np.isfinite(h)):
                raise NumericError(f"non-finite activation in layer {j}")
        mask = sigmoid(p["mask.weight"] @ h + p["mask.bias"])
        vad = sigmoid(p["vad.weight"] @ h + p["vad.bias"])[0]
        return MaskVadOutput(mask, float(vad))


def memory_conv(h_tilde: np.ndarray, memory: np.ndarray) -> np.ndarray:
    """out[t] = sum_tau memory[tau] * h_tilde[t - tau], zeros before the start."""
    T = h_tilde.shape[0]
    out = np.zeros_like(h_tilde)
    for tau in range(min(memory.shape[0], T)):
        out[tau:] += memory[tau] * h_tilde[:T - tau]
    return out


def forward_sequence(features: np.ndarray, params, cfg: ModelConfig, keep=False):
    """Whole-utterance forward pass. Returns ``(masks, vad_probs[, cache])``."""
    check_params(cfg, params)
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.feature_dim:
        raise ModelError(f"features must be (T, {cfg.feature_dim}), got {x.shape}")
    x = normalize_features(x, params)
    cache = {"x": x}
    a0 = x @ params["input.weight"].T + params["input.bias"]
    h = relu(a0)
    cache["a0"] = a0
    layers = []
    for j in range(cfg.num_layers):
        p = f"layer{j}."
        u = h @ params[p + "in.weight"].T + params[p + "in.bias"]
        z = relu(u)
        h_tilde = z @ params[p + "out.weight"].T + params[p + "out.bias"]
        h_next = h + h_tilde + memory_conv(h_tilde, params[p + "memory"])
        if not np.all(np.isfinite(h_next)):
            raise NumericError(f"non-finite activation in layer {j}")
        layers.append((h, u, z, h_tilde))
        h = h_next
    cache["layers"] = layers
    cache["h"] = h
    masks = sigmoid(h @ params["mask.weight"].T + params["mask.bias"])
    vad = sigmoid(h @ params["vad.weight"].T + params["vad.bias"])[:, 0]
    cache["masks"], cache["vad"] = masks, vad
    if keep:
        return masks, vad, cache
    return masks, vad


def apply_mask(frame: np.ndarray, mask: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    mask = np.asarray(mask, dtype=np.float64)
    if frame.shape != mask.shape:
        raise ModelError(f"mask shape {mask.shape} != frame shape {frame.shape}")
    return frame * mask
