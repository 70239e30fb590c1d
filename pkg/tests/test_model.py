import numpy as np
import pytest

from conftest import random_params
from nn3a.model import (LOG_FLOOR, LayerState, ModelConfig, ModelError, NumericError,
                        StreamingModel, apply_mask, assemble_features, dfsmn_layer,
                        forward_sequence, param_count, production_config, zero_params)


def reference_layer(h_prev_seq, p, j):
    """Direct evaluation of one DFSMN layer over a sequence with explicit loops."""
    W1, b1 = p[f"layer{j}.in.weight"], p[f"layer{j}.in.bias"]
    W2, b2 = p[f"layer{j}.out.weight"], p[f"layer{j}.out.bias"]
    m = p[f"layer{j}.memory"]
    T, H = h_prev_seq.shape
    tilde = np.zeros((T, H))
    for t in range(T):
        inner = [max(0.0, sum(W1[a, b] * h_prev_seq[t, b] for b in range(H)) + b1[a])
                 for a in range(W1.shape[0])]
        for c in range(H):
            tilde[t, c] = sum(W2[c, a] * inner[a] for a in range(len(inner))) + b2[c]
    out = np.zeros((T, H))
    for t in range(T):
        for c in range(H):
            acc = h_prev_seq[t, c] + tilde[t, c]
            for tau in range(m.shape[0]):
                if t - tau >= 0:
                    acc += m[tau, c] * tilde[t - tau, c]
            out[t, c] = acc
    return out


def test_feature_dims():
    F = 257
    E = np.ones(F, complex)
    assert assemble_features({"E": E, "X": E}, "EX").shape == (514,)
    sig = {k: E for k in "EYDX"}
    assert assemble_features(sig, "EYDX").shape == (1028,)
    assert assemble_features(sig, "EYD").shape == (771,)


def test_feature_order_and_zero_spectrum():
    F = 3
    feats = assemble_features({"X": np.full(F, 2.0), "E": np.zeros(F), "Y": np.ones(F)}, "EYX")
    np.testing.assert_allclose(feats[:3], np.log(LOG_FLOOR))
    np.testing.assert_allclose(feats[3:6], np.log(1 + LOG_FLOOR))
    np.testing.assert_allclose(feats[6:], np.log(2 + LOG_FLOOR))


def test_missing_signal():
    with pytest.raises(ModelError):
        assemble_features({"E": np.ones(3)}, "EY")


def test_zero_layer_is_identity(tiny_cfg, rng):
    p = zero_params(tiny_cfg)
    h = rng.standard_normal(tiny_cfg.hidden_dim)
    state = LayerState(tiny_cfg.memory_order, tiny_cfg.hidden_dim)
    np.testing.assert_array_equal(dfsmn_layer(h, state, p, 0), h)


def test_order_zero_without_memory(rng):
    cfg = ModelConfig(input_set="EX", num_layers=1, hidden_dim=4, projection_dim=3,
                      memory_order=0, num_bins=2)
    p = random_params(cfg)
    p["layer0.memory"][:] = 0.0
    h = rng.standard_normal(4)
    out = dfsmn_layer(h, LayerState(0, 4), p, 0)
    inner = np.maximum(p["layer0.in.weight"] @ h + p["layer0.in.bias"], 0)
    tilde = p["layer0.out.weight"] @ inner + p["layer0.out.bias"]
    np.testing.assert_allclose(out, h + tilde, atol=1e-15)


def test_layer_matches_direct_summation(rng):
    cfg = ModelConfig(input_set="EX", num_layers=1, hidden_dim=4, projection_dim=4,
                      memory_order=2, num_bins=2)
    p = random_params(cfg, seed=3)
    p["layer0.memory"] = rng.standard_normal((3, 4))
    seq = rng.standard_normal((7, 4))
    state = LayerState(2, 4)
    streamed = np.array([dfsmn_layer(h, state, p, 0) for h in seq])
    np.testing.assert_allclose(streamed, reference_layer(seq, p, 0), atol=1e-12)


def test_zero_model_outputs_half(tiny_cfg, rng):
    m = StreamingModel(tiny_cfg, zero_params(tiny_cfg))
    out = m.step(rng.standard_normal(tiny_cfg.feature_dim))
    np.testing.assert_array_equal(out.mask, 0.5)
    assert out.vad_prob == 0.5


def test_causality(tiny_cfg, rng):
    p = random_params(tiny_cfg)
    x = rng.standard_normal((10, tiny_cfg.feature_dim))
    y = x.copy()
    y[6:] += rng.standard_normal((4, tiny_cfg.feature_dim))
    mx, vx = forward_sequence(x, p, tiny_cfg)
    my, vy = forward_sequence(y, p, tiny_cfg)
    np.testing.assert_array_equal(mx[:6], my[:6])
    np.testing.assert_array_equal(vx[:6], vy[:6])


def test_streaming_matches_batch(rng):
    cfg = ModelConfig(input_set="EX", num_layers=2, hidden_dim=8, projection_dim=8,
                      memory_order=3, num_bins=4)
    p = random_params(cfg, seed=4)
    x = rng.standard_normal((15, cfg.feature_dim))
    masks, vad = forward_sequence(x, p, cfg)
    m = StreamingModel(cfg, p)
    outs = [m.step(f) for f in x]
    np.testing.assert_allclose(np.array([o.mask for o in outs]), masks, atol=1e-10)
    np.testing.assert_allclose([o.vad_prob for o in outs], vad, atol=1e-10)


def test_output_bounds(tiny_cfg, rng):
    p = random_params(tiny_cfg)
    masks, vad = forward_sequence(rng.standard_normal((20, tiny_cfg.feature_dim)) * 5, p, tiny_cfg)
    assert np.all((masks >= 0) & (masks <= 1)) and np.all((vad >= 0) & (vad <= 1))


def test_feature_dim_mismatch(tiny_cfg):
    m = StreamingModel(tiny_cfg, zero_params(tiny_cfg))
    with pytest.raises(ModelError):
        m.step(np.zeros(tiny_cfg.feature_dim + 1))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_activation_reports_layer(tiny_cfg):
    p = zero_params(tiny_cfg)
    p["layer1.out.bias"][:] = np.inf
    with pytest.raises(NumericError, match="layer 1"):
        StreamingModel(tiny_cfg, p).step(np.zeros(tiny_cfg.feature_dim))


def test_apply_mask():
    E = np.array([1 + 1j, -2j, 3.0])
    np.testing.assert_array_equal(apply_mask(E, np.ones(3)), E)
    np.testing.assert_array_equal(apply_mask(E, np.zeros(3)), 0)
    half = apply_mask(np.array([np.exp(0.3j)]), np.array([0.5]))
    assert np.isclose(abs(half[0]), 0.5) and np.isclose(np.angle(half[0]), 0.3)


def test_config_validation():
    with pytest.raises(ModelError):
        ModelConfig(input_set="XY")
    with pytest.raises(ModelError):
        ModelConfig(num_layers=0)


def test_production_parameter_count():
    # reported, not hard-asserted beyond the 10% band around 6.7M
    n = param_count(production_config("EX"))
    print(f"production EX model: {n / 1e6:.2f}M trainable parameters")
    assert abs(n - 6.7e6) / 6.7e6 < 0.10
