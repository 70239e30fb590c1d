import numpy as np
import pytest

from conftest import random_params
from nn3a.audio import istft
from nn3a.metrics import erle
from nn3a.model import ModelConfig, ModelError
from nn3a.pipeline import InputError, PipelineConfig, align_farend, enhance
from nn3a.simulation import MixtureSpec, frame_lattice_echo_path, mix, noise_like, speech_like


@pytest.fixture(scope="module")
def mixture():
    rng = np.random.default_rng(3)
    n = 48000
    spec = MixtureSpec(ser_db=0.0, snr_db=30.0, echo_path=frame_lattice_echo_path(rng),
                       delay_samples=0)
    return mix(spec, speech_like(rng, n), speech_like(rng, n), noise_like(rng, n))


def small_model(input_set="EYD"):
    cfg = ModelConfig(input_set=input_set, num_layers=1, hidden_dim=8, projection_dim=8,
                      memory_order=2)
    return cfg, random_params(cfg)


NO_AGC = PipelineConfig(use_agc=False, delay_mode="off")


def test_bypass_is_linear_resynthesis(mixture):
    cfg, params = small_model()
    res = enhance(mixture.mic, mixture.farend,
                  PipelineConfig(use_agc=False, delay_mode="off", bypass_model=True), cfg, params)
    np.testing.assert_allclose(res.enhanced, istft(res.E, NO_AGC.stft, length=len(mixture.mic)),
                               atol=1e-12)
    np.testing.assert_array_equal(res.vad, 0.0)


def test_oracle_mask_removes_far_end_only_echo():
    rng = np.random.default_rng(4)
    n = 48000
    spec = MixtureSpec(ser_db=None, snr_db=40.0, mute_near=True, mute_noise=True,
                       echo_path=frame_lattice_echo_path(rng))
    m = mix(spec, speech_like(rng, n), speech_like(rng, n), noise_like(rng, n))
    res = enhance(m.mic, m.farend, NO_AGC, oracle_near=m.near_clean)
    assert erle(m.mic, res.enhanced) >= 40.0


def test_empty_mic():
    with pytest.raises(InputError):
        enhance(np.zeros(0), np.zeros(100))


def test_deterministic(mixture):
    cfg, params = small_model()
    a = enhance(mixture.mic, mixture.farend, PipelineConfig(), cfg, params)
    b = enhance(mixture.mic, mixture.farend, PipelineConfig(), cfg, params)
    assert a.enhanced.tobytes() == b.enhanced.tobytes()


def test_causal(mixture):
    cfg, params = small_model()
    mic = mixture.mic.copy()
    cut = 24000
    a = enhance(mic, mixture.farend, NO_AGC, cfg, params)
    mic[cut:] += 0.1
    b = enhance(mic, mixture.farend, NO_AGC, cfg, params)
    # output samples before the last frame touching the change are unaffected
    safe = cut - NO_AGC.stft.win_len
    np.testing.assert_array_equal(a.enhanced[:safe], b.enhanced[:safe])


def test_end_to_end_mode_skips_linear_stage(mixture):
    cfg, params = small_model("DX")
    res = enhance(mixture.mic, mixture.farend, NO_AGC, cfg, params)
    np.testing.assert_array_equal(res.E, res.D)
    np.testing.assert_array_equal(res.Y, 0)


def test_bin_mismatch(mixture):
    cfg = ModelConfig(input_set="EX", num_layers=1, hidden_dim=4, projection_dim=4,
                      memory_order=1, num_bins=129)
    with pytest.raises(ModelError):
        enhance(mixture.mic, mixture.farend, NO_AGC, cfg, random_params(cfg))


def test_debug_diagnostics(mixture):
    res = enhance(mixture.mic[:8000], mixture.farend[:8000], NO_AGC, debug=True)
    assert len(res.diagnostics) == res.D.shape[0]
    assert {"erle_so_far_db", "tap_norm", "gamma_mean"} <= res.diagnostics[0].keys()


def test_align_recovers_bulk_delay():
    rng = np.random.default_rng(9)
    far = speech_like(rng, 48000)
    mic = np.concatenate([np.zeros(800), far[:-800]])
    aligned, lag, conf = align_farend(mic, far, PipelineConfig())
    assert lag == 800 and conf > 0.5
    np.testing.assert_array_equal(aligned[800:], far[:-800])


def test_fixed_and_off_delay():
    far = np.arange(10.0)
    _, lag, _ = align_farend(far, far, PipelineConfig(delay_mode="fixed", delay_ms=0.25))
    assert lag == 4
    out, lag, _ = align_farend(far, far, PipelineConfig(delay_mode="off"))
    assert lag == 0 and out is far
