import json

import numpy as np
import pytest

from nn3a.simulation import (MixtureSpec, SimConfig, SpecError, frame_lattice_echo_path,
                             measure_ratio_db, mix, noise_like, sample_spec, simulate_dataset,
                             simulate_one, speech_like, synthesize_echo_path)


def sources(n=32000, seed=0):
    rng = np.random.default_rng(seed)
    return speech_like(rng, n), speech_like(rng, n), noise_like(rng, n)


def test_flag_frequencies():
    rng = np.random.default_rng(0)
    specs = [sample_spec(rng) for _ in range(10000)]
    assert abs(np.mean([s.mute_farend for s in specs]) - 0.3) < 0.015
    assert abs(np.mean([s.mute_noise for s in specs]) - 0.2) < 0.015
    assert abs(np.mean([s.mute_echo_path for s in specs]) - 0.1) < 0.015


def test_seeded_draws_repeat():
    a = sample_spec(np.random.default_rng(5))
    b = sample_spec(np.random.default_rng(5))
    assert a.to_json() == b.to_json()
    np.testing.assert_array_equal(a.echo_path, b.echo_path)


def test_collapsed_ranges():
    cfg = SimConfig(ser_range=(3.0, 3.0), snr_range=(12.0, 12.0))
    rng = np.random.default_rng(1)
    for _ in range(20):
        s = sample_spec(rng, cfg)
        assert s.ser_db == 3.0 and s.snr_db == 12.0


def schroeder_rt60(ir, fs=16000):
    edc = np.cumsum(ir[::-1] ** 2)[::-1]
    edc_db = 10 * np.log10(edc / edc[0])
    t = np.arange(len(ir)) / fs
    sel = (edc_db < -5) & (edc_db > -25)
    slope = np.polyfit(t[sel], edc_db[sel], 1)[0]
    return -60.0 / slope


def test_rt60_decay_slope():
    ir = synthesize_echo_path(np.random.default_rng(0), 0.3, 8000, drr_db=-20.0)
    ir[0] = 0.0  # the decay is a property of the tail
    assert abs(schroeder_rt60(ir) - 0.3) < 0.03


def test_muted_path_is_zero():
    assert not np.any(synthesize_echo_path(np.random.default_rng(0), 0.3, 8000, mute=True))


@pytest.mark.parametrize("rt60", [0.1, 0.6])
def test_length_cap(rt60):
    ir = synthesize_echo_path(np.random.default_rng(0), rt60, 100000)
    assert len(ir) <= 8000 and ir[0] == 1.0


def test_frame_lattice_path_shape():
    ir = frame_lattice_echo_path(np.random.default_rng(0))
    assert len(ir) == 4 * 160 + 32


def test_ser_zero_db():
    near, far, noise = sources()
    spec = MixtureSpec(ser_db=0.0, snr_db=40.0, echo_path=np.array([1.0, 0.3]), delay_samples=80)
    out = mix(spec, near, far, noise)
    assert abs(measure_ratio_db(out.near_clean, out.echo)) < 0.1
    assert abs(measure_ratio_db(out.near_clean, out.noise) - 40.0) < 0.1


def test_mute_farend():
    near, far, noise = sources()
    out = mix(MixtureSpec(ser_db=5.0, snr_db=10.0, mute_farend=True, echo_path=np.ones(3)),
              near, far, noise)
    assert not np.any(out.echo) and not np.any(out.farend)
    np.testing.assert_array_equal(out.mic, out.near_clean + out.noise)


def test_all_mutes():
    near, far, noise = sources()
    out = mix(MixtureSpec(ser_db=5.0, snr_db=10.0, mute_farend=True, mute_noise=True,
                          mute_echo_path=True, echo_path=np.zeros(3)), near, far, noise)
    np.testing.assert_array_equal(out.mic, out.near_clean)


def test_silent_near_with_finite_ser():
    _, far, noise = sources()
    with pytest.raises(SpecError):
        mix(MixtureSpec(ser_db=0.0, snr_db=10.0, echo_path=np.ones(1)), np.zeros(32000), far, noise)


def test_calibration_and_additivity():
    rng = np.random.default_rng(11)
    cfg = SimConfig(duration=2.0)
    checked = 0
    while checked < 30:
        out = simulate_one(rng, cfg)
        resid = out.mic - (out.echo + out.near_clean + out.noise)
        assert np.max(np.abs(resid)) <= 1e-12 * np.max(np.abs(out.mic))
        s = out.spec
        if s.mute_near:
            continue
        if np.any(out.echo):
            assert abs(measure_ratio_db(out.near_clean, out.echo) - s.ser_db) < 0.1
        if np.any(out.noise):
            assert abs(measure_ratio_db(out.near_clean, out.noise) - s.snr_db) < 0.1
        checked += 1


def test_far_end_single_talk():
    cfg = SimConfig(p_mute_near=1.0, p_mute_farend=0.0, p_mute_echo_path=0.0, duration=1.0)
    out = simulate_one(np.random.default_rng(0), cfg)
    assert out.spec.scenario == "FE_ST" and out.spec.ser_db is None
    assert not np.any(out.near_clean) and np.any(out.echo)


def test_dataset_manifest(tmp_path):
    rows = simulate_dataset(3, tmp_path, seed=2, cfg=SimConfig(duration=0.5))
    lines = (tmp_path / "manifest.jsonl").read_text().splitlines()
    assert [json.loads(l)["id"] for l in lines] == [r["id"] for r in rows]
    for key in ("mic", "farend", "near_clean", "echo"):
        assert (tmp_path / rows[0][key]).exists()
