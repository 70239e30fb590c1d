"""Synthetic mixtures ``d = x * a + s + v`` for training and evaluation.

The shipped sources are stand-ins for real corpora: "speech-shaped" bursts
(jittered pulse train plus noise through random two-formant resonators, with
syllable envelopes and pauses), exponentially decaying noise impulse
responses, and stationary or babble-like noise. :func:`load_corpus` lets users
substitute their own WAV directories.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import butter, fftconvolve, lfilter, sosfilt

from .audio import SAMPLE_RATE, StftConfig, frame_signal, read_wav, write_wav
from .delay import apply_delay
from .training import active_frames


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    ser_range: tuple = (-10.0, 20.0)
    snr_range: tuple = (0.0, 40.0)
    p_mute_farend: float = 0.3
    p_mute_noise: float = 0.2
    p_mute_echo_path: float = 0.1
    p_mute_near: float = 0.0      # far-end single talk utterances
    rt60_range: tuple = (0.1, 0.6)
    drr_range: tuple = (0.0, 10.0)  # direct-to-reverberant energy ratio of the echo path, dB
    max_ir_seconds: float = 0.5
    max_delay_ms: float = 100.0
    duration: float = 4.0
    echo_rms_dbfs: float = -25.0  # echo level when there is no near-end to reference
    sample_rate: int = SAMPLE_RATE


@dataclass
class MixtureSpec:
    ser_db: float | None
    snr_db: float
    mute_farend: bool = False
    mute_noise: bool = False
    mute_echo_path: bool = False
    mute_near: bool = False
    rt60: float = 0.3
    drr_db: float = 5.0
    delay_samples: int = 0
    seed: int = 0
    echo_path: np.ndarray = field(default=None, repr=False)

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("echo_path")
        d["echo_path_len"] = 0 if self.echo_path is None else int(len(self.echo_path))
        return d

    @property
    def scenario(self) -> str:
        far_silent = self.mute_farend or self.mute_echo_path
        if self.mute_near:
            return "FE_ST"
        return "NE_ST" if far_silent else "DT"


@dataclass
class MixtureOutput:
    mic: np.ndarray
    farend: np.ndarray
    near_clean: np.ndarray
    echo: np.ndarray
    noise: np.ndarray
    spec: MixtureSpec
    sample_rate: int = SAMPLE_RATE


def sample_spec(rng: np.random.Generator, cfg: SimConfig = SimConfig()) -> MixtureSpec:
    ser = float(rng.uniform(*cfg.ser_range))
    snr = float(rng.uniform(*cfg.snr_range))
    flags = rng.uniform(size=4) < np.array(
        [cfg.p_mute_farend, cfg.p_mute_noise, cfg.p_mute_echo_path, cfg.p_mute_near])
    rt60 = float(rng.uniform(*cfg.rt60_range))
    drr = float(rng.uniform(*cfg.drr_range))
    delay = int(rng.integers(0, int(cfg.max_delay_ms * cfg.sample_rate / 1000) + 1))
    seed = int(rng.integers(0, 2**31 - 1))
    ir_len = int(cfg.max_ir_seconds * cfg.sample_rate)
    path = synthesize_echo_path(np.random.default_rng(seed), rt60, ir_len, cfg.sample_rate,
                                mute=bool(flags[2]), drr_db=drr)
    return MixtureSpec(ser_db=None if flags[3] else ser, snr_db=snr,
                       mute_farend=bool(flags[0]), mute_noise=bool(flags[1]),
                       mute_echo_path=bool(flags[2]), mute_near=bool(flags[3]),
                       rt60=rt60, drr_db=drr, delay_samples=delay, seed=seed, echo_path=path)


def synthesize_echo_path(rng: np.random.Generator, rt60: float, length: int,
                         sample_rate: int = SAMPLE_RATE, mute: bool = False,
                         max_seconds: float = 0.5, drr_db: float = 5.0) -> np.ndarray:
    """Exponentially decaying Gaussian tail behind a unit direct path.

    The amplitude envelope ``exp(-3 ln(10) t / rt60)`` gives an energy decay of
    60 dB at ``rt60``; the tail is scaled so that direct-path energy over tail
    energy equals ``drr_db``.
    """
    length = int(min(length, max_seconds * sample_rate, max(1, 1.5 * rt60 * sample_rate)))
    if mute:
        return np.zeros(length)
    t = np.arange(length) / sample_rate
    ir = rng.standard_normal(length) * np.exp(-3.0 * np.log(10.0) * t / rt60)
    ir[0] = 0.0
    tail_energy = float(np.sum(ir**2))
    if tail_energy > 0:
        ir *= np.sqrt(10.0 ** (-drr_db / 10.0) / tail_energy)
    ir[0] = 1.0
    return ir


def frame_lattice_echo_path(rng: np.random.Generator, taps: int = 5, hop: int = 160,
                            kernel_len: int = 32) -> np.ndarray:
    """Echo path made of short dispersive kernels at whole-hop delays.

    Such a path is (up to a small cross-band error) exactly representable by
    a ``taps``-frame per-bin filter, which makes it the right test case for
    the linear stage on its own.
    """
    ir = np.zeros((taps - 1) * hop + kernel_len)
    decay = np.exp(-np.arange(kernel_len) / (kernel_len / 4.0))
    for k in range(taps):
        kernel = rng.standard_normal(kernel_len) * decay
        kernel[0] = 1.0
        ir[k * hop:k * hop + kernel_len] += kernel * 0.6 ** k
    return ir


def speech_like(rng: np.random.Generator, n: int, sample_rate: int = SAMPLE_RATE,
                level_dbfs: float = -20.0, pause_range=(0.2, 0.8),
                lead_in: float = 0.0) -> np.ndarray:
    """Speech-shaped bursts: voiced/unvoiced syllables grouped in phrases."""
    out = np.zeros(n)
    pos = int(lead_in * sample_rate)
    while pos < n:
        for _ in range(int(rng.integers(2, 7))):
            syl = int(rng.uniform(0.12, 0.3) * sample_rate)
            if pos >= n:
                break
            seg = min(syl, n - pos)
            out[pos:pos + seg] = _syllable(rng, syl, sample_rate)[:seg]
            pos += syl + int(rng.uniform(0.0, 0.05) * sample_rate)
        pos += int(rng.uniform(*pause_range) * sample_rate)
    # unipolar pulse excitation leaves a DC envelope real speech does not have
    out = sosfilt(butter(2, 60.0, "highpass", fs=sample_rate, output="sos"), out)
    rms = np.sqrt(np.mean(out[out != 0] ** 2)) if np.any(out) else 0.0
    if rms > 0:
        out *= 10.0 ** (level_dbfs / 20.0) / rms
    return out


def _syllable(rng, n, sample_rate):
    f0 = rng.uniform(90, 250)
    period = sample_rate / f0
    pulses = np.zeros(n)
    idx = np.cumsum(period * (1 + 0.02 * rng.standard_normal(int(n / period) + 2)))
    idx = idx[idx < n].astype(int)
    pulses[idx] = 1.0
    voiced = rng.uniform() < 0.75
    excitation = (pulses * 3.0 + 0.3 * rng.standard_normal(n)) if voiced else rng.standard_normal(n)
    a = np.array([1.0])
    for formant, bw in ((rng.uniform(300, 900), 80), (rng.uniform(900, 2500), 120),
                        (rng.uniform(2500, 3800), 200)):
        rad = np.exp(-np.pi * bw / sample_rate)
        theta = 2 * np.pi * formant / sample_rate
        a = np.convolve(a, [1.0, -2 * rad * np.cos(theta), rad**2])
    y = lfilter([1.0, -0.5], a, excitation)
    env = np.sin(np.pi * np.arange(n) / n) ** 0.7
    return y * env


def noise_like(rng: np.random.Generator, n: int, kind: str = "stationary",
               sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    if kind == "babble":
        out = sum(speech_like(rng, n, sample_rate, pause_range=(0.05, 0.3)) for _ in range(5))
    else:
        pole = rng.uniform(0.3, 0.95)
        out = lfilter([1.0], [1.0, -pole], rng.standard_normal(n))
    return out / max(np.sqrt(np.mean(out**2)), 1e-12) * 0.05


def _active_power(x: np.ndarray, frames: np.ndarray, stft_cfg: StftConfig) -> float:
    fr = frame_signal(x, stft_cfg)
    if not np.any(frames):
        return 0.0
    return float(np.mean(fr[frames] ** 2))


def _gated_powers(reference, component, gate, stft_cfg):
    p_ref = _active_power(reference, gate, stft_cfg)
    p_comp = _active_power(component, gate, stft_cfg)
    if p_comp <= 0.0:
        # silent wherever the reference is active: fall back to its own activity
        p_comp = _active_power(component, active_frames(component, stft_cfg), stft_cfg)
    return p_ref, p_comp


def measure_ratio_db(reference, component, stft_cfg: StftConfig | None = None,
                     gate_frames: np.ndarray | None = None) -> float:
    """Power ratio in dB of ``reference`` to ``component``.

    Both powers are measured on the active frames of ``reference`` (-40 dB
    gate) unless ``gate_frames`` is given.
    """
    stft_cfg = stft_cfg or StftConfig()
    if gate_frames is None:
        gate_frames = active_frames(reference, stft_cfg)
    p_ref, p_comp = _gated_powers(reference, component, gate_frames, stft_cfg)
    return 10.0 * np.log10(p_ref / p_comp)


def _scale_to_ratio(reference, component, ratio_db, gate, stft_cfg):
    p_ref, p_comp = _gated_powers(reference, component, gate, stft_cfg)
    if p_comp <= 0.0:
        return component
    return component * np.sqrt(p_ref / p_comp / 10.0 ** (ratio_db / 10.0))


def mix(spec: MixtureSpec, near, far, noise, sample_rate: int = SAMPLE_RATE,
        stft_cfg: StftConfig | None = None, echo_rms_dbfs: float = -25.0) -> MixtureOutput:
    stft_cfg = stft_cfg or StftConfig()
    near = np.asarray(getattr(near, "samples", near), dtype=np.float64)
    n = len(near)
    far = _fit(np.asarray(getattr(far, "samples", far), dtype=np.float64), n)
    noise = _fit(np.asarray(getattr(noise, "samples", noise), dtype=np.float64), n)
    if spec.mute_near:
        near = np.zeros(n)
    if spec.mute_farend:
        far = np.zeros(n)
    if spec.mute_noise:
        noise = np.zeros(n)

    if spec.mute_echo_path or spec.echo_path is None or not np.any(far):
        echo = np.zeros(n)
    else:
        delayed = apply_delay(far, spec.delay_samples) if spec.delay_samples else far
        echo = fftconvolve(delayed, spec.echo_path)[:n]

    gate = active_frames(near, stft_cfg)
    near_active = bool(np.any(gate))
    if np.any(echo):
        if near_active and spec.ser_db is not None:
            echo = _scale_to_ratio(near, echo, spec.ser_db, gate, stft_cfg)
        elif spec.ser_db is not None:
            raise SpecError("near-end is silent but a finite SER was requested")
        else:
            egate = active_frames(echo, stft_cfg)
            echo = echo * 10.0 ** (echo_rms_dbfs / 20.0) / np.sqrt(_active_power(echo, egate, stft_cfg))
    if np.any(noise):
        if near_active:
            noise = _scale_to_ratio(near, noise, spec.snr_db, gate, stft_cfg)
        elif np.any(echo):
            noise = _scale_to_ratio(echo, noise, spec.snr_db, active_frames(echo, stft_cfg), stft_cfg)
        else:
            noise = noise * 10.0 ** ((echo_rms_dbfs - spec.snr_db) / 20.0) / np.sqrt(np.mean(noise**2))

    mic = echo + near + noise
    peak = max(np.max(np.abs(mic)), np.max(np.abs(far)), 1e-12)
    if peak > 0.95:
        g = 0.95 / peak
        near, echo, noise, far = near * g, echo * g, noise * g, far * g
        mic = echo + near + noise
    return MixtureOutput(mic, far, near, echo, noise, spec, sample_rate)


def _fit(x: np.ndarray, n: int) -> np.ndarray:
    if len(x) >= n:
        return x[:n]
    return np.concatenate([x, np.zeros(n - len(x))])


def simulate_one(rng: np.random.Generator, cfg: SimConfig = SimConfig(),
                 spec: MixtureSpec | None = None, corpus=None) -> MixtureOutput:
    """Draw a spec (unless given) and synthesize sources for it."""
    if spec is None:
        spec = sample_spec(rng, cfg)
    src = np.random.default_rng(spec.seed)
    n = int(cfg.duration * cfg.sample_rate)
    if corpus is not None:
        near, far, noise = corpus.draw(src, n)
    else:
        near = speech_like(src, n, cfg.sample_rate, level_dbfs=src.uniform(-28, -18),
                           lead_in=src.uniform(0.0, 0.5))
        far = speech_like(src, n, cfg.sample_rate, level_dbfs=src.uniform(-28, -18))
        noise = noise_like(src, n, "babble" if src.uniform() < 0.3 else "stationary",
                           cfg.sample_rate)
    return mix(spec, near, far, noise, cfg.sample_rate, echo_rms_dbfs=cfg.echo_rms_dbfs)


class Corpus:
    """User-supplied speech and noise WAV directories."""

    def __init__(self, speech_dir, noise_dir=None):
        self.speech = sorted(Path(speech_dir).glob("*.wav"))
        self.noise = sorted(Path(noise_dir).glob("*.wav")) if noise_dir else []
        if not self.speech:
            raise FileNotFoundError(f"no .wav files in {speech_dir}")

    def _segment(self, rng, files, n):
        x = read_wav(files[int(rng.integers(len(files)))]).samples
        if len(x) > n:
            start = int(rng.integers(0, len(x) - n + 1))
            x = x[start:start + n]
        return _fit(x, n)

    def draw(self, rng, n):
        near = self._segment(rng, self.speech, n)
        far = self._segment(rng, self.speech, n)
        noise = self._segment(rng, self.noise, n) if self.noise else noise_like(rng, n)
        return near, far, noise


def load_corpus(speech_dir, noise_dir=None) -> Corpus:
    return Corpus(speech_dir, noise_dir)


def write_mixture(out: MixtureOutput, directory, name: str) -> dict:
    """Write the WAV quadruple (plus noise) and return the manifest row."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    row = {"id": name, "scenario": out.spec.scenario, "sample_rate": out.sample_rate,
           "spec": out.spec.to_json()}
    for key in ("mic", "farend", "near_clean", "echo", "noise"):
        fname = f"{name}_{key}.wav"
        write_wav(directory / fname, getattr(out, key))
        row[key] = fname
    return row


def simulate_dataset(count: int, out_dir, seed: int = 0, cfg: SimConfig = SimConfig(),
                     corpus=None) -> list:
    """Write ``count`` mixtures and a ``manifest.jsonl`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(count):
        mixture = simulate_one(rng, cfg, corpus=corpus)
        rows.append(write_mixture(mixture, out_dir, f"utt{i:05d}"))
    with open(out_dir / "manifest.jsonl", "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return rows
