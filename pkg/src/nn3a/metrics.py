"""ERLE, SI-SDR, segmental SNR and frame-level VAD accuracy."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

DB_CAP = 120.0
SCENARIOS = ("NE_ST", "FE_ST", "DT")


class UndefinedMetricError(ValueError):
    pass


def _as_array(x):
    return np.asarray(getattr(x, "samples", x), dtype=np.float64)


def expand_frame_mask(mask, num_samples: int, hop: int = 160) -> np.ndarray:
    """Turn a per-hop-block boolean mask into a per-sample one.

    Block ``k`` is samples ``[k*hop, (k+1)*hop)``. A mask that already has
    ``num_samples`` entries is returned unchanged.
    """
    mask = np.asarray(mask, dtype=bool)
    if len(mask) == num_samples:
        return mask
    out = np.repeat(mask, hop)[:num_samples]
    if len(out) < num_samples:
        out = np.concatenate([out, np.zeros(num_samples - len(out), dtype=bool)])
    return out


def erle(mic, processed, active_mask=None, hop: int = 160) -> float:
    """10 log10(sum d^2 / sum s_hat^2) over the masked region, capped at 120 dB."""
    d = _as_array(mic)
    s = _as_array(processed)
    n = min(len(d), len(s))
    d, s = d[:n], s[:n]
    sel = np.ones(n, dtype=bool) if active_mask is None else expand_frame_mask(active_mask, n, hop)
    if not np.any(sel):
        raise UndefinedMetricError("ERLE mask selects no samples")
    num = float(np.sum(d[sel] ** 2))
    if num <= 0.0:
        raise UndefinedMetricError("microphone signal is silent on the ERLE mask")
    den = max(float(np.sum(s[sel] ** 2)), 1e-12 * num)
    return 10.0 * np.log10(num / den)


def erle_tail(mic, processed, active_mask=None, hop: int = 160, fraction: float = 0.5) -> float:
    """ERLE restricted to the last ``fraction`` of the signal."""
    d = _as_array(mic)
    n = min(len(d), len(_as_array(processed)))
    sel = np.ones(n, dtype=bool) if active_mask is None else expand_frame_mask(active_mask, n, hop)
    sel = sel.copy()
    sel[:int(n * (1.0 - fraction))] = False
    return erle(d[:n], _as_array(processed)[:n], sel)


def si_sdr(reference, estimate) -> float:
    ref = _as_array(reference)
    est = _as_array(estimate)
    n = min(len(ref), len(est))
    ref, est = ref[:n], est[:n]
    ref_energy = float(np.dot(ref, ref))
    if ref_energy <= 0.0:
        raise UndefinedMetricError("SI-SDR reference is silent")
    target = (np.dot(est, ref) / ref_energy) * ref
    residual = est - target
    floor = 1e-12 * max(float(np.dot(est, est)), ref_energy)
    ratio = max(float(np.dot(target, target)), floor) / max(float(np.dot(residual, residual)), floor)
    return float(np.clip(10.0 * np.log10(ratio), -DB_CAP, DB_CAP))


def seg_snr(reference, estimate, frame: int = 320, lo: float = -10.0, hi: float = 35.0) -> float:
    """Mean per-frame SNR, clipped to [lo, hi], over frames where the reference is active."""
    ref = _as_array(reference)
    est = _as_array(estimate)
    n = min(len(ref), len(est)) // frame * frame
    if n == 0:
        raise UndefinedMetricError("signal shorter than one frame")
    r = ref[:n].reshape(-1, frame)
    e = est[:n].reshape(-1, frame)
    pr = np.sum(r**2, axis=1)
    active = pr > pr.max() * 1e-4
    if not np.any(active):
        raise UndefinedMetricError("segmental SNR reference is silent")
    pn = np.sum((r - e) ** 2, axis=1)
    snr = 10.0 * np.log10(pr[active] / np.maximum(pn[active], 1e-20))
    return float(np.mean(np.clip(snr, lo, hi)))


def vad_accuracy(pred_probs, labels, threshold: float = 0.5) -> dict:
    """Frame accuracy with false-accept / false-reject rates.

    A probability exactly at ``threshold`` counts as speech.
    """
    p = np.asarray(pred_probs, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n = min(len(p), len(y))
    pred = p[:n] >= threshold
    y = y[:n]
    if n == 0:
        return {"accuracy": float("nan"), "false_accept": float("nan"), "false_reject": float("nan")}
    neg, pos = ~y, y
    return {
        "accuracy": float(np.mean(pred == y)),
        "false_accept": float(np.mean(pred[neg])) if np.any(neg) else 0.0,
        "false_reject": float(np.mean(~pred[pos])) if np.any(pos) else 0.0,
    }


@dataclass
class EvalReport:
    scenario: str
    erle_db: float | None = None
    erle_tail_db: float | None = None
    si_sdr_db: float | None = None
    si_sdr_in_db: float | None = None
    seg_snr_db: float | None = None
    vad_accuracy: float | None = None
    utterance: str = ""

    def to_json(self) -> dict:
        return asdict(self)
