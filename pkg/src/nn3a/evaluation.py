"""Manifest-driven evaluation, dataset preparation and the input-set ablation."""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .audio import StftConfig, frame_signal, read_wav
from .metrics import EvalReport, erle, erle_tail, seg_snr, si_sdr, vad_accuracy
from .pipeline import PipelineConfig, align_farend, enhance
from .training import active_frames, compute_vad_labels, prepare_example


class ManifestError(ValueError):
    pass


@dataclass
class Utterance:
    id: str
    scenario: str
    mic: np.ndarray
    farend: np.ndarray
    near_clean: np.ndarray
    echo: np.ndarray


def load_manifest(path) -> list:
    path = Path(path)
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def load_utterance(row: dict, base_dir) -> Utterance:
    base = Path(base_dir)
    try:
        arrays = {k: read_wav(base / row[k]).samples for k in ("mic", "farend", "near_clean", "echo")}
    except KeyError as exc:
        raise ManifestError(f"manifest row {row.get('id')} lacks {exc}") from exc
    return Utterance(row["id"], row["scenario"], **arrays)


def load_utterances(manifest) -> list:
    manifest = Path(manifest)
    return [load_utterance(r, manifest.parent) for r in load_manifest(manifest)]


def from_mixture(mixture, name: str = "") -> Utterance:
    return Utterance(name, mixture.spec.scenario, mixture.mic, mixture.farend,
                     mixture.near_clean, mixture.echo)


def echo_only_blocks(echo, near, hop: int = 160, gate_db: float = -40.0) -> np.ndarray:
    """Hop blocks where the echo is active and the near-end is silent."""
    echo = np.asarray(echo)
    n_blocks = -(-len(echo) // hop)

    def block_power(x):
        x = np.pad(np.asarray(x, dtype=np.float64), (0, n_blocks * hop - len(x)))
        return np.mean(x.reshape(n_blocks, hop) ** 2, axis=1)

    pe, pn = block_power(echo), block_power(near)
    g = 10.0 ** (gate_db / 10.0)
    echo_on = pe > pe.max(initial=0.0) * g if pe.max(initial=0.0) > 0 else np.zeros(n_blocks, bool)
    near_ref = pn.max(initial=0.0)
    near_off = pn <= near_ref * g if near_ref > 0 else np.ones(n_blocks, bool)
    return echo_on & near_off


def evaluate_utterance(utt: Utterance, processed, vad=None, hop: int = 160,
                       stft_cfg: StftConfig | None = None) -> EvalReport:
    processed = np.asarray(getattr(processed, "samples", processed), dtype=np.float64)
    report = EvalReport(scenario=utt.scenario, utterance=utt.id)
    if utt.scenario in ("FE_ST", "DT"):
        # double talk files contribute their far-end-only stretches
        mask = echo_only_blocks(utt.echo, utt.near_clean, hop)
        if np.any(mask):
            report.erle_db = erle(utt.mic, processed, mask, hop)
            report.erle_tail_db = erle_tail(utt.mic, processed, mask, hop)
    if utt.scenario != "FE_ST" and np.any(utt.near_clean):
        report.si_sdr_db = si_sdr(utt.near_clean, processed)
        report.si_sdr_in_db = si_sdr(utt.near_clean, utt.mic)
        report.seg_snr_db = seg_snr(utt.near_clean, processed)
    if vad is not None:
        labels = compute_vad_labels(utt.near_clean, stft_cfg)
        report.vad_accuracy = vad_accuracy(vad, labels)["accuracy"]
    return report


def aggregate(reports) -> dict:
    out = {}
    fields = ("erle_db", "erle_tail_db", "si_sdr_db", "si_sdr_in_db", "seg_snr_db", "vad_accuracy")
    for scenario in ("NE_ST", "FE_ST", "DT"):
        rows = [r for r in reports if r.scenario == scenario]
        agg = {"count": len(rows)}
        for f in fields:
            vals = [getattr(r, f) for r in rows if getattr(r, f) is not None]
            agg[f] = float(np.mean(vals)) if vals else None
        out[scenario] = agg
    return out


def read_vad_jsonl(path) -> np.ndarray:
    with open(path) as fh:
        return np.array([json.loads(line)["vad"] for line in fh if line.strip()])


def evaluate_dir(manifest, processed_dir) -> dict:
    """Score ``<processed_dir>/<id>.wav`` (and optional ``<id>.vad.jsonl``) per manifest row."""
    manifest = Path(manifest)
    processed_dir = Path(processed_dir)
    reports = []
    for row in load_manifest(manifest):
        utt = load_utterance(row, manifest.parent)
        wav = processed_dir / f"{row['id']}.wav"
        vad_path = processed_dir / f"{row['id']}.vad.jsonl"
        vad = read_vad_jsonl(vad_path) if vad_path.exists() else None
        reports.append(evaluate_utterance(utt, read_wav(wav).samples, vad))
    return {"utterances": [r.to_json() for r in reports], "aggregate": aggregate(reports)}


def build_examples(utterances, input_set: str, cfg: PipelineConfig | None = None) -> list:
    """Training examples with the same far-end alignment the pipeline applies."""
    cfg = cfg or PipelineConfig()
    examples = []
    for utt in utterances:
        far, _, _ = align_farend(utt.mic, utt.farend, cfg)
        examples.append(prepare_example(utt.mic, far, utt.near_clean, input_set,
                                         cfg.wrls, cfg.stft, name=utt.id))
    return examples


@dataclass
class AblationConfig:
    """One row of the ablation: a trained model, or the ``linear`` / ``oracle`` modes."""
    name: str
    model_cfg: object = None
    params: object = None
    mode: str = "model"


def run_config(utt: Utterance, ac: AblationConfig, cfg: PipelineConfig):
    if ac.mode == "linear":
        return enhance(utt.mic, utt.farend, _no_model(cfg))
    if ac.mode == "oracle":
        return enhance(utt.mic, utt.farend, cfg, oracle_near=utt.near_clean)
    return enhance(utt.mic, utt.farend, cfg, ac.model_cfg, ac.params)


def _no_model(cfg: PipelineConfig) -> PipelineConfig:
    return replace(cfg, bypass_model=True)


TABLE_COLUMNS = (("NE ST SI-SDR", "NE_ST", "si_sdr_db"),
                 ("FE ST ERLE", "FE_ST", "erle_db"),
                 ("DT SI-SDR", "DT", "si_sdr_db"))


def ablate(utterances, configs, cfg: PipelineConfig | None = None) -> dict:
    """Evaluate every config on every utterance; rows mirror the input-set comparison table."""
    cfg = cfg or PipelineConfig()
    rows = []
    for ac in configs:
        reports = []
        for utt in utterances:
            res = run_config(utt, ac, cfg)
            reports.append(evaluate_utterance(utt, res.enhanced, res.vad, cfg.stft.hop_len, cfg.stft))
        agg = aggregate(reports)
        row = {"config": ac.name}
        for label, scenario, field_name in TABLE_COLUMNS:
            row[label] = agg[scenario][field_name]
        row["aggregate"] = agg
        rows.append(row)
    return {"columns": [c[0] for c in TABLE_COLUMNS], "rows": rows}


def format_table(report: dict, sep: str = "\t") -> str:
    cols = report["columns"]
    lines = [sep.join(["config", *cols])]
    for row in report["rows"]:
        cells = [row["config"]] + ["-" if row[c] is None else f"{row[c]:.2f}" for c in cols]
        lines.append(sep.join(cells))
    return "\n".join(lines) + "\n"
