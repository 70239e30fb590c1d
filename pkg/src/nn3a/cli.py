"""``nn3a`` command line: enhance, train, simulate, eval, ablate.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numeric error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import plotting
from .agc import AgcConfig
from .audio import SAMPLE_RATE, AudioFormatError, read_wav, write_wav
from .evaluation import (AblationConfig, ManifestError, ablate, build_examples, evaluate_dir,
                         format_table, load_manifest, load_utterance, load_utterances)
from .model import ModelConfig, ModelError, NumericError
from .pipeline import InputError, PipelineConfig, enhance
from .simulation import SimConfig, load_corpus, simulate_dataset
from .training import ConfigError, LossConfig, TrainConfig, TrainingError, train_toy
from .weights import WeightFileError, load_params, save_params
from .wrls import WrlsConfig

log = logging.getLogger("nn3a")

EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 2, 3, 4


def _pipeline_config(args) -> PipelineConfig:
    wrls = WrlsConfig(taps=args.taps, beta=args.beta, lam=args.lam, eps=args.eps)
    agc = AgcConfig(target_peak_dbfs=args.agc_target_dbfs, max_gain_db=args.agc_max_gain_db)
    if args.no_delay_comp:
        mode = "off"
    elif args.delay_ms is not None:
        mode = "fixed"
    else:
        mode = "auto"
    return PipelineConfig(wrls=wrls, agc=agc, use_agc=not args.no_agc,
                          bypass_model=args.bypass_model, delay_mode=mode,
                          delay_ms=args.delay_ms or 0.0, max_delay_ms=args.max_delay_ms)


def _load_model(args, cfg: PipelineConfig):
    if not args.model or args.bypass_model:
        if args.input_set and not args.model:
            raise ConfigError("--input-set given without --model")
        return None, None
    model_cfg, params = load_params(args.model, cfg.stft)
    if args.input_set and args.input_set != model_cfg.input_set:
        raise ConfigError(f"--input-set {args.input_set} does not match weight file "
                          f"input set {model_cfg.input_set}")
    return model_cfg, params


def _read_mono16k(path):
    sig = read_wav(path)
    if sig.sample_rate != SAMPLE_RATE:
        raise AudioFormatError(f"{path}: sample rate {sig.sample_rate}, expected {SAMPLE_RATE}")
    return sig.samples


def _write_jsonl(path, rows):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _vad_rows(vad, hop=160):
    return [{"frame": t, "time": t * hop / SAMPLE_RATE, "vad": float(p)} for t, p in enumerate(vad)]


def cmd_enhance(args) -> int:
    cfg = _pipeline_config(args)
    model_cfg, params = _load_model(args, cfg)
    if args.manifest:
        if not args.out_dir:
            raise ConfigError("--manifest requires --out-dir")
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = Path(args.manifest)
        for row in load_manifest(manifest):
            utt = load_utterance(row, manifest.parent)
            res = enhance(utt.mic, utt.farend, cfg, model_cfg, params,
                          oracle_near=utt.near_clean if args.oracle else None)
            write_wav(out_dir / f"{utt.id}.wav", res.enhanced)
            _write_jsonl(out_dir / f"{utt.id}.vad.jsonl", _vad_rows(res.vad, cfg.stft.hop_len))
        return 0

    if not (args.mic and args.farend and args.out):
        raise ConfigError("enhance needs --mic, --farend and --out (or --manifest/--out-dir)")
    mic = _read_mono16k(args.mic)
    far = _read_mono16k(args.farend)
    near = _read_mono16k(args.oracle_near) if args.oracle_near else None
    res = enhance(mic, far, cfg, model_cfg, params, oracle_near=near, debug=bool(args.debug_jsonl))
    write_wav(args.out, res.enhanced)
    vad_path = args.vad or str(Path(args.out).with_suffix(".vad.jsonl"))
    _write_jsonl(vad_path, _vad_rows(res.vad, cfg.stft.hop_len))
    if args.debug_jsonl:
        _write_jsonl(args.debug_jsonl, [{"delay_samples": res.delay_samples,
                                          "delay_confidence": res.delay_confidence}]
                     + res.diagnostics)
    if args.figure:
        plotting.plot_enhance(mic, res.enhanced, res.vad, args.figure, hop=cfg.stft.hop_len)
    log.info("delay %d samples (confidence %.2f)", res.delay_samples, res.delay_confidence)
    return 0


TRAIN_KEYS = {
    "input_set": ("model", str), "num_layers": ("model", int), "hidden_dim": ("model", int),
    "projection_dim": ("model", int), "memory_order": ("model", int),
    "alpha": ("loss", None), "vad_loss_scale": ("loss", float),
    "step_size": ("train", float), "clip_norm": ("train", float), "steps": ("train", int),
    "batch_size": ("train", int), "seed": ("train", int),
    "taps": ("wrls", int), "beta": ("wrls", float), "lambda": ("wrls", float), "eps": ("wrls", float),
}


def parse_train_config(text: str):
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    groups = {"model": {}, "loss": {}, "train": {}, "wrls": {}}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in TRAIN_KEYS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        group, conv = TRAIN_KEYS[key]
        if key == "alpha":
            groups[group][key] = None if value.lower() == "unweighted" else float(value)
        else:
            try:
                groups[group]["lam" if key == "lambda" else key] = conv(value)
            except ValueError as exc:
                raise ConfigError(f"config line {lineno}: bad value for {key}") from exc
    try:
        model_cfg = ModelConfig(**groups["model"])
        wrls_cfg = WrlsConfig(**groups["wrls"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return (model_cfg, LossConfig(**groups["loss"]), TrainConfig(**groups["train"]), wrls_cfg)


def cmd_train(args) -> int:
    model_cfg, loss_cfg, train_cfg, wrls_cfg = parse_train_config(Path(args.config).read_text())
    manifest = Path(args.data) / "manifest.jsonl"
    if not manifest.exists():
        raise FileNotFoundError(f"{manifest} not found")
    utts = load_utterances(manifest)
    cfg = PipelineConfig(wrls=wrls_cfg)
    examples = build_examples(utts, model_cfg.input_set, cfg)
    result = train_toy(examples, model_cfg, loss_cfg, train_cfg)
    out = Path(args.out)
    save_params(model_cfg, result.params, out, cfg.stft,
                extra={"alpha": loss_cfg.alpha, "steps": train_cfg.steps, "seed": train_cfg.seed})
    curves = {"total": result.loss_curve, "mask": result.mask_loss_curve, "vad": result.vad_loss_curve}
    Path(str(out) + ".loss.json").write_text(json.dumps(curves))
    plotting.plot_loss_curve(curves, str(out) + ".loss.png")
    log.info("final loss %.4f after %d steps", result.loss_curve[-1], train_cfg.steps)
    return 0


def cmd_simulate(args) -> int:
    cfg = SimConfig(duration=args.duration, p_mute_near=args.fe_st_fraction)
    corpus = load_corpus(args.speech_dir, args.noise_dir) if args.speech_dir else None
    rows = simulate_dataset(args.count, args.out, seed=args.seed, cfg=cfg, corpus=corpus)
    log.info("wrote %d mixtures to %s", len(rows), args.out)
    return 0


def cmd_eval(args) -> int:
    report = evaluate_dir(args.manifest, args.processed_dir)
    Path(args.report).write_text(json.dumps(report, indent=2))
    plotting.plot_eval(report, plotting.figure_path(args.report))
    return 0


def _parse_ablation_config(spec: str) -> AblationConfig:
    if "=" not in spec:
        raise ConfigError(f"--config expects NAME=MODEL|linear|oracle, got {spec!r}")
    name, target = spec.split("=", 1)
    if target in ("linear", "oracle"):
        return AblationConfig(name, mode=target)
    if not Path(target).exists():
        raise ConfigError(f"model for config {name!r} not found: {target}")
    model_cfg, params = load_params(target)
    return AblationConfig(name, model_cfg, params)


def cmd_ablate(args) -> int:
    configs = [_parse_ablation_config(c) for c in args.config]
    utts = load_utterances(args.manifest)
    cfg = PipelineConfig(use_agc=args.with_agc)
    report = ablate(utts, configs, cfg)
    Path(args.report).write_text(json.dumps(report, indent=2))
    Path(args.report).with_suffix(".tsv").write_text(format_table(report))
    plotting.plot_ablation(report, plotting.figure_path(args.report))
    sys.stdout.write(format_table(report))
    return 0


def _add_pipeline_flags(p):
    p.add_argument("--taps", type=int, default=5)
    p.add_argument("--beta", type=float, default=0.2)
    p.add_argument("--lambda", dest="lam", type=float, default=0.995)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--max-delay-ms", type=float, default=500.0)
    p.add_argument("--delay-ms", type=float, default=None, help="fixed far-end delay; skips estimation")
    p.add_argument("--no-delay-comp", action="store_true")
    p.add_argument("--agc-target-dbfs", type=float, default=-6.0)
    p.add_argument("--agc-max-gain-db", type=float, default=18.0)
    p.add_argument("--no-agc", action="store_true")
    p.add_argument("--model")
    p.add_argument("--input-set", choices=["EX", "EY", "EYD", "EYDX", "DX"])
    p.add_argument("--bypass-model", action="store_true", help="linear filter only")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nn3a", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance", help="echo cancel, denoise and level a recording")
    p.add_argument("--mic")
    p.add_argument("--farend")
    p.add_argument("--out")
    p.add_argument("--vad", help="VAD trace path (default: <out>.vad.jsonl)")
    p.add_argument("--oracle-near", help="clean near-end WAV; use its PSM instead of the model")
    p.add_argument("--manifest", help="process every row of a simulation manifest")
    p.add_argument("--out-dir")
    p.add_argument("--oracle", action="store_true", help="oracle masks in manifest mode")
    p.add_argument("--debug-jsonl")
    p.add_argument("--figure", help="write a waveform/VAD figure")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("train", help="train a desk-scale model on a simulated set")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="generate mixtures and a manifest")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=4.0)
    p.add_argument("--fe-st-fraction", type=float, default=0.0)
    p.add_argument("--speech-dir")
    p.add_argument("--noise-dir")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval", help="score processed files against a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--processed-dir", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="compare models / input sets on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", action="append", default=[], help="NAME=MODEL|linear|oracle")
    p.add_argument("--report", required=True)
    p.add_argument("--with-agc", action="store_true")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except WeightFileError as exc:
        log.error("model: %s", exc)
        return EXIT_IO
    except (ConfigError, ModelError, ManifestError) as exc:
        log.error("config: %s", exc)
        return EXIT_CONFIG
    except (InputError, AudioFormatError, OSError) as exc:
        log.error("input: %s", exc)
        return EXIT_IO
    except (NumericError, TrainingError, FloatingPointError) as exc:
        log.error("numeric: %s", exc)
        return EXIT_NUMERIC
    except ValueError as exc:
        log.error("config: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
