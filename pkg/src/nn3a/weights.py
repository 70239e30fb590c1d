"""Weight file reader/writer.

Layout (all integers little-endian)::

    b"NN3A"                 magic
    uint32                  format version (1)
    uint32                  header length in bytes
    header                  UTF-8 JSON: model config, STFT geometry,
                            feature version, tensor table
    tensor data             float32 LE, concatenated in table order

Each tensor table entry is ``{"name", "shape", "offset", "nbytes"}`` with
``offset`` relative to the start of the tensor data block.
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .audio import StftConfig
from .model import FEATURE_VERSION, ModelConfig, ModelError, param_shapes

MAGIC = b"NN3A"
FORMAT_VERSION = 1


class WeightFileError(ModelError):
    pass


def save_params(cfg: ModelConfig, params, path, stft_cfg: StftConfig | None = None,
                extra: dict | None = None) -> None:
    stft_cfg = stft_cfg or StftConfig()
    table, blobs, offset = [], [], 0
    for name, shape in param_shapes(cfg).items():
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        if arr.shape != shape:
            raise WeightFileError(f"tensor {name} has shape {arr.shape}, expected {shape}")
        blob = arr.tobytes()
        table.append({"name": name, "shape": list(shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "feature_version": FEATURE_VERSION,
        "model": asdict(cfg),
        "stft": stft_cfg.header(),
        "tensors": table,
    }
    if extra:
        header["extra"] = extra
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", FORMAT_VERSION, len(head)) + head)
        for blob in blobs:
            fh.write(blob)


def read_header(path) -> dict:
    header, _ = _read(path)
    return header


def _read(path):
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise WeightFileError(f"{path}: not an NN3A weight file")
    version, head_len = struct.unpack("<II", raw[4:12])
    if version != FORMAT_VERSION:
        raise WeightFileError(f"{path}: unsupported format version {version}")
    if len(raw) < 12 + head_len:
        raise WeightFileError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12:12 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFileError(f"{path}: corrupt header") from exc
    return header, raw[12 + head_len:]


def load_params(path, stft_cfg: StftConfig | None = None):
    """Load ``(ModelConfig, params)``; params come back as float64 arrays."""
    header, data = _read(path)
    if header.get("feature_version") != FEATURE_VERSION:
        raise WeightFileError(
            f"{path}: feature version {header.get('feature_version')!r} != {FEATURE_VERSION!r}")
    try:
        cfg = ModelConfig(**header["model"])
    except (TypeError, KeyError) as exc:
        raise WeightFileError(f"{path}: bad model config in header") from exc
    stft = header.get("stft", {})
    if cfg.num_bins != stft.get("fft_len", -2) // 2 + 1:
        raise WeightFileError(
            f"{path}: model num_bins {cfg.num_bins} inconsistent with fft_len {stft.get('fft_len')}")
    if stft_cfg is not None and stft != stft_cfg.header():
        raise WeightFileError(f"{path}: STFT geometry {stft} does not match pipeline {stft_cfg.header()}")

    expected = param_shapes(cfg)
    entries = {e["name"]: e for e in header.get("tensors", [])}
    params = OrderedDict()
    for name, shape in expected.items():
        entry = entries.get(name)
        if entry is None:
            raise WeightFileError(f"{path}: tensor {name} missing")
        if tuple(entry["shape"]) != shape:
            raise WeightFileError(f"{path}: tensor {name} has shape {entry['shape']}, expected {list(shape)}")
        nbytes = 4 * int(np.prod(shape))
        start = entry["offset"]
        if entry["nbytes"] != nbytes or start + nbytes > len(data):
            raise WeightFileError(f"{path}: tensor {name} truncated")
        arr = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=start)
        params[name] = arr.reshape(shape).astype(np.float64)
    return cfg, params
