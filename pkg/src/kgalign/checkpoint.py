"""Checkpoint directories: ``manifest.json`` plus one raw little-endian float32 file per array."""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from .encoder import PARAM_NAMES, EncoderConfig, ParameterSet

MANIFEST = "manifest.json"
FORMAT = "kgalign-checkpoint"
DTYPE = "f32le"


class CheckpointError(Exception):
    """Raised for unreadable or inconsistent checkpoints."""


def save_checkpoint(path, params: ParameterSet, enc_cfg: Optional[EncoderConfig] = None,
                    meta: Optional[Dict[str, Any]] = None) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, arr in params.arrays().items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        fname = f"{name}.f32"
        (root / fname).write_bytes(data.tobytes(order="C"))
        entries.append({"name": name, "shape": list(arr.shape), "dtype": DTYPE, "file": fname})
    manifest = {"format": FORMAT, "version": 1, "arrays": entries}
    if enc_cfg is not None:
        manifest["encoder"] = asdict(enc_cfg)
    if meta:
        manifest["meta"] = meta
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return root


def read_manifest(path) -> dict:
    root = Path(path)
    mpath = root / MANIFEST
    if not mpath.is_file():
        raise CheckpointError(f"no {MANIFEST} in {root}")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{mpath}: invalid JSON ({exc})") from None
    if not isinstance(manifest, dict):
        raise CheckpointError(f"{mpath}: manifest must be a JSON object")
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{mpath}: field 'format' must be {FORMAT!r}")
    if not isinstance(manifest.get("arrays"), list):
        raise CheckpointError(f"{mpath}: field 'arrays' must be a list")
    return manifest


def load_checkpoint(path):
    """Return ``(params, encoder_config or None, meta dict)``; arrays come back as float32."""
    root = Path(path)
    manifest = read_manifest(root)
    arrays = {}
    for i, entry in enumerate(manifest["arrays"]):
        where = f"{root / MANIFEST}: arrays[{i}]"
        if not isinstance(entry, dict):
            raise CheckpointError(f"{where} must be an object")
        name = entry.get("name")
        if name not in PARAM_NAMES:
            raise CheckpointError(f"{where}: field 'name' has unknown value {name!r}")
        if entry.get("dtype") != DTYPE:
            raise CheckpointError(f"{where}: field 'dtype' must be {DTYPE!r}")
        shape = entry.get("shape")
        if not isinstance(shape, list) or not all(isinstance(s, int) and s >= 0 for s in shape):
            raise CheckpointError(f"{where}: field 'shape' must be a list of non-negative integers")
        fpath = root / entry.get("file", f"{name}.f32")
        if not fpath.is_file():
            raise CheckpointError(f"{where}: field 'file' points to missing {fpath.name}")
        raw = fpath.read_bytes()
        expected = int(np.prod(shape, dtype=np.int64)) * 4
        if len(raw) != expected:
            raise CheckpointError(f"{where}: field 'shape' {shape} needs {expected} bytes, file has {len(raw)}")
        arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    missing = [n for n in PARAM_NAMES if n not in arrays]
    if missing:
        raise CheckpointError(f"{root / MANIFEST}: field 'arrays' lacks {missing}")
    enc_cfg = None
    if "encoder" in manifest:
        try:
            enc_cfg = EncoderConfig(**manifest["encoder"])
        except TypeError as exc:
            raise CheckpointError(f"{root / MANIFEST}: field 'encoder' is invalid ({exc})") from None
    return ParameterSet(**arrays), enc_cfg, manifest.get("meta", {})
