"""Checkpoint directory format.

``manifest`` is JSON describing the model configuration, schedule
parameters, normalization state, training metadata and the tensor layout;
``weights.bin`` is the little-endian float32 concatenation of all tensors
in manifest order.  Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .model import DenoiserConfig, DenoiserParams, param_shapes

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    denoiser: DenoiserConfig
    schedule_T: int
    beta_start: float
    beta_end: float
    schedule_kind: str
    params: DenoiserParams
    norm_mean: np.ndarray
    norm_std: np.ndarray
    normalize: bool
    meta: dict = field(default_factory=dict)


def _tensor_items(ckpt: Checkpoint):
    items = [(name, ckpt.params.tensors[name]) for name in ckpt.params.names]
    items.append(("norm_mean", ckpt.norm_mean))
    items.append(("norm_std", ckpt.norm_std))
    return items


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    os.makedirs(path, exist_ok=True)
    tensors = []
    offset = 0
    blobs = []
    for name, arr in _tensor_items(ckpt):
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "size": len(blob)})
        offset += len(blob)
        blobs.append(blob)
    manifest = {
        "format_version": FORMAT_VERSION,
        "denoiser": {
            "cluster_count": ckpt.denoiser.cluster_count,
            "layers": ckpt.denoiser.layers,
            "channels": ckpt.denoiser.channels,
            "heads": ckpt.denoiser.heads,
            "embed_dim": ckpt.denoiser.embed_dim,
        },
        "schedule": {
            "steps": ckpt.schedule_T,
            "beta_start": ckpt.beta_start,
            "beta_end": ckpt.beta_end,
            "kind": ckpt.schedule_kind,
        },
        "normalize": ckpt.normalize,
        "meta": ckpt.meta,
        "tensors": tensors,
    }
    with open(os.path.join(path, "manifest"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    with open(os.path.join(path, "weights.bin"), "wb") as fh:
        for blob in blobs:
            fh.write(blob)


def _require(manifest: dict, key: str):
    if key not in manifest:
        raise CheckpointError(f"manifest missing field {key!r}")
    return manifest[key]


def load_checkpoint(path) -> Checkpoint:
    manifest_path = os.path.join(path, "manifest")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise CheckpointError(f"{path}: no manifest file") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{manifest_path}: corrupt manifest: {exc}") from None

    version = _require(manifest, "format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version!r}, expected {FORMAT_VERSION}")
    dcfg_raw = _require(manifest, "denoiser")
    for key in ("cluster_count", "layers", "channels", "heads", "embed_dim"):
        _require(dcfg_raw, key)
    dcfg = DenoiserConfig(**dcfg_raw)
    sched = _require(manifest, "schedule")
    for key in ("steps", "beta_start", "beta_end", "kind"):
        _require(sched, key)
    tensor_specs = _require(manifest, "tensors")

    with open(os.path.join(path, "weights.bin"), "rb") as fh:
        raw = fh.read()

    arrays = {}
    for spec in tensor_specs:
        name, shape = spec["name"], tuple(spec["shape"])
        start, size = spec["offset"], spec["size"]
        if start + size > len(raw):
            raise CheckpointError(f"weights.bin truncated while reading tensor {name!r}")
        arr = np.frombuffer(raw[start : start + size], dtype="<f4")
        if arr.size != int(np.prod(shape)):
            raise CheckpointError(f"tensor {name!r}: size does not match shape {shape}")
        arrays[name] = arr.reshape(shape).copy()

    expected = param_shapes(dcfg)
    missing = [n for n in expected if n not in arrays]
    if missing:
        raise CheckpointError(f"manifest missing tensor {missing[0]!r}")
    for name, shape in expected.items():
        if arrays[name].shape != shape:
            raise CheckpointError(f"tensor {name!r}: shape {arrays[name].shape} != {shape}")
    for name in ("norm_mean", "norm_std"):
        if name not in arrays:
            raise CheckpointError(f"manifest missing tensor {name!r}")

    params = DenoiserParams({name: arrays[name] for name in expected})
    return Checkpoint(
        denoiser=dcfg,
        schedule_T=int(sched["steps"]),
        beta_start=float(sched["beta_start"]),
        beta_end=float(sched["beta_end"]),
        schedule_kind=str(sched["kind"]),
        params=params,
        norm_mean=arrays["norm_mean"].astype(np.float64),
        norm_std=arrays["norm_std"].astype(np.float64),
        normalize=bool(manifest.get("normalize", True)),
        meta=dict(manifest.get("meta", {})),
    )
