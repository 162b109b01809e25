"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"MDIT"                      magic
    u32                          format version
    u64                          manifest length in bytes
    manifest                     UTF-8 JSON
    payload                      float32 tensors, concatenated in manifest order
    u64                          checksum of the payload (8-byte BLAKE2b digest)

The manifest records every tensor's name, shape and dtype, the training step,
per-parameter optimizer step counts, the generator state, the full run config
and its hash.
"""

from __future__ import annotations

import base64
import dataclasses
import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .errors import (
    CheckpointFormatError,
    CheckpointShapeError,
    CheckpointVersionError,
    ChecksumError,
)

MAGIC = b"MDIT"
VERSION = 1


def payload_checksum(payload: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def save_checkpoint(state, path) -> Path:
    path = Path(path)
    tensors = state.tensors()
    manifest = {
        "step": state.step,
        "config": state.config.to_dict(),
        "config_hash": state.config.config_hash(),
        "rng_state": base64.b64encode(state.generator.get_state().numpy().tobytes()).decode("ascii"),
        "adam_steps": state.adam_steps(),
        "tensors": [{"name": k, "shape": list(v.shape), "dtype": "float32"} for k, v in tensors.items()],
    }
    payload = b"".join(v.detach().cpu().to(torch.float32).numpy().astype("<f4").tobytes() for v in tensors.values())
    head = json.dumps(manifest, sort_keys=True).encode()
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(head)))
        fh.write(head)
        fh.write(payload)
        fh.write(struct.pack("<Q", payload_checksum(payload)))
    tmp.replace(path)
    return path


def read_checkpoint(path):
    """Parse and verify a checkpoint file. Returns ``(manifest, {name: ndarray})``."""
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: not an MDIT checkpoint")
    version, head_len = struct.unpack_from("<IQ", data, 4)
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {VERSION}")
    start = 16
    if start + head_len > len(data):
        raise CheckpointFormatError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[start : start + head_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: manifest is corrupt ({exc})") from exc
    sizes = [int(np.prod(t["shape"], dtype=np.int64)) * 4 for t in manifest["tensors"]]
    body = start + head_len
    payload_len = sum(sizes)
    if len(data) != body + payload_len + 8:
        raise CheckpointFormatError(
            f"{path}: expected {body + payload_len + 8} bytes, found {len(data)} (truncated or padded)"
        )
    payload = data[body : body + payload_len]
    (stored,) = struct.unpack_from("<Q", data, body + payload_len)
    if payload_checksum(payload) != stored:
        raise ChecksumError(f"{path}: payload checksum mismatch")
    arrays, offset = {}, 0
    for meta, size in zip(manifest["tensors"], sizes):
        arrays[meta["name"]] = np.frombuffer(payload, dtype="<f4", count=size // 4, offset=offset).reshape(meta["shape"])
        offset += size
    return manifest, arrays


def load_checkpoint(path, backbone=None):
    """Rebuild a ``TrainState`` from ``path``.

    When ``backbone`` (a ``BackboneConfig``) is given, the stored model must
    match it or ``CheckpointShapeError`` is raised.
    """
    from .trainer import create_train_state

    manifest, arrays = read_checkpoint(path)
    config = RunConfig.from_dict(manifest["config"])
    if config.config_hash() != manifest.get("config_hash"):
        raise ChecksumError(f"{path}: stored config does not match its hash")
    if backbone is not None and backbone != config.backbone:
        expected = create_train_state(_with_backbone(config, backbone))
        want = {k: tuple(v.shape) for k, v in expected.tensors().items()}
        have = {k: tuple(v.shape) for k, v in arrays.items()}
        diffs = sorted(k for k in set(want) | set(have) if want.get(k) != have.get(k))
        detail = ", ".join(f"{k}: file {have.get(k)} vs model {want.get(k)}" for k in diffs[:8])
        raise CheckpointShapeError(
            f"{path}: checkpoint backbone differs from the requested one" + (f"; {detail}" if detail else "")
        )
    state = create_train_state(config)
    tensors = state.tensors()
    if set(tensors) != set(arrays):
        raise CheckpointShapeError(f"{path}: tensor names do not match the configured model")
    with torch.no_grad():
        for name, target in tensors.items():
            src = arrays[name]
            if tuple(src.shape) != tuple(target.shape):
                raise CheckpointShapeError(f"{path}: {name} has shape {src.shape}, model expects {tuple(target.shape)}")
    params = dict(state.model.named_parameters())
    ema = dict(state.ema.named_parameters())
    adam_steps = manifest["adam_steps"]
    with torch.no_grad():
        for name, p in params.items():
            p.copy_(torch.from_numpy(arrays[f"params/{name}"].copy()))
            ema[name].copy_(torch.from_numpy(arrays[f"ema/{name}"].copy()))
            steps = int(adam_steps[name])
            if steps > 0:
                state.optimizer.state[p] = {
                    "step": torch.tensor(float(steps)),
                    "exp_avg": torch.from_numpy(arrays[f"adam_m/{name}"].copy()),
                    "exp_avg_sq": torch.from_numpy(arrays[f"adam_v/{name}"].copy()),
                }
    rng = np.frombuffer(base64.b64decode(manifest["rng_state"]), dtype=np.uint8).copy()
    state.generator.set_state(torch.from_numpy(rng))
    state.step = int(manifest["step"])
    return state


def _with_backbone(config: RunConfig, backbone) -> RunConfig:
    data = dataclasses.replace(
        config.data, image_size=backbone.image_size, channels=backbone.channels, num_classes=backbone.num_classes,
        centers=(config.data.centers * backbone.num_classes)[: backbone.num_classes],
    )
    return dataclasses.replace(config, backbone=backbone, data=data)
