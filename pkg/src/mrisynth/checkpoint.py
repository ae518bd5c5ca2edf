"""Portable single-file checkpoint format.

Layout: a magic line, a line giving the manifest byte count, the manifest
(JSON key/value text: format version, model config, metadata, optimizer
hyperparameters, and per-tensor name/shape/dtype/byte-offset), then one
little-endian float32 binary blob holding every tensor back to back.
Round trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .errors import CheckpointError
from .model import FORMAT_VERSION, ModelConfig, ParameterStore, SwinUnetr

_MAGIC = b"MRISYNTH-CKPT"
_OPT_PREFIX = "optim."


def pack_optimizer(optimizer: torch.optim.Optimizer, module: SwinUnetr) -> dict[str, Any]:
    """Extract Adam state as named float32 arrays plus scalar metadata."""
    names = [name for name, _ in module.named_parameters()]
    sd = optimizer.state_dict()
    if len(sd["param_groups"]) != 1:
        raise CheckpointError("expected a single optimizer param group")
    group = sd["param_groups"][0]
    if group["params"] != list(range(len(names))):
        raise CheckpointError("optimizer params are not the module parameters in order")

    tensors: dict[str, np.ndarray] = {}
    steps: dict[str, float] = {}
    for idx, state in sd["state"].items():
        name = names[idx]
        steps[name] = float(state["step"])
        for key in ("exp_avg", "exp_avg_sq"):
            tensors[f"{name}.{key}"] = (
                state[key].detach().cpu().numpy().astype(np.float32, copy=True)
            )
    hyper = {
        k: group[k] for k in ("lr", "betas", "eps", "weight_decay", "amsgrad") if k in group
    }
    return {"tensors": tensors, "steps": steps, "hyper": hyper}


def unpack_optimizer(
    optimizer: torch.optim.Optimizer, module: SwinUnetr, blob: dict[str, Any]
) -> None:
    """Load packed Adam state into a freshly constructed optimizer."""
    names = [name for name, _ in module.named_parameters()]
    index = {name: i for i, name in enumerate(names)}
    state: dict[int, dict[str, torch.Tensor]] = {}
    for name, step in blob["steps"].items():
        if name not in index:
            raise CheckpointError(f"optimizer state for unknown parameter {name!r}")
        entry: dict[str, torch.Tensor] = {"step": torch.tensor(float(step))}
        for key in ("exp_avg", "exp_avg_sq"):
            arr = blob["tensors"].get(f"{name}.{key}")
            if arr is None:
                raise CheckpointError(f"missing optimizer tensor {name}.{key}")
            entry[key] = torch.from_numpy(np.array(arr, dtype=np.float32))
        state[index[name]] = entry

    sd = optimizer.state_dict()
    sd["state"] = state
    sd["param_groups"][0].update(blob.get("hyper", {}))
    if "betas" in sd["param_groups"][0]:
        sd["param_groups"][0]["betas"] = tuple(sd["param_groups"][0]["betas"])
    optimizer.load_state_dict(sd)


def save_checkpoint(
    path: str | Path,
    store: ParameterStore,
    opt_blob: dict[str, Any] | None = None,
) -> None:
    path = Path(path)
    entries: list[tuple[str, np.ndarray]] = list(store.tensors.items())
    if opt_blob is not None:
        entries += [(_OPT_PREFIX + k, v) for k, v in opt_blob["tensors"].items()]

    manifest_tensors = []
    offset = 0
    chunks: list[bytes] = []
    for name, arr in entries:
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest_tensors.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": "float32",
                "byte_offset": offset,
            }
        )
        chunks.append(raw)
        offset += len(raw)

    manifest = {
        "format_version": store.format_version,
        "config": store.config.to_dict(),
        "meta": store.meta,
        "optim": None
        if opt_blob is None
        else {"steps": opt_blob["steps"], "hyper": opt_blob["hyper"]},
        "tensors": manifest_tensors,
        "blob_nbytes": offset,
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC + b"\n")
        f.write(b"manifest-bytes: %d\n" % len(manifest_bytes))
        f.write(manifest_bytes)
        for chunk in chunks:
            f.write(chunk)


def load_checkpoint(path: str | Path) -> tuple[ParameterStore, dict[str, Any] | None]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != _MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (magic {magic!r})")
        size_line = f.readline().decode(errors="replace").strip()
        if not size_line.startswith("manifest-bytes:"):
            raise CheckpointError(f"{path}: malformed manifest size line {size_line!r}")
        manifest_nbytes = int(size_line.split(":", 1)[1])
        manifest_raw = f.read(manifest_nbytes)
        if len(manifest_raw) < manifest_nbytes:
            raise CheckpointError(f"{path}: truncated manifest")
        try:
            manifest = json.loads(manifest_raw)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: manifest is not valid JSON: {exc}") from exc
        blob = f.read(manifest["blob_nbytes"] + 1)

    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version mismatch "
            f"(file {manifest.get('format_version')}, supported {FORMAT_VERSION})"
        )
    if len(blob) != manifest["blob_nbytes"]:
        raise CheckpointError(
            f"{path}: corrupt blob (expected {manifest['blob_nbytes']} bytes, got {len(blob)})"
        )

    model_tensors: dict[str, np.ndarray] = {}
    opt_tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        if entry["dtype"] != "float32":
            raise CheckpointError(f"{path}: unsupported tensor dtype {entry['dtype']}")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["byte_offset"]
        end = start + 4 * count
        if end > len(blob):
            raise CheckpointError(f"{path}: corrupt blob (tensor {entry['name']} out of range)")
        arr = np.frombuffer(blob[start:end], dtype="<f4").reshape(shape).copy()
        if entry["name"].startswith(_OPT_PREFIX):
            opt_tensors[entry["name"][len(_OPT_PREFIX) :]] = arr
        else:
            model_tensors[entry["name"]] = arr

    store = ParameterStore(
        config=ModelConfig.from_dict(manifest["config"]),
        tensors=model_tensors,
        meta=manifest.get("meta", {}),
        format_version=manifest["format_version"],
    )
    opt_blob = None
    if manifest.get("optim") is not None:
        opt_blob = {
            "tensors": opt_tensors,
            "steps": manifest["optim"]["steps"],
            "hyper": manifest["optim"]["hyper"],
        }
    return store, opt_blob


def checkpoint_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
