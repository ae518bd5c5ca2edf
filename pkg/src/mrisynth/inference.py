"""Whole-volume synthesis by overlapping tiles with Gaussian-weighted fusion.

Tile corners sit on a regular grid with stride patch*(1-overlap); the last
corner per axis is clamped flush with the volume edge so every forward pass
sees the trained patch shape. Per-voxel outputs are accumulated as
sum(w*out)/sum(w), which makes the result independent of tile visit order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DataError, NumericError
from .model import ParameterStore, forward
from .training import input_modalities
from .volume_io import Study, Volume


@dataclass(frozen=True)
class TilingConfig:
    """Sliding-window geometry and fusion weights."""

    patch: int = 128
    overlap: float = 0.5
    sigma_scale: float = 0.125
    weight_floor: float = 1e-8

    def __post_init__(self) -> None:
        if self.patch < 1:
            raise ValueError(f"patch must be >= 1, got {self.patch}")
        if not 0 <= self.overlap < 1:
            raise ValueError(f"overlap must lie in [0, 1), got {self.overlap}")
        if self.sigma_scale <= 0:
            raise ValueError(f"sigma_scale must be > 0, got {self.sigma_scale}")


def gaussian_weight_map(
    patch: int, sigma_scale: float = 0.125, weight_floor: float = 1e-8
) -> np.ndarray:
    """Separable unit-peak Gaussian over a patch^3 grid, floored from below.

    Centered at the exact patch center (p-1)/2 with sigma = sigma_scale *
    patch per axis, so the map is symmetric under reflection of any axis and
    the center voxel of an odd patch attains exactly 1.
    """
    if patch < 1:
        raise ValueError(f"patch must be >= 1, got {patch}")
    sigma = sigma_scale * patch
    axis = np.arange(patch, dtype=np.float64) - (patch - 1) / 2.0
    g1 = np.exp(-(axis**2) / (2.0 * sigma**2))
    g3 = g1[:, None, None] * g1[None, :, None] * g1[None, None, :]
    return np.maximum(g3, weight_floor)


def tile_corners(size: int, patch: int, overlap: float) -> list[int]:
    """Corner offsets along one axis; the final tile ends at the volume edge."""
    if size < patch:
        raise ValueError(f"axis size {size} smaller than patch {patch}")
    stride = max(1, int(round(patch * (1.0 - overlap))))
    corners = list(range(0, size - patch + 1, stride))
    if corners[-1] != size - patch:
        corners.append(size - patch)
    return corners


def sliding_window_apply(
    forward_fn: Callable[[np.ndarray], np.ndarray],
    channels: np.ndarray,
    cfg: TilingConfig,
) -> np.ndarray:
    """Tile a (C, D, H, W) stack, run forward_fn per tile, fuse the outputs.

    forward_fn maps (1, C, p, p, p) -> (1, C_out, p, p, p). Volumes smaller
    than the patch are zero-padded and the result is cropped back.
    """
    if channels.ndim != 4:
        raise ValueError(f"expected (C, D, H, W), got {channels.shape}")
    orig_shape = channels.shape[1:]
    p = cfg.patch
    pads = [(0, max(0, p - s)) for s in orig_shape]
    if any(hi for _, hi in pads):
        channels = np.pad(channels, [(0, 0), *pads])
    shape = channels.shape[1:]

    weight = gaussian_weight_map(p, cfg.sigma_scale, cfg.weight_floor)
    corners = [tile_corners(shape[a], p, cfg.overlap) for a in range(3)]

    acc: np.ndarray | None = None
    wacc = np.zeros(shape, dtype=np.float64)
    for cd in corners[0]:
        for ch in corners[1]:
            for cw in corners[2]:
                block = (slice(cd, cd + p), slice(ch, ch + p), slice(cw, cw + p))
                tile = channels[(slice(None), *block)][None]
                out = np.asarray(forward_fn(tile.astype(np.float32)))
                if out.ndim != 5 or out.shape[0] != 1 or out.shape[2:] != (p, p, p):
                    raise ValueError(
                        f"forward_fn returned shape {out.shape}, expected (1, C_out, {p}, {p}, {p})"
                    )
                if acc is None:
                    acc = np.zeros((out.shape[1], *shape), dtype=np.float64)
                acc[(slice(None), *block)] += weight * out[0].astype(np.float64)
                wacc[block] += weight
    assert acc is not None

    if wacc.min() <= 0:
        raise NumericError("sliding-window fusion left voxels with zero total weight")
    fused = acc / wacc
    if not np.isfinite(fused).all():
        raise NumericError("sliding-window fusion produced non-finite voxels")
    crop = tuple(slice(0, s) for s in orig_shape)
    return fused[(slice(None), *crop)].astype(np.float32)


def sliding_window_synthesize(
    params: ParameterStore,
    study: Study,
    cfg: TilingConfig,
) -> Volume:
    """Synthesize the missing modality of a standardized three-modality study.

    The study's modality set must be exactly the input set recorded in the
    checkpoint's scenario; the output stays in standardized intensity space
    and carries the missing modality's tag.
    """
    scenario = params.scenario
    if scenario is None:
        raise DataError("parameter store has no recorded scenario (untrained model?)")
    required = input_modalities(scenario)
    present = tuple(sorted(study.modalities))
    if present != required:
        raise DataError(
            f"scenario mismatch: checkpoint synthesizes {scenario} from {required}, "
            f"study {study.subject_id!r} has {present}"
        )
    ref = study.modalities[required[0]]
    for name in required[1:]:
        if study.modalities[name].shape != ref.shape:
            raise DataError(f"study {study.subject_id!r}: geometry mismatch on {name}")

    stack = np.stack([study.modalities[name].data for name in required])
    fused = sliding_window_apply(lambda tile: forward(params, tile), stack, cfg)
    return ref.with_data(fused[0], modality=scenario)
