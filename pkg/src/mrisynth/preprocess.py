"""Per-volume intensity standardization and evaluation-time rescaling.

Standardization maps each voxel x to (x - mu) / sigma with mu/sigma the mean
and population standard deviation of the volume's voxel values; the inverse
undoes it. Statistics can be taken over all voxels (default) or over the
nonzero support only, since challenge volumes have zeroed backgrounds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import NumericError
from .volume_io import Volume

ZScoreMode = Literal["all_voxels", "nonzero_voxels"]

SIGMA_FLOOR = 1e-8


@dataclass(frozen=True)
class ZScoreParams:
    """Mean/standard-deviation pair in raw intensity units."""

    mu: float
    sigma: float
    mode: ZScoreMode = "all_voxels"

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise NumericError(f"sigma must be > 0, got {self.sigma}")


def zscore_fit(v: Volume, mode: ZScoreMode = "all_voxels") -> ZScoreParams:
    """Fit (mu, sigma) on a volume.

    sigma is the population standard deviation. Raises NumericError for a
    (near-)constant volume, which indicates corrupt input.
    """
    if mode == "all_voxels":
        values = v.data.reshape(-1)
    elif mode == "nonzero_voxels":
        values = v.data[v.data != 0]
    else:
        raise ValueError(f"unknown zscore mode {mode!r}")
    if values.size < 2:
        raise NumericError(
            f"volume {v.modality}: needs >= 2 voxels in {mode} support, got {values.size}"
        )
    mu = float(np.mean(values, dtype=np.float64))
    sigma = float(np.std(values, dtype=np.float64))
    if sigma < SIGMA_FLOOR:
        raise NumericError(
            f"volume {v.modality}: degenerate (constant) volume, sigma={sigma:.3e}"
        )
    return ZScoreParams(mu=mu, sigma=sigma, mode=mode)


def zscore_apply(v: Volume, p: ZScoreParams) -> Volume:
    """Standardize: z = (x - mu) / sigma. Geometry is unchanged."""
    z = (v.data.astype(np.float64) - p.mu) / p.sigma
    return v.with_data(z.astype(np.float32))


def zscore_invert(v: Volume, p: ZScoreParams) -> Volume:
    """Undo standardization: x = z * sigma + mu."""
    x = v.data.astype(np.float64) * p.sigma + p.mu
    return v.with_data(x.astype(np.float32))


def minmax_rescale(a: Volume, b: Volume) -> tuple[Volume, Volume]:
    """Map each volume affinely to [0, 1] using its own (min, max).

    Constant volumes map to all-zeros. Used to put a synthesized volume and
    its reference on a common scale before similarity scoring, since the
    reference's standardization parameters are unknown at test time.
    """
    if a.shape != b.shape:
        raise ValueError(f"geometry mismatch: {a.shape} vs {b.shape}")
    return _rescale_one(a), _rescale_one(b)


def _rescale_one(v: Volume) -> Volume:
    lo = float(v.data.min())
    hi = float(v.data.max())
    if hi - lo < SIGMA_FLOOR:
        return v.with_data(np.zeros_like(v.data))
    scaled = (v.data.astype(np.float64) - lo) / (hi - lo)
    return v.with_data(scaled.astype(np.float32))
