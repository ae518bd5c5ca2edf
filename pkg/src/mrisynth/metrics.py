"""Volumetric similarity and segmentation-overlap metrics plus aggregation.

SSIM uses Gaussian-weighted local statistics over every fully interior
window. Dice and HD95 operate on label masks composed into the standard
whole-tumor / tumor-core / enhancing-tumor regions. Aggregation produces the
five summary statistics (mean, std, 25-quantile, median, 75-quantile) per
metric group, excluding undefined sentinel values with an explicit count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import DataError
from .volume_io import MASK_LABELS, Volume

#: reported when exactly one mask of a pair is empty (excluded from aggregates)
HD95_UNDEFINED = float("inf")


@dataclass(frozen=True)
class SsimConfig:
    window: int = 7
    gaussian_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    def __post_init__(self) -> None:
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if self.data_range <= 0 or self.gaussian_sigma <= 0:
            raise ValueError("data_range and gaussian_sigma must be > 0")


@dataclass(frozen=True)
class RegionSpec:
    name: str
    labels: frozenset[int]

    def __post_init__(self) -> None:
        if not self.labels:
            raise ValueError(f"region {self.name!r} has no labels")


WT = RegionSpec("WT", frozenset({1, 2, 3}))
TC = RegionSpec("TC", frozenset({1, 3}))
ET = RegionSpec("ET", frozenset({3}))
REGIONS: tuple[RegionSpec, ...] = (ET, TC, WT)


def _volume_data(v: Volume | np.ndarray) -> np.ndarray:
    return v.data if isinstance(v, Volume) else np.asarray(v)


def _check_same_geometry(a: Volume | np.ndarray, b: Volume | np.ndarray) -> None:
    da, db = _volume_data(a), _volume_data(b)
    if da.shape != db.shape:
        raise DataError(f"geometry mismatch: {da.shape} vs {db.shape}")
    if isinstance(a, Volume) and isinstance(b, Volume):
        if any(abs(x - y) > 1e-5 for x, y in zip(a.spacing, b.spacing)):
            raise DataError(f"geometry mismatch: spacing {a.spacing} vs {b.spacing}")


def _gaussian_kernel_1d(window: int, sigma: float) -> np.ndarray:
    x = np.arange(window, dtype=np.float64) - (window - 1) / 2.0
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def _local_weighted(vol: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = vol.astype(np.float64)
    for axis in range(3):
        out = ndimage.correlate1d(out, kernel, axis=axis, mode="constant", cval=0.0)
    r = (kernel.size - 1) // 2
    return out[r:-r, r:-r, r:-r]


def ssim(a: Volume | np.ndarray, b: Volume | np.ndarray, cfg: SsimConfig = SsimConfig()) -> float:
    """Structural similarity averaged over all fully interior local windows.

    Local means/variances/covariance are Gaussian-weighted (weighted
    population moments); the stabilized form uses C1=(k1*L)^2, C2=(k2*L)^2
    with L the data range. Result lies in [-1, 1].
    """
    _check_same_geometry(a, b)
    x = _volume_data(a).astype(np.float64)
    y = _volume_data(b).astype(np.float64)
    if any(s < cfg.window for s in x.shape):
        raise DataError(f"volume shape {x.shape} smaller than SSIM window {cfg.window}")

    kernel = _gaussian_kernel_1d(cfg.window, cfg.gaussian_sigma)
    mu_x = _local_weighted(x, kernel)
    mu_y = _local_weighted(y, kernel)
    xx = _local_weighted(x * x, kernel)
    yy = _local_weighted(y * y, kernel)
    xy = _local_weighted(x * y, kernel)
    var_x = xx - mu_x**2
    var_y = yy - mu_y**2
    cov = xy - mu_x * mu_y

    c1 = (cfg.k1 * cfg.data_range) ** 2
    c2 = (cfg.k2 * cfg.data_range) ** 2
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    )
    return float(ssim_map.mean())


def _region_mask(mask: Volume | np.ndarray, region: RegionSpec) -> np.ndarray:
    data = _volume_data(mask)
    labels = np.round(data).astype(np.int64)
    if not np.allclose(data, labels, atol=1e-6):
        raise DataError("mask has non-integer labels")
    found = set(int(v) for v in np.unique(labels))
    illegal = sorted(found - MASK_LABELS)
    if illegal:
        raise DataError(f"mask has illegal label(s) {illegal}")
    return np.isin(labels, sorted(region.labels))


def dice(
    pred: Volume | np.ndarray,
    ref: Volume | np.ndarray,
    region: RegionSpec,
    empty_value: float = 1.0,
) -> float:
    """Overlap 2|A^B| / (|A|+|B|) after binarizing by region membership.

    Both-empty pairs score empty_value (a correct empty prediction counts as
    a perfect match by default).
    """
    _check_same_geometry(pred, ref)
    a = _region_mask(pred, region)
    b = _region_mask(ref, region)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return empty_value
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def _surface_points(mask: np.ndarray, spacing: Sequence[float]) -> np.ndarray:
    # 6-connectivity surface: mask voxels with a background face neighbor
    structure = ndimage.generate_binary_structure(3, 1)
    eroded = ndimage.binary_erosion(mask, structure=structure, border_value=0)
    surface = mask & ~eroded
    pts = np.argwhere(surface).astype(np.float64)
    return pts * np.asarray(spacing, dtype=np.float64)


def hd95(
    pred: Volume | np.ndarray,
    ref: Volume | np.ndarray,
    region: RegionSpec,
    spacing: Sequence[float] | None = None,
) -> float:
    """95th percentile of symmetric surface-to-surface distances, in mm.

    Both masks empty -> 0.0; exactly one empty -> HD95_UNDEFINED, which
    aggregation excludes and reports.
    """
    _check_same_geometry(pred, ref)
    if spacing is None:
        spacing = pred.spacing if isinstance(pred, Volume) else (1.0, 1.0, 1.0)
    a = _region_mask(pred, region)
    b = _region_mask(ref, region)
    if not a.any() and not b.any():
        return 0.0
    if not a.any() or not b.any():
        return HD95_UNDEFINED
    pts_a = _surface_points(a, spacing)
    pts_b = _surface_points(b, spacing)
    d_ab = cKDTree(pts_b).query(pts_a)[0]
    d_ba = cKDTree(pts_a).query(pts_b)[0]
    return float(np.percentile(np.concatenate([d_ab, d_ba]), 95))


def compose_regions(mask: Volume | np.ndarray) -> dict[str, np.ndarray]:
    """Binary masks for the three nested evaluation regions (ET ⊆ TC ⊆ WT)."""
    return {region.name: _region_mask(mask, region) for region in REGIONS}


# ---------------------------------------------------------------------------
# per-case records and Table-style aggregation


@dataclass(frozen=True)
class MetricRecord:
    subject: str
    metric: str
    value: float
    missing_modality: str | None = None
    region: str | None = None


@dataclass(frozen=True)
class AggregateRow:
    metric: str
    group: tuple[tuple[str, str], ...]  # e.g. (("region", "ET"),)
    n: int
    n_excluded: int
    mean: float
    std: float
    q25: float
    median: float
    q75: float
    flags: tuple[str, ...] = ()


@dataclass
class MetricReport:
    """Per-case records plus aggregate statistics recomputable from them."""

    records: list[MetricRecord]
    aggregates: list[AggregateRow] = field(default_factory=list)

    def verify(self) -> bool:
        """Check that stored aggregates match a recomputation from records."""
        for row in self.aggregates:
            by = tuple(k for k, _ in row.group)
            fresh = {r.group: r for r in aggregate(self.records, by=by).aggregates}
            again = fresh.get(row.group)
            if again is None:
                return False
            for attr in ("n", "n_excluded", "mean", "std", "q25", "median", "q75"):
                got, want = getattr(row, attr), getattr(again, attr)
                if isinstance(got, float):
                    if math.isnan(got) and math.isnan(want):
                        continue
                    if not math.isclose(got, want, rel_tol=1e-12, abs_tol=1e-12):
                        return False
                elif got != want:
                    return False
        return True


def _group_key(record: MetricRecord, by: Sequence[str]) -> tuple[tuple[str, str], ...]:
    parts = []
    for key in by:
        value = getattr(record, key)
        parts.append((key, "-" if value is None else str(value)))
    return tuple(parts)


def aggregate(
    records: Iterable[MetricRecord], by: Sequence[str] = ("metric", "region")
) -> MetricReport:
    """Summarize records into mean/std/quantile rows per group.

    Sample standard deviation (n-1); quantiles by linear interpolation.
    Non-finite values are excluded with their count reported; a single
    surviving record yields std 0.0 and a "single_record" flag.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to aggregate")
    groups: dict[tuple[tuple[str, str], ...], list[float]] = {}
    for rec in records:
        groups.setdefault(_group_key(rec, by), []).append(rec.value)

    rows = []
    for key in sorted(groups):
        values = np.asarray(groups[key], dtype=np.float64)
        finite = values[np.isfinite(values)]
        n_excluded = int(values.size - finite.size)
        flags: list[str] = []
        if n_excluded:
            flags.append("excluded_undefined")
        if finite.size == 0:
            rows.append(
                AggregateRow(
                    metric=dict(key).get("metric", "-"),
                    group=key,
                    n=0,
                    n_excluded=n_excluded,
                    mean=math.nan,
                    std=math.nan,
                    q25=math.nan,
                    median=math.nan,
                    q75=math.nan,
                    flags=(*flags, "all_excluded"),
                )
            )
            continue
        if finite.size == 1:
            std = 0.0
            flags.append("single_record")
        else:
            std = float(np.std(finite, ddof=1))
        q25, median, q75 = (float(q) for q in np.percentile(finite, [25, 50, 75]))
        rows.append(
            AggregateRow(
                metric=dict(key).get("metric", "-"),
                group=key,
                n=int(finite.size),
                n_excluded=n_excluded,
                mean=float(np.mean(finite)),
                std=std,
                q25=q25,
                median=median,
                q75=q75,
                flags=tuple(flags),
            )
        )
    return MetricReport(records=records, aggregates=rows)
