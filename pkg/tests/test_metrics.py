"""Metric implementations versus independent brute-force oracles."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrisynth.errors import DataError
from mrisynth.metrics import (
    ET,
    HD95_UNDEFINED,
    REGIONS,
    TC,
    WT,
    MetricRecord,
    RegionSpec,
    SsimConfig,
    aggregate,
    compose_regions,
    dice,
    hd95,
    ssim,
)
from mrisynth.volume_io import Volume

from conftest import make_volume


# ---------------------------------------------------------------------------
# brute-force oracles (kept deliberately independent of the implementations)


def ssim_bruteforce(x, y, window=7, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Literal per-window loop: weighted moments at every interior center."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    r = window // 2
    ax = np.arange(window) - r
    k1d = np.exp(-(ax**2) / (2 * sigma**2))
    k3 = k1d[:, None, None] * k1d[None, :, None] * k1d[None, None, :]
    k3 = k3 / k3.sum()
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    vals = []
    for i in range(r, x.shape[0] - r):
        for j in range(r, x.shape[1] - r):
            for k in range(r, x.shape[2] - r):
                wx = x[i - r : i + r + 1, j - r : j + r + 1, k - r : k + r + 1]
                wy = y[i - r : i + r + 1, j - r : j + r + 1, k - r : k + r + 1]
                mx = (k3 * wx).sum()
                my = (k3 * wy).sum()
                vx = (k3 * wx * wx).sum() - mx * mx
                vy = (k3 * wy * wy).sum() - my * my
                cxy = (k3 * wx * wy).sum() - mx * my
                vals.append(
                    ((2 * mx * my + c1) * (2 * cxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2))
                )
    return float(np.mean(vals))


def dice_bruteforce(pred, ref, labels):
    inter = a_size = b_size = 0
    it = np.nditer(pred, flags=["multi_index"])
    for v in it:
        idx = it.multi_index
        in_a = int(v) in labels
        in_b = int(ref[idx]) in labels
        a_size += in_a
        b_size += in_b
        inter += in_a and in_b
    if a_size + b_size == 0:
        return 1.0
    return 2.0 * inter / (a_size + b_size)


def hd95_bruteforce(pred, ref, labels, spacing=(1.0, 1.0, 1.0)):
    def surface(mask):
        pts = []
        for idx in np.argwhere(mask):
            i, j, k = idx
            for d in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                ni, nj, nk = i + d[0], j + d[1], k + d[2]
                outside = not (
                    0 <= ni < mask.shape[0] and 0 <= nj < mask.shape[1] and 0 <= nk < mask.shape[2]
                )
                if outside or not mask[ni, nj, nk]:
                    pts.append((i, j, k))
                    break
        return np.asarray(pts, dtype=np.float64) * np.asarray(spacing)

    a = np.isin(pred, sorted(labels))
    b = np.isin(ref, sorted(labels))
    if not a.any() and not b.any():
        return 0.0
    if not a.any() or not b.any():
        return float("inf")
    pa, pb = surface(a), surface(b)
    d_ab = [min(np.linalg.norm(p - q) for q in pb) for p in pa]
    d_ba = [min(np.linalg.norm(p - q) for q in pa) for p in pb]
    return float(np.percentile(np.asarray(d_ab + d_ba), 95))


def _mask_volume(labels: np.ndarray) -> Volume:
    return Volume(
        data=labels.astype(np.float32), spacing=(1, 1, 1), affine=np.eye(4), modality="SEG"
    )


# ---------------------------------------------------------------------------


class TestSsim:
    def test_self_similarity(self):
        vol = make_volume((12, 12, 12), seed=0)
        assert ssim(vol, vol) == pytest.approx(1.0, abs=1e-6)

    def test_against_bruteforce(self):
        rng = np.random.default_rng(0)
        for trial in range(5):
            x = rng.uniform(0, 1, size=(12, 12, 12))
            y = np.clip(x + rng.normal(scale=0.1, size=x.shape), 0, 1)
            got = ssim(x, y)
            want = ssim_bruteforce(x, y)
            assert got == pytest.approx(want, abs=1e-6), trial

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(0, 1, size=(10, 10, 10))
        y = rng.uniform(0, 1, size=(10, 10, 10))
        assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-9)

    def test_constant_offset_luminance(self):
        # both constant: variance terms vanish, leaving the luminance ratio
        x = np.zeros((9, 9, 9))
        y = np.full((9, 9, 9), 0.5)
        c1 = (0.01 * 1.0) ** 2
        expected = (2 * 0.0 * 0.5 + c1) / (0.0**2 + 0.5**2 + c1)
        got = ssim(x, y)
        assert got == pytest.approx(expected, rel=1e-9)
        assert got < 0.5

    def test_geometry_mismatch(self):
        with pytest.raises(DataError, match="geometry"):
            ssim(np.zeros((8, 8, 8)), np.zeros((8, 8, 9)))

    def test_volume_smaller_than_window(self):
        with pytest.raises(DataError, match="window"):
            ssim(np.zeros((4, 8, 8)), np.zeros((4, 8, 8)))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SsimConfig(window=4)
        with pytest.raises(ValueError):
            SsimConfig(data_range=0.0)


class TestDice:
    def test_identical_masks(self):
        m = np.zeros((6, 6, 6))
        m[2:4, 2:4, 2:4] = 3
        assert dice(m, m, ET) == 1.0

    def test_disjoint_masks(self):
        a = np.zeros((6, 6, 6))
        b = np.zeros((6, 6, 6))
        a[0, 0, 0] = 3
        b[5, 5, 5] = 3
        assert dice(a, b, ET) == 0.0

    def test_hand_counted_overlap(self):
        a = np.zeros((4, 4, 4))
        b = np.zeros((4, 4, 4))
        a[0, 0, :4] = 1  # |A| = 4
        b[0, 0, 2:4] = 1  # overlap 2
        b[1, 1, :2] = 1  # |B| = 4
        assert dice(a, b, TC) == pytest.approx(0.5)

    def test_both_empty_convention(self):
        z = np.zeros((4, 4, 4))
        assert dice(z, z, WT) == 1.0
        assert dice(z, z, WT, empty_value=0.0) == 0.0

    def test_against_bruteforce(self):
        rng = np.random.default_rng(2)
        for trial in range(50):
            a = rng.integers(0, 4, size=(12, 12, 12))
            b = rng.integers(0, 4, size=(12, 12, 12))
            region = REGIONS[trial % 3]
            got = dice(a, b, region)
            want = dice_bruteforce(a, b, region.labels)
            assert got == want, (trial, region.name)

    def test_symmetry_and_range(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            a = rng.integers(0, 4, size=(8, 8, 8))
            b = rng.integers(0, 4, size=(8, 8, 8))
            d_ab = dice(a, b, WT)
            assert d_ab == dice(b, a, WT)
            assert 0.0 <= d_ab <= 1.0

    def test_volume_inputs_checked(self):
        a = _mask_volume(np.zeros((4, 4, 4)))
        b = Volume(
            data=np.zeros((4, 4, 4), dtype=np.float32),
            spacing=(2, 2, 2),
            affine=np.diag([2.0, 2, 2, 1]),
            modality="SEG",
        )
        with pytest.raises(DataError, match="geometry"):
            dice(a, b, WT)


class TestHd95:
    def test_identical_masks(self):
        m = np.zeros((6, 6, 6))
        m[2:4, 2:4, 2:4] = 1
        assert hd95(m, m, WT) == 0.0

    def test_single_voxels_three_apart(self):
        a = np.zeros((6, 6, 6))
        b = np.zeros((6, 6, 6))
        a[0, 0, 0] = 1
        b[3, 0, 0] = 1
        assert hd95(a, b, WT) == pytest.approx(3.0)

    def test_one_empty_is_sentinel(self):
        a = np.zeros((4, 4, 4))
        b = np.zeros((4, 4, 4))
        b[1, 1, 1] = 1
        assert hd95(a, b, WT) == HD95_UNDEFINED
        assert math.isinf(hd95(a, b, WT))

    def test_both_empty_is_zero(self):
        z = np.zeros((4, 4, 4))
        assert hd95(z, z, WT) == 0.0

    def test_spacing_scales_distances(self):
        a = np.zeros((4, 4, 4))
        b = np.zeros((4, 4, 4))
        a[0, 0, 0] = 1
        b[0, 0, 2] = 1
        assert hd95(a, b, WT, spacing=(1.0, 1.0, 2.5)) == pytest.approx(5.0)

    def test_against_bruteforce(self):
        rng = np.random.default_rng(4)
        for trial in range(50):
            a = (rng.uniform(size=(12, 12, 12)) < 0.08).astype(np.int64) * 3
            b = (rng.uniform(size=(12, 12, 12)) < 0.08).astype(np.int64) * 3
            got = hd95(a, b, ET)
            want = hd95_bruteforce(a, b, ET.labels)
            if math.isinf(want):
                assert math.isinf(got), trial
            else:
                assert got == pytest.approx(want, abs=1e-9), trial

    def test_symmetry(self):
        rng = np.random.default_rng(5)
        a = (rng.uniform(size=(10, 10, 10)) < 0.1).astype(np.int64)
        b = (rng.uniform(size=(10, 10, 10)) < 0.1).astype(np.int64)
        assert hd95(a, b, WT) == hd95(b, a, WT)

    def test_monotone_under_translation(self):
        base = np.zeros((12, 4, 4))
        base[0, 0, 0] = 1
        prev = -1.0
        for offset in (2, 5, 9):
            other = np.zeros((12, 4, 4))
            other[offset, 0, 0] = 1
            d = hd95(base, other, WT)
            assert d > prev
            prev = d


class TestRegions:
    def test_all_zero_mask(self):
        regions = compose_regions(np.zeros((4, 4, 4)))
        assert set(regions) == {"WT", "TC", "ET"}
        assert not any(m.any() for m in regions.values())

    def test_pure_label3_nesting(self):
        m = np.zeros((4, 4, 4))
        m[1:3, 1:3, 1:3] = 3
        regions = compose_regions(m)
        assert np.array_equal(regions["ET"], regions["TC"])
        assert np.array_equal(regions["TC"], regions["WT"])

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_nesting_counts(self, seed):
        m = np.random.default_rng(seed).integers(0, 4, size=(6, 6, 6))
        regions = compose_regions(m)
        assert regions["ET"].sum() <= regions["TC"].sum() <= regions["WT"].sum()
        assert np.all(regions["ET"] <= regions["TC"])
        assert np.all(regions["TC"] <= regions["WT"])

    def test_label_composition(self):
        m = np.zeros((3, 3, 3))
        m[0, 0, 0] = 1
        m[1, 1, 1] = 2
        m[2, 2, 2] = 3
        regions = compose_regions(m)
        assert regions["WT"].sum() == 3
        assert regions["TC"].sum() == 2
        assert regions["ET"].sum() == 1

    def test_illegal_label(self):
        m = np.zeros((3, 3, 3))
        m[0, 0, 0] = 4
        with pytest.raises(DataError, match="illegal"):
            compose_regions(m)

    def test_region_spec_requires_labels(self):
        with pytest.raises(ValueError):
            RegionSpec("X", frozenset())


class TestAggregate:
    def _records(self, values, metric="Dice", region="WT"):
        return [
            MetricRecord(subject=f"s{i}", metric=metric, value=v, region=region)
            for i, v in enumerate(values)
        ]

    def test_hand_aggregate(self):
        report = aggregate(self._records([1.0, 2.0, 3.0]))
        row = report.aggregates[0]
        assert row.mean == pytest.approx(2.0)
        assert row.median == pytest.approx(2.0)
        assert row.q25 == pytest.approx(1.5)
        assert row.q75 == pytest.approx(2.5)
        assert row.std == pytest.approx(1.0)
        assert row.n == 3 and row.n_excluded == 0

    def test_single_record_flagged(self):
        report = aggregate(self._records([0.7]))
        row = report.aggregates[0]
        assert row.std == 0.0
        assert "single_record" in row.flags

    def test_sentinel_excluded(self):
        report = aggregate(self._records([1.0, 2.0, float("inf")]))
        row = report.aggregates[0]
        assert row.n == 2 and row.n_excluded == 1
        assert row.mean == pytest.approx(1.5)
        assert "excluded_undefined" in row.flags

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="no records"):
            aggregate([])

    def test_grouping(self):
        records = self._records([1.0, 0.5], region="WT") + self._records(
            [0.2], metric="HD95", region="ET"
        )
        report = aggregate(records)
        keys = {row.group for row in report.aggregates}
        assert (("metric", "Dice"), ("region", "WT")) in keys
        assert (("metric", "HD95"), ("region", "ET")) in keys

    def test_verify_recomputes(self):
        records = self._records([0.1, 0.9, 0.4]) + self._records(
            [3.0, float("inf")], metric="HD95", region="ET"
        )
        report = aggregate(records)
        assert report.verify()

    def test_five_statistics_present(self):
        report = aggregate(self._records([0.5, 0.25, 0.75, 1.0]))
        row = report.aggregates[0]
        for attr in ("mean", "std", "q25", "median", "q75"):
            assert isinstance(getattr(row, attr), float)
