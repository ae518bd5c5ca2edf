"""Network building blocks: window algebra, attention, merging, decoding."""

from __future__ import annotations

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from mrisynth.model import (
    FeaturePyramid,
    ModelConfig,
    build_model,
    forward,
    patch_merge,
    shift_attention_mask,
    shifted_window_attention,
    window_partition,
    window_reverse,
)

from conftest import make_volume  # noqa: F401  (fixture module import)

TINY = ModelConfig(feature_size=4, window=2, depths=(1, 1), num_heads=(1, 2))


class TestConfig:
    def test_defaults_valid(self):
        cfg = ModelConfig()
        assert cfg.in_channels == 3 and cfg.out_channels == 1
        assert cfg.size_multiple == 32

    def test_heads_must_divide_channels(self):
        with pytest.raises(ValueError, match="divisible"):
            ModelConfig(feature_size=10, num_heads=(3, 6, 12, 24))

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            ModelConfig(depths=(2, 2), num_heads=(3, 6, 12))

    def test_round_trips_through_dict(self):
        cfg = ModelConfig.desk_scale()
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestBuild:
    def test_bit_identical_for_same_seed(self):
        a = build_model(TINY, seed=11)
        b = build_model(TINY, seed=11)
        assert list(a.tensors) == list(b.tensors)
        for name in a.tensors:
            assert np.array_equal(a.tensors[name], b.tensors[name]), name

    def test_param_count_is_config_function(self):
        a = build_model(TINY, seed=0)
        b = build_model(TINY, seed=99)
        assert a.num_parameters() == b.num_parameters()
        shapes_a = {k: v.shape for k, v in a.tensors.items()}
        shapes_b = {k: v.shape for k, v in b.tensors.items()}
        assert shapes_a == shapes_b

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            ModelConfig(feature_size=4, depths=(1,), num_heads=(3,))


class TestForward:
    def test_shape_contract_tiny(self):
        store = build_model(TINY, seed=0)
        x = np.random.default_rng(0).normal(size=(1, 3, 8, 8, 8)).astype(np.float32)
        assert forward(store, x).shape == (1, 1, 8, 8, 8)

    def test_batch_and_odd_sizes(self):
        store = build_model(TINY, seed=0)
        rng = np.random.default_rng(1)
        assert forward(store, rng.normal(size=(2, 3, 8, 8, 8)).astype(np.float32)).shape == (
            2,
            1,
            8,
            8,
            8,
        )
        assert forward(store, rng.normal(size=(1, 3, 11, 9, 10)).astype(np.float32)).shape == (
            1,
            1,
            11,
            9,
            10,
        )

    def test_wrong_channel_count(self):
        store = build_model(TINY, seed=0)
        x = np.zeros((1, 4, 8, 8, 8), dtype=np.float32)
        with pytest.raises(ValueError, match="channels"):
            forward(store, x)

    def test_deterministic_bitwise(self):
        store = build_model(TINY, seed=0)
        x = np.random.default_rng(2).normal(size=(1, 3, 8, 8, 8)).astype(np.float32)
        assert np.array_equal(forward(store, x), forward(store, x))

    def test_batch_equals_stacked_singles(self):
        store = build_model(TINY, seed=0)
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 3, 8, 8, 8)).astype(np.float32)
        batched = forward(store, x)
        singles = np.concatenate([forward(store, x[:1]), forward(store, x[1:])])
        assert np.allclose(batched, singles, atol=1e-5)


class TestWindowAlgebra:
    def test_single_window_is_identity_tile(self):
        x = np.random.default_rng(0).normal(size=(1, 5, 4, 4, 4))
        wins = window_partition(x, 4)
        assert wins.shape == (1, 5, 4, 4, 4)
        assert np.array_equal(wins[0], x[0])

    def test_window_count(self):
        x = np.zeros((1, 2, 8, 8, 8))
        assert window_partition(x, 4).shape[0] == 8

    def test_round_trip_exact(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(2, 3, 8, 4, 12)).astype(np.float32)
        wins = window_partition(x, 4)
        assert np.array_equal(window_reverse(wins, x.shape, 4), x)

    @settings(max_examples=25, deadline=None)
    @given(
        n=st.integers(1, 2),
        c=st.integers(1, 3),
        mult=st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3)),
        w=st.sampled_from([2, 3]),
        seed=st.integers(0, 10_000),
    )
    def test_round_trip_property(self, n, c, mult, w, seed):
        shape = (n, c, mult[0] * w, mult[1] * w, mult[2] * w)
        x = np.random.default_rng(seed).normal(size=shape).astype(np.float32)
        assert np.array_equal(window_reverse(window_partition(x, w), shape, w), x)

    def test_permuted_windows_differ(self):
        x = np.random.default_rng(5).normal(size=(1, 1, 8, 4, 4))
        wins = window_partition(x, 4)
        swapped = wins[::-1].copy()
        assert not np.array_equal(window_reverse(swapped, x.shape, 4), x)

    def test_zero_windows_give_zero_volume(self):
        wins = np.zeros((8, 2, 4, 4, 4))
        assert not window_reverse(wins, (1, 2, 8, 8, 8), 4).any()

    def test_nondivisible_rejected(self):
        with pytest.raises(ValueError, match="divisible"):
            window_partition(np.zeros((1, 1, 6, 4, 4)), 4)

    def test_inconsistent_count_rejected(self):
        with pytest.raises(ValueError, match="inconsistent"):
            window_reverse(np.zeros((3, 1, 4, 4, 4)), (1, 1, 8, 8, 8), 4)


class TestPatchMerge:
    def test_shape_contract(self):
        c = 3
        x = np.random.default_rng(0).normal(size=(1, c, 4, 4, 4))
        weight = np.random.default_rng(1).normal(size=(2 * c, 8 * c))
        assert patch_merge(x, weight).shape == (1, 2 * c, 2, 2, 2)

    def test_linearity(self):
        c = 2
        rng = np.random.default_rng(2)
        x = rng.normal(size=(1, c, 4, 6, 4))
        weight = rng.normal(size=(2 * c, 8 * c))
        lhs = patch_merge(3.5 * x, weight)
        rhs = 3.5 * patch_merge(x, weight)
        assert np.allclose(lhs, rhs, atol=1e-12)
        assert not patch_merge(np.zeros_like(x), weight).any()

    def test_odd_dims_rejected(self):
        with pytest.raises(ValueError, match="even"):
            patch_merge(np.zeros((1, 1, 3, 4, 4)), np.zeros((2, 8)))


def _random_attention_params(rng, c, heads, w):
    return dict(
        qkv_weight=rng.normal(size=(3 * c, c), scale=0.2),
        qkv_bias=rng.normal(size=(3 * c,), scale=0.1),
        proj_weight=rng.normal(size=(c, c), scale=0.2),
        proj_bias=rng.normal(size=(c,), scale=0.1),
        bias_table=rng.normal(size=((2 * w - 1) ** 3, heads), scale=0.1),
        num_heads=heads,
        window=w,
    )


def _bucket(r: int, size: int, w: int, s: int) -> int:
    # independent region labeling: 0 interior, 1 last-window unwrapped, 2 wrapped
    if s == 0:
        return 0
    if r < size - w:
        return 0
    if r < size - s:
        return 1
    return 2


def _oracle_blocked_pairs(dims, w, shift):
    """Brute-force (nW, nt, nt) boolean mask of pairs that must be blocked."""
    d, h, wd = dims
    labels = np.empty((d, h, wd), dtype=object)
    for i in range(d):
        for j in range(h):
            for k in range(wd):
                labels[i, j, k] = (
                    _bucket(i, d, w, shift[0]),
                    _bucket(j, h, w, shift[1]),
                    _bucket(k, wd, w, shift[2]),
                )
    blocked = []
    for bd in range(d // w):
        for bh in range(h // w):
            for bw in range(wd // w):
                toks = [
                    labels[bd * w + td, bh * w + th, bw * w + tw]
                    for td in range(w)
                    for th in range(w)
                    for tw in range(w)
                ]
                nt = len(toks)
                m = np.zeros((nt, nt), dtype=bool)
                for a in range(nt):
                    for b in range(nt):
                        m[a, b] = toks[a] != toks[b]
                blocked.append(m)
    return np.stack(blocked)


class TestShiftedWindowAttention:
    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(1, 4, 4, 4, 4))
        params = _random_attention_params(rng, c=4, heads=2, w=4)
        _, weights = shifted_window_attention(x, **params, shift=0, return_weights=True)
        assert np.allclose(weights.sum(axis=-1), 1.0, atol=1e-6)

    def test_mask_matches_bruteforce_and_blocks(self):
        w, s = 4, 2
        dims = (8, 8, 8)
        mask = shift_attention_mask(dims, w, s)
        oracle = _oracle_blocked_pairs(dims, w, (s, s, s))
        impl = np.isneginf(mask.numpy())
        assert impl.shape == oracle.shape
        assert np.array_equal(impl, oracle)

        rng = np.random.default_rng(1)
        x = rng.normal(size=(1, 4, *dims))
        params = _random_attention_params(rng, c=4, heads=2, w=w)
        _, weights = shifted_window_attention(x, **params, shift=s, return_weights=True)
        weights = np.asarray(weights)  # (nW, heads, nt, nt)
        assert oracle.any(), "shifted layout should block at least one pair"
        for wi in range(oracle.shape[0]):
            blocked_w = weights[wi][:, oracle[wi]]
            if blocked_w.size:
                assert np.all(blocked_w < 1e-7)
            assert np.allclose(weights[wi].sum(axis=-1), 1.0, atol=1e-6)

    def test_shift_equals_prerolled_unshifted(self):
        # attention with shift s and an all-pass mask on a pre-rolled input,
        # rolled back, must equal unshifted attention on the original
        rng = np.random.default_rng(2)
        w, s = 4, 2
        x = rng.normal(size=(1, 6, 8, 4, 8))
        params = _random_attention_params(rng, c=6, heads=3, w=w)
        lhs = shifted_window_attention(x, **params, shift=0)
        rolled = np.roll(x, shift=(s, s, s), axis=(2, 3, 4))
        rhs = shifted_window_attention(rolled, **params, shift=s, attn_mask=None)
        rhs = np.roll(rhs, shift=(-s, -s, -s), axis=(2, 3, 4))
        assert np.allclose(lhs, rhs, atol=1e-10)

    def test_same_shape_and_finite(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 4, 8, 8, 8)).astype(np.float32)
        params = _random_attention_params(rng, c=4, heads=2, w=4)
        y = shifted_window_attention(x, **params, shift=2)
        assert y.shape == x.shape and np.isfinite(y).all()

    def test_bad_shift_rejected(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(1, 4, 4, 4, 4))
        params = _random_attention_params(rng, c=4, heads=2, w=4)
        with pytest.raises(ValueError, match="shift"):
            shifted_window_attention(x, **params, shift=4)


class TestDecoder:
    def test_zero_everything_gives_zero_output(self):
        module = build_model(TINY, seed=0).to_module().eval()
        x = torch.zeros(1, 3, 8, 8, 8)
        with torch.no_grad():
            pyramid = module.encode(x)
            zero_pyr = FeaturePyramid([torch.zeros_like(t) for t in pyramid.stages])
            out = module.decode(zero_pyr, x)
        assert out.shape == (1, 1, 8, 8, 8)
        assert torch.all(out == 0)

    def test_pyramid_shapes_telescope(self):
        module = build_model(TINY, seed=0).to_module().eval()
        with torch.no_grad():
            pyramid = module.encode(torch.zeros(1, 3, 8, 8, 8))
        dims = [tuple(t.shape[2:]) for t in pyramid.stages]
        assert dims == [(4, 4, 4), (2, 2, 2), (1, 1, 1)]
        chans = [t.shape[1] for t in pyramid.stages]
        assert chans == [4, 8, 16]

    def test_regression_head_has_no_clamp(self):
        module = build_model(TINY, seed=0).to_module().eval()
        with torch.no_grad():
            module.head.weight.fill_(1.0)
            module.head.bias.zero_()
            big = torch.full((1, TINY.feature_size, 2, 2, 2), 50.0)
            out = module.head(big)
        assert out.abs().max().item() > 1.0

    def test_pyramid_invariants_enforced(self):
        good = [torch.zeros(1, 4, 4, 4, 4), torch.zeros(1, 8, 2, 2, 2)]
        FeaturePyramid(good)
        with pytest.raises(ValueError, match="half"):
            FeaturePyramid([torch.zeros(1, 4, 4, 4, 4), torch.zeros(1, 8, 3, 2, 2)])
        with pytest.raises(ValueError, match="channels"):
            FeaturePyramid([torch.zeros(1, 4, 4, 4, 4), torch.zeros(1, 6, 2, 2, 2)])
