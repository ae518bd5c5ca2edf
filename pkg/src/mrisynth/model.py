"""U-shaped synthesis network: windowed-attention encoder, CNN decoder.

The encoder is a hierarchical 3D transformer: patch embedding, stages of
window-attention blocks alternating between unshifted and shifted windows,
and 8-neighbor patch merging between stages. The decoder upsamples back to
input resolution with residual convolution blocks, concatenating a skip at
every resolution. The head is a 1x1x1 convolution with no output
nonlinearity (regression).

All feature tensors are (N, C, D, H, W); attention internals run
channel-last. Computation happens in the input dtype, so a float64 input
against float64 parameters gives float64 gradients.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import CheckpointError

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    Args:
        in_channels: input contrasts per sample (three available modalities).
        out_channels: synthesized contrasts (one missing modality).
        embed_patch: per-axis stride of the patch-embedding convolution.
        feature_size: base channel count; stage s runs at feature_size * 2**s.
        depths: attention blocks per stage.
        num_heads: attention heads per stage.
        window: per-axis attention window size.
        mlp_ratio: hidden width multiplier of the per-block MLP.
    """

    in_channels: int = 3
    out_channels: int = 1
    embed_patch: int = 2
    feature_size: int = 48
    depths: tuple[int, ...] = (2, 2, 2, 2)
    num_heads: tuple[int, ...] = (3, 6, 12, 24)
    window: int = 7
    mlp_ratio: float = 4.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        object.__setattr__(self, "num_heads", tuple(int(h) for h in self.num_heads))
        if len(self.depths) != len(self.num_heads):
            raise ValueError(
                f"depths and num_heads must have equal length, got "
                f"{len(self.depths)} vs {len(self.num_heads)}"
            )
        if not self.depths or any(d < 1 for d in self.depths) or any(h < 1 for h in self.num_heads):
            raise ValueError("depths and num_heads entries must all be >= 1")
        for s, heads in enumerate(self.num_heads):
            dim = self.feature_size * 2**s
            if dim % heads:
                raise ValueError(
                    f"stage {s}: channel count {dim} not divisible by {heads} heads"
                )
        if self.embed_patch not in (1, 2):
            raise ValueError(f"embed_patch must be 1 or 2, got {self.embed_patch}")
        if self.window < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("window and channel counts must be >= 1")
        if self.feature_size < 1 or self.mlp_ratio <= 0:
            raise ValueError("feature_size must be >= 1 and mlp_ratio > 0")

    @property
    def num_stages(self) -> int:
        return len(self.depths)

    @property
    def size_multiple(self) -> int:
        """Spatial dims are padded up to a multiple of this before encoding."""
        return self.embed_patch * 2**self.num_stages

    @classmethod
    def desk_scale(cls, **overrides: Any) -> "ModelConfig":
        """Small preset that trains and runs in minutes on a laptop CPU."""
        base: dict[str, Any] = dict(feature_size=12, window=4)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict[str, Any]:
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "embed_patch": self.embed_patch,
            "feature_size": self.feature_size,
            "depths": list(self.depths),
            "num_heads": list(self.num_heads),
            "window": self.window,
            "mlp_ratio": self.mlp_ratio,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# array plumbing: the public functional ops accept numpy or torch


def _as_tensor(x: Any) -> tuple[torch.Tensor, bool]:
    if isinstance(x, torch.Tensor):
        return x, False
    return torch.as_tensor(np.asarray(x)), True


def _match_kind(t: torch.Tensor, was_numpy: bool) -> Any:
    return t.detach().cpu().numpy() if was_numpy else t


# ---------------------------------------------------------------------------
# window algebra


def window_partition(x: Any, window: int) -> Any:
    """Tile (N, C, D, H, W) into non-overlapping cubes (N*nw, C, w, w, w).

    Windows are ordered batch-major, then by (d, h, w) block position.
    """
    t, was_np = _as_tensor(x)
    if t.ndim != 5:
        raise ValueError(f"expected (N, C, D, H, W), got shape {tuple(t.shape)}")
    n, c, d, h, w = t.shape
    if d % window or h % window or w % window:
        raise ValueError(f"dims {(d, h, w)} not divisible by window {window}")
    t = t.reshape(n, c, d // window, window, h // window, window, w // window, window)
    wins = t.permute(0, 2, 4, 6, 1, 3, 5, 7).reshape(-1, c, window, window, window)
    return _match_kind(wins, was_np)


def window_reverse(windows: Any, shape: Sequence[int], window: int) -> Any:
    """Exact inverse of :func:`window_partition` for the given full shape."""
    t, was_np = _as_tensor(windows)
    n, c, d, h, w = shape
    nd, nh, nw = d // window, h // window, w // window
    if d % window or h % window or w % window:
        raise ValueError(f"dims {(d, h, w)} not divisible by window {window}")
    expected = n * nd * nh * nw
    if t.ndim != 5 or t.shape[0] != expected or tuple(t.shape[2:]) != (window,) * 3:
        raise ValueError(
            f"window stack {tuple(t.shape)} inconsistent with shape {tuple(shape)}"
        )
    t = t.reshape(n, nd, nh, nw, c, window, window, window)
    x = t.permute(0, 4, 1, 5, 2, 6, 3, 7).reshape(n, c, d, h, w)
    return _match_kind(x, was_np)


@functools.lru_cache(maxsize=16)
def _relative_position_index(window: int) -> torch.Tensor:
    """(w^3, w^3) lookup into a (2w-1)^3 relative-offset bias table."""
    coords = torch.stack(
        torch.meshgrid(*(torch.arange(window),) * 3, indexing="ij")
    ).flatten(1)
    rel = coords[:, :, None] - coords[:, None, :]
    rel = rel + (window - 1)
    span = 2 * window - 1
    return (rel[0] * span * span + rel[1] * span + rel[2]).long()


def _as_triple(v: int | Sequence[int]) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise ValueError(f"expected scalar or 3 values, got {v!r}")
    return t  # type: ignore[return-value]


def _axis_regions(size: int, window: int, shift: int) -> list[slice]:
    if shift == 0:
        return [slice(0, size)]
    return [slice(0, size - window), slice(size - window, size - shift), slice(size - shift, size)]


def shift_attention_mask(
    dims: Sequence[int],
    window: int,
    shift: int | Sequence[int],
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor | None:
    """Additive mask (nW, w^3, w^3) blocking pairs from different pre-shift regions.

    Entries are 0 for allowed pairs and -inf for pairs whose members were not
    spatial neighbors before the cyclic shift. Returns None when no axis is
    shifted.
    """
    sd, sh, sw = _as_triple(shift)
    if sd == sh == sw == 0:
        return None
    d, h, w = dims
    labels = torch.zeros(1, 1, d, h, w)
    cnt = 0
    for rd in _axis_regions(d, window, sd):
        for rh in _axis_regions(h, window, sh):
            for rw in _axis_regions(w, window, sw):
                labels[:, :, rd, rh, rw] = cnt
                cnt += 1
    win_labels = window_partition(labels, window).reshape(-1, window**3)
    differs = win_labels[:, None, :] != win_labels[:, :, None]
    mask = torch.zeros(differs.shape, dtype=dtype)
    mask[differs] = float("-inf")
    return mask


def _attention_channel_last(
    x: torch.Tensor,
    qkv_weight: torch.Tensor,
    qkv_bias: torch.Tensor,
    proj_weight: torch.Tensor,
    proj_bias: torch.Tensor,
    bias_table: torch.Tensor,
    num_heads: int,
    window: int,
    shift: tuple[int, int, int],
    attn_mask: Any = "auto",
    return_weights: bool = False,
) -> torch.Tensor | tuple[torch.Tensor, torch.Tensor]:
    b, d, h, w, c = x.shape
    nt = window**3
    head_dim = c // num_heads

    if any(shift):
        x = torch.roll(x, shifts=(-shift[0], -shift[1], -shift[2]), dims=(1, 2, 3))

    tokens = (
        x.reshape(b, d // window, window, h // window, window, w // window, window, c)
        .permute(0, 1, 3, 5, 2, 4, 6, 7)
        .reshape(-1, nt, c)
    )
    qkv = F.linear(tokens, qkv_weight, qkv_bias)
    qkv = qkv.reshape(-1, nt, 3, num_heads, head_dim).permute(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]

    attn = (q * head_dim**-0.5) @ k.transpose(-2, -1)
    rel_index = _relative_position_index(window).to(x.device)
    bias = bias_table[rel_index.reshape(-1)].reshape(nt, nt, num_heads).permute(2, 0, 1)
    attn = attn + bias.unsqueeze(0)

    if isinstance(attn_mask, str) and attn_mask == "auto":
        attn_mask = shift_attention_mask((d, h, w), window, shift, dtype=x.dtype)
    if attn_mask is not None:
        mask_t = torch.as_tensor(attn_mask, dtype=x.dtype, device=x.device)
        n_windows = mask_t.shape[0]
        attn = attn.view(b, n_windows, num_heads, nt, nt) + mask_t.view(1, n_windows, 1, nt, nt)
        attn = attn.view(-1, num_heads, nt, nt)

    attn = torch.softmax(attn, dim=-1)
    out = (attn @ v).transpose(1, 2).reshape(-1, nt, c)
    out = F.linear(out, proj_weight, proj_bias)

    out = (
        out.reshape(b, d // window, h // window, w // window, window, window, window, c)
        .permute(0, 1, 4, 2, 5, 3, 6, 7)
        .reshape(b, d, h, w, c)
    )
    if any(shift):
        out = torch.roll(out, shifts=shift, dims=(1, 2, 3))
    if return_weights:
        return out, attn
    return out


def shifted_window_attention(
    x: Any,
    qkv_weight: Any,
    qkv_bias: Any,
    proj_weight: Any,
    proj_bias: Any,
    bias_table: Any,
    num_heads: int,
    window: int,
    shift: int | Sequence[int],
    attn_mask: Any = "auto",
    return_weights: bool = False,
) -> Any:
    """Multi-head attention within (optionally cyclically shifted) windows.

    x is (N, C, D, H, W) with every spatial dim divisible by the window.
    Logits get a learned relative-position bias; when shifted, pairs of
    tokens from different pre-shift regions are masked out, and the cyclic
    shift is undone on the output. Pass attn_mask=None to disable masking
    (useful for equivalence checks) or an explicit (nW, w^3, w^3) tensor.
    """
    t, was_np = _as_tensor(x)
    if t.ndim != 5:
        raise ValueError(f"expected (N, C, D, H, W), got {tuple(t.shape)}")
    n, c, d, h, w = t.shape
    if d % window or h % window or w % window:
        raise ValueError(f"dims {(d, h, w)} not divisible by window {window}")
    if c % num_heads:
        raise ValueError(f"channels {c} not divisible by {num_heads} heads")
    shift3 = _as_triple(shift)
    if any(s >= window or s < 0 for s in shift3):
        raise ValueError(f"shift {shift3} must lie in [0, window)")

    params = [
        torch.as_tensor(np.asarray(p)) if not isinstance(p, torch.Tensor) else p
        for p in (qkv_weight, qkv_bias, proj_weight, proj_bias, bias_table)
    ]
    params = [p.to(t.dtype) for p in params]
    out = _attention_channel_last(
        t.permute(0, 2, 3, 4, 1),
        *params,
        num_heads=num_heads,
        window=window,
        shift=shift3,
        attn_mask=attn_mask,
        return_weights=return_weights,
    )
    if return_weights:
        y, weights = out
        return _match_kind(y.permute(0, 4, 1, 2, 3), was_np), _match_kind(weights, was_np)
    return _match_kind(out.permute(0, 4, 1, 2, 3), was_np)


_MERGE_OFFSETS = [(i, j, k) for i in (0, 1) for j in (0, 1) for k in (0, 1)]


def _concat_neighbors(x: torch.Tensor) -> torch.Tensor:
    # (N, C, D, H, W) -> (N, 8C, D/2, H/2, W/2), offsets in lexicographic order
    return torch.cat(
        [x[:, :, i::2, j::2, k::2] for i, j, k in _MERGE_OFFSETS], dim=1
    )


def patch_merge(x: Any, weight: Any) -> Any:
    """Downsample by concatenating 8 spatial neighbors and projecting 8C -> 2C.

    weight has shape (2C, 8C); the projection is bias-free, so the map is
    linear in x. All spatial dims must be even.
    """
    t, was_np = _as_tensor(x)
    if t.ndim != 5:
        raise ValueError(f"expected (N, C, D, H, W), got {tuple(t.shape)}")
    if any(s % 2 for s in t.shape[2:]):
        raise ValueError(f"spatial dims {tuple(t.shape[2:])} must all be even")
    w_t = torch.as_tensor(np.asarray(weight)) if not isinstance(weight, torch.Tensor) else weight
    w_t = w_t.to(t.dtype)
    if w_t.shape != (2 * t.shape[1], 8 * t.shape[1]):
        raise ValueError(
            f"projection weight must be (2C, 8C) = {(2 * t.shape[1], 8 * t.shape[1])}, "
            f"got {tuple(w_t.shape)}"
        )
    merged = torch.einsum("oc,ncdhw->nodhw", w_t, _concat_neighbors(t))
    return _match_kind(merged, was_np)


# ---------------------------------------------------------------------------
# modules


class PatchEmbed(nn.Module):
    """Strided-conv patch embedding followed by a layer norm."""

    def __init__(self, in_channels: int, embed_dim: int, patch: int) -> None:
        super().__init__()
        self.proj = nn.Conv3d(in_channels, embed_dim, kernel_size=patch, stride=patch)
        self.norm = nn.LayerNorm(embed_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.proj(x).permute(0, 2, 3, 4, 1)
        return self.norm(y)


class SwinBlock(nn.Module):
    """One window-attention block (channel-last in/out).

    Pads spatial dims up to a window multiple before attention and crops
    after. Axes no longer than one window run unshifted.
    """

    def __init__(self, dim: int, num_heads: int, window: int, shifted: bool, mlp_ratio: float) -> None:
        super().__init__()
        self.dim = dim
        self.num_heads = num_heads
        self.window = window
        self.shifted = shifted
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, dim * 3, bias=True)
        self.proj = nn.Linear(dim, dim)
        self.bias_table = nn.Parameter(torch.zeros((2 * window - 1) ** 3, num_heads))
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def _effective_shift(self, dims: tuple[int, int, int]) -> tuple[int, int, int]:
        if not self.shifted:
            return (0, 0, 0)
        return tuple(0 if s <= self.window else self.window // 2 for s in dims)  # type: ignore[return-value]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, d, h, w, c = x.shape
        pad = [(-s) % self.window for s in (d, h, w)]
        shift = self._effective_shift((d, h, w))

        y = self.norm1(x)
        if any(pad):
            y = F.pad(y, (0, 0, 0, pad[2], 0, pad[1], 0, pad[0]))
        y = _attention_channel_last(
            y,
            self.qkv.weight,
            self.qkv.bias,
            self.proj.weight,
            self.proj.bias,
            self.bias_table,
            num_heads=self.num_heads,
            window=self.window,
            shift=shift,
        )
        if any(pad):
            y = y[:, :d, :h, :w, :]
        x = x + y
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))


class PatchMerging(nn.Module):
    """8-neighbor concat, layer norm, then bias-free linear 8C -> 2C."""

    def __init__(self, dim: int) -> None:
        super().__init__()
        self.norm = nn.LayerNorm(8 * dim)
        self.reduction = nn.Linear(8 * dim, 2 * dim, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # channel-last: (N, D, H, W, C) -> (N, D/2, H/2, W/2, 2C)
        stacked = torch.cat(
            [x[:, i::2, j::2, k::2, :] for i, j, k in _MERGE_OFFSETS], dim=-1
        )
        return self.reduction(self.norm(stacked))


class SwinStage(nn.Module):
    """Blocks alternating unshifted/shifted windows, then patch merging."""

    def __init__(self, dim: int, depth: int, num_heads: int, window: int, mlp_ratio: float) -> None:
        super().__init__()
        self.blocks = nn.ModuleList(
            SwinBlock(dim, num_heads, window, shifted=bool(i % 2), mlp_ratio=mlp_ratio)
            for i in range(depth)
        )
        self.merge = PatchMerging(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for blk in self.blocks:
            x = blk(x)
        return self.merge(x)


class InstanceNorm3d(nn.Module):
    """Per-sample, per-channel normalization with affine parameters.

    Population statistics over the spatial dims; well-defined on feature
    maps as small as 1x1x1 (a constant map normalizes to the bias).
    """

    def __init__(self, channels: int, eps: float = 1e-5) -> None:
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mu = x.mean(dim=(2, 3, 4), keepdim=True)
        var = x.var(dim=(2, 3, 4), keepdim=True, unbiased=False)
        y = (x - mu) / torch.sqrt(var + self.eps)
        return y * self.weight.view(1, -1, 1, 1, 1) + self.bias.view(1, -1, 1, 1, 1)


def _instance_norm(channels: int) -> nn.Module:
    return InstanceNorm3d(channels)


class ResBlock(nn.Module):
    """Two conv+norm+LeakyReLU layers with a (projected) residual."""

    def __init__(self, in_channels: int, out_channels: int) -> None:
        super().__init__()
        self.conv1 = nn.Conv3d(in_channels, out_channels, 3, padding=1)
        self.norm1 = _instance_norm(out_channels)
        self.conv2 = nn.Conv3d(out_channels, out_channels, 3, padding=1)
        self.norm2 = _instance_norm(out_channels)
        self.act = nn.LeakyReLU(0.01)
        if in_channels != out_channels:
            self.skip: nn.Module = nn.Conv3d(in_channels, out_channels, 1)
            self.skip_norm: nn.Module = _instance_norm(out_channels)
        else:
            self.skip = nn.Identity()
            self.skip_norm = nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.act(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        return self.act(y + self.skip_norm(self.skip(x)))


class UpBlock(nn.Module):
    """Transposed-conv upsampling, skip concatenation, residual refinement."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 2) -> None:
        super().__init__()
        self.up = nn.ConvTranspose3d(in_channels, out_channels, kernel_size=stride, stride=stride)
        self.res = ResBlock(2 * out_channels, out_channels)

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        y = self.up(x)
        if y.shape[2:] != skip.shape[2:]:
            raise ValueError(
                f"decoder/skip resolution mismatch: {tuple(y.shape[2:])} vs {tuple(skip.shape[2:])}"
            )
        return self.res(torch.cat([y, skip], dim=1))


@dataclass
class FeaturePyramid:
    """Encoder outputs, one per scale; stage s has feature_size * 2**s channels."""

    stages: list[torch.Tensor]

    def __post_init__(self) -> None:
        for s in range(1, len(self.stages)):
            prev, cur = self.stages[s - 1], self.stages[s]
            half = tuple(v // 2 for v in prev.shape[2:])
            if tuple(cur.shape[2:]) != half:
                raise ValueError(
                    f"stage {s} spatial {tuple(cur.shape[2:])} is not half of stage "
                    f"{s - 1} {tuple(prev.shape[2:])}"
                )
            if cur.shape[1] != 2 * prev.shape[1]:
                raise ValueError(
                    f"stage {s} channels {cur.shape[1]} != 2x stage {s - 1} ({prev.shape[1]})"
                )


def _to_channels_first(x: torch.Tensor) -> torch.Tensor:
    return x.permute(0, 4, 1, 2, 3)


class SwinUnetr(nn.Module):
    """The full encoder-decoder synthesis network.

    forward() accepts any spatial size: inputs are zero-padded at the high
    end to the required multiple and the output is cropped back, so output
    spatial shape always equals input spatial shape.
    """

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.cfg = cfg
        fs = cfg.feature_size
        L = cfg.num_stages

        self.patch_embed = PatchEmbed(cfg.in_channels, fs, cfg.embed_patch)
        self.stages = nn.ModuleList(
            SwinStage(fs * 2**s, cfg.depths[s], cfg.num_heads[s], cfg.window, cfg.mlp_ratio)
            for s in range(L)
        )

        self.stem = ResBlock(cfg.in_channels, fs)
        # pyramid stages 0 .. L-2 are refined; the deepest skip is used raw
        self.skip_blocks = nn.ModuleList(
            ResBlock(fs * 2**s, fs * 2**s) for s in range(max(L - 1, 0))
        )
        self.bottleneck = ResBlock(fs * 2**L, fs * 2**L)
        ups = [UpBlock(fs * 2 ** (L - j), fs * 2 ** (L - j - 1)) for j in range(L)]
        ups.append(UpBlock(fs, fs, stride=cfg.embed_patch))
        self.ups = nn.ModuleList(ups)
        self.head = nn.Conv3d(fs, cfg.out_channels, kernel_size=1)

    def encode(self, x: torch.Tensor) -> FeaturePyramid:
        """Run the transformer encoder on a padded input; returns all scales."""
        y = self.patch_embed(x)
        stages = [_to_channels_first(y)]
        for stage in self.stages:
            y = stage(y)
            stages.append(_to_channels_first(y))
        return FeaturePyramid(stages)

    def decode(self, pyramid: FeaturePyramid, x: torch.Tensor) -> torch.Tensor:
        L = self.cfg.num_stages
        if len(pyramid.stages) != L + 1:
            raise ValueError(f"expected {L + 1} pyramid stages, got {len(pyramid.stages)}")
        skips = [self.stem(x)]
        skips += [blk(pyramid.stages[s]) for s, blk in enumerate(self.skip_blocks)]
        if L >= 1:
            skips.append(pyramid.stages[L - 1])
        y = self.bottleneck(pyramid.stages[L])
        for j, up in enumerate(self.ups):
            y = up(y, skips[L - j])
        return self.head(y)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 5:
            raise ValueError(f"expected (N, C, D, H, W), got {tuple(x.shape)}")
        if x.shape[1] != self.cfg.in_channels:
            raise ValueError(
                f"model takes {self.cfg.in_channels} input channels, got {x.shape[1]}"
            )
        d, h, w = x.shape[2:]
        m = self.cfg.size_multiple
        pad = [(-v) % m for v in (d, h, w)]
        xp = F.pad(x, (0, pad[2], 0, pad[1], 0, pad[0])) if any(pad) else x
        y = self.decode(self.encode(xp), xp)
        return y[:, :, :d, :h, :w]


# ---------------------------------------------------------------------------
# parameter store and the functional build/forward surface


@dataclass
class ParameterStore:
    """Named float32 weight set plus the config that generated it.

    Immutable once built or loaded; training operates on a live module and
    snapshots back into a store.
    """

    config: ModelConfig
    tensors: dict[str, np.ndarray]
    meta: dict[str, Any] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def __post_init__(self) -> None:
        names = list(self.tensors)
        if len(set(names)) != len(names):
            raise CheckpointError("duplicate tensor names in parameter store")

    @classmethod
    def from_module(
        cls, module: SwinUnetr, meta: dict[str, Any] | None = None
    ) -> "ParameterStore":
        tensors = {
            name: p.detach().cpu().numpy().astype(np.float32, copy=True)
            for name, p in module.named_parameters()
        }
        return cls(config=module.cfg, tensors=tensors, meta=dict(meta or {}))

    def to_module(self) -> SwinUnetr:
        """Materialize a fresh module; tensor shapes must match the config."""
        module = SwinUnetr(self.config)
        expected = {name: tuple(p.shape) for name, p in module.named_parameters()}
        if set(expected) != set(self.tensors):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise CheckpointError(
                f"tensor names do not match architecture (missing {missing[:3]}, extra {extra[:3]})"
            )
        for name, arr in self.tensors.items():
            if tuple(arr.shape) != expected[name]:
                raise CheckpointError(
                    f"tensor {name}: shape {tuple(arr.shape)} != expected {expected[name]}"
                )
        state = {name: torch.from_numpy(arr.copy()) for name, arr in self.tensors.items()}
        module.load_state_dict(state, strict=True)
        return module

    def module(self) -> SwinUnetr:
        """Cached eval-mode module for repeated forward calls."""
        cached = getattr(self, "_module_cache", None)
        if cached is None:
            cached = self.to_module().eval()
            object.__setattr__(self, "_module_cache", cached)
        return cached

    def num_parameters(self) -> int:
        return sum(int(np.prod(a.shape)) for a in self.tensors.values())

    @property
    def scenario(self) -> str | None:
        return self.meta.get("scenario")


def _init_parameters(module: nn.Module, seed: int) -> None:
    """Deterministic re-initialization of every parameter.

    2D+ tensors get truncated-normal(std=0.02); biases are zeroed; remaining
    1D weights (norm scales) are set to one. Iteration follows registration
    order, so equal seeds give bit-identical results.
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        for name, p in module.named_parameters():
            with torch.no_grad():
                if p.ndim >= 2:
                    nn.init.trunc_normal_(p, std=0.02)
                elif name.endswith(".bias"):
                    p.zero_()
                else:
                    p.fill_(1.0)


def build_model(cfg: ModelConfig, seed: int) -> ParameterStore:
    """Construct and deterministically initialize a model.

    The same (cfg, seed) always yields a bit-identical parameter store.
    """
    module = SwinUnetr(cfg)
    _init_parameters(module, seed)
    return ParameterStore.from_module(module, meta={"init_seed": int(seed)})


def forward(params: ParameterStore | SwinUnetr, x: Any) -> Any:
    """Run the network; numpy in, numpy out (torch in, torch out)."""
    module = params.module() if isinstance(params, ParameterStore) else params
    t, was_np = _as_tensor(x)
    t = t.to(next(module.parameters()).dtype)
    with torch.no_grad():
        y = module(t)
    return _match_kind(y, was_np)
