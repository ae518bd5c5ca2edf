"""Patch-based regression training, one model per missing-modality scenario.

Each scenario trains a fresh network whose three input channels are the
available modalities (sorted by name) and whose single output channel is the
missing one, supervised with mean squared error on randomly cropped cubes.
All volumes are standardized per-volume before sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import torch

from . import checkpoint as ckpt
from .errors import DataError, NumericError
from .model import ModelConfig, ParameterStore, SwinUnetr, build_model
from .preprocess import ZScoreMode, zscore_apply, zscore_fit
from .volume_io import MODALITIES, Study

LOSS_CURVE_FILENAME = "loss_curve.tsv"


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings for one scenario."""

    target_modality: str
    patch: int = 128
    batch_size: int = 1
    epochs: int = 100
    learning_rate: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    steps_per_epoch: int | None = None  # None: one step per training study

    def __post_init__(self) -> None:
        if self.target_modality not in MODALITIES:
            raise ValueError(
                f"unknown target modality {self.target_modality!r}, expected one of {MODALITIES}"
            )
        if self.patch <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("patch > 0, epochs >= 1, batch_size >= 1 required")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1 when given")


def input_modalities(target_modality: str) -> tuple[str, ...]:
    """The three input channels for a scenario, in fixed sorted order."""
    if target_modality not in MODALITIES:
        raise ValueError(f"unknown target modality {target_modality!r}")
    return tuple(sorted(m for m in MODALITIES if m != target_modality))


@dataclass
class TrainSample:
    """One training example: stacked input patches and the target patch."""

    inputs: np.ndarray  # (3, p, p, p)
    target: np.ndarray  # (1, p, p, p)


def _pad_to(arr: np.ndarray, p: int) -> np.ndarray:
    pads = [(0, max(0, p - s)) for s in arr.shape]
    if any(hi for _, hi in pads):
        arr = np.pad(arr, pads)
    return arr


def sample_patch(
    study: Study, target_modality: str, p: int, rng: np.random.Generator
) -> TrainSample:
    """Cut one aligned random cube from all four modalities.

    The corner is uniform over every position where a p^3 block fits; axes
    shorter than p are zero-padded first. Input channel order is the sorted
    non-target modality names.
    """
    if not study.complete:
        raise DataError(f"study {study.subject_id!r} is incomplete: {sorted(study.modalities)}")
    order = input_modalities(target_modality)
    padded = {
        name: _pad_to(study.modalities[name].data, p) for name in (*order, target_modality)
    }
    shape = padded[target_modality].shape
    corner = tuple(int(rng.integers(0, shape[a] - p + 1)) for a in range(3))
    block = tuple(slice(c, c + p) for c in corner)
    inputs = np.stack([padded[name][block] for name in order]).astype(np.float32)
    target = padded[target_modality][block][None].astype(np.float32)
    return TrainSample(inputs=inputs, target=target)


def mse_loss(y: Any, yhat: Any) -> Any:
    """Mean over all voxels of squared differences.

    Works on numpy arrays (returns float) and torch tensors (returns a
    0-dim tensor that participates in autograd).
    """
    if tuple(y.shape) != tuple(yhat.shape):
        raise ValueError(f"shape mismatch: {tuple(y.shape)} vs {tuple(yhat.shape)}")
    if isinstance(y, torch.Tensor) or isinstance(yhat, torch.Tensor):
        return ((y - yhat) ** 2).mean()
    diff = np.asarray(y, dtype=np.float64) - np.asarray(yhat, dtype=np.float64)
    return float(np.mean(diff**2))


def _stack_batch(batch: TrainSample | Sequence[TrainSample]) -> tuple[torch.Tensor, torch.Tensor]:
    samples = [batch] if isinstance(batch, TrainSample) else list(batch)
    x = torch.from_numpy(np.stack([s.inputs for s in samples]))
    y = torch.from_numpy(np.stack([s.target for s in samples]))
    return x, y


def train_step(
    module: SwinUnetr,
    optimizer: torch.optim.Optimizer,
    batch: TrainSample | Sequence[TrainSample],
) -> float:
    """One optimizer update; returns the pre-update loss."""
    x, y = _stack_batch(batch)
    if not torch.isfinite(y).all():
        raise NumericError("training target contains NaN/Inf")
    if not torch.isfinite(x).all():
        raise NumericError("training input contains NaN/Inf")
    module.train()
    out = module(x)
    loss = mse_loss(y, out)
    if not torch.isfinite(loss):
        raise NumericError(
            f"non-finite loss {loss.item()!r}; inputs range "
            f"[{x.min().item():.3g}, {x.max().item():.3g}]"
        )
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.item())


def make_optimizer(module: SwinUnetr, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(
        module.parameters(), lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.eps
    )


def standardize_study(study: Study, mode: ZScoreMode = "all_voxels") -> Study:
    """Apply per-volume standardization to every modality (mask untouched)."""
    standardized = {
        name: zscore_apply(vol, zscore_fit(vol, mode)) for name, vol in study.modalities.items()
    }
    return Study(subject_id=study.subject_id, modalities=standardized, mask=study.mask)


def fit(
    studies: Sequence[Study],
    cfg: TrainConfig,
    model_cfg: ModelConfig | None = None,
    out_dir: str | Path | None = None,
    zscore_mode: ZScoreMode = "all_voxels",
) -> tuple[ParameterStore, list[tuple[int, float]]]:
    """Train one scenario model.

    Runs epochs x steps_per_epoch updates over per-volume standardized
    studies, drawing one random patch per step. When out_dir is given, a
    checkpoint is written after every epoch and the loss curve is persisted
    as a two-column table. Sampling is a pure function of (seed, epoch,
    step), so equal configs give identical loss curves.
    """
    if not studies:
        raise DataError("no training studies given")
    for s in studies:
        if not s.complete:
            raise DataError(f"training study {s.subject_id!r} is incomplete")
    model_cfg = model_cfg or ModelConfig()

    prepared = [standardize_study(s, zscore_mode) for s in studies]
    steps_per_epoch = cfg.steps_per_epoch or len(prepared)

    module = build_model(model_cfg, seed=cfg.seed).to_module()
    optimizer = make_optimizer(module, cfg)
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    curve: list[tuple[int, float]] = []
    step = 0
    for epoch in range(cfg.epochs):
        for k in range(steps_per_epoch):
            rng = np.random.default_rng([cfg.seed & 0xFFFFFFFF, epoch, k])
            study = prepared[k % len(prepared)]
            batch = [
                sample_patch(study, cfg.target_modality, cfg.patch, rng)
                for _ in range(cfg.batch_size)
            ]
            loss = train_step(module, optimizer, batch)
            step += 1
            curve.append((step, loss))
        if out_path is not None:
            store = snapshot(module, cfg, epoch=epoch + 1, step=step)
            ckpt.save_checkpoint(
                out_path / f"epoch_{epoch + 1:04d}.ckpt",
                store,
                ckpt.pack_optimizer(optimizer, module),
            )
            write_loss_curve(curve, out_path / LOSS_CURVE_FILENAME)

    return snapshot(module, cfg, epoch=cfg.epochs, step=step), curve


def snapshot(
    module: SwinUnetr, cfg: TrainConfig, epoch: int, step: int
) -> ParameterStore:
    return ParameterStore.from_module(
        module,
        meta={
            "scenario": cfg.target_modality,
            "input_modalities": list(input_modalities(cfg.target_modality)),
            "epoch": epoch,
            "step": step,
        },
    )


def fit_all_scenarios(
    studies: Sequence[Study],
    base_cfg: TrainConfig,
    model_cfg: ModelConfig | None = None,
    out_root: str | Path | None = None,
    zscore_mode: ZScoreMode = "all_voxels",
) -> dict[str, tuple[ParameterStore, list[tuple[int, float]]]]:
    """Train the four scenario models, one per missing modality."""
    results = {}
    for target in MODALITIES:
        cfg = replace(base_cfg, target_modality=target)
        out_dir = None if out_root is None else Path(out_root) / f"missing_{target}"
        results[target] = fit(studies, cfg, model_cfg, out_dir, zscore_mode)
    return results


def write_loss_curve(curve: Sequence[tuple[int, float]], path: str | Path) -> None:
    lines = ["step\tloss"] + [f"{step}\t{loss:.8e}" for step, loss in curve]
    Path(path).write_text("\n".join(lines) + "\n")


def read_loss_curve(path: str | Path) -> list[tuple[int, float]]:
    lines = Path(path).read_text().splitlines()[1:]
    out = []
    for line in lines:
        if line.strip():
            a, b = line.split("\t")
            out.append((int(a), float(b)))
    return out


def checkpoint_roundtrip(
    module: SwinUnetr,
    optimizer: torch.optim.Optimizer,
    cfg: TrainConfig,
    path: str | Path,
    epoch: int = 0,
    step: int = 0,
) -> tuple[ParameterStore, dict[str, Any] | None]:
    """Save then reload training state; the reload is bit-exact."""
    store = snapshot(module, cfg, epoch=epoch, step=step)
    ckpt.save_checkpoint(path, store, ckpt.pack_optimizer(optimizer, module))
    return ckpt.load_checkpoint(path)


def resume(
    path: str | Path, cfg: TrainConfig
) -> tuple[SwinUnetr, torch.optim.Optimizer, ParameterStore]:
    """Rebuild a live module + optimizer from a checkpoint file."""
    store, opt_blob = ckpt.load_checkpoint(path)
    module = store.to_module()
    optimizer = make_optimizer(module, cfg)
    if opt_blob is not None:
        ckpt.unpack_optimizer(optimizer, module, opt_blob)
    return module, optimizer, store
