"""Shared fixtures: synthetic volumes, studies, and on-disk toy datasets."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from scipy import ndimage

from mrisynth.model import ModelConfig
from mrisynth.volume_io import MODALITIES, MODALITY_TO_TAG, Study, Volume, save_volume


def structured_field(shape: tuple[int, int, int], seed: int) -> np.ndarray:
    """Smooth positive random field with a bright blob, zero background rim."""
    rng = np.random.default_rng(seed)
    field = ndimage.gaussian_filter(rng.normal(size=shape), sigma=2.0)
    zz = np.stack(np.meshgrid(*[np.arange(s) for s in shape], indexing="ij"))
    center = np.array([s / 2 for s in shape]).reshape(3, 1, 1, 1)
    dist = np.sqrt(((zz - center) ** 2).sum(axis=0))
    blob = np.exp(-(dist**2) / (2 * (min(shape) / 6) ** 2))
    vol = 100.0 * (field - field.min()) + 400.0 * blob
    vol[dist > min(shape) / 2.2] = 0.0
    return vol.astype(np.float32)


def make_volume(
    shape: tuple[int, int, int] = (16, 16, 16),
    seed: int = 0,
    modality: str = "T1w",
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> Volume:
    affine = np.diag([*spacing, 1.0])
    return Volume(
        data=structured_field(shape, seed), spacing=spacing, affine=affine, modality=modality
    )


def make_study(
    subject_id: str = "sub-000",
    shape: tuple[int, int, int] = (16, 16, 16),
    seed: int = 0,
    with_mask: bool = False,
) -> Study:
    modalities = {
        name: make_volume(shape, seed=seed * 10 + i, modality=name)
        for i, name in enumerate(MODALITIES)
    }
    mask = None
    if with_mask:
        ref = modalities["T1w"]
        rng = np.random.default_rng(seed + 999)
        labels = np.zeros(shape, dtype=np.float32)
        core = tuple(slice(s // 4, s // 2) for s in shape)
        labels[core] = rng.integers(1, 4, size=labels[core].shape)
        mask = ref.with_data(labels, modality="SEG")
    return Study(subject_id=subject_id, modalities=modalities, mask=mask)


def write_toy_dataset(
    root: Path,
    n_subjects: int = 2,
    shape: tuple[int, int, int] = (32, 32, 32),
    with_mask: bool = True,
) -> list[str]:
    """Write a challenge-style directory tree of synthetic studies."""
    subjects = []
    for i in range(n_subjects):
        subject = f"sub-{i:03d}"
        study = make_study(subject, shape=shape, seed=i, with_mask=with_mask)
        subject_dir = root / subject
        subject_dir.mkdir(parents=True)
        for name, vol in study.modalities.items():
            save_volume(vol, subject_dir / f"{subject}_{MODALITY_TO_TAG[name]}.nii.gz")
        if study.mask is not None:
            save_volume(study.mask, subject_dir / f"{subject}_seg.nii.gz")
        subjects.append(subject)
    return subjects


@pytest.fixture
def tiny_model_cfg() -> ModelConfig:
    """Smallest legal architecture; forwards an 8^3 volume in milliseconds."""
    return ModelConfig(feature_size=4, window=2, depths=(1, 1), num_heads=(1, 2))


@pytest.fixture
def toy_dataset(tmp_path: Path) -> tuple[Path, list[str]]:
    root = tmp_path / "data"
    root.mkdir()
    subjects = write_toy_dataset(root, n_subjects=2, shape=(16, 16, 16))
    return root, subjects
