"""Volumetric MRI data: single volumes, per-subject studies, modality dropout.

A study bundles the four contrasts of one subject (T1w, T2w, FLAIR, T1CE)
plus an optional integer label mask. All members must share shape, spacing,
and affine. Dropout simulation removes one contrast per subject with a
deterministic per-subject choice so results do not depend on traversal order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nifti
from .errors import DataError

MODALITIES: tuple[str, ...] = ("T1w", "T2w", "FLAIR", "T1CE")
MASK_MODALITY = "SEG"
MASK_LABELS = frozenset({0, 1, 2, 3})

#: on-disk tag <-> modality name, per the usual challenge file naming
TAG_TO_MODALITY = {
    "t1": "T1w",
    "t2": "T2w",
    "flair": "FLAIR",
    "t1ce": "T1CE",
    "seg": MASK_MODALITY,
}
MODALITY_TO_TAG = {v: k for k, v in TAG_TO_MODALITY.items()}

DEFAULT_NAMING_PATTERN = "{subject}_{tag}.nii.gz"

GEOMETRY_TOL = 1e-5


@dataclass
class Volume:
    """One 3D scalar image with geometry metadata and a modality tag."""

    data: np.ndarray
    spacing: tuple[float, float, float]
    affine: np.ndarray
    modality: str

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or any(s < 1 for s in self.data.shape):
            raise DataError(f"volume data must be 3D with all dims >= 1, got {self.data.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise DataError(f"spacing entries must be > 0, got {self.spacing}")
        self.affine = np.asarray(self.affine, dtype=np.float64)
        if self.affine.shape != (4, 4):
            raise DataError(f"affine must be 4x4, got {self.affine.shape}")
        if self.modality not in MODALITIES and self.modality != MASK_MODALITY:
            raise DataError(f"unknown modality {self.modality!r}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    def with_data(self, data: np.ndarray, modality: str | None = None) -> "Volume":
        """Copy geometry onto new voxel data."""
        return Volume(
            data=data,
            spacing=self.spacing,
            affine=self.affine.copy(),
            modality=self.modality if modality is None else modality,
        )


@dataclass
class Study:
    """A subject's bundle of modality volumes plus an optional label mask."""

    subject_id: str
    modalities: dict[str, Volume]
    mask: Volume | None = None

    def __post_init__(self) -> None:
        if not 1 <= len(self.modalities) <= 4:
            raise DataError(
                f"study {self.subject_id!r} must hold 1-4 modalities, got {len(self.modalities)}"
            )
        for name in self.modalities:
            if name not in MODALITIES:
                raise DataError(f"study {self.subject_id!r}: illegal modality {name!r}")

    @property
    def complete(self) -> bool:
        return set(self.modalities) == set(MODALITIES)

    def any_volume(self) -> Volume:
        return next(iter(self.modalities.values()))


@dataclass(frozen=True)
class DropPlan:
    """Record of one simulated modality dropout."""

    subject_id: str
    dropped: str
    seed: int

    def __post_init__(self) -> None:
        if self.dropped not in MODALITIES:
            raise DataError(f"cannot drop {self.dropped!r}")


def geometry_equal(a: Volume, b: Volume, tol: float = GEOMETRY_TOL) -> bool:
    return (
        a.shape == b.shape
        and all(abs(x - y) <= tol for x, y in zip(a.spacing, b.spacing))
        and bool(np.all(np.abs(a.affine - b.affine) <= tol))
    )


def load_volume(path: str | Path, modality: str | None = None) -> Volume:
    """Load a NIfTI-1 volume, inferring the modality from the filename tag.

    Raises FileNotFoundError for a missing file and DataError for malformed
    headers, non-3D payloads, or NaN/Inf voxels.
    """
    path = Path(path)
    if modality is None:
        modality = _infer_modality(path.name)
        if modality is None:
            raise DataError(
                f"{path}: cannot infer modality from filename; pass modality= explicitly"
            )
    data, spacing, affine = nifti.read(path)
    return Volume(data=data, spacing=spacing, affine=affine, modality=modality)


def save_volume(v: Volume, path: str | Path) -> None:
    """Write a volume as NIfTI-1 (.nii or .nii.gz); reload is voxel-exact."""
    path = Path(path)
    if not path.parent.is_dir():
        raise DataError(f"parent directory does not exist: {path.parent}")
    try:
        nifti.write(path, v.data, v.spacing, v.affine)
    except PermissionError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def _infer_modality(filename: str) -> str | None:
    stem = filename
    for ext in (".gz", ".nii"):
        if stem.endswith(ext):
            stem = stem[: -len(ext)]
    tag = stem.rsplit("_", 1)[-1].lower()
    return TAG_TO_MODALITY.get(tag)


def _pattern_path(directory: Path, pattern: str, subject_id: str, tag: str) -> Path:
    return directory / pattern.format(subject=subject_id, tag=tag)


def load_study(
    directory: str | Path,
    subject_id: str,
    pattern: str = DEFAULT_NAMING_PATTERN,
) -> Study:
    """Assemble a Study from a subject directory.

    Picks up every modality file present under the naming pattern plus the
    label mask if one exists. Raises DataError when no modality is found or
    the member volumes disagree on geometry.
    """
    directory = Path(directory)
    modalities: dict[str, Volume] = {}
    for name in MODALITIES:
        p = _pattern_path(directory, pattern, subject_id, MODALITY_TO_TAG[name])
        if p.exists():
            modalities[name] = load_volume(p, modality=name)
    if not modalities:
        raise DataError(f"no modality files for subject {subject_id!r} in {directory}")

    mask = None
    mask_path = _pattern_path(directory, pattern, subject_id, MODALITY_TO_TAG[MASK_MODALITY])
    if mask_path.exists():
        mask = load_volume(mask_path, modality=MASK_MODALITY)

    study = Study(subject_id=subject_id, modalities=modalities, mask=mask)
    findings = validate_study(study)
    if findings:
        raise DataError(
            f"study {subject_id!r} failed validation: " + "; ".join(findings)
        )
    return study


def validate_study(s: Study) -> list[str]:
    """Check study invariants; returns one finding per violation (empty = ok)."""
    findings: list[str] = []
    ref_name, ref = next(iter(s.modalities.items()))
    members: list[tuple[str, Volume]] = list(s.modalities.items())
    if s.mask is not None:
        members.append((MASK_MODALITY, s.mask))

    for name, vol in members[1:]:
        if vol.shape != ref.shape:
            findings.append(f"shape mismatch: {name} {vol.shape} vs {ref_name} {ref.shape}")
        if any(abs(a - b) > GEOMETRY_TOL for a, b in zip(vol.spacing, ref.spacing)):
            findings.append(f"spacing mismatch: {name} {vol.spacing} vs {ref_name} {ref.spacing}")
        elif not np.all(np.abs(vol.affine - ref.affine) <= GEOMETRY_TOL):
            findings.append(f"affine mismatch: {name} vs {ref_name}")

    if s.mask is not None:
        labels = np.unique(s.mask.data)
        if not np.allclose(labels, np.round(labels)):
            findings.append(f"mask has non-integer labels: {labels[:8]}")
        else:
            illegal = sorted(set(int(v) for v in labels) - MASK_LABELS)
            if illegal:
                findings.append(f"mask has illegal label(s) {illegal}, allowed {sorted(MASK_LABELS)}")

    for name, vol in members:
        if not np.isfinite(vol.data).all():
            findings.append(f"{name} contains NaN/Inf voxels")
    return findings


def dropout_choice(seed: int, subject_id: str) -> str:
    """The modality dropped for a subject; pure function of (seed, subject)."""
    digest = hashlib.sha256(f"{seed}:{subject_id}".encode()).digest()
    return MODALITIES[int.from_bytes(digest[:8], "little") % len(MODALITIES)]


def drop_modality(s: Study, seed: int) -> tuple[Study, DropPlan]:
    """Remove one uniformly chosen modality from a complete study.

    The choice is a pure function of (seed, subject_id); repeated calls agree
    exactly. The input study is not mutated.
    """
    if not s.complete:
        raise DataError(
            f"study {s.subject_id!r} already incomplete: has {sorted(s.modalities)}"
        )
    dropped = dropout_choice(seed, s.subject_id)
    remaining = {k: v for k, v in s.modalities.items() if k != dropped}
    plan = DropPlan(subject_id=s.subject_id, dropped=dropped, seed=seed)
    return Study(subject_id=s.subject_id, modalities=remaining, mask=s.mask), plan


def discover_subjects(data_root: str | Path) -> list[str]:
    """List subject ids (one sub-directory per subject), sorted."""
    root = Path(data_root)
    if not root.is_dir():
        raise DataError(f"data root does not exist: {root}")
    return sorted(p.name for p in root.iterdir() if p.is_dir())


MANIFEST_HEADER = "subject\tdropped_modality"


def write_dropout_manifest(plans: list[DropPlan], path: str | Path) -> None:
    lines = [MANIFEST_HEADER]
    for plan in sorted(plans, key=lambda p: p.subject_id):
        lines.append(f"{plan.subject_id}\t{plan.dropped}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_dropout_manifest(path: str | Path) -> dict[str, str]:
    """Parse a dropout manifest into {subject_id: dropped_modality}."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise DataError(f"{path}: missing manifest header {MANIFEST_HEADER!r}")
    out: dict[str, str] = {}
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[1] not in MODALITIES:
            raise DataError(f"{path}:{i}: bad manifest line {line!r}")
        out[parts[0]] = parts[1]
    return out
