"""Minimal NIfTI-1 codec (little-endian, single-file .nii / .nii.gz).

Covers the subset of the format produced by brain-tumour challenge releases:
3D scalar volumes, optional gzip, scl_slope/scl_inter rescaling, sform or
qform orientation. Separate .hdr/.img pairs and big-endian files are
rejected.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

HEADER_SIZE = 348
_MAGIC_SINGLE = b"n+1\x00"
_MAGIC_PAIR = b"ni1\x00"

_DTYPES = {
    2: np.dtype("<u1"),
    4: np.dtype("<i2"),
    8: np.dtype("<i4"),
    16: np.dtype("<f4"),
    64: np.dtype("<f8"),
    256: np.dtype("<i1"),
    512: np.dtype("<u2"),
    768: np.dtype("<u4"),
}


def _is_gzip(path: Path) -> bool:
    with open(path, "rb") as f:
        return f.read(2) == b"\x1f\x8b"


def _quaternion_affine(
    quatern: tuple[float, float, float],
    qoffset: tuple[float, float, float],
    pixdim: tuple[float, ...],
) -> np.ndarray:
    b, c, d = quatern
    a_sq = 1.0 - (b * b + c * c + d * d)
    a = float(np.sqrt(a_sq)) if a_sq > 0 else 0.0
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ],
        dtype=np.float64,
    )
    qfac = -1.0 if pixdim[0] == -1.0 else 1.0
    affine = np.eye(4, dtype=np.float64)
    affine[:3, 0] = rot[:, 0] * pixdim[1]
    affine[:3, 1] = rot[:, 1] * pixdim[2]
    affine[:3, 2] = rot[:, 2] * pixdim[3] * qfac
    affine[:3, 3] = qoffset
    return affine


def read(path: str | Path) -> tuple[np.ndarray, tuple[float, float, float], np.ndarray]:
    """Read a NIfTI-1 file.

    Returns (data, spacing, affine) with data float32 in file axis order
    (C-contiguous), spacing in mm, affine the 4x4 voxel-to-world transform.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    opener = gzip.open if _is_gzip(path) else open
    with opener(path, "rb") as f:
        raw = f.read(HEADER_SIZE)
        if len(raw) < HEADER_SIZE:
            raise DataError(f"{path}: truncated NIfTI header")

        sizeof_hdr = struct.unpack_from("<i", raw, 0)[0]
        if sizeof_hdr != HEADER_SIZE:
            if struct.unpack_from(">i", raw, 0)[0] == HEADER_SIZE:
                raise DataError(f"{path}: big-endian NIfTI is not supported")
            raise DataError(f"{path}: malformed header (sizeof_hdr={sizeof_hdr})")
        magic = raw[344:348]
        if magic == _MAGIC_PAIR:
            raise DataError(f"{path}: detached .hdr/.img pairs are not supported")
        if magic != _MAGIC_SINGLE:
            raise DataError(f"{path}: malformed header (bad magic {magic!r})")

        dim = struct.unpack_from("<8h", raw, 40)
        ndim = dim[0]
        if ndim < 3 or any(dim[k] > 1 for k in range(4, min(ndim, 7) + 1)):
            raise DataError(f"{path}: non-3D payload (dim={dim[: ndim + 1]})")
        shape = tuple(int(dim[k]) for k in (1, 2, 3))
        if any(s < 1 for s in shape):
            raise DataError(f"{path}: malformed header (shape={shape})")

        datatype = struct.unpack_from("<h", raw, 70)[0]
        if datatype not in _DTYPES:
            raise DataError(f"{path}: unsupported datatype code {datatype}")
        dtype = _DTYPES[datatype]

        pixdim = struct.unpack_from("<8f", raw, 76)
        spacing = tuple(float(pixdim[k]) for k in (1, 2, 3))
        if any(not np.isfinite(s) or s <= 0 for s in spacing):
            raise DataError(f"{path}: malformed header (pixdim={spacing})")

        vox_offset = int(struct.unpack_from("<f", raw, 108)[0])
        scl_slope, scl_inter = struct.unpack_from("<2f", raw, 112)
        qform_code, sform_code = struct.unpack_from("<2h", raw, 252)
        quatern = struct.unpack_from("<3f", raw, 256)
        qoffset = struct.unpack_from("<3f", raw, 268)
        srow = np.frombuffer(raw[280:328], dtype="<f4").reshape(3, 4)

        if vox_offset < HEADER_SIZE:
            raise DataError(f"{path}: malformed header (vox_offset={vox_offset})")
        f.read(vox_offset - HEADER_SIZE)
        nbytes = int(np.prod(shape)) * dtype.itemsize
        payload = f.read(nbytes)
        if len(payload) < nbytes:
            raise DataError(f"{path}: truncated data payload")

    data = np.frombuffer(payload, dtype=dtype).reshape(shape, order="F")
    data = np.ascontiguousarray(data, dtype=np.float32)
    if not np.isfinite(scl_inter):
        scl_inter = 0.0
    rescale = (
        np.isfinite(scl_slope)
        and scl_slope != 0.0
        and (scl_slope, scl_inter) != (1.0, 0.0)
    )
    if rescale:
        data = data * np.float32(scl_slope) + np.float32(scl_inter)
    if not np.isfinite(data).all():
        raise DataError(f"{path}: volume contains NaN/Inf voxels")

    if sform_code > 0:
        affine = np.eye(4, dtype=np.float64)
        affine[:3, :] = srow.astype(np.float64)
    elif qform_code > 0:
        affine = _quaternion_affine(quatern, qoffset, pixdim)
    else:
        affine = np.diag([spacing[0], spacing[1], spacing[2], 1.0])
    return data, spacing, affine


def write(
    path: str | Path,
    data: np.ndarray,
    spacing: tuple[float, float, float],
    affine: np.ndarray,
) -> None:
    """Write a 3D float32 volume as single-file NIfTI-1 (gzip if *.gz).

    Output bytes are deterministic for identical inputs (gzip mtime pinned).
    """
    path = Path(path)
    if data.ndim != 3:
        raise DataError(f"can only write 3D volumes, got shape {data.shape}")
    arr = np.asarray(data, dtype="<f4")

    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, arr.shape[0], arr.shape[1], arr.shape[2], 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, 16)  # float32
    struct.pack_into("<h", hdr, 72, 32)  # bitpix
    struct.pack_into("<8f", hdr, 76, 1.0, spacing[0], spacing[1], spacing[2], 0, 0, 0, 0)
    struct.pack_into("<f", hdr, 108, float(HEADER_SIZE + 4))  # vox_offset
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)  # scl_slope, scl_inter
    struct.pack_into("<b", hdr, 123, 2)  # spatial units: mm
    struct.pack_into("<2h", hdr, 252, 0, 1)  # qform off, sform on
    aff = np.asarray(affine, dtype="<f4")
    struct.pack_into("<4f", hdr, 280, *aff[0, :])
    struct.pack_into("<4f", hdr, 296, *aff[1, :])
    struct.pack_into("<4f", hdr, 312, *aff[2, :])
    hdr[344:348] = _MAGIC_SINGLE

    body = bytes(hdr) + b"\x00\x00\x00\x00" + arr.tobytes(order="F")
    if path.suffix == ".gz":
        with open(path, "wb") as f:
            with gzip.GzipFile(filename="", fileobj=f, mode="wb", mtime=0) as gz:
                gz.write(body)
    else:
        with open(path, "wb") as f:
            f.write(body)
