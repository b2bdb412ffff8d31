"""Random rigid-plus-zoom augmentation for longitudinal scan triplets.

A draw consists of three per-axis rotations (uniform in [-pi/18, pi/18]), an
isotropic zoom (uniform in [0.95, 1.05]) and three continuous voxel shifts
(uniform in [-3, 3]).  The transform is composed about the volume center in
the order rotate-x, rotate-y, rotate-z, zoom, translate, and volumes are
resampled trilinearly with out-of-bounds samples set to 0.  All scans of a
subject share one transform so longitudinal structure is preserved.
"""

import hashlib
import math
from dataclasses import dataclass
from typing import List, Tuple, Union

import numpy as np

from .errors import InputError, ParameterError
from .volume_io import SubjectRecord, Volume3D

ROTATION_RANGE = (-math.pi / 18.0, math.pi / 18.0)
ZOOM_RANGE = (0.95, 1.05)
SHIFT_RANGE = (-3.0, 3.0)


@dataclass(frozen=True)
class AffineAugmentation:
    """One sampled transform.  ``zoom`` is isotropic by default; a per-axis
    triple is also accepted."""

    rotations: Tuple[float, float, float]
    zoom: Union[float, Tuple[float, float, float]]
    shifts: Tuple[float, float, float]

    def __post_init__(self):
        if len(self.rotations) != 3 or len(self.shifts) != 3:
            raise ParameterError("rotations and shifts must each have 3 components")
        zooms = np.atleast_1d(np.asarray(self.zoom, dtype=np.float64))
        if zooms.size not in (1, 3):
            raise ParameterError(f"zoom must be scalar or length-3, got {self.zoom!r}")
        if np.any(zooms <= 0):
            raise ParameterError(f"zoom factors must be positive, got {self.zoom!r}")

    def zoom_vector(self) -> np.ndarray:
        zooms = np.atleast_1d(np.asarray(self.zoom, dtype=np.float64))
        return np.repeat(zooms, 3) if zooms.size == 1 else zooms

    def matrix(self) -> np.ndarray:
        """Forward map in voxel coordinates (before recentering): rotate
        about x, then y, then z, then zoom."""
        rx, ry, rz = self.rotations
        cx, sx = math.cos(rx), math.sin(rx)
        cy, sy = math.cos(ry), math.sin(ry)
        cz, sz = math.cos(rz), math.sin(rz)
        mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
        my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
        mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
        return np.diag(self.zoom_vector()) @ mz @ my @ mx

    def to_dict(self) -> dict:
        zooms = np.atleast_1d(np.asarray(self.zoom, dtype=np.float64))
        return {
            "rotations": [float(r) for r in self.rotations],
            "zoom": float(zooms[0]) if zooms.size == 1 else [float(z) for z in zooms],
            "shifts": [float(s) for s in self.shifts],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AffineAugmentation":
        zoom = d["zoom"]
        return cls(
            rotations=tuple(float(r) for r in d["rotations"]),
            zoom=tuple(float(z) for z in zoom) if isinstance(zoom, list) else float(zoom),
            shifts=tuple(float(s) for s in d["shifts"]),
        )


def identity_augmentation() -> AffineAugmentation:
    return AffineAugmentation((0.0, 0.0, 0.0), 1.0, (0.0, 0.0, 0.0))


def sample_augmentation(rng: np.random.Generator) -> AffineAugmentation:
    """Draw one transform; the draw order is fixed for determinism."""
    rotations = tuple(rng.uniform(*ROTATION_RANGE) for _ in range(3))
    zoom = float(rng.uniform(*ZOOM_RANGE))
    shifts = tuple(rng.uniform(*SHIFT_RANGE) for _ in range(3))
    return AffineAugmentation(rotations, zoom, shifts)


def _trilinear_sample(data: np.ndarray, coords: np.ndarray) -> np.ndarray:
    # coords: (..., 3) fractional voxel positions; outside samples are 0.
    nx, ny, nz = data.shape
    base = np.floor(coords).astype(np.int64)
    frac = coords - base
    out = np.zeros(coords.shape[:-1])
    for corner in range(8):
        off = np.array([(corner >> 0) & 1, (corner >> 1) & 1, (corner >> 2) & 1])
        idx = base + off
        w = np.ones_like(out)
        for axis in range(3):
            f = frac[..., axis]
            w = w * (f if off[axis] else 1.0 - f)
        inside = (
            (idx[..., 0] >= 0) & (idx[..., 0] < nx)
            & (idx[..., 1] >= 0) & (idx[..., 1] < ny)
            & (idx[..., 2] >= 0) & (idx[..., 2] < nz)
        )
        cidx = np.where(inside[..., None], idx, 0)
        vals = np.where(inside, data[cidx[..., 0], cidx[..., 1], cidx[..., 2]], 0.0)
        out += np.where(w != 0.0, w * vals, 0.0)
    return out


def apply_affine(vol: Volume3D, aug: AffineAugmentation) -> Volume3D:
    """Resample the volume under the transform, composed about the volume
    center ((n-1)/2 per axis)."""
    dims = vol.dims
    center = (np.array(dims, dtype=np.float64) - 1.0) / 2.0
    m = aug.matrix()
    m_inv = np.linalg.inv(m)
    shifts = np.asarray(aug.shifts, dtype=np.float64)
    grid = np.stack(
        np.meshgrid(*(np.arange(d, dtype=np.float64) for d in dims), indexing="ij"),
        axis=-1,
    )
    # Output voxel p samples the input at m_inv (p - center - shift) + center.
    rel = grid - center - shifts
    src = rel @ m_inv.T + center
    data = _trilinear_sample(vol.data, src)
    return Volume3D(data, vol.affine.copy())


def subject_stream(master_seed: int, subject_id: str, copy_index: int) -> np.random.Generator:
    """Independent per-(subject, copy) random stream, stable across runs."""
    digest = hashlib.sha256(subject_id.encode("utf-8")).digest()
    sid_hash = int.from_bytes(digest[:8], "little")
    return np.random.default_rng((int(master_seed), sid_hash, int(copy_index)))


def augment_record(record: SubjectRecord, aug: AffineAugmentation, copy_index: int) -> SubjectRecord:
    scans = {year: apply_affine(vol, aug) for year, vol in record.scans.items()}
    return SubjectRecord(
        subject_id=f"{record.subject_id}__aug{copy_index}",
        group=record.group,
        scans=scans,
        source_id=record.subject_id,
        transform=aug,
    )


def augment_cohort(
    records: List[SubjectRecord], seed: int, n_copies: int = 2
) -> List[SubjectRecord]:
    """Originals plus ``n_copies`` transformed copies per subject.

    Each (subject, copy) pair draws from its own derived stream, so the
    output is independent of iteration order and stable under cohort
    membership changes.
    """
    if n_copies < 0:
        raise ParameterError(f"n_copies must be >= 0, got {n_copies}")
    if not records:
        raise InputError("no subject records to augment")
    out = list(records)
    for record in records:
        for copy_index in range(1, n_copies + 1):
            rng = subject_stream(seed, record.subject_id, copy_index)
            aug = sample_augmentation(rng)
            out.append(augment_record(record, aug, copy_index))
    return out
