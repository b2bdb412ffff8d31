"""Volume and cohort-manifest I/O.

Two on-disk volume formats are supported:

* NIfTI-1 single-file ``.nii`` (read and write).  Reading handles little- and
  big-endian headers, int16 / float32 / float64 voxels, and the
  ``scl_slope`` / ``scl_inter`` intensity scaling.  Writing always emits
  little-endian float32.
* A raw format ``<name>.vol``: little-endian float32 voxels in x-fastest
  linear order, with a ``<name>.json`` sidecar holding
  ``{"dims": [nx, ny, nz], "affine": [[...4x4...]]}``.

Voxel data is float64 in memory and float32 at rest.  A cohort manifest is a
JSON file ``{"subjects": [{"id": ..., "group": ..., "scans": {"0": path,
...}}]}`` with scan paths resolved relative to the manifest's directory.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import (
    CorruptionError,
    FormatError,
    ManifestError,
    ShapeError,
    UnsupportedError,
)

GROUPS = ("CN", "MCI", "Dementia")

# NIfTI-1 datatype codes this reader accepts.
_NIFTI_DTYPES = {4: "i2", 16: "f4", 64: "f8"}


@dataclass
class Volume3D:
    """A 3D scalar volume with a voxel-to-world affine.

    ``data`` has shape ``(nx, ny, nz)`` and dtype float64; element
    ``data[x, y, z]`` is the voxel at grid position (x, y, z).  The
    serialized layout is x-fastest, which corresponds to Fortran order for
    this shape.
    """

    data: np.ndarray
    affine: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ShapeError(f"volume data must be 3D, got {self.data.ndim}D")
        if min(self.data.shape) < 1:
            raise ShapeError(f"volume dims must be positive, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise CorruptionError("volume contains non-finite values")
        self.affine = np.asarray(self.affine, dtype=np.float64)
        if self.affine.shape != (4, 4):
            raise ShapeError(f"affine must be 4x4, got {self.affine.shape}")

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.data.shape

    @classmethod
    def from_flat(cls, dims, flat, affine=None) -> "Volume3D":
        """Build a volume from an x-fastest flat value sequence."""
        dims = tuple(int(d) for d in dims)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != int(np.prod(dims)):
            raise CorruptionError(
                f"payload has {flat.size} values, dims {dims} need {int(np.prod(dims))}"
            )
        data = flat.reshape(dims, order="F")
        if affine is None:
            affine = np.eye(4)
        return cls(np.ascontiguousarray(data), np.asarray(affine, dtype=np.float64))

    def flat(self) -> np.ndarray:
        """Values in x-fastest linear order."""
        return self.data.ravel(order="F")


@dataclass
class SubjectRecord:
    """One subject's loaded scans, keyed by integer year."""

    subject_id: str
    group: str
    scans: Dict[int, Volume3D]
    source_id: Optional[str] = None
    transform: Optional[object] = None  # AffineAugmentation for augmented copies

    def __post_init__(self):
        if self.group not in GROUPS:
            raise ManifestError(f"unknown group {self.group!r} for subject {self.subject_id!r}")
        dims = None
        for year, vol in sorted(self.scans.items()):
            if dims is None:
                dims = vol.dims
            elif vol.dims != dims:
                raise ShapeError(
                    f"subject {self.subject_id!r} scans disagree on dims: "
                    f"{dims} vs {vol.dims} (year {year})"
                )

    @property
    def years(self) -> List[int]:
        return sorted(self.scans)

    def has_triplet(self) -> bool:
        return {0, 1, 2} <= set(self.scans)


@dataclass
class ManifestEntry:
    subject_id: str
    group: str
    scan_paths: Dict[int, Path]

    @property
    def years(self) -> List[int]:
        return sorted(self.scan_paths)

    def has_triplet(self) -> bool:
        return {0, 1, 2} <= set(self.scan_paths)


@dataclass
class CohortManifest:
    """Subject records by reference: file paths per scan plus group labels."""

    entries: List[ManifestEntry]
    path: Optional[Path] = None

    @property
    def subject_ids(self) -> List[str]:
        return [e.subject_id for e in self.entries]

    def entry(self, subject_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.subject_id == subject_id:
                return e
        raise ManifestError(f"unknown subject {subject_id!r}")

    def load_record(self, subject_id: str) -> SubjectRecord:
        e = self.entry(subject_id)
        scans = {year: read_volume(p) for year, p in e.scan_paths.items()}
        return SubjectRecord(e.subject_id, e.group, scans)

    def load_records(self, subject_ids=None) -> List[SubjectRecord]:
        ids = self.subject_ids if subject_ids is None else list(subject_ids)
        return [self.load_record(sid) for sid in ids]


# ---------------------------------------------------------------------------
# raw .vol format
# ---------------------------------------------------------------------------

def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def _read_raw(path: Path) -> Volume3D:
    side = _sidecar_path(path)
    if not side.exists():
        raise FormatError(f"missing sidecar {side} for raw volume {path}")
    try:
        meta = json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"sidecar {side} is not valid JSON: {exc}") from exc
    if not isinstance(meta, dict) or "dims" not in meta or "affine" not in meta:
        raise FormatError(f"sidecar {side} must contain 'dims' and 'affine'")
    dims = meta["dims"]
    if (
        not isinstance(dims, list)
        or len(dims) != 3
        or any((not isinstance(d, int)) or d < 1 for d in dims)
    ):
        raise FormatError(f"sidecar {side} dims must be 3 positive ints, got {dims!r}")
    affine = np.asarray(meta["affine"], dtype=np.float64)
    if affine.shape != (4, 4):
        raise FormatError(f"sidecar {side} affine must be 4x4")
    payload = path.read_bytes()
    count = dims[0] * dims[1] * dims[2]
    if len(payload) != 4 * count:
        raise CorruptionError(
            f"{path} holds {len(payload)} bytes, dims {dims} need {4 * count}"
        )
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    if not np.all(np.isfinite(flat)):
        raise CorruptionError(f"{path} contains non-finite voxel values")
    return Volume3D.from_flat(dims, flat, affine)


def _write_raw(vol: Volume3D, path: Path) -> None:
    path.write_bytes(vol.flat().astype("<f4").tobytes())
    meta = {
        "dims": [int(d) for d in vol.dims],
        "affine": [[float(v) for v in row] for row in vol.affine],
    }
    _sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# NIfTI-1 single-file format
# ---------------------------------------------------------------------------

def _read_nifti(path: Path) -> Volume3D:
    blob = path.read_bytes()
    if len(blob) < 348:
        raise FormatError(f"{path} is too short to hold a NIfTI-1 header")
    # Endianness is detected from sizeof_hdr, which must decode to 348.
    for bo in ("<", ">"):
        if struct.unpack_from(bo + "i", blob, 0)[0] == 348:
            break
    else:
        raise FormatError(f"{path} has an invalid NIfTI-1 sizeof_hdr")
    magic = struct.unpack_from("4s", blob, 344)[0]
    if magic != b"n+1\x00":
        if magic == b"ni1\x00":
            raise UnsupportedError(f"{path} is a two-file NIfTI pair, not supported")
        raise FormatError(f"{path} has wrong NIfTI-1 magic {magic!r}")
    dim = struct.unpack_from(bo + "8h", blob, 40)
    ndim = dim[0]
    if ndim < 3 or ndim > 7:
        raise UnsupportedError(f"{path} has dim[0]={ndim}, need a 3D volume")
    if any(d not in (0, 1) for d in dim[4 : 1 + ndim]):
        raise UnsupportedError(f"{path} has more than one frame, not supported")
    nx, ny, nz = dim[1], dim[2], dim[3]
    if min(nx, ny, nz) < 1:
        raise FormatError(f"{path} has non-positive dims {dim[1:4]}")
    datatype = struct.unpack_from(bo + "h", blob, 70)[0]
    if datatype not in _NIFTI_DTYPES:
        raise UnsupportedError(f"{path} uses unsupported NIfTI datatype code {datatype}")
    pixdim = struct.unpack_from(bo + "8f", blob, 76)
    vox_offset = int(struct.unpack_from(bo + "f", blob, 108)[0])
    if vox_offset < 348:
        raise FormatError(f"{path} has vox_offset {vox_offset} < 348")
    scl_slope = struct.unpack_from(bo + "f", blob, 112)[0]
    scl_inter = struct.unpack_from(bo + "f", blob, 116)[0]
    sform_code = struct.unpack_from(bo + "h", blob, 254)[0]
    if sform_code > 0:
        rows = struct.unpack_from(bo + "12f", blob, 280)
        affine = np.vstack([np.asarray(rows).reshape(3, 4), [0.0, 0.0, 0.0, 1.0]])
    else:
        affine = np.diag([pixdim[1] or 1.0, pixdim[2] or 1.0, pixdim[3] or 1.0, 1.0])
    dtype = np.dtype(bo + _NIFTI_DTYPES[datatype])
    count = nx * ny * nz
    if len(blob) < vox_offset + count * dtype.itemsize:
        raise CorruptionError(
            f"{path} payload is truncated: need {count * dtype.itemsize} bytes "
            f"at offset {vox_offset}, file has {len(blob)}"
        )
    raw = np.frombuffer(blob, dtype=dtype, count=count, offset=vox_offset)
    values = raw.astype(np.float64)
    # NIfTI-1: slope 0 means "no scaling stored"; otherwise v*slope + inter.
    if np.isfinite(scl_slope) and scl_slope != 0.0:
        values = values * float(scl_slope) + float(scl_inter)
    if not np.all(np.isfinite(values)):
        raise CorruptionError(f"{path} contains non-finite voxel values")
    return Volume3D.from_flat((nx, ny, nz), values, affine)


def _write_nifti(vol: Volume3D, path: Path) -> None:
    nx, ny, nz = vol.dims
    hdr = bytearray(352)  # 348-byte header + 4-byte extension flag
    struct.pack_into("<i", hdr, 0, 348)
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, 16)  # float32
    struct.pack_into("<h", hdr, 72, 32)  # bitpix
    spacings = [float(np.linalg.norm(vol.affine[:3, i])) or 1.0 for i in range(3)]
    struct.pack_into("<8f", hdr, 76, 1.0, *spacings, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, 352.0)  # vox_offset
    struct.pack_into("<f", hdr, 112, 1.0)  # scl_slope
    struct.pack_into("<f", hdr, 116, 0.0)  # scl_inter
    struct.pack_into("<B", hdr, 123, 2)  # xyzt_units: mm
    struct.pack_into("<h", hdr, 252, 0)  # qform_code
    struct.pack_into("<h", hdr, 254, 1)  # sform_code
    struct.pack_into("<3f", hdr, 268, *(float(v) for v in vol.affine[:3, 3]))
    struct.pack_into("<12f", hdr, 280, *(float(v) for v in vol.affine[:3, :].ravel()))
    struct.pack_into("4s", hdr, 344, b"n+1\x00")
    path.write_bytes(bytes(hdr) + vol.flat().astype("<f4").tobytes())


# ---------------------------------------------------------------------------
# public volume API
# ---------------------------------------------------------------------------

def read_volume(path) -> Volume3D:
    """Read a volume from ``.nii`` or ``.vol`` (+ JSON sidecar)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.suffix == ".nii":
        return _read_nifti(path)
    if path.suffix == ".vol":
        return _read_raw(path)
    raise FormatError(f"unrecognized volume extension {path.suffix!r} for {path}")


def write_volume(vol: Volume3D, path) -> Path:
    """Write a volume as ``.nii`` or ``.vol`` (+ sidecar), float32 at rest."""
    path = Path(path)
    if path.suffix == ".nii":
        _write_nifti(vol, path)
    elif path.suffix == ".vol":
        _write_raw(vol, path)
    else:
        raise FormatError(f"unrecognized volume extension {path.suffix!r} for {path}")
    return path


def pad_to_even(vol: Volume3D) -> Volume3D:
    """Append one zero plane at the high-index end of every odd axis.

    Idempotent and sum-preserving; the affine is unchanged because voxel
    (0, 0, 0) keeps its position.
    """
    nx, ny, nz = vol.dims
    out_dims = (nx + nx % 2, ny + ny % 2, nz + nz % 2)
    if out_dims == vol.dims:
        return Volume3D(vol.data.copy(), vol.affine.copy())
    data = np.zeros(out_dims, dtype=np.float64)
    data[:nx, :ny, :nz] = vol.data
    return Volume3D(data, vol.affine.copy())


# ---------------------------------------------------------------------------
# cohort manifest
# ---------------------------------------------------------------------------

def load_manifest(path, check_files: bool = True) -> CohortManifest:
    """Load and validate a cohort manifest.

    With ``check_files`` every referenced scan must exist; headers are
    parsed so malformed files fail here rather than mid-pipeline.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("subjects"), list):
        raise ManifestError(f"manifest {path} must be an object with a 'subjects' list")
    base = path.parent
    entries = []
    seen = set()
    for i, sub in enumerate(doc["subjects"]):
        if not isinstance(sub, dict):
            raise ManifestError(f"manifest {path} subject #{i} is not an object")
        sid = sub.get("id")
        group = sub.get("group")
        scans = sub.get("scans")
        if not isinstance(sid, str) or not sid:
            raise ManifestError(f"manifest {path} subject #{i} has no string id")
        if sid in seen:
            raise ManifestError(f"manifest {path} has duplicate subject id {sid!r}")
        seen.add(sid)
        if group not in GROUPS:
            raise ManifestError(
                f"manifest {path} subject {sid!r} has unknown group {group!r}"
            )
        if not isinstance(scans, dict) or not scans:
            raise ManifestError(f"manifest {path} subject {sid!r} has no scans map")
        scan_paths = {}
        for year_key, rel in scans.items():
            try:
                year = int(year_key)
            except (TypeError, ValueError):
                raise ManifestError(
                    f"manifest {path} subject {sid!r} has non-integer year {year_key!r}"
                )
            if year < 0 or year in scan_paths:
                raise ManifestError(
                    f"manifest {path} subject {sid!r} has bad year {year_key!r}"
                )
            if not isinstance(rel, str):
                raise ManifestError(
                    f"manifest {path} subject {sid!r} year {year} path is not a string"
                )
            p = Path(rel)
            scan_paths[year] = p if p.is_absolute() else base / p
        entries.append(ManifestEntry(sid, group, scan_paths))
    manifest = CohortManifest(entries, path=path)
    if check_files:
        for e in entries:
            for year, p in e.scan_paths.items():
                if not p.exists():
                    raise ManifestError(
                        f"manifest {path} subject {e.subject_id!r} year {year}: "
                        f"missing file {p}"
                    )
                read_volume(p)  # parse now so format errors surface early
    return manifest


def write_manifest(entries, path) -> Path:
    """Write a manifest; scan paths are stored relative to the manifest dir
    when possible."""
    path = Path(path)
    base = path.parent
    subjects = []
    for e in entries:
        scans = {}
        for year in sorted(e.scan_paths):
            p = Path(e.scan_paths[year])
            try:
                rel = p.relative_to(base)
            except ValueError:
                rel = p
            scans[str(year)] = str(rel)
        subjects.append({"id": e.subject_id, "group": e.group, "scans": scans})
    path.write_text(json.dumps({"subjects": subjects}, indent=2, sort_keys=True) + "\n")
    return path
