"""Volume comparison metrics: MAE, 3D SSIM, per-region MAE, ROI mean.

MAE averages over the full volume by default; an optional mask restricts it.
SSIM uses a separable 3D Gaussian window (size 11, sigma 1.5), constants
k1=0.01 / k2=0.03, and a dynamic range estimated from the joint min/max of
the two volumes unless given; the mean is taken over the interior map where
the window fits entirely.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.ndimage import convolve1d

from .errors import FormatError, ParameterError, ShapeError
from .volume_io import Volume3D

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_pair(a: Volume3D, b: Volume3D) -> Tuple[np.ndarray, np.ndarray]:
    if a.dims != b.dims:
        raise ShapeError(f"volume dims differ: {a.dims} vs {b.dims}")
    return a.data, b.data


def mae(a: Volume3D, b: Volume3D, mask: Optional[Volume3D] = None) -> float:
    """Mean absolute error, optionally restricted to a nonempty mask."""
    da, db = _as_pair(a, b)
    if mask is None:
        return float(np.mean(np.abs(da - db)))
    if mask.dims != a.dims:
        raise ShapeError(f"mask dims {mask.dims} do not match volume dims {a.dims}")
    sel = mask.data != 0
    if not sel.any():
        raise ParameterError("mask is empty")
    return float(np.mean(np.abs(da[sel] - db[sel])))


def _ssim_window() -> np.ndarray:
    half = (SSIM_WINDOW - 1) / 2.0
    offsets = np.arange(SSIM_WINDOW, dtype=np.float64) - half
    w = np.exp(-0.5 * (offsets / SSIM_SIGMA) ** 2)
    return w / w.sum()


def _filter3(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    for axis in range(3):
        x = convolve1d(x, w, axis=axis, mode="constant", cval=0.0)
    return x


def ssim3d(a: Volume3D, b: Volume3D, dynamic_range: Optional[float] = None) -> float:
    """Mean structural similarity over the interior of the SSIM map."""
    da, db = _as_pair(a, b)
    if min(a.dims) < SSIM_WINDOW:
        raise ShapeError(
            f"volume dims {a.dims} are smaller than the SSIM window {SSIM_WINDOW}"
        )
    if dynamic_range is None:
        lo = min(da.min(), db.min())
        hi = max(da.max(), db.max())
        dynamic_range = float(hi - lo)
    if dynamic_range <= 0:
        if np.array_equal(da, db):
            return 1.0
        raise ParameterError(
            "dynamic range is 0 for volumes that are not identical"
        )
    c1 = (SSIM_K1 * dynamic_range) ** 2
    c2 = (SSIM_K2 * dynamic_range) ** 2
    w = _ssim_window()
    mu_a = _filter3(da, w)
    mu_b = _filter3(db, w)
    ea2 = _filter3(da * da, w)
    eb2 = _filter3(db * db, w)
    eab = _filter3(da * db, w)
    var_a = ea2 - mu_a * mu_a
    var_b = eb2 - mu_b * mu_b
    cov = eab - mu_a * mu_b
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )
    # Only the interior has full window support under zero padding.
    r = SSIM_WINDOW // 2
    core = ssim_map[r:-r, r:-r, r:-r]
    return float(core.mean())


def regional_mae(a: Volume3D, b: Volume3D, atlas: Volume3D) -> Dict[int, float]:
    """Per-atlas-label MAE.  Labels are the rounded nonzero atlas values;
    empty labels never appear in the result."""
    da, db = _as_pair(a, b)
    if atlas.dims != a.dims:
        raise ShapeError(f"atlas dims {atlas.dims} do not match volume dims {a.dims}")
    labels = np.rint(atlas.data).astype(np.int64)
    diff = np.abs(da - db)
    out: Dict[int, float] = {}
    for label in np.unique(labels):
        if label == 0:
            continue
        sel = labels == label
        out[int(label)] = float(diff[sel].mean())
    return out


@dataclass(frozen=True)
class RoiDefinition:
    """A named region expressed as a union of atlas labels."""

    name: str
    labels: Tuple[int, ...]

    def __post_init__(self):
        if not self.labels:
            raise ParameterError(f"ROI {self.name!r} has no labels")

    def mask(self, atlas: Volume3D) -> np.ndarray:
        labels = np.rint(atlas.data).astype(np.int64)
        return np.isin(labels, np.asarray(self.labels, dtype=np.int64))


def meta_roi_suvr(vol: Volume3D, atlas: Volume3D, roi: RoiDefinition) -> float:
    """Mean intensity over the ROI's label union."""
    if atlas.dims != vol.dims:
        raise ShapeError(f"atlas dims {atlas.dims} do not match volume dims {vol.dims}")
    sel = roi.mask(atlas)
    if not sel.any():
        raise ParameterError(
            f"ROI {roi.name!r} labels {roi.labels} select no atlas voxels"
        )
    return float(vol.data[sel].mean())


def load_roi(path) -> RoiDefinition:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"ROI file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "name" not in doc or "labels" not in doc:
        raise FormatError(f"ROI file {path} must contain 'name' and 'labels'")
    try:
        labels = tuple(int(v) for v in doc["labels"])
    except (TypeError, ValueError) as exc:
        raise FormatError(f"ROI file {path} labels must be integers: {exc}") from exc
    return RoiDefinition(str(doc["name"]), labels)


def save_roi(roi: RoiDefinition, path) -> Path:
    path = Path(path)
    path.write_text(
        json.dumps({"name": roi.name, "labels": list(roi.labels)}, indent=2) + "\n"
    )
    return path
