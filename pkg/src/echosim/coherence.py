"""Static and dynamic coherence maps.

A coherence map is a (T, H, W) field in [0, 1] that sets the balance
between motion-coherent (myocardial) and randomized (background)
scatterer contributions. The static map is a constant probability p
inside the myocardial mask; the dynamic map interpolates measured
correlation values across the mask. Both decay linearly to 0 over a
configurable falloff band outside the mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt

from .bilinear import locate_with_fallback
from .correlation import CorrelationCurves
from .data_model import Mesh, mask_from_mesh
from .errors import FormatError

DEFAULT_FALLOFF_PX = 10.0

KIND_STATIC = "static"
KIND_DYNAMIC = "dynamic"


@dataclass(frozen=True)
class CoherenceMap:
    values: np.ndarray    # (T, H, W) float32 in [0, 1]
    kind: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 3:
            raise FormatError("coherence map must be (T, H, W)")
        if values.size and (values.min() < -1e-6 or values.max() > 1 + 1e-6):
            raise FormatError("coherence values must lie in [0, 1]")
        object.__setattr__(self, "values", np.clip(values, 0.0, 1.0))

    def at(self, t: int, x, z) -> np.ndarray:
        """Nearest-pixel lookup; positions outside the image return 0."""
        x = np.asarray(x)
        z = np.asarray(z)
        h, w = self.values.shape[1:]
        xi = np.round(x).astype(np.int64)
        zi = np.round(z).astype(np.int64)
        inside = (xi >= 0) & (xi < w) & (zi >= 0) & (zi < h)
        out = np.zeros(np.broadcast(x, z).shape, dtype=np.float64)
        out[inside] = self.values[t, zi[inside], xi[inside]]
        return out


def _falloff(values_inside: np.ndarray, mask: np.ndarray,
             falloff_px: float) -> np.ndarray:
    """Extend an in-mask field outside the mask with a linear ramp.

    Each outside pixel takes the value of its nearest mask pixel scaled
    by max(0, 1 - d / falloff), d being Euclidean distance to the mask.
    """
    if not mask.any():
        return np.zeros_like(values_inside)
    dist, (iz, ix) = distance_transform_edt(~mask, return_indices=True)
    nearest = values_inside[iz, ix]
    if falloff_px <= 0:
        ramp = (dist == 0).astype(np.float64)
    else:
        ramp = np.clip(1.0 - dist / falloff_px, 0.0, 1.0)
    out = nearest * ramp
    out[mask] = values_inside[mask]
    return out


def static_map(mesh: Mesh, p: float, falloff_px: float = DEFAULT_FALLOFF_PX,
               shape=None) -> CoherenceMap:
    """Strategy-1 coherence: probability p inside the mask, linear falloff."""
    if not 0.0 <= p <= 1.0:
        raise FormatError(f"probability p={p} must lie in [0, 1]")
    if falloff_px < 0:
        raise FormatError("falloff must be >= 0")
    h, w = shape
    out = np.zeros((mesh.frames, h, w), dtype=np.float64)
    for t in range(mesh.frames):
        mask = mask_from_mesh(mesh, t, (h, w))
        field = np.where(mask, float(p), 0.0)
        out[t] = _falloff(field, mask, falloff_px)
    return CoherenceMap(values=out, kind=KIND_STATIC)


def dynamic_map(curves: CorrelationCurves, mesh: Mesh,
                falloff_px: float = DEFAULT_FALLOFF_PX,
                shape=None) -> CoherenceMap:
    """Strategy-2 coherence: measured correlation interpolated over the mask.

    Curve values are clamped to [0, 1]; each in-mask pixel interpolates
    bilinearly between the four mesh points of its containing cell.
    Pixels inside the mask but outside every cell take the nearest mesh
    point's value. Invalid curve entries borrow the nearest valid value
    in the same frame.
    """
    if (curves.frames, curves.values.shape[1], curves.values.shape[2]) != (
            mesh.frames, mesh.l, mesh.r):
        raise FormatError("curves and mesh dimensions disagree")
    h, w = shape
    vals = np.clip(curves.values, 0.0, 1.0)
    out = np.zeros((mesh.frames, h, w), dtype=np.float64)
    for t in range(mesh.frames):
        frame_vals = _fill_invalid(vals[t], curves.valid[t], mesh.points[t])
        mask = mask_from_mesh(mesh, t, (h, w))
        field = np.zeros((h, w))
        zz, xx = np.nonzero(mask)
        if zz.size:
            pts = np.stack([xx, zz], axis=1).astype(float)
            ci, cj, uv, _ = locate_with_fallback(mesh.points[t], pts)
            v00 = frame_vals[ci, cj]
            v10 = frame_vals[ci + 1, cj]
            v01 = frame_vals[ci, cj + 1]
            v11 = frame_vals[ci + 1, cj + 1]
            u, v = uv[:, 0], uv[:, 1]
            interp = ((1 - u) * (1 - v) * v00 + u * (1 - v) * v10
                      + (1 - u) * v * v01 + u * v * v11)
            field[zz, xx] = interp
        out[t] = _falloff(field, mask, falloff_px)
    return CoherenceMap(values=out, kind=KIND_DYNAMIC)


def _fill_invalid(frame_vals: np.ndarray, frame_valid: np.ndarray,
                  mesh_pts: np.ndarray) -> np.ndarray:
    if frame_valid.all():
        return frame_vals
    if not frame_valid.any():
        return np.ones_like(frame_vals)
    from scipy.spatial import cKDTree

    good = np.nonzero(frame_valid.ravel())[0]
    bad = np.nonzero(~frame_valid.ravel())[0]
    flat_pts = mesh_pts.reshape(-1, 2)
    _, idx = cKDTree(flat_pts[good]).query(flat_pts[bad])
    filled = frame_vals.ravel().copy()
    filled[bad] = filled[good[idx]]
    return filled.reshape(frame_vals.shape)
