"""Core tensors, mesh geometry, probe configuration, and file I/O.

Coordinate convention: positions are (x, z) in image pixel units, where
x is the lateral (column) axis and z the axial (row) axis. Video data is
indexed [t, z, x]. Physical units enter only through pixel_spacing (mm
per pixel, axial then lateral) where wavelength-based quantities need
them.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import shapely
from shapely.geometry import Polygon

from .errors import FormatError, GeometryError, MetadataError

T32_MAGIC = b"T32TENS\x00"


# ---------------------------------------------------------------------------
# .t32 container
# ---------------------------------------------------------------------------

def save_array(path, arr: np.ndarray) -> None:
    """Write a float32 array in the .t32 container format."""
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(T32_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def load_array(path) -> np.ndarray:
    """Read a .t32 container. Raises FormatError on any malformation."""
    path = Path(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(T32_MAGIC) + 4 or blob[: len(T32_MAGIC)] != T32_MAGIC:
        raise FormatError(f"{path}: bad magic bytes, not a .t32 container")
    off = len(T32_MAGIC)
    (ndim,) = struct.unpack_from("<I", blob, off)
    off += 4
    if ndim == 0 or ndim > 32:
        raise FormatError(f"{path}: implausible ndim {ndim}")
    if len(blob) < off + 4 * ndim:
        raise FormatError(f"{path}: truncated dimension header")
    dims = struct.unpack_from(f"<{ndim}I", blob, off)
    off += 4 * ndim
    count = int(np.prod(dims, dtype=np.int64))
    if len(blob) - off != 4 * count:
        raise FormatError(
            f"{path}: payload holds {(len(blob) - off) // 4} floats, "
            f"dims imply {count}")
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
    return data.reshape(dims).astype(np.float32)


def _sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VideoTensor:
    """A T x H x W intensity sequence in [0, 1] with physical metadata."""

    data: np.ndarray                      # (T, H, W) float32
    pixel_spacing: tuple[float, float]    # (axial, lateral) mm / pixel
    es_index: int
    fps: float = 30.0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise FormatError("video tensor must be 3-dimensional (T, H, W)")
        if data.shape[0] < 2:
            raise MetadataError("video needs at least 2 frames")
        if not (0 <= self.es_index < data.shape[0]):
            raise MetadataError(
                f"es_index {self.es_index} out of range [0, {data.shape[0]})")
        object.__setattr__(self, "data", data)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape


def load_tensor(path) -> VideoTensor:
    """Load a .t32 video plus its JSON sidecar; intensities are clamped."""
    arr = load_array(path)
    if arr.ndim != 3:
        raise FormatError(f"{path}: expected 3 dims for a video, got {arr.ndim}")
    side = _sidecar_path(path)
    if not side.exists():
        raise MetadataError(f"missing sidecar {side}")
    try:
        meta = json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise MetadataError(f"{side}: invalid JSON ({exc})") from exc
    for key in ("pixel_spacing_mm", "es_index"):
        if key not in meta:
            raise MetadataError(f"{side}: missing required field '{key}'")
    spacing = meta["pixel_spacing_mm"]
    return VideoTensor(
        data=np.clip(arr, 0.0, 1.0),
        pixel_spacing=(float(spacing[0]), float(spacing[1])),
        es_index=int(meta["es_index"]),
        fps=float(meta.get("fps", 30.0)),
    )


def save_tensor(path, video: VideoTensor) -> None:
    save_array(path, video.data)
    meta = {
        "pixel_spacing_mm": list(video.pixel_spacing),
        "es_index": int(video.es_index),
        "fps": float(video.fps),
    }
    _sidecar_path(path).write_text(json.dumps(meta, indent=2))


@dataclass(frozen=True)
class Mesh:
    """Myocardial point grid: (T, l, r, 2) positions (x, z) in pixels."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 4 or pts.shape[-1] != 2:
            raise FormatError("mesh points must have shape (T, l, r, 2)")
        if pts.shape[1] < 2 or pts.shape[2] < 2:
            raise MetadataError("mesh needs l >= 2 and r >= 2")
        object.__setattr__(self, "points", pts)

    @property
    def frames(self) -> int:
        return self.points.shape[0]

    @property
    def l(self) -> int:
        return self.points.shape[1]

    @property
    def r(self) -> int:
        return self.points.shape[2]

    def boundary(self, t: int) -> np.ndarray:
        """Outer boundary polygon at frame t, traversed in band order.

        Longitudinal edge j=0, end cap at i=l-1, longitudinal edge j=r-1
        reversed, start cap at i=0.
        """
        pts = self.points[t]
        side0 = pts[:, 0]
        cap_end = pts[-1, 1:]
        side1 = pts[::-1, -1]
        cap_start = pts[0, -2:0:-1]
        return np.concatenate([side0, cap_end, side1, cap_start], axis=0)


def load_mesh(path) -> Mesh:
    path = Path(path)
    try:
        meta = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    for key in ("T", "l", "r", "points"):
        if key not in meta:
            raise MetadataError(f"{path}: missing mesh field '{key}'")
    t, l, r = int(meta["T"]), int(meta["l"]), int(meta["r"])
    flat = np.asarray(meta["points"], dtype=np.float64)
    if flat.size != 2 * t * l * r:
        raise FormatError(
            f"{path}: points array has {flat.size} values, "
            f"expected {2 * t * l * r}")
    return Mesh(points=flat.reshape(t, l, r, 2))


def save_mesh(path, mesh: Mesh) -> None:
    meta = {
        "T": mesh.frames,
        "l": mesh.l,
        "r": mesh.r,
        "points": [float(v) for v in mesh.points.ravel()],
    }
    Path(path).write_text(json.dumps(meta))


def mask_from_mesh(mesh: Mesh, t: int, shape) -> np.ndarray:
    """Rasterize the mesh's outer boundary at frame t into a boolean mask.

    Pixels covered by the polygon (boundary included) are True.
    """
    if not (0 <= t < mesh.frames):
        raise MetadataError(f"frame {t} out of range [0, {mesh.frames})")
    h, w = shape
    poly = Polygon(mesh.boundary(t))
    if not poly.is_valid:
        raise GeometryError(f"mesh boundary self-intersects at frame {t}")
    mask = np.zeros((h, w), dtype=bool)
    x0, z0, x1, z1 = poly.bounds
    cx0 = max(int(math.floor(x0)), 0)
    cx1 = min(int(math.ceil(x1)), w - 1)
    cz0 = max(int(math.floor(z0)), 0)
    cz1 = min(int(math.ceil(z1)), h - 1)
    if cx1 < cx0 or cz1 < cz0:
        return mask
    xs = np.arange(cx0, cx1 + 1)
    zs = np.arange(cz0, cz1 + 1)
    xx, zz = np.meshgrid(xs, zs)
    inside = shapely.covers(poly, shapely.points(xx.ravel(), zz.ravel()))
    mask[cz0:cz1 + 1, cx0:cx1 + 1] = inside.reshape(zz.shape)
    return mask


@dataclass(frozen=True)
class SectorGeometry:
    """Ultrasound sector: apex in pixels, polar bounds in radians / mm.

    Angles are measured from the axial (+z, downward) axis, positive
    toward +x.
    """

    apex: tuple[float, float]
    angle_min: float
    angle_max: float
    depth_min: float
    depth_max: float

    def __post_init__(self):
        if not self.angle_min < self.angle_max:
            raise MetadataError("sector needs angle_min < angle_max")
        if not 0 <= self.depth_min < self.depth_max:
            raise MetadataError("sector needs 0 <= depth_min < depth_max")

    def area_mm2(self) -> float:
        return 0.5 * (self.angle_max - self.angle_min) * (
            self.depth_max ** 2 - self.depth_min ** 2)

    def contains(self, x_px, z_px, pixel_spacing) -> np.ndarray:
        """Vectorized polar containment test for pixel coordinates."""
        sz, sx = pixel_spacing
        dx = (np.asarray(x_px, float) - self.apex[0]) * sx
        dz = (np.asarray(z_px, float) - self.apex[1]) * sz
        r = np.hypot(dx, dz)
        theta = np.arctan2(dx, dz)
        return ((theta >= self.angle_min) & (theta <= self.angle_max)
                & (r >= self.depth_min) & (r <= self.depth_max))

    def bbox_mm(self):
        """Bounding box (x_lo, x_hi, z_lo, z_hi) in mm relative to apex."""
        angles = np.linspace(self.angle_min, self.angle_max, 181)
        xs = np.concatenate([self.depth_min * np.sin(angles),
                             self.depth_max * np.sin(angles)])
        zs = np.concatenate([self.depth_min * np.cos(angles),
                             self.depth_max * np.cos(angles)])
        return float(xs.min()), float(xs.max()), float(zs.min()), float(zs.max())


@dataclass(frozen=True)
class ProbeConfig:
    """Imaging configuration for scatterer sampling and PSF rendering."""

    center_frequency: float = 2.5e6          # Hz
    speed_of_sound: float = 1540.0           # m/s
    scatterer_density: float = 5.0           # scatterers per squared wavelength
    pixel_spacing: tuple[float, float] = (0.3, 0.3)   # (axial, lateral) mm/px
    psf_sigma_axial: float | None = None     # mm; default = wavelength
    psf_sigma_lateral: float | None = None   # mm; default = 2 * wavelength
    dynamic_range_db: float = 40.0
    gamma: float = 2.0
    sector: SectorGeometry | None = field(default=None)

    def __post_init__(self):
        if self.center_frequency <= 0 or self.speed_of_sound <= 0:
            raise MetadataError("probe frequency and sound speed must be > 0")
        if self.scatterer_density <= 0:
            raise MetadataError("scatterer density must be > 0")
        if self.gamma <= 0:
            raise MetadataError("gamma must be > 0")
        if self.sigma_axial_mm <= 0 or self.sigma_lateral_mm <= 0:
            raise MetadataError("psf sigmas must be > 0")

    @property
    def wavelength_mm(self) -> float:
        return self.speed_of_sound / self.center_frequency * 1e3

    @property
    def sigma_axial_mm(self) -> float:
        return (self.psf_sigma_axial if self.psf_sigma_axial is not None
                else self.wavelength_mm)

    @property
    def sigma_lateral_mm(self) -> float:
        return (self.psf_sigma_lateral if self.psf_sigma_lateral is not None
                else 2.0 * self.wavelength_mm)

    @property
    def wavelength_px_axial(self) -> float:
        return self.wavelength_mm / self.pixel_spacing[0]


@dataclass(frozen=True)
class DisplacementField:
    """Dense displacement from the ES frame: (T, H, W, 2) = (dx, dz).

    Entries are zero-filled where valid is False.
    """

    data: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        valid = np.asarray(self.valid, dtype=bool)
        if data.ndim != 4 or data.shape[-1] != 2:
            raise FormatError("displacement field must be (T, H, W, 2)")
        if valid.shape != data.shape[:3]:
            raise FormatError("validity mask shape mismatch")
        if not np.isfinite(data[valid]).all():
            raise MetadataError("displacement must be finite where valid")
        data = data.copy()
        data[~valid] = 0.0
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "valid", valid)
