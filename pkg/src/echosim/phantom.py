"""Synthetic speckle phantom with analytically known motion.

The phantom is an annular (C-shaped) myocardial band over a speckle
texture. Motion is static, rigid translation, or radial contraction,
applied identically to the texture and the mesh. A per-frame
decorrelation profile replaces a chosen fraction of pixels with fresh
speckle, non-cumulatively relative to the base texture, so the expected
ES-referenced correlation at a point is simply 1 - fraction.

The redraw fraction is defined per (frame, longitudinal index) and
extended over the whole image via the nearest mesh point, so correlation
windows that straddle the band edge see a consistent decorrelation
level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates
from scipy.spatial import cKDTree

from .data_model import Mesh, VideoTensor
from .errors import MetadataError

SPECKLE_SIGMA_PX = 1.2

MOTION_KINDS = ("static", "translate", "contract")


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple[int, int] = (128, 128)
    frames: int = 16
    motion: str = "static"
    motion_delta: tuple[float, float] = (0.4, 0.3)   # (dx, dz) px / frame
    contract_amp: float = 0.08
    decorr: str = "none"
    es_index: int = 0
    l: int = 36
    r: int = 5
    pixel_spacing: tuple[float, float] = (0.3, 0.3)
    fps: float = 25.0

    def __post_init__(self):
        if self.motion not in MOTION_KINDS:
            raise MetadataError(f"unknown motion kind '{self.motion}'")
        if self.frames < 2:
            raise MetadataError("phantom needs at least 2 frames")


def parse_decorr(spec: str, frames: int, l: int,
                 es_index: int) -> np.ndarray:
    """Decorrelation profile -> (T, l) redraw fractions.

    Accepted forms: "none", "constant:F", "ramp:FMAX" (linear in t),
    "spatial:LO:HI" (linear along the band, constant in t). The ES frame
    is always 0 so the reference texture stays pristine.
    """
    parts = spec.split(":")
    kind = parts[0]
    prof = np.zeros((frames, l))
    ts = np.arange(frames)
    if kind == "none":
        pass
    elif kind == "constant":
        prof[:] = _frac(parts, 1)
    elif kind == "ramp":
        fmax = _frac(parts, 1)
        prof[:] = (fmax * ts / max(frames - 1, 1))[:, None]
    elif kind == "spatial":
        lo = _frac(parts, 1)
        hi = _frac(parts, 2)
        prof[:] = np.linspace(lo, hi, l)[None, :]
    else:
        raise MetadataError(f"unknown decorrelation profile '{spec}'")
    prof[es_index] = 0.0
    return prof


def _frac(parts, idx) -> float:
    try:
        val = float(parts[idx])
    except (IndexError, ValueError) as exc:
        raise MetadataError(f"malformed decorrelation profile: {':'.join(parts)}") from exc
    if not 0.0 <= val <= 1.0:
        raise MetadataError(f"decorrelation fraction {val} outside [0, 1]")
    return val


def _speckle_texture(rng: np.random.Generator, shape) -> np.ndarray:
    """Rayleigh-amplitude speckle texture normalized into [0, 1]."""
    re = gaussian_filter(rng.standard_normal(shape), SPECKLE_SIGMA_PX)
    im = gaussian_filter(rng.standard_normal(shape), SPECKLE_SIGMA_PX)
    env = np.hypot(re, im)
    ref = np.percentile(env, 99.5)
    return np.clip(env / ref, 0.0, 1.0)


def _band_mesh(spec: PhantomSpec) -> np.ndarray:
    """ES-frame mesh: a C-shaped annular band opening toward the top."""
    h, w = spec.shape
    s = min(h, w)
    cx, cz = w / 2.0, 0.44 * h
    r_in, r_out = 0.20 * s, 0.42 * s
    phi = np.linspace(np.deg2rad(-20.0), np.deg2rad(200.0), spec.l)
    rad = np.linspace(r_in, r_out, spec.r)
    px = cx + np.cos(phi)[:, None] * rad[None, :]
    pz = cz + np.sin(phi)[:, None] * rad[None, :]
    return np.stack([px, pz], axis=-1)


def _motion_offsets(spec: PhantomSpec) -> np.ndarray:
    """Cumulative translation (T, 2) relative to the ES frame."""
    ts = np.arange(spec.frames) - spec.es_index
    return np.outer(ts, np.asarray(spec.motion_delta, dtype=float))


def _contract_scale(spec: PhantomSpec, t: int) -> float:
    u = t / max(spec.frames - 1, 1)
    u0 = spec.es_index / max(spec.frames - 1, 1)
    return 1.0 - spec.contract_amp * (np.sin(np.pi * u) - np.sin(np.pi * u0))


def synth_phantom(spec: PhantomSpec, seed: int):
    """Build the phantom video, mesh, and decorrelation profile.

    Returns (VideoTensor, Mesh, profile) where profile is the (T, l)
    redraw-fraction array actually applied.
    """
    h, w = spec.shape
    tdim = spec.frames
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 100]))
    prof = parse_decorr(spec.decorr, tdim, spec.l, spec.es_index)

    base_mesh = _band_mesh(spec)
    mesh_pts = np.zeros((tdim, spec.l, spec.r, 2))
    offsets = _motion_offsets(spec)
    center = np.array([w / 2.0, 0.44 * h])
    for t in range(tdim):
        if spec.motion == "translate":
            mesh_pts[t] = base_mesh + offsets[t]
        elif spec.motion == "contract":
            k = _contract_scale(spec, t)
            mesh_pts[t] = center + (base_mesh - center) * k
        else:
            mesh_pts[t] = base_mesh
    mesh = Mesh(points=mesh_pts)

    # base texture on a padded canvas so translations stay exact
    pad = int(np.ceil(np.abs(offsets).max())) + 2 if spec.motion == "translate" else 0
    canvas = _speckle_texture(rng, (h + 2 * pad, w + 2 * pad))

    # pixel -> longitudinal index assignment via the nearest ES mesh point
    flat = base_mesh.reshape(-1, 2)
    tree = cKDTree(flat)
    xx, zz = np.meshgrid(np.arange(w), np.arange(h))
    _, nearest = tree.query(np.stack([xx.ravel(), zz.ravel()], axis=1))
    long_idx = (nearest // spec.r).reshape(h, w)

    frames = np.zeros((tdim, h, w), dtype=np.float32)
    for t in range(tdim):
        if spec.motion == "translate":
            dx, dz = np.round(offsets[t]).astype(int)
            moved = canvas[pad - dz: pad - dz + h, pad - dx: pad - dx + w]
        elif spec.motion == "contract":
            k = _contract_scale(spec, t)
            src_x = center[0] + (xx - center[0]) / k
            src_z = center[1] + (zz - center[1]) / k
            moved = map_coordinates(canvas, [src_z, src_x], order=1,
                                    mode="nearest")
        else:
            moved = canvas
        q = prof[t][long_idx]
        if q.max() > 0:
            fresh = _speckle_texture(rng, (h, w))
            redraw = rng.random((h, w)) < q
            moved = np.where(redraw, fresh, moved)
        frames[t] = moved
    video = VideoTensor(data=np.clip(frames, 0.0, 1.0),
                        pixel_spacing=spec.pixel_spacing,
                        es_index=spec.es_index, fps=spec.fps)
    return video, mesh, prof


def write_profile_csv(path, profile: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("t,i,fraction\n")
        tdim, l = profile.shape
        for t in range(tdim):
            for i in range(l):
                fh.write(f"{t},{i},{profile[t, i]:.6g}\n")
