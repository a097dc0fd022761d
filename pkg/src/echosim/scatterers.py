"""Scatterer sampling, population split, advection, and amplitudes.

Scatterers are sampled uniformly over the ultrasound sector at a density
of `scatterer_density` per squared wavelength. Myocardial scatterers are
pinned to a mesh cell via local (u, v) coordinates captured at the
end-systolic frame and advected with the mesh; background scatterers
keep a fixed position and redraw their backscatter coefficient every
frame.

Randomness is fully deterministic: every purpose (sampling, selection,
reflectivity draws, refresh) consumes its own numpy Generator seeded
from (master seed, fixed stream id), and all draws happen in one
vectorized call of fixed shape, so evaluation order cannot change
results.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bilinear import locate_with_fallback, quad_areas
from .coherence import CoherenceMap
from .data_model import Mesh, ProbeConfig, SectorGeometry, VideoTensor, mask_from_mesh
from .errors import MetadataError

# Fixed RNG stream ids under the master seed.
_STREAM_POSITIONS = 0
_STREAM_SELECT = 1
_STREAM_EPS_MYO = 2
_STREAM_EPS_BG = 3
_STREAM_REFRESH = 4

_DEGENERATE_AREA = 1e-9


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream]))


@dataclass
class ScattererSet:
    """Per-scatterer trajectories and per-frame amplitudes.

    `positions` are the sampled (x, z) pixel positions at ES. Background
    scatterers stay at positions[bg_index]; myocardial scatterers are
    positions[myo_index] advected through their (cell, u, v) anchors.
    amp_* are the final render amplitudes per frame.
    """

    strategy: str
    seed: int
    positions: np.ndarray            # (N, 2)
    myo_index: np.ndarray            # indices into positions
    bg_index: np.ndarray             # indices into positions
    myo_cell: np.ndarray             # (Nm, 2) int
    myo_uv: np.ndarray               # (Nm, 2)
    bsc_myo: np.ndarray              # (Nm,) fixed base BSC
    bsc_bg: np.ndarray               # (T, Nb) per-frame base BSC
    myo_positions: np.ndarray = field(default=None)   # (T, Nm, 2)
    myo_valid: np.ndarray = field(default=None)       # (T, Nm)
    amp_myo: np.ndarray = field(default=None)         # (T, Nm)
    amp_bg: np.ndarray = field(default=None)          # (T, Nb)

    @property
    def n_total(self) -> int:
        return len(self.positions)

    @property
    def n_myo(self) -> int:
        return len(self.myo_index)

    @property
    def n_bg(self) -> int:
        return len(self.bg_index)

    @property
    def frames(self) -> int:
        return self.bsc_bg.shape[0]

    @property
    def bg_positions(self) -> np.ndarray:
        return self.positions[self.bg_index]

    def frame_scatterers(self, t: int):
        """Concatenated (positions, amplitudes) contributing at frame t."""
        pos = np.concatenate([self.myo_positions[t], self.bg_positions])
        amp = np.concatenate([self.amp_myo[t], self.amp_bg[t]])
        return pos, amp


def sample_positions(sector: SectorGeometry, probe: ProbeConfig,
                     seed: int) -> np.ndarray:
    """Uniform scatterer positions over the sector, (N, 2) in pixels.

    N = round(density * area / wavelength^2). Rejection sampling in the
    sector's bounding box with the polar containment test; deterministic
    for a given seed.
    """
    area = sector.area_mm2()
    if area <= 0:
        raise MetadataError("sector area must be positive")
    lam = probe.wavelength_mm
    n = int(round(probe.scatterer_density * area / lam ** 2))
    rng = _rng(seed, _STREAM_POSITIONS)
    x_lo, x_hi, z_lo, z_hi = sector.bbox_mm()
    sz, sx = probe.pixel_spacing
    out = np.empty((0, 2))
    while len(out) < n:
        batch = max(2 * (n - len(out)), 1024)
        xm = rng.uniform(x_lo, x_hi, batch)
        zm = rng.uniform(z_lo, z_hi, batch)
        xp = xm / sx + sector.apex[0]
        zp = zm / sz + sector.apex[1]
        keep = sector.contains(xp, zp, probe.pixel_spacing)
        out = np.concatenate([out, np.stack([xp[keep], zp[keep]], axis=1)])
    return out[:n]


def bsc_from_video(video: VideoTensor, t: int, x: float, z: float,
                   gamma: float, epsilon: float) -> float:
    """Backscatter coefficient: intensity at the nearest pixel, raised to
    gamma, times the caller-supplied normal draw. Positions outside the
    image give 0."""
    if gamma <= 0:
        raise MetadataError("gamma must be > 0")
    return float(bsc_values(video, t,
                            np.asarray([x]), np.asarray([z]),
                            gamma, np.asarray([epsilon]))[0])


def bsc_values(video: VideoTensor, t: int, xs: np.ndarray, zs: np.ndarray,
               gamma: float, eps: np.ndarray) -> np.ndarray:
    """Vectorized form of bsc_from_video."""
    h, w = video.height, video.width
    xi = np.round(xs).astype(np.int64)
    zi = np.round(zs).astype(np.int64)
    inside = (xi >= 0) & (xi < w) & (zi >= 0) & (zi < h)
    out = np.zeros(len(xs))
    out[inside] = (video.data[t, zi[inside], xi[inside]].astype(np.float64)
                   ** gamma) * eps[inside]
    return out


def _anchor_myocardial(mesh: Mesh, es_index: int, positions: np.ndarray):
    ci, cj, uv, _ = locate_with_fallback(mesh.points[es_index], positions)
    return np.stack([ci, cj], axis=1), uv


def split_populations_s1(positions: np.ndarray, static_es: np.ndarray,
                         video: VideoTensor, mesh: Mesh, probe: ProbeConfig,
                         seed: int) -> ScattererSet:
    """Strategy-1 population split.

    Each scatterer becomes myocardial with the probability given by the
    ES-frame static coherence map at its position, else background.
    Myocardial scatterers get one fixed BSC sampled at ES; background
    scatterers get a fresh BSC draw every frame.
    """
    n = len(positions)
    tdim = video.frames
    es = video.es_index
    h, w = static_es.shape
    xi = np.clip(np.round(positions[:, 0]).astype(np.int64), 0, w - 1)
    zi = np.clip(np.round(positions[:, 1]).astype(np.int64), 0, h - 1)
    prob = np.asarray(static_es, dtype=np.float64)[zi, xi]
    is_myo = _rng(seed, _STREAM_SELECT).random(n) < prob
    myo_index = np.nonzero(is_myo)[0]
    bg_index = np.nonzero(~is_myo)[0]

    eps_myo = _rng(seed, _STREAM_EPS_MYO).standard_normal(n)[myo_index]
    bsc_myo = bsc_values(video, es, positions[myo_index, 0],
                         positions[myo_index, 1], probe.gamma, eps_myo)

    eps_bg = _rng(seed, _STREAM_EPS_BG).standard_normal((tdim, n))[:, bg_index]
    bsc_bg = np.stack([
        bsc_values(video, t, positions[bg_index, 0], positions[bg_index, 1],
                   probe.gamma, eps_bg[t])
        for t in range(tdim)
    ])

    myo_cell, myo_uv = _anchor_myocardial(mesh, es, positions[myo_index])
    return ScattererSet(strategy="s1", seed=seed, positions=positions,
                        myo_index=myo_index, bg_index=bg_index,
                        myo_cell=myo_cell, myo_uv=myo_uv,
                        bsc_myo=bsc_myo, bsc_bg=bsc_bg)


def s1_background_refresh(sset: ScattererSet, coherence: CoherenceMap,
                          seed: int) -> np.ndarray:
    """Per-frame Bernoulli retention of background scatterers.

    At each frame, a background scatterer is retained with probability
    (1 - map value at its position): fully coherent regions silence the
    background, fully incoherent ones keep it all. Returns the (T, Nb)
    active mask.
    """
    tdim = sset.frames
    pos = sset.bg_positions
    u = _rng(seed, _STREAM_REFRESH).random((tdim, sset.n_bg))
    active = np.zeros((tdim, sset.n_bg), dtype=bool)
    for t in range(tdim):
        cval = coherence.at(t, pos[:, 0], pos[:, 1])
        active[t] = u[t] < (1.0 - cval)
    return active


def assemble_s1(sset: ScattererSet, coherence: CoherenceMap,
                shape) -> ScattererSet:
    """Fill Strategy-1 render amplitudes (fixed myo BSC, refreshed bg)."""
    h, w = shape
    tdim = sset.frames
    active = s1_background_refresh(sset, coherence, sset.seed)
    sset.amp_bg = sset.bsc_bg * active
    amp_myo = np.broadcast_to(sset.bsc_myo, (tdim, sset.n_myo)).copy()
    amp_myo[~sset.myo_valid] = 0.0
    amp_myo[~_inside(sset.myo_positions, h, w)] = 0.0
    sset.amp_myo = amp_myo
    return sset


def build_set_s2(positions: np.ndarray, mesh: Mesh, dyn_map: CoherenceMap,
                 video: VideoTensor, probe: ProbeConfig,
                 seed: int) -> ScattererSet:
    """Strategy-2 set: myocardial and background scatterers superposed.

    Every sampled position inside the ES myocardial mask spawns both a
    mesh-advected myocardial scatterer (ES-fixed base BSC) and a fixed
    background scatterer (per-frame base BSC); positions outside the
    mask spawn background only. Call advect + modulate_s2 to obtain the
    final per-frame amplitudes.
    """
    n = len(positions)
    tdim = video.frames
    es = video.es_index
    h, w = video.height, video.width
    mask = mask_from_mesh(mesh, es, (h, w))
    xi = np.clip(np.round(positions[:, 0]).astype(np.int64), 0, w - 1)
    zi = np.clip(np.round(positions[:, 1]).astype(np.int64), 0, h - 1)
    in_mask = mask[zi, xi] & _inside(positions, h, w)
    myo_index = np.nonzero(in_mask)[0]
    bg_index = np.arange(n)

    eps_myo = _rng(seed, _STREAM_EPS_MYO).standard_normal(n)[myo_index]
    bsc_myo = bsc_values(video, es, positions[myo_index, 0],
                         positions[myo_index, 1], probe.gamma, eps_myo)
    eps_bg = _rng(seed, _STREAM_EPS_BG).standard_normal((tdim, n))
    bsc_bg = np.stack([
        bsc_values(video, t, positions[:, 0], positions[:, 1],
                   probe.gamma, eps_bg[t])
        for t in range(tdim)
    ])

    myo_cell, myo_uv = _anchor_myocardial(mesh, es, positions[myo_index])
    return ScattererSet(strategy="s2", seed=seed, positions=positions,
                        myo_index=myo_index, bg_index=bg_index,
                        myo_cell=myo_cell, myo_uv=myo_uv,
                        bsc_myo=bsc_myo, bsc_bg=bsc_bg)


def modulate_s2(sset: ScattererSet, dyn_map: CoherenceMap,
                shape) -> ScattererSet:
    """Apply Strategy-2 amplitude modulation from a dynamic coherence map.

    amp_myo(t) = BSC_myo_ES * C(t, advected position)
    amp_bg(t)  = BSC_bg(t)  * (1 - C(t, fixed position))
    The two weights sum to 1 exactly at any given location.
    """
    h, w = shape
    tdim = sset.frames
    amp_myo = np.zeros((tdim, sset.n_myo))
    amp_bg = np.zeros((tdim, sset.n_bg))
    bg_pos = sset.bg_positions
    for t in range(tdim):
        c_myo = dyn_map.at(t, sset.myo_positions[t, :, 0],
                           sset.myo_positions[t, :, 1])
        amp_myo[t] = sset.bsc_myo * c_myo
        c_bg = dyn_map.at(t, bg_pos[:, 0], bg_pos[:, 1])
        amp_bg[t] = sset.bsc_bg[t] * (1.0 - c_bg)
    amp_myo[~sset.myo_valid] = 0.0
    amp_myo[~_inside(sset.myo_positions, h, w)] = 0.0
    sset.amp_myo = amp_myo
    sset.amp_bg = amp_bg
    return sset


def advect(sset: ScattererSet, mesh: Mesh) -> ScattererSet:
    """Carry myocardial scatterers through every mesh frame.

    The frame-t position is the forward-bilinear image of the scatterer's
    ES-captured (u, v) in the frame-t geometry of its cell. Scatterers in
    a degenerate cell are flagged invalid for that frame.
    """
    tdim = mesh.frames
    nm = sset.n_myo
    pos = np.zeros((tdim, nm, 2))
    ok = np.ones((tdim, nm), dtype=bool)
    ci = sset.myo_cell[:, 0]
    cj = sset.myo_cell[:, 1]
    u = sset.myo_uv[:, 0][:, None]
    v = sset.myo_uv[:, 1][:, None]
    for t in range(tdim):
        pts = mesh.points[t]
        c00 = pts[ci, cj]
        c10 = pts[ci + 1, cj]
        c01 = pts[ci, cj + 1]
        c11 = pts[ci + 1, cj + 1]
        pos[t] = ((1 - u) * (1 - v) * c00 + u * (1 - v) * c10
                  + (1 - u) * v * c01 + u * v * c11)
        areas = quad_areas(pts)
        ok[t] = areas[ci, cj] > _DEGENERATE_AREA
    sset.myo_positions = pos
    sset.myo_valid = ok
    return sset


def _inside(positions: np.ndarray, h: int, w: int) -> np.ndarray:
    x = np.round(positions[..., 0])
    z = np.round(positions[..., 1])
    return (x >= 0) & (x < w) & (z >= 0) & (z < h)
