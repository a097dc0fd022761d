"""B-mode rendering by coherent point-spread-function summation.

This stage replaces a full RF simulator + beamformer with a linear
coherent-summation model: every scatterer contributes a separable
Gaussian envelope (psf_sigma_lateral, psf_sigma_axial) multiplied by a
complex axial carrier exp(j 2 pi z / lambda_px). The envelope is the
magnitude of the summed complex field; B-mode is its log compression
into [0, 1]. This reproduces the speckle statistics and decorrelation
mechanics the coherence model relies on at a fraction of the cost.

Implementation note: the sum over scatterers is evaluated by splatting
complex weights amp * exp(-j 2 pi z_i / lambda_px) onto an axially
oversampled grid and convolving with the separable Gaussian (truncated
at 4 sigma). Oversampling keeps the sub-pixel carrier phase accurate;
the result matches the direct per-scatterer sum to well under a percent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .data_model import ProbeConfig, VideoTensor
from .scatterers import ScattererSet

AXIAL_OVERSAMPLE = 8
PSF_TRUNCATE_SIGMA = 4.0


@dataclass(frozen=True)
class RenderedFrame:
    """One rendered frame: linear envelope plus log-compressed B-mode."""

    envelope: np.ndarray
    bmode: np.ndarray


def render_field(positions: np.ndarray, amps: np.ndarray,
                 probe: ProbeConfig, shape) -> np.ndarray:
    """Complex field of a scatterer cloud on an H x W pixel grid."""
    h, w = shape
    r = AXIAL_OVERSAMPLE
    sz, sx = probe.pixel_spacing
    sig_ax = probe.sigma_axial_mm / sz
    sig_lat = probe.sigma_lateral_mm / sx
    k = 2.0 * np.pi / probe.wavelength_px_axial

    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    amps = np.asarray(amps, dtype=np.float64).reshape(-1)
    x = positions[:, 0]
    z = positions[:, 1]
    keep = ((amps != 0) & np.isfinite(amps)
            & (x > -0.5) & (x < w - 0.5) & (z > -0.5) & (z < h - 0.5))
    x, z, amps = x[keep], z[keep], amps[keep]

    fine = np.zeros((h * r, w), dtype=np.complex128)
    if len(x):
        weights = amps * np.exp(-1j * k * z)
        zf = z * r
        _splat_bilinear(fine, zf, x, weights)
        fine = _separable_gaussian(fine, sig_ax * r, sig_lat)
    field = fine[np.arange(h) * r]
    carrier = np.exp(1j * k * np.arange(h))[:, None]
    # undo the kernel normalization so a unit scatterer peaks near its BSC
    norm = 2.0 * np.pi * (sig_ax * r) * sig_lat
    return field * carrier * norm


def _splat_bilinear(buf: np.ndarray, zf: np.ndarray, x: np.ndarray,
                    weights: np.ndarray) -> None:
    hh, ww = buf.shape
    z0 = np.floor(zf).astype(np.int64)
    x0 = np.floor(x).astype(np.int64)
    fz = zf - z0
    fx = x - x0
    flat = buf.ravel()
    for dz, dxo in ((0, 0), (0, 1), (1, 0), (1, 1)):
        wz = fz if dz else 1.0 - fz
        wx = fx if dxo else 1.0 - fx
        zi = z0 + dz
        xi = x0 + dxo
        ok = (zi >= 0) & (zi < hh) & (xi >= 0) & (xi < ww)
        idx = zi[ok] * ww + xi[ok]
        contrib = weights[ok] * (wz * wx)[ok]
        np.add.at(flat.real, idx, contrib.real)
        np.add.at(flat.imag, idx, contrib.imag)


def _separable_gaussian(buf: np.ndarray, sigma_rows: float,
                        sigma_cols: float) -> np.ndarray:
    out_r = gaussian_filter1d(buf.real, sigma_rows, axis=0, mode="constant",
                              truncate=PSF_TRUNCATE_SIGMA)
    out_r = gaussian_filter1d(out_r, sigma_cols, axis=1, mode="constant",
                              truncate=PSF_TRUNCATE_SIGMA)
    out_i = gaussian_filter1d(buf.imag, sigma_rows, axis=0, mode="constant",
                              truncate=PSF_TRUNCATE_SIGMA)
    out_i = gaussian_filter1d(out_i, sigma_cols, axis=1, mode="constant",
                              truncate=PSF_TRUNCATE_SIGMA)
    return out_r + 1j * out_i


def log_compress(envelope: np.ndarray, reference: float,
                 dynamic_range_db: float) -> np.ndarray:
    """Map envelope amplitudes into [0, 1] over the given dB range."""
    if reference <= 0:
        return np.zeros_like(envelope)
    tiny = reference * 10.0 ** (-dynamic_range_db / 10.0) * 1e-6
    db = 20.0 * np.log10(np.maximum(envelope, tiny) / reference)
    return np.clip(1.0 + db / dynamic_range_db, 0.0, 1.0)


def render_frame(sset: ScattererSet, t: int, probe: ProbeConfig,
                 shape) -> RenderedFrame:
    """Render one frame with per-frame envelope normalization."""
    pos, amp = sset.frame_scatterers(t)
    env = np.abs(render_field(pos, amp, probe, shape))
    ref = float(env.max())
    return RenderedFrame(envelope=env,
                         bmode=log_compress(env, ref, probe.dynamic_range_db))


def render_sequence(sset: ScattererSet, probe: ProbeConfig, shape,
                    es_index: int, fps: float = 30.0,
                    return_envelopes: bool = False):
    """Render all frames with one shared normalization.

    The log compression reference is the global envelope maximum over the
    sequence, so inter-frame amplitude ratios survive into the B-mode.
    """
    h, w = shape
    envs = np.zeros((sset.frames, h, w))
    for t in range(sset.frames):
        pos, amp = sset.frame_scatterers(t)
        envs[t] = np.abs(render_field(pos, amp, probe, shape))
    ref = float(envs.max())
    bmode = np.stack([log_compress(envs[t], ref, probe.dynamic_range_db)
                      for t in range(sset.frames)]).astype(np.float32)
    video = VideoTensor(data=bmode, pixel_spacing=probe.pixel_spacing,
                        es_index=es_index, fps=fps)
    if return_envelopes:
        return video, envs
    return video
