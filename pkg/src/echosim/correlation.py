"""Speckle correlation measurement along a mesh.

For every mesh point, a reference window (default 25 x 25) is compared
against a search region centered on the point's position in the probed
frame; the maximum zero-normalized cross-correlation over the search is
the point's correlation value. Reference windows come either from the
end-systolic frame (ES mode) or from the previous frame (f2f mode).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data_model import Mesh, VideoTensor
from .errors import FormatError

DEFAULT_WINDOW = 25
DEFAULT_SEARCH_HALFWIDTH = 12
MIN_REF_HALFWIDTH = 4   # usable reference window must be at least 9 x 9

MODE_ES = "es"
MODE_F2F = "f2f"


@dataclass(frozen=True)
class CorrelationCurves:
    """Per-mesh-point correlation values: (T, l, r) plus validity flags."""

    values: np.ndarray
    valid: np.ndarray
    mode: str
    window: int = DEFAULT_WINDOW
    search_halfwidth: int = DEFAULT_SEARCH_HALFWIDTH
    reference_index: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if values.ndim != 3 or valid.shape != values.shape:
            raise FormatError("curves must be (T, l, r) with matching validity")
        if self.mode not in (MODE_ES, MODE_F2F):
            raise FormatError(f"unknown correlation mode '{self.mode}'")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    def excluded_frame(self) -> int:
        """Frame carrying no information (reference frame / t=0)."""
        return self.reference_index if self.mode == MODE_ES else 0

    def informative_mask(self) -> np.ndarray:
        m = self.valid.copy()
        m[self.excluded_frame()] = False
        return m

    def with_values(self, values: np.ndarray, valid=None) -> "CorrelationCurves":
        return replace(self, values=values,
                       valid=self.valid if valid is None else valid)


def ncc_matrix(reference: np.ndarray, search: np.ndarray) -> np.ndarray:
    """Zero-normalized cross-correlation of a K x K window over a region.

    Entry (dy, dx) correlates `reference` against the K x K patch of
    `search` at that offset; output shape is (S-K+1, S-K+1). Flat
    (zero-variance) patches yield 0.
    """
    ref = np.asarray(reference, dtype=np.float64)
    srch = np.asarray(search, dtype=np.float64)
    if ref.ndim != 2 or ref.shape[0] != ref.shape[1]:
        raise FormatError("reference window must be square")
    k = ref.shape[0]
    if k % 2 == 0:
        raise FormatError("window size must be odd")
    if srch.ndim != 2 or srch.shape[0] < k or srch.shape[1] < k:
        raise FormatError("search region must be at least window-sized")
    windows = sliding_window_view(srch, (k, k))
    n = k * k
    ref0 = ref - ref.mean()
    ref_ss = float((ref0 ** 2).sum())
    sums = windows.sum(axis=(-2, -1))
    sqs = np.einsum("ijkl,ijkl->ij", windows, windows)
    num = np.einsum("ijkl,kl->ij", windows, ref0)
    var = np.maximum(sqs - sums ** 2 / n, 0.0)
    denom = np.sqrt(var * ref_ss)
    out = np.where(denom > 1e-12, num / np.where(denom > 0, denom, 1.0), 0.0)
    return np.clip(out, -1.0, 1.0)


def point_correlation(video: VideoTensor, ref_frame: int, ref_point,
                      t: int, point_t,
                      window: int = DEFAULT_WINDOW,
                      search_halfwidth: int = DEFAULT_SEARCH_HALFWIDTH):
    """Max NCC between a reference window and a search region.

    Windows near the image border are cropped symmetrically; if the
    usable reference window shrinks below 9 x 9 the value is flagged
    invalid. Returns (value, valid).
    """
    if window % 2 == 0:
        raise FormatError("window size must be odd")
    data = video.data
    h, w = video.height, video.width
    rx, rz = int(round(ref_point[0])), int(round(ref_point[1]))
    px, pz = int(round(point_t[0])), int(round(point_t[1]))
    k_half = window // 2
    ref_half = min(k_half, rx, w - 1 - rx, rz, h - 1 - rz,
                   px, w - 1 - px, pz, h - 1 - pz)
    if ref_half < MIN_REF_HALFWIDTH:
        return 0.0, False
    sh = min(search_halfwidth,
             px - ref_half, w - 1 - px - ref_half,
             pz - ref_half, h - 1 - pz - ref_half)
    sh = max(sh, 0)
    ref = data[ref_frame, rz - ref_half: rz + ref_half + 1,
               rx - ref_half: rx + ref_half + 1]
    region = data[t, pz - ref_half - sh: pz + ref_half + sh + 1,
                  px - ref_half - sh: px + ref_half + sh + 1]
    return float(ncc_matrix(ref, region).max()), True


def measure_curves(video: VideoTensor, mesh: Mesh, mode: str,
                   window: int = DEFAULT_WINDOW,
                   search_halfwidth: int = DEFAULT_SEARCH_HALFWIDTH
                   ) -> CorrelationCurves:
    """Correlation curves for every mesh point at every frame.

    ES mode fixes reference windows at the end-systolic frame; f2f mode
    takes the reference at the point's previous-frame position, with the
    value at t=0 defined as 1.
    """
    if mode not in (MODE_ES, MODE_F2F):
        raise FormatError(f"unknown correlation mode '{mode}'")
    if video.frames != mesh.frames:
        raise FormatError(
            f"video has {video.frames} frames but mesh has {mesh.frames}")
    tdim, l, r = mesh.frames, mesh.l, mesh.r
    es = video.es_index
    values = np.zeros((tdim, l, r))
    valid = np.zeros((tdim, l, r), dtype=bool)
    pts = mesh.points
    for t in range(tdim):
        for i in range(l):
            for j in range(r):
                if mode == MODE_ES:
                    if t == es:
                        values[t, i, j] = 1.0
                        valid[t, i, j] = True
                        continue
                    ref_frame, ref_pt = es, pts[es, i, j]
                else:
                    if t == 0:
                        values[t, i, j] = 1.0
                        valid[t, i, j] = True
                        continue
                    ref_frame, ref_pt = t - 1, pts[t - 1, i, j]
                val, ok = point_correlation(
                    video, ref_frame, ref_pt, t, pts[t, i, j],
                    window=window, search_halfwidth=search_halfwidth)
                values[t, i, j] = val
                valid[t, i, j] = ok
    return CorrelationCurves(values=values, valid=valid, mode=mode,
                             window=window, search_halfwidth=search_halfwidth,
                             reference_index=es if mode == MODE_ES else 0)


def write_curves_csv(path, curves: CorrelationCurves) -> None:
    """Export as CSV `t,i,j,value,valid`, t-major row order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "i", "j", "value", "valid"])
        tdim, l, r = curves.values.shape
        for t in range(tdim):
            for i in range(l):
                for j in range(r):
                    writer.writerow([t, i, j,
                                     f"{curves.values[t, i, j]:.6g}",
                                     int(curves.valid[t, i, j])])


def read_curves_csv(path, mode: str, reference_index: int = 0,
                    window: int = DEFAULT_WINDOW,
                    search_halfwidth: int = DEFAULT_SEARCH_HALFWIDTH
                    ) -> CorrelationCurves:
    """Read a curves CSV back; mode and reference index are caller-supplied
    because the CSV carries only the values."""
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"t", "i", "j", "value", "valid"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise FormatError(f"{path}: expected header t,i,j,value,valid")
        for row in reader:
            rows.append((int(row["t"]), int(row["i"]), int(row["j"]),
                         float(row["value"]), bool(int(row["valid"]))))
    if not rows:
        raise FormatError(f"{path}: no curve rows")
    tdim = max(r[0] for r in rows) + 1
    ldim = max(r[1] for r in rows) + 1
    rdim = max(r[2] for r in rows) + 1
    values = np.zeros((tdim, ldim, rdim))
    valid = np.zeros((tdim, ldim, rdim), dtype=bool)
    for t, i, j, v, ok in rows:
        values[t, i, j] = v
        valid[t, i, j] = ok
    return CorrelationCurves(values=values, valid=valid, mode=mode,
                             window=window, search_halfwidth=search_halfwidth,
                             reference_index=reference_index)
