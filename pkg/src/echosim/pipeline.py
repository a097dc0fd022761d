"""End-to-end simulation strategies and ground-truth motion.

Strategy S1 uses a static coherence map with a global probability p.
Strategy S2 measures ES-referenced correlation curves on the input
video, builds a dynamic coherence map from them, and modulates
superposed myocardial/background scatterer amplitudes. S2-Refined
re-measures the simulated output and corrects the input curves with
C' = clamp(C + a (C - C_sim)) before re-rendering with the same
scatterer realization.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import coherence as coh
from . import correlation as corr
from . import scatterers as scat
from .bilinear import forward_bilinear, locate_in_mesh
from .data_model import (DisplacementField, Mesh, ProbeConfig, SectorGeometry,
                         VideoTensor, mask_from_mesh, save_array, save_tensor)
from .errors import EchoSimError, MetadataError, StageError
from .render import render_sequence

STRATEGIES = ("s1", "s2", "s2r")


@dataclass
class SimulationJob:
    """Resolved configuration of one simulation run."""

    strategy: str
    seed: int = 0
    p: float | None = None                # S1 only
    gain: float = 2.0                     # refinement gain a
    iterations: int = 1                   # refinement passes
    window: int = corr.DEFAULT_WINDOW
    search_halfwidth: int = corr.DEFAULT_SEARCH_HALFWIDTH
    falloff_px: float = coh.DEFAULT_FALLOFF_PX
    threads: int | None = None
    probe: ProbeConfig = field(default_factory=ProbeConfig)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise MetadataError(f"unknown strategy '{self.strategy}'")
        if self.strategy == "s1":
            if self.p is None or not 0.0 <= self.p <= 1.0:
                raise MetadataError("strategy s1 needs p in [0, 1]")
        if self.gain < 0:
            raise MetadataError("refinement gain must be >= 0")
        if self.iterations < 0:
            raise MetadataError("refinement iterations must be >= 0")
        if self.window % 2 == 0:
            raise MetadataError("window must be odd")


@dataclass
class SimulationResult:
    video: VideoTensor
    flow: DisplacementField
    curves_target: corr.CorrelationCurves
    curves_sim_es: corr.CorrelationCurves
    curves_sim_f2f: corr.CorrelationCurves
    n_scatterers: int
    runtime_s: float


def default_sector(shape, probe: ProbeConfig) -> SectorGeometry:
    """A sector that covers the whole image from a virtual apex above it."""
    h, w = shape
    sz, sx = probe.pixel_spacing
    apex = (w / 2.0, -0.75 * h)
    corners_x = np.array([0.0, w - 1.0, 0.0, w - 1.0])
    corners_z = np.array([0.0, 0.0, h - 1.0, h - 1.0])
    dx = (corners_x - apex[0]) * sx
    dz = (corners_z - apex[1]) * sz
    angles = np.arctan2(dx, dz)
    depths = np.hypot(dx, dz)
    span = float(np.abs(angles).max()) * 1.02
    return SectorGeometry(apex=apex, angle_min=-span, angle_max=span,
                          depth_min=0.75 * h * sz * 0.98,
                          depth_max=float(depths.max()) * 1.02)


def _probe_with_sector(job: SimulationJob, shape) -> ProbeConfig:
    probe = job.probe
    if probe.sector is None:
        from dataclasses import replace
        probe = replace(probe, sector=default_sector(shape, probe))
    return probe


def refine_curves(target: corr.CorrelationCurves,
                  simulated: corr.CorrelationCurves,
                  gain: float) -> corr.CorrelationCurves:
    """Closed-loop curve correction: C' = clamp(C + a (C - C_sim), 0, 1).

    Entries invalid in either input copy the target value unchanged.
    """
    if target.values.shape != simulated.values.shape:
        raise MetadataError("target and simulated curves differ in shape")
    both = target.valid & simulated.valid
    raw = target.values + gain * (target.values - simulated.values)
    refined = np.where(both, np.clip(raw, 0.0, 1.0), target.values)
    return target.with_values(refined)


def ground_truth_field(mesh: Mesh, shape, es_index: int) -> DisplacementField:
    """Dense displacement from the ES frame over the ES myocardial mask.

    Each ES-mask pixel is anchored to its containing mesh cell at ES; its
    frame-t displacement is the forward-bilinear image of that anchor in
    the frame-t mesh minus the pixel's ES position.
    """
    h, w = shape
    tdim = mesh.frames
    mask = mask_from_mesh(mesh, es_index, (h, w))
    data = np.zeros((tdim, h, w, 2), dtype=np.float32)
    valid = np.zeros((tdim, h, w), dtype=bool)
    zz, xx = np.nonzero(mask)
    if zz.size:
        pts = np.stack([xx, zz], axis=1).astype(float)
        ci, cj, uv, found = locate_in_mesh(mesh.points[es_index], pts)
        sel = found
        ci, cj, uv = ci[sel], cj[sel], uv[sel]
        px, pz = xx[sel], zz[sel]
        base = np.stack([px, pz], axis=1).astype(float)
        for t in range(tdim):
            fr = mesh.points[t]
            pos_t = forward_bilinear(fr[ci, cj], fr[ci + 1, cj],
                                     fr[ci, cj + 1], fr[ci + 1, cj + 1],
                                     uv[:, 0], uv[:, 1])
            disp = pos_t - base
            data[t, pz, px] = disp.astype(np.float32)
            valid[t, pz, px] = True
    return DisplacementField(data=data, valid=valid)


def _measure_both(video: VideoTensor, mesh: Mesh, job: SimulationJob):
    es = corr.measure_curves(video, mesh, corr.MODE_ES,
                             window=job.window,
                             search_halfwidth=job.search_halfwidth)
    f2f = corr.measure_curves(video, mesh, corr.MODE_F2F,
                              window=job.window,
                              search_halfwidth=job.search_halfwidth)
    return es, f2f


def run_s1(video: VideoTensor, mesh: Mesh, job: SimulationJob) -> SimulationResult:
    """Strategy 1: static coherence with probability p."""
    t0 = time.perf_counter()
    shape = (video.height, video.width)
    probe = _probe_with_sector(job, shape)
    try:
        cmap = coh.static_map(mesh, job.p, job.falloff_px, shape)
    except EchoSimError as exc:
        raise StageError("static-map", exc) from exc
    try:
        positions = scat.sample_positions(probe.sector, probe, job.seed)
        sset = scat.split_populations_s1(positions, cmap.values[video.es_index],
                                         video, mesh, probe, job.seed)
        scat.advect(sset, mesh)
        scat.assemble_s1(sset, cmap, shape)
    except EchoSimError as exc:
        raise StageError("scatterers", exc) from exc
    try:
        out_video = render_sequence(sset, probe, shape, video.es_index, video.fps)
    except EchoSimError as exc:
        raise StageError("render", exc) from exc
    target = corr.measure_curves(video, mesh, corr.MODE_ES, window=job.window,
                                 search_halfwidth=job.search_halfwidth)
    sim_es, sim_f2f = _measure_both(out_video, mesh, job)
    flow = ground_truth_field(mesh, shape, video.es_index)
    return SimulationResult(video=out_video, flow=flow, curves_target=target,
                            curves_sim_es=sim_es, curves_sim_f2f=sim_f2f,
                            n_scatterers=sset.n_total,
                            runtime_s=time.perf_counter() - t0)


def _s2_core(video: VideoTensor, mesh: Mesh, job: SimulationJob):
    """Shared S2 setup: target curves, scatterer set, first render."""
    shape = (video.height, video.width)
    probe = _probe_with_sector(job, shape)
    try:
        target = corr.measure_curves(video, mesh, corr.MODE_ES,
                                     window=job.window,
                                     search_halfwidth=job.search_halfwidth)
    except EchoSimError as exc:
        raise StageError("measure-input", exc) from exc
    try:
        dmap = coh.dynamic_map(target, mesh, job.falloff_px, shape)
        positions = scat.sample_positions(probe.sector, probe, job.seed)
        sset = scat.build_set_s2(positions, mesh, dmap, video, probe, job.seed)
        scat.advect(sset, mesh)
        scat.modulate_s2(sset, dmap, shape)
    except EchoSimError as exc:
        raise StageError("scatterers", exc) from exc
    try:
        out_video = render_sequence(sset, probe, shape, video.es_index, video.fps)
    except EchoSimError as exc:
        raise StageError("render", exc) from exc
    return probe, target, sset, out_video


def run_s2(video: VideoTensor, mesh: Mesh, job: SimulationJob) -> SimulationResult:
    """Strategy 2: dynamic coherence from measured correlation curves."""
    t0 = time.perf_counter()
    shape = (video.height, video.width)
    _, target, sset, out_video = _s2_core(video, mesh, job)
    sim_es, sim_f2f = _measure_both(out_video, mesh, job)
    flow = ground_truth_field(mesh, shape, video.es_index)
    return SimulationResult(video=out_video, flow=flow, curves_target=target,
                            curves_sim_es=sim_es, curves_sim_f2f=sim_f2f,
                            n_scatterers=sset.n_total,
                            runtime_s=time.perf_counter() - t0)


def run_s2_refined(video: VideoTensor, mesh: Mesh,
                   job: SimulationJob) -> SimulationResult:
    """Strategy 2 with closed-loop correlation correction.

    Each iteration measures the simulated curves, corrects the target,
    rebuilds the dynamic map, and re-renders reusing the same scatterer
    positions and base reflectivities (only modulation weights change).
    """
    t0 = time.perf_counter()
    shape = (video.height, video.width)
    probe, target, sset, out_video = _s2_core(video, mesh, job)
    for _ in range(job.iterations):
        sim_es = corr.measure_curves(out_video, mesh, corr.MODE_ES,
                                     window=job.window,
                                     search_halfwidth=job.search_halfwidth)
        corrected = refine_curves(target, sim_es, job.gain)
        dmap = coh.dynamic_map(corrected, mesh, job.falloff_px, shape)
        scat.modulate_s2(sset, dmap, shape)
        out_video = render_sequence(sset, probe, shape, video.es_index,
                                    video.fps)
    sim_es, sim_f2f = _measure_both(out_video, mesh, job)
    flow = ground_truth_field(mesh, shape, video.es_index)
    return SimulationResult(video=out_video, flow=flow, curves_target=target,
                            curves_sim_es=sim_es, curves_sim_f2f=sim_f2f,
                            n_scatterers=sset.n_total,
                            runtime_s=time.perf_counter() - t0)


def run_job(video: VideoTensor, mesh: Mesh, job: SimulationJob) -> SimulationResult:
    if job.strategy == "s1":
        return run_s1(video, mesh, job)
    if job.strategy == "s2":
        return run_s2(video, mesh, job)
    return run_s2_refined(video, mesh, job)


def write_outputs(outdir, result: SimulationResult, job: SimulationJob) -> None:
    """Populate the standard output directory layout."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    save_tensor(outdir / "sim.t32", result.video)
    save_array(outdir / "flow.t32", result.flow.data)
    corr.write_curves_csv(outdir / "curves_target.csv", result.curves_target)
    corr.write_curves_csv(outdir / "curves_sim_es.csv", result.curves_sim_es)
    corr.write_curves_csv(outdir / "curves_sim_f2f.csv", result.curves_sim_f2f)
    jobdict = asdict(job)
    jobdict["probe"].pop("sector", None)
    jobdict.update({
        "n_scatterers": result.n_scatterers,
        "runtime_s": result.runtime_s,
        "es_index": result.video.es_index,
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
    })
    (outdir / "job.json").write_text(json.dumps(jobdict, indent=2))
