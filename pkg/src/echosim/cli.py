"""Batch command-line front end.

Exit codes: 0 success, 2 usage/validation, 3 I/O or file-format errors,
4 numeric/metric errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import correlation as corr
from . import evaluation as ev
from .data_model import load_mesh, load_tensor
from .errors import (ContainmentError, EchoSimError, FormatError,
                     GeometryError, MetadataError, MetricError, StageError)
from .figures import plot_curve_comparison
from .phantom import PhantomSpec, synth_phantom, write_profile_csv
from .pipeline import SimulationJob, run_job, write_outputs

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _existing_file(parser: argparse.ArgumentParser, path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        parser.error(f"file not found: {path}")
    return p


def _odd_window(parser: argparse.ArgumentParser, value: str) -> int:
    try:
        w = int(value)
    except ValueError:
        parser.error(f"window must be an integer, got {value!r}")
    if w % 2 == 0 or w < 3:
        parser.error("window must be odd")
    return w


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="echosim",
        description="Simulated cardiac ultrasound with speckle decorrelation")
    sub = parser.add_subparsers(dest="command", required=True)

    pm = sub.add_parser("measure", help="measure correlation curves")
    pm.add_argument("--video", required=True)
    pm.add_argument("--mesh", required=True)
    pm.add_argument("--mode", required=True, choices=["es", "f2f"])
    pm.add_argument("--window", default=str(corr.DEFAULT_WINDOW))
    pm.add_argument("--search", type=int, default=corr.DEFAULT_SEARCH_HALFWIDTH)
    pm.add_argument("--out", required=True)

    ps = sub.add_parser("simulate", help="run a simulation strategy")
    ps.add_argument("--video", required=True)
    ps.add_argument("--mesh", required=True)
    ps.add_argument("--strategy", required=True, choices=["s1", "s2", "s2r"])
    ps.add_argument("--p", type=float, default=None)
    ps.add_argument("--gain", type=float, default=2.0)
    ps.add_argument("--iters", type=int, default=1)
    ps.add_argument("--window", default=str(corr.DEFAULT_WINDOW))
    ps.add_argument("--search", type=int, default=corr.DEFAULT_SEARCH_HALFWIDTH)
    ps.add_argument("--falloff", type=float, default=10.0)
    ps.add_argument("--seed", type=int, required=True)
    ps.add_argument("--threads", type=int, default=os.cpu_count())
    ps.add_argument("--out", required=True)

    pp = sub.add_parser("phantom", help="generate a synthetic phantom")
    pp.add_argument("--shape", default="128x128")
    pp.add_argument("--frames", type=int, default=16)
    pp.add_argument("--motion", default="static",
                    choices=["static", "translate", "contract"])
    pp.add_argument("--decorr", default="none")
    pp.add_argument("--delta", default="0.4,0.3",
                    help="per-frame translation dx,dz in pixels")
    pp.add_argument("--seed", type=int, required=True)
    pp.add_argument("--out", required=True)

    pe = sub.add_parser("eval", help="compare runs against real curves")
    pe.add_argument("--real-curves", required=True,
                    help="ES-referenced real curves CSV")
    pe.add_argument("--real-curves-f2f", default=None,
                    help="frame-to-frame real curves CSV (optional)")
    pe.add_argument("--es-index", type=int, default=None,
                    help="ES frame index of the real ES curves "
                         "(default: inferred from the all-ones frame)")
    pe.add_argument("--runs", nargs="+", required=True)
    pe.add_argument("--out", required=True)
    return parser


def cmd_measure(parser, args) -> int:
    video = load_tensor(_existing_file(parser, args.video))
    mesh = load_mesh(_existing_file(parser, args.mesh))
    window = _odd_window(parser, args.window)
    curves = corr.measure_curves(video, mesh, args.mode, window=window,
                                 search_halfwidth=args.search)
    corr.write_curves_csv(args.out, curves)
    return 0


def cmd_simulate(parser, args) -> int:
    if args.strategy == "s1" and args.p is None:
        parser.error("strategy s1 requires --p")
    if args.strategy != "s1" and args.p is not None:
        parser.error(f"--p is only valid with strategy s1")
    window = _odd_window(parser, args.window)
    video = load_tensor(_existing_file(parser, args.video))
    mesh = load_mesh(_existing_file(parser, args.mesh))
    job = SimulationJob(strategy=args.strategy, seed=args.seed, p=args.p,
                        gain=args.gain, iterations=args.iters, window=window,
                        search_halfwidth=args.search, falloff_px=args.falloff,
                        threads=args.threads)
    result = run_job(video, mesh, job)
    write_outputs(args.out, result, job)
    print(f"strategy={args.strategy} scatterers={result.n_scatterers} "
          f"runtime={result.runtime_s:.1f}s out={args.out}")
    return 0


def cmd_phantom(parser, args) -> int:
    try:
        h, w = (int(v) for v in args.shape.lower().split("x"))
    except ValueError:
        parser.error(f"malformed shape '{args.shape}', expected HxW")
    try:
        dx, dz = (float(v) for v in args.delta.split(","))
    except ValueError:
        parser.error(f"malformed delta '{args.delta}', expected dx,dz")
    spec = PhantomSpec(shape=(h, w), frames=args.frames, motion=args.motion,
                       motion_delta=(dx, dz), decorr=args.decorr)
    video, mesh, profile = synth_phantom(spec, args.seed)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    from .data_model import save_mesh, save_tensor

    save_tensor(outdir / "phantom.t32", video)
    save_mesh(outdir / "mesh.json", mesh)
    write_profile_csv(outdir / "profile.csv", profile)
    print(f"phantom shape={h}x{w} frames={args.frames} motion={args.motion} "
          f"out={outdir}")
    return 0


def _infer_es_index(curves: corr.CorrelationCurves) -> int:
    for t in range(curves.frames):
        vals = curves.values[t][curves.valid[t]]
        if vals.size and (vals == 1.0).all():
            return t
    raise MetricError("could not infer ES index from the real curves; "
                      "pass --es-index")


def cmd_eval(parser, args) -> int:
    real_es = corr.read_curves_csv(_existing_file(parser, args.real_curves),
                                   mode=corr.MODE_ES)
    es_index = args.es_index
    if es_index is None:
        es_index = _infer_es_index(real_es)
    real_es = corr.CorrelationCurves(values=real_es.values, valid=real_es.valid,
                                     mode=corr.MODE_ES,
                                     reference_index=es_index)
    real_f2f = None
    if args.real_curves_f2f:
        real_f2f = corr.read_curves_csv(
            _existing_file(parser, args.real_curves_f2f), mode=corr.MODE_F2F)
    runs = []
    for run_dir in args.runs:
        rd = Path(run_dir)
        es_path = rd / "curves_sim_es.csv"
        f2f_path = rd / "curves_sim_f2f.csv"
        if not es_path.is_file() or not f2f_path.is_file():
            parser.error(f"run directory {rd} lacks curves_sim_es.csv / "
                         "curves_sim_f2f.csv")
        name = rd.name
        job_file = rd / "job.json"
        if job_file.is_file():
            meta = json.loads(job_file.read_text())
            strat = meta.get("strategy")
            if strat:
                name = f"{rd.name} ({strat})"
        sim_es = corr.read_curves_csv(es_path, mode=corr.MODE_ES,
                                      reference_index=es_index)
        sim_f2f = corr.read_curves_csv(f2f_path, mode=corr.MODE_F2F)
        if sim_es.values.shape != real_es.values.shape:
            raise MetricError(
                f"shape mismatch between {args.real_curves} "
                f"{real_es.values.shape} and {es_path} {sim_es.values.shape}")
        runs.append({"name": name, "sim_es": sim_es, "sim_f2f": sim_f2f,
                     "real_es": real_es, "real_f2f": real_f2f})
    rows = ev.build_report(runs)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    ev.write_report_csv(outdir / "report.csv", rows)
    ev.write_report_md(outdir / "report.md", rows)
    plot_curve_comparison(outdir / "report_es.png",
                          {r["name"]: r["sim_es"] for r in runs},
                          real=real_es, title="ES-referenced correlation")
    plot_curve_comparison(outdir / "report_f2f.png",
                          {r["name"]: r["sim_f2f"] for r in runs},
                          real=real_f2f, title="frame-to-frame correlation")
    print(f"report written to {outdir}")
    return 0


_HANDLERS = {
    "measure": cmd_measure,
    "simulate": cmd_simulate,
    "phantom": cmd_phantom,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](parser, args)
    except (FormatError, MetadataError, OSError) as exc:
        print(f"[{args.command}] error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (MetricError, GeometryError, ContainmentError, StageError,
            EchoSimError) as exc:
        print(f"[{args.command}] error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
