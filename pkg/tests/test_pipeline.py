import numpy as np
import pytest
from conftest import rect_mesh

from echosim.correlation import CorrelationCurves, MODE_ES
from echosim.data_model import Mesh
from echosim.errors import MetadataError
from echosim.phantom import PhantomSpec, synth_phantom
from echosim.pipeline import (SimulationJob, ground_truth_field, refine_curves,
                              run_job, run_s2, run_s2_refined)


def _curves(values, valid=None):
    values = np.asarray(values, dtype=float)
    if valid is None:
        valid = np.ones(values.shape, dtype=bool)
    return CorrelationCurves(values=values, valid=valid, mode=MODE_ES)


# ---------------------------------------------------------------------------
# refinement algebra
# ---------------------------------------------------------------------------

def test_refine_fixed_point():
    c = _curves(np.random.default_rng(0).random((2, 3, 2)))
    out = refine_curves(c, c, gain=2.0)
    assert np.array_equal(out.values, c.values)


def test_refine_direct_arithmetic():
    target = _curves(np.full((1, 1, 1), 0.6))
    sim = _curves(np.full((1, 1, 1), 0.8))
    out = refine_curves(target, sim, gain=2.0)
    assert out.values[0, 0, 0] == pytest.approx(0.2)


def test_refine_clamps_to_unit_interval():
    target = _curves(np.full((1, 1, 1), 0.8))
    sim = _curves(np.full((1, 1, 1), 0.5))
    out = refine_curves(target, sim, gain=2.0)   # raw 1.4
    assert out.values[0, 0, 0] == 1.0
    low = refine_curves(_curves(np.full((1, 1, 1), 0.1)),
                        _curves(np.full((1, 1, 1), 0.9)), gain=2.0)  # raw -1.5
    assert low.values[0, 0, 0] == 0.0


def test_refine_zero_gain_is_identity():
    target = _curves(np.random.default_rng(1).random((2, 2, 2)))
    sim = _curves(np.random.default_rng(2).random((2, 2, 2)))
    out = refine_curves(target, sim, gain=0.0)
    assert np.array_equal(out.values, target.values)


def test_refine_invalid_entries_copy_target():
    target_vals = np.full((1, 2, 1), 0.6)
    sim_vals = np.full((1, 2, 1), 0.9)
    valid = np.ones((1, 2, 1), dtype=bool)
    valid[0, 1, 0] = False
    out = refine_curves(_curves(target_vals),
                        _curves(sim_vals, valid=valid), gain=2.0)
    assert out.values[0, 0, 0] == 0.0           # 0.6 + 2*(-0.3), clamped
    assert out.values[0, 1, 0] == 0.6           # invalid: target copied


def test_refine_direction_matches_error_sign():
    rng = np.random.default_rng(3)
    target = _curves(rng.uniform(0.3, 0.7, (2, 3, 2)))
    sim = _curves(rng.uniform(0.3, 0.7, (2, 3, 2)))
    out = refine_curves(target, sim, gain=0.5)   # small gain: no clamping
    assert np.all(np.sign(out.values - target.values)
                  == np.sign(target.values - sim.values))


# ---------------------------------------------------------------------------
# job validation
# ---------------------------------------------------------------------------

def test_job_rejects_unknown_strategy():
    with pytest.raises(MetadataError):
        SimulationJob(strategy="s9", seed=0)


def test_job_s1_requires_p():
    with pytest.raises(MetadataError):
        SimulationJob(strategy="s1", seed=0)
    with pytest.raises(MetadataError):
        SimulationJob(strategy="s1", seed=0, p=1.5)


def test_job_rejects_negative_gain_and_even_window():
    with pytest.raises(MetadataError):
        SimulationJob(strategy="s2", seed=0, gain=-1.0)
    with pytest.raises(MetadataError):
        SimulationJob(strategy="s2", seed=0, window=24)
    SimulationJob(strategy="s2", seed=0, gain=0.0)   # zero gain is legal


# ---------------------------------------------------------------------------
# ground-truth motion
# ---------------------------------------------------------------------------

def test_ground_truth_zero_for_static_mesh():
    mesh = rect_mesh(10, 30, 10, 30, frames=3)
    field = ground_truth_field(mesh, (48, 48), es_index=0)
    assert field.valid[0].sum() > 0
    assert np.abs(field.data).max() <= 1e-6


def test_ground_truth_rigid_translation():
    base = rect_mesh(10, 30, 10, 30, frames=1).points[0]
    mesh = Mesh(points=np.stack([base, base + np.array([2.5, -1.5])]))
    field = ground_truth_field(mesh, (48, 48), es_index=0)
    mask = field.valid[1]
    assert mask.sum() > 0
    assert np.abs(field.data[1][mask] - np.array([2.5, -1.5])).max() <= 1e-5


def test_ground_truth_matches_mesh_points():
    base = rect_mesh(10, 30, 10, 30, l=3, r=3, frames=1).points[0]
    moved = base * 1.1 - np.array([1.0, 2.0])
    mesh = Mesh(points=np.stack([base, moved]))
    field = ground_truth_field(mesh, (48, 48), es_index=0)
    for i in range(3):
        for j in range(3):
            x, z = base[i, j].astype(int)     # grid corners are integer pixels
            expect = moved[i, j] - base[i, j]
            assert field.valid[1, z, x]
            assert np.abs(field.data[1, z, x] - expect).max() <= 1e-5


# ---------------------------------------------------------------------------
# end-to-end properties on a small phantom
# ---------------------------------------------------------------------------

SMALL = PhantomSpec(shape=(64, 64), frames=6, decorr="constant:0.4", l=20, r=3)


@pytest.fixture(scope="module")
def small_phantom():
    video, mesh, _ = synth_phantom(SMALL, seed=5)
    return video, mesh


def test_run_s2_is_deterministic(small_phantom):
    video, mesh = small_phantom
    job = SimulationJob(strategy="s2", seed=11)
    a = run_s2(video, mesh, job)
    b = run_s2(video, mesh, job)
    assert np.array_equal(a.video.data, b.video.data)
    assert np.array_equal(a.flow.data, b.flow.data)
    assert np.array_equal(a.curves_sim_es.values, b.curves_sim_es.values)


def test_s2_refined_zero_iterations_matches_s2(small_phantom):
    video, mesh = small_phantom
    s2 = run_s2(video, mesh, SimulationJob(strategy="s2", seed=11))
    s2r = run_s2_refined(video, mesh,
                         SimulationJob(strategy="s2r", seed=11, iterations=0))
    assert np.array_equal(s2.video.data, s2r.video.data)


def test_run_job_dispatch(small_phantom):
    video, mesh = small_phantom
    res = run_job(video, mesh, SimulationJob(strategy="s1", seed=1, p=0.9))
    assert res.video.shape == video.shape
    assert res.flow.data.shape == (video.frames, 64, 64, 2)
    assert res.n_scatterers > 0
    assert res.video.es_index == video.es_index


def test_write_outputs_layout(small_phantom, tmp_path):
    from echosim.pipeline import write_outputs

    video, mesh = small_phantom
    job = SimulationJob(strategy="s2", seed=11)
    result = run_s2(video, mesh, job)
    write_outputs(tmp_path / "run", result, job)
    for name in ("sim.t32", "sim.json", "flow.t32", "curves_target.csv",
                 "curves_sim_es.csv", "curves_sim_f2f.csv", "job.json"):
        assert (tmp_path / "run" / name).is_file(), name


# ---------------------------------------------------------------------------
# phantom contracts
# ---------------------------------------------------------------------------

def test_static_phantom_with_no_decorrelation_is_constant():
    spec = PhantomSpec(shape=(64, 64), frames=4, decorr="none")
    video, mesh, prof = synth_phantom(spec, seed=2)
    assert np.array_equal(video.data[0], video.data[3])
    assert prof.sum() == 0.0


def test_translation_phantom_mesh_matches_motion():
    spec = PhantomSpec(shape=(64, 64), frames=4, motion="translate",
                       motion_delta=(1.0, 2.0), decorr="none")
    video, mesh, _ = synth_phantom(spec, seed=2)
    delta = mesh.points[3] - mesh.points[0]
    assert np.abs(delta - np.array([3.0, 6.0])).max() <= 1e-9
    # integer translation: frame content is an exact crop shift
    assert np.array_equal(video.data[1, 2:, 1:], video.data[0, :-2, :-1])


def test_phantom_profile_forms():
    from echosim.phantom import parse_decorr

    assert parse_decorr("none", 4, 6, 0).sum() == 0.0
    const = parse_decorr("constant:0.3", 4, 6, 0)
    assert np.all(const[1:] == 0.3) and np.all(const[0] == 0.0)
    ramp = parse_decorr("ramp:0.6", 4, 6, 0)
    assert ramp[3, 0] == pytest.approx(0.6)
    spat = parse_decorr("spatial:0.1:0.5", 4, 6, 0)
    assert spat[1, 0] == pytest.approx(0.1)
    assert spat[1, -1] == pytest.approx(0.5)
    with pytest.raises(MetadataError):
        parse_decorr("bogus:0.5", 4, 6, 0)
    with pytest.raises(MetadataError):
        parse_decorr("constant:1.5", 4, 6, 0)
