"""echosim: simulated cardiac ultrasound with speckle decorrelation."""

from .coherence import CoherenceMap, dynamic_map, static_map
from .correlation import (CorrelationCurves, measure_curves, ncc_matrix,
                          point_correlation, read_curves_csv, write_curves_csv)
from .data_model import (DisplacementField, Mesh, ProbeConfig, SectorGeometry,
                         VideoTensor, load_array, load_mesh, load_tensor,
                         mask_from_mesh, save_array, save_mesh, save_tensor)
from .bilinear import forward_bilinear, inverse_bilinear
from .evaluation import average_correlation, build_report, curve_mae
from .phantom import PhantomSpec, synth_phantom
from .pipeline import (SimulationJob, SimulationResult, ground_truth_field,
                       refine_curves, run_job, run_s1, run_s2, run_s2_refined)
from .render import render_frame, render_sequence
from .scatterers import (ScattererSet, advect, bsc_from_video, build_set_s2,
                         s1_background_refresh, sample_positions,
                         split_populations_s1)

__version__ = "0.1.0"
