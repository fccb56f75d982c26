"""Shearless transport barrier extraction for finite-time 2D flows and maps."""
from __future__ import annotations

__version__ = "0.1.0"

from . import errors
from .geometry import Polyline, hausdorff_distance
from .solver import SolverConfig
from .systems import (BickleyConfig, ContinuousSystem, DiscreteSystem, Rect,
                      SampledSignal, advect_blob, bickley_jet, bickley_velocity,
                      canonical_shear, flow_map, flow_map_batch,
                      flow_map_gradient, ftle_counterexample, indicator_points,
                      lorenz_signal, sampled_velocity_system, sntm)
from .meanfield import (MeanFieldState, mean_field_evolve, passive_sntm,
                        place_active_particles)
from .strainfield import (StrainField, averaged_shear, boundary_term,
                          compute_strain_field, d_tensor, eig_sym2,
                          lagrangian_shear, neutrality, normal_repulsion,
                          shear_vectors)
from .singularities import (Singularity, classify_singularities,
                            classify_singularity, detect_singularities)
from .tensorlines import StopConfig, Tensorline, eigvec_at, integrate_tensorline
from .barriers import (BarrierChain, Connection, assemble_chains,
                       certify_segment, connect_to_wedge,
                       extract_parabolic_barriers, score_hyperbolic_candidates,
                       trace_separatrices)
from .validation import (MetricReport, blob_stretch_ratio,
                         ftle_transverse_profile, indicator_barrier)

__all__ = [name for name in dir() if not name.startswith("_")]
