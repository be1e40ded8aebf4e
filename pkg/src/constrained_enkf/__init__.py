"""Ensemble Kalman filtering and inversion with linear equality/inequality
constraints enforced member-by-member through convex quadratic programs."""

from .constrained import (InfeasibleConstraintsError, LinearConstraints, ViolationReport,
                          constrained_filter_run, constrained_update_original,
                          constrained_update_range, violates)
from .constrained_eki import (LiftedConstraints, assemble_lifted, constrained_eki_run,
                              constrained_eki_update_original, constrained_eki_update_range,
                              rejection_sample_initial)
from .eki import InverseProblem, block_stats, eki_run, eki_update, w_update
from .enkf import (FilterModel, ForwardModelError, NoiseStreams, analysis_update, filter_run,
                   kalman_gain, perturb_observations, predict, range_update)
from .ensemble import Ensemble, EnsembleStats, anomaly_apply, compute_stats
from .qp import QpSolution, QuadraticProgram, brute_force_solve, solve

__all__ = [name for name in dir() if not name.startswith("_")]
