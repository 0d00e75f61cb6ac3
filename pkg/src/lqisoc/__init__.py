"""Forward and inverse linear-quadratic stochastic optimal control.

Forward: finite-horizon LQG and signal-dependent-noise (LQS) gains with exact
moment propagation of the estimation-control loop. Inverse: recovery of cost
weights and noise scales from ground-truth moments of measured states by an
alternating bi-level grid search.
"""
__version__ = "0.1.0"

from .errors import (DimensionError, FormatError, InsufficientSamples, InvalidConfig, InvalidCost,
                     InvalidModel, InvalidNormalizer, IsocError, NumericalError)
from .isoc import (GridSearchConfig, GridSearchResult, IsocConfig, IsocResult, evaluate_candidate,
                   forward, grid_search, isoc_solve, reaching_config, reaching_lqs_reduced)
from .lqg import (GainSchedule, MomentTrajectory, lqg_control_gains, lqg_filter_gains, lqg_gains,
                  lqg_propagate_moments)
from .lqs import LqsSolverState, lqs_gains, lqs_propagate_moments
from .model import (CostModel, GroundTruthMoments, NoiseModel, ParameterLayout, Problem, SystemModel,
                    assemble_cost, assemble_noise, build_reaching_model, load_problem, save_problem)
from .montecarlo import TrajectoryBatch, estimate_moments, sample_trajectories
from .objective import (FitReport, ObjectiveConfig, ParameterErrors, fit_report, j_isoc,
                        parameter_errors, vaf, vaf_cov, vaf_mean)
