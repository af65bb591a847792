"""Replica predictions, finite-N solvers and tuning for block-weighted regularized least squares."""

from .bpsk import bpsk_curve, bpsk_optimal_lambda, box_fixed_point, ordinary_point, ordinary_tau
from .errors import (ConfigError, Diverged, NonConvergence, RLSError, UnsupportedMatrix)
from .gamp import gamp_solve, kkt_check, reference_solve
from .harness import generate_instance, load_config, parse_config, run_experiment
from .penalty import BOX, NONNEG, REALS, L1, L2Half, Elastic, GenericPenalty, PenaltySpec, prox, prox_generic
from .replica import (DistortionSpec, ReplicaProblem, asymptotic_distortion, engine_lambda,
                      objective_lambda, solve_fixed_point)
from .signal_model import BlockSignalModel, ScalarPrior, prior_expectation, sample_signal
from .spectral import MarchenkoPastur, RowOrthogonal, r_transform
from .tuner import tune_lambda, tune_weights

__version__ = "0.1.0"
