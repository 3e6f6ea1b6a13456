"""Variance-reduced stochastic EM in the sufficient-statistics space.

Batch EM, Online-EM and g-SPIDER-EM (constant or geometric epoch lengths,
full or partial estimator resets) over a model-agnostic contract, with a
shared-covariance Gaussian mixture backend.
"""
from .gmm import GaussianMixture, GmmParams, estimate_lipschitz, init_params, posterior_responsibilities
from .kernels import BACKEND
from .model import Counters, InfeasibleStatisticError, LatentModel, mean_field, objective
from .samplers import (
    BatchSpec,
    Constant,
    Geometric,
    GrowingGeometric,
    draw_epoch_length,
    draw_minibatch,
    split_rng,
)
from .solvers import (
    DivergenceError,
    Fraction,
    Full,
    Growth,
    RunConfig,
    RunTrace,
    StepSchedule,
    batch_em_run,
    gspider_run,
    online_em_run,
    randomized_terminate,
    spider_strategy,
)

__version__ = "0.1.0"
