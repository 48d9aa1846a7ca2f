"""Optimistic natural policy gradient for episodic MDPs, with exact oracles for checking it."""
from __future__ import annotations

from .driver import IterationRecord, RunConfig, RunResult, complexity_measure, run, theorem1_params
from .env import (
    LinearMDPSpec,
    TabularMDPSpec,
    Trajectory,
    TrajectoryBatch,
    load_env,
    make_gap_tabular,
    make_random_linear,
    make_random_tabular,
    sample_episodes,
    save_env,
)
from .errors import ConfigurationError, NumericalError, SingularMatrixError, SizeGuardError, ValidationError
from .ope import ope_general, ope_linear, ope_tabular, split_dataset
from .policy import PolicyState, mirror_ascent_step, uniform_policy
from .rng import StreamRegistry

__version__ = "0.1.0"
