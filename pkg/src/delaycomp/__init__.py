"""Delay compartment models: delay exponential waiting times, exact stochastic
simulation and the matching deterministic delay differential equations."""

from .dde import build_dde, solve, steady_states
from .dexp import (
    CharacteristicRoots,
    DexpParams,
    characteristic_roots,
    dexp_density,
    dexp_eval,
    is_distribution_valid,
    lambert_w,
    laplace_survival,
    mgf,
    moments,
)
from .model import ModelSpec, preset_pk, preset_sis, validate
from .sampler import DexpQuantileTable, RngStream, sample_dexp, sample_markov_holding
from .ssa import EnsembleSummary, Trajectory, run_ensemble, run_path

__version__ = "0.1.0"
