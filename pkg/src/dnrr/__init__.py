"""Bayesian nonparametric dynamical noise reduction for polynomial maps."""
from .dynamics import (MixtureNoise, PolynomialMap, Trajectory, cubic_map, eval_basis, eval_map,
                       gaussian_noise, henon_map, sample_noise, simulate, two_scale_noise)
from .gsbr import Priors
from .orchestrator import ChainConfig, PosteriorChain, run_chain, run_replicated

__version__ = "0.1.0"
