"""Bayesian data mosaicing: posterior samples over averages of source fragments."""
from .estimator import BayesianMosaic
from .exceptions import MosaicError
from .inference import (
    ExactPosterior,
    InferenceConfig,
    PosteriorSamples,
    exact_posterior,
    gibbs_sweep,
    run_chain,
    run_chains,
    rwmh_step,
    split_rhat,
)
from .model import (
    ChainState,
    FragmentBank,
    MosaicProblem,
    average_clips,
    delta_log_likelihood_swap,
    log_likelihood,
    prior_sample,
)

__version__ = "0.1.0"

__all__ = [
    "BayesianMosaic", "ChainState", "ExactPosterior", "FragmentBank", "InferenceConfig",
    "MosaicError", "MosaicProblem", "PosteriorSamples", "average_clips", "delta_log_likelihood_swap",
    "exact_posterior", "gibbs_sweep", "log_likelihood", "prior_sample", "run_chain", "run_chains",
    "rwmh_step", "split_rhat",
]
