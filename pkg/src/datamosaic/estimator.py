"""scikit-learn style front end.

``BayesianMosaic().fit(sources)`` stores the source fragments as a bank;
``transform(targets)`` returns posterior-mean reconstructions and
``sample(targets)`` draws mosaics from the posterior.
"""
from __future__ import annotations

import numbers
from typing import List

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .audio import topk_candidates
from .inference import KERNELS, InferenceConfig, PosteriorSamples
from .model import FragmentBank, MosaicProblem
from .parallel import run_problems


def check_seed(random_state) -> int:
    """Map an sklearn-style ``random_state`` onto an unsigned 64-bit seed."""
    if random_state is None:
        return int(np.random.default_rng().integers(0, 2 ** 63))
    if isinstance(random_state, numbers.Integral):
        if random_state < 0:
            raise ValueError("random_state must be nonnegative")
        return int(random_state)
    if isinstance(random_state, np.random.RandomState):
        return int(random_state.randint(0, 2 ** 31 - 1))
    if isinstance(random_state, np.random.Generator):
        return int(random_state.integers(0, 2 ** 63))
    raise ValueError(f"cannot use {random_state!r} as a random_state")


class BayesianMosaic(TransformerMixin, BaseEstimator):
    """Per-row posterior over averages of ``num_clips`` source rows.

    Parameters
    ----------
    num_clips : int
        Number of source fragments averaged per reconstruction.
    stddev : float
        Observation noise scale, in the units of the data.
    kernel : {"gibbs", "rwmh"}
    num_warmup, num_samples, thinning, num_chains : int
        Chain lengths; see :class:`datamosaic.inference.InferenceConfig`.
    top_k : int or None
        Restrict each target row to its ``top_k`` nearest source rows by
        cosine distance.  ``None`` uses every source row.
    random_state : int, Generator, RandomState or None
    n_jobs : int
        Worker processes; results do not depend on this value.
    """

    def __init__(self, num_clips=30, stddev=0.05, kernel="gibbs", num_warmup=1000,
                 num_samples=100, thinning=1, num_chains=2, top_k=None, random_state=0, n_jobs=1):
        self.num_clips = num_clips
        self.stddev = stddev
        self.kernel = kernel
        self.num_warmup = num_warmup
        self.num_samples = num_samples
        self.thinning = thinning
        self.num_chains = num_chains
        self.top_k = top_k
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _validate_params(self):
        if self.kernel not in KERNELS:
            raise ValueError(f"kernel must be one of {KERNELS}")
        if not self.stddev > 0:
            raise ValueError("stddev must be positive")
        if self.num_clips < 1:
            raise ValueError("num_clips must be >= 1")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be >= 1")

    def fit(self, X, y=None):
        self._validate_params()
        X = check_array(X, dtype=np.float64)
        self.bank_ = FragmentBank(X)
        self.n_features_in_ = X.shape[1]
        self.seed_ = check_seed(self.random_state)
        return self

    def _problems(self, X) -> List[MosaicProblem]:
        check_is_fitted(self, "bank_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        problems = []
        for i, row in enumerate(X):
            if self.top_k is None:
                candidates = np.arange(self.bank_.n_fragments)
            else:
                candidates = topk_candidates(row, self.bank_, self.top_k)
            problems.append(MosaicProblem(row, candidates, self.num_clips, self.stddev, i))
        return problems

    def sample_posterior(self, X) -> List[PosteriorSamples]:
        """Run the chains for every row of ``X``; one result per row."""
        problems = self._problems(X)
        config = InferenceConfig(self.kernel, self.num_warmup, self.num_samples, self.thinning,
                                 self.num_chains, self.seed_)
        return run_problems(problems, [self.bank_], [0] * len(problems), config, self.n_jobs)

    def transform(self, X):
        posts = self.sample_posterior(X)
        data = self.bank_.data.astype(np.float64)
        return np.stack([data[p.flat_selections()].mean(axis=1).mean(axis=0) for p in posts])

    def sample(self, X, n_samples=1, random_state=None):
        """Draw ``n_samples`` posterior reconstructions, shape (n_samples, n_rows, D)."""
        posts = self.sample_posterior(X)
        rng = np.random.default_rng(check_seed(random_state if random_state is not None else self.seed_))
        data = self.bank_.data.astype(np.float64)
        out = np.empty((n_samples, len(posts), self.n_features_in_))
        for j, post in enumerate(posts):
            flat = post.flat_selections()
            picks = rng.integers(0, flat.shape[0], size=n_samples)
            out[:, j] = data[flat[picks]].mean(axis=1)
        return out

    def score(self, X, y=None):
        """Negative mean squared error of the posterior-mean reconstruction."""
        X = check_array(X, dtype=np.float64)
        return -float(np.mean((self.transform(X) - X) ** 2))
