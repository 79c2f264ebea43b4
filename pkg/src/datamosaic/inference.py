"""MCMC over clip selections: Gibbs and random-walk Metropolis kernels,
chain runner, split-R-hat, and an exact enumeration oracle.
"""
from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammaln, logsumexp

from . import _kernels
from .exceptions import InvalidInputError, NumericalError, SupportTooLargeError
from .model import (
    REFRESH_INTERVAL,
    ChainState,
    FragmentBank,
    MosaicProblem,
    check_cache,
    init_state,
    prior_sample,
)

KERNELS = ("gibbs", "rwmh")
RHAT_WARN_THRESHOLD = 1.05
EXACT_SUPPORT_LIMIT = 10 ** 6
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class InferenceConfig:
    kernel: str = "gibbs"
    num_warmup: int = 1000
    num_samples: int = 100
    thinning: int = 1
    num_chains: int = 2
    master_seed: int = 0

    def __post_init__(self):
        errors = self.violations()
        if errors:
            raise InvalidInputError("; ".join(errors))

    def violations(self) -> List[str]:
        errors = []
        if self.kernel not in KERNELS:
            errors.append(f"kernel must be one of {KERNELS}")
        if self.num_warmup < 0:
            errors.append("num_warmup must be >= 0")
        if self.num_samples < 1:
            errors.append("num_samples must be >= 1")
        if self.thinning < 1:
            errors.append("thinning must be >= 1")
        if self.num_chains < 1:
            errors.append("num_chains must be >= 1")
        if not 0 <= self.master_seed <= _MASK64:
            errors.append("master_seed must be an unsigned 64-bit integer")
        return errors

    @property
    def trace_length(self) -> int:
        return self.num_warmup + self.num_samples * self.thinning


@dataclass
class PosteriorSamples:
    """Post-warmup selections and log-likelihood traces for one fragment.

    ``selections`` has shape (n_chains, num_samples, num_clips) and holds bank
    indices; ``traces`` has shape (n_chains, num_warmup + num_samples * thinning).
    """

    fragment_id: Hashable
    chain_indices: Tuple[int, ...]
    selections: np.ndarray
    traces: np.ndarray
    num_warmup: int
    acceptance: Optional[np.ndarray] = None
    split_rhat: float = float("nan")
    final_states: List[ChainState] = field(default_factory=list, repr=False)

    @property
    def n_chains(self) -> int:
        return self.selections.shape[0]

    def flat_selections(self) -> np.ndarray:
        return self.selections.reshape(-1, self.selections.shape[-1])


@dataclass(frozen=True)
class ExactPosterior:
    """Posterior probability of every slot-multiset (sorted index tuple)."""

    probs: Dict[Tuple[int, ...], float]

    @property
    def support_size(self) -> int:
        return len(self.probs)

    def mode(self) -> Tuple[int, ...]:
        """Most probable multiset, counting every slot ordering it covers."""
        return max(self.probs, key=self.probs.get)

    def selection_mode(self) -> Tuple[int, ...]:
        """Multiset of the most probable ordered selection.

        Each ordering of a multiset has probability ``p / multiplicity``; unlike
        :meth:`mode` this is the residual-norm minimizer for every stddev.
        """
        return max(self.probs, key=lambda k: self.probs[k] / multiset_multiplicity(k))

    def tv_distance(self, selections) -> float:
        """Total-variation distance to the empirical multiset distribution."""
        empirical = multiset_frequencies(selections)
        keys = set(self.probs) | set(empirical)
        return 0.5 * sum(abs(self.probs.get(k, 0.0) - empirical.get(k, 0.0)) for k in keys)

    def sample(self, n: int, rng: np.random.Generator) -> List[Tuple[int, ...]]:
        keys = list(self.probs)
        p = np.array([self.probs[k] for k in keys])
        idx = rng.choice(len(keys), size=n, p=p / p.sum())
        return [keys[i] for i in idx]


def multiset_multiplicity(multiset: Sequence[int]) -> int:
    """Number of distinct slot orderings of ``multiset``."""
    counts = Counter(multiset)
    out = math.factorial(len(multiset))
    for v in counts.values():
        out //= math.factorial(v)
    return out


def multiset_count(n_candidates: int, num_clips: int) -> int:
    return math.comb(n_candidates + num_clips - 1, num_clips)


def multiset_frequencies(selections) -> Dict[Tuple[int, ...], float]:
    selections = np.sort(np.asarray(selections, dtype=np.int64), axis=-1)
    selections = selections.reshape(-1, selections.shape[-1])
    counts = Counter(map(tuple, selections.tolist()))
    n = selections.shape[0]
    return {k: v / n for k, v in counts.items()}


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _as_u64(value: Hashable) -> int:
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return int(value) & _MASK64
    digest = hashlib.blake2b(repr(value).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed(master_seed: int, fragment_id: Hashable, chain_index: int) -> int:
    """Mix (master_seed, fragment_id, chain_index) into one 64-bit chain seed."""
    x = _splitmix64(int(master_seed) & _MASK64)
    x = _splitmix64(x ^ _as_u64(fragment_id))
    return _splitmix64(x ^ (int(chain_index) & _MASK64))


def chain_rng(master_seed: int, fragment_id: Hashable, chain_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master_seed, fragment_id, chain_index)))


class _Workspace:
    """Candidate sub-bank and scaled arrays shared by the compiled kernels."""

    def __init__(self, problem: MosaicProblem, bank: FragmentBank):
        problem.check(bank)
        self.problem = problem
        self.bank = bank
        self.scaled = bank.rows(problem.candidates) / problem.num_clips
        self.target = np.ascontiguousarray(problem.target)
        self.inv_two_var = 1.0 / (2.0 * problem.stddev ** 2)
        self.lookup = {int(s): i for i, s in enumerate(problem.candidates)}

    def positions(self, selection) -> np.ndarray:
        return np.array([self.lookup[int(s)] for s in selection], dtype=np.int64)

    def log_lik(self, rss: np.ndarray) -> np.ndarray:
        return self.problem.normalizer() - np.asarray(rss) * self.inv_two_var

    def state(self, positions: np.ndarray) -> ChainState:
        return init_state(self.problem.candidates[positions], self.problem, self.bank)


def _raise_nonfinite(problem: MosaicProblem, chain_index=None):
    raise NumericalError("all conditional weights are non-finite", problem.fragment_id, chain_index)


def gibbs_sweep(state: ChainState, problem: MosaicProblem, bank: FragmentBank,
                rng: np.random.Generator, check: bool = False) -> ChainState:
    """Resample every slot in order from its exact full conditional."""
    if check:
        check_cache(state, bank)
    ws = _Workspace(problem, bank)
    positions = ws.positions(state.selection)
    avg = ws.scaled[positions].sum(axis=0)
    uniforms = rng.random((1, problem.num_clips))
    out_pos = np.empty((1, problem.num_clips), dtype=np.int64)
    out_rss = np.empty(1)
    status = _kernels.gibbs_run(ws.scaled, ws.target, ws.inv_two_var, positions, avg, uniforms,
                                0, 1, out_pos, out_rss, REFRESH_INTERVAL)
    if status != _kernels.STATUS_OK:
        _raise_nonfinite(problem)
    return ws.state(positions)


def rwmh_step(state: ChainState, problem: MosaicProblem, bank: FragmentBank,
              rng: np.random.Generator) -> Tuple[ChainState, bool]:
    """One symmetric single-slot proposal, accepted with min(1, exp(delta))."""
    ws = _Workspace(problem, bank)
    positions = ws.positions(state.selection)
    before = positions.copy()
    avg = ws.scaled[positions].sum(axis=0)
    uniforms = rng.random((1, 3))
    out_pos = np.empty((1, problem.num_clips), dtype=np.int64)
    out_rss = np.empty(1)
    out_acc = np.empty(1, dtype=np.bool_)
    status = _kernels.rwmh_run(ws.scaled, ws.target, ws.inv_two_var, positions, avg, uniforms,
                               0, 1, out_pos, out_rss, out_acc, REFRESH_INTERVAL)
    if status != _kernels.STATUS_OK:
        _raise_nonfinite(problem)
    if np.array_equal(before, positions):
        return state, bool(out_acc[0])
    return ws.state(positions), bool(out_acc[0])


def run_chain(problem: MosaicProblem, bank: FragmentBank, config: InferenceConfig,
              chain_index: int = 0) -> PosteriorSamples:
    """Run one chain from a prior draw; deterministic in (seed, fragment, chain)."""
    ws = _Workspace(problem, bank)
    rng = chain_rng(config.master_seed, problem.fragment_id, chain_index)
    positions = ws.positions(prior_sample(problem, rng))
    avg = ws.scaled[positions].sum(axis=0)
    n_iter = config.trace_length
    out_pos = np.empty((config.num_samples, problem.num_clips), dtype=np.int64)
    out_rss = np.empty(n_iter)
    acceptance = None
    if config.kernel == "gibbs":
        uniforms = rng.random((n_iter, problem.num_clips))
        status = _kernels.gibbs_run(ws.scaled, ws.target, ws.inv_two_var, positions, avg, uniforms,
                                    config.num_warmup, config.thinning, out_pos, out_rss,
                                    REFRESH_INTERVAL)
    else:
        uniforms = rng.random((n_iter, 3))
        accepted = np.empty(n_iter, dtype=np.bool_)
        status = _kernels.rwmh_run(ws.scaled, ws.target, ws.inv_two_var, positions, avg, uniforms,
                                   config.num_warmup, config.thinning, out_pos, out_rss, accepted,
                                   REFRESH_INTERVAL)
        acceptance = np.array([accepted.mean()])
    if status != _kernels.STATUS_OK:
        _raise_nonfinite(problem, chain_index)
    trace = ws.log_lik(out_rss)
    if not np.all(np.isfinite(trace)):
        raise NumericalError("non-finite log-likelihood trace", problem.fragment_id, chain_index)
    return PosteriorSamples(
        fragment_id=problem.fragment_id,
        chain_indices=(int(chain_index),),
        selections=problem.candidates[out_pos][None],
        traces=trace[None],
        num_warmup=config.num_warmup,
        acceptance=acceptance,
        final_states=[ws.state(positions)],
    )


def merge_chains(results: Sequence[PosteriorSamples]) -> PosteriorSamples:
    """Combine single-fragment chain results and compute split-R-hat."""
    results = sorted(results, key=lambda r: r.chain_indices)
    if len({r.fragment_id for r in results}) != 1:
        raise InvalidInputError("cannot merge chains from different fragments")
    num_warmup = results[0].num_warmup
    merged = PosteriorSamples(
        fragment_id=results[0].fragment_id,
        chain_indices=tuple(i for r in results for i in r.chain_indices),
        selections=np.concatenate([r.selections for r in results]),
        traces=np.concatenate([r.traces for r in results]),
        num_warmup=num_warmup,
        acceptance=(None if results[0].acceptance is None
                    else np.concatenate([r.acceptance for r in results])),
        final_states=[s for r in results for s in r.final_states],
    )
    if merged.n_chains >= 2 and merged.traces.shape[1] - num_warmup >= 4:
        merged.split_rhat = split_rhat(merged.traces[:, num_warmup:])
    return merged


def run_chains(problem: MosaicProblem, bank: FragmentBank, config: InferenceConfig) -> PosteriorSamples:
    return merge_chains([run_chain(problem, bank, config, c) for c in range(config.num_chains)])


def split_rhat(traces) -> float:
    """Split potential scale reduction factor of post-warmup scalar traces.

    Each chain is cut into two halves (the middle draw is dropped for odd
    lengths).  Returns 1.0 when every half is constant at the same value and
    ``inf`` when halves are constant at different values.
    """
    chains = [np.asarray(t, dtype=np.float64) for t in traces]
    if len(chains) < 2:
        raise InvalidInputError("split_rhat needs at least 2 chains")
    n = min(len(c) for c in chains)
    if n < 4:
        raise InvalidInputError("split_rhat needs traces of length >= 4")
    half = n // 2
    halves = np.array([part for c in chains for part in (c[:half], c[n - half:n])])
    means = halves.mean(axis=1)
    within = halves.var(axis=1, ddof=1).mean()
    between = half * means.var(ddof=1)
    if within == 0.0:
        return 1.0 if between == 0.0 else float("inf")
    return float(np.sqrt((half - 1) / half + between / (half * within)))


def exact_posterior(problem: MosaicProblem, bank: FragmentBank) -> ExactPosterior:
    """Enumerate every slot-multiset; weight = multiplicity x likelihood."""
    problem.check(bank)
    n, c = problem.candidates.size, problem.num_clips
    size = multiset_count(n, c)
    if size > EXACT_SUPPORT_LIMIT:
        raise SupportTooLargeError(
            f"exact enumeration needs {size} multisets, above the limit of {EXACT_SUPPORT_LIMIT}"
        )
    rows = bank.rows(problem.candidates)
    keys, logw = [], []
    log_c_fact = gammaln(c + 1)
    for combo in combinations_with_replacement(range(n), c):
        combo = np.array(combo)
        resid = problem.target - rows[combo].sum(axis=0) / c
        counts = np.bincount(combo)
        log_mult = log_c_fact - gammaln(counts + 1).sum()
        logw.append(log_mult - float(resid @ resid) / (2.0 * problem.stddev ** 2))
        keys.append(tuple(sorted(int(problem.candidates[i]) for i in combo)))
    logw = np.array(logw)
    probs = np.exp(logw - logsumexp(logw))
    return ExactPosterior(dict(zip(keys, probs.tolist())))


def posterior_averages(samples: PosteriorSamples, bank: FragmentBank) -> np.ndarray:
    """Averaged clip of every stored sample, shape (n_chains, num_samples, D)."""
    sel = samples.selections
    return bank.data[sel].astype(np.float64).mean(axis=2)
