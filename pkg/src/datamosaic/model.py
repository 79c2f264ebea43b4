"""Generative model: uniform clip selection, clip averaging, Gaussian observation.

A target fragment is modelled as the average of ``num_clips`` source fragments,
each chosen independently and uniformly from a candidate set, observed under
isotropic Gaussian noise of scale ``stddev``.  Selections are ordered slot
vectors; likelihood arithmetic is carried out in float64 regardless of the
storage precision of the bank.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Any, Hashable, Optional, Tuple

import numpy as np

from .exceptions import (
    InternalConsistencyError,
    InvalidInputError,
    InvalidSelectionError,
    NumericalError,
)

MODALITIES = ("image", "audio-magnitude", "raw")
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
# Exact recomputation of the cached clip sum after this many accepted updates.
REFRESH_INTERVAL = 1000


@dataclass(frozen=True, eq=False)
class FragmentBank:
    """Immutable S x D matrix of flattened source fragments.

    ``data`` is stored as read-only float32.  ``complex_frames`` optionally
    carries one complex spectrum per row (audio) for reconstruction.
    """

    data: np.ndarray
    fragment_shape: Tuple[int, ...] = ()
    modality: str = "raw"
    complex_frames: Optional[np.ndarray] = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32, copy=True)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise InvalidInputError(f"bank must be a non-empty S x D matrix, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("bank contains non-finite values")
        shape = tuple(int(s) for s in self.fragment_shape) or (data.shape[1],)
        if int(np.prod(shape)) != data.shape[1]:
            raise InvalidInputError(f"fragment_shape {shape} does not match D={data.shape[1]}")
        if self.modality not in MODALITIES:
            raise InvalidInputError(f"unknown modality {self.modality!r}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "fragment_shape", shape)
        if self.complex_frames is not None:
            frames = np.array(self.complex_frames, dtype=np.complex128, copy=True)
            if frames.shape[0] != data.shape[0]:
                raise InvalidInputError("complex_frames must have one row per bank fragment")
            frames.setflags(write=False)
            object.__setattr__(self, "complex_frames", frames)

    @property
    def n_fragments(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def rows(self, indices) -> np.ndarray:
        """Return the requested rows promoted to float64."""
        return self.data[np.asarray(indices, dtype=np.int64)].astype(np.float64)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.modality.encode())
        h.update(repr(self.data.shape).encode())
        h.update(repr(self.fragment_shape).encode())
        h.update(np.ascontiguousarray(self.data).tobytes())
        if self.complex_frames is not None:
            h.update(np.ascontiguousarray(self.complex_frames).tobytes())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class MosaicProblem:
    """One target fragment, its candidate support and model hyperparameters."""

    target: np.ndarray
    candidates: np.ndarray
    num_clips: int
    stddev: float
    fragment_id: Hashable = 0

    def __post_init__(self):
        target = np.asarray(self.target, dtype=np.float64).reshape(-1)
        if target.size < 1 or not np.all(np.isfinite(target)):
            raise InvalidInputError(f"target must be non-empty and finite (fragment {self.fragment_id!r})")
        candidates = np.asarray(self.candidates, dtype=np.int64).reshape(-1)
        if candidates.size < 1:
            raise InvalidInputError("candidate set must be non-empty")
        if np.unique(candidates).size != candidates.size:
            raise InvalidInputError("candidate set contains duplicates")
        if int(self.num_clips) < 1:
            raise InvalidInputError("num_clips must be >= 1")
        if not (float(self.stddev) > 0 and math.isfinite(float(self.stddev))):
            raise InvalidInputError("stddev must be positive")
        target.setflags(write=False)
        candidates.setflags(write=False)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "candidates", candidates)
        object.__setattr__(self, "num_clips", int(self.num_clips))
        object.__setattr__(self, "stddev", float(self.stddev))

    def check(self, bank: FragmentBank) -> None:
        if self.target.size != bank.dim:
            raise InvalidInputError(
                f"target has D={self.target.size} but bank has D={bank.dim} (fragment {self.fragment_id!r})"
            )
        if self.candidates.min() < 0 or self.candidates.max() >= bank.n_fragments:
            raise InvalidSelectionError(f"candidate index outside [0, {bank.n_fragments})")

    def normalizer(self) -> float:
        """Log normalizing constant of the isotropic Gaussian density."""
        return -self.target.size * (math.log(self.stddev) + LOG_SQRT_2PI)


@dataclass(frozen=True, eq=False)
class ChainState:
    """Selection plus cached clip sum and log-likelihood."""

    selection: np.ndarray
    clip_sum: np.ndarray
    log_lik: float
    updates_since_refresh: int = field(default=0)


def check_selection(selection, bank: FragmentBank, problem: Optional[MosaicProblem] = None) -> np.ndarray:
    selection = np.asarray(selection)
    if selection.ndim != 1 or selection.size < 1 or not np.issubdtype(selection.dtype, np.integer):
        raise InvalidSelectionError("selection must be a non-empty 1-d integer vector")
    selection = selection.astype(np.int64)
    if selection.min() < 0 or selection.max() >= bank.n_fragments:
        raise InvalidSelectionError(f"selection index outside [0, {bank.n_fragments})")
    if problem is not None:
        if selection.size != problem.num_clips:
            raise InvalidSelectionError(f"selection has {selection.size} slots, expected {problem.num_clips}")
        if not np.all(np.isin(selection, problem.candidates)):
            raise InvalidSelectionError("selection uses indices outside the candidate set")
    return selection


def average_clips(selection, bank: FragmentBank) -> np.ndarray:
    selection = check_selection(selection, bank)
    return bank.rows(selection).sum(axis=0) / selection.size


def _residual_sum_of_squares(target: np.ndarray, clip_sum: np.ndarray, num_clips: int) -> float:
    resid = target - clip_sum / num_clips
    return float(resid @ resid)


def _log_lik_from_rss(rss: float, problem: MosaicProblem) -> float:
    value = problem.normalizer() - rss / (2.0 * problem.stddev ** 2)
    if not math.isfinite(value):
        raise NumericalError("non-finite log-likelihood", fragment_id=problem.fragment_id)
    return value


def log_likelihood(selection, problem: MosaicProblem, bank: FragmentBank) -> float:
    """Gaussian log-density of the target given the averaged selection."""
    selection = check_selection(selection, bank, problem)
    clip_sum = bank.rows(selection).sum(axis=0)
    return _log_lik_from_rss(_residual_sum_of_squares(problem.target, clip_sum, problem.num_clips), problem)


def init_state(selection, problem: MosaicProblem, bank: FragmentBank) -> ChainState:
    selection = check_selection(selection, bank, problem).copy()
    clip_sum = bank.rows(selection).sum(axis=0)
    rss = _residual_sum_of_squares(problem.target, clip_sum, problem.num_clips)
    return ChainState(selection, clip_sum, _log_lik_from_rss(rss, problem))


def check_cache(state: ChainState, bank: FragmentBank, rtol: float = 1e-9) -> None:
    exact = bank.rows(state.selection).sum(axis=0)
    scale = max(1.0, float(np.max(np.abs(exact))))
    if np.max(np.abs(exact - state.clip_sum)) > rtol * scale * state.selection.size:
        raise InternalConsistencyError("cached clip sum is stale")


def _swapped_clip_sum(state: ChainState, slot: int, new_index: int, bank: FragmentBank) -> np.ndarray:
    old_index = int(state.selection[slot])
    return state.clip_sum - bank.data[old_index].astype(np.float64) + bank.data[new_index].astype(np.float64)


def _check_swap(state: ChainState, slot: int, new_index: int, problem: MosaicProblem) -> None:
    if not 0 <= slot < state.selection.size:
        raise InvalidSelectionError(f"slot {slot} outside [0, {state.selection.size})")
    if new_index not in set(problem.candidates.tolist()):
        raise InvalidSelectionError(f"index {new_index} is not a candidate")


def delta_log_likelihood_swap(
    state: ChainState,
    slot: int,
    new_index: int,
    problem: MosaicProblem,
    bank: FragmentBank,
    check: bool = False,
) -> float:
    """Change in log-likelihood from replacing one slot, in O(D)."""
    _check_swap(state, slot, new_index, problem)
    if check:
        check_cache(state, bank)
    if int(state.selection[slot]) == int(new_index):
        return 0.0
    clip_sum = _swapped_clip_sum(state, slot, int(new_index), bank)
    rss = _residual_sum_of_squares(problem.target, clip_sum, problem.num_clips)
    return _log_lik_from_rss(rss, problem) - state.log_lik


def apply_swap(state: ChainState, slot: int, new_index: int, problem: MosaicProblem, bank: FragmentBank) -> ChainState:
    """Return a new state with ``slot`` set to ``new_index`` and caches updated."""
    _check_swap(state, slot, new_index, problem)
    if int(state.selection[slot]) == int(new_index):
        return state
    selection = state.selection.copy()
    selection[slot] = new_index
    count = state.updates_since_refresh + 1
    if count >= REFRESH_INTERVAL:
        clip_sum = bank.rows(selection).sum(axis=0)
        count = 0
    else:
        clip_sum = _swapped_clip_sum(state, slot, int(new_index), bank)
    rss = _residual_sum_of_squares(problem.target, clip_sum, problem.num_clips)
    return replace(state, selection=selection, clip_sum=clip_sum,
                   log_lik=_log_lik_from_rss(rss, problem), updates_since_refresh=count)


def prior_sample(problem: MosaicProblem, rng: np.random.Generator) -> np.ndarray:
    """Draw each slot independently and uniformly from the candidate set."""
    positions = rng.integers(0, problem.candidates.size, size=problem.num_clips)
    return problem.candidates[positions].copy()


def observation_scale(values: Any) -> float:
    """Standard deviation of the data, used to express stddev in data units."""
    scale = float(np.std(np.asarray(values, dtype=np.float64)))
    return scale if scale > 0 else 1.0
