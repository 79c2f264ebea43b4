"""Fragment x chain task execution over a process pool.

Tasks are assigned round-robin to workers up front; every chain seeds itself
from (master_seed, fragment_id, chain_index), so results do not depend on the
worker count or on completion order.
"""
from __future__ import annotations

import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from typing import List, Sequence

from .exceptions import MosaicError, NumericalError
from .inference import InferenceConfig, PosteriorSamples, merge_chains, run_chain
from .model import FragmentBank, MosaicProblem

WORKERS_ENV = "DATAMOSAIC_WORKERS"

_SHARED = {}


def resolve_workers(requested: int) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            requested = int(env)
        except ValueError:
            raise MosaicError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    return max(1, int(requested))


def _init_worker(problems, banks, bank_index, config):
    _SHARED.update(problems=problems, banks=banks, bank_index=bank_index, config=config)


def _run_tasks(tasks):
    problems, banks = _SHARED["problems"], _SHARED["banks"]
    bank_index, config = _SHARED["bank_index"], _SHARED["config"]
    out = []
    for frag, chain in tasks:
        problem = problems[frag]
        try:
            result = run_chain(problem, banks[bank_index[frag]], config, chain)
        except NumericalError:
            raise
        except MosaicError as exc:
            raise NumericalError(str(exc), problem.fragment_id, chain) from exc
        result.final_states = []
        out.append((frag, chain, result))
    return out


def run_problems(problems: Sequence[MosaicProblem], banks: Sequence[FragmentBank],
                 bank_index: Sequence[int], config: InferenceConfig,
                 workers: int = 1) -> List[PosteriorSamples]:
    """Run ``config.num_chains`` chains for every problem; one merged result per problem."""
    tasks = [(f, c) for f in range(len(problems)) for c in range(config.num_chains)]
    workers = min(workers, max(1, len(tasks)))
    shared = (list(problems), list(banks), list(bank_index), config)
    if workers == 1:
        _init_worker(*shared)
        try:
            done = _run_tasks(tasks)
        finally:
            _SHARED.clear()
    else:
        chunks = [tasks[w::workers] for w in range(workers)]
        ctx = multiprocessing.get_context("fork" if os.name == "posix" else "spawn")
        with ProcessPoolExecutor(workers, mp_context=ctx, initializer=_init_worker,
                                 initargs=shared) as pool:
            futures = [pool.submit(_run_tasks, chunk) for chunk in chunks]
            done = [item for fut in futures for item in fut.result()]
    by_fragment = {}
    for frag, _chain, result in done:
        by_fragment.setdefault(frag, []).append(result)
    return [merge_chains(by_fragment[f]) for f in range(len(problems))]
