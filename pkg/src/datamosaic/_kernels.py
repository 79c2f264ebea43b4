"""Compiled inner loops for the Gibbs and random-walk Metropolis kernels.

All randomness is supplied by the caller as pre-drawn uniforms so that the
compiled code is a pure function of its arguments.  Positions index rows of
``scaled`` (the candidate sub-bank divided by the number of clips).
"""
import math

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_NONFINITE = 1


@njit(cache=True)
def _refresh_average(scaled, positions, avg):
    avg[:] = 0.0
    for c in range(positions.shape[0]):
        avg += scaled[positions[c]]


@njit(cache=True)
def _rss(target, avg):
    acc = 0.0
    for d in range(target.shape[0]):
        r = target[d] - avg[d]
        acc += r * r
    return acc


@njit(cache=True)
def gibbs_run(scaled, target, inv_two_var, positions, avg, uniforms,
              num_warmup, thinning, out_positions, out_rss, refresh_interval):
    n_sweeps, num_clips = uniforms.shape
    n_cand, dim = scaled.shape
    base = np.empty(dim)
    weights = np.empty(n_cand)
    cand_rss = np.empty(n_cand)
    rss = _rss(target, avg)
    updates = 0
    kept = 0
    for it in range(n_sweeps):
        for c in range(num_clips):
            old = positions[c]
            for d in range(dim):
                base[d] = target[d] - avg[d] + scaled[old, d]
            best = -np.inf
            for k in range(n_cand):
                acc = 0.0
                for d in range(dim):
                    r = base[d] - scaled[k, d]
                    acc += r * r
                cand_rss[k] = acc
                lw = -acc * inv_two_var
                weights[k] = lw
                if lw > best:
                    best = lw
            if not math.isfinite(best):
                return STATUS_NONFINITE
            total = 0.0
            for k in range(n_cand):
                w = math.exp(weights[k] - best)
                weights[k] = w
                total += w
            threshold = uniforms[it, c] * total
            new = n_cand - 1
            cum = 0.0
            for k in range(n_cand):
                cum += weights[k]
                if cum > threshold:
                    new = k
                    break
            rss = cand_rss[new]
            if new != old:
                positions[c] = new
                updates += 1
                if updates >= refresh_interval:
                    _refresh_average(scaled, positions, avg)
                    rss = _rss(target, avg)
                    updates = 0
                else:
                    for d in range(dim):
                        avg[d] += scaled[new, d] - scaled[old, d]
        out_rss[it] = rss
        if it >= num_warmup and (it - num_warmup + 1) % thinning == 0:
            out_positions[kept, :] = positions
            kept += 1
    return STATUS_OK


@njit(cache=True)
def rwmh_run(scaled, target, inv_two_var, positions, avg, uniforms,
             num_warmup, thinning, out_positions, out_rss, out_accepted, refresh_interval):
    n_steps = uniforms.shape[0]
    num_clips = positions.shape[0]
    n_cand, dim = scaled.shape
    rss = _rss(target, avg)
    if not math.isfinite(rss):
        return STATUS_NONFINITE
    updates = 0
    kept = 0
    for it in range(n_steps):
        slot = min(int(uniforms[it, 0] * num_clips), num_clips - 1)
        prop = min(int(uniforms[it, 1] * n_cand), n_cand - 1)
        old = positions[slot]
        accepted = True
        if prop != old:
            acc = 0.0
            for d in range(dim):
                r = target[d] - avg[d] - scaled[prop, d] + scaled[old, d]
                acc += r * r
            if not math.isfinite(acc):
                return STATUS_NONFINITE
            delta = -(acc - rss) * inv_two_var
            # log(0) = -inf always accepts when delta is finite.
            u = uniforms[it, 2]
            accepted = delta >= 0.0 or (u > 0.0 and math.log(u) < delta) or u == 0.0
            if accepted:
                positions[slot] = prop
                rss = acc
                updates += 1
                if updates >= refresh_interval:
                    _refresh_average(scaled, positions, avg)
                    rss = _rss(target, avg)
                    updates = 0
                else:
                    for d in range(dim):
                        avg[d] += scaled[prop, d] - scaled[old, d]
        out_accepted[it] = accepted
        out_rss[it] = rss
        if it >= num_warmup and (it - num_warmup + 1) % thinning == 0:
            out_positions[kept, :] = positions
            kept += 1
    return STATUS_OK
