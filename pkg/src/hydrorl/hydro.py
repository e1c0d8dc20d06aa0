"""Gap scoring, priorities and top-k selection for source transitions."""

import math
from typing import NamedTuple

import numpy as np

from ._validation import InvalidInputError
from .ensemble import TabularDynamicsEnsemble


class GapEstimate(NamedTuple):
    lambda_hat: np.ndarray
    source_value: np.ndarray
    model_dual_value: np.ndarray


def _mean_kernel(model):
    if isinstance(model, TabularDynamicsEnsemble):
        return model.mean_kernel()
    return np.asarray(model, dtype=float)


def sample_next_states(kernel, s, a, rng):
    """One next state per ``(s, a)`` row drawn from ``kernel``."""
    rows = kernel[s, a]
    cdf = np.cumsum(rows, axis=-1)
    u = rng.random(np.shape(s)) * cdf[..., -1]
    out = (u[..., None] >= cdf).sum(axis=-1)
    return np.minimum(out, kernel.shape[-1] - 1)


def gap_lambda_hat(q, g, model, s_src, a_src, s_next_src, sigma, mode="exact",
                   rng=None):
    """Estimated discrepancy between a source transition and the worst-case
    backup around the estimated target model.

    ``|V(s'_src) + M - g(s, a)(1 - sigma)|`` with ``V = max_a Q``. In
    ``"exact"`` mode ``M`` is ``E[(g - V(s'))_+]`` under the ensemble mean
    model; in ``"sample"`` mode it is ``(g - V(s'_tar))_+`` for one next
    state drawn from that model with ``rng``. ``model`` is an ensemble or a
    precomputed ``(S, A, S)`` mean kernel. Vectorised over the transition
    arguments.
    """
    kernel = _mean_kernel(model)
    v = np.asarray(q).max(axis=1)
    s_src = np.asarray(s_src)
    a_src = np.asarray(a_src)
    gv = np.asarray(g)[s_src, a_src]
    if mode == "exact":
        m = (np.maximum(gv[..., None] - v, 0.0) * kernel[s_src, a_src]).sum(axis=-1)
    elif mode == "sample":
        if rng is None:
            raise InvalidInputError("sample mode needs an rng")
        m = np.maximum(gv - v[sample_next_states(kernel, s_src, a_src, rng)], 0.0)
    else:
        raise InvalidInputError(f"unknown mode {mode!r}")
    dual_value = m - gv * (1.0 - sigma)
    src_value = v[np.asarray(s_next_src)]
    return GapEstimate(np.abs(src_value + dual_value), src_value, dual_value)


def priority_score(lambda_hat):
    """``1 / (1 + lambda_hat)``: in (0, 1], decreasing in the gap."""
    lam = np.asarray(lambda_hat, dtype=float)
    if np.any(lam < 0) or np.any(np.isnan(lam)):
        raise InvalidInputError("gap estimates must be non-negative")
    out = 1.0 / (1.0 + lam)
    return float(out) if out.ndim == 0 else out


def topk_weights(psi, k_fraction):
    """0/1 weights selecting the ``ceil(k * N)`` highest scores of a batch.

    Ties at the cut-off go to the lower batch index.
    """
    if not 0.0 < k_fraction <= 1.0:
        raise InvalidInputError("k_fraction must lie in (0, 1]")
    psi = np.asarray(psi, dtype=float)
    n = psi.shape[0]
    keep = min(n, math.ceil(k_fraction * n - 1e-9))
    order = np.lexsort((np.arange(n), -psi))
    w = np.zeros(n)
    w[order[:keep]] = 1.0
    return w


def buffer_insert_filtered(buffer, transition, u, epsilon_u, psi):
    """Store ``transition = (s, a, r, s')`` iff ``u <= epsilon_u``.

    ``psi`` is the priority, or a zero-argument callable producing it, which
    is then only evaluated for accepted transitions.
    """
    if u > epsilon_u:
        return False
    priority = psi() if callable(psi) else psi
    buffer.insert(*transition, priority=priority, u=u)
    return True


def buffer_sample(buffer, n, seed, uniform=False):
    """Draw ``n`` positions with probability proportional to priority.

    Returns ``(positions, batch)``; both are empty for an empty buffer.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pos = buffer.sample_positions(n, rng, uniform=uniform)
    return pos, buffer.batch(pos)


def recompute_priorities(buffer, positions, q, g, model, sigma, mode="exact", rng=None):
    batch = buffer.batch(positions)
    gap = gap_lambda_hat(q, g, model, batch.s, batch.a, batch.s_next, sigma, mode, rng)
    return gap, priority_score(gap.lambda_hat)


def buffer_update_priorities(buffer, positions, q, g, model, sigma, ids=None,
                             mode="exact", rng=None):
    """Recompute and store priorities for sampled entries.

    ``ids`` are the insertion ids seen at sampling time; entries overwritten
    since then are skipped. Returns ``(new_priorities, n_stale)``.
    """
    positions = np.asarray(positions, dtype=int)
    if ids is None:
        ids = buffer.ids[positions]
    _, psi = recompute_priorities(buffer, positions, q, g, model, sigma, mode, rng)
    psi = np.atleast_1d(psi)
    return psi, buffer.update_priorities(positions, ids, psi)
