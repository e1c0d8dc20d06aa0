"""Per-(s, a) dual variable of robust fitted Q-iteration.

Under an absorbing fail state the robust backup reduces to

    r(s, a) - gamma * min_eta ( E[(eta - V(s'))_+] - eta (1 - sigma) ),

and the minimiser is the (1 - sigma)-quantile of ``V(s')``. The learned
table ``g`` tracks that minimiser by stochastic subgradient descent on the
same objective, clipped to ``[0, 2 / (sigma (1 - gamma))]``.
"""

import numpy as np

from ._validation import InvalidInputError, check_sigma
from .rmdp import _dual_rows, dual_upper


def dual_clip_bounds(sigma, gamma):
    return 0.0, dual_upper(sigma, gamma)


def _batch_arrays(batch):
    s = np.asarray(batch.s, dtype=int)
    if s.size == 0:
        raise InvalidInputError("batch is empty")
    return s, np.asarray(batch.a, dtype=int), np.asarray(batch.s_next, dtype=int)


def dual_loss(g, batch, v, sigma):
    """Mean of ``(g(s,a) - V(s'))_+ - (1 - sigma) g(s,a)`` over the batch."""
    s, a, s_next = _batch_arrays(batch)
    gv = np.asarray(g)[s, a]
    vn = np.asarray(v)[s_next]
    return float(np.mean(np.maximum(gv - vn, 0.0) - (1.0 - sigma) * gv))


def dual_subgradients(g, s, a, s_next, v, sigma):
    """Per-sample right subgradient of the dual loss w.r.t. ``g(s, a)``."""
    gv = g[s, a]
    return (gv >= v[s_next]).astype(float) - (1.0 - sigma)


def dual_gradient_step(g, batch, v, sigma, lr, gamma):
    """Return a new table after one clipped subgradient step.

    Each visited ``(s, a)`` moves by ``lr`` times the mean subgradient of the
    samples that hit it, so the result does not depend on sample order.
    """
    if lr <= 0:
        raise InvalidInputError("lr must be positive")
    sigma = check_sigma(sigma)
    g = np.asarray(g, dtype=float)
    s, a, s_next = _batch_arrays(batch)
    sub = dual_subgradients(g, s, a, s_next, np.asarray(v, dtype=float), sigma)
    total = np.zeros_like(g)
    count = np.zeros_like(g)
    np.add.at(total, (s, a), sub)
    np.add.at(count, (s, a), 1.0)
    hit = count > 0
    out = g.copy()
    out[hit] -= lr * total[hit] / count[hit]
    lo, hi = dual_clip_bounds(sigma, gamma)
    return np.clip(out, lo, hi)


def empirical_robust_backup(r, s_next, g_value, q_target, sigma, gamma):
    """Single-sample robust target ``r - gamma((g - V(s'))_+ - g (1 - sigma))``.

    Vectorised: ``r``, ``s_next`` and ``g_value`` may be arrays.
    """
    v_next = np.asarray(q_target).max(axis=1)[np.asarray(s_next)]
    g_value = np.asarray(g_value, dtype=float)
    return np.asarray(r) - gamma * (np.maximum(g_value - v_next, 0.0)
                                    - g_value * (1.0 - sigma))


def exact_dual_table(mdp, q, sigma):
    """Exact per-(s, a) minimiser of the fail-state dual objective under the
    nominal kernel, lowest minimiser on ties."""
    sigma = check_sigma(sigma)
    S, A = mdp.n_states, mdp.n_actions
    v = np.asarray(q).max(axis=1)
    _, eta = _dual_rows(mdp.kernel.reshape(S * A, S), v, sigma, mdp.gamma,
                        fail_state_form=True)
    return eta.reshape(S, A)
