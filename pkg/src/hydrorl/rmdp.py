"""Exact machinery for tabular robust MDPs with total-variation uncertainty.

Every kernel row of a :class:`TabularMDP` is a distribution over next
states. The adversary may replace a row ``p`` by any ``q`` with
``0.5 * |q - p|_1 <= sigma``. Two independent routes compute the resulting
worst-case expectation:

* :func:`worst_case_expectation_oracle`, a greedy mass-moving construction
  that also returns the minimising distribution;
* :func:`dual_form_worst_case` (and its fail-state specialisation), which
  minimises the one-dimensional convex piecewise-linear dual exactly by
  enumerating its breakpoints.

The robust Bellman operator and the solvers built on it use the dual route
by default; the oracle route is selectable with ``method="oracle"``.
"""

import json
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from ._validation import (
    DIST_ATOL,
    FailStateAssumptionError,
    InvalidInputError,
    NonConvergenceWarning,
    check_distribution,
    check_finite,
    check_gamma,
    check_sigma,
)

FAIL_STATE_ATOL = 1e-9


@dataclass(eq=False)
class TabularMDP:
    """Finite MDP with rewards in [0, 1] and an optional absorbing fail state.

    ``kernel`` has shape ``(n_states, n_actions, n_states)`` and ``reward``
    shape ``(n_states, n_actions)``.
    """

    kernel: np.ndarray
    reward: np.ndarray
    gamma: float
    init_dist: np.ndarray
    fail_state: Optional[int] = None

    def __post_init__(self):
        self.kernel = np.array(self.kernel, dtype=float)
        self.reward = np.array(self.reward, dtype=float)
        self.init_dist = np.array(self.init_dist, dtype=float)
        self.gamma = check_gamma(self.gamma)
        if self.kernel.ndim != 3 or self.kernel.shape[0] != self.kernel.shape[2]:
            raise InvalidInputError("kernel must have shape (S, A, S)")
        S, A, _ = self.kernel.shape
        if self.reward.shape != (S, A):
            raise InvalidInputError(f"reward must have shape {(S, A)}")
        if np.any(self.kernel < 0) or not np.all(np.isfinite(self.kernel)):
            raise InvalidInputError("kernel has negative or non-finite entries")
        if np.max(np.abs(self.kernel.sum(axis=2) - 1.0)) > DIST_ATOL:
            raise InvalidInputError("kernel rows must sum to 1")
        if np.any(self.reward < 0) or np.any(self.reward > 1):
            raise InvalidInputError("rewards must lie in [0, 1]")
        if self.init_dist.shape != (S,):
            raise InvalidInputError(f"init_dist must have shape {(S,)}")
        check_distribution(self.init_dist, "init_dist")
        if self.fail_state is not None:
            f = int(self.fail_state)
            if not 0 <= f < S:
                raise InvalidInputError("fail_state out of range")
            self.fail_state = f
            if np.any(self.reward[f] != 0) or np.any(self.kernel[f, :, f] != 1.0):
                raise InvalidInputError(
                    "fail_state must be absorbing with zero reward for every action"
                )

    @property
    def n_states(self):
        return self.kernel.shape[0]

    @property
    def n_actions(self):
        return self.kernel.shape[1]

    def with_kernel(self, kernel):
        """Copy of this MDP with the transition kernel replaced."""
        return TabularMDP(kernel, self.reward.copy(), self.gamma,
                          self.init_dist.copy(), self.fail_state)

    def to_dict(self):
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.gamma,
            "fail_state": self.fail_state,
            "init_dist": self.init_dist.tolist(),
            "reward": self.reward.tolist(),
            "kernel": self.kernel.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        mdp = cls(d["kernel"], d["reward"], d["gamma"], d["init_dist"],
                  d.get("fail_state"))
        if mdp.n_states != d["n_states"] or mdp.n_actions != d["n_actions"]:
            raise InvalidInputError("n_states / n_actions disagree with arrays")
        return mdp

    def to_json(self):
        """Serialise with every float written to 17 significant digits."""
        return _dumps_17g(self.to_dict()) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _dumps_17g(obj):
    if isinstance(obj, dict):
        items = (f"{json.dumps(k)}: {_dumps_17g(v)}" for k, v in obj.items())
        return "{" + ", ".join(items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_dumps_17g(v) for v in obj) + "]"
    if isinstance(obj, float):
        return format(obj, ".17g")
    return json.dumps(obj)


@dataclass(frozen=True)
class UncertaintySpec:
    sigma: float
    metric: str = "tv"

    def __post_init__(self):
        check_sigma(self.sigma)
        if self.metric != "tv":
            raise InvalidInputError("only the total-variation metric is supported")


class WorstCaseResult(NamedTuple):
    value: float
    worst_dist: np.ndarray


class SolveResult(NamedTuple):
    q: np.ndarray
    policy: np.ndarray
    n_iter: int
    converged: bool


def tv_distance(p, q):
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum(axis=-1)


def dual_upper(sigma, gamma):
    """Right end of the dual-variable interval; ``inf`` when ``sigma == 0``."""
    return np.inf if sigma == 0 else 2.0 / (sigma * (1.0 - gamma))


# -- inner problem: greedy oracle --------------------------------------------

def _greedy_rows(P, v, sigma):
    # P: (n, S). Moves up to sigma mass per row onto argmin v, taking from the
    # highest-valued states first.
    n, S = P.shape
    m = int(np.argmin(v))
    others = np.array([s for s in np.lexsort((np.arange(S), -v)) if s != m],
                      dtype=int)
    mass = P[:, others]
    before = np.cumsum(mass, axis=1) - mass
    delta = np.clip(sigma - before, 0.0, mass)
    Q = P.copy()
    Q[:, others] -= delta
    Q[:, m] += delta.sum(axis=1)
    values = P @ v - delta @ (v[others] - v[m])
    return values, Q


def worst_case_expectation_oracle(p, v, sigma):
    """Exact ``min q.v`` over the TV ball of radius ``sigma`` around ``p``.

    Returns the optimal value together with the minimising distribution.
    """
    p = check_distribution(p)
    v = check_finite(v)
    sigma = check_sigma(sigma)
    if v.shape != p.shape:
        raise InvalidInputError("p and v must have equal length")
    values, Q = _greedy_rows(p[None, :], v, sigma)
    q = Q[0]
    assert abs(q.sum() - 1.0) <= DIST_ATOL and np.all(q >= -DIST_ATOL)
    assert tv_distance(q, p) <= sigma + DIST_ATOL
    return WorstCaseResult(float(values[0]), q)


# -- inner problem: dual forms -----------------------------------------------

def _candidates(v, sigma, gamma):
    ub = dual_upper(sigma, gamma)
    c = np.concatenate([v, [v.min(), 0.0]])
    if np.isfinite(ub):
        c = np.append(c, ub)
    return np.unique(np.clip(c, 0.0, ub))


def _dual_objective(P, v, eta, sigma, fail_state_form):
    # P: (n, S), eta: (K,) -> (n, K)
    obj = P @ np.maximum(eta[None, :] - v[:, None], 0.0)
    if fail_state_form:
        return obj - eta[None, :] * (1.0 - sigma)
    return obj + sigma * np.maximum(eta - v.min(), 0.0)[None, :] - eta[None, :]


def _dual_rows(P, v, sigma, gamma, fail_state_form=False):
    """Minimum value and lowest minimiser of the dual objective per row."""
    eta = _candidates(v, sigma, gamma)
    obj = _dual_objective(P, v, eta, sigma, fail_state_form)
    k = np.argmin(obj, axis=1)
    return obj[np.arange(len(P)), k], eta[k]


def _check_inner(p, v, sigma, gamma):
    p = check_distribution(p)
    v = check_finite(v)
    if v.shape != p.shape:
        raise InvalidInputError("p and v must have equal length")
    return p, v, check_sigma(sigma), check_gamma(gamma)


def dual_form_worst_case(p, v, sigma, gamma):
    """Worst-case expectation through the general TV dual.

    Minimises ``E_p[(eta - v)_+] + sigma * (eta - min v)_+ - eta`` over
    ``eta in [0, 2 / (sigma (1 - gamma))]`` and returns minus the minimum.
    """
    p, v, sigma, gamma = _check_inner(p, v, sigma, gamma)
    if sigma == 0:
        return float(p @ v)
    obj, _ = _dual_rows(p[None, :], v, sigma, gamma)
    return float(-obj[0])


def fail_state_dual_worst_case(p, v, sigma, gamma):
    """Dual worst-case expectation when ``min v == 0`` (absorbing fail state).

    The ``(eta - min v)_+`` term collapses into ``eta``, leaving
    ``E_p[(eta - v)_+] - eta (1 - sigma)``.
    """
    p, v, sigma, gamma = _check_inner(p, v, sigma, gamma)
    if v.min() > FAIL_STATE_ATOL:
        raise FailStateAssumptionError(
            f"min v = {v.min()!r}; the fail-state form needs a zero-valued state")
    if sigma == 0:
        return float(p @ v)
    obj, _ = _dual_rows(p[None, :], v, sigma, gamma, fail_state_form=True)
    return float(-obj[0])


def worst_case_values(P, v, sigma, gamma, method="dual"):
    """Row-wise worst-case expectations for a stack of distributions ``P``."""
    P = np.asarray(P, dtype=float)
    v = np.asarray(v, dtype=float)
    if sigma == 0:
        return P @ v
    if method == "dual":
        obj, _ = _dual_rows(P, v, sigma, gamma)
        return -obj
    if method == "oracle":
        return _greedy_rows(P, v, sigma)[0]
    raise InvalidInputError(f"unknown method {method!r}")


# -- operators and solvers ---------------------------------------------------

def greedy_policy(q):
    """Greedy action per state; ``np.argmax`` resolves ties to the lowest index."""
    return np.argmax(np.asarray(q), axis=1)


def _sigma_of(spec):
    return spec.sigma if isinstance(spec, UncertaintySpec) else check_sigma(spec)


def robust_bellman_apply(q, mdp, spec, method="dual"):
    """One application of the robust Bellman optimality operator."""
    q = check_finite(q, "Q")
    sigma = _sigma_of(spec)
    S, A = mdp.n_states, mdp.n_actions
    v = q.max(axis=1)
    w = worst_case_values(mdp.kernel.reshape(S * A, S), v, sigma, mdp.gamma, method)
    return mdp.reward + mdp.gamma * w.reshape(S, A)


def robust_value_iteration(mdp, spec, tol=1e-10, max_iters=100_000, method="dual"):
    """Iterate the robust Bellman operator from ``Q = 0``.

    Stops once the sup-norm change drops below ``tol``. If ``max_iters`` is
    reached first, the last iterate is returned with ``converged=False`` and
    a :class:`NonConvergenceWarning` is emitted.
    """
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for it in range(1, max_iters + 1):
        q_new = robust_bellman_apply(q, mdp, spec, method)
        diff = np.max(np.abs(q_new - q))
        q = q_new
        if diff < tol:
            return SolveResult(q, greedy_policy(q), it, True)
    warnings.warn(f"robust value iteration did not reach tol={tol} in "
                  f"{max_iters} iterations", NonConvergenceWarning)
    return SolveResult(q, greedy_policy(q), max_iters, False)


def _policy_rows(mdp, pi):
    pi = np.asarray(pi, dtype=int)
    if pi.shape != (mdp.n_states,) or np.any(pi < 0) or np.any(pi >= mdp.n_actions):
        raise InvalidInputError("policy must give one valid action per state")
    idx = np.arange(mdp.n_states)
    return mdp.kernel[idx, pi], mdp.reward[idx, pi]


def robust_policy_evaluation(pi, mdp, spec, tol=1e-10, max_iters=100_000,
                             method="dual"):
    """Robust value ``V^{pi, sigma}`` by fixed-point iteration."""
    P, r = _policy_rows(mdp, pi)
    sigma = _sigma_of(spec)
    v = np.zeros(mdp.n_states)
    for _ in range(max_iters):
        v_new = r + mdp.gamma * worst_case_values(P, v, sigma, mdp.gamma, method)
        diff = np.max(np.abs(v_new - v))
        v = v_new
        if diff < tol:
            return v
    warnings.warn("robust policy evaluation did not converge", NonConvergenceWarning)
    return v


def policy_value(pi, mdp, kernel=None):
    """Non-robust value of a deterministic policy by a direct linear solve.

    ``kernel`` optionally overrides the MDP's kernel; it may be a full
    ``(S, A, S)`` array or policy-restricted ``(S, S)`` rows.
    """
    P, r = _policy_rows(mdp, pi)
    if kernel is not None:
        kernel = np.asarray(kernel, dtype=float)
        P = kernel if kernel.ndim == 2 else kernel[np.arange(mdp.n_states), pi]
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P, r)


def worst_case_kernel(pi, mdp, spec, v=None):
    """Row-wise minimising kernel for policy ``pi``; shape ``(S, S)``.

    Row ``s`` is the oracle's worst distribution at ``(s, pi(s))`` against
    the robust value ``V^{pi, sigma}`` (computed unless ``v`` is given).
    """
    P, _ = _policy_rows(mdp, pi)
    sigma = _sigma_of(spec)
    if v is None:
        v = robust_policy_evaluation(pi, mdp, spec, tol=1e-12)
    if sigma == 0:
        return P.copy()
    _, W = _greedy_rows(P, np.asarray(v, dtype=float), sigma)
    return W


def occupancy_measure(pi, kernel, init_dist, gamma, n_actions=None):
    """Normalised discounted state-action occupancy of a deterministic policy.

    ``kernel`` is either the full ``(S, A, S)`` array or policy-restricted
    ``(S, S)`` rows; in the latter case ``n_actions`` must be supplied.
    Returns an ``(S, A)`` array summing to one.
    """
    pi = np.asarray(pi, dtype=int)
    kernel = np.asarray(kernel, dtype=float)
    S = len(pi)
    if kernel.ndim == 3:
        n_actions = kernel.shape[1]
        P = kernel[np.arange(S), pi]
    else:
        if n_actions is None:
            raise InvalidInputError("n_actions is required for (S, S) kernels")
        P = kernel
    gamma = check_gamma(gamma)
    ds = np.linalg.solve(np.eye(S) - gamma * P.T, (1 - gamma) * np.asarray(init_dist))
    d = np.zeros((S, n_actions))
    d[np.arange(S), pi] = ds
    return d


# -- small instances ---------------------------------------------------------

def two_state_chain(gamma=0.9):
    """State 0 loops on itself with reward 1; state 1 is the fail state."""
    kernel = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])
    reward = np.array([[1.0], [0.0]])
    return TabularMDP(kernel, reward, gamma, [1.0, 0.0], fail_state=1)


def random_tabular_mdp(n_states, n_actions, gamma, rng, fail_state=True,
                       concentration=1.0):
    """Random MDP with Dirichlet kernel rows; the last state is the fail state."""
    rng = np.random.default_rng(rng)
    kernel = rng.dirichlet(np.full(n_states, concentration),
                           size=(n_states, n_actions))
    reward = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    init = rng.dirichlet(np.ones(n_states))
    f = None
    if fail_state:
        f = n_states - 1
        kernel[f] = 0.0
        kernel[f, :, f] = 1.0
        reward[f] = 0.0
        init[f] = 0.0
        init /= init.sum()
    kernel /= kernel.sum(axis=2, keepdims=True)
    return TabularMDP(kernel, reward, gamma, init, f)
