"""Fitted Q-iteration pieces: approximators, regression targets, the mixed
target/source gradient step, and the exact kappa-mixed iteration."""

from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from ._validation import InvalidInputError
from .dual import empirical_robust_backup, exact_dual_table
from .rmdp import UncertaintySpec, robust_bellman_apply, robust_value_iteration


@dataclass
class TrainConfig:
    """Hyperparameters shared by the FQI, RFQI and HYDRO learners."""

    sigma: float = 0.1
    gamma: float = 0.95
    lr_q: float = 0.05
    lr_g: float = 0.01
    batch_size: int = 128
    iterations: int = 5000
    target_sync_period: int = 100
    kappa: Optional[float] = None
    topk_fraction: float = 0.5
    rollout_len: int = 5
    beta: float = 1.0
    ensemble_size: int = 7
    seed: int = 0
    lambda_prior: float = 1.0
    ensemble_prior: str = "dirichlet"
    explore_eps: float = 0.1
    rollout_horizon: int = 100
    buffer_capacity: int = 100_000
    uncertainty_filter: bool = True
    prioritized: bool = True
    gap_mode: str = "exact"
    dual_steps_per_iter: int = 1
    q_steps_per_iter: int = 1
    log_every: int = 10

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.kappa is not None and not 0.0 <= self.kappa <= 1.0:
            raise InvalidInputError("kappa must lie in [0, 1]")
        if not 0.0 < self.topk_fraction <= 1.0:
            raise InvalidInputError("topk_fraction must lie in (0, 1]")
        if self.rollout_len < 0:
            raise InvalidInputError("rollout_len must be non-negative (0 disables the source)")
        if self.ensemble_size < 2:
            raise InvalidInputError("ensemble_size must be at least 2")
        for name in ("lr_q", "lr_g", "beta"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")
        for name in ("batch_size", "iterations", "target_sync_period",
                     "dual_steps_per_iter", "q_steps_per_iter", "log_every",
                     "rollout_horizon", "buffer_capacity"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be at least 1")
        if not 0.0 <= self.sigma <= 1.0:
            raise InvalidInputError("sigma must lie in [0, 1]")
        if not 0.0 < self.gamma < 1.0:
            raise InvalidInputError("gamma must lie in (0, 1)")
        if self.gap_mode not in ("exact", "sample"):
            raise InvalidInputError("gap_mode must be 'exact' or 'sample'")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidInputError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


class LinearQ:
    """Q(s, a) = W[a] . phi(s) over a fixed feature matrix ``phi``."""

    def __init__(self, features, n_actions, weights=None):
        self.features = np.asarray(features, dtype=float)
        self.n_actions = int(n_actions)
        shape = (self.n_actions, self.features.shape[1])
        self.weights = np.zeros(shape) if weights is None else np.array(weights, dtype=float)

    @classmethod
    def one_hot(cls, n_states, n_actions):
        return cls(np.eye(n_states), n_actions)

    def table(self):
        return self.features @ self.weights.T

    def predict(self, s, a):
        return np.einsum("nd,nd->n", self.weights[a], self.features[s])

    def loss(self, s, a, y, scale):
        resid = y - self.predict(s, a)
        return float(np.sum(scale * resid ** 2))

    def gradient(self, s, a, y, scale):
        """Gradient of ``sum(scale * (y - Q(s, a))**2)`` w.r.t. the weights."""
        resid = y - self.predict(s, a)
        grad = np.zeros_like(self.weights)
        np.add.at(grad, a, (-2.0 * scale * resid)[:, None] * self.features[s])
        return grad

    def step(self, s, a, y, scale, lr):
        self.weights -= lr * self.gradient(s, a, y, scale)

    def copy(self):
        return LinearQ(self.features, self.n_actions, self.weights.copy())


class TabularQ:
    """Direct table; numerically identical to :class:`LinearQ` with one-hot
    features."""

    def __init__(self, n_states, n_actions, values=None):
        self.values = (np.zeros((n_states, n_actions)) if values is None
                       else np.array(values, dtype=float))

    def table(self):
        return self.values

    def predict(self, s, a):
        return self.values[s, a]

    def loss(self, s, a, y, scale):
        return float(np.sum(scale * (y - self.values[s, a]) ** 2))

    def gradient(self, s, a, y, scale):
        grad = np.zeros_like(self.values)
        np.add.at(grad, (s, a), -2.0 * scale * (y - self.values[s, a]))
        return grad

    def step(self, s, a, y, scale, lr):
        self.values -= lr * self.gradient(s, a, y, scale)

    def copy(self):
        return TabularQ(*self.values.shape, values=self.values.copy())


def fqi_target(r, s_next, q_target, gamma):
    """Non-robust single-sample target ``r + gamma * max_a' Q(s', a')``."""
    return np.asarray(r) + gamma * np.asarray(q_target).max(axis=1)[np.asarray(s_next)]


def mixed_q_step(q, g, target_batch, source_batch, weights, q_target, sigma,
                 gamma, lr, kappa=None, robust=True):
    """One gradient step on the combined target/source squared error.

    Target samples regress to the robust single-sample backup (or to the
    plain backup when ``robust`` is false); source samples regress to the
    plain backup scaled by their 0/1 ``weights``. Each term is a mean over
    its own batch, so zero-weighted source samples still count in the
    source denominator. With ``kappa`` given the terms are weighted
    ``kappa`` and ``1 - kappa``; otherwise both have weight one.
    """
    parts = []
    c_tar, c_src = (1.0, 1.0) if kappa is None else (kappa, 1.0 - kappa)
    if target_batch is not None and len(target_batch):
        tb = target_batch
        if robust:
            y = empirical_robust_backup(tb.r, tb.s_next, g[tb.s, tb.a], q_target, sigma, gamma)
        else:
            y = fqi_target(tb.r, tb.s_next, q_target, gamma)
        parts.append((tb.s, tb.a, y, np.full(len(tb), c_tar / len(tb))))
    if source_batch is not None and len(source_batch):
        sb = source_batch
        w = np.ones(len(sb)) if weights is None else np.asarray(weights, dtype=float)
        if np.any((w != 0) & (w != 1)):
            raise InvalidInputError("source weights must be 0 or 1")
        y = fqi_target(sb.r, sb.s_next, q_target, gamma)
        parts.append((sb.s, sb.a, y, c_src * w / len(sb)))
    if not parts:
        return q
    s, a, y, scale = (np.concatenate(c) for c in zip(*parts))
    q.step(s, a, y, scale, lr)
    return q


# -- exact kappa-mixed iteration ---------------------------------------------

def robust_dual_operator(q, mdp, g, sigma):
    """Exact expectation of the single-sample robust backup under the
    nominal kernel for a given dual table ``g``."""
    v = np.asarray(q).max(axis=1)
    gv = np.asarray(g)[..., None]
    inner = (np.maximum(gv - v[None, None, :], 0.0) * mdp.kernel).sum(axis=2)
    return mdp.reward - mdp.gamma * (inner - np.asarray(g) * (1.0 - sigma))


def nominal_operator(q, mdp):
    return mdp.reward + mdp.gamma * mdp.kernel @ np.asarray(q).max(axis=1)


def kappa_mixed_iteration(mdp_target, mdp_source, sigma, kappa, iters,
                          q_star=None, r_max=1.0):
    """Exact iteration ``Q <- kappa T^{sigma,g} Q + (1 - kappa) T_src Q``.

    Starts from ``Q = 0`` with ``g`` set to the exact dual minimiser at every
    step. Returns a dict of per-iteration arrays ``xi``, ``zeta``, ``bound``
    and ``gap`` (entry ``k`` describes ``Q^{k+1}``) and the final ``q``.
    """
    if not 0.0 <= kappa <= 1.0:
        raise InvalidInputError("kappa must lie in [0, 1]")
    gamma = mdp_target.gamma
    spec = UncertaintySpec(sigma)
    if q_star is None:
        q_star = robust_value_iteration(mdp_target, spec, tol=1e-13).q
    q = np.zeros_like(mdp_target.reward)
    xi, zeta, bound, gap = (np.zeros(iters) for _ in range(4))
    err_sum = 0.0
    for k in range(iters):
        robust = robust_bellman_apply(q, mdp_target, spec)
        g = exact_dual_table(mdp_target, q, sigma)
        dual_b = robust_dual_operator(q, mdp_target, g, sigma)
        plain = nominal_operator(q, mdp_source)
        xi[k] = np.max(np.abs(dual_b - robust))
        zeta[k] = np.max(np.abs(plain - robust))
        q = kappa * dual_b + (1.0 - kappa) * plain
        err_sum = gamma * err_sum + kappa * xi[k] + (1.0 - kappa) * zeta[k]
        bound[k] = gamma ** (k + 1) * r_max / (1.0 - gamma) + err_sum
        gap[k] = np.max(np.abs(q_star - q))
    return {"xi": xi, "zeta": zeta, "bound": bound, "gap": gap, "q": q}
