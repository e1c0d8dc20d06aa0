"""Policy evaluation, bound diagnostics and the significance test."""

import math

import numpy as np
from scipy.stats import norm

from ._validation import InvalidInputError
from .ensemble import TabularDynamicsEnsemble
from .fitted import kappa_mixed_iteration
from .rmdp import (
    TabularMDP,
    UncertaintySpec,
    greedy_policy,
    occupancy_measure,
    policy_value,
    robust_policy_evaluation,
    robust_value_iteration,
    tv_distance,
    worst_case_kernel,
    worst_case_values,
)


def _as_mdp(env):
    if isinstance(env, TabularMDP):
        return env
    from .envs import GridSpec, Simulator, compile
    if isinstance(env, Simulator):
        return compile(env.spec)
    if isinstance(env, GridSpec):
        return compile(env)
    raise InvalidInputError(f"cannot evaluate on {type(env).__name__}")


def evaluate_policy(q, env, episodes, horizon, seed, start_state=None):
    """Monte Carlo undiscounted return of the greedy policy of ``q``.

    ``env`` is a :class:`TabularMDP`, grid spec or simulator. Episodes run for
    exactly ``horizon`` steps (absorbing states keep paying their reward).
    Returns ``(mean, std)`` over episodes.
    """
    mdp = _as_mdp(env)
    if episodes < 1:
        raise InvalidInputError("episodes must be at least 1")
    pi = greedy_policy(np.asarray(q))
    rng = np.random.default_rng(seed)
    if start_state is None:
        s = rng.choice(mdp.n_states, size=episodes, p=mdp.init_dist)
    else:
        s = np.full(episodes, int(start_state))
    P = mdp.kernel[np.arange(mdp.n_states), pi]
    cdf = np.cumsum(P, axis=1)
    r = mdp.reward[np.arange(mdp.n_states), pi]
    ret = np.zeros(episodes)
    for _ in range(horizon):
        ret += r[s]
        u = rng.random(episodes) * cdf[s, -1]
        s = np.minimum((u[:, None] >= cdf[s]).sum(axis=1), mdp.n_states - 1)
    return float(ret.mean()), float(ret.std())


def expected_return(q_or_pi, mdp, horizon):
    """Exact expected undiscounted ``horizon``-step return from ``init_dist``."""
    arr = np.asarray(q_or_pi)
    pi = greedy_policy(arr) if arr.ndim == 2 else arr.astype(int)
    idx = np.arange(mdp.n_states)
    P, r = mdp.kernel[idx, pi], mdp.reward[idx, pi]
    d, total = mdp.init_dist.copy(), 0.0
    for _ in range(horizon):
        total += d @ r
        d = d @ P
    return float(total)


def exact_discounted_value(q, mdp, sigma=None):
    """Expected discounted value of the greedy policy from ``init_dist``;
    robust under ``sigma`` when given."""
    pi = greedy_policy(np.asarray(q))
    if sigma is None:
        return float(mdp.init_dist @ policy_value(pi, mdp))
    return float(mdp.init_dist @ robust_policy_evaluation(pi, mdp, UncertaintySpec(sigma)))


# -- performance bound -------------------------------------------------------

def bound_diagnostics_thm1(pi, target_mdp, source_mdp, sigma, dataset=None,
                           estimated_kernel=None, ensemble_size=7, lambda_prior=1.0,
                           seed=0, r_max=1.0, check=True):
    """Numerically check the source-to-robust-target performance bound.

    The estimated nominal kernel is the ensemble mean fit on ``dataset``
    unless ``estimated_kernel`` is given directly. Returns a dict with
    ``lhs``, ``rhs``, the occupancy-weighted terms ``A`` and ``B`` and the
    source value. With ``check`` the inequality ``lhs >= rhs - 1e-8`` is
    asserted.
    """
    pi = np.asarray(pi, dtype=int)
    gamma = target_mdp.gamma
    spec = UncertaintySpec(sigma)
    if estimated_kernel is None:
        if dataset is None:
            raise InvalidInputError("need a dataset or an estimated kernel")
        model = TabularDynamicsEnsemble(ensemble_size, lambda_prior, "uniform", seed)
        estimated_kernel = model.fit(dataset, target_mdp.n_states,
                                     target_mdp.n_actions).mean_kernel()
    estimated_kernel = np.array(estimated_kernel, dtype=float)
    if target_mdp.fail_state is not None:
        f = target_mdp.fail_state
        estimated_kernel[f] = 0.0
        estimated_kernel[f, :, f] = 1.0
    est_mdp = target_mdp.with_kernel(estimated_kernel)
    S = target_mdp.n_states
    idx = np.arange(S)

    v_rob = robust_policy_evaluation(pi, target_mdp, spec, tol=1e-13)
    v_src = policy_value(pi, source_mdp)
    lhs = float(target_mdp.init_dist @ v_rob)
    src_value = float(target_mdp.init_dist @ v_src)

    wc_true = worst_case_kernel(pi, target_mdp, spec, v=v_rob)
    v_est = robust_policy_evaluation(pi, est_mdp, spec, tol=1e-13)
    wc_est = worst_case_kernel(pi, est_mdp, spec, v=v_est)
    d_est = occupancy_measure(pi, wc_est, target_mdp.init_dist, gamma,
                              n_actions=target_mdp.n_actions).sum(axis=1)
    term_a = float(d_est @ tv_distance(wc_true, wc_est))

    p_src = source_mdp.kernel[idx, pi]
    p_est = est_mdp.kernel[idx, pi]
    gap = np.abs(p_src @ v_est - worst_case_values(p_est, v_est, sigma, gamma, "oracle"))
    d_src = occupancy_measure(pi, source_mdp.kernel, target_mdp.init_dist,
                              gamma).sum(axis=1)
    term_b = float(d_src @ gap)

    coef_a = 2 * gamma * r_max / (1 - gamma) ** 2
    coef_b = gamma / (1 - gamma)
    rhs = src_value - coef_a * term_a - coef_b * term_b
    if check:
        assert lhs >= rhs - 1e-8, (lhs, rhs)
    return {"lhs": lhs, "rhs": rhs, "A": term_a, "B": term_b,
            "source_value": src_value, "coef_A": coef_a, "coef_B": coef_b}


def bound_diagnostics_thm2(mdp_target, mdp_source, sigma, kappa, iters, r_max=1.0,
                           check=True):
    """Per-iteration rows ``(k, xi, zeta, gap, bound)`` of the exact
    kappa-mixed iteration; asserts ``gap <= bound + 1e-9`` when ``check``."""
    q_star = robust_value_iteration(mdp_target, UncertaintySpec(sigma), tol=1e-13).q
    res = kappa_mixed_iteration(mdp_target, mdp_source, sigma, kappa, iters,
                                q_star=q_star, r_max=r_max)
    rows = [{"k": k, "xi": float(res["xi"][k]), "zeta": float(res["zeta"][k]),
             "gap": float(res["gap"][k]), "bound": float(res["bound"][k])}
            for k in range(iters)]
    if check:
        bad = [r for r in rows if r["gap"] > r["bound"] + 1e-9]
        assert not bad, bad[0]
    return rows


# -- statistics --------------------------------------------------------------

def ztest_compare(returns_a, returns_b, alpha=0.05, min_samples=30):
    """One-sided two-sample z-test of ``H0: mean_a <= mean_b``.

    Returns ``(z, p_value, reject)``. Samples smaller than ``min_samples``
    are refused because the normal approximation is not trustworthy there;
    lowering ``min_samples`` is an explicit, documented relaxation.
    """
    a = np.asarray(returns_a, dtype=float)
    b = np.asarray(returns_b, dtype=float)
    if min(a.size, b.size) < min_samples:
        raise InvalidInputError(
            f"z-test needs at least {min_samples} samples per group "
            f"(got {a.size} and {b.size}); report the raw means instead")
    se = math.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size + 1e-12)
    z = (a.mean() - b.mean()) / se
    p = float(norm.sf(z))
    return float(z), p, p < alpha
