"""FQI, RFQI and HYDRO learners with a scikit-learn style interface.

All three share one training loop. Randomness is split into independent
streams spawned from ``seed`` (target sampling, source sampling, rollout
exploration, model sampling, diagnostics, ensemble fitting, simulator), so
switching a mechanism off never shifts the draws seen by the others. That
is what makes HYDRO with ``rollout_len=0`` reproduce RFQI bit for bit.
"""

import hashlib
import json
from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import InvalidInputError
from .buffer import PriorityBuffer
from .data import TARGET, SampleBatch
from .dual import dual_gradient_step
from .ensemble import TabularDynamicsEnsemble
from .fitted import LinearQ, TabularQ, TrainConfig, mixed_q_step
from .hydro import gap_lambda_hat, priority_score, sample_next_states, topk_weights
from .rmdp import UncertaintySpec, greedy_policy, policy_value, robust_policy_evaluation

LOG_COLUMNS = ["iter", "mean_psi_sampled", "mean_psi_uniform_ref", "accept_rate",
               "lambda_mean", "eval_return_nominal", "eval_return_worstcase",
               "sup_gap_to_exact"]

_STREAMS = ("target", "source", "rollout", "model", "diag", "ensemble", "sim")


def _streams(seed):
    children = np.random.SeedSequence(seed).spawn(len(_STREAMS))
    rngs = {name: np.random.default_rng(c) for name, c in zip(_STREAMS, children)}
    rngs["sim_seed"] = children[-1]
    return rngs


def _check_target_dataset(dataset, n_states, n_actions):
    if len(dataset) == 0:
        raise InvalidInputError("the offline dataset is empty")
    if np.any(dataset.domain != TARGET):
        raise InvalidInputError("the offline dataset must hold target-domain transitions only")
    dataset.check_bounds(n_states, n_actions)


class _SourceState:
    """Everything HYDRO keeps about the source domain during training."""

    def __init__(self, cfg, dataset, n_states, n_actions, source_env, rngs):
        if source_env.n_states != n_states or source_env.n_actions != n_actions:
            raise InvalidInputError("source simulator state/action spaces differ "
                                    "from the target dataset's")
        self.ensemble = TabularDynamicsEnsemble(
            cfg.ensemble_size, cfg.lambda_prior, cfg.ensemble_prior,
            rngs["ensemble"]).fit(dataset, n_states, n_actions)
        self.threshold = self.ensemble.compute_threshold(dataset, cfg.beta, cfg.rollout_len)
        self.epsilon_u = self.threshold.epsilon_u if cfg.uncertainty_filter else np.inf
        self.u_table = self.ensemble.uncertainty_table()
        self.kernel = self.ensemble.mean_kernel()
        self.buffer = PriorityBuffer(cfg.buffer_capacity)
        self.sim = source_env.clone(rngs["sim_seed"])
        self.ep_len = None
        self.seen = 0
        self.accepted = 0

    def rollout(self, cfg, q_online, q_tgt, g, rng):
        for _ in range(cfg.rollout_len):
            if self.ep_len is None:
                self.sim.reset()
                self.ep_len = 0
            s = self.sim.state
            if rng.random() < cfg.explore_eps:
                a = int(rng.integers(q_online.shape[1]))
            else:
                # random tie-break: unsupported states keep all-equal values
                best = np.flatnonzero(q_online[s] == q_online[s].max())
                a = int(best[0] if len(best) == 1 else rng.choice(best))
            s_next, r = self.sim.step(a)
            self.ep_len += 1
            if self.sim.is_absorbing(s) or self.ep_len >= cfg.rollout_horizon:
                self.ep_len = None
            self.seen += 1
            u = float(self.u_table[s, a])
            if u <= self.epsilon_u:
                gap = gap_lambda_hat(q_tgt, g, self.kernel, s, a, s_next, cfg.sigma)
                self.buffer.insert(s, a, r, s_next, priority_score(gap.lambda_hat), u)
                self.accepted += 1


def train(cfg, dataset, n_states, n_actions, *, robust=True, source_env=None,
          features=None, eval_mdp=None, q_star=None, eval_every=0):
    """Run the shared training loop; returns a dict of results.

    ``robust=False`` gives FQI (plain backups on target data, no dual
    table). A ``source_env`` with ``cfg.rollout_len > 0`` turns on the
    HYDRO source pipeline. ``q_star`` adds a sup-norm gap column to the log;
    ``eval_mdp`` with ``eval_every > 0`` adds exact nominal and worst-case
    returns of the greedy policy.
    """
    _check_target_dataset(dataset, n_states, n_actions)
    rngs = _streams(cfg.seed)
    q = TabularQ(n_states, n_actions) if features is None else LinearQ(features, n_actions)
    q_tgt = q.table().copy()
    g = np.zeros((n_states, n_actions))
    src = None
    if source_env is not None and cfg.rollout_len > 0:
        src = _SourceState(cfg, dataset, n_states, n_actions, source_env, rngs)
    n, N = len(dataset), cfg.batch_size
    digest = hashlib.sha256()
    log = []
    n_stale = 0
    # running sums over the current log window: psi sampled, psi uniform
    # reference, lambda mean, number of source batches
    window = np.zeros(4)
    for t in range(1, cfg.iterations + 1):
        if src is not None:
            src.rollout(cfg, q.table(), q_tgt, g, rngs["rollout"])
        tb = dataset.batch(rngs["target"].integers(n, size=N))
        sb = w = aug = None
        if src is not None and len(src.buffer):
            buf = src.buffer
            pos = buf.sample_positions(N, rngs["source"], uniform=not cfg.prioritized)
            ids = buf.ids[pos]
            # stored priorities as seen by this draw, before the update below
            stored = buf.priorities
            ref = rngs["diag"].integers(len(buf), size=N)
            window += (float(stored[pos].mean()), float(stored[ref].mean()), 0.0, 1)
            sb = buf.batch(pos)
            gap = gap_lambda_hat(q_tgt, g, src.kernel, sb.s, sb.a, sb.s_next, cfg.sigma,
                                 cfg.gap_mode, rngs["model"])
            psi = priority_score(gap.lambda_hat)
            n_stale += buf.update_priorities(pos, ids, psi)
            w = topk_weights(psi, cfg.topk_fraction)
            if robust:
                s_aug = sample_next_states(src.kernel, sb.s, sb.a, rngs["model"])
                aug = SampleBatch(sb.s, sb.a, sb.r, s_aug)
            window[2] += float(gap.lambda_hat.mean())
        if robust:
            v_tgt = q_tgt.max(axis=1)
            dual_batch = tb if aug is None else SampleBatch(
                *(np.concatenate([x, y]) for x, y in zip(tb[:4], aug[:4])))
            for _ in range(cfg.dual_steps_per_iter):
                g = dual_gradient_step(g, dual_batch, v_tgt, cfg.sigma, cfg.lr_g, cfg.gamma)
        for _ in range(cfg.q_steps_per_iter):
            mixed_q_step(q, g, tb, sb, w, q_tgt, cfg.sigma, cfg.gamma, cfg.lr_q,
                         kappa=cfg.kappa, robust=robust)
        table = q.table()
        digest.update(table.tobytes())
        digest.update(g.tobytes())
        if t % cfg.target_sync_period == 0:
            q_tgt = table.copy()
        if t % cfg.log_every == 0:
            row = {"iter": t}
            if window[3]:
                row.update(zip(("mean_psi_sampled", "mean_psi_uniform_ref", "lambda_mean"),
                               (window[:3] / window[3]).tolist()))
            window[:] = 0.0
            if src is not None:
                row["accept_rate"] = src.accepted / max(src.seen, 1)
            if q_star is not None:
                row["sup_gap_to_exact"] = float(np.max(np.abs(table - q_star)))
            if eval_mdp is not None and eval_every and t % eval_every == 0:
                row.update(_exact_returns(table, eval_mdp, cfg.sigma))
            log.append(row)
    out = {"q": q, "g": g, "log": log, "checksum": digest.hexdigest(),
           "rng_state": {k: v.bit_generator.state for k, v in rngs.items()
                         if isinstance(v, np.random.Generator)},
           "n_stale": n_stale}
    if src is not None:
        out["source"] = src
    return out


def _exact_returns(table, mdp, sigma):
    pi = greedy_policy(table)
    nominal = float(mdp.init_dist @ policy_value(pi, mdp))
    worst = float(mdp.init_dist @ robust_policy_evaluation(
        pi, mdp, UncertaintySpec(sigma), tol=1e-8))
    return {"eval_return_nominal": nominal, "eval_return_worstcase": worst}


# -- estimators --------------------------------------------------------------

class _QLearner(BaseEstimator):
    """Shared fitted-state handling; subclasses define ``_fit_config``."""

    _robust = True

    def _config(self):
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in self.get_params().items() if k in names})

    def _fit_common(self, X, n_states, n_actions, source_env=None, eval_mdp=None,
                    q_star=None, eval_every=0):
        cfg = self._config()
        if eval_mdp is not None and abs(eval_mdp.gamma - cfg.gamma) > 0:
            raise InvalidInputError("gamma of the evaluation MDP differs from the config")
        res = train(cfg, X, n_states, n_actions, robust=self._robust,
                    source_env=source_env, features=getattr(self, "features", None),
                    eval_mdp=eval_mdp, q_star=q_star, eval_every=eval_every)
        self.q_model_ = res["q"]
        self.q_table_ = res["q"].table().copy()
        self.g_ = res["g"]
        self.log_ = res["log"]
        self.checksum_ = res["checksum"]
        self.rng_state_ = res["rng_state"]
        self.n_iter_ = cfg.iterations
        self.n_states_, self.n_actions_ = n_states, n_actions
        if "source" in res:
            src = res["source"]
            self.ensemble_ = src.ensemble
            self.buffer_ = src.buffer
            self.epsilon_u_ = src.epsilon_u
            self.buffer_stats_ = {"seen": src.seen, "accepted": src.accepted,
                                  "accept_rate": src.accepted / max(src.seen, 1),
                                  "size": len(src.buffer), "n_stale": res["n_stale"]}
        return self

    def predict(self, states):
        """Greedy action for each state."""
        check_is_fitted(self, "q_table_")
        return greedy_policy(self.q_table_)[np.asarray(states, dtype=int)]

    def policy(self):
        check_is_fitted(self, "q_table_")
        return greedy_policy(self.q_table_)

    def score(self, mdp, sigma=None):
        """Exact expected discounted return of the greedy policy from
        ``init_dist``; robust when ``sigma`` is given."""
        pi = self.policy()
        if sigma is None:
            return float(mdp.init_dist @ policy_value(pi, mdp))
        return float(mdp.init_dist @ robust_policy_evaluation(pi, mdp, UncertaintySpec(sigma)))


class FQI(_QLearner):
    """Non-robust fitted Q-iteration on target data."""

    _robust = False

    def __init__(self, gamma=0.95, lr_q=0.05, batch_size=128, iterations=5000,
                 target_sync_period=100, seed=0, log_every=10, q_steps_per_iter=1,
                 features=None):
        self.gamma = gamma
        self.lr_q = lr_q
        self.batch_size = batch_size
        self.iterations = iterations
        self.target_sync_period = target_sync_period
        self.seed = seed
        self.log_every = log_every
        self.q_steps_per_iter = q_steps_per_iter
        self.features = features

    def fit(self, X, n_states, n_actions, eval_mdp=None, q_star=None, eval_every=0):
        return self._fit_common(X, n_states, n_actions, eval_mdp=eval_mdp,
                                q_star=q_star, eval_every=eval_every)


class RFQI(_QLearner):
    """Robust fitted Q-iteration with a learned per-(s, a) dual table."""

    def __init__(self, sigma=0.1, gamma=0.95, lr_q=0.05, lr_g=0.01, batch_size=128,
                 iterations=5000, target_sync_period=100, seed=0, log_every=10,
                 dual_steps_per_iter=1, q_steps_per_iter=1, features=None):
        self.sigma = sigma
        self.gamma = gamma
        self.lr_q = lr_q
        self.lr_g = lr_g
        self.batch_size = batch_size
        self.iterations = iterations
        self.target_sync_period = target_sync_period
        self.seed = seed
        self.log_every = log_every
        self.dual_steps_per_iter = dual_steps_per_iter
        self.q_steps_per_iter = q_steps_per_iter
        self.features = features

    def fit(self, X, n_states, n_actions, eval_mdp=None, q_star=None, eval_every=0):
        return self._fit_common(X, n_states, n_actions, eval_mdp=eval_mdp,
                                q_star=q_star, eval_every=eval_every)


class HYDRO(_QLearner):
    """Hybrid cross-domain robust learner.

    Combines the offline target dataset with transitions collected online
    from a source simulator. Source transitions pass an ensemble-uncertainty
    filter, are replayed in proportion to a gap-based priority, and enter
    the Q regression only when they rank in the batch's top-k fraction.

    Setting ``uncertainty_filter=False, prioritized=False, topk_fraction=1``
    gives the naive merge of source and target data; ``rollout_len=0``
    gives RFQI.
    """

    def __init__(self, sigma=0.1, gamma=0.95, lr_q=0.05, lr_g=0.01, batch_size=128,
                 iterations=5000, target_sync_period=100, kappa=None,
                 topk_fraction=0.5, rollout_len=5, beta=1.0, ensemble_size=7,
                 seed=0, lambda_prior=1.0, ensemble_prior="dirichlet",
                 explore_eps=0.1, rollout_horizon=100, buffer_capacity=100_000,
                 uncertainty_filter=True, prioritized=True, gap_mode="exact",
                 dual_steps_per_iter=1, q_steps_per_iter=1, log_every=10,
                 features=None):
        self.sigma = sigma
        self.gamma = gamma
        self.lr_q = lr_q
        self.lr_g = lr_g
        self.batch_size = batch_size
        self.iterations = iterations
        self.target_sync_period = target_sync_period
        self.kappa = kappa
        self.topk_fraction = topk_fraction
        self.rollout_len = rollout_len
        self.beta = beta
        self.ensemble_size = ensemble_size
        self.seed = seed
        self.lambda_prior = lambda_prior
        self.ensemble_prior = ensemble_prior
        self.explore_eps = explore_eps
        self.rollout_horizon = rollout_horizon
        self.buffer_capacity = buffer_capacity
        self.uncertainty_filter = uncertainty_filter
        self.prioritized = prioritized
        self.gap_mode = gap_mode
        self.dual_steps_per_iter = dual_steps_per_iter
        self.q_steps_per_iter = q_steps_per_iter
        self.log_every = log_every
        self.features = features

    def fit(self, X, source_env, eval_mdp=None, q_star=None, eval_every=0):
        """Fit on the target dataset ``X`` with online access to ``source_env``.

        The state and action counts are taken from the simulator.
        """
        return self._fit_common(X, source_env.n_states, source_env.n_actions,
                                source_env=source_env, eval_mdp=eval_mdp,
                                q_star=q_star, eval_every=eval_every)


def naive_merge(**params):
    """HYDRO with the filter, prioritised replay and top-k selection disabled."""
    params.update(uncertainty_filter=False, prioritized=False, topk_fraction=1.0)
    return HYDRO(**params)


def rfqi_train(dataset, config, n_states, n_actions, q_star=None):
    """Functional form of RFQI: returns ``(q_table, g, log)``."""
    if isinstance(config, dict):
        config = TrainConfig.from_dict(config)
    res = train(config, dataset, n_states, n_actions, q_star=q_star)
    return res["q"].table().copy(), res["g"], res["log"]


def hydro_train(source_env, dataset_target, config, eval_mdp=None, eval_every=0):
    """Functional form of HYDRO: returns ``(q_table, g, buffer_stats, log)``."""
    if isinstance(config, dict):
        config = TrainConfig.from_dict(config)
    params = {k: v for k, v in config.to_dict().items()}
    model = HYDRO(**params).fit(dataset_target, source_env, eval_mdp=eval_mdp,
                                eval_every=eval_every)
    return model.q_table_, model.g_, getattr(model, "buffer_stats_", {}), model.log_


# -- checkpoints -------------------------------------------------------------

_LEARNERS = {"FQI": FQI, "RFQI": RFQI, "HYDRO": HYDRO}


def save_checkpoint(model, path):
    """Write a fitted learner as JSON: weights, dual table, params, RNG state."""
    check_is_fitted(model, "q_table_")
    params = model.get_params()
    features = params.pop("features", None)
    q = model.q_model_
    doc = {
        "learner": type(model).__name__,
        "params": params,
        "features": None if features is None else np.asarray(features).tolist(),
        "q_weights": (q.weights if isinstance(q, LinearQ) else q.values).tolist(),
        "g": model.g_.tolist(),
        "iteration": model.n_iter_,
        "n_states": model.n_states_,
        "n_actions": model.n_actions_,
        "checksum": model.checksum_,
        "rng_state": model.rng_state_,
    }
    if hasattr(model, "ensemble_"):
        doc["ensemble"] = model.ensemble_.to_dict()
        doc["epsilon_u"] = None if np.isinf(model.epsilon_u_) else model.epsilon_u_
        doc["buffer_stats"] = model.buffer_stats_
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    cls = _LEARNERS[doc["learner"]]
    model = cls(**doc["params"], features=doc["features"])
    S, A = doc["n_states"], doc["n_actions"]
    if doc["features"] is None:
        model.q_model_ = TabularQ(S, A, doc["q_weights"])
    else:
        model.q_model_ = LinearQ(doc["features"], A, doc["q_weights"])
    model.q_table_ = model.q_model_.table().copy()
    model.g_ = np.asarray(doc["g"], dtype=float)
    model.n_iter_ = doc["iteration"]
    model.n_states_, model.n_actions_ = S, A
    model.checksum_ = doc["checksum"]
    model.rng_state_ = doc["rng_state"]
    model.log_ = []
    if "ensemble" in doc:
        model.ensemble_ = TabularDynamicsEnsemble.from_dict(doc["ensemble"])
        eps = doc["epsilon_u"]
        model.epsilon_u_ = np.inf if eps is None else eps
        model.buffer_stats_ = doc["buffer_stats"]
    return model


def make_learner(method, config):
    """Learner for a harness method name with parameters from ``config``."""
    d = config.to_dict() if isinstance(config, TrainConfig) else dict(config)
    if method == "fqi":
        keep = FQI().get_params()
        return FQI(**{k: v for k, v in d.items() if k in keep})
    if method == "rfqi":
        keep = RFQI().get_params()
        return RFQI(**{k: v for k, v in d.items() if k in keep})
    if method == "hydro":
        return HYDRO(**d)
    if method == "naive-merge":
        return naive_merge(**d)
    if method == "hydro-no-priority":
        d.update(prioritized=False)
        return HYDRO(**d)
    if method == "hydro-no-filter":
        d.update(uncertainty_filter=False)
        return HYDRO(**d)
    raise InvalidInputError(f"unknown method {method!r}")


def fit_learner(model, dataset, source_env, n_states, n_actions, **kw):
    if isinstance(model, HYDRO):
        return model.fit(dataset, source_env, **kw)
    return model.fit(dataset, n_states, n_actions, **kw)

