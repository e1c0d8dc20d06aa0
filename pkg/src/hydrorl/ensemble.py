"""Bootstrap ensemble of count-based dynamics models and its uncertainty."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import InvalidInputError


@dataclass(frozen=True)
class UncertaintyThreshold:
    epsilon_u: float
    alpha: float


class TabularDynamicsEnsemble(BaseEstimator):
    """Ensemble of maximum-likelihood next-state models fit on bootstrap
    resamples of an offline dataset.

    Member ``i`` estimates each row as
    ``(counts_i + lambda_prior * prior_i) / (n_i + lambda_prior)``.

    Parameters
    ----------
    n_members : int, default=7
    lambda_prior : float, default=1.0
        Pseudo-count of the prior row. Pairs absent from a member's resample
        get the prior row itself.
    prior : {"uniform", "dirichlet"}, default="uniform"
        ``"uniform"`` gives every member the same uniform prior row.
        ``"dirichlet"`` draws one flat-Dirichlet prior row per member and
        pair, the count-based counterpart of random network initialisation:
        members then disagree wherever data is scarce, including pairs the
        dataset never visits.
    random_state : int, Generator or None
    """

    def __init__(self, n_members=7, lambda_prior=1.0, prior="uniform",
                 random_state=None):
        self.n_members = n_members
        self.lambda_prior = lambda_prior
        self.prior = prior
        self.random_state = random_state

    def fit(self, dataset, n_states, n_actions):
        if len(dataset) == 0:
            raise InvalidInputError("cannot fit an ensemble on an empty dataset")
        if self.n_members < 2:
            raise InvalidInputError("an ensemble needs at least two members")
        if self.lambda_prior < 0:
            raise InvalidInputError("lambda_prior must be non-negative")
        dataset.check_bounds(n_states, n_actions)
        rng = np.random.default_rng(self.random_state)
        E, S, A, n = self.n_members, n_states, n_actions, len(dataset)
        if self.prior == "uniform":
            priors = np.full((E, S, A, S), 1.0 / S)
        elif self.prior == "dirichlet":
            priors = rng.dirichlet(np.ones(S), size=(E, S, A))
        else:
            raise InvalidInputError(f"unknown prior {self.prior!r}")
        counts = np.zeros((E, S, A, S))
        for i in range(E):
            idx = rng.integers(n, size=n)
            np.add.at(counts[i], (dataset.s[idx], dataset.a[idx], dataset.s_next[idx]), 1.0)
        totals = counts.sum(axis=3, keepdims=True)
        lam = float(self.lambda_prior)
        with np.errstate(invalid="ignore", divide="ignore"):
            rows = (counts + lam * priors) / (totals + lam)
        unseen = np.broadcast_to(totals == 0, rows.shape)
        rows = np.where(unseen, priors, rows)
        self.rows_ = rows / rows.sum(axis=3, keepdims=True)
        self.visit_counts_ = totals[..., 0]
        self.n_states_, self.n_actions_ = S, A
        return self

    def uncertainty(self, s, a):
        """Largest Euclidean distance between two members' next-state rows.

        Accepts scalar or array ``s`` and ``a``.
        """
        check_is_fitted(self, "rows_")
        R = self.rows_[:, s, a]  # (E, ..., S)
        diff = R[:, None] - R[None, :]
        return np.sqrt((diff ** 2).sum(axis=-1)).max(axis=(0, 1))

    def uncertainty_table(self):
        S, A = self.n_states_, self.n_actions_
        ss, aa = np.meshgrid(np.arange(S), np.arange(A), indexing="ij")
        return self.uncertainty(ss, aa)

    def mean_next_distribution(self, s, a):
        check_is_fitted(self, "rows_")
        return self.rows_[:, s, a].mean(axis=0)

    def mean_kernel(self):
        """Arithmetic mean of the member kernels, shape ``(S, A, S)``."""
        check_is_fitted(self, "rows_")
        k = self.rows_.mean(axis=0)
        return k / k.sum(axis=2, keepdims=True)

    def compute_threshold(self, dataset, beta, h):
        """Dataset-max uncertainty divided by ``alpha = beta * h``."""
        if beta <= 0 or h < 1:
            raise InvalidInputError("need beta > 0 and h >= 1")
        pairs = np.unique(np.stack([dataset.s, dataset.a], axis=1), axis=0)
        u_max = float(np.max(self.uncertainty(pairs[:, 0], pairs[:, 1])))
        alpha = float(beta) * float(h)
        return UncertaintyThreshold(u_max / alpha, alpha)

    def to_dict(self):
        check_is_fitted(self, "rows_")
        params = self.get_params()
        if not isinstance(params["random_state"], (int, type(None))):
            # generator streams are not serialisable; the fitted rows are kept
            params["random_state"] = None
        return {"params": params, "rows": self.rows_.tolist(),
                "visit_counts": self.visit_counts_.tolist()}

    @classmethod
    def from_dict(cls, d):
        model = cls(**d["params"])
        model.rows_ = np.asarray(d["rows"], dtype=float)
        model.visit_counts_ = np.asarray(d["visit_counts"], dtype=float)
        _, model.n_states_, model.n_actions_, _ = model.rows_.shape
        return model


def fit_ensemble(dataset, n_members, lambda_prior, seed, n_states, n_actions,
                 prior="uniform"):
    return TabularDynamicsEnsemble(n_members, lambda_prior, prior, seed).fit(
        dataset, n_states, n_actions)


def uncertainty(model, s, a):
    return float(model.uncertainty(s, a))


def compute_threshold(model, dataset, beta, h):
    return model.compute_threshold(dataset, beta, h)


def mean_next_distribution(model, s, a):
    return model.mean_next_distribution(s, a)
