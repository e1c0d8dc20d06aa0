import numpy as np
import pytest

from hydrorl import Dataset, InvalidInputError, TabularDynamicsEnsemble
from hydrorl.ensemble import compute_threshold, fit_ensemble, mean_next_distribution


def deterministic_data():
    s = np.array([0, 1, 2, 0, 1, 2])
    return Dataset(s, np.zeros(6, int), np.zeros(6), (s + 1) % 3)


def coin_data(n=1000, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(np.zeros(n, int), np.zeros(n, int), np.zeros(n), rng.integers(2, size=n))


def with_rows(rows):
    model = TabularDynamicsEnsemble(len(rows))
    model.rows_ = np.asarray(rows, dtype=float).reshape(len(rows), 1, 1, -1)
    model.visit_counts_ = np.ones((len(rows), 1, 1))
    model.n_states_, model.n_actions_ = 1, 1
    return model


class TestFit:
    def test_deterministic_without_prior(self):
        model = TabularDynamicsEnsemble(5, lambda_prior=0.0, random_state=0)
        model.fit(deterministic_data(), 3, 1)
        rows = model.rows_[:, :, 0]
        # every member saw each state at least once with overwhelming probability
        for s in range(3):
            seen = model.visit_counts_[:, s, 0] > 0
            np.testing.assert_array_equal(rows[seen, s], np.eye(3)[(s + 1) % 3][None].repeat(
                seen.sum(), 0))

    def test_huge_prior_gives_uniform(self):
        model = TabularDynamicsEnsemble(3, lambda_prior=1e12, random_state=0)
        model.fit(deterministic_data(), 3, 1)
        np.testing.assert_allclose(model.rows_, 1 / 3, atol=1e-9)

    def test_rows_are_distributions(self):
        for prior in ("uniform", "dirichlet"):
            model = TabularDynamicsEnsemble(4, prior=prior, random_state=1)
            model.fit(deterministic_data(), 4, 2)
            np.testing.assert_allclose(model.rows_.sum(axis=3), 1.0, atol=1e-12)
            assert np.all(model.rows_ >= 0)

    def test_fair_coin_concentration(self):
        hits = 0
        trials = 200
        for seed in range(trials):
            model = TabularDynamicsEnsemble(7, random_state=seed).fit(coin_data(seed=seed), 2, 1)
            hits += np.all(np.abs(model.rows_[:, 0, 0, 0] - 0.5) <= 0.1)
        assert hits / trials >= 0.99

    def test_seeded_reproducible(self):
        a = fit_ensemble(coin_data(), 7, 1.0, 3, 2, 1)
        b = fit_ensemble(coin_data(), 7, 1.0, 3, 2, 1)
        np.testing.assert_array_equal(a.rows_, b.rows_)

    def test_errors(self):
        with pytest.raises(InvalidInputError):
            TabularDynamicsEnsemble(1).fit(coin_data(), 2, 1)
        with pytest.raises(InvalidInputError):
            TabularDynamicsEnsemble(3).fit(Dataset.empty(), 2, 1)
        with pytest.raises(InvalidInputError):
            TabularDynamicsEnsemble(3).fit(coin_data(), 1, 1)

    def test_dirichlet_prior_separates_unseen_pairs(self):
        uniform = TabularDynamicsEnsemble(5, random_state=0).fit(coin_data(), 3, 2)
        dirichlet = TabularDynamicsEnsemble(5, prior="dirichlet", random_state=0).fit(
            coin_data(), 3, 2)
        assert uniform.uncertainty(2, 1) == 0.0
        assert dirichlet.uncertainty(2, 1) > 0.1


class TestUncertainty:
    def test_examples(self):
        assert with_rows([[0.3, 0.7]] * 3).uncertainty(0, 0) == 0.0
        assert with_rows([[1, 0], [0, 1]]).uncertainty(0, 0) == pytest.approx(np.sqrt(2))

    def test_permutation_invariant(self):
        rng = np.random.default_rng(0)
        rows = rng.dirichlet(np.ones(4), size=5)
        a = with_rows(rows).uncertainty(0, 0)
        b = with_rows(rows[rng.permutation(5)]).uncertainty(0, 0)
        assert a == b

    def test_vectorised_matches_scalar(self):
        model = TabularDynamicsEnsemble(4, prior="dirichlet", random_state=2).fit(
            deterministic_data(), 3, 2)
        table = model.uncertainty_table()
        for s in range(3):
            for a in range(2):
                assert table[s, a] == model.uncertainty(s, a)


class TestThreshold:
    def test_examples(self):
        model = with_rows([[0.0, 1.0], [0.6 / np.sqrt(2), 1 - 0.6 / np.sqrt(2)]])
        data = Dataset([0], [0], [0.0], [0])
        assert model.uncertainty(0, 0) == pytest.approx(0.6)
        assert compute_threshold(model, data, 2.0, 5).epsilon_u == pytest.approx(0.06)
        assert model.compute_threshold(data, 1.0, 1).epsilon_u == pytest.approx(0.6)
        same = with_rows([[0.5, 0.5]] * 2)
        assert same.compute_threshold(data, 1.0, 5).epsilon_u == 0.0

    def test_invalid(self):
        with pytest.raises(InvalidInputError):
            with_rows([[1.0]] * 2).compute_threshold(Dataset([0], [0], [0.0], [0]), 0.0, 1)


class TestMeanModel:
    def test_examples(self):
        np.testing.assert_allclose(with_rows([[0.2, 0.8]] * 3).mean_next_distribution(0, 0),
                                   [0.2, 0.8])
        np.testing.assert_allclose(mean_next_distribution(with_rows([[1, 0], [0, 1]]), 0, 0),
                                   [0.5, 0.5])

    def test_sampling_reproducible(self):
        p = with_rows([[1, 0], [0, 1]]).mean_next_distribution(0, 0)
        a = np.random.default_rng(5).choice(2, size=20, p=p)
        b = np.random.default_rng(5).choice(2, size=20, p=p)
        np.testing.assert_array_equal(a, b)

    def test_serialisation(self):
        model = TabularDynamicsEnsemble(3, random_state=np.random.default_rng(0)).fit(
            coin_data(), 2, 1)
        back = TabularDynamicsEnsemble.from_dict(model.to_dict())
        np.testing.assert_array_equal(back.rows_, model.rows_)
