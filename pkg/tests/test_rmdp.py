import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from hydrorl import FailStateAssumptionError, InvalidInputError, NonConvergenceWarning
from hydrorl.rmdp import (
    TabularMDP,
    UncertaintySpec,
    dual_form_worst_case,
    fail_state_dual_worst_case,
    occupancy_measure,
    policy_value,
    random_tabular_mdp,
    robust_bellman_apply,
    robust_policy_evaluation,
    robust_value_iteration,
    tv_distance,
    two_state_chain,
    worst_case_expectation_oracle,
    worst_case_kernel,
    worst_case_values,
)


def lp_worst_case(p, v, sigma):
    """Independent reference: min q.v over the TV ball as a linear program.

    Variables are q and t >= |q - p|; constraints sum(q) = 1 and
    sum(t) <= 2 sigma.
    """
    n = len(p)
    c = np.concatenate([v, np.zeros(n)])
    eye = np.eye(n)
    a_ub = np.block([[eye, -eye], [-eye, -eye], [np.zeros((1, n)), np.ones((1, n))]])
    b_ub = np.concatenate([p, -p, [2 * sigma]])
    a_eq = np.concatenate([np.ones(n), np.zeros(n)])[None, :]
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0],
                  bounds=[(0, None)] * (2 * n), method="highs")
    assert res.status == 0
    return res.fun


def random_case(rng, n=None, zero_min=False):
    n = n or int(rng.integers(2, 13))
    p = rng.dirichlet(np.ones(n) * rng.choice([0.2, 1.0, 5.0]))
    v = rng.uniform(0, 20, size=n)
    if zero_min:
        v[rng.integers(n)] = 0.0
    return p, v, float(rng.uniform(0, 1)), float(rng.uniform(0.5, 0.99))


class TestOracle:
    def test_half_ball_example(self):
        res = worst_case_expectation_oracle([0, 1], [0, 1], 0.5)
        assert res.value == pytest.approx(0.5, abs=1e-15)
        np.testing.assert_allclose(res.worst_dist, [0.5, 0.5])

    def test_zero_radius(self):
        p, v = np.array([0.2, 0.3, 0.5]), np.array([3.0, 1.0, 2.0])
        res = worst_case_expectation_oracle(p, v, 0.0)
        assert res.value == pytest.approx(p @ v, abs=1e-15)
        np.testing.assert_array_equal(res.worst_dist, p)

    def test_full_ball(self):
        res = worst_case_expectation_oracle([0.3, 0.7], [0, 1], 1.0)
        assert res.value == 0.0

    def test_errors(self):
        with pytest.raises(InvalidInputError):
            worst_case_expectation_oracle([0.5, 0.6], [0, 1], 0.1)
        with pytest.raises(InvalidInputError):
            worst_case_expectation_oracle([0.5, 0.5], [0, 1], 1.5)
        with pytest.raises(InvalidInputError):
            worst_case_expectation_oracle([0.5, 0.5], [0, np.nan], 0.1)
        with pytest.raises(InvalidInputError):
            worst_case_expectation_oracle([0.5, 0.5], [0, 1, 2], 0.1)

    def test_matches_linear_program(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            p, v, sigma, _ = random_case(rng)
            res = worst_case_expectation_oracle(p, v, sigma)
            assert res.value == pytest.approx(lp_worst_case(p, v, sigma), abs=1e-7)
            assert tv_distance(res.worst_dist, p) <= sigma + 1e-12
            assert res.worst_dist @ v == pytest.approx(res.value, abs=1e-10)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_bounds(self, seed):
        p, v, sigma, _ = random_case(np.random.default_rng(seed))
        value = worst_case_expectation_oracle(p, v, sigma).value
        assert v.min() - 1e-12 <= value <= p @ v + 1e-12


class TestDualForms:
    def test_examples(self):
        assert dual_form_worst_case([0, 1], [0, 1], 0.5, 0.9) == pytest.approx(0.5, abs=1e-15)
        assert dual_form_worst_case([0.3, 0.7], [0, 1], 1.0, 0.9) == pytest.approx(0, abs=1e-15)
        assert fail_state_dual_worst_case([0, 1], [0, 1], 0.5, 0.9) == pytest.approx(0.5)
        p, v = np.array([0.4, 0.6]), np.array([2.0, 5.0])
        assert dual_form_worst_case(p, v, 0.0, 0.9) == p @ v

    def test_fail_state_full_radius(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            p, v, _, gamma = random_case(rng, zero_min=True)
            assert fail_state_dual_worst_case(p, v, 1.0, gamma) == pytest.approx(0, abs=1e-12)

    def test_fail_state_requires_zero_min(self):
        with pytest.raises(FailStateAssumptionError):
            fail_state_dual_worst_case([0.5, 0.5], [1.0, 2.0], 0.2, 0.9)

    @settings(max_examples=300, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_dual_equals_oracle(self, seed):
        p, v, sigma, gamma = random_case(np.random.default_rng(seed))
        # values inside the dual interval, as the Bellman operator guarantees
        v = np.minimum(v, 1.0 / (1.0 - gamma))
        assert dual_form_worst_case(p, v, sigma, gamma) == pytest.approx(
            worst_case_expectation_oracle(p, v, sigma).value, abs=1e-9)

    @settings(max_examples=300, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_fail_state_identity(self, seed):
        p, v, sigma, gamma = random_case(np.random.default_rng(seed), zero_min=True)
        v = np.minimum(v, 1.0 / (1.0 - gamma))
        assert fail_state_dual_worst_case(p, v, sigma, gamma) == pytest.approx(
            dual_form_worst_case(p, v, sigma, gamma), abs=1e-12)

    def test_vectorised_rows(self):
        rng = np.random.default_rng(2)
        P = rng.dirichlet(np.ones(6), size=10)
        v = rng.uniform(0, 5, 6)
        a = worst_case_values(P, v, 0.3, 0.9, "dual")
        b = worst_case_values(P, v, 0.3, 0.9, "oracle")
        np.testing.assert_allclose(a, b, atol=1e-12)


class TestBellman:
    def test_zero_radius_is_standard_backup(self):
        mdp = random_tabular_mdp(5, 3, 0.9, 0)
        q = np.random.default_rng(0).uniform(0, 3, (5, 3))
        expected = mdp.reward + mdp.gamma * mdp.kernel @ q.max(axis=1)
        np.testing.assert_allclose(robust_bellman_apply(q, mdp, UncertaintySpec(0)),
                                   expected, atol=1e-14)

    def test_chain_one_step_and_fixed_point(self):
        mdp = two_state_chain(0.9)
        q1 = robust_bellman_apply(np.zeros((2, 1)), mdp, UncertaintySpec(0.2))
        np.testing.assert_allclose(q1[:, 0], [1.0, 0.0])
        v = 1 / 0.28
        q_fix = robust_bellman_apply(np.array([[v], [0.0]]), mdp, UncertaintySpec(0.2))
        assert q_fix[0, 0] == pytest.approx(v, abs=1e-12)

    def test_chain_value_iteration(self):
        res = robust_value_iteration(two_state_chain(0.9), UncertaintySpec(0.2), tol=1e-10)
        assert res.converged
        assert res.q[0, 0] == pytest.approx(1 / 0.28, abs=1e-8)
        full = robust_value_iteration(two_state_chain(0.9), UncertaintySpec(1.0))
        assert full.q[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_zero_radius_matches_plain_value_iteration(self):
        mdp = random_tabular_mdp(6, 2, 0.9, 3)
        q = np.zeros((6, 2))
        for _ in range(400):
            q = mdp.reward + mdp.gamma * mdp.kernel @ q.max(axis=1)
        res = robust_value_iteration(mdp, UncertaintySpec(0.0), tol=1e-12)
        np.testing.assert_allclose(res.q, q, atol=1e-9)

    def test_contraction(self):
        rng = np.random.default_rng(4)
        mdp = random_tabular_mdp(7, 3, 0.9, rng)
        spec = UncertaintySpec(0.3)
        for _ in range(20):
            q1, q2 = rng.uniform(0, 10, (2, 7, 3))
            d_in = np.max(np.abs(q1 - q2))
            d_out = np.max(np.abs(robust_bellman_apply(q1, mdp, spec)
                                  - robust_bellman_apply(q2, mdp, spec)))
            assert d_out <= mdp.gamma * d_in + 1e-12

    def test_sigma_monotone(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            mdp = random_tabular_mdp(8, 2, 0.9, rng)
            vs = [robust_value_iteration(mdp, UncertaintySpec(s)).q.max(axis=1)
                  for s in (0.0, 0.1, 0.3, 0.6)]
            for lo, hi in zip(vs[1:], vs[:-1]):
                assert np.all(lo <= hi + 1e-9)

    def test_oracle_method_agrees(self):
        mdp = random_tabular_mdp(6, 2, 0.9, 6)
        a = robust_value_iteration(mdp, UncertaintySpec(0.25), method="dual").q
        b = robust_value_iteration(mdp, UncertaintySpec(0.25), method="oracle").q
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_nonconvergence_warns(self):
        with pytest.warns(NonConvergenceWarning):
            res = robust_value_iteration(two_state_chain(), UncertaintySpec(0.2), max_iters=3)
        assert not res.converged


class TestPolicyEvaluation:
    def test_chain(self):
        mdp = two_state_chain(0.9)
        v = robust_policy_evaluation([0, 0], mdp, UncertaintySpec(0.2), tol=1e-12)
        assert v[0] == pytest.approx(1 / 0.28, abs=1e-9)

    def test_zero_radius_is_linear_solve(self):
        mdp = random_tabular_mdp(5, 3, 0.9, 7)
        pi = np.array([0, 2, 1, 1, 0])
        np.testing.assert_allclose(
            robust_policy_evaluation(pi, mdp, UncertaintySpec(0), tol=1e-13),
            policy_value(pi, mdp), atol=1e-10)

    def test_robust_below_nominal(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            mdp = random_tabular_mdp(4, 2, 0.9, rng)
            pi = rng.integers(2, size=4)
            rob = robust_policy_evaluation(pi, mdp, UncertaintySpec(rng.uniform(0, 1)))
            assert np.all(rob <= policy_value(pi, mdp) + 1e-9)

    def test_invalid_policy(self):
        with pytest.raises(InvalidInputError):
            policy_value([0, 5], two_state_chain())


class TestWorstCaseKernelAndOccupancy:
    def test_chain_kernel(self):
        mdp = two_state_chain(0.9)
        W = worst_case_kernel([0, 0], mdp, UncertaintySpec(0.2))
        np.testing.assert_allclose(W[0], [0.8, 0.2], atol=1e-12)
        np.testing.assert_array_equal(worst_case_kernel([0, 0], mdp, UncertaintySpec(0)),
                                      mdp.kernel[:, 0])

    def test_rows_inside_ball(self):
        mdp = random_tabular_mdp(6, 2, 0.9, 9)
        pi = np.array([0, 1, 1, 0, 1, 0])
        W = worst_case_kernel(pi, mdp, UncertaintySpec(0.3))
        assert np.all(tv_distance(W, mdp.kernel[np.arange(6), pi]) <= 0.3 + 1e-12)
        np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-12)

    def test_worst_case_kernel_reproduces_robust_value(self):
        mdp = random_tabular_mdp(6, 2, 0.9, 10)
        pi = np.array([1, 1, 0, 0, 1, 0])
        spec = UncertaintySpec(0.2)
        v = robust_policy_evaluation(pi, mdp, spec, tol=1e-13)
        W = worst_case_kernel(pi, mdp, spec, v=v)
        np.testing.assert_allclose(policy_value(pi, mdp, kernel=W), v, atol=1e-8)

    def test_occupancy_examples(self):
        single = TabularMDP([[[1.0]]], [[0.5]], 0.9, [1.0])
        np.testing.assert_allclose(occupancy_measure([0], single.kernel, [1.0], 0.9), [[1.0]])
        mdp = two_state_chain(0.9)
        d = occupancy_measure([0, 0], mdp.kernel, mdp.init_dist, 0.9)
        np.testing.assert_allclose(d[:, 0], [1.0, 0.0], atol=1e-12)
        W = worst_case_kernel([0, 0], mdp, UncertaintySpec(0.2))
        d = occupancy_measure([0, 0], W, mdp.init_dist, 0.9, n_actions=1)
        np.testing.assert_allclose(d[:, 0], [0.1 / 0.28, 1 - 0.1 / 0.28], atol=1e-12)

    def test_occupancy_sums_to_one_and_gives_value(self):
        mdp = random_tabular_mdp(7, 3, 0.95, 11)
        pi = np.random.default_rng(0).integers(3, size=7)
        d = occupancy_measure(pi, mdp.kernel, mdp.init_dist, mdp.gamma)
        assert d.sum() == pytest.approx(1.0, abs=1e-12)
        value = mdp.init_dist @ policy_value(pi, mdp)
        assert (d * mdp.reward).sum() / (1 - mdp.gamma) == pytest.approx(value, rel=1e-10)


class TestTabularMDP:
    def test_json_roundtrip_exact(self):
        mdp = random_tabular_mdp(5, 2, 0.9, 12)
        back = TabularMDP.from_json(mdp.to_json())
        np.testing.assert_array_equal(back.kernel, mdp.kernel)
        np.testing.assert_array_equal(back.reward, mdp.reward)
        assert back.fail_state == mdp.fail_state

    def test_validation(self):
        with pytest.raises(InvalidInputError):
            TabularMDP([[[0.5, 0.4]], [[0.0, 1.0]]], [[0.0], [0.0]], 0.9, [1, 0])
        with pytest.raises(InvalidInputError):
            TabularMDP([[[1.0, 0.0]], [[0.0, 1.0]]], [[2.0], [0.0]], 0.9, [1, 0])
        with pytest.raises(InvalidInputError):
            TabularMDP([[[1.0, 0.0]], [[1.0, 0.0]]], [[0.0], [0.0]], 0.9, [1, 0],
                       fail_state=1)
        with pytest.raises(InvalidInputError):
            TabularMDP([[[1.0]]], [[0.0]], 1.0, [1.0])
