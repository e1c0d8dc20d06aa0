import json

import numpy as np
import pytest
from scipy import stats

from hydrorl import InvalidInputError
from hydrorl.envs import (
    DOWN,
    RIGHT,
    UP,
    GridSpec,
    PerturbationSpec,
    Simulator,
    cliff_walk,
    compile,
    generate_offline_dataset,
    make_pair,
    perturbation_sweep_envs,
)
from hydrorl.rmdp import UncertaintySpec, greedy_policy, robust_value_iteration


def corridor(slip=0.0):
    return GridSpec(2, 1, cliff=[], goal=(1, 0), start=[(0, 0, 1.0)], slip_prob=slip,
                    gamma=0.9)


class TestGridSpec:
    def test_invalid(self):
        with pytest.raises(InvalidInputError):
            GridSpec(3, 1, cliff=[(1, 0)], goal=(1, 0), start=[(0, 0, 1.0)])
        with pytest.raises(InvalidInputError):
            GridSpec(3, 1, cliff=[(1, 0)], goal=(2, 0), start=[(1, 0, 1.0)])
        with pytest.raises(InvalidInputError):
            GridSpec(3, 1, cliff=[], goal=(2, 0), start=[(0, 0, 0.5)])
        with pytest.raises(InvalidInputError):
            cliff_walk(slip_prob=1.0)
        with pytest.raises(InvalidInputError):
            cliff_walk(wind_push=-0.1)

    def test_json_roundtrip(self):
        spec = cliff_walk(slip_prob=0.2, wind_push=0.1)
        assert GridSpec.from_json(spec.to_json()) == spec
        d = json.loads(spec.to_json())
        d["colour"] = 1
        with pytest.raises(InvalidInputError):
            GridSpec.from_dict(d)


class TestCompile:
    def test_deterministic_rows(self):
        mdp = compile(cliff_walk(slip_prob=0.0))
        assert np.all(mdp.kernel.max(axis=2) == 1.0)

    def test_rows_sum_to_one(self):
        mdp = compile(cliff_walk(slip_prob=0.3, wind_push=[0.1, 0.0, 0.2, 0.4, 0.0]))
        np.testing.assert_allclose(mdp.kernel.sum(axis=2), 1.0, rtol=0, atol=1e-15)

    def test_fail_row(self):
        spec = cliff_walk(slip_prob=0.2)
        mdp = compile(spec)
        f = spec.fail_state
        assert mdp.fail_state == f
        np.testing.assert_array_equal(mdp.kernel[f, :, f], 1.0)
        np.testing.assert_array_equal(mdp.reward[f], 0.0)

    def test_corridor_value(self):
        # goal reached after one step, then reward 1 forever: sum_{t>=1} 0.9^t = 9
        res = robust_value_iteration(compile(corridor()), UncertaintySpec(0.0), tol=1e-12)
        assert res.q[0].max() == pytest.approx(9.0, abs=1e-9)

    def test_slip_and_cliff_arithmetic(self):
        spec = cliff_walk(slip_prob=0.2)
        mdp = compile(spec)
        s = spec.index(0, 3)
        # moving right: 0.8 right, 0.1 up, 0.1 down (into the start corner)
        row = mdp.kernel[s, RIGHT]
        assert row[spec.index(1, 3)] == pytest.approx(0.8)
        assert row[spec.index(0, 2)] == pytest.approx(0.1)
        assert row[spec.index(0, 4)] == pytest.approx(0.1)
        # from (1, 3) moving down enters the cliff
        assert mdp.kernel[spec.index(1, 3), DOWN, spec.fail_state] == pytest.approx(0.8)

    def test_wind_composes_after_slip(self):
        spec = cliff_walk(slip_prob=0.0, wind_push=0.25)
        mdp = compile(spec)
        row = mdp.kernel[spec.index(1, 2), UP]
        assert row[spec.index(1, 1)] == pytest.approx(0.75)
        assert row[spec.index(1, 2)] == pytest.approx(0.25)


class TestSimulator:
    @pytest.mark.parametrize("cell,action", [((1, 3), RIGHT), ((0, 4), UP), ((3, 3), DOWN)])
    def test_matches_compiled_kernel(self, cell, action):
        spec = cliff_walk(slip_prob=0.3, wind_push=0.15)
        mdp = compile(spec)
        s = spec.index(*cell)
        sim = Simulator(spec, seed=11)
        n = 100_000
        counts = np.zeros(spec.n_states)
        for _ in range(n):
            sim.state = s
            counts[sim.step(action)[0]] += 1
        p = mdp.kernel[s, action]
        support = p > 0
        assert counts[~support].sum() == 0
        if support.sum() > 1:
            assert stats.chisquare(counts[support], n * p[support]).pvalue > 0.001

    def test_absorbing(self):
        spec = cliff_walk()
        sim = Simulator(spec, seed=0)
        sim.reset()
        sim.state = spec.fail_state
        assert sim.step(RIGHT) == (spec.fail_state, 0.0)
        sim.state = spec.index(*spec.goal)
        assert sim.step(UP) == (spec.index(*spec.goal), 1.0)

    def test_step_before_reset(self):
        with pytest.raises(RuntimeError):
            Simulator(cliff_walk()).step(0)


class TestMakePair:
    def test_examples(self):
        base = cliff_walk(slip_prob=0.1)
        tgt, src = make_pair(base, {"slip_prob": 0.2})
        assert tgt == base and src.slip_prob == pytest.approx(0.3)
        assert make_pair(base, {})[1] == base
        _, multi = make_pair(base, {"slip_prob": 0.2, "wind_push": 0.15})
        assert multi.slip_prob == pytest.approx(0.3)
        assert multi.wind_push == (0.15,) * 5

    def test_only_kernel_differs(self):
        tgt, src = make_pair(cliff_walk(), {"slip_prob": 0.2, "wind_push": 0.15})
        a, b = compile(tgt), compile(src)
        np.testing.assert_array_equal(a.reward, b.reward)
        np.testing.assert_array_equal(a.init_dist, b.init_dist)
        assert a.gamma == b.gamma
        assert not np.array_equal(a.kernel, b.kernel)

    def test_invalid_shift(self):
        with pytest.raises(InvalidInputError):
            make_pair(cliff_walk(), {"slip_prob": 0.95})
        with pytest.raises(InvalidInputError):
            make_pair(cliff_walk(), {"gravity": 1.0})


class TestSweep:
    def test_examples(self):
        base = cliff_walk()
        mdps = perturbation_sweep_envs(base, PerturbationSpec("slip_prob", [0.0, 0.1, 0.2]))
        assert len(mdps) == 3
        np.testing.assert_array_equal(mdps[1].kernel, compile(base).kernel)
        with pytest.raises(InvalidInputError):
            PerturbationSpec("slip_prob", [])

    def test_wind_sweep_valid(self):
        for mdp in perturbation_sweep_envs(cliff_walk(),
                                           PerturbationSpec("wind_push", [0.0, 0.5])):
            np.testing.assert_allclose(mdp.kernel.sum(axis=2), 1.0, atol=1e-12)


class TestDataset:
    def setup_method(self):
        self.mdp = compile(cliff_walk())
        self.pi = greedy_policy(robust_value_iteration(self.mdp, UncertaintySpec(0)).q)

    def test_deterministic(self):
        a = generate_offline_dataset(self.mdp, self.pi, 0.3, 500, 4)
        b = generate_offline_dataset(self.mdp, self.pi, 0.3, 500, 4)
        assert a.to_csv() == b.to_csv()
        assert len(a) == 500 and np.all(a.domain == "target")

    def test_zero_size(self):
        with pytest.raises(InvalidInputError):
            generate_offline_dataset(self.mdp, self.pi, 0.3, 0, 0)

    def test_epsilon_one_is_uniform(self):
        d = generate_offline_dataset(self.mdp, self.pi, 1.0, 20_000, 1)
        counts = np.bincount(d.a, minlength=4)
        assert stats.chisquare(counts).pvalue > 0.001

    def test_transitions_follow_kernel(self):
        d = generate_offline_dataset(self.mdp, self.pi, 0.3, 2000, 2)
        assert np.all(self.mdp.kernel[d.s, d.a, d.s_next] > 0)
        np.testing.assert_array_equal(d.r, self.mdp.reward[d.s, d.a])


class TestBenchmark:
    def test_robust_and_nominal_policies_differ(self):
        mdp = compile(cliff_walk())
        nominal = greedy_policy(robust_value_iteration(mdp, UncertaintySpec(0.0)).q)
        robust = greedy_policy(robust_value_iteration(mdp, UncertaintySpec(0.1)).q)
        assert not np.array_equal(nominal, robust)
