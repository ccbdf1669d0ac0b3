"""Two-user alternation: subproblem construction, monotone ascent,
decoupled-region behavior and initialization independence."""

import numpy as np
import pytest

from ehic.iterative import (IterativeOptions, build_subproblem,
                            initial_policy, iterate_offline, joint_objective)
from ehic.model import HarvestProfile, TimeGrid
from ehic.rates import build_rate_model, interference_as_noise_kernel
from ehic.single_user import ScaledLogUtilities, solve_single_user

from helpers import lattice_arrivals, two_user_scenario


class TestBuildSubproblem:
    def test_zero_interference_gives_unit_gain(self):
        scen = two_user_scenario(np.ones(3), np.zeros(3), 10.0, 0.9, 2.0)
        rm = build_rate_model(0.9, 2.0, 10.0, 10.0)
        utils = build_subproblem(scen, rm, 0, np.zeros(3))
        assert np.allclose(utils.deriv(np.zeros(3)), 0.5)
        assert np.allclose(utils.value(np.zeros(3)), 0.0)
        assert utils.value(np.array([1.0, 1.0, 1.0]))[0] == \
            pytest.approx(0.5 * np.log(2.0))

    def test_interference_raises_base_level(self):
        scen = two_user_scenario(np.ones(2), np.ones(2), 10.0, 0.9, 2.0)
        rm = build_rate_model(0.9, 2.0, 10.0, 10.0)
        utils = build_subproblem(scen, rm, 0, np.array([2.0, 0.0]))
        # base 1/h = 1 + 0.9*2 = 2.8, so the zero-power marginal is h/2
        assert utils.deriv(np.zeros(2))[0] == pytest.approx(0.5 / 2.8)

    def test_min_form_decode_branch_base_level(self):
        scen = two_user_scenario(np.ones(1), np.ones(1), 10.0, 0.5, 1.5)
        rm = build_rate_model(0.5, 1.5, 10.0, 10.0)
        utils = build_subproblem(scen, rm, 0, np.array([4.0]))
        assert utils.deriv(np.zeros(1))[0] == pytest.approx(0.5 / (10.0 / 3.0))

    def test_objectives_comparable_across_users(self):
        # constants are retained, so each user's slot utilities sum to the
        # joint per-slot rate
        scen = two_user_scenario([1.0, 2.0], [2.0, 0.5], 10.0, 0.9, 2.0)
        rm = build_rate_model(0.9, 2.0, 10.0, 10.0)
        policy = np.array([[0.7, 1.1], [1.3, 0.2]])
        joint = rm.sum_rate(policy[0], policy[1])
        for user in range(2):
            utils = build_subproblem(scen, rm, user, policy[1 - user])
            assert np.allclose(utils.value(policy[user]), joint, atol=1e-12)

    def test_mirrored_dispatch(self):
        scen = two_user_scenario([1.0], [1.0], 10.0, 2.0, 0.9)
        rm = build_rate_model(2.0, 0.9, 10.0, 10.0)
        assert rm.mirrored
        policy = np.array([[0.8], [0.3]])
        joint = rm.sum_rate(policy[0], policy[1])
        for user in range(2):
            utils = build_subproblem(scen, rm, user, policy[1 - user])
            assert np.allclose(utils.value(policy[user]), joint, atol=1e-12)


class TestIterateOffline:
    def test_decoupled_kernel_converges_in_one_sweep(self):
        kernel = interference_as_noise_kernel(0.0, 0.0)
        rm = build_rate_model(0.0, 0.0, 2.0, 2.0, kernel=kernel)
        scen = two_user_scenario([2.0, 0.0], [0.0, 2.0], 2.0, 0.0, 0.0)
        policy, report = iterate_offline(scen, rm)
        # each user's block equals the independent single-user solution
        for j in range(2):
            row, _ = solve_single_user(ScaledLogUtilities(np.ones(2)),
                                       scen.users[j].harvest, scen.grid)
            assert np.allclose(policy[j], row, atol=1e-7)
        # nothing moves after the first sweep
        assert report.displacement_trace[1] <= 1e-9
        assert report.converged

    def test_very_strong_second_sweep_is_inert(self):
        rm = build_rate_model(50.0, 50.0, 2.0, 2.0)
        rng = np.random.default_rng(10)
        scen = two_user_scenario(lattice_arrivals(rng, 4, 2.0),
                                 lattice_arrivals(rng, 4, 2.0), 2.0,
                                 50.0, 50.0)
        _, report = iterate_offline(scen, rm)
        assert report.displacement_trace[1] <= 1e-9

    def test_monotone_trace(self):
        rng = np.random.default_rng(11)
        for _ in range(8):
            n = int(rng.integers(2, 6))
            scen = two_user_scenario(rng.uniform(0, 2, n),
                                     rng.uniform(0, 2, n), 2.0, 0.9, 2.0)
            rm = build_rate_model(0.9, 2.0, 2.0, 2.0)
            _, report = iterate_offline(scen, rm)
            trace = np.asarray(report.objective_trace)
            assert np.all(np.diff(trace) >= -1e-12)
            assert report.converged

    def test_initialization_independence(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            n = int(rng.integers(2, 11))
            scen = two_user_scenario(rng.uniform(0, 2, n),
                                     rng.uniform(0, 2, n), 2.0, 0.9, 2.0)
            rm = build_rate_model(0.9, 2.0, 2.0, 2.0)
            p0, _ = iterate_offline(scen, rm,
                                    IterativeOptions(initial_policy_mode="zeros"))
            p1, _ = iterate_offline(scen, rm,
                                    IterativeOptions(
                                        initial_policy_mode="spend-evenly"))
            o0 = joint_objective(p0, scen, rm)
            o1 = joint_objective(p1, scen, rm)
            assert abs(o0 - o1) <= 1e-6 * max(1.0, abs(o0))

    def test_supplied_initial_policy_is_floored(self):
        scen = two_user_scenario([2.0, 2.0], [0.0, 0.0], 2.0, 0.9, 2.0)
        opts = IterativeOptions(initial_policy_mode="supplied",
                                initial_policy=np.zeros((2, 2)))
        start = initial_policy(scen, opts)
        # capacity requires consuming 2 by the end of slot 1
        assert start[0, 0] == pytest.approx(2.0)

    def test_proximal_epsilon_accepted(self):
        scen = two_user_scenario([1.0, 0.0], [0.0, 1.0], 2.0, 0.9, 2.0)
        rm = build_rate_model(0.9, 2.0, 2.0, 2.0)
        p_plain, _ = iterate_offline(scen, rm)
        p_prox, _ = iterate_offline(
            scen, rm, IterativeOptions(proximal_epsilon=1e-6))
        assert np.allclose(p_plain, p_prox, atol=1e-3)

    def test_fixed_point_feasibility(self):
        rng = np.random.default_rng(13)
        from ehic.model import feasibility_report
        for _ in range(6):
            n = int(rng.integers(2, 8))
            scen = two_user_scenario(rng.uniform(0, 5, n),
                                     rng.uniform(0, 5, n), 5.0, 0.9, 2.0)
            rm = build_rate_model(0.9, 2.0, 5.0, 5.0)
            policy, _ = iterate_offline(scen, rm)
            rep = feasibility_report(policy, scen, rm, tol=1e-9 * 5.0)
            assert rep.energy_causality.magnitude <= 1e-9 * 5.0
            assert rep.battery_capacity.magnitude <= 1e-9 * 5.0
