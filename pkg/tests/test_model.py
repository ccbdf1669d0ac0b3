"""Scenario validation, feasibility accounting and the JSON schema."""

import numpy as np
import pytest

from ehic.errors import InvalidInputError, ShapeError
from ehic.model import (DataProfile, HarvestProfile, Scenario, TimeGrid, User,
                        cumulative_departure, feasibility_report,
                        scenario_from_dict, scenario_to_dict,
                        validate_scenario)
from ehic.rates import ChannelParams, build_rate_model

from helpers import linear_rate_kernel, two_user_scenario


def _raw(e1, e2, emax, n=None, tau=1.0):
    users = (User(HarvestProfile(np.asarray(e1, float), emax),
                  DataProfile.infinite()),
             User(HarvestProfile(np.asarray(e2, float), emax),
                  DataProfile.infinite()))
    return Scenario(TimeGrid(n or len(e1), tau), users, ChannelParams(0.9, 2.0))


class TestValidate:
    def test_truncates_oversized_arrival(self):
        scen = validate_scenario(_raw([12.0, 3.0], [0.0, 0.0], 10.0))
        assert scen.users[0].harvest.arrivals.tolist() == [10.0, 3.0]

    def test_negative_energy_rejected(self):
        with pytest.raises(InvalidInputError):
            _raw([-1.0, 0.0], [0.0, 0.0], 10.0)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            validate_scenario(_raw([1.0, 2.0], [0.0, 0.0], 10.0, n=3))

    def test_bad_grid_rejected(self):
        with pytest.raises(InvalidInputError):
            TimeGrid(0, 1.0)
        with pytest.raises(InvalidInputError):
            TimeGrid(3, 0.0)
        with pytest.raises(InvalidInputError):
            HarvestProfile(np.array([1.0]), 0.0)

    def test_idempotent(self):
        scen = validate_scenario(_raw([12.0, 3.0], [5.0, 0.0], 10.0))
        again = validate_scenario(scen)
        for j in range(2):
            assert np.array_equal(again.users[j].harvest.arrivals,
                                  scen.users[j].harvest.arrivals)


class TestFeasibilityReport:
    def test_energy_causality_violation(self):
        scen = two_user_scenario([1.0, 0.0], [0.0, 0.0], 10.0, 0.9, 2.0)
        rm = build_rate_model(0.9, 2.0, 10.0, 10.0)
        rep = feasibility_report([[0.6, 0.5], [0.0, 0.0]], scen, rm)
        assert rep.energy_causality.magnitude == pytest.approx(0.1)
        assert rep.energy_causality.slot == 1 and rep.energy_causality.user == 0
        assert not rep.feasible

    def test_battery_overflow_violation(self):
        scen = two_user_scenario([1.0, 1.0], [0.0, 0.0], 1.0, 0.9, 2.0)
        rm = build_rate_model(0.9, 2.0, 1.0, 1.0)
        rep = feasibility_report([[0.0, 1.0], [0.0, 0.0]], scen, rm)
        assert rep.battery_capacity.magnitude == pytest.approx(1.0)
        assert rep.battery_capacity.slot == 0

    def test_data_violation_on_linear_walkthrough(self):
        # placing the harvests directly as powers sends bits before any data
        # has arrived in slot 1
        kernel = linear_rate_kernel()
        scen = two_user_scenario([1, 0, 1, 0.5, 0], np.zeros(5), 1.0, 0.0, 0.0,
                                 b1=[0, 1.5, 0, 0.2, 1])
        rm = build_rate_model(0.0, 0.0, 1.0, 1.0, kernel=kernel)
        policy = np.vstack([scen.users[0].harvest.arrivals, np.zeros(5)])
        rep = feasibility_report(policy, scen, rm)
        data = np.maximum(0.0, np.cumsum(policy[0])
                          - np.cumsum([0, 1.5, 0, 0.2, 1]))
        assert data[0] > 0
        assert rep.data_causality.magnitude == pytest.approx(np.max(data))
        assert rep.energy_causality.magnitude == 0.0

    def test_shape_mismatch(self):
        scen = two_user_scenario([1.0, 0.0], [0.0, 0.0], 10.0, 0.9, 2.0)
        rm = build_rate_model(0.9, 2.0, 10.0, 10.0)
        with pytest.raises(ShapeError):
            feasibility_report(np.zeros((2, 3)), scen, rm)


class TestCumulativeDeparture:
    def test_zero_policy(self):
        scen = two_user_scenario([1.0, 1.0], [1.0, 1.0], 10.0, 0.9, 2.0)
        rm = build_rate_model(0.9, 2.0, 10.0, 10.0)
        curve = cumulative_departure(np.zeros((2, 2)), rm, scen.grid)
        assert np.array_equal(curve, np.zeros(2))

    def test_single_slot_hand_value(self):
        scen = two_user_scenario([3.0], [0.0], 10.0, 0.9, 2.0)
        rm = build_rate_model(0.9, 2.0, 10.0, 10.0)
        curve = cumulative_departure([[3.0], [0.0]], rm, scen.grid)
        assert curve[0] == pytest.approx(0.5 * np.log(4.0))
        assert curve[0] == pytest.approx(0.6931, abs=5e-5)

    def test_nondecreasing_for_random_policies(self):
        rng = np.random.default_rng(4)
        scen = two_user_scenario(np.ones(6), np.ones(6), 10.0, 0.9, 2.0)
        rm = build_rate_model(0.9, 2.0, 10.0, 10.0)
        for _ in range(20):
            policy = rng.uniform(0, 3, (2, 6))
            curve = cumulative_departure(policy, rm, scen.grid)
            assert np.all(np.diff(curve) >= -1e-15)

    def test_optimal_curve_dominates_naive_at_deadline(self):
        from ehic.cli import gen_scenario
        from ehic.iterative import iterate_offline
        from ehic.online import naive_policy
        scen = gen_scenario(20, 1.0, 10.0, 5.0, 2, 0.7, 5.0)
        rm = build_rate_model(0.7, 5.0, 10.0, 10.0)
        p_opt, _ = iterate_offline(scen, rm)
        opt_curve = cumulative_departure(p_opt, rm, scen.grid)
        naive_curve = cumulative_departure(naive_policy(scen), rm, scen.grid)
        assert opt_curve[-1] > naive_curve[-1]


class TestScenarioSchema:
    def test_round_trip(self):
        scen = two_user_scenario([1.0, 0.5], [0.0, 2.0], 3.0, 0.9, 2.0,
                                 b1=[0.2, 0.4])
        doc = scenario_to_dict(scen)
        back, info = scenario_from_dict(doc)
        assert info == {}
        for j in range(2):
            assert np.array_equal(back.users[j].harvest.arrivals,
                                  scen.users[j].harvest.arrivals)
        assert back.users[1].data.is_infinite
        assert np.array_equal(back.users[0].data.arrivals,
                              scen.users[0].data.arrivals)

    def test_physical_channel_converts_units(self):
        doc = {
            "tau": 1.0, "N": 2,
            "users": [{"E": [5.0, 0.0], "Emax": 10.0, "B": "infinite"},
                      {"E": [10.0, 0.0], "Emax": 10.0, "B": "infinite"}],
            "channel": {"physical": {
                "h11_db": -100.0, "h22_db": -100.0, "h12_db": -101.55,
                "h21_db": -93.01, "noise_psd": 1e-19, "bandwidth": 1e6}},
        }
        scen, info = scenario_from_dict(doc)
        # 5 mJ at -100 dB over 1e-13 W noise -> 5 normalized units
        assert scen.users[0].harvest.arrivals[0] == pytest.approx(5.0)
        assert scen.users[0].harvest.capacity == pytest.approx(10.0)
        assert scen.channel.a == pytest.approx(0.70, abs=0.005)
        assert info["channel_uses_per_slot"] == pytest.approx(2e6)

    def test_missing_fields_rejected(self):
        with pytest.raises(InvalidInputError):
            scenario_from_dict({"tau": 1.0})
        with pytest.raises(InvalidInputError):
            scenario_from_dict({"tau": 1.0, "N": 1, "channel": {"a": 1},
                                "users": [{"E": [1], "Emax": 1}] * 2})

    def test_bad_backlog_marker_rejected(self):
        doc = {"tau": 1.0, "N": 1, "channel": {"a": 0.9, "b": 2.0},
               "users": [{"E": [1.0], "Emax": 1.0, "B": "lots"},
                         {"E": [1.0], "Emax": 1.0, "B": "infinite"}]}
        with pytest.raises(InvalidInputError):
            scenario_from_dict(doc)
