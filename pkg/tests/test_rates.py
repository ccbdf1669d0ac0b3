"""Region classification and rate-kernel checks, including the hand-computed
values for each region and the analytic/numeric gradient agreement."""

import math

import numpy as np
import pytest

from ehic.errors import (InvalidInputError, UnsupportedRegionError)
from ehic.rates import (ChannelParams, RateModel, Region, build_rate_model,
                        classify_region, interference_as_noise_kernel,
                        normalize_channel)

LN = math.log


class TestClassify:
    def test_asymmetric_above_one(self):
        tag = classify_region(0.9, 2.0, 10.0, 10.0)
        assert tag.region is Region.ASYMMETRIC_AB_ABOVE_ONE
        assert not tag.mirrored

    def test_asymmetric_at_most_one_threshold(self):
        model = build_rate_model(0.5, 1.5, 5.0, 5.0)
        assert model.region is Region.ASYMMETRIC_AB_AT_MOST_ONE
        assert model.p_c == pytest.approx(2.0)

    def test_very_strong_requires_power_bounds(self):
        assert classify_region(4.0, 4.0, 2.0, 2.0).region is Region.VERY_STRONG
        # with larger peak powers the decode argument fails
        assert classify_region(4.0, 4.0, 5.0, 5.0).region is not Region.VERY_STRONG

    def test_mirrored_orientation(self):
        tag = classify_region(2.0, 0.9, 10.0, 10.0)
        assert tag.mirrored
        assert tag.region is Region.ASYMMETRIC_AB_ABOVE_ONE

    def test_weak_pair_is_generic(self):
        assert classify_region(0.5, 0.5, 5.0, 5.0).region is Region.GENERIC

    def test_negative_gain_rejected(self):
        with pytest.raises(InvalidInputError):
            classify_region(-0.1, 1.0, 1.0, 1.0)


class TestSumRate:
    def test_zero_identity_all_regions(self):
        for model in _all_models():
            assert model.sum_rate(0.0, 0.0) == pytest.approx(0.0, abs=1e-12)

    def test_region_a_hand_value(self):
        model = build_rate_model(0.5, 2.5, 10.0, 10.0)
        expect = 0.5 * LN(5.0 / 3.0) + 0.5 * LN(2.0)
        assert model.sum_rate(1.0, 1.0) == pytest.approx(expect, abs=1e-12)
        assert expect == pytest.approx(0.6020, abs=5e-5)

    def test_silent_interferer_reduces_to_point_to_point(self):
        for a in (0.1, 0.5, 0.9):
            model = build_rate_model(a, 2.0, 10.0, 10.0)
            assert model.sum_rate(3.0, 0.0) == pytest.approx(0.5 * LN(4.0))

    def test_negative_power_rejected(self):
        model = build_rate_model(0.9, 2.0, 10.0, 10.0)
        with pytest.raises(InvalidInputError):
            model.sum_rate(-0.5, 1.0)

    def test_mirrored_matches_swapped(self):
        fwd = build_rate_model(0.9, 2.0, 10.0, 10.0)
        mir = build_rate_model(2.0, 0.9, 10.0, 10.0)
        rng = np.random.default_rng(0)
        p = rng.uniform(0, 5, (50, 2))
        assert np.allclose(mir.sum_rate(p[:, 0], p[:, 1]),
                           fwd.sum_rate(p[:, 1], p[:, 0]), atol=1e-14)
        r1m, r2m = mir.user_rates(p[:, 0], p[:, 1])
        r1f, r2f = fwd.user_rates(p[:, 1], p[:, 0])
        assert np.allclose(r1m, r2f) and np.allclose(r2m, r1f)


class TestUserRates:
    def test_silent_user_has_zero_rate(self):
        model = build_rate_model(0.9, 2.0, 10.0, 10.0)
        r1, r2 = model.user_rates(0.0, 5.0)
        assert r1 == pytest.approx(0.0, abs=1e-14)
        assert r2 == pytest.approx(0.5 * LN(6.0))

    def test_very_strong_decoupled(self):
        model = build_rate_model(50.0, 50.0, 2.0, 2.0)
        assert model.region is Region.VERY_STRONG
        r1, r2 = model.user_rates(1.0, 3.0)
        assert (r1, r2) == (pytest.approx(0.5 * LN(2.0)),
                            pytest.approx(0.5 * LN(4.0)))

    def test_sum_consistency_everywhere(self):
        rng = np.random.default_rng(1)
        p = rng.uniform(0, 10, (1000, 2))
        for model in _all_models():
            r1, r2 = model.user_rates(p[:, 0], p[:, 1])
            assert np.max(np.abs(r1 + r2 - model.sum_rate(p[:, 0], p[:, 1]))) \
                <= 1e-12


class TestGradient:
    def test_region_a_hand_values(self):
        model = build_rate_model(0.5, 2.5, 10.0, 10.0)
        d1, d2 = model.grad(1.0, 1.0)
        assert d1 == pytest.approx(0.2, abs=1e-12)
        assert d2 == pytest.approx(-0.5 / 7.5 + 0.25, abs=1e-12)
        assert d2 == pytest.approx(0.18333, abs=5e-6)

    def test_no_interference_column(self):
        model = build_rate_model(0.9, 2.0, 10.0, 10.0)
        for p2 in (0.0, 1.0, 7.0):
            _, d2 = model.grad(0.0, p2)
            assert d2 == pytest.approx(1.0 / (2.0 * (1.0 + p2)), abs=1e-14)

    def test_region_b_decode_branch(self):
        model = build_rate_model(0.5, 1.5, 10.0, 10.0)
        p1, p2 = 2.0, 3.0   # p2 above the threshold 2
        _, d2 = model.grad(p1, p2)
        assert d2 == pytest.approx(1.0 / (2.0 * (1.0 + 1.5 * p1 + p2)),
                                   abs=1e-14)

    def test_matches_central_differences(self):
        rng = np.random.default_rng(2)
        step = 1e-6
        for model in _all_models():
            pts = rng.uniform(0.1, 10.0, (1000, 2))
            if model.region is Region.ASYMMETRIC_AB_AT_MOST_ONE:
                pts = pts[np.abs(pts[:, 1] - model.p_c) > 1e-3]
            d1, d2 = model.grad(pts[:, 0], pts[:, 1])
            f = model.sum_rate
            fd1 = (f(pts[:, 0] + step, pts[:, 1])
                   - f(pts[:, 0] - step, pts[:, 1])) / (2 * step)
            fd2 = (f(pts[:, 0], pts[:, 1] + step)
                   - f(pts[:, 0], pts[:, 1] - step)) / (2 * step)
            assert np.max(np.abs(d1 - fd1)) <= 1e-6
            assert np.max(np.abs(d2 - fd2)) <= 1e-6


class TestBaseLevel:
    def test_no_interference(self):
        model = build_rate_model(0.9, 2.0, 10.0, 10.0)
        assert model.base_level_T1(0.0) == pytest.approx(1.0)

    def test_min_form_branches(self):
        model = build_rate_model(0.5, 1.5, 10.0, 10.0)
        assert model.base_level_T1(1.0) == pytest.approx(1.5)
        assert model.base_level_T1(4.0) == pytest.approx(10.0 / 3.0)

    def test_generic_unsupported(self):
        model = build_rate_model(0.1, 0.1, 10.0, 10.0,
                                 kernel=interference_as_noise_kernel(0.1, 0.1))
        with pytest.raises(UnsupportedRegionError):
            model.base_level_T1(1.0)


class TestRegionBContinuity:
    def test_branches_agree_at_threshold(self):
        model = build_rate_model(0.5, 1.5, 10.0, 10.0)
        pc = model.p_c
        for p1 in np.linspace(0.0, 10.0, 50):
            e1 = 0.5 * np.log1p(p1 / (1.0 + 0.5 * pc)) + 0.5 * np.log1p(pc)
            e2 = 0.5 * np.log1p(1.5 * p1 + pc)
            assert abs(e1 - e2) <= 1e-10
            assert model.sum_rate(p1, pc) == pytest.approx(min(e1, e2),
                                                           abs=1e-12)


class TestMonotoneConcave:
    def test_monotone_on_grid(self):
        grid = np.arange(0.0, 10.0 + 1e-9, 0.1)
        g1, g2 = np.meshgrid(grid, grid, indexing="ij")
        for model in _all_models():
            r = model.sum_rate(g1, g2)
            assert np.all(np.diff(r, axis=0) >= -1e-12)
            assert np.all(np.diff(r, axis=1) >= -1e-12)

    def test_midpoint_concavity(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(0, 10, (1000, 2))
        y = rng.uniform(0, 10, (1000, 2))
        for model in _all_models():
            mid = model.sum_rate(0.5 * (x[:, 0] + y[:, 0]),
                                 0.5 * (x[:, 1] + y[:, 1]))
            avg = 0.5 * (model.sum_rate(x[:, 0], x[:, 1])
                         + model.sum_rate(y[:, 0], y[:, 1]))
            assert np.min(mid - avg) >= -1e-12


class TestGenericKernel:
    def test_missing_kernel_rejected(self):
        with pytest.raises(InvalidInputError):
            build_rate_model(0.5, 0.5, 5.0, 5.0)

    def test_nonconcave_kernel_rejected(self):
        # treating strong interference as noise is not jointly concave
        with pytest.raises(InvalidInputError):
            build_rate_model(0.3, 0.3, 5.0, 5.0,
                             kernel=interference_as_noise_kernel(6.0, 6.0))

    def test_noise_kernel_small_gains_accepted(self):
        model = build_rate_model(0.1, 0.2, 5.0, 5.0,
                                 kernel=interference_as_noise_kernel(0.1, 0.2))
        assert model.region is Region.GENERIC
        r1, r2 = model.user_rates(1.0, 2.0)
        assert r1 + r2 == pytest.approx(model.sum_rate(1.0, 2.0))


class TestNormalizeChannel:
    def test_reference_link_budget(self):
        norm = normalize_channel(h11_db=-100.0, h22_db=-100.0,
                                 h12_db=-101.55, h21_db=-93.01,
                                 noise_psd=1e-19, bandwidth=1e6)
        assert norm.params.a == pytest.approx(0.70, abs=0.005)
        assert norm.params.b == pytest.approx(5.00, abs=0.05)
        # -100 dB direct gain over 1e-13 W noise power: 1000 per joule
        assert norm.energy_scale[0] == pytest.approx(1000.0, rel=1e-9)

    def test_equal_gains_identity(self):
        norm = normalize_channel(-80.0, -80.0, -80.0, -80.0, 1e-19, 1e6)
        assert norm.params.a == pytest.approx(1.0)
        assert norm.params.b == pytest.approx(1.0)

    def test_invalid_noise_rejected(self):
        with pytest.raises(InvalidInputError):
            normalize_channel(-100, -100, -100, -100, 0.0, 1e6)


def _all_models():
    return [
        build_rate_model(0.9, 2.0, 10.0, 10.0),
        build_rate_model(0.5, 1.5, 10.0, 10.0),
        build_rate_model(50.0, 50.0, 2.0, 2.0),
        build_rate_model(0.1, 0.2, 10.0, 10.0,
                         kernel=interference_as_noise_kernel(0.1, 0.2)),
    ]
