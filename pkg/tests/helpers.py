"""Shared builders for test scenarios."""

import numpy as np

from ehic.model import (DataProfile, HarvestProfile, Scenario, TimeGrid, User,
                        validate_scenario)
from ehic.rates import ChannelParams, GenericKernel


def two_user_scenario(e1, e2, emax, a, b, tau=1.0, b1=None, b2=None,
                      emax2=None):
    e1 = np.asarray(e1, dtype=float)
    e2 = np.asarray(e2, dtype=float)
    n = e1.shape[0]
    d1 = DataProfile(np.asarray(b1, dtype=float)) if b1 is not None \
        else DataProfile.infinite()
    d2 = DataProfile(np.asarray(b2, dtype=float)) if b2 is not None \
        else DataProfile.infinite()
    users = (User(HarvestProfile(e1, emax), d1),
             User(HarvestProfile(e2, emax if emax2 is None else emax2), d2))
    return validate_scenario(Scenario(TimeGrid(n, tau), users,
                                      ChannelParams(a, b)))


def single_user_scenario(e, emax, b_arr=None, tau=1.0, a=0.5, b=2.0,
                         partner_emax=None):
    """Two-user scenario with a dormant (zero-harvest) second user."""
    e = np.asarray(e, dtype=float)
    return two_user_scenario(e, np.zeros_like(e), emax, a, b, tau=tau,
                             b1=b_arr,
                             emax2=partner_emax if partner_emax else emax)


def linear_rate_kernel(tau=1.0):
    """Sum rate (p1 + p2)/tau: the linear power-rate curve used in tap/pump
    walkthroughs; concave and monotone, so it passes kernel validation."""
    def as_arr(x):
        return np.asarray(x, dtype=float)

    return GenericKernel(
        sum_rate=lambda p1, p2: (as_arr(p1) + as_arr(p2)) / tau,
        user_rates=lambda p1, p2: (as_arr(p1) / tau, as_arr(p2) / tau),
        grad=lambda p1, p2: (np.ones_like(as_arr(p1)) / tau,
                             np.ones_like(as_arr(p2)) / tau))


def lattice_arrivals(rng, n, emax, step=0.05):
    """Random arrival vector on the oracle lattice (keeps gaps quadratic)."""
    k = int(round(emax / step))
    return np.minimum(rng.integers(0, k + 1, n) * step, emax)
