"""Interference-region classification and sum-rate kernels.

Everything here works in normalized units: direct channel gains and receiver
noise variances are 1, so a transmit power p produces a single-link rate of
(1/2)ln(1+p) nats per channel use.  The two cross gains ``a`` (into receiver 1)
and ``b`` (into receiver 2) select one of four sum-rate kernels:

* ``ASYMMETRIC_AB_ABOVE_ONE``  (a <= 1 <= b, a*b > 1): receiver 2 decodes and
  removes the strong interferer, receiver 1 treats the weak one as noise.
* ``ASYMMETRIC_AB_AT_MOST_ONE`` (a <= 1 <= b, a*b <= 1): the rate of user 1 is
  the minimum of what the two receivers can decode; which branch is active
  depends only on p2 through the threshold power ``p_c = (b-1)/(1-a*b)``.
* ``VERY_STRONG``: both receivers remove the interference entirely, the links
  decouple into two single-user channels.
* ``GENERIC``: a caller-supplied jointly concave kernel.

When a >= 1 >= b the user indices are swapped internally (``mirrored``) so the
canonical orientation a <= 1 <= b applies, and results are swapped back.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import InvalidInputError, UnsupportedRegionError


@dataclass(frozen=True)
class ChannelParams:
    """Normalized cross gains: ``a`` into receiver 1, ``b`` into receiver 2."""

    a: float
    b: float

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise InvalidInputError("cross gains must be nonnegative")


class Region(enum.Enum):
    ASYMMETRIC_AB_ABOVE_ONE = "asymmetric-ab>1"
    ASYMMETRIC_AB_AT_MOST_ONE = "asymmetric-ab<=1"
    VERY_STRONG = "very-strong"
    GENERIC = "generic-concave"


@dataclass(frozen=True)
class RegionTag:
    region: Region
    mirrored: bool = False


@dataclass(frozen=True)
class GenericKernel:
    """Caller-supplied concave sum-rate kernel for regions without a closed form.

    ``sum_rate(p1, p2)`` is required and must be jointly concave, nondecreasing
    and zero at the origin (checked by sampling at model construction).
    ``user_rates`` and ``grad`` are optional; central differences are used for
    the gradient when absent, and operations that need a per-user rate split
    raise if ``user_rates`` is missing.
    """

    sum_rate: Callable
    user_rates: Optional[Callable] = None
    grad: Optional[Callable] = None


def interference_as_noise_kernel(a: float, b: float) -> GenericKernel:
    """Example generic kernel: both receivers treat interference as noise.

    Concavity is NOT guaranteed for arbitrary (a, b); model construction
    rejects parameter choices for which the sampled check fails.
    """

    def user_rates(p1, p2):
        r1 = 0.5 * np.log1p(p1 / (1.0 + a * p2))
        r2 = 0.5 * np.log1p(p2 / (1.0 + b * p1))
        return r1, r2

    def sum_rate(p1, p2):
        r1, r2 = user_rates(p1, p2)
        return r1 + r2

    def grad(p1, p2):
        d1 = 1.0 / (2.0 * (1.0 + a * p2 + p1)) - b * p2 / (
            2.0 * (1.0 + p2 + b * p1) * (1.0 + b * p1)
        )
        d2 = 1.0 / (2.0 * (1.0 + b * p1 + p2)) - a * p1 / (
            2.0 * (1.0 + p1 + a * p2) * (1.0 + a * p2)
        )
        return d1, d2

    return GenericKernel(sum_rate=sum_rate, user_rates=user_rates, grad=grad)


def classify_region(a: float, b: float, p1_max: float, p2_max: float) -> RegionTag:
    """Pick the sum-rate kernel for cross gains (a, b) and peak powers.

    The very-strong test compares each cross gain against 1 plus the largest
    single-slot power the interfering transmitter can produce, so the
    decode-and-remove argument holds for every reachable power pair.
    """
    if a < 0 or b < 0:
        raise InvalidInputError("cross gains must be nonnegative")
    mirrored = a > 1.0 and b < 1.0
    ac, bc, pm1, pm2 = (b, a, p2_max, p1_max) if mirrored else (a, b, p1_max, p2_max)
    if ac > 1.0 + pm1 and bc > 1.0 + pm2:
        return RegionTag(Region.VERY_STRONG, mirrored)
    if ac <= 1.0 <= bc:
        if ac * bc > 1.0:
            return RegionTag(Region.ASYMMETRIC_AB_ABOVE_ONE, mirrored)
        return RegionTag(Region.ASYMMETRIC_AB_AT_MOST_ONE, mirrored)
    return RegionTag(Region.GENERIC, mirrored=False)


def _asym_r1(p1, p2, a):
    # rate of the canonical first user when its interference is treated as noise
    return 0.5 * np.log1p(p1 / (1.0 + a * p2))


class RateModel:
    """Region-tagged sum-rate, per-user rate and gradient kernels.

    All public methods take powers in the caller's (public) user order; the
    mirrored swap is internal.  Rates are nats per channel use.
    """

    def __init__(self, channel: ChannelParams, tag: RegionTag,
                 kernel: Optional[GenericKernel] = None,
                 concavity_check_pmax: float = 10.0,
                 concavity_samples: int = 1000):
        self.channel = channel
        self.tag = tag
        self.region = tag.region
        self.mirrored = tag.mirrored
        # canonical gains: a <= 1 <= b orientation for the asymmetric regions
        if tag.mirrored:
            self._a, self._b = channel.b, channel.a
        else:
            self._a, self._b = channel.a, channel.b
        if self.region is Region.ASYMMETRIC_AB_AT_MOST_ONE:
            ab = self._a * self._b
            self.p_c = (self._b - 1.0) / (1.0 - ab) if ab < 1.0 else math.inf
        else:
            self.p_c = None
        self.kernel = kernel
        if self.region is Region.GENERIC:
            if kernel is None:
                raise InvalidInputError("generic region requires a kernel")
            self._check_generic_kernel(concavity_check_pmax, concavity_samples)

    @property
    def canonical_gains(self):
        """Cross gains in the canonical a <= 1 <= b orientation."""
        return self._a, self._b

    # -- construction helpers -------------------------------------------------

    def _check_generic_kernel(self, pmax, samples):
        rng = np.random.default_rng(0)
        x = rng.uniform(0.0, pmax, size=(samples, 2))
        y = rng.uniform(0.0, pmax, size=(samples, 2))
        f = self.kernel.sum_rate
        mid = f(0.5 * (x[:, 0] + y[:, 0]), 0.5 * (x[:, 1] + y[:, 1]))
        avg = 0.5 * (f(x[:, 0], x[:, 1]) + f(y[:, 0], y[:, 1]))
        if np.any(mid < avg - 1e-9):
            raise InvalidInputError(
                "generic kernel failed the sampled midpoint-concavity check")
        if abs(float(f(0.0, 0.0))) > 1e-12:
            raise InvalidInputError("generic kernel must vanish at zero power")

    # -- kernels ---------------------------------------------------------------

    def _oriented(self, p1, p2):
        return (p2, p1) if self.mirrored else (p1, p2)

    def sum_rate(self, p1, p2):
        p1 = np.asarray(p1, dtype=float)
        p2 = np.asarray(p2, dtype=float)
        if np.any(p1 < 0) or np.any(p2 < 0):
            raise InvalidInputError("powers must be nonnegative")
        x1, x2 = self._oriented(p1, p2)
        out = self._sum_rate_canonical(x1, x2)
        return out if out.ndim else float(out)

    def _sum_rate_canonical(self, p1, p2):
        a, b = self._a, self._b
        if self.region is Region.ASYMMETRIC_AB_ABOVE_ONE:
            return _asym_r1(p1, p2, a) + 0.5 * np.log1p(p2)
        if self.region is Region.ASYMMETRIC_AB_AT_MOST_ONE:
            e1 = _asym_r1(p1, p2, a) + 0.5 * np.log1p(p2)
            e2 = 0.5 * np.log1p(b * p1 + p2)
            return np.minimum(e1, e2)
        if self.region is Region.VERY_STRONG:
            return 0.5 * np.log1p(p1) + 0.5 * np.log1p(p2)
        return np.asarray(self.kernel.sum_rate(p1, p2), dtype=float)

    def user_rates(self, p1, p2):
        """Per-user achievable rates (r1, r2); they sum to ``sum_rate``."""
        p1 = np.asarray(p1, dtype=float)
        p2 = np.asarray(p2, dtype=float)
        if np.any(p1 < 0) or np.any(p2 < 0):
            raise InvalidInputError("powers must be nonnegative")
        x1, x2 = self._oriented(p1, p2)
        r1, r2 = self._user_rates_canonical(x1, x2)
        if self.mirrored:
            r1, r2 = r2, r1
        if np.ndim(r1) == 0:
            return float(r1), float(r2)
        return r1, r2

    def _user_rates_canonical(self, p1, p2):
        a, b = self._a, self._b
        if self.region is Region.ASYMMETRIC_AB_ABOVE_ONE:
            return _asym_r1(p1, p2, a), 0.5 * np.log1p(p2)
        if self.region is Region.ASYMMETRIC_AB_AT_MOST_ONE:
            r1 = np.minimum(_asym_r1(p1, p2, a),
                            0.5 * np.log1p(b * p1 / (1.0 + p2)))
            return r1, 0.5 * np.log1p(p2)
        if self.region is Region.VERY_STRONG:
            return 0.5 * np.log1p(p1), 0.5 * np.log1p(p2)
        if self.kernel.user_rates is None:
            raise UnsupportedRegionError(
                "generic kernel does not define per-user rates")
        r1, r2 = self.kernel.user_rates(p1, p2)
        return np.asarray(r1, dtype=float), np.asarray(r2, dtype=float)

    def grad(self, p1, p2):
        """Analytic partials (d sum_rate/d p1, d sum_rate/d p2).

        On the kinked branch boundary of the min-form region the branch is
        selected by the p2 threshold (>= p_c picks the decode-limited branch),
        matching the branch rule used by the subproblem builders.
        """
        p1 = np.asarray(p1, dtype=float)
        p2 = np.asarray(p2, dtype=float)
        if np.any(p1 < 0) or np.any(p2 < 0):
            raise InvalidInputError("powers must be nonnegative")
        x1, x2 = self._oriented(p1, p2)
        d1, d2 = self._grad_canonical(x1, x2)
        if self.mirrored:
            d1, d2 = d2, d1
        if np.ndim(d1) == 0 and np.ndim(d2) == 0:
            return float(d1), float(d2)
        return d1, d2

    def _grad_canonical(self, p1, p2):
        a, b = self._a, self._b
        if self.region is Region.ASYMMETRIC_AB_ABOVE_ONE:
            return self._grad_tin_branch(p1, p2)
        if self.region is Region.ASYMMETRIC_AB_AT_MOST_ONE:
            d1a, d2a = self._grad_tin_branch(p1, p2)
            den = 2.0 * (1.0 + b * p1 + p2)
            d1b, d2b = b / den, 1.0 / den
            on_b = p2 >= self.p_c
            return np.where(on_b, d1b, d1a), np.where(on_b, d2b, d2a)
        if self.region is Region.VERY_STRONG:
            return 0.5 / (1.0 + p1), 0.5 / (1.0 + p2)
        if self.kernel.grad is not None:
            d1, d2 = self.kernel.grad(p1, p2)
            return np.asarray(d1, dtype=float), np.asarray(d2, dtype=float)
        return self._grad_numeric(p1, p2)

    def _grad_tin_branch(self, p1, p2):
        a = self._a
        base = 1.0 + a * p2
        d1 = 1.0 / (2.0 * (base + p1))
        d2 = -a * p1 / (2.0 * (1.0 + p1 + a * p2) * base) + 1.0 / (2.0 * (1.0 + p2))
        return np.broadcast_arrays(d1, d2)[0], d2

    def _grad_numeric(self, p1, p2, step=1e-6):
        f = self.kernel.sum_rate
        lo1 = np.maximum(p1 - step, 0.0)
        lo2 = np.maximum(p2 - step, 0.0)
        d1 = (f(p1 + step, p2) - f(lo1, p2)) / (p1 + step - lo1)
        d2 = (f(p1, p2 + step) - f(p1, lo2)) / (p2 + step - lo2)
        return np.asarray(d1, dtype=float), np.asarray(d2, dtype=float)

    def user_rate_partials(self, p1, p2):
        """Jacobian of (r1, r2) in (p1, p2): (d11, d12, d21, d22).

        ``dij`` is the partial of user i's rate in user j's power.  Used by the
        data-causality penalty gradients; zero cross terms encode per-user
        rates that do not depend on the other transmitter.
        """
        p1 = np.asarray(p1, dtype=float)
        p2 = np.asarray(p2, dtype=float)
        x1, x2 = self._oriented(p1, p2)
        d11, d12, d21, d22 = self._partials_canonical(x1, x2)
        if self.mirrored:
            d11, d12, d21, d22 = d22, d21, d12, d11
        return d11, d12, d21, d22

    def _partials_canonical(self, p1, p2):
        a, b = self._a, self._b
        zero = np.zeros(np.broadcast(p1, p2).shape)
        if self.region is Region.ASYMMETRIC_AB_ABOVE_ONE:
            base = 1.0 + a * p2
            d11 = 1.0 / (2.0 * (base + p1))
            d12 = -a * p1 / (2.0 * (1.0 + p1 + a * p2) * base)
            d22 = 0.5 / (1.0 + p2)
            return d11, d12, zero, zero + d22
        if self.region is Region.ASYMMETRIC_AB_AT_MOST_ONE:
            base = 1.0 + a * p2
            d11a = 1.0 / (2.0 * (base + p1))
            d12a = -a * p1 / (2.0 * (1.0 + p1 + a * p2) * base)
            den = 2.0 * (1.0 + b * p1 + p2)
            d11b = b / den
            d12b = 1.0 / den - 0.5 / (1.0 + p2)
            on_b = p2 >= self.p_c
            d11 = np.where(on_b, d11b, d11a)
            d12 = np.where(on_b, d12b, d12a)
            d22 = 0.5 / (1.0 + p2)
            return d11, d12, zero, zero + d22
        if self.region is Region.VERY_STRONG:
            return 0.5 / (1.0 + p1), zero, zero, 0.5 / (1.0 + p2)
        if self.kernel.user_rates is None:
            raise UnsupportedRegionError(
                "generic kernel does not define per-user rates")
        step = 1e-6
        ur = self.kernel.user_rates

        def diff(fun, i):
            if i == 0:
                lo = np.maximum(p1 - step, 0.0)
                return (np.asarray(fun(p1 + step, p2)) - np.asarray(fun(lo, p2))) / (p1 + step - lo)
            lo = np.maximum(p2 - step, 0.0)
            return (np.asarray(fun(p1, p2 + step)) - np.asarray(fun(p1, lo))) / (p2 + step - lo)

        r1 = lambda x, y: ur(x, y)[0]
        r2 = lambda x, y: ur(x, y)[1]
        return diff(r1, 0), diff(r1, 1), diff(r2, 0), diff(r2, 1)

    def base_level_T1(self, p2):
        """Effective inverse gain 1/h seen by the canonical first user.

        The other user's power raises the floor of the water-filling picture;
        in the min-form region the floor switches branch at ``p_c``.
        """
        p2 = np.asarray(p2, dtype=float)
        if np.any(p2 < 0):
            raise InvalidInputError("powers must be nonnegative")
        a, b = self._a, self._b
        if self.region in (Region.ASYMMETRIC_AB_ABOVE_ONE, Region.VERY_STRONG):
            out = 1.0 + a * p2 if self.region is Region.ASYMMETRIC_AB_ABOVE_ONE \
                else np.ones_like(p2)
        elif self.region is Region.ASYMMETRIC_AB_AT_MOST_ONE:
            out = np.where(p2 < self.p_c, 1.0 + a * p2, (1.0 + p2) / b)
        else:
            raise UnsupportedRegionError(
                "base level is undefined for generic kernels")
        return out if out.ndim else float(out)

    def max_gradient_bound(self, p_max: float = 10.0) -> float:
        """Upper bound on |d sum_rate/d p_j| over [0, p_max]^2 (error budgets)."""
        if self.region is Region.ASYMMETRIC_AB_ABOVE_ONE:
            return 0.5
        if self.region is Region.ASYMMETRIC_AB_AT_MOST_ONE:
            return 0.5 * max(1.0, self._b)
        if self.region is Region.VERY_STRONG:
            return 0.5
        grid = np.linspace(0.0, p_max, 21)
        g1, g2 = np.meshgrid(grid, grid)
        d1, d2 = self._grad_canonical(g1.ravel(), g2.ravel())
        return 1.05 * float(max(np.max(np.abs(d1)), np.max(np.abs(d2))))


def build_rate_model(a: float, b: float, p1_max: float, p2_max: float,
                     kernel: Optional[GenericKernel] = None) -> RateModel:
    """Classify (a, b) against the peak powers and assemble the rate model.

    For the generic region a kernel must be supplied (or use
    ``interference_as_noise_kernel`` for experimentation).
    """
    tag = classify_region(a, b, p1_max, p2_max)
    return RateModel(ChannelParams(a, b), tag, kernel=kernel)


@dataclass(frozen=True)
class ChannelNormalization:
    """Normalized cross gains plus the per-user energy scale factors.

    ``energy_scale[j]`` converts Joules at transmitter j into normalized
    energy units: direct link gain over (noise PSD x bandwidth).
    """

    params: ChannelParams
    energy_scale: tuple


def normalize_channel(h11_db: float, h22_db: float, h12_db: float,
                      h21_db: float, noise_psd: float,
                      bandwidth: float) -> ChannelNormalization:
    """Reduce physical link gains (dB) and noise to normalized cross gains.

    Powers are normalized per receiver so the direct gain and noise variance
    become 1; the cross gains then are the dB gain gaps in linear scale.
    """
    if noise_psd <= 0 or bandwidth <= 0:
        raise InvalidInputError("noise PSD and bandwidth must be positive")
    lin = lambda db: 10.0 ** (db / 10.0)
    a = lin(h12_db - h11_db)
    b = lin(h21_db - h22_db)
    noise_power = noise_psd * bandwidth
    scale = (lin(h11_db) / noise_power, lin(h22_db) / noise_power)
    return ChannelNormalization(ChannelParams(a, b), scale)
