"""Single-user throughput maximization over the energy corridor.

The problem: maximize sum_i tau*f_i(p_i) over p >= 0 subject to cumulative
consumption bounds L_n <= tau*sum_{i<=n} p_i <= U_n, where U is cumulative
harvest (energy causality) and L keeps room in the battery for the next
arrival (capacity).  Each f_i is concave and continuously differentiable.

The solver equalizes the marginal rate f_i'(p_i) -- the generalized water
level -- across maximal runs of slots, and splits a run only where a
cumulative bound binds: the level may rise across a boundary only when the
battery is empty there, and fall only when it is full.  Those are exactly the
KKT conditions of the concave program, so the construction is certified by
reconstructing multipliers from the active-constraint structure
(``verify_kkt``) and reporting stationarity/complementarity residuals.

Levels are found by bisection on the common marginal; per-slot powers at a
given level come from inverting f_i', analytically where possible and by
safeguarded Newton or bisection otherwise.  Ties under flat marginals
(linear utilities) are broken by consuming as late as possible, which keeps
the output deterministic and maximizes forward flexibility.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (ConvergenceError, InfeasiblePolicyError,
                     InvalidUtilityError)
from .model import HarvestProfile, TimeGrid, energy_bounds

_INF = math.inf


# ---------------------------------------------------------------------------
# slot utilities
# ---------------------------------------------------------------------------

class SlotUtilities:
    """Per-slot concave utilities f_i with derivative and derivative inverse.

    ``inv_deriv(level, idx)`` returns per-slot (qmin, qmax): the smallest and
    largest powers at which f_i' equals ``level`` (a range only where f_i' is
    flat at that value; qmax may be inf).  qmin/qmax are nonincreasing in the
    level, which is what the level bisection relies on.
    """

    n = 0

    def value(self, p):
        raise NotImplementedError

    def deriv(self, p):
        raise NotImplementedError

    def deriv_range(self, p):
        """One-sided derivative interval (right, left) at p.

        Differs from a point only at kinks of piecewise utilities, where
        stationarity holds for any level inside the interval.
        """
        d = self.deriv(p)
        return d, d

    def deriv_at_zero(self):
        cached = getattr(self, "_d0_cache", None)
        if cached is None:
            cached = self.deriv(np.zeros(self.n))
            self._d0_cache = cached
        return cached

    def inv_deriv(self, level, idx=None):
        raise NotImplementedError

    def inv_deriv_slope(self, level, idx, qmin):
        """d(total demand)/d(level) at this level, or None when unavailable.

        Speeds up the level search; correctness never depends on it.
        """
        return None

    def _all_idx(self, idx):
        return np.arange(self.n) if idx is None else np.asarray(idx)


def _real_cubic_roots(c3, c2, c1, c0):
    """Real roots of c3 x^3 + c2 x^2 + c1 x + c0 (c3 > 0), vectorized.

    Returns a (3, n) array; rows beyond the number of real roots are NaN.
    """
    a = c2 / c3
    b = c1 / c3
    c = c0 / c3
    p = b - a * a / 3.0
    q = 2.0 * a ** 3 / 27.0 - a * b / 3.0 + c
    disc = 0.25 * q * q + p ** 3 / 27.0
    shift = a / 3.0
    roots = np.full((3,) + a.shape, np.nan)
    one = disc > 0.0
    if np.any(one):
        sq = np.sqrt(disc[one])
        u = np.cbrt(-0.5 * q[one] + sq)
        v = np.cbrt(-0.5 * q[one] - sq)
        roots[0][one] = u + v - shift[one]
    three = ~one
    if np.any(three):
        pp = p[three]
        qq = q[three]
        m = 2.0 * np.sqrt(np.maximum(-pp / 3.0, 0.0))
        den = pp * m
        arg = np.where(np.abs(den) > 1e-300, 3.0 * qq / np.where(den == 0, 1.0, den), 0.0)
        theta = np.arccos(np.clip(arg, -1.0, 1.0)) / 3.0
        sh = shift[three]
        roots[0][three] = m * np.cos(theta) - sh
        roots[1][three] = m * np.cos(theta - 2.0 * np.pi / 3.0) - sh
        roots[2][three] = m * np.cos(theta - 4.0 * np.pi / 3.0) - sh
    return roots


def _bisect_inv(deriv_fn, level, n, hi_start=1.0):
    """Generic monotone inverse of a vectorized nonincreasing derivative."""
    lo = np.zeros(n)
    d0 = deriv_fn(lo)
    done_zero = d0 <= level
    hi = np.full(n, hi_start)
    for _ in range(80):
        need = deriv_fn(hi) > level
        if not np.any(need & ~done_zero):
            break
        hi = np.where(need, hi * 2.0, hi)
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        above = deriv_fn(mid) > level
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    q = np.where(done_zero, 0.0, 0.5 * (lo + hi))
    return q, q.copy()


class ScaledLogUtilities(SlotUtilities):
    """f_i(p) = (1/2) ln(1 + h_i p) + c_i, the fading-channel slot utility."""

    def __init__(self, h, const=None):
        self.h = np.asarray(h, dtype=float)
        self.n = self.h.shape[0]
        self.const = (np.zeros(self.n) if const is None
                      else np.asarray(const, dtype=float))
        if np.any(self.h <= 0):
            raise InvalidUtilityError("channel gains must be positive")

    def value(self, p):
        return 0.5 * np.log1p(self.h * p) + self.const

    def deriv(self, p):
        return self.h / (2.0 * (1.0 + self.h * p))

    def inv_deriv(self, level, idx=None):
        idx = self._all_idx(idx)
        h = self.h[idx]
        if level <= 0.0:
            q = np.full(idx.shape, _INF)
            return q, q
        q = np.maximum(0.0, 1.0 / (2.0 * level) - 1.0 / h)
        return q, q

    def inv_deriv_slope(self, level, idx, qmin):
        if level <= 0.0:
            return None
        return -float(np.count_nonzero(qmin > 0.0)) / (2.0 * level * level)


class LinearUtilities(SlotUtilities):
    """f_i(p) = c_i p: flat marginal, used for linear power-rate curves."""

    def __init__(self, slope):
        self.slope = np.asarray(slope, dtype=float)
        self.n = self.slope.shape[0]
        if np.any(self.slope < 0):
            raise InvalidUtilityError("slopes must be nonnegative")

    def value(self, p):
        return self.slope * p

    def deriv(self, p):
        return np.broadcast_to(self.slope, np.shape(p)).copy()

    def inv_deriv(self, level, idx=None):
        idx = self._all_idx(idx)
        c = self.slope[idx]
        qmin = np.where(c > level, _INF, 0.0)
        qmax = np.where(c >= level, _INF, 0.0)
        return qmin, qmax


class InterferedUtilities(SlotUtilities):
    """Own-rate-plus-interferee slot utility for the noise-treated branch.

    f(p) = (1/2) ln(1 + P_i / (1 + a p)) + (1/2) ln(1 + p), where P_i is the
    other transmitter's fixed power in slot i and ``a`` the cross gain into
    this user's receiver.  Concave in p for a <= 1.  The derivative is the
    generalized water level; its inverse has no closed form, so a safeguarded
    Newton iteration (with analytic curvature) is used.
    """

    def __init__(self, a, p_other):
        self.a = float(a)
        self.p_other = np.asarray(p_other, dtype=float)
        self.n = self.p_other.shape[0]

    def value(self, p):
        return 0.5 * np.log1p(self.p_other / (1.0 + self.a * p)) \
            + 0.5 * np.log1p(p)

    def deriv(self, p):
        a, po = self.a, self.p_other
        base = 1.0 + a * p
        return -a * po / (2.0 * (1.0 + po + a * p) * base) \
            + 1.0 / (2.0 * (1.0 + p))

    def _curv(self, p, po):
        a = self.a
        a1 = 1.0 + po + a * p
        a2 = 1.0 + a * p
        a3 = 1.0 + p
        return a * a / (2.0 * a2 * a2) - a * a / (2.0 * a1 * a1) \
            - 1.0 / (2.0 * a3 * a3)

    def inv_deriv(self, level, idx=None):
        idx = self._all_idx(idx)
        po = self.p_other[idx]
        a = self.a
        if level <= 0.0:
            q = np.full(idx.shape, _INF)
            return q, q
        zero = self.deriv_at_zero()[idx] <= level
        hi = max(0.0, 1.0 / (2.0 * level) - 1.0)   # f' <= 1/(2(1+p))
        if a == 0.0 or hi == 0.0:
            q = np.where(zero, 0.0, hi)
            return q, q
        # clearing denominators turns f'(x) = level into a cubic in x with a
        # single root on [0, hi]; two Newton polish steps absorb roundoff
        d2 = 2.0 * level
        c2 = d2 * (a * a + a * (2.0 + po)) - a * a
        c1 = d2 * (a * (2.0 + po) + 1.0 + po) - 2.0 * a
        c0 = d2 * (1.0 + po) - 1.0 - po * (1.0 - a)
        roots = _real_cubic_roots(d2 * a * a, c2, c1, c0)
        x = np.full(idx.shape, 0.5 * hi)
        found = np.zeros(idx.shape, dtype=bool)
        pad = 1e-9 * (1.0 + hi)
        for k in (0, 2, 1):
            cand = roots[k]
            ok = ~found & np.isfinite(cand) & (cand >= -pad) & (cand <= hi + pad)
            if np.any(ok):
                x = np.where(ok, cand, x)
                found |= ok
        x = np.minimum(np.maximum(x, 0.0), hi)
        for _ in range(2):
            a1 = 1.0 + po + a * x
            a2 = 1.0 + a * x
            a3 = 1.0 + x
            fx = 1.0 / (2.0 * a3) - a * po / (2.0 * a1 * a2) - level
            curv = a * a / (2.0 * a2 * a2) - a * a / (2.0 * a1 * a1) \
                - 1.0 / (2.0 * a3 * a3)
            x = np.minimum(np.maximum(x - fx / curv, 0.0), hi)
        bad = np.abs(self.deriv_at(idx, x) - level) > 1e-9 * (1.0 + level)
        bad &= ~zero
        if np.any(bad):
            sub = idx[bad]
            x_bad, _ = _bisect_inv(
                lambda pp: self.deriv_at(sub, pp), level, sub.shape[0],
                hi_start=max(hi, 1.0))
            x[bad] = x_bad
        q = np.where(zero, 0.0, x)
        return q, q

    def deriv_at(self, idx, p):
        po = self.p_other[idx]
        a = self.a
        base = 1.0 + a * p
        return -a * po / (2.0 * (1.0 + po + a * p) * base) \
            + 1.0 / (2.0 * (1.0 + p))

    def inv_deriv_slope(self, level, idx, qmin):
        # d q / d level summed over slots with positive power
        po = self.p_other[idx]
        active = qmin > 0.0
        if not np.any(active):
            return 0.0
        curv = self._curv(qmin[active], po[active])
        return float(np.sum(1.0 / curv))


class PiecewiseMinUtilities(SlotUtilities):
    """Slot utility for the min-form region as a function of own power p2.

    Below the threshold p_c the noise-treated branch is active; at and above
    it the decode-limited branch (1/2)ln(1 + b P_i + p) takes over.  The
    utility is the pointwise min of two concave branches, hence concave with
    a downward derivative kink at p_c.
    """

    def __init__(self, a, b, p_c, p_other):
        self.a = float(a)
        self.b = float(b)
        self.p_c = float(p_c)
        self.p_other = np.asarray(p_other, dtype=float)
        self.n = self.p_other.shape[0]
        self._branch1 = InterferedUtilities(a, p_other)

    def _expr2(self, p):
        return 0.5 * np.log1p(self.b * self.p_other + p)

    def value(self, p):
        return np.minimum(self._branch1.value(p), self._expr2(p))

    def deriv(self, p):
        d1 = self._branch1.deriv(p)
        d2 = 1.0 / (2.0 * (1.0 + self.b * self.p_other + p))
        return np.where(p >= self.p_c, d2, d1)

    def deriv_range(self, p):
        d = self.deriv(p)
        if not math.isfinite(self.p_c):
            return d, d
        at_kink = np.abs(p - self.p_c) <= 1e-9 * (1.0 + self.p_c)
        if not np.any(at_kink):
            return d, d
        d1 = self._branch1.deriv(np.full_like(np.asarray(p, dtype=float),
                                              self.p_c))
        d2 = 1.0 / (2.0 * (1.0 + self.b * self.p_other + self.p_c))
        return np.where(at_kink, d2, d), np.where(at_kink, d1, d)

    def inv_deriv(self, level, idx=None):
        idx = self._all_idx(idx)
        po = self.p_other[idx]
        if not math.isfinite(self.p_c):
            return self._branch1.inv_deriv(level, idx)
        if level <= 0.0:
            q = np.full(idx.shape, _INF)
            return q, q.copy()
        # one-sided derivatives at the kink
        pc = self.p_c
        base = 1.0 + self.a * pc
        d_hi = -self.a * po / (2.0 * (1.0 + po + self.a * pc) * base) \
            + 1.0 / (2.0 * (1.0 + pc))
        d_lo = 1.0 / (2.0 * (1.0 + self.b * po + pc))
        q = np.empty(idx.shape)
        on1 = level > d_hi            # strictly inside branch 1, q < p_c
        on2 = level < d_lo            # strictly inside branch 2, q > p_c
        at_kink = ~on1 & ~on2
        if np.any(on1):
            q1, _ = self._branch1.inv_deriv(level, idx[on1])
            q[on1] = np.minimum(q1, pc)
        if np.any(on2):
            q[on2] = np.maximum(pc, 1.0 / (2.0 * level) - 1.0 - self.b * po[on2])
        q[at_kink] = pc
        return q, q

    def inv_deriv_slope(self, level, idx, qmin):
        if level <= 0.0 or not math.isfinite(self.p_c):
            return self._branch1.inv_deriv_slope(level, idx, qmin)
        active = qmin > 0.0
        if not np.any(active):
            return 0.0
        q = qmin[active]
        po = self.p_other[idx][active]
        tol = 1e-9 * (1.0 + self.p_c)
        slope = np.zeros(q.shape)
        b1 = q < self.p_c - tol
        b2 = q > self.p_c + tol
        if np.any(b1):
            slope[b1] = 1.0 / self._branch1._curv(q[b1], po[b1])
        slope[b2] = -1.0 / (2.0 * level * level)
        return float(np.sum(slope))


class GenericSlotUtilities(SlotUtilities):
    """Utilities defined by callables; derivative inverse via bisection."""

    def __init__(self, value_fn, deriv_fn=None, n=None):
        self._value_fn = value_fn
        self._deriv_fn = deriv_fn
        self.n = n

    def value(self, p):
        return np.asarray(self._value_fn(p), dtype=float)

    def deriv(self, p):
        if self._deriv_fn is not None:
            return np.asarray(self._deriv_fn(p), dtype=float)
        step = 1e-6
        lo = np.maximum(p - step, 0.0)
        return (self.value(p + step) - self.value(lo)) / (p + step - lo)

    def inv_deriv(self, level, idx=None):
        idx = self._all_idx(idx)
        full = np.zeros(self.n)

        def d(sub):
            buf = full.copy()
            buf[idx] = sub
            return self.deriv(buf)[idx]

        return _bisect_inv(d, level, idx.shape[0])


class ProximalUtilities(SlotUtilities):
    """Wrap utilities with -eps*(p - anchor)^2, penalizing displacement."""

    def __init__(self, base: SlotUtilities, eps: float, anchor):
        self.base = base
        self.eps = float(eps)
        self.anchor = np.asarray(anchor, dtype=float)
        self.n = base.n

    def value(self, p):
        return self.base.value(p) - self.eps * (p - self.anchor) ** 2

    def deriv(self, p):
        return self.base.deriv(p) - 2.0 * self.eps * (p - self.anchor)

    def inv_deriv(self, level, idx=None):
        idx = self._all_idx(idx)
        full = np.zeros(self.n)

        def d(sub):
            buf = full.copy()
            buf[idx] = sub
            return self.deriv(buf)[idx]

        return _bisect_inv(d, level, idx.shape[0],
                           hi_start=float(np.max(self.anchor) + 1.0))


def check_utilities(utilities: SlotUtilities, p_max: float):
    """Sampled concavity check: f' must be nonincreasing on [0, p_max]."""
    grid = np.linspace(0.0, max(p_max, 1e-6), 33)
    derivs = np.stack([utilities.deriv(np.full(utilities.n, g)) for g in grid])
    if not np.all(np.isfinite(derivs)):
        raise InvalidUtilityError("utility derivative is not finite")
    slack = 1e-9 * (1.0 + np.max(np.abs(derivs)))
    if np.any(np.diff(derivs, axis=0) > slack):
        raise InvalidUtilityError(
            "utility derivative increases somewhere on the sampled grid")
    v0 = utilities.value(np.zeros(utilities.n))
    if not np.all(np.isfinite(v0)):
        raise InvalidUtilityError("utility must be finite at zero power")


# ---------------------------------------------------------------------------
# level equalization within a window
# ---------------------------------------------------------------------------

@dataclass
class _Segment:
    lo: int
    hi: int            # inclusive
    level: float
    has_pos: bool
    d0max: float       # max f'(0) over the segment


def _totals(utilities, idx, level):
    qmin, qmax = utilities.inv_deriv(level, idx)
    return qmin, qmax


def _equalize(utilities, idx, target):
    """Common-level allocation of ``target`` total power over slots ``idx``.

    Returns (powers, level).  Flat stretches of f' are resolved by assigning
    the slack to the latest slots first.
    """
    m = idx.shape[0]
    d0 = utilities.deriv_at_zero()[idx]
    if target <= 1e-15 * (1.0 + abs(target)):
        return np.zeros(m), float(np.max(d0))
    hi = float(np.max(d0))
    # find lo with total demand at least target (qmax side): descend from hi
    # through 0 and into negative levels if the utilities ever slope down
    lo = None
    level = hi
    for _ in range(200):
        if level > 0.0:
            level = 0.0 if level < 1e-280 else 0.5 * level
        elif level == 0.0:
            level = -1.0
        else:
            level = 2.0 * level
        _, qmax = _totals(utilities, idx, level)
        if np.sum(qmax) >= target:
            lo = level
            break
    if lo is None:
        raise ConvergenceError(
            "forced consumption exceeds the range of the slot utilities")
    # bracketed root search on the monotone total-demand curve: a Newton step
    # (analytic demand slope) or a secant step alternates with plain bisection
    # so the bracket provably halves every other iteration; plateaus and
    # jumps always fall back to bisection
    t_lo, t_hi = None, 0.0   # total demand at lo (>= target) and hi (<= target)
    newton_from = None       # (level, total, slope) at the last probe
    fast_turn = False
    last_err = _INF
    exit_tol = 1e-12 * (1.0 + target)
    for _ in range(200):
        width = hi - lo
        if width <= 1e-15 * max(abs(hi), abs(lo), 1e-12):
            break
        mid = None
        if fast_turn:
            if newton_from is not None:
                lvl, tot, slope = newton_from
                if np.isfinite(slope) and slope < 0.0:
                    mid = lvl - (tot - target) / slope
            if mid is None and t_lo is not None and np.isfinite(t_lo) \
                    and t_lo > t_hi:
                mid = lo + (t_lo - target) * width / (t_lo - t_hi)
            if mid is not None:
                if not (lo + 0.02 * width <= mid <= hi - 0.02 * width):
                    mid = min(max(mid, lo + 0.02 * width), hi - 0.02 * width)
        if mid is None:
            mid = 0.5 * (lo + hi)
        qmin, qmax = _totals(utilities, idx, mid)
        tmin = float(np.sum(qmin))
        err = abs(tmin - target)
        # stay on Newton while it contracts quadratically, else alternate
        # with bisection so the bracket provably halves every other step
        fast_turn = (err <= 0.25 * last_err) or not fast_turn
        last_err = err
        slope = utilities.inv_deriv_slope(mid, idx, qmin)
        newton_from = None if slope is None else (mid, tmin, slope)
        if tmin > target:
            lo, t_lo = mid, tmin
            if err <= exit_tol:
                hi = mid   # overshoot is dust; trimmed by the distributor
                break
        elif np.sum(qmax) >= target:
            lo = hi = mid
            break
        else:
            hi, t_hi = mid, tmin
            if err <= exit_tol:
                break
    qmin, _ = _totals(utilities, idx, hi)
    _, qmax = _totals(utilities, idx, lo)
    powers = qmin.copy()
    extra = target - float(np.sum(powers))
    if extra > 0.0:
        room = qmax - powers
        for k in range(m - 1, -1, -1):       # latest slots first
            take = min(room[k], extra)
            if take > 0.0:
                powers[k] += take
                extra -= take
            if extra <= 1e-18 * (1.0 + target):
                break
        if extra > 0.0:
            powers[-1] += extra
    elif extra < 0.0:
        for k in range(m - 1, -1, -1):
            take = min(powers[k], -extra)
            powers[k] -= take
            extra += take
            if extra >= -1e-18 * (1.0 + target):
                break
    return powers, float(hi)


# ---------------------------------------------------------------------------
# corridor decomposition
# ---------------------------------------------------------------------------

class _BacktrackExhausted(Exception):
    pass


def _junction_ok(left: _Segment, right: _Segment, side: str, eps: float):
    # 'U' pin (battery empty): the level may only drop forward, so the left
    # segment must be able to sit at or above the right one; 'L' pin (battery
    # full): the reverse.  All-zero segments can raise their level freely.
    dl_max = _INF if not left.has_pos else left.level
    dl_min = left.d0max if not left.has_pos else left.level
    dr_max = _INF if not right.has_pos else right.level
    dr_min = right.d0max if not right.has_pos else right.level
    if side == "U":
        return dl_max >= dr_min - eps
    return dl_min <= dr_max + eps


def _solve_corridor(utilities, tau, lower, upper, z_total, budget):
    n = lower.shape[0]
    ref = max(float(upper[-1]), 1.0)
    feas_eps = 1e-10 * ref
    p_tiny = 1e-12 * max(1.0, ref / tau)

    def solve(lo, hi, a_val, b_val):
        if budget[0] <= 0:
            raise _BacktrackExhausted("relaxation budget exhausted")
        budget[0] -= 1
        idx = np.arange(lo, hi + 1)
        target = max(0.0, (b_val - a_val) / tau)
        powers, level = _equalize(utilities, idx, target)
        d0 = utilities.deriv_at_zero()[idx]
        seg = _Segment(lo, hi, level, bool(np.any(powers > p_tiny)),
                       float(np.max(d0)))
        if hi == lo:
            return powers, [seg]
        s_interior = a_val + tau * np.cumsum(powers)[:-1]
        over = s_interior - upper[lo:hi]
        under = lower[lo:hi] - s_interior
        worst = np.maximum(over, under)
        if np.max(worst) <= feas_eps:
            return powers, [seg]
        order = np.argsort(-worst)
        tried = 0
        for k in order:
            if worst[k] <= feas_eps or tried >= 8:
                break
            tried += 1
            boundary = lo + int(k)
            side = "U" if over[k] >= under[k] else "L"
            pin = upper[boundary] if side == "U" else lower[boundary]
            try:
                p_left, seg_left = solve(lo, boundary, a_val, pin)
                p_right, seg_right = solve(boundary + 1, hi, pin, b_val)
            except _BacktrackExhausted:
                raise
            eps_lvl = 1e-9 * (1.0 + abs(seg_left[-1].level)
                              + abs(seg_right[0].level))
            if _junction_ok(seg_left[-1], seg_right[0], side, eps_lvl):
                return np.concatenate([p_left, p_right]), seg_left + seg_right
        raise _BacktrackExhausted(
            f"no junction-consistent pin at window [{lo}, {hi}]")

    return solve(0, n - 1, 0.0, z_total)


# ---------------------------------------------------------------------------
# KKT certificate
# ---------------------------------------------------------------------------

@dataclass
class KKTCertificate:
    """Multipliers reconstructed from the active-constraint structure.

    ``lam`` (energy causality) and ``mu`` (battery capacity) are in marginal
    rate units; ``eta`` (nonnegativity) carries the tau scaling of the
    objective.  ``water_levels`` is the per-slot generalized level the
    stationarity equations imply.  Residuals at (or below) solver tolerance
    certify optimality of the concave program.
    """

    lam: np.ndarray
    mu: np.ndarray
    eta: np.ndarray
    water_levels: np.ndarray
    stationarity_residual: float
    complementarity_residual: float


def verify_kkt(policy_row, utilities: SlotUtilities, harvest: HarvestProfile,
               grid: TimeGrid, binding_tol=None) -> KKTCertificate:
    """Reconstruct multipliers for a policy and report KKT residuals.

    The level profile is rebuilt backward from the deadline: positive-power
    slots pin the level at f'(p); level changes between slots are projected
    onto what the active constraints allow (up only where the battery is
    empty, down only where full).  The worst projection distance is the
    stationarity residual.
    """
    p = np.asarray(policy_row, dtype=float)
    n = grid.N
    if p.shape != (n,):
        raise InfeasiblePolicyError(f"policy row must have shape ({n},)")
    tau = grid.tau
    scale_e = max(1.0, harvest.capacity)
    if binding_tol is None:
        binding_tol = 1e-7 * scale_e
    lower, upper = energy_bounds(harvest, tau)
    cum_e = np.cumsum(harvest.arrivals)
    l_raw = np.empty(n)
    l_raw[:-1] = cum_e[1:] - harvest.capacity if n > 1 else 0.0
    l_raw[-1] = -_INF                      # no capacity bound after the end
    s = tau * np.cumsum(p)
    feas_tol = 1e-6 * scale_e
    worst = max(float(np.max(s - upper)),
                float(np.max(l_raw[:-1] - s[:-1])) if n > 1 else 0.0,
                float(np.max(-p)) * tau)
    if worst > feas_tol:
        raise InfeasiblePolicyError(
            f"policy violates the energy corridor by {worst:.3g}",
            report={"violation": worst})

    g_lo, g_hi = utilities.deriv_range(np.maximum(p, 0.0))
    g_lo, g_hi = np.atleast_1d(g_lo), np.atleast_1d(g_hi)
    pos = p > 1e-11 * max(1.0, scale_e / tau)
    empty = (upper - s) <= binding_tol
    full = np.zeros(n, dtype=bool)
    if n > 1:
        full[:-1] = (s[:-1] - l_raw[:-1]) <= binding_tol

    # backward pass: propagate the interval of admissible levels.  The level
    # may rise across boundary k only while the battery is empty there, and
    # fall only while it is full.  A positive-power slot requires the level
    # to lie in its derivative interval (a point unless the utility has a
    # kink at p); an idle slot only bounds the level below.
    stat_resid = 0.0
    intervals = np.empty((n, 2))
    j_lo, j_hi = 0.0, 0.0
    for k in range(n - 1, -1, -1):
        b_lo = -_INF if (k < n - 1 and full[k]) else j_lo
        b_hi = _INF if empty[k] else j_hi
        if pos[k]:
            i_lo, i_hi = max(g_lo[k], b_lo), min(g_hi[k], b_hi)
            if i_lo > i_hi:
                gap = max(g_lo[k] - b_hi, b_lo - g_hi[k])
                stat_resid = max(stat_resid, gap)
                d = b_hi if g_lo[k] > b_hi else b_lo
                i_lo = i_hi = d
        else:
            if b_hi >= g_lo[k]:
                i_lo, i_hi = max(g_lo[k], b_lo), b_hi
            else:
                stat_resid = max(stat_resid, g_lo[k] - b_hi)
                i_lo = i_hi = b_hi
        intervals[k] = (i_lo, i_hi)
        j_lo, j_hi = i_lo, i_hi

    # forward pass: concrete levels, moving only as the constraints allow and
    # as little as possible (smallest multipliers)
    lam = np.zeros(n)
    mu = np.zeros(max(n - 1, 0))
    eta = np.zeros(n)
    levels = np.zeros(n)
    d_prev = None
    for k in range(n):
        i_lo, i_hi = intervals[k]
        if d_prev is None:
            d = i_lo if math.isfinite(i_lo) else min(i_hi, 0.0)
        else:
            # increment d_prev - d must lie in the allowed set of boundary k-1
            a_lo = -_INF if (k - 1 < n - 1 and full[k - 1]) else 0.0
            a_hi = _INF if empty[k - 1] else 0.0
            r_lo, r_hi = d_prev - a_hi, d_prev - a_lo
            lo, hi = max(i_lo, r_lo), min(i_hi, r_hi)
            if lo > hi:   # only via accumulated residual dust
                lo = hi = min(max(d_prev, i_lo), i_hi)
            d = min(max(d_prev, lo), hi)
            delta = d_prev - d
            if empty[k - 1]:
                lam[k - 1] = max(0.0, delta)
            if k - 1 < n - 1 and full[k - 1]:
                mu[k - 1] = max(0.0, -delta)
        if not pos[k]:
            eta[k] = tau * max(0.0, d - g_lo[k])
        levels[k] = d
        d_prev = d
    # closing boundary at the deadline
    if empty[n - 1]:
        lam[n - 1] = max(0.0, d_prev)
    elif d_prev > binding_tol:
        stat_resid = max(stat_resid, d_prev)

    comp = 0.0
    for k in range(n):
        comp = max(comp, lam[k] * max(0.0, upper[k] - s[k]))
        if k < n - 1:
            comp = max(comp, mu[k] * max(0.0, s[k] - l_raw[k]))
        comp = max(comp, eta[k] * max(0.0, p[k]))
    return KKTCertificate(lam=lam, mu=mu, eta=eta, water_levels=levels,
                          stationarity_residual=float(stat_resid),
                          complementarity_residual=float(comp))


# ---------------------------------------------------------------------------
# solver entry point
# ---------------------------------------------------------------------------

def _scipy_fallback(utilities, tau, lower, upper, x0):
    from scipy.optimize import LinearConstraint, minimize

    n = lower.shape[0]
    a_mat = tau * np.tril(np.ones((n, n)))
    con = LinearConstraint(a_mat, lower, upper)

    def neg_obj(p):
        return -tau * float(np.sum(utilities.value(np.maximum(p, 0.0))))

    def neg_grad(p):
        return -tau * utilities.deriv(np.maximum(p, 0.0))

    res = minimize(neg_obj, x0, jac=neg_grad, method="trust-constr",
                   bounds=[(0.0, None)] * n, constraints=[con],
                   options={"xtol": 1e-14, "gtol": 1e-12, "maxiter": 2000})
    return np.maximum(res.x, 0.0)


def solve_single_user(utilities: SlotUtilities, harvest: HarvestProfile,
                      grid: TimeGrid, tol: float = 1e-7):
    """Optimal own-power schedule for one user; returns (powers, certificate).

    The certificate is produced by ``verify_kkt`` on the returned policy; the
    post-condition is residuals at or below ``tol``, independent of how the
    policy was constructed.
    """
    n = grid.N
    if utilities.n != n:
        raise InvalidUtilityError(
            f"{utilities.n} slot utilities for {n} slots")
    tau = grid.tau
    total_power = float(np.sum(harvest.arrivals)) / tau
    check_utilities(utilities, total_power)
    lower, upper = energy_bounds(harvest, tau)
    # spend everything unless marginals hit zero before the harvest runs out
    _, qmax0 = utilities.inv_deriv(0.0)
    cap = tau * float(np.sum(qmax0)) if np.all(np.isfinite(qmax0)) else _INF
    z_total = min(float(upper[-1]), cap)
    budget = [max(60, 50 * n)]
    powers = None
    try:
        powers, _segments = _solve_corridor(utilities, tau, lower, upper,
                                            z_total, budget)
    except _BacktrackExhausted:
        powers = None
    if powers is not None:
        cert = verify_kkt(powers, utilities, harvest, grid)
        if (cert.stationarity_residual <= tol
                and cert.complementarity_residual <= tol):
            return powers, cert
        best = (powers, cert)
    else:
        best = None
    x0 = best[0] if best is not None else np.zeros(n)
    powers = _scipy_fallback(utilities, tau, lower, upper, x0)
    cert = verify_kkt(powers, utilities, harvest, grid)
    if (cert.stationarity_residual <= tol
            and cert.complementarity_residual <= tol):
        return powers, cert
    if best is not None and (best[1].stationarity_residual
                             < cert.stationarity_residual):
        powers, cert = best
    raise ConvergenceError(
        "single-user solve did not reach the requested KKT residual",
        best_policy=powers, residual=cert.stationarity_residual)
