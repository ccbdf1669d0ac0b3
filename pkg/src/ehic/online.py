"""Online and distributed baselines: finite-horizon DP, naive, single-link.

The dynamic program discretizes battery levels (and data queues when
arrivals are finite) on uniform grids and sweeps backward over slots,
maximizing the per-slot throughput plus the expected value of the next
state under the arrival distributions.  Next-state values between grid
nodes are interpolated multilinearly; battery overflow at an arrival is
truncated, exactly like the physical battery.

The naive baseline transmits at the mean harvest rate whenever the battery
allows and drains the battery otherwise.  The distributed baseline runs the
single-user water-filling solver against an assumed constant interference
power (by default the other user's mean harvest rate), consuming no
information about the other user's actual arrivals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import InvalidInputError
from .iterative import build_subproblem
from .model import Scenario
from .rates import RateModel
from .single_user import solve_single_user


@dataclass(frozen=True)
class StateGrid:
    """Uniform battery (and optional data-queue) grids; all include 0."""

    e1: np.ndarray
    e2: np.ndarray
    b1: Optional[np.ndarray] = None
    b2: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("e1", "e2", "b1", "b2"):
            g = getattr(self, name)
            if g is None:
                continue
            g = np.asarray(g, dtype=float)
            if g.ndim != 1 or g.shape[0] < 2:
                raise InvalidInputError(f"grid {name} needs at least 2 points")
            if g[0] != 0.0 or np.any(np.diff(g) <= 0):
                raise InvalidInputError(f"grid {name} must start at 0 and increase")
            object.__setattr__(self, name, g)

    @property
    def with_data(self) -> bool:
        return self.b1 is not None

    @classmethod
    def uniform(cls, capacity1, capacity2, points, b_cap1=None, b_cap2=None,
                b_points=None):
        e1 = np.linspace(0.0, capacity1, points)
        e2 = np.linspace(0.0, capacity2, points)
        if b_cap1 is None:
            return cls(e1, e2)
        return cls(e1, e2, np.linspace(0.0, b_cap1, b_points),
                   np.linspace(0.0, b_cap2, b_points))


@dataclass(frozen=True)
class ArrivalDistribution:
    """Finite-support per-slot arrival laws for energy (and data) per user.

    ``energy[j][i]`` is a (values, probabilities) pair for user j at slot i;
    ``data`` is None in infinite-backlog mode.
    """

    n_slots: int
    energy: tuple
    data: Optional[tuple] = None

    def __post_init__(self):
        for per_user in (self.energy,) + ((self.data,) if self.data else ()):
            for slots in per_user:
                if len(slots) != self.n_slots:
                    raise InvalidInputError("distribution slot count mismatch")
                for values, probs in slots:
                    values = np.asarray(values, dtype=float)
                    probs = np.asarray(probs, dtype=float)
                    if np.any(values < 0):
                        raise InvalidInputError("arrival values must be >= 0")
                    if abs(float(np.sum(probs)) - 1.0) > 1e-12:
                        raise InvalidInputError("probabilities must sum to 1")

    @classmethod
    def deterministic(cls, scenario: Scenario) -> "ArrivalDistribution":
        n = scenario.grid.N
        energy = tuple(
            tuple((np.array([e]), np.array([1.0]))
                  for e in u.harvest.arrivals)
            for u in scenario.users)
        if all(u.data.is_infinite for u in scenario.users):
            return cls(n, energy)
        data = tuple(
            tuple((np.array([b]), np.array([1.0]))
                  for b in (u.data.arrivals if not u.data.is_infinite
                            else np.zeros(n)))
            for u in scenario.users)
        return cls(n, energy, data)

    def queue_cap(self, user: int) -> float:
        """Grid cap for the data queue: mean total plus three std devs."""
        total_mean, total_var = 0.0, 0.0
        for values, probs in self.data[user]:
            values = np.asarray(values, dtype=float)
            probs = np.asarray(probs, dtype=float)
            m = float(np.sum(values * probs))
            total_mean += m
            total_var += float(np.sum(probs * (values - m) ** 2))
        return total_mean + 3.0 * np.sqrt(total_var)


@dataclass
class DPResult:
    """Backward-induction output: J over states per slot, argmax actions."""

    values: np.ndarray       # (N+1,) + state shape
    policies: np.ndarray     # (N,) + state shape + (2,)
    grid: StateGrid
    tau: float
    action_warning: bool = False


def _joint_outcomes(dists):
    """Cross product of per-user (values, probs) supports."""
    combos = []
    for v1, p1 in zip(*[np.asarray(x) for x in dists[0]]):
        for v2, p2 in zip(*[np.asarray(x) for x in dists[1]]):
            combos.append(((float(v1), float(v2)), float(p1) * float(p2)))
    return combos


def _slot_outcomes(stats, i):
    e = (stats.energy[0][i], stats.energy[1][i])
    energy_combos = _joint_outcomes(e)
    if stats.data is None:
        return [(ev, None, p) for ev, p in energy_combos]
    d = (stats.data[0][i], stats.data[1][i])
    data_combos = _joint_outcomes(d)
    out = []
    for ev, pe in energy_combos:
        for dv, pd in data_combos:
            out.append((ev, dv, pe * pd))
    return out


def value_iteration(stats: ArrivalDistribution, rate_model: RateModel,
                    grid: StateGrid, tau: float = 1.0) -> DPResult:
    """Solve the finite-horizon control problem on the discretized state.

    State: per-user battery level after the slot's arrival (and data queue
    length in data mode).  Actions are powers on the battery-grid resolution,
    restricted so consumption never exceeds the battery and departures never
    exceed the queue.  The terminal value is zero.
    """
    n = stats.n_slots
    axes = [grid.e1, grid.e2] + ([grid.b1, grid.b2] if grid.with_data else [])
    shape = tuple(len(ax) for ax in axes)
    mesh = np.meshgrid(*axes, indexing="ij")
    flat = [m.ravel() for m in mesh]
    n_states = flat[0].shape[0]

    de1 = grid.e1[1] - grid.e1[0]
    de2 = grid.e2[1] - grid.e2[0]
    acts1 = grid.e1 / tau
    acts2 = grid.e2 / tau
    if de1 <= 0 or de2 <= 0:
        raise InvalidInputError("battery grids must be increasing")

    values = np.zeros((n + 1,) + shape)
    policies = np.zeros((n,) + shape + (2,))
    e1f, e2f = flat[0], flat[1]
    b1f = flat[2] if grid.with_data else None
    b2f = flat[3] if grid.with_data else None

    for i in range(n - 1, -1, -1):
        interp = RegularGridInterpolator(axes, values[i + 1],
                                         bounds_error=False, fill_value=None)
        outcomes = _slot_outcomes(stats, i)
        best = np.full(n_states, -np.inf)
        best_act = np.zeros((n_states, 2))
        for p1 in acts1:
            feas1 = e1f + 1e-12 >= p1 * tau
            if not np.any(feas1):
                continue
            for p2 in acts2:
                feas = feas1 & (e2f + 1e-12 >= p2 * tau)
                if not np.any(feas):
                    continue
                r_sum = float(rate_model.sum_rate(p1, p2))
                if grid.with_data:
                    r1, r2 = rate_model.user_rates(p1, p2)
                    feas = feas & (tau * r1 <= b1f + 1e-9) \
                                & (tau * r2 <= b2f + 1e-9)
                    if not np.any(feas):
                        continue
                idx = np.nonzero(feas)[0]
                total = np.full(idx.shape[0], tau * r_sum)
                for ev, dv, prob in outcomes:
                    ne1 = np.clip(e1f[idx] - p1 * tau + ev[0], 0.0, grid.e1[-1])
                    ne2 = np.clip(e2f[idx] - p2 * tau + ev[1], 0.0, grid.e2[-1])
                    cols = [ne1, ne2]
                    if grid.with_data:
                        nb1 = np.clip(b1f[idx] - tau * r1 + dv[0],
                                      0.0, grid.b1[-1])
                        nb2 = np.clip(b2f[idx] - tau * r2 + dv[1],
                                      0.0, grid.b2[-1])
                        cols += [nb1, nb2]
                    total += prob * interp(np.column_stack(cols))
                better = total > best[idx]
                sel = idx[better]
                best[sel] = total[better]
                best_act[sel, 0] = p1
                best_act[sel, 1] = p2
        values[i] = best.reshape(shape)
        policies[i] = best_act.reshape(shape + (2,))
    return DPResult(values=values, policies=policies, grid=grid, tau=tau)


def rollout_table(result: DPResult, scenario: Scenario,
                  rate_model: RateModel):
    """Drive the DP policy along a deterministic scenario; returns
    (policy, total throughput in nats)."""
    n = scenario.grid.N
    tau = scenario.grid.tau
    grid = result.grid
    caps = (grid.e1[-1], grid.e2[-1])
    e = [min(scenario.users[j].harvest.arrivals[0], caps[j]) for j in range(2)]
    b = None
    if grid.with_data:
        b = [0.0, 0.0]
        b_grids = (grid.b1, grid.b2)
        for j in range(2):
            if not scenario.users[j].data.is_infinite:
                b[j] = min(scenario.users[j].data.arrivals[0], b_grids[j][-1])
    policy = np.zeros((2, n))
    total = 0.0
    axes = [grid.e1, grid.e2] + ([grid.b1, grid.b2] if grid.with_data else [])
    for i in range(n):
        interp = RegularGridInterpolator(axes, result.policies[i],
                                         bounds_error=False, fill_value=None)
        state = [e[0], e[1]] + (b if b is not None else [])
        act = np.asarray(interp(np.array(state)[np.newaxis, :]))[0]
        p1 = float(min(max(act[0], 0.0), e[0] / tau))
        p2 = float(min(max(act[1], 0.0), e[1] / tau))
        if b is not None:
            p1, p2 = _clamp_departures(rate_model, tau, p1, p2, b)
        policy[:, i] = (p1, p2)
        total += tau * float(rate_model.sum_rate(p1, p2))
        if i < n - 1:
            for j, p in enumerate((p1, p2)):
                nxt = scenario.users[j].harvest.arrivals[i + 1]
                e[j] = min(e[j] - p * tau + nxt, caps[j])
            if b is not None:
                r1, r2 = rate_model.user_rates(p1, p2)
                for j, r in enumerate((r1, r2)):
                    arr = (0.0 if scenario.users[j].data.is_infinite
                           else scenario.users[j].data.arrivals[i + 1])
                    b[j] = min(max(b[j] - tau * float(r), 0.0) + arr,
                               axes[2 + j][-1])
    return policy, total


def _clamp_departures(rate_model, tau, p1, p2, queues, passes=3):
    """Shrink powers until each user's departures fit its data queue.

    Interpolated table actions can overshoot between queue grid nodes; own
    rates increase in own power, so a per-user bisection restores the same
    restriction the DP imposed on grid states.
    """
    p = [p1, p2]
    for _ in range(passes):
        ok = True
        for j in range(2):
            r = rate_model.user_rates(p[0], p[1])[j]
            if tau * r <= queues[j] + 1e-12:
                continue
            ok = False
            lo, hi = 0.0, p[j]
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                trial = [mid, p[1]] if j == 0 else [p[0], mid]
                if tau * rate_model.user_rates(trial[0], trial[1])[j] \
                        > queues[j]:
                    hi = mid
                else:
                    lo = mid
            p[j] = lo
        if ok:
            break
    return p[0], p[1]


def naive_policy(scenario: Scenario) -> np.ndarray:
    """Constant transmission at the mean harvest rate, else drain the battery."""
    n, tau = scenario.grid.N, scenario.grid.tau
    policy = np.zeros((2, n))
    for j, user in enumerate(scenario.users):
        e = user.harvest.arrivals
        target = float(np.sum(e)) / (n * tau)
        bat = 0.0
        for i in range(n):
            bat = min(bat + e[i], user.harvest.capacity)
            p = target if bat >= target * tau else bat / tau
            policy[j, i] = p
            bat -= p * tau
    return policy


def distributed_policy(scenario: Scenario, rate_model: RateModel, user: int,
                       other_mean_power: Optional[float] = None) -> np.ndarray:
    """Single-link water-filling against an assumed constant interferer.

    Uses only the user's own scenario slice; the other transmitter enters as
    a fixed power in every slot (default: its mean harvest rate), so no actual
    arrival information of the other user is consumed.
    """
    n, tau = scenario.grid.N, scenario.grid.tau
    if other_mean_power is None:
        other = scenario.users[1 - user].harvest.arrivals
        other_mean_power = float(np.sum(other)) / (n * tau)
    if other_mean_power < 0:
        raise InvalidInputError("assumed interference power must be >= 0")
    utils = build_subproblem(scenario, rate_model, user,
                             np.full(n, other_mean_power))
    row, _cert = solve_single_user(utils, scenario.users[user].harvest,
                                   scenario.grid)
    return row


def export_tables_csv(result: DPResult, path):
    """Dump state coordinates with the argmax action and value per slot."""
    import csv
    import os

    os.makedirs(os.path.dirname(os.fspath(path)) or ".", exist_ok=True)
    grid = result.grid
    axes = [grid.e1, grid.e2] + ([grid.b1, grid.b2] if grid.with_data else [])
    names = ["e1", "e2"] + (["b1", "b2"] if grid.with_data else [])
    mesh = np.meshgrid(*axes, indexing="ij")
    flat = [m.ravel() for m in mesh]
    n = result.policies.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slot"] + names + ["p1", "p2", "value"])
        for i in range(n):
            acts = result.policies[i].reshape(-1, 2)
            vals = result.values[i].ravel()
            for k in range(flat[0].shape[0]):
                writer.writerow([i + 1]
                                + [f"{c[k]:.12g}" for c in flat]
                                + [f"{acts[k, 0]:.12g}", f"{acts[k, 1]:.12g}",
                                   f"{vals[k]:.12g}"])
