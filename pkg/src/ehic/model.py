"""Problem instances: time grid, per-user profiles, validation, feasibility.

A scenario bundles a slotted time grid, two users (each with an energy
harvest profile and a data-arrival profile or an infinite backlog), and the
normalized channel.  Three linear constraint families govern any power
policy p[user][slot]:

* energy causality: cumulative consumed energy never exceeds cumulative
  harvested energy,
* battery capacity: after each slot there must be room for the next harvest
  (equivalently, cumulative consumption is bounded below),
* data causality: cumulative departed bits never exceed cumulative arrivals
  (skipped for infinite-backlog users).

All energies/powers are in normalized units and all rates in nats; physical
unit conversion lives in ``rates.normalize_channel`` and the CLI.  Types are
immutable after construction and all operations are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import rates as _rates
from .errors import InvalidInputError, ShapeError


def _frozen_array(values, name):
    arr = np.asarray(values, dtype=float).copy()
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be a 1-D vector")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeGrid:
    """Slot count N and slot duration tau (seconds); deadline T = N*tau."""

    N: int
    tau: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise InvalidInputError("slot count must be a positive integer")
        if self.tau <= 0:
            raise InvalidInputError("slot duration must be positive")

    @property
    def T(self) -> float:
        return self.N * self.tau


@dataclass(frozen=True)
class HarvestProfile:
    """Per-slot energy arrivals and the battery capacity, normalized units."""

    arrivals: np.ndarray
    capacity: float

    def __post_init__(self):
        object.__setattr__(self, "arrivals",
                           _frozen_array(self.arrivals, "energy arrivals"))
        if self.capacity <= 0:
            raise InvalidInputError("battery capacity must be positive")
        if np.any(self.arrivals < 0):
            raise InvalidInputError("energy arrivals must be nonnegative")


@dataclass(frozen=True)
class DataProfile:
    """Per-slot data arrivals (rate units x time), or an infinite backlog."""

    arrivals: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.arrivals is not None:
            object.__setattr__(self, "arrivals",
                               _frozen_array(self.arrivals, "data arrivals"))
            if np.any(self.arrivals < 0):
                raise InvalidInputError("data arrivals must be nonnegative")

    @classmethod
    def infinite(cls) -> "DataProfile":
        return cls(arrivals=None)

    @property
    def is_infinite(self) -> bool:
        return self.arrivals is None


@dataclass(frozen=True)
class User:
    harvest: HarvestProfile
    data: DataProfile


@dataclass(frozen=True)
class Scenario:
    """A full problem instance: grid, two users and the normalized channel."""

    grid: TimeGrid
    users: tuple
    channel: _rates.ChannelParams

    def __post_init__(self):
        if len(self.users) != 2:
            raise ShapeError("a scenario has exactly two users")
        object.__setattr__(self, "users", tuple(self.users))

    @property
    def peak_powers(self) -> tuple:
        """Largest single-slot powers (battery capacity over tau) per user."""
        return tuple(u.harvest.capacity / self.grid.tau for u in self.users)

    def harvest_matrix(self) -> np.ndarray:
        return np.vstack([u.harvest.arrivals for u in self.users])


def validate_scenario(raw: Scenario) -> Scenario:
    """Check shapes/signs and truncate harvests at the battery capacity.

    An arrival larger than the battery is lost on arrival, so it is clipped
    here once; the operation is idempotent.
    """
    n = raw.grid.N
    users = []
    for j, user in enumerate(raw.users):
        e = user.harvest.arrivals
        if e.shape[0] != n:
            raise ShapeError(
                f"user {j + 1}: {e.shape[0]} energy arrivals for {n} slots")
        if not user.data.is_infinite and user.data.arrivals.shape[0] != n:
            raise ShapeError(
                f"user {j + 1}: {user.data.arrivals.shape[0]} data arrivals "
                f"for {n} slots")
        clipped = np.minimum(e, user.harvest.capacity)
        users.append(User(HarvestProfile(clipped, user.harvest.capacity),
                          user.data))
    return replace(raw, users=tuple(users))


def as_policy(policy, n_slots: int) -> np.ndarray:
    """Coerce to a (2, N) nonnegative power matrix."""
    p = np.asarray(policy, dtype=float)
    if p.ndim == 1:
        p = p[np.newaxis, :]
    if p.ndim != 2 or p.shape[1] != n_slots or p.shape[0] != 2:
        raise ShapeError(f"policy must have shape (2, {n_slots}), got {p.shape}")
    return p


@dataclass(frozen=True)
class WorstViolation:
    magnitude: float
    user: Optional[int]
    slot: Optional[int]


@dataclass(frozen=True)
class FeasibilityReport:
    """Worst violation of each constraint family and the overall verdict."""

    energy_causality: WorstViolation
    battery_capacity: WorstViolation
    data_causality: WorstViolation
    tol: float
    feasible: bool


def _worst(violations: np.ndarray) -> WorstViolation:
    # violations: (2, N) array of nonnegative magnitudes
    if violations.size == 0 or np.max(violations) <= 0.0:
        return WorstViolation(0.0, None, None)
    user, slot = np.unravel_index(np.argmax(violations), violations.shape)
    return WorstViolation(float(violations[user, slot]), int(user), int(slot))


def cumulative_consumption(policy_row: np.ndarray, tau: float) -> np.ndarray:
    return tau * np.cumsum(policy_row)


def energy_bounds(harvest: HarvestProfile, tau: float):
    """Corridor for cumulative consumption S_n: lower L (battery) and upper U.

    U_n is the cumulative harvest through slot n.  L_n keeps room for the
    next arrival (capacity constraint); there is no lower bound after the
    final slot, so L[-1] = 0.
    """
    cum_e = np.cumsum(harvest.arrivals)
    upper = cum_e.copy()
    lower = np.zeros_like(cum_e)
    if cum_e.shape[0] > 1:
        lower[:-1] = np.maximum(0.0, cum_e[1:] - harvest.capacity)
    return lower, upper


def feasibility_report(policy, scenario: Scenario, rate_model,
                       tol: float = 1e-9) -> FeasibilityReport:
    """Evaluate all three constraint families for a candidate policy."""
    n = scenario.grid.N
    tau = scenario.grid.tau
    p = as_policy(policy, n)
    energy = np.zeros((2, n))
    battery = np.zeros((2, n))
    data = np.zeros((2, n))
    r1, r2 = rate_model.user_rates(p[0], p[1])
    user_bits = np.vstack([np.atleast_1d(r1), np.atleast_1d(r2)]) * tau
    for j, user in enumerate(scenario.users):
        cum_e = np.cumsum(user.harvest.arrivals)
        s = cumulative_consumption(p[j], tau)
        energy[j] = np.maximum(0.0, s - cum_e)
        # battery check only applies where a next arrival exists
        if n > 1:
            battery[j, :-1] = np.maximum(
                0.0, cum_e[1:] - user.harvest.capacity - s[:-1])
        if not user.data.is_infinite:
            data[j] = np.maximum(
                0.0, np.cumsum(user_bits[j]) - np.cumsum(user.data.arrivals))
    worst_e, worst_b, worst_d = _worst(energy), _worst(battery), _worst(data)
    feasible = max(worst_e.magnitude, worst_b.magnitude,
                   worst_d.magnitude) <= tol
    return FeasibilityReport(worst_e, worst_b, worst_d, tol, feasible)


def cumulative_departure(policy, rate_model, grid: TimeGrid) -> np.ndarray:
    """Cumulative sum throughput tau*r per slot, in nats (nondecreasing)."""
    p = as_policy(policy, grid.N)
    r = np.atleast_1d(rate_model.sum_rate(p[0], p[1]))
    return grid.tau * np.cumsum(r)


# -- scenario file schema ------------------------------------------------------
#
# {
#   "tau": 1.0, "N": 20,
#   "users": [
#     {"E": [...N...], "Emax": 10.0, "B": [...N...] | "infinite"},
#     {...}
#   ],
#   "channel": {"a": 0.9, "b": 2.0}
#           | {"physical": {"h11_db": -100, "h22_db": -100, "h12_db": -101.55,
#                            "h21_db": -93.01, "noise_psd": 1e-19,
#                            "bandwidth": 1e6}}
# }
#
# With a "physical" channel block, E/Emax are in millijoules and are converted
# to normalized units with the per-user energy scale from normalize_channel.


def scenario_from_dict(doc: dict):
    """Parse and validate a scenario document.

    Returns ``(scenario, info)`` where ``info`` records unit conversion
    factors (empty for already-normalized inputs).
    """
    if not isinstance(doc, dict):
        raise InvalidInputError("scenario document must be a JSON object")
    for key in ("tau", "N", "users", "channel"):
        if key not in doc:
            raise InvalidInputError(f"scenario document missing '{key}'")
    grid = TimeGrid(N=int(doc["N"]), tau=float(doc["tau"]))
    if not isinstance(doc["users"], (list, tuple)) or len(doc["users"]) != 2:
        raise ShapeError("'users' must list exactly two users")
    channel_doc = doc["channel"]
    info = {}
    if "physical" in channel_doc:
        phys = channel_doc["physical"]
        try:
            norm = _rates.normalize_channel(
                h11_db=float(phys["h11_db"]), h22_db=float(phys["h22_db"]),
                h12_db=float(phys["h12_db"]), h21_db=float(phys["h21_db"]),
                noise_psd=float(phys["noise_psd"]),
                bandwidth=float(phys["bandwidth"]))
        except KeyError as exc:
            raise InvalidInputError(f"physical channel missing {exc}") from exc
        channel = norm.params
        # scenario energies are in mJ; scale converts J -> normalized units
        energy_scale = tuple(s * 1e-3 for s in norm.energy_scale)
        info = {"a": channel.a, "b": channel.b,
                "energy_scale_per_mj": energy_scale,
                "channel_uses_per_slot": 2.0 * float(phys["bandwidth"]) * grid.tau}
    else:
        if "a" not in channel_doc or "b" not in channel_doc:
            raise InvalidInputError("channel must give {a, b} or a physical block")
        channel = _rates.ChannelParams(float(channel_doc["a"]),
                                       float(channel_doc["b"]))
        energy_scale = (1.0, 1.0)
    users = []
    for j, u in enumerate(doc["users"]):
        for key in ("E", "Emax"):
            if key not in u:
                raise InvalidInputError(f"user {j + 1} missing '{key}'")
        e = np.asarray(u["E"], dtype=float) * energy_scale[j]
        emax = float(u["Emax"]) * energy_scale[j]
        b_doc = u.get("B", "infinite")
        if isinstance(b_doc, str):
            if b_doc != "infinite":
                raise InvalidInputError(
                    f"user {j + 1}: B must be a vector or 'infinite'")
            data = DataProfile.infinite()
        else:
            data = DataProfile(np.asarray(b_doc, dtype=float))
        users.append(User(HarvestProfile(e, emax), data))
    scenario = validate_scenario(Scenario(grid, tuple(users), channel))
    return scenario, info


def scenario_to_dict(scenario: Scenario) -> dict:
    out = {
        "tau": scenario.grid.tau,
        "N": scenario.grid.N,
        "users": [],
        "channel": {"a": scenario.channel.a, "b": scenario.channel.b},
    }
    for user in scenario.users:
        doc = {"E": [float(x) for x in user.harvest.arrivals],
               "Emax": user.harvest.capacity}
        doc["B"] = ("infinite" if user.data.is_infinite
                    else [float(x) for x in user.data.arrivals])
        out["users"].append(doc)
    return out
