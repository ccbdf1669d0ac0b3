"""Exhaustive quantized search over small instances: the testing ground truth.

Powers live on the lattice {0, dp, 2*dp, ...}; energies are tracked in integer
multiples of dp*tau, with arrivals snapped DOWN to the lattice so the search
never fabricates energy.  Two search modes:

* infinite backlog: a dynamic program over joint battery levels.  Battery
  overflow is excluded (it is never profitable without data constraints), so
  returned policies satisfy the full energy corridor.
* finite data arrivals: layered enumeration of (battery, per-user bits) states
  with exact floating-point bit accounting, since cumulative bits are not
  lattice-valued.  Battery overflow is allowed here and simply loses energy
  (truncation), which is what makes blocked-harvest instances well-posed.

Both modes are deterministic: among ties the lexicographically smallest
action sequence wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import OracleSizeError
from .model import Scenario

_NEG = -math.inf


@dataclass(frozen=True)
class OracleOptions:
    power_grid_step: float = 0.05
    max_enumeration: int = 50_000_000

    def __post_init__(self):
        if self.power_grid_step <= 0:
            raise ValueError("power grid step must be positive")


def _snap_units(x: float, quantum: float) -> int:
    return int(math.floor(x / quantum + 1e-9))


def brute_force(scenario: Scenario, rate_model, opts: OracleOptions = None):
    """Best quantized feasible policy and its exact objective under the model.

    Raises ``OracleSizeError`` with a size estimate when the search space
    exceeds ``opts.max_enumeration``.
    """
    if opts is None:
        opts = OracleOptions()
    data_mode = any(not u.data.is_infinite for u in scenario.users)
    if data_mode:
        return _search_with_data(scenario, rate_model, opts)
    return _search_batteries(scenario, rate_model, opts)


def _lattice(scenario: Scenario, opts: OracleOptions):
    tau = scenario.grid.tau
    quantum = opts.power_grid_step * tau
    caps = [_snap_units(u.harvest.capacity, quantum) for u in scenario.users]
    arrivals = [np.array([_snap_units(e, quantum) for e in u.harvest.arrivals],
                         dtype=int) for u in scenario.users]
    return quantum, caps, arrivals


def _rate_tables(rate_model, caps, dp):
    s1 = np.arange(caps[0] + 1) * dp
    s2 = np.arange(caps[1] + 1) * dp
    g1, g2 = np.meshgrid(s1, s2, indexing="ij")
    total = np.asarray(rate_model.sum_rate(g1, g2))
    return total


def _search_batteries(scenario, rate_model, opts):
    n = scenario.grid.N
    tau = scenario.grid.tau
    dp = opts.power_grid_step
    quantum, caps, arr = _lattice(scenario, opts)
    k1, k2 = caps
    states = (k1 + 1) * (k2 + 1)
    estimate = states * states * n
    if estimate > opts.max_enumeration:
        raise OracleSizeError(
            f"battery DP needs about {estimate:.2e} transitions "
            f"(cap {opts.max_enumeration:.2e})", size_estimate=estimate)
    r_total = tau * _rate_tables(rate_model, caps, dp)

    value = np.zeros((k1 + 1, k2 + 1))
    actions = []
    for i in range(n - 1, -1, -1):
        new_val = np.full((k1 + 1, k2 + 1), _NEG)
        act = np.zeros((k1 + 1, k2 + 1, 2), dtype=np.int32)
        last = i == n - 1
        a1n = 0 if last else int(arr[0][i + 1])
        a2n = 0 if last else int(arr[1][i + 1])
        for s1 in range(k1 + 1):
            # battery range for which spending s1 is feasible: b >= s1, and
            # room for the next arrival (no overflow) unless this is the end
            lo1, hi1 = s1, k1 if last else min(k1, k1 + s1 - a1n)
            if hi1 < lo1:
                continue
            for s2 in range(k2 + 1):
                lo2, hi2 = s2, k2 if last else min(k2, k2 + s2 - a2n)
                if hi2 < lo2:
                    continue
                if last:
                    cand = r_total[s1, s2]
                    blk = new_val[lo1:hi1 + 1, lo2:hi2 + 1]
                    better = cand > blk
                else:
                    nxt = value[lo1 - s1 + a1n:hi1 - s1 + a1n + 1,
                                lo2 - s2 + a2n:hi2 - s2 + a2n + 1]
                    cand = r_total[s1, s2] + nxt
                    blk = new_val[lo1:hi1 + 1, lo2:hi2 + 1]
                    better = cand > blk
                if np.any(better):
                    np.copyto(blk, cand, where=better)
                    act_blk = act[lo1:hi1 + 1, lo2:hi2 + 1]
                    act_blk[better] = (s1, s2)
        value = new_val
        actions.append(act)
    actions.reverse()

    b1 = min(int(arr[0][0]), k1)
    b2 = min(int(arr[1][0]), k2)
    policy = np.zeros((2, n))
    objective = 0.0
    for i in range(n):
        s1, s2 = actions[i][b1, b2]
        policy[0, i] = s1 * dp
        policy[1, i] = s2 * dp
        objective += float(r_total[s1, s2])
        if i < n - 1:
            b1 = b1 - int(s1) + int(arr[0][i + 1])
            b2 = b2 - int(s2) + int(arr[1][i + 1])
    return policy, objective


def _search_with_data(scenario, rate_model, opts):
    n = scenario.grid.N
    tau = scenario.grid.tau
    dp = opts.power_grid_step
    quantum, caps, arr = _lattice(scenario, opts)
    k1, k2 = caps
    s1v = np.arange(k1 + 1) * dp
    s2v = np.arange(k2 + 1) * dp
    g1, g2 = np.meshgrid(s1v, s2v, indexing="ij")
    r1_tab, r2_tab = rate_model.user_rates(g1, g2)
    r1_tab = tau * np.asarray(r1_tab)
    r2_tab = tau * np.asarray(r2_tab)

    cum_b = []
    for u in scenario.users:
        if u.data.is_infinite:
            cum_b.append(np.full(n, math.inf))
        else:
            cum_b.append(np.cumsum(u.data.arrivals))
    bits_eps = 1e-12 * (1.0 + max((float(c[-1]) for c in cum_b
                                   if math.isfinite(c[-1])), default=1.0))

    # layer arrays: battery units, banked bits per user, objective, parent row
    bat = np.array([[min(int(arr[0][0]), k1), min(int(arr[1][0]), k2)]],
                   dtype=np.int32)
    bits = np.zeros((1, 2))
    obj = np.zeros(1)
    layers = []
    generated = 0
    for i in range(n):
        rows_b, rows_bits, rows_obj = [], [], []
        rows_parent, rows_act = [], []
        pending = 0
        a1n = int(arr[0][i + 1]) if i < n - 1 else 0
        a2n = int(arr[1][i + 1]) if i < n - 1 else 0
        for s1 in range(int(np.max(bat[:, 0])) + 1):
            ok1 = bat[:, 0] >= s1
            for s2 in range(int(np.max(bat[:, 1])) + 1):
                db1 = float(r1_tab[s1, s2])
                db2 = float(r2_tab[s1, s2])
                mask = ok1 & (bat[:, 1] >= s2)
                if db1 > 0:
                    mask &= bits[:, 0] + db1 <= cum_b[0][i] + bits_eps
                if db2 > 0:
                    mask &= bits[:, 1] + db2 <= cum_b[1][i] + bits_eps
                if not np.any(mask):
                    continue
                sel = np.nonzero(mask)[0]
                nb = bat[sel].copy()
                nb[:, 0] -= s1
                nb[:, 1] -= s2
                if i < n - 1:
                    # overflow is lost on arrival (battery truncation)
                    nb[:, 0] = np.minimum(nb[:, 0] + a1n, k1)
                    nb[:, 1] = np.minimum(nb[:, 1] + a2n, k2)
                newbits = bits[sel] + np.array([db1, db2])
                rows_b.append(nb)
                rows_bits.append(newbits)
                rows_obj.append(obj[sel] + (db1 + db2))
                rows_parent.append(sel)
                rows_act.append(np.full((sel.shape[0], 2), (s1, s2),
                                        dtype=np.int32))
                pending += sel.shape[0]
                if pending > opts.max_enumeration:
                    raise OracleSizeError(
                        f"data-mode enumeration exceeded {opts.max_enumeration} "
                        f"states at slot {i + 1}", size_estimate=pending)
        if not rows_b:
            raise OracleSizeError("no feasible quantized policy", 0)
        bat = np.concatenate(rows_b)
        bits = np.concatenate(rows_bits)
        obj = np.concatenate(rows_obj)
        parent = np.concatenate(rows_parent)
        acts = np.concatenate(rows_act)
        # states agreeing on battery and on every finite user's banked bits
        # are interchangeable: infinite-backlog bits only bank objective, so
        # the highest objective (lowest action sequence among ties) survives
        key_cols = [bat[:, 0], bat[:, 1]]
        for j in range(2):
            if math.isfinite(cum_b[j][-1]):
                key_cols.append(bits[:, j])
        keys = np.column_stack(key_cols)
        _, group = np.unique(keys, axis=0, return_inverse=True)
        order = np.lexsort((np.arange(obj.shape[0]), -obj, group))
        first = np.ones(order.shape[0], dtype=bool)
        first[1:] = group[order][1:] != group[order][:-1]
        keep = np.sort(order[first])
        bat, bits, obj = bat[keep], bits[keep], obj[keep]
        parent, acts = parent[keep], acts[keep]
        generated += bat.shape[0]
        if generated > opts.max_enumeration:
            raise OracleSizeError(
                f"data-mode enumeration produced {generated} states "
                f"(cap {opts.max_enumeration})", size_estimate=generated)
        layers.append((parent, acts))

    best = int(np.argmax(obj))
    objective = float(obj[best])
    policy = np.zeros((2, n))
    row = best
    for i in range(n - 1, -1, -1):
        parent, acts = layers[i]
        policy[0, i] = acts[row, 0] * dp
        policy[1, i] = acts[row, 1] * dp
        row = int(parent[row])
    return policy, objective
