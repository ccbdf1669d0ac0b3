"""Command-line front end: scenario generation, solver runs, presets.

Subcommands
-----------
gen-scenario   draw a random scenario (uniform amounts, exponential
               interarrival times quantized to slots) and write it as JSON
solve-offline  two-user iterative water-filling (infinite backlog)
solve-data     penalty-method solve with data-causality constraints
online-dp      finite-horizon DP on discretized battery states
naive          constant-power baseline
distributed    per-user single-link water-filling with assumed interference
oracle         brute-force quantized search (small instances only)
preset         canned experiments: fig7 (deterministic 20-slot instance),
               fig8 (seeded batch comparing iterative/distributed/naive)

Each run writes ``policy.csv`` (slot, p1, p2, water_level_1, water_level_2,
cumulative_bits) and ``summary.json`` into --out.  Outputs are byte-identical
for identical (config, seed).  Exit status: 0 on success, 2 on validation
errors, 3 on solver non-convergence.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import data_causality, online, oracle
from .errors import (ConvergenceError, InfeasiblePolicyError,
                     InvalidInputError, OracleSizeError, ShapeError)
from .iterative import (IterativeOptions, build_subproblem, iterate_offline,
                        joint_objective)
from .model import (DataProfile, HarvestProfile, Scenario, TimeGrid, User,
                    cumulative_departure, feasibility_report,
                    scenario_from_dict, validate_scenario)
from .rates import ChannelParams, build_rate_model
from .single_user import verify_kkt

LN2 = math.log(2.0)

FIG7_E1 = [5, 0, 0, 0, 3, 0, 0, 0, 0, 0, 7, 0, 0, 0, 4, 0, 0, 0, 6, 0]
FIG7_E2 = [10, 0, 7, 0, 0, 0, 0, 0, 9, 0, 0, 5, 0, 8, 0, 5, 0, 0, 0, 0]
FIG7_CHANNEL = (0.9, 2.0)
FIG7_EMAX = 10.0
FIG8_CHANNEL = (0.7, 5.0)
FIG8_EMAX = 10.0
FIG8_MEAN_INTERARRIVAL = 5.0
FIG8_SLOTS = 20


@dataclass(frozen=True)
class ExperimentConfig:
    solver: str
    scenario_path: Optional[str] = None
    out_dir: str = "out"
    seed: int = 0
    tol: float = 1e-7
    max_sweeps: int = 200
    grid_step: float = 0.05
    violation_tol: float = 1e-4
    preset_count: int = 100
    jobs: int = 1
    write_tables: bool = False
    gen_params: Optional[dict] = None


def gen_scenario(n: int, tau: float, emax, mean_interarrival: float,
                 seed: int, a: float, b: float) -> Scenario:
    """Random scenario: exponential interarrival times quantized to slots,
    amounts uniform on [0, E_max]; deterministic per seed."""
    if n < 1 or tau <= 0 or mean_interarrival <= 0:
        raise InvalidInputError("generator parameters must be positive")
    caps = (float(emax[0]), float(emax[1])) if np.ndim(emax) else \
        (float(emax), float(emax))
    rng = np.random.default_rng(seed)
    users = []
    for j in range(2):
        e = np.zeros(n)
        t = rng.exponential(mean_interarrival)
        while t < n * tau:
            e[int(t // tau)] += rng.uniform(0.0, caps[j])
            t += rng.exponential(mean_interarrival)
        users.append(User(HarvestProfile(e, caps[j]), DataProfile.infinite()))
    scen = Scenario(TimeGrid(n, tau), tuple(users), ChannelParams(a, b))
    return validate_scenario(scen)


def fig7_scenario() -> Scenario:
    users = tuple(
        User(HarvestProfile(np.array(e, dtype=float), FIG7_EMAX),
             DataProfile.infinite())
        for e in (FIG7_E1, FIG7_E2))
    return validate_scenario(
        Scenario(TimeGrid(len(FIG7_E1), 1.0), users,
                 ChannelParams(*FIG7_CHANNEL)))


# ---------------------------------------------------------------------------
# output plumbing
# ---------------------------------------------------------------------------

def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _policy_csv(policy, scenario, rate_model) -> str:
    lines = ["slot,p1,p2,water_level_1,water_level_2,cumulative_bits"]
    levels = []
    for user in range(2):
        utils = build_subproblem(scenario, rate_model, user, policy[1 - user])
        levels.append(utils.deriv(np.maximum(policy[user], 0.0)))
    bits = cumulative_departure(policy, rate_model, scenario.grid) / LN2
    for i in range(scenario.grid.N):
        lines.append(",".join([str(i + 1), _fmt(policy[0, i]),
                               _fmt(policy[1, i]), _fmt(levels[0][i]),
                               _fmt(levels[1][i]), _fmt(bits[i])]))
    return "\n".join(lines) + "\n"


def _feasibility_summary(policy, scenario, rate_model,
                         data_tol: float = 0.0) -> dict:
    tol = 1e-9 * max(u.harvest.capacity for u in scenario.users)
    rep = feasibility_report(policy, scenario, rate_model, tol=tol)
    feasible = (rep.energy_causality.magnitude <= tol
                and rep.battery_capacity.magnitude <= tol
                and rep.data_causality.magnitude <= max(tol, data_tol))
    return {
        "feasible": feasible,
        "worst_energy_causality": rep.energy_causality.magnitude,
        "worst_battery_capacity": rep.battery_capacity.magnitude,
        "worst_data_causality": rep.data_causality.magnitude,
    }


def _kkt_summary(policy, scenario, rate_model) -> dict:
    out = {}
    for user in range(2):
        utils = build_subproblem(scenario, rate_model, user, policy[1 - user])
        try:
            cert = verify_kkt(policy[user], utils,
                              scenario.users[user].harvest, scenario.grid)
            out[f"stationarity_user{user + 1}"] = cert.stationarity_residual
            out[f"complementarity_user{user + 1}"] = cert.complementarity_residual
        except InfeasiblePolicyError:
            out[f"stationarity_user{user + 1}"] = None
    return out


def _rate_model_for(scenario: Scenario):
    pmax = scenario.peak_powers
    return build_rate_model(scenario.channel.a, scenario.channel.b,
                            pmax[0], pmax[1])


def _load_scenario(path: str):
    with open(path) as fh:
        doc = json.load(fh)
    return scenario_from_dict(doc)


# ---------------------------------------------------------------------------
# experiment runner
# ---------------------------------------------------------------------------

def run_experiment(config: ExperimentConfig) -> dict:
    """Run the configured solver and emit policy.csv + summary.json."""
    out_dir = Path(config.out_dir)
    if config.solver == "preset-fig8":
        return _run_fig8(config, out_dir)

    if config.solver == "preset-fig7":
        scenario, info = fig7_scenario(), {}
    elif config.scenario_path is not None:
        scenario, info = _load_scenario(config.scenario_path)
    elif config.gen_params is not None:
        scenario = gen_scenario(seed=config.seed, **config.gen_params)
        info = {}
    else:
        raise InvalidInputError(f"solver {config.solver} needs --scenario")
    rate_model = _rate_model_for(scenario)
    opts = IterativeOptions(max_sweeps=config.max_sweeps,
                            solver_tol=config.tol)
    summary = {
        "solver": config.solver,
        "seed": config.seed,
        "config": {k: v for k, v in asdict(config).items() if v is not None},
        "region": rate_model.region.value,
        "mirrored": rate_model.mirrored,
        "normalization": info,
    }

    solver = config.solver
    if solver in ("solve-offline", "preset-fig7"):
        policy, report = iterate_offline(scenario, rate_model, opts)
        summary.update(sweeps=report.sweeps_used, converged=report.converged,
                       final_displacement=report.final_displacement)
        summary.update(_kkt_summary(policy, scenario, rate_model))
        if not report.converged:
            raise ConvergenceError("iterative solve did not converge",
                                   best_policy=policy)
    elif solver == "solve-data":
        schedule = data_causality.PenaltySchedule(
            violation_tol=config.violation_tol)
        policy, report = data_causality.solve_with_data(
            scenario, rate_model, opts, schedule)
        summary.update(rounds=report.rounds_used,
                       final_violation=report.final_violation,
                       converged=report.converged,
                       unusable_energy=report.unusable_energy.tolist())
    elif solver == "online-dp":
        stats = online.ArrivalDistribution.deterministic(scenario)
        de = config.grid_step * scenario.grid.tau
        grids = []
        for cap in (u.harvest.capacity for u in scenario.users):
            pts = max(2, int(round(cap / de)) + 1)
            grids.append(np.linspace(0.0, cap, pts))
        grid = online.StateGrid(grids[0], grids[1])
        result = online.value_iteration(stats, rate_model, grid,
                                        tau=scenario.grid.tau)
        policy, total = online.rollout_table(result, scenario, rate_model)
        summary.update(dp_value_at_start=total)
        if config.write_tables:
            online.export_tables_csv(result, out_dir / "tables.csv")
    elif solver == "naive":
        policy = online.naive_policy(scenario)
    elif solver == "distributed":
        policy = np.vstack([
            online.distributed_policy(scenario, rate_model, user)
            for user in range(2)])
    elif solver == "oracle":
        opts_o = oracle.OracleOptions(power_grid_step=config.grid_step)
        policy, objective = oracle.brute_force(scenario, rate_model, opts_o)
        summary.update(oracle_objective_nats=objective)
    else:
        raise InvalidInputError(f"unknown solver {solver}")

    obj = joint_objective(policy, scenario, rate_model)
    data_tol = config.violation_tol if solver == "solve-data" else 0.0
    summary.update(objective_nats=obj, objective_bits=obj / LN2,
                   feasibility=_feasibility_summary(policy, scenario,
                                                    rate_model, data_tol))
    _atomic_write(out_dir / "policy.csv",
                  _policy_csv(policy, scenario, rate_model))
    _atomic_write(out_dir / "summary.json",
                  json.dumps(summary, sort_keys=True, indent=2,
                             default=float) + "\n")
    return summary


def _fig8_single(seed: int, tol: float, max_sweeps: int):
    scenario = gen_scenario(FIG8_SLOTS, 1.0, FIG8_EMAX,
                            FIG8_MEAN_INTERARRIVAL, seed, *FIG8_CHANNEL)
    rate_model = _rate_model_for(scenario)
    opts = IterativeOptions(max_sweeps=max_sweeps, solver_tol=tol)
    p_iter, _ = iterate_offline(scenario, rate_model, opts)
    p_dist = np.vstack([online.distributed_policy(scenario, rate_model, u)
                        for u in range(2)])
    p_naive = online.naive_policy(scenario)
    to_bits = lambda p: joint_objective(p, scenario, rate_model) / LN2
    return {"seed": seed, "bits_iterative": to_bits(p_iter),
            "bits_distributed": to_bits(p_dist),
            "bits_naive": to_bits(p_naive)}


def _run_fig8(config: ExperimentConfig, out_dir: Path) -> dict:
    seeds = [config.seed + i for i in range(config.preset_count)]
    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            rows = list(pool.map(
                lambda s: _fig8_single(s, config.tol, config.max_sweeps),
                seeds))
    else:
        rows = [_fig8_single(s, config.tol, config.max_sweeps) for s in seeds]
    lines = ["seed,bits_iterative,bits_distributed,bits_naive"]
    for row in rows:
        lines.append(",".join([str(row["seed"]), _fmt(row["bits_iterative"]),
                               _fmt(row["bits_distributed"]),
                               _fmt(row["bits_naive"])]))
    means = {k: float(np.mean([r[k] for r in rows]))
             for k in ("bits_iterative", "bits_distributed", "bits_naive")}
    summary = {
        "solver": "preset-fig8",
        "seed": config.seed,
        "count": config.preset_count,
        "channel": {"a": FIG8_CHANNEL[0], "b": FIG8_CHANNEL[1]},
        "mean_total_bits": means,
        "ordering_ok": bool(means["bits_iterative"] >= means["bits_distributed"]
                            >= means["bits_naive"]),
        "distributed_over_iterative":
            means["bits_distributed"] / means["bits_iterative"],
        "config": {k: v for k, v in asdict(config).items() if v is not None},
    }
    _atomic_write(out_dir / "scenarios.csv", "\n".join(lines) + "\n")
    _atomic_write(out_dir / "summary.json",
                  json.dumps(summary, sort_keys=True, indent=2,
                             default=float) + "\n")
    return summary


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(sp):
    sp.add_argument("--scenario", help="scenario JSON file")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="out", help="output directory")
    sp.add_argument("--tol", type=float, default=1e-7)
    sp.add_argument("--max-sweeps", type=int, default=200)
    sp.add_argument("--grid", type=float, default=0.05,
                    help="power grid step (oracle) / battery resolution (DP)")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="ehic",
        description="Throughput-optimal schedules for two energy-harvesting "
                    "transmitters on an interference channel")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-scenario", help="draw a random scenario")
    gen.add_argument("--n", type=int, default=20)
    gen.add_argument("--tau", type=float, default=1.0)
    gen.add_argument("--emax", type=float, default=10.0)
    gen.add_argument("--mean-interarrival", type=float, default=5.0)
    gen.add_argument("--a", type=float, default=FIG8_CHANNEL[0])
    gen.add_argument("--b", type=float, default=FIG8_CHANNEL[1])
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", default="scenario.json",
                     help="output scenario file")

    for name in ("solve-offline", "solve-data", "online-dp", "naive",
                 "distributed", "oracle"):
        sp = sub.add_parser(name)
        _add_common(sp)
        if name == "solve-data":
            sp.add_argument("--violation-tol", type=float, default=1e-4)
        if name == "online-dp":
            sp.add_argument("--tables", action="store_true",
                            help="also export policy/value tables")

    pre = sub.add_parser("preset", help="canned experiments")
    pre.add_argument("name", choices=["fig7", "fig8"])
    _add_common(pre)
    pre.add_argument("--count", type=int, default=100,
                     help="number of seeded scenarios (fig8)")
    pre.add_argument("--jobs", type=int, default=1)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gen-scenario":
            scen = gen_scenario(args.n, args.tau, args.emax,
                                args.mean_interarrival, args.seed,
                                args.a, args.b)
            from .model import scenario_to_dict
            _atomic_write(Path(args.out),
                          json.dumps(scenario_to_dict(scen), sort_keys=True,
                                     indent=2) + "\n")
            print(f"wrote {args.out}")
            return 0
        if args.command == "preset":
            solver = f"preset-{args.name}"
            config = ExperimentConfig(
                solver=solver, out_dir=args.out, seed=args.seed,
                tol=args.tol, max_sweeps=args.max_sweeps,
                grid_step=args.grid, preset_count=args.count, jobs=args.jobs)
        else:
            config = ExperimentConfig(
                solver=args.command, scenario_path=args.scenario,
                out_dir=args.out, seed=args.seed, tol=args.tol,
                max_sweeps=args.max_sweeps, grid_step=args.grid,
                violation_tol=getattr(args, "violation_tol", 1e-4),
                write_tables=getattr(args, "tables", False))
        summary = run_experiment(config)
        obj = summary.get("objective_nats",
                          summary.get("mean_total_bits"))
        print(f"{args.command}: done ({obj})")
        return 0
    except ConvergenceError as exc:
        _diagnostic(exc, 3)
        return 3
    except (InvalidInputError, ShapeError, OracleSizeError,
            InfeasiblePolicyError, FileNotFoundError,
            json.JSONDecodeError, KeyError) as exc:
        _diagnostic(exc, 2)
        return 2


def _diagnostic(exc, code):
    doc = {"error": type(exc).__name__, "message": str(exc),
           "exit_status": code}
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
