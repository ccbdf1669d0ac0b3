"""Throughput-optimal power scheduling for two energy-harvesting
transmitters sharing a Gaussian interference channel.

The central objects are a ``Scenario`` (time grid, per-user harvest/data
profiles, channel) and a ``RateModel`` (region-tagged sum-rate kernels).
``iterate_offline`` computes the optimal offline schedule by alternating
single-user directional water-filling; ``solve_with_data`` extends it to
per-slot data arrivals via a quadratic penalty; ``online`` hosts the DP,
naive and distributed baselines and ``oracle`` a brute-force ground truth.
"""

from .errors import (ConvergenceError, InfeasiblePolicyError,
                     InvalidInputError, InvalidUtilityError, OracleSizeError,
                     ShapeError, UnsupportedRegionError)
from .model import (DataProfile, FeasibilityReport, HarvestProfile, Scenario,
                    TimeGrid, User, cumulative_departure, feasibility_report,
                    scenario_from_dict, scenario_to_dict, validate_scenario)
from .rates import (ChannelParams, GenericKernel, RateModel, Region,
                    RegionTag, build_rate_model, classify_region,
                    interference_as_noise_kernel, normalize_channel)
from .single_user import (GenericSlotUtilities, InterferedUtilities,
                          KKTCertificate, LinearUtilities,
                          PiecewiseMinUtilities, ProximalUtilities,
                          ScaledLogUtilities, SlotUtilities,
                          solve_single_user, verify_kkt)
from .iterative import (IterativeOptions, SolveReport, build_subproblem,
                        iterate_offline, joint_objective)
from .data_causality import (PenaltySchedule, resolve_contradictions,
                             solve_with_data, violation)
from .online import (ArrivalDistribution, DPResult, StateGrid,
                     distributed_policy, naive_policy, rollout_table,
                     value_iteration)
from .oracle import OracleOptions, brute_force

__version__ = "0.1.0"

__all__ = [
    "ArrivalDistribution", "ChannelParams", "ConvergenceError",
    "DataProfile", "DPResult", "FeasibilityReport", "GenericKernel",
    "GenericSlotUtilities", "HarvestProfile", "InfeasiblePolicyError",
    "InterferedUtilities", "InvalidInputError", "InvalidUtilityError",
    "IterativeOptions", "KKTCertificate", "LinearUtilities", "OracleOptions",
    "OracleSizeError", "PenaltySchedule", "PiecewiseMinUtilities",
    "ProximalUtilities", "RateModel", "Region", "RegionTag", "ScaledLogUtilities",
    "Scenario", "ShapeError", "SlotUtilities", "SolveReport", "StateGrid",
    "TimeGrid", "UnsupportedRegionError", "User", "brute_force",
    "build_rate_model", "build_subproblem", "classify_region",
    "cumulative_departure", "distributed_policy", "feasibility_report",
    "interference_as_noise_kernel", "iterate_offline", "joint_objective",
    "naive_policy", "normalize_channel", "resolve_contradictions",
    "rollout_table", "scenario_from_dict", "scenario_to_dict",
    "solve_single_user", "solve_with_data", "validate_scenario",
    "value_iteration", "verify_kkt", "violation",
]
