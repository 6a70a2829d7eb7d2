"""Per-device choice of compression ratio and CPU frequency, plus baseline policies.

With the deadline binding, a device's round splits as
    S / (alpha r) = beta * T_max        (upload)
    n D W / f     = (1 - beta) * T_max  (local training)
so its goal share becomes a function of beta alone. Feasible beta values are
bounded below by alpha <= alpha_max and above by alpha >= 1 and f <= f_max.
On the part of that interval where the accuracy curve is smooth the share is
concave, and its maximizer is found by bisection on the derivative. Where the
accuracy curve is flat (clamped) the share only loses energy as beta grows,
so that stretch contributes its lower edge as a second candidate.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .models import (
    LN2,
    AccuracyModel,
    DeviceProfile,
    SystemConfig,
    objective_share,
    round_cost,
    uplink_rate,
)

BETA_EPSILON = 1e-9
RANDOM_ALPHA_RANGE = (50.0, 300.0)
SELECTION_EXCLUDED_FRACTION = 0.25


class InfeasibleDeviceError(ValueError):
    """The deadline cannot be met by this device under any allowed (alpha, f)."""


class Boundary(str, enum.Enum):
    INTERIOR = "interior"
    BETA_MIN = "beta_min"        # alpha = alpha_max
    BETA_MAX = "beta_max"        # f = f_max
    ALPHA_FLOOR = "alpha_floor"  # alpha = 1
    FIXED = "fixed"              # alpha set by a baseline policy
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class CompressionPlan:
    device_id: int
    alpha: float
    f: float
    beta: float
    objective_share: float
    feasible: bool
    boundary: Boundary
    participating: bool = True


@dataclass(frozen=True)
class SolverSettings:
    tolerance: float = 1e-8
    max_iterations: int = 200

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


def optimal_frequency(profile: DeviceProfile, config: SystemConfig, alpha: float) -> float:
    """Lowest frequency that meets the deadline, capped at f_max."""
    slack = config.T_max - config.S / (alpha * uplink_rate(profile, config.N0))
    if slack <= 0:
        raise InfeasibleDeviceError(
            f"device {profile.device_id}: upload alone takes {config.T_max - slack:.6g} s at alpha={alpha:g}"
        )
    return min(config.workload(profile) / slack, profile.f_max)


def _beta_limits(profile: DeviceProfile, config: SystemConfig) -> tuple[float, float, Boundary]:
    r = uplink_rate(profile, config.N0)
    full = config.S / (r * config.T_max)  # beta at alpha = 1
    lo = full / config.alpha_max
    caps = [
        (full, Boundary.ALPHA_FLOOR),
        (1.0 - config.workload(profile) / (profile.f_max * config.T_max), Boundary.BETA_MAX),
        (1.0 - BETA_EPSILON, Boundary.BETA_MAX),
    ]
    hi, kind = min(caps, key=lambda c: c[0])
    return lo, hi, kind


def beta_bounds(profile: DeviceProfile, config: SystemConfig) -> tuple[float, float]:
    """Feasible interval for the upload share beta.

    Lower end: S / (alpha_max r T_max). Upper end: the smallest of
    S / (r T_max) (alpha >= 1), 1 - n D W / (f_max T_max) (f <= f_max) and
    1 - 1e-9.
    """
    lo, hi, _ = _beta_limits(profile, config)
    if lo > hi:
        raise InfeasibleDeviceError(
            f"device {profile.device_id}: deadline unreachable (beta range [{lo:.6g}, {hi:.6g}] is empty)"
        )
    return lo, hi


def _lambda_scale(profile: DeviceProfile, config: SystemConfig) -> float:
    """d(lambda)/d(beta) = r T_max / S, with lambda = 1 / alpha."""
    return uplink_rate(profile, config.N0) * config.T_max / config.S


def goal_beta(profile: DeviceProfile, config: SystemConfig, model: AccuracyModel, beta):
    """Goal share as a function of beta with the deadline binding (vectorized)."""
    beta = np.asarray(beta, dtype=np.float64)
    lam = beta * _lambda_scale(profile, config)
    alpha = np.maximum(1.0 / lam, 1.0)
    acc = np.clip(model.raw(alpha), 0.0, 1.0)
    cycles = config.workload(profile)
    f = cycles / ((1.0 - beta) * config.T_max)
    energy = profile.p * beta * config.T_max + profile.epsilon * f * f * cycles
    out = profile.D / config.total_data * acc - config.varpi * config.J * energy
    return float(out) if out.ndim == 0 else out


def _energy_derivative(profile: DeviceProfile, config: SystemConfig, beta: float) -> float:
    cycles = config.workload(profile)
    return config.varpi * config.J * (
        profile.p * config.T_max + 2.0 * profile.epsilon * cycles ** 3 / (config.T_max ** 2 * (1.0 - beta) ** 3)
    )


def _accuracy_derivative(profile: DeviceProfile, config: SystemConfig, model: AccuracyModel, beta: float) -> float:
    scale = _lambda_scale(profile, config)
    arg = model.kappa2 * beta * scale - model.kappa3
    return scale * profile.D * model.kappa1 * model.kappa2 / (config.total_data * arg * LN2)


def _in_smooth_region(profile: DeviceProfile, config: SystemConfig, model: AccuracyModel, beta: float) -> bool:
    lam_lo, lam_hi = model.smooth_lambda_range()
    lam = beta * _lambda_scale(profile, config)
    return lam_lo <= lam <= lam_hi and lam <= 1.0


def goal_derivative_beta(profile: DeviceProfile, config: SystemConfig, model: AccuracyModel, beta: float) -> float:
    """d(goal share)/d(beta); the accuracy term is 0 wherever F is clamped."""
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    acc = _accuracy_derivative(profile, config, model, beta) if _in_smooth_region(profile, config, model, beta) else 0.0
    return acc - _energy_derivative(profile, config, beta)


def goal_second_derivative_beta(profile: DeviceProfile, config: SystemConfig, model: AccuracyModel, beta: float) -> float:
    scale = _lambda_scale(profile, config)
    cycles = config.workload(profile)
    energy = 6.0 * config.varpi * config.J * profile.epsilon * cycles ** 3 / (config.T_max ** 2 * (1.0 - beta) ** 4)
    if not _in_smooth_region(profile, config, model, beta):
        return -energy
    arg = model.kappa2 * beta * scale - model.kappa3
    acc = scale ** 2 * profile.D * model.kappa1 * model.kappa2 ** 2 / (config.total_data * arg ** 2 * LN2)
    return -acc - energy


def _smooth_maximizer(profile, config, model, a: float, b: float, settings: SolverSettings) -> float:
    """Maximizer of the concave share on [a, b], where the accuracy curve is smooth."""
    def g(beta):
        return _accuracy_derivative(profile, config, model, beta) - _energy_derivative(profile, config, beta)

    if g(b) >= 0:
        return b
    if g(a) <= 0:
        return a
    lo, hi = a, b
    for _ in range(settings.max_iterations):
        if hi - lo <= settings.tolerance:
            break
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    # Newton polish inside the final bracket
    x = 0.5 * (lo + hi)
    for _ in range(8):
        gx = g(x)
        if gx == 0:
            break
        if gx > 0:
            lo = x
        else:
            hi = x
        h2 = goal_second_derivative_beta(profile, config, model, x)
        step = x - gx / h2
        if not lo <= step <= hi or step == x:
            break
        x = step
    return x


def _plan_at_beta(profile, config, model, beta: float, boundary: Boundary) -> CompressionPlan:
    r = uplink_rate(profile, config.N0)
    if boundary == Boundary.BETA_MIN:
        alpha = config.alpha_max
    elif boundary == Boundary.ALPHA_FLOOR:
        alpha = 1.0
    else:
        alpha = max(config.S / (beta * r * config.T_max), 1.0)
    f = optimal_frequency(profile, config, alpha)
    if boundary == Boundary.BETA_MAX:
        f = profile.f_max
    cost = round_cost(profile, config, alpha, f)
    share = objective_share(model, profile, config, alpha, f)
    feasible = cost.latency <= config.T_max * (1 + 1e-9)
    return CompressionPlan(profile.device_id, alpha, f, beta, share, feasible, boundary)


def _infeasible_plan(profile, config, model) -> CompressionPlan:
    alpha = config.alpha_max
    beta = config.S / (alpha * uplink_rate(profile, config.N0) * config.T_max)
    share = objective_share(model, profile, config, alpha, profile.f_max)
    return CompressionPlan(profile.device_id, alpha, profile.f_max, beta, share, False, Boundary.INFEASIBLE)


def solve_device(
    profile: DeviceProfile,
    config: SystemConfig,
    model: AccuracyModel,
    settings: SolverSettings = SolverSettings(),
) -> CompressionPlan:
    """Maximize one device's goal share over its feasible (alpha, f)."""
    lo, hi, hi_kind = _beta_limits(profile, config)
    if lo > hi:
        return _infeasible_plan(profile, config, model)

    candidates = [(lo, Boundary.BETA_MIN)]
    lam_lo, lam_hi = model.smooth_lambda_range()
    scale = _lambda_scale(profile, config)
    a = max(lo, lam_lo / scale)
    b = min(hi, lam_hi / scale)
    if a < b:
        beta = _smooth_maximizer(profile, config, model, a, b, settings)
        if beta == hi:
            kind = hi_kind
        elif beta == lo:
            kind = Boundary.BETA_MIN
        else:
            kind = Boundary.INTERIOR
        candidates.append((beta, kind))

    best = None
    for beta, kind in candidates:
        plan = _plan_at_beta(profile, config, model, beta, kind)
        if best is None or plan.objective_share > best.objective_share:
            best = plan
    return best


def strategy_fedgreen(profiles: Sequence[DeviceProfile], config: SystemConfig, model: AccuracyModel, settings: SolverSettings = SolverSettings()) -> list[CompressionPlan]:
    return [solve_device(p, config, model, settings) for p in profiles]


def plan_for_alpha(profile: DeviceProfile, config: SystemConfig, model: AccuracyModel, alpha: float) -> CompressionPlan:
    """Plan with a prescribed ratio and the deadline-meeting frequency (capped at f_max)."""
    r = uplink_rate(profile, config.N0)
    try:
        f = optimal_frequency(profile, config, alpha)
    except InfeasibleDeviceError:
        f = profile.f_max
    cost = round_cost(profile, config, alpha, f)
    feasible = cost.latency <= config.T_max * (1 + 1e-9)
    share = objective_share(model, profile, config, alpha, f)
    beta = config.S / (alpha * r * config.T_max)
    return CompressionPlan(profile.device_id, alpha, f, beta, share, feasible, Boundary.FIXED)


def strategy_random(profiles: Sequence[DeviceProfile], config: SystemConfig, model: AccuracyModel, seed: int) -> list[CompressionPlan]:
    rng = np.random.Generator(np.random.PCG64(seed))
    alphas = rng.uniform(*RANDOM_ALPHA_RANGE, size=len(profiles))
    return [plan_for_alpha(p, config, model, float(a)) for p, a in zip(profiles, alphas)]


def strategy_uniform(profiles: Sequence[DeviceProfile], config: SystemConfig, model: AccuracyModel, fedgreen_plans: Sequence[CompressionPlan]) -> list[CompressionPlan]:
    """Every device uses the mean of the per-device optimal ratios."""
    alpha_bar = math.fsum(p.alpha for p in fedgreen_plans) / len(fedgreen_plans)
    return [plan_for_alpha(p, config, model, alpha_bar) for p in profiles]


def selection_excluded(uniform_plans: Sequence[CompressionPlan], profiles: Sequence[DeviceProfile], config: SystemConfig) -> set[int]:
    """device_ids of the ceil(25%) highest-energy devices; ties go to the lower device_id."""
    energy = [
        (-round_cost(pr, config, pl.alpha, pl.f).energy, pr.device_id) for pr, pl in zip(profiles, uniform_plans)
    ]
    count = math.ceil(SELECTION_EXCLUDED_FRACTION * len(profiles))
    return {dev for _, dev in sorted(energy)[:count]}


def strategy_selection(profiles: Sequence[DeviceProfile], config: SystemConfig, model: AccuracyModel, uniform_plans: Sequence[CompressionPlan]) -> list[CompressionPlan]:
    """Uniform policy minus the top-energy quarter of devices.

    Excluded devices keep their plan for reference but are marked
    non-participating with a zero share; the contribution still divides by the
    full data total.
    """
    excluded = selection_excluded(uniform_plans, profiles, config)
    return [
        replace(pl, participating=False, objective_share=0.0) if pl.device_id in excluded else pl
        for pl in uniform_plans
    ]


STRATEGIES = ("fedgreen", "random", "uniform", "selection")


def plans_for_strategy(
    strategy: str,
    profiles: Sequence[DeviceProfile],
    config: SystemConfig,
    model: AccuracyModel,
    seed: int = 0,
    settings: SolverSettings = SolverSettings(),
) -> list[CompressionPlan]:
    if strategy == "random":
        return strategy_random(profiles, config, model, seed)
    fedgreen = strategy_fedgreen(profiles, config, model, settings)
    if strategy == "fedgreen":
        return fedgreen
    uniform = strategy_uniform(profiles, config, model, [p for p in fedgreen if p.feasible] or fedgreen)
    if strategy == "uniform":
        return uniform
    if strategy == "selection":
        return strategy_selection(profiles, config, model, uniform)
    raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
