"""Analytical accuracy, rate, latency and energy models shared by the solver and simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

LN2 = math.log(2.0)


def dbm_per_hz_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


@dataclass(frozen=True)
class AccuracyModel:
    """F(alpha) = k1 * log2(max(k2 / alpha - k3, clamp_epsilon)) + k4, clipped to [0, 1]."""

    kappa1: float = 0.024
    kappa2: float = 19.221
    kappa3: float = 2.561
    kappa4: float = 0.609
    clamp_epsilon: float = 1e-3

    def __post_init__(self):
        if self.kappa1 < 0 or self.kappa2 <= 0 or self.kappa3 < 0 or self.clamp_epsilon <= 0:
            raise ValueError(f"invalid accuracy model constants: {self}")

    def log_argument(self, alpha):
        return self.kappa2 / np.asarray(alpha, dtype=np.float64) - self.kappa3

    def is_clamped(self, alpha) -> bool:
        """True when alpha lies outside the fitted domain and F is held constant."""
        return bool(np.any(self.log_argument(alpha) <= self.clamp_epsilon))

    def raw(self, alpha):
        x = np.maximum(self.log_argument(alpha), self.clamp_epsilon)
        return self.kappa1 * np.log2(x) + self.kappa4

    def __call__(self, alpha):
        return accuracy(self, alpha)

    def smooth_lambda_range(self) -> tuple[float, float]:
        """Interval of lambda = 1/alpha on which F is neither log-clamped nor clipped to 0 or 1."""
        if self.kappa1 == 0:
            return (math.inf, math.inf)
        lo_arg = max(self.clamp_epsilon, 2.0 ** (-self.kappa4 / self.kappa1))
        hi_arg = 2.0 ** ((1.0 - self.kappa4) / self.kappa1)
        return ((self.kappa3 + lo_arg) / self.kappa2, (self.kappa3 + hi_arg) / self.kappa2)


def accuracy(model: AccuracyModel, alpha):
    a = np.asarray(alpha, dtype=np.float64)
    if np.any(~(a >= 1.0)):
        raise ValueError(f"compression ratio must be >= 1, got {alpha}")
    out = np.clip(model.raw(a), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DeviceProfile:
    device_id: int
    f_max: float    # cycles / s
    p: float        # transmit power, W
    b: float        # bandwidth, Hz
    h: float        # channel amplitude gain, |h|^2 enters the rate
    epsilon: float  # effective switched capacitance
    D: int          # local training samples

    def __post_init__(self):
        for name in ("f_max", "p", "b", "h", "epsilon", "D"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"device {self.device_id}: {name} must be positive and finite, got {v}")


@dataclass(frozen=True)
class SystemConfig:
    total_data: int
    S: float = 111.7e6
    W: float = 0.98e6
    n: int = 1
    N0: float = dbm_per_hz_to_watts(-114.0)
    T_max: float = 100.0
    J: int = 300
    varpi: float = 1e-4
    alpha_max: float = 300.0

    def __post_init__(self):
        for name in ("total_data", "S", "W", "n", "N0", "T_max", "J"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v}")
        if not (self.varpi >= 0 and math.isfinite(self.varpi)):
            raise ValueError(f"varpi must be non-negative, got {self.varpi}")
        if not self.alpha_max >= 1:
            raise ValueError(f"alpha_max must be >= 1, got {self.alpha_max}")

    def workload(self, profile: DeviceProfile) -> float:
        """Cycles per round, n * D * W."""
        return self.n * profile.D * self.W


@dataclass(frozen=True)
class CostBreakdown:
    comm_time: float
    comp_time: float
    comm_energy: float
    comp_energy: float

    @property
    def latency(self) -> float:
        return self.comm_time + self.comp_time

    @property
    def energy(self) -> float:
        return self.comm_energy + self.comp_energy


def uplink_rate(profile: DeviceProfile, N0: float) -> float:
    snr = profile.p * profile.h ** 2 / (N0 * profile.b)
    return profile.b * math.log2(1.0 + snr)


def contribution(model: AccuracyModel, alphas: Sequence[float], device_data: Sequence[float], total_data: float | None = None) -> float:
    """Data-weighted mean of per-device accuracies."""
    if len(alphas) != len(device_data):
        raise ValueError("alphas and device_data differ in length")
    total = float(sum(device_data)) if total_data is None else float(total_data)
    acc = np.asarray(accuracy(model, np.asarray(alphas, dtype=np.float64)), dtype=np.float64).reshape(-1)
    return float(np.dot(np.asarray(device_data, dtype=np.float64), acc) / total)


def round_cost(profile: DeviceProfile, config: SystemConfig, alpha: float, f: float, rate: float | None = None) -> CostBreakdown:
    if not alpha >= 1:
        raise ValueError(f"compression ratio must be >= 1, got {alpha}")
    if not 0 < f <= profile.f_max * (1 + 1e-12):
        raise ValueError(f"frequency {f} outside (0, f_max={profile.f_max}]")
    r = uplink_rate(profile, config.N0) if rate is None else rate
    cycles = config.workload(profile)
    comm_time = config.S / (alpha * r)
    return CostBreakdown(
        comm_time=comm_time,
        comp_time=cycles / f,
        comm_energy=profile.p * comm_time,
        comp_energy=profile.epsilon * f * f * cycles,
    )


def is_feasible(cost: CostBreakdown, config: SystemConfig) -> bool:
    return cost.latency <= config.T_max * (1 + 1e-9)


def objective_share(model: AccuracyModel, profile: DeviceProfile, config: SystemConfig, alpha: float, f: float, rate: float | None = None) -> float:
    """One device's additive term of the goal: D/total * F(alpha) - varpi * J * energy."""
    cost = round_cost(profile, config, alpha, f, rate)
    return profile.D / config.total_data * accuracy(model, alpha) - config.varpi * config.J * cost.energy


def goal(model: AccuracyModel, profiles: Sequence[DeviceProfile], config: SystemConfig, plans: Iterable) -> float:
    """Contribution minus varpi * J * total energy.

    ``plans`` holds one (alpha, f) per device, either as tuples or as objects
    with ``alpha``/``f`` attributes. Objects with ``participating == False``
    contribute neither data nor energy.
    """
    total = 0.0
    for profile, plan in zip(profiles, plans, strict=True):
        if isinstance(plan, tuple):
            alpha, f = plan
        else:
            if not getattr(plan, "participating", True):
                continue
            alpha, f = plan.alpha, plan.f
        total += objective_share(model, profile, config, alpha, f)
    return total


class FitError(ValueError):
    pass


def _fit_linear(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least squares y ~ k1 * x + b with k1 >= 0; returns (k1, b, sse)."""
    xm, ym = x.mean(), y.mean()
    sxx = np.dot(x - xm, x - xm)
    k1 = max(np.dot(x - xm, y - ym) / sxx, 0.0) if sxx > 0 else 0.0
    b = ym - k1 * xm
    r = y - (k1 * x + b)
    return k1, b, float(np.dot(r, r))


def fit_kappa(points: Sequence[tuple[float, float]], kappa2: float = AccuracyModel.kappa2, grid_size: int = 400) -> AccuracyModel:
    """Least-squares fit of the log accuracy curve to (alpha, accuracy) points.

    The curve only depends on kappa1, kappa3/kappa2 and kappa4 + kappa1*log2(kappa2),
    so kappa2 is a free gauge; it is pinned to ``kappa2`` and the remaining
    three constants are fitted. The ratio kappa3/kappa2 is searched on a
    coarse grid (kappa1 and the offset are solved in closed form at each
    node), then refined with a bounded scalar search.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 4:
        raise FitError("need at least 4 (alpha, accuracy) points")
    alpha, y = pts[:, 0], pts[:, 1]
    if len(np.unique(alpha)) < 4:
        raise FitError("need at least 4 distinct compression ratios")
    if np.any(alpha < 1) or np.any((y < 0) | (y > 1)):
        raise FitError("compression ratios must be >= 1 and accuracies within [0, 1]")

    inv = 1.0 / alpha
    c_hi = inv.min()

    # ratio c = kappa3 / kappa2 parameterized as c = c_hi * (1 - u), u in (0, 1]
    def sse(log_u: float) -> float:
        c = c_hi * (1.0 - math.exp(log_u))
        return _fit_linear(np.log2(inv - c), y)[2]

    grid = np.linspace(math.log(1e-12), 0.0, grid_size)
    values = np.array([sse(g) for g in grid])
    j = int(values.argmin())
    lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, grid_size - 1)]
    res = minimize_scalar(sse, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    best = res.x if res.fun <= values[j] else grid[j]

    c = c_hi * (1.0 - math.exp(best))
    k1, b, _ = _fit_linear(np.log2(inv - c), y)
    return AccuracyModel(kappa1=k1, kappa2=kappa2, kappa3=c * kappa2, kappa4=b - k1 * math.log2(kappa2))
