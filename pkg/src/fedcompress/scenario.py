"""Device populations for simulation runs.

Hardware and bandwidth ranges follow the 16-device MEC setting (epsilon,
f_max, b, N0, varpi, T_max, S, W, n, J). Transmit power and channel gain are
not pinned down there; the defaults draw p ~ U[0.1, 1] W and a spectral
efficiency s ~ U[1.25, 4] bit/s/Hz, then set |h|^2 so that
b * log2(1 + p |h|^2 / (N0 b)) = s * b. With b in [0.8, 5] MHz this puts the
uplink rate in [1, 20] Mbit/s.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .models import AccuracyModel, DeviceProfile, SystemConfig


class ChannelMode(str, enum.Enum):
    STATIC = "static"
    PER_ROUND_REDRAW = "per_round_redraw"


class DataSplit(str, enum.Enum):
    IID = "iid"
    DIRICHLET = "dirichlet"


@dataclass(frozen=True)
class DeviceDistributions:
    epsilon: tuple[float, float] = (5e-27, 1e-26)
    f_max: tuple[float, float] = (1.5e9, 4e9)
    bandwidth: tuple[float, float] = (0.8e6, 5e6)
    power: tuple[float, float] = (0.1, 1.0)
    spectral_efficiency: tuple[float, float] = (1.25, 4.0)

    def __post_init__(self):
        for name in ("epsilon", "f_max", "bandwidth", "power", "spectral_efficiency"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} range must satisfy 0 < low <= high, got ({lo}, {hi})")


@dataclass(frozen=True)
class Scenario:
    devices: tuple[DeviceProfile, ...]
    config: SystemConfig
    accuracy_model: AccuracyModel = AccuracyModel()
    seed: int = 0
    channel_mode: ChannelMode = ChannelMode.STATIC
    distributions: DeviceDistributions = field(default_factory=DeviceDistributions)

    def __post_init__(self):
        object.__setattr__(self, "devices", tuple(self.devices))
        object.__setattr__(self, "channel_mode", ChannelMode(self.channel_mode))
        if not self.devices:
            raise ValueError("scenario needs at least one device")
        if sum(d.D for d in self.devices) != self.config.total_data:
            raise ValueError("config.total_data must equal the sum of device data counts")


def channel_gain(p: float, b: float, spectral_efficiency: float, N0: float) -> float:
    """Amplitude gain h giving the requested spectral efficiency."""
    return math.sqrt((2.0 ** spectral_efficiency - 1.0) * N0 * b / p)


def split_data(total: int, devices: int, mode: DataSplit, rng: np.random.Generator, classes: int = 10, concentration: float = 0.5) -> list[int]:
    """Per-device sample counts summing to ``total``; every device gets at least one sample."""
    mode = DataSplit(mode)
    if total < devices:
        raise ValueError("fewer samples than devices")
    if mode == DataSplit.IID:
        base, extra = divmod(total, devices)
        return [base + (1 if i < extra else 0) for i in range(devices)]
    per_class = np.full(classes, total // classes)
    per_class[: total % classes] += 1
    counts = np.zeros(devices, dtype=np.int64)
    for c in range(classes):
        share = rng.dirichlet(np.full(devices, concentration))
        alloc = np.floor(share * per_class[c]).astype(np.int64)
        rest = int(per_class[c] - alloc.sum())
        alloc[np.argsort(-(share * per_class[c] - alloc), kind="stable")[:rest]] += 1
        counts += alloc
    # move single samples from the largest holders to any empty device
    for i in np.flatnonzero(counts == 0):
        j = int(np.argmax(counts))
        counts[j] -= 1
        counts[i] += 1
    return counts.tolist()


def sample_scenario(
    device_count: int = 16,
    seed: int = 0,
    *,
    data_split: DataSplit | str = DataSplit.IID,
    total_samples: int = 50_000,
    channel_mode: ChannelMode | str = ChannelMode.STATIC,
    distributions: DeviceDistributions = DeviceDistributions(),
    accuracy_model: AccuracyModel = AccuracyModel(),
    **config_overrides,
) -> Scenario:
    if device_count < 1:
        raise ValueError("device_count must be >= 1")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed & (2**64 - 1), 0])))
    dist = distributions
    data = split_data(total_samples, device_count, DataSplit(data_split), rng)
    config = SystemConfig(total_data=sum(data), **config_overrides)
    devices = []
    for i in range(device_count):
        eps = rng.uniform(*dist.epsilon)
        f_max = rng.uniform(*dist.f_max)
        b = rng.uniform(*dist.bandwidth)
        p = rng.uniform(*dist.power)
        s = rng.uniform(*dist.spectral_efficiency)
        devices.append(DeviceProfile(i, f_max, p, b, channel_gain(p, b, s, config.N0), eps, data[i]))
    return Scenario(tuple(devices), config, accuracy_model, seed, ChannelMode(channel_mode), dist)


def redraw_channels(scenario: Scenario, round_index: int) -> tuple[DeviceProfile, ...]:
    """Block-fading redraw of every device's channel gain for one round."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([scenario.seed & (2**64 - 1), 1, round_index])))
    lo, hi = scenario.distributions.spectral_efficiency
    out = []
    for d in scenario.devices:
        s = rng.uniform(lo, hi)
        out.append(replace(d, h=channel_gain(d.p, d.b, s, scenario.config.N0)))
    return tuple(out)
