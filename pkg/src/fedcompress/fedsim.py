"""Round-based simulation over the analytical models (no gradients involved)."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .models import accuracy, round_cost
from .optimizer import STRATEGIES, CompressionPlan, SolverSettings, plan_for_alpha, plans_for_strategy
from .scenario import ChannelMode, Scenario, redraw_channels


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DeviceRecord:
    device_id: int
    alpha: float
    f: float
    comm_energy: float
    comp_energy: float
    latency: float
    feasible: bool
    participating: bool
    contribution: float      # D_i / total * F(alpha_i), 0 when not participating
    objective_share: float   # contribution - varpi * J * energy

    @property
    def energy(self) -> float:
        return self.comm_energy + self.comp_energy


@dataclass(frozen=True)
class RoundLedger:
    round_index: int
    devices: tuple[DeviceRecord, ...]
    total_energy: float
    contribution: float
    goal: float
    cumulative_energy: float


def round_profiles(scenario: Scenario, round_index: int):
    if scenario.channel_mode == ChannelMode.PER_ROUND_REDRAW:
        return redraw_channels(scenario, round_index)
    return scenario.devices


def strategy_seed(scenario: Scenario, round_index: int) -> int:
    return int(np.random.SeedSequence([scenario.seed & (2**64 - 1), 2, round_index]).generate_state(1)[0])


def round_plans(scenario: Scenario, strategy: str, round_index: int, settings: SolverSettings = SolverSettings()) -> tuple:
    profiles = round_profiles(scenario, round_index)
    if strategy == "uncompressed":
        plans = [plan_for_alpha(p, scenario.config, scenario.accuracy_model, 1.0) for p in profiles]
    else:
        plans = plans_for_strategy(
            strategy, profiles, scenario.config, scenario.accuracy_model, strategy_seed(scenario, round_index), settings
        )
    return profiles, plans


def ledger_for_round(scenario: Scenario, profiles, plans: Sequence[CompressionPlan], round_index: int, previous_energy: float) -> RoundLedger:
    """Account one round. Non-participating and infeasible devices sit the round out."""
    cfg = scenario.config
    records = []
    for prof, plan in zip(profiles, plans):
        cost = round_cost(prof, cfg, plan.alpha, plan.f)
        active = plan.participating and plan.feasible
        contrib = prof.D / cfg.total_data * accuracy(scenario.accuracy_model, plan.alpha) if active else 0.0
        comm = cost.comm_energy if active else 0.0
        comp = cost.comp_energy if active else 0.0
        records.append(DeviceRecord(
            device_id=prof.device_id,
            alpha=plan.alpha,
            f=plan.f,
            comm_energy=comm,
            comp_energy=comp,
            latency=cost.latency,
            feasible=cost.latency <= cfg.T_max * (1 + 1e-9),
            participating=active,
            contribution=contrib,
            objective_share=contrib - cfg.varpi * cfg.J * (comm + comp),
        ))
    if not any(r.participating for r in records):
        raise SimulationError(f"round {round_index}: no device can take part")
    total = sum(r.energy for r in records)
    contribution = sum(r.contribution for r in records)
    return RoundLedger(
        round_index=round_index,
        devices=tuple(records),
        total_energy=total,
        contribution=contribution,
        goal=contribution - cfg.varpi * cfg.J * total,
        cumulative_energy=previous_energy + total,
    )


def run_modeled(scenario: Scenario, strategy: str, rounds: int, settings: SolverSettings = SolverSettings()) -> list[RoundLedger]:
    if strategy not in STRATEGIES and strategy != "uncompressed":
        raise ValueError(f"unknown strategy {strategy!r}")
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    ledgers = []
    cumulative = 0.0
    for t in range(rounds):
        profiles, plans = round_plans(scenario, strategy, t, settings)
        ledger = ledger_for_round(scenario, profiles, plans, t, cumulative)
        cumulative = ledger.cumulative_energy
        ledgers.append(ledger)
    return ledgers


def energy_to_target(ledgers: Sequence[RoundLedger], target_contribution: float) -> float | None:
    """Cumulative energy at the first round whose contribution reaches the target."""
    if not ledgers:
        raise ValueError("no ledgers")
    for ledger in ledgers:
        if ledger.contribution >= target_contribution:
            return ledger.cumulative_energy
    return None


def sweep(scenario: Scenario, parameter: str, values: Sequence[float], strategy: str = "fedgreen", rounds: int = 1) -> list[tuple[float, RoundLedger]]:
    """Final-round ledger for each value of one SystemConfig field (e.g. varpi or n)."""
    out = []
    for v in values:
        sc = replace(scenario, config=replace(scenario.config, **{parameter: v}))
        out.append((v, run_modeled(sc, strategy, rounds)[-1]))
    return out
