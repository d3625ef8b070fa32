"""Interference-limited rates and the per-slot drift-plus-penalty utility.

This module is the single source of truth for what every scheduler maximizes:
the sum over users of  backlog * served_chunks - power_weight * serving_power,
where a user's term is zero unless exactly one node serves it.  Belief
propagation, the matching repair, the exhaustive oracle, and the clustering
baselines all evaluate decisions through these functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .channel import ChannelRealization
from .topology import Topology


@dataclass(frozen=True)
class PowerGrid:
    """Discrete transmit power levels, 1-based: level l transmits levels[l-1] watts."""

    levels: tuple[float, ...]

    def __post_init__(self):
        if not self.levels:
            raise ValueError("power grid needs at least one level")
        if self.levels[0] <= 0 or any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("power levels must be positive and strictly increasing")

    @classmethod
    def uniform(cls, max_watts: float, count: int) -> "PowerGrid":
        """Evenly spaced levels l * max_watts / count for l = 1..count."""
        if max_watts <= 0 or count < 1:
            raise ValueError("need positive budget and at least one level")
        return cls(tuple(max_watts * l / count for l in range(1, count + 1)))

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def max_watts(self) -> float:
        return self.levels[-1]

    def watts(self, level: int) -> float:
        if not 1 <= level <= len(self.levels):
            raise ValueError(f"power level {level} outside 1..{len(self.levels)}")
        return self.levels[level - 1]


@dataclass(frozen=True)
class LinkParams:
    """Physical constants shared by rate and service computations."""

    bandwidth_hz: float = 10e6
    noise_power: float = 1e-8
    slot_seconds: float = 0.01
    chunk_bits: float = 20e3

    def __post_init__(self):
        for name in ("bandwidth_hz", "noise_power", "slot_seconds", "chunk_bits"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def with_bandwidth(self, bandwidth_hz: float) -> "LinkParams":
        return replace(self, bandwidth_hz=bandwidth_hz)


@dataclass(frozen=True)
class ScheduleDecision:
    """One slot's action per caching node: serve (user, power level) or stay idle.

    Idle nodes are simply absent from ``serving``; a node never appears twice,
    so one-user-per-node holds by construction.  Several nodes may still point
    at the same user (raw belief-propagation output does this); rate and
    utility evaluation treat that user as receiving nothing.
    """

    serving: dict

    @classmethod
    def idle(cls) -> "ScheduleDecision":
        return cls({})

    def action(self, node: int):
        return self.serving.get(node)

    def power_watts(self, node: int, grid: PowerGrid) -> float:
        action = self.serving.get(node)
        return grid.watts(action[1]) if action else 0.0

    def total_power(self, grid: PowerGrid) -> float:
        return sum(grid.watts(level) for _, level in self.serving.values())

    @property
    def active_links(self) -> int:
        return len(self.serving)

    def servers_of(self, user: int) -> list[int]:
        return sorted(m for m, (n, _) in self.serving.items() if n == user)

    def encode(self) -> str:
        """Compact text form  node>user@level;...  used in metrics rows."""
        if not self.serving:
            return "-"
        return ";".join(f"{m}>{n}@{l}" for m, (n, l) in sorted(self.serving.items()))

    @classmethod
    def decode(cls, text: str) -> "ScheduleDecision":
        if text == "-":
            return cls.idle()
        serving = {}
        for item in text.split(";"):
            head, level = item.split("@")
            node, user = head.split(">")
            serving[int(node)] = (int(user), int(level))
        return cls(serving)


def _link_terms(user, decision, topology, channel, grid):
    """Server count, signal power, interference power, and serving transmit power at a user."""
    servers = 0
    signal = 0.0
    interference = 0.0
    serving_power = 0.0
    for m in topology.nearby_nodes[user]:
        action = decision.serving.get(m)
        if action is None:
            continue
        target, level = action
        p = grid.watts(level)
        if target == user:
            servers += 1
            signal += channel.gains[m, user] * p
            serving_power += p
        else:
            interference += channel.gains[m, user] * p
    return servers, signal, interference, serving_power


def user_rate(
    user: int,
    decision: ScheduleDecision,
    topology: Topology,
    channel: ChannelRealization,
    grid: PowerGrid,
    params: LinkParams,
) -> float:
    """Shannon rate (bits/s) seen by a user; zero without a unique serving node."""
    servers, signal, interference, _ = _link_terms(user, decision, topology, channel, grid)
    if servers != 1:
        return 0.0
    sinr = signal / (interference + params.noise_power)
    return params.bandwidth_hz * math.log2(1.0 + sinr)


def user_rates(decision, topology, channel, grid, params) -> np.ndarray:
    return np.array(
        [user_rate(n, decision, topology, channel, grid, params) for n in range(topology.n_users)]
    )


def served_chunks(rate: float, backlog: int, params: LinkParams) -> int:
    return int(min(math.floor(params.slot_seconds * rate / params.chunk_bits), int(backlog)))


def per_user_utility(
    user: int,
    decision: ScheduleDecision,
    topology: Topology,
    channel: ChannelRealization,
    backlog,
    power_weight: float,
    grid: PowerGrid,
    params: LinkParams,
) -> float:
    """Backlog-weighted served chunks minus the power spent serving this user.

    The whole term is zero when no node, or more than one node, serves the
    user: conflicting servers deliver nothing, and their power is not charged
    here (it still degrades other users through interference).
    """
    servers, signal, interference, serving_power = _link_terms(
        user, decision, topology, channel, grid
    )
    if servers != 1:
        return 0.0
    rate = params.bandwidth_hz * math.log2(1.0 + signal / (interference + params.noise_power))
    mu = served_chunks(rate, backlog[user], params)
    return float(backlog[user]) * mu - power_weight * serving_power


def global_utility(
    decision: ScheduleDecision,
    topology: Topology,
    channel: ChannelRealization,
    backlog,
    power_weight: float,
    grid: PowerGrid,
    params: LinkParams,
) -> float:
    """Per-slot objective value every scheduler tries to maximize."""
    return sum(
        per_user_utility(n, decision, topology, channel, backlog, power_weight, grid, params)
        for n in range(topology.n_users)
    )
