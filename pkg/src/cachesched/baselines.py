"""Reference schedulers: the exhaustive oracle and grid-clustering baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .belief_propagation import BpConfig, build_supports, joint_utility_tensor, run_bp
from .channel import ChannelRealization
from .matching import link_schedule
from .objective import (
    LinkParams,
    PowerGrid,
    ScheduleDecision,
    global_utility,
    served_chunks,
    user_rates,
)
from .topology import Topology


class SearchSpaceError(RuntimeError):
    """Joint decision space too large for exhaustive search."""


# Re-scored near-ties per slot; enough for any realistic tie set while keeping
# degenerate all-tied instances (where every candidate scores identically) cheap.
_MAX_RESCORED = 4096


def exhaustive_search(
    topology: Topology,
    channel: ChannelRealization,
    backlog,
    power_weight: float,
    grid: PowerGrid,
    params: LinkParams,
    max_decisions: int = 10_000_000,
) -> ScheduleDecision:
    """Globally optimal decision by scoring every joint assignment.

    Scoring is vectorized; near-maximal candidates are re-scored through
    objective.global_utility so the returned decision's utility is exactly
    what every other scheduler computes.  Ties resolve to the
    lexicographically smallest decision vector: nodes in id order, idle before
    serving, then lower user id, then lower power level.
    """
    supports = build_supports(topology, grid)
    sizes = [len(s) for s in supports]
    total = math.prod(sizes)
    if total > max_decisions:
        raise SearchSpaceError(
            f"{total} joint decisions exceed the exhaustive-search cap of {max_decisions}"
        )
    all_nodes = list(range(topology.n_nodes))
    score = np.zeros((1,) * topology.n_nodes)
    for n in range(topology.n_users):
        axis_nodes = topology.nearby_nodes[n]
        tensor = joint_utility_tensor(
            n, axis_nodes, supports, channel, backlog[n], power_weight, params
        )
        shape = [1] * topology.n_nodes
        for k in axis_nodes:
            shape[k] = sizes[k]
        score = score + tensor.reshape(shape)
    score = np.broadcast_to(score, sizes)
    flat = score.ravel(order="C")
    peak = flat.max() if flat.size else 0.0
    tol = 1e-9 * max(1.0, abs(peak))
    candidates = np.flatnonzero(flat >= peak - tol)
    if len(candidates) > _MAX_RESCORED:
        strongest = candidates[np.argsort(-flat[candidates], kind="stable")[:_MAX_RESCORED]]
        candidates = np.unique(np.concatenate([strongest, candidates[:1]]))
    best = None
    for flat_index in candidates:
        serving = {}
        for m, support_index in zip(all_nodes, _unravel(int(flat_index), sizes)):
            action = supports[m].actions[support_index]
            if action is not None:
                serving[m] = action
        decision = ScheduleDecision(serving)
        value = global_utility(decision, topology, channel, backlog, power_weight, grid, params)
        if best is None or value > best[0] or (value == best[0] and flat_index < best[1]):
            best = (value, int(flat_index), decision)
    return best[2] if best is not None else ScheduleDecision.idle()


def _unravel(flat_index: int, sizes) -> list[int]:
    digits = []
    for size in reversed(sizes):
        digits.append(flat_index % size)
        flat_index //= size
    return digits[::-1]


@dataclass(frozen=True)
class ClusterGrid:
    """Axis-aligned square grid partitioning the region into orthogonal-band cells."""

    origin: tuple[float, float]
    cell_side: float
    divisions: int

    @classmethod
    def for_square(cls, side: float, divisions: int = 3) -> "ClusterGrid":
        return cls((0.0, 0.0), side / divisions, divisions)

    @property
    def n_cells(self) -> int:
        return self.divisions**2

    def cell_of(self, position) -> int:
        """Cell index of a position; the far edges belong to the last row/column."""
        col = min(int((position[0] - self.origin[0]) // self.cell_side), self.divisions - 1)
        row = min(int((position[1] - self.origin[1]) // self.cell_side), self.divisions - 1)
        return max(row, 0) * self.divisions + max(col, 0)


def cluster_members(topology: Topology, clusters: ClusterGrid):
    """Per cell, the node ids and user ids positioned inside it."""
    nodes = [[] for _ in range(clusters.n_cells)]
    users = [[] for _ in range(clusters.n_cells)]
    for m in range(topology.n_nodes):
        nodes[clusters.cell_of(topology.node_positions[m])].append(m)
    for n in range(topology.n_users):
        users[clusters.cell_of(topology.user_positions[n])].append(n)
    return nodes, users


def clustering_schedule_1(
    topology: Topology,
    channel: ChannelRealization,
    backlog,
    power_weight: float,
    grid: PowerGrid,
    params: LinkParams,
    clusters: ClusterGrid,
):
    """At most one active link per cell, each cell on its own 1/n_cells band.

    Within a cell the single link (or staying idle) is chosen to maximize that
    cell's utility at the reduced bandwidth; cells do not interfere.  Returns
    (decision, per-user rates, summed cell utility).
    """
    cell_params = params.with_bandwidth(params.bandwidth_hz / clusters.n_cells)
    node_cells, user_cells = cluster_members(topology, clusters)
    serving = {}
    rates = np.zeros(topology.n_users)
    total_utility = 0.0
    for cell in range(clusters.n_cells):
        cell_users = set(user_cells[cell])
        best = (0.0, None)  # idle cell
        for m in node_cells[cell]:
            for n in topology.servable_users[m]:
                if n not in cell_users:
                    continue  # links may not straddle cell boundaries
                for level in range(1, grid.n_levels + 1):
                    p = grid.watts(level)
                    sinr = channel.gains[m, n] * p / cell_params.noise_power
                    rate = cell_params.bandwidth_hz * math.log2(1.0 + sinr)
                    mu = served_chunks(rate, backlog[n], cell_params)
                    utility = float(backlog[n]) * mu - power_weight * p
                    if utility > best[0]:
                        best = (utility, (m, n, level, rate))
        if best[1] is not None:
            m, n, level, rate = best[1]
            serving[m] = (n, level)
            rates[n] = rate
            total_utility += best[0]
    return ScheduleDecision(serving), rates, total_utility


def clustering_schedule_2(
    topology: Topology,
    channel: ChannelRealization,
    backlog,
    power_weight: float,
    grid: PowerGrid,
    params: LinkParams,
    clusters: ClusterGrid,
    bp_config: BpConfig,
):
    """Belief propagation plus matching run independently inside each cell.

    Each cell sees only its own nodes, users, and channel gains, at the
    1/n_cells bandwidth share.  Returns (decision, per-user rates, summed cell
    utility).
    """
    cell_params = params.with_bandwidth(params.bandwidth_hz / clusters.n_cells)
    node_cells, user_cells = cluster_members(topology, clusters)
    backlog = np.asarray(backlog)
    serving = {}
    rates = np.zeros(topology.n_users)
    total_utility = 0.0
    for cell in range(clusters.n_cells):
        if not node_cells[cell] or not user_cells[cell]:
            continue
        sub, node_ids, user_ids = topology.restrict(node_cells[cell], user_cells[cell])
        if sub.n_nodes == 0 or sub.n_users == 0:
            continue
        sub_channel = ChannelRealization(
            gains=channel.gains[np.ix_(node_ids, user_ids)], slot=channel.slot
        )
        sub_backlog = backlog[user_ids]
        marginals = run_bp(
            sub, sub_channel, sub_backlog, power_weight, bp_config, grid, cell_params
        )
        outcome = link_schedule(
            marginals, sub, sub_channel, sub_backlog, power_weight, grid, cell_params
        )
        sub_rates = user_rates(outcome.decision, sub, sub_channel, grid, cell_params)
        for sub_m, (sub_n, level) in outcome.decision.serving.items():
            serving[int(node_ids[sub_m])] = (int(user_ids[sub_n]), level)
        rates[user_ids] = sub_rates
        total_utility += outcome.utility
    return ScheduleDecision(serving), rates, total_utility
