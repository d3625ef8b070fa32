"""Loopy belief propagation over the caching-node / user factor graph.

Caching nodes are variable nodes whose state is one decision from
{idle} + {(user, power level)}; users are factor nodes carrying the per-user
utility.  Messages are categorical distributions over a node's decision
support, stored and combined in the log domain so that sharply peaked
utilities (large backlogs) never overflow.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization
from .objective import LinkParams, PowerGrid, ScheduleDecision
from .topology import Topology

logger = logging.getLogger(__name__)


class EnumerationLimitError(RuntimeError):
    """Exact factor update would enumerate too many joint decisions."""


def logsumexp(a, axis=None):
    """Stable log(sum(exp(a))); slices that are all -inf stay -inf."""
    a = np.asarray(a, dtype=float)
    peak = np.max(a, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - peak), axis=axis))
    return out + np.reshape(peak, np.shape(out))


@dataclass(frozen=True)
class BpConfig:
    """Message-passing knobs.

    ``sharpness`` scales the utility inside exp(); larger values concentrate
    the implied distribution on the utility maximizer.  With ``approximate``
    set, factor updates enumerate only the ``neighborhood_size`` nearest nodes
    of each user and fold everyone else in as expected-power interference.
    """

    iterations: int = 5
    sharpness: float = 1.0
    approximate: bool = False
    neighborhood_size: int = 1
    max_enumeration: int = 1_000_000

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if self.sharpness <= 0:
            raise ValueError("sharpness must be positive")
        if self.neighborhood_size < 1:
            raise ValueError("neighborhood must contain at least one node")


class NodeSupport:
    """Ordered decision support of one node: idle first, then (user, level) pairs.

    Users appear in ascending id order and levels in ascending order, so the
    first occurrence of a maximum already respects every tie-break rule used
    downstream (lower user id, then lower power level).
    """

    def __init__(self, servable_users, grid: PowerGrid):
        self.n_levels = grid.n_levels
        self.actions = [None] + [
            (int(n), l) for n in servable_users for l in range(1, grid.n_levels + 1)
        ]
        self.served = np.array([-1] + [n for n, _ in self.actions[1:]], dtype=np.int64)
        self.watts = np.array([0.0] + [grid.watts(l) for _, l in self.actions[1:]])
        self._index = {action: i for i, action in enumerate(self.actions)}

    def __len__(self) -> int:
        return len(self.actions)

    def index_of(self, user: int, level: int) -> int:
        return self._index[(user, level)]

    def can_serve(self, user: int) -> bool:
        return (user, 1) in self._index


def build_supports(topology: Topology, grid: PowerGrid) -> list[NodeSupport]:
    return [NodeSupport(topology.servable_users[m], grid) for m in range(topology.n_nodes)]


@dataclass
class BeliefState:
    """All directed messages of the factor graph, in the log domain.

    ``log_to_user[(m, n)]`` is the message node m sends user n and
    ``log_to_node[(m, n)]`` the reverse; both are distributions over node m's
    decision support.
    """

    supports: list[NodeSupport]
    log_to_user: dict
    log_to_node: dict
    iteration: int = 1


def init_messages(topology: Topology, grid: PowerGrid) -> BeliefState:
    """Uniform node-to-user messages over each node's decision support."""
    supports = build_supports(topology, grid)
    log_to_user = {}
    for m in range(topology.n_nodes):
        uniform = -math.log(len(supports[m]))
        for n in topology.nearby_users[m]:
            log_to_user[(m, n)] = np.full(len(supports[m]), uniform)
    return BeliefState(supports=supports, log_to_user=log_to_user, log_to_node={})


def _axis_pieces(user: int, node: int, supports, cache=None):
    """Static per-decision vectors of one node as seen by one user."""
    key = (node, user)
    if cache is not None and key in cache:
        return cache[key]
    sup = supports[node]
    serves = sup.served == user
    piece = (
        serves.astype(float),
        sup.watts * serves,
        sup.watts * ((sup.served >= 0) & ~serves),
    )
    if cache is not None:
        cache[key] = piece
    return piece


def joint_utility_tensor(
    user: int,
    axis_nodes,
    supports,
    channel: ChannelRealization,
    user_backlog: int,
    power_weight: float,
    params: LinkParams,
    extra_interference: float = 0.0,
    pieces_cache=None,
):
    """Per-user utility over the joint decision space of ``axis_nodes``.

    Axis i of the result enumerates the decision support of axis_nodes[i].
    Nodes beyond axis_nodes contribute only through ``extra_interference``.
    Matches objective.per_user_utility entry by entry.
    """
    ndim = len(axis_nodes)
    servers = np.zeros((1,) * ndim)
    signal = np.zeros((1,) * ndim)
    interference = np.zeros((1,) * ndim)
    serving_power = np.zeros((1,) * ndim)
    for axis, k in enumerate(axis_nodes):
        serves, watts_serving, watts_interfering = _axis_pieces(user, k, supports, pieces_cache)
        gain = channel.gains[k, user]
        shape = [1] * ndim
        shape[axis] = len(serves)
        servers = servers + serves.reshape(shape)
        signal = signal + (gain * watts_serving).reshape(shape)
        interference = interference + (gain * watts_interfering).reshape(shape)
        serving_power = serving_power + watts_serving.reshape(shape)
    sinr = signal / (interference + extra_interference + params.noise_power)
    rate = params.bandwidth_hz * np.log2(1.0 + sinr)
    mu = np.minimum(np.floor(params.slot_seconds * rate / params.chunk_bits), float(user_backlog))
    utility = float(user_backlog) * mu - power_weight * serving_power
    return np.where(servers == 1.0, utility, 0.0)


def _normalize(raw: np.ndarray) -> np.ndarray:
    z = logsumexp(raw)
    if not np.isfinite(z):
        logger.warning("message underflow, falling back to a uniform message")
        return np.full(raw.shape, -math.log(raw.size))
    return raw - z


def factor_update(
    user: int,
    state: BeliefState,
    topology: Topology,
    channel: ChannelRealization,
    backlog,
    power_weight: float,
    sharpness: float,
    params: LinkParams,
    max_enumeration: int = 1_000_000,
    utility=None,
):
    """Messages a user sends to each nearby node, one per conditioning decision.

    The entry for decision d of node m is the expectation of
    exp(sharpness * utility) over the joint decisions of the user's other
    neighbors, weighted by their current incoming messages.  The expectation
    is exact; when the joint space per message exceeds ``max_enumeration``
    terms the caller must switch to approx_factor_update.

    ``utility`` may carry a precomputed joint_utility_tensor over
    nearby_nodes[user]; it only depends on the slot state, not on messages.
    """
    nodes = topology.nearby_nodes[user]
    sizes = [len(state.supports[k]) for k in nodes]
    total = math.prod(sizes)
    if total // min(sizes) > max_enumeration:
        raise EnumerationLimitError(
            f"user {user}: joint space of {total // min(sizes)} decisions per message exceeds "
            f"the cap of {max_enumeration}; use approx_factor_update"
        )
    if utility is None:
        utility = joint_utility_tensor(
            user, nodes, state.supports, channel, backlog[user], power_weight, params
        )
    base = sharpness * utility
    ndim = len(nodes)
    out = {}
    for axis, m in enumerate(nodes):
        acc = base
        for other_axis, k in enumerate(nodes):
            if k == m:
                continue
            shape = [1] * ndim
            shape[other_axis] = sizes[other_axis]
            acc = acc + state.log_to_user[(k, user)].reshape(shape)
        reduce_axes = tuple(i for i in range(ndim) if i != axis)
        raw = logsumexp(acc, axis=reduce_axes) if reduce_axes else acc
        out[m] = _normalize(np.asarray(raw, dtype=float))
    return out


def expected_power(log_message: np.ndarray, support: NodeSupport) -> float:
    """Mean transmit power under a message (idle contributes zero)."""
    return float(np.exp(log_message) @ support.watts)


def approx_factor_update(
    user: int,
    state: BeliefState,
    topology: Topology,
    channel: ChannelRealization,
    backlog,
    power_weight: float,
    sharpness: float,
    params: LinkParams,
    neighborhood,
    pieces_cache=None,
):
    """Factor update that enumerates only ``neighborhood`` exactly.

    Every nearby node outside the neighborhood (and outside the conditioning
    node itself) is replaced by a constant interference term equal to its
    channel gain times its expected transmit power under the current message.
    With neighborhood == nearby_nodes[user] this reproduces factor_update.
    """
    nodes = topology.nearby_nodes[user]
    wanted = set(neighborhood)
    hood = [k for k in nodes if k in wanted]
    mean_power = {
        v: expected_power(state.log_to_user[(v, user)], state.supports[v]) for v in nodes
    }
    out = {}
    for m in nodes:
        axis_nodes = [m] + [k for k in hood if k != m]
        enumerated = set(axis_nodes)
        background = sum(
            channel.gains[v, user] * mean_power[v] for v in nodes if v not in enumerated
        )
        utility = joint_utility_tensor(
            user,
            axis_nodes,
            state.supports,
            channel,
            backlog[user],
            power_weight,
            params,
            extra_interference=background,
            pieces_cache=pieces_cache,
        )
        acc = sharpness * utility
        ndim = len(axis_nodes)
        for other_axis, k in enumerate(axis_nodes[1:], start=1):
            shape = [1] * ndim
            shape[other_axis] = len(state.supports[k])
            acc = acc + state.log_to_user[(k, user)].reshape(shape)
        raw = logsumexp(acc, axis=tuple(range(1, ndim))) if ndim > 1 else acc
        out[m] = _normalize(np.asarray(raw, dtype=float))
    return out


def variable_update(node: int, state: BeliefState, topology: Topology):
    """Messages a node sends each nearby user: product of the other users' messages."""
    users = topology.nearby_users[node]
    size = len(state.supports[node])
    out = {}
    for n in users:
        total = np.zeros(size)
        for j in users:
            if j != n:
                total = total + state.log_to_node[(node, j)]
        out[n] = _normalize(total)
    return out


def nearest_neighborhoods(topology: Topology, size: int) -> dict:
    """Per user, the ``size`` nearest in-range nodes (distance, then id, ascending)."""
    hoods = {}
    for n in range(topology.n_users):
        nodes = sorted(topology.nearby_nodes[n], key=lambda m: (topology.distances[m, n], m))
        hoods[n] = tuple(nodes[:size])
    return hoods


class NodeMarginals:
    """Estimated decision distribution per caching node."""

    def __init__(self, supports, probs):
        self.supports = supports
        self.probs = probs

    @property
    def n_nodes(self) -> int:
        return len(self.probs)

    def idle_mass(self, node: int) -> float:
        return float(self.probs[node][0])

    def mass(self, node: int, user: int, level: int) -> float:
        return float(self.probs[node][self.supports[node].index_of(user, level)])

    def servable_users(self, node: int):
        seen = []
        for action in self.supports[node].actions[1:]:
            if not seen or seen[-1] != action[0]:
                seen.append(action[0])
        return seen

    def best_serving(self, node: int, exclude=frozenset()):
        """Most probable (mass, user, level) among serving decisions, or None.

        Ties resolve to the lower user id, then the lower power level.
        """
        best = None
        for i, action in enumerate(self.supports[node].actions):
            if action is None or action[0] in exclude:
                continue
            mass = float(self.probs[node][i])
            if best is None or mass > best[0]:
                best = (mass, action[0], action[1])
        return best

    def expected_node_power(self, node: int) -> float:
        return float(self.probs[node] @ self.supports[node].watts)


def run_bp(
    topology: Topology,
    channel: ChannelRealization,
    backlog,
    power_weight: float,
    config: BpConfig,
    grid: PowerGrid,
    params: LinkParams,
) -> NodeMarginals:
    """Synchronous message passing for a fixed number of iterations.

    Every factor update of an iteration reads the same node-to-user messages,
    and every variable update the same user-to-node messages, so the result
    does not depend on update order.  The final marginal of a node is the
    normalized product of all its incoming messages.
    """
    state = init_messages(topology, grid)
    hoods = nearest_neighborhoods(topology, config.neighborhood_size) if config.approximate else None
    utility_cache = {}
    pieces_cache = {}
    for iteration in range(config.iterations):
        fresh = {}
        for n in range(topology.n_users):
            if config.approximate:
                messages = approx_factor_update(
                    n, state, topology, channel, backlog, power_weight,
                    config.sharpness, params, hoods[n], pieces_cache=pieces_cache,
                )
            else:
                if n not in utility_cache:
                    utility_cache[n] = joint_utility_tensor(
                        n, topology.nearby_nodes[n], state.supports, channel,
                        backlog[n], power_weight, params, pieces_cache=pieces_cache,
                    )
                messages = factor_update(
                    n, state, topology, channel, backlog, power_weight,
                    config.sharpness, params, config.max_enumeration, utility=utility_cache[n],
                )
            for m, vec in messages.items():
                fresh[(m, n)] = vec
        state.log_to_node = fresh
        state.iteration = iteration + 1
        if iteration < config.iterations - 1:
            state.log_to_user = {
                (m, n): vec
                for m in range(topology.n_nodes)
                for n, vec in variable_update(m, state, topology).items()
            }
    probs = []
    for m in range(topology.n_nodes):
        total = np.zeros(len(state.supports[m]))
        for n in topology.nearby_users[m]:
            total = total + state.log_to_node[(m, n)]
        probs.append(np.exp(_normalize(total)))
    return NodeMarginals(state.supports, probs)


def decide(marginals: NodeMarginals) -> ScheduleDecision:
    """Per-node argmax of the marginal; idle wins ties.

    The output may point several nodes at one user; the matching stage exists
    to repair exactly that.
    """
    serving = {}
    for m in range(marginals.n_nodes):
        top = marginals.best_serving(m)
        if top is not None and top[0] > marginals.idle_mass(m):
            serving[m] = (top[1], top[2])
    return ScheduleDecision(serving)
