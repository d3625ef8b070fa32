"""One-to-one repair of belief-propagation output via deferred-acceptance matching.

Raw per-node argmax decisions can point several nodes at the same user.  The
matching stage walks the nodes, lets each propose to users in order of its
marginal preference, and accepts a proposal only when the resulting matching
(including any displacement chain it triggers) strictly improves the global
utility.  The result always satisfies one-user-per-node and one-node-per-user.
"""

from __future__ import annotations

from dataclasses import dataclass

from .belief_propagation import NodeMarginals
from .channel import ChannelRealization
from .objective import LinkParams, PowerGrid, ScheduleDecision, global_utility
from .topology import Topology


class Matching:
    """Partial one-to-one assignment between caching nodes and users."""

    def __init__(self):
        self._user_of = {}
        self._node_of = {}

    def user_of(self, node: int):
        return self._user_of.get(node)

    def server_of(self, user: int):
        return self._node_of.get(user)

    def assign(self, node: int, user: int) -> None:
        """Link node and user, unlinking whatever either was matched to."""
        old_user = self._user_of.pop(node, None)
        if old_user is not None:
            del self._node_of[old_user]
        old_node = self._node_of.pop(user, None)
        if old_node is not None:
            del self._user_of[old_node]
        self._user_of[node] = user
        self._node_of[user] = node

    def clear(self, node: int) -> None:
        user = self._user_of.pop(node, None)
        if user is not None:
            del self._node_of[user]

    def copy(self) -> "Matching":
        clone = Matching()
        clone._user_of = dict(self._user_of)
        clone._node_of = dict(self._node_of)
        return clone

    def pairs(self):
        return sorted(self._user_of.items())

    def __len__(self) -> int:
        return len(self._user_of)

    def is_consistent(self) -> bool:
        forward = all(self._node_of.get(u) == m for m, u in self._user_of.items())
        backward = all(self._user_of.get(m) == u for u, m in self._node_of.items())
        return forward and backward and len(self._user_of) == len(self._node_of)


def preference_order(node: int, marginals: NodeMarginals, excluded=frozenset()):
    """Users this node would propose to, most probable first (ties: lower id)."""
    best_mass = {}
    for i, action in enumerate(marginals.supports[node].actions):
        if action is None or action[0] in excluded:
            continue
        user = action[0]
        mass = float(marginals.probs[node][i])
        if user not in best_mass or mass > best_mass[user]:
            best_mass[user] = mass
    return [user for user, _ in sorted(best_mass.items(), key=lambda kv: (-kv[1], kv[0]))]


def power_for(node: int, user: int, marginals: NodeMarginals) -> int:
    """Most probable power level for serving this user (ties: lowest level)."""
    support = marginals.supports[node]
    if not support.can_serve(user):
        raise ValueError(f"node {node} cannot serve user {user}")
    best_level, best_mass = 1, -1.0
    for level in range(1, support.n_levels + 1):
        mass = marginals.mass(node, user, level)
        if mass > best_mass:
            best_level, best_mass = level, mass
    return best_level


def decision_from(matching: Matching, marginals: NodeMarginals) -> ScheduleDecision:
    return ScheduleDecision(
        {node: (user, power_for(node, user, marginals)) for node, user in matching.pairs()}
    )


def match_request(
    node: int,
    user: int,
    matching: Matching,
    excluded: set,
    marginals: NodeMarginals,
    _depth: int = 0,
) -> Matching:
    """Candidate matching in which ``node`` takes ``user``.

    A displaced server re-requests its best remaining user, idling when it has
    none left or when idleness is its most probable decision; ``excluded``
    grows in place with every user requested along the chain.
    """
    assert _depth <= marginals.n_nodes, "displacement chain longer than the node count"
    displaced = matching.server_of(user)
    result = matching.copy()
    result.assign(node, user)
    if displaced is None or displaced == node:
        return result
    top = marginals.best_serving(displaced, exclude=excluded)
    if top is None or top[0] < marginals.idle_mass(displaced):
        return result  # displaced node stays idle
    excluded.add(top[1])
    return match_request(displaced, top[1], result, excluded, marginals, _depth + 1)


@dataclass
class MatchingResult:
    matching: Matching
    decision: ScheduleDecision
    utility: float
    proposals: int


def link_schedule(
    marginals: NodeMarginals,
    topology: Topology,
    channel: ChannelRealization,
    backlog,
    power_weight: float,
    grid: PowerGrid,
    params: LinkParams,
    node_order=None,
) -> MatchingResult:
    """Build a valid one-to-one schedule from node marginals.

    Nodes take turns (ascending id unless ``node_order`` is given).  Each keeps
    proposing down its preference list until a proposal improves the global
    utility or idling becomes its best option.  ``proposals`` counts these
    outer requests; displacement chains inside a request are not counted.
    """
    matching = Matching()
    utility = 0.0
    proposals = 0
    order = list(node_order) if node_order is not None else range(topology.n_nodes)
    for m in order:
        excluded = set()
        while True:
            top = marginals.best_serving(m, exclude=excluded)
            if top is None or top[0] < marginals.idle_mass(m):
                break  # stays idle
            excluded.add(top[1])
            proposals += 1
            candidate = match_request(m, top[1], matching, excluded, marginals)
            candidate_utility = global_utility(
                decision_from(candidate, marginals),
                topology, channel, backlog, power_weight, grid, params,
            )
            if candidate_utility > utility:
                matching, utility = candidate, candidate_utility
                break
    return MatchingResult(
        matching=matching,
        decision=decision_from(matching, marginals),
        utility=utility,
        proposals=proposals,
    )
