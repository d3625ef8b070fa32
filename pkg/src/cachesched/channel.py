"""Block-fading channel realizations with power-law path gain."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .topology import Topology

# Entropy tag separating channel substreams from any other use of the same seed.
_STREAM_TAG = 0x6368


def path_gain(distance: float, alpha: float) -> float:
    """Distance-based gain 1/d^alpha (the inverse of path loss)."""
    if distance <= 0:
        raise ValueError(f"path gain undefined at distance {distance}; co-located pair")
    if alpha <= 0:
        raise ValueError(f"path loss exponent must be positive, got {alpha}")
    return float(distance) ** -alpha


@dataclass(frozen=True)
class ChannelRealization:
    """Squared amplitude gains for one slot; zero entries mark non-neighboring pairs."""

    gains: np.ndarray  # shape (n_nodes, n_users)
    slot: int

    def gain(self, node: int, user: int) -> float:
        return float(self.gains[node, user])


def sample_channel(topology: Topology, alpha: float, slot: int, seed: int) -> ChannelRealization:
    """Draw one block-fading realization: |h|^2 = path_gain * Exp(1) per neighboring pair.

    Each pair uses its own substream keyed by (seed, node, user, slot), so the
    realization is identical regardless of evaluation order and is reproducible
    per slot without replaying earlier slots.
    """
    gains = np.zeros((topology.n_nodes, topology.n_users))
    for m in range(topology.n_nodes):
        for n in topology.nearby_users[m]:
            rng = np.random.default_rng(np.random.SeedSequence((seed, _STREAM_TAG, m, n, slot)))
            fade = rng.exponential()
            gains[m, n] = path_gain(topology.distances[m, n], alpha) * fade
    return ChannelRealization(gains=gains, slot=int(slot))


def gains_to_csv(channel: ChannelRealization, topology: Topology, path) -> None:
    """Dump one slot's neighbor-pair gain table (debugging aid)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "user", "distance_m", "gain"])
        for m in range(topology.n_nodes):
            for n in topology.nearby_users[m]:
                writer.writerow([m, n, repr(float(topology.distances[m, n])), repr(channel.gain(m, n))])
