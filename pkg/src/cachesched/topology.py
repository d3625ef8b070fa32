"""Network topology generation for cached-content delivery simulations.

A topology holds caching nodes (transmitters storing content files) and active
users (each requesting one file), together with the neighbor structure induced
by two radii: pairs closer than ``interference_range`` interact, and a node can
actually serve a user only when it is closer than ``signal_range`` and caches
the requested file.  Users that no node can serve and nodes with nobody to
serve are pruned at construction time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np


class ConfigurationError(ValueError):
    """Invalid scenario, region, or placement configuration."""


@dataclass(frozen=True)
class Region:
    """Planar sampling region: an axis-aligned rectangle or a union of equal-radius disks.

    ``bounds`` is always the bounding box (xmin, xmax, ymin, ymax); for the
    disk-union kind, points are additionally restricted to the disks.
    """

    kind: str
    bounds: tuple[float, float, float, float]
    centers: tuple[tuple[float, float], ...] = ()
    radius: float = 0.0

    @classmethod
    def square(cls, side: float) -> "Region":
        if side <= 0:
            raise ConfigurationError(f"square side must be positive, got {side}")
        return cls("rect", (0.0, float(side), 0.0, float(side)))

    @classmethod
    def rectangle(cls, xmin: float, xmax: float, ymin: float, ymax: float) -> "Region":
        if xmax < xmin or ymax < ymin:
            raise ConfigurationError("rectangle bounds are inverted")
        return cls("rect", (float(xmin), float(xmax), float(ymin), float(ymax)))

    @classmethod
    def disk_union(cls, centers, radius: float) -> "Region":
        if radius <= 0:
            raise ConfigurationError(f"disk radius must be positive, got {radius}")
        pts = tuple((float(x), float(y)) for x, y in centers)
        if not pts:
            raise ConfigurationError("disk union needs at least one center")
        xs = [c[0] for c in pts]
        ys = [c[1] for c in pts]
        bounds = (min(xs) - radius, max(xs) + radius, min(ys) - radius, max(ys) + radius)
        return cls("disks", bounds, pts, float(radius))

    @property
    def bbox_area(self) -> float:
        xmin, xmax, ymin, ymax = self.bounds
        return (xmax - xmin) * (ymax - ymin)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of points inside the region (closed boundaries)."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        if self.kind == "rect":
            return np.ones(len(points), dtype=bool)
        mask = np.zeros(len(points), dtype=bool)
        for cx, cy in self.centers:
            d2 = (points[:, 0] - cx) ** 2 + (points[:, 1] - cy) ** 2
            mask |= d2 <= self.radius**2
        return mask


def generate_ppp_points(region: Region, intensity: float, rng: np.random.Generator) -> np.ndarray:
    """Sample a homogeneous Poisson point process on ``region``.

    The returned count is Poisson(intensity * area(region)) and positions are
    i.i.d. uniform over the region; disk unions are sampled by thinning a PPP
    on the bounding box, which preserves both properties exactly.
    """
    if intensity <= 0:
        raise ConfigurationError(f"point intensity must be positive, got {intensity}")
    xmin, xmax, ymin, ymax = region.bounds
    count = rng.poisson(intensity * region.bbox_area)
    points = np.column_stack(
        [rng.uniform(xmin, xmax, size=count), rng.uniform(ymin, ymax, size=count)]
    )
    if region.kind == "disks" and count:
        points = points[region.contains(points)]
    return points


@dataclass(frozen=True)
class Library:
    """Content library with Zipf popularity over file ranks (file 0 most popular)."""

    files: int
    zipf_exponent: float = 0.8
    cache_capacity: int = 10

    def __post_init__(self):
        if self.files < 1:
            raise ConfigurationError("library needs at least one file")
        if not 0 < self.cache_capacity <= self.files:
            raise ConfigurationError(
                f"cache capacity {self.cache_capacity} outside 1..{self.files}"
            )
        if self.zipf_exponent < 0:
            raise ConfigurationError("zipf exponent must be non-negative")

    @property
    def popularity(self) -> np.ndarray:
        ranks = np.arange(1, self.files + 1, dtype=float)
        weights = ranks**-self.zipf_exponent
        p = weights / weights.sum()
        assert abs(p.sum() - 1.0) <= 1e-12
        return p

    def sample_requests(self, count: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(self.files, size=count, p=self.popularity)


def place_content(
    n_nodes: int,
    library: Library,
    policy: str,
    rng: np.random.Generator,
    explicit: dict | None = None,
) -> list[frozenset[int]]:
    """Pick the cached file set of each node.

    Policies: ``popularity`` (popularity-weighted sampling without replacement),
    ``uniform`` (uniform without replacement), ``explicit`` (reproduce the given
    node -> file-list mapping verbatim).
    """
    if policy == "explicit":
        if explicit is None:
            raise ConfigurationError("explicit placement requires a node -> files mapping")
        assignment = {int(k): list(v) for k, v in explicit.items()}
        caches = []
        for m in range(n_nodes):
            if m not in assignment:
                raise ConfigurationError(f"explicit placement missing node {m}")
            files = assignment[m]
            if len(files) > library.cache_capacity:
                raise ConfigurationError(
                    f"node {m} assigned {len(files)} files, capacity {library.cache_capacity}"
                )
            if len(set(files)) != len(files):
                raise ConfigurationError(f"node {m} assigned duplicate files")
            for f in files:
                if not 0 <= f < library.files:
                    raise ConfigurationError(f"node {m} assigned unknown file {f}")
            caches.append(frozenset(int(f) for f in files))
        return caches
    if policy == "popularity":
        weights = library.popularity
        return [
            frozenset(
                int(f)
                for f in rng.choice(
                    library.files, size=library.cache_capacity, replace=False, p=weights
                )
            )
            for _ in range(n_nodes)
        ]
    if policy == "uniform":
        return [
            frozenset(
                int(f)
                for f in rng.choice(library.files, size=library.cache_capacity, replace=False)
            )
            for _ in range(n_nodes)
        ]
    raise ConfigurationError(f"unknown placement policy {policy!r}")


TOPOLOGY_FORMAT = "cachesched-topology-v1"


@dataclass(frozen=True)
class Topology:
    """Pruned network of caching nodes and servable users with neighbor sets.

    Neighbor structure (all index tuples sorted ascending):
      nearby_users[m]   users within interference range of node m
      servable_users[m] subset of nearby_users[m] within signal range whose
                        requested file node m caches
      nearby_nodes[n]   nodes within interference range of user n
      source_nodes[n]   subset of nearby_nodes[n] that can serve user n

    Membership is symmetric: n in servable_users[m] iff m in source_nodes[n],
    and likewise for the interference sets.  Every retained user has at least
    one source node and every retained node at least one servable user.
    """

    node_positions: np.ndarray
    caches: tuple[frozenset[int], ...]
    user_positions: np.ndarray
    requests: np.ndarray
    signal_range: float
    interference_range: float
    distances: np.ndarray
    nearby_users: tuple[tuple[int, ...], ...]
    servable_users: tuple[tuple[int, ...], ...]
    nearby_nodes: tuple[tuple[int, ...], ...]
    source_nodes: tuple[tuple[int, ...], ...]

    @property
    def n_nodes(self) -> int:
        return len(self.caches)

    @property
    def n_users(self) -> int:
        return len(self.requests)

    @classmethod
    def build(
        cls,
        node_positions,
        caches,
        user_positions,
        requests,
        signal_range: float,
        interference_range: float,
    ) -> "Topology":
        topo, _, _ = cls._construct(
            node_positions, caches, user_positions, requests, signal_range, interference_range
        )
        return topo

    @classmethod
    def _construct(cls, node_positions, caches, user_positions, requests, signal_range, interference_range):
        """Build and prune; also returns the survivors' original indices."""
        if not 0 < signal_range < interference_range:
            raise ConfigurationError(
                f"need 0 < signal range < interference range, got {signal_range}, {interference_range}"
            )
        node_positions = np.asarray(node_positions, dtype=float).reshape(-1, 2)
        user_positions = np.asarray(user_positions, dtype=float).reshape(-1, 2)
        requests = np.asarray(requests, dtype=np.int64).reshape(-1)
        caches = tuple(frozenset(int(f) for f in c) for c in caches)
        if len(caches) != len(node_positions):
            raise ConfigurationError("one cache set per node required")
        if len(requests) != len(user_positions):
            raise ConfigurationError("one requested file per user required")

        def neighbor_masks(npos, upos, req, csets):
            diff = npos[:, None, :] - upos[None, :, :]
            dist = np.sqrt((diff**2).sum(axis=2))
            hit = np.zeros(dist.shape, dtype=bool)
            for m, cached in enumerate(csets):
                if len(req):
                    hit[m] = np.isin(req, list(cached)) if cached else False
            in_range = dist <= interference_range
            servable = (dist <= signal_range) & hit
            return dist, in_range, servable

        _, _, servable = neighbor_masks(node_positions, user_positions, requests, caches)
        keep_users = np.flatnonzero(servable.any(axis=0))
        keep_nodes = np.flatnonzero(servable[:, keep_users].any(axis=1)) if len(keep_users) else np.array([], dtype=int)

        node_positions = node_positions[keep_nodes]
        caches = tuple(caches[m] for m in keep_nodes)
        user_positions = user_positions[keep_users]
        requests = requests[keep_users]
        dist, in_range, servable = neighbor_masks(node_positions, user_positions, requests, caches)
        if np.any(in_range & (dist <= 0)):
            raise ConfigurationError("co-located node/user pair (zero distance) is not supported")

        topo = cls(
            node_positions=node_positions,
            caches=caches,
            user_positions=user_positions,
            requests=requests,
            signal_range=float(signal_range),
            interference_range=float(interference_range),
            distances=dist,
            nearby_users=tuple(tuple(np.flatnonzero(in_range[m])) for m in range(len(caches))),
            servable_users=tuple(tuple(np.flatnonzero(servable[m])) for m in range(len(caches))),
            nearby_nodes=tuple(tuple(np.flatnonzero(in_range[:, n])) for n in range(len(requests))),
            source_nodes=tuple(tuple(np.flatnonzero(servable[:, n])) for n in range(len(requests))),
        )
        return topo, keep_nodes, keep_users

    def restrict(self, node_ids, user_ids):
        """Sub-topology over the given members only (re-pruned and re-indexed).

        Returns (sub_topology, orig_node_ids, orig_user_ids) where position i of
        the id arrays is the original index of sub-entity i.
        """
        node_ids = np.asarray(sorted(node_ids), dtype=int)
        user_ids = np.asarray(sorted(user_ids), dtype=int)
        sub, kept_nodes, kept_users = Topology._construct(
            self.node_positions[node_ids],
            [self.caches[m] for m in node_ids],
            self.user_positions[user_ids],
            self.requests[user_ids],
            self.signal_range,
            self.interference_range,
        )
        return sub, node_ids[kept_nodes], user_ids[kept_users]

    def to_dict(self) -> dict:
        return {
            "format": TOPOLOGY_FORMAT,
            "signal_range": self.signal_range,
            "interference_range": self.interference_range,
            "nodes": [
                {
                    "id": m,
                    "x": float(self.node_positions[m, 0]),
                    "y": float(self.node_positions[m, 1]),
                    "cache": sorted(self.caches[m]),
                }
                for m in range(self.n_nodes)
            ],
            "users": [
                {
                    "id": n,
                    "x": float(self.user_positions[n, 0]),
                    "y": float(self.user_positions[n, 1]),
                    "file": int(self.requests[n]),
                }
                for n in range(self.n_users)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Topology":
        if data.get("format") != TOPOLOGY_FORMAT:
            raise ConfigurationError(f"unrecognized topology format {data.get('format')!r}")
        nodes = sorted(data["nodes"], key=lambda r: r["id"])
        users = sorted(data["users"], key=lambda r: r["id"])
        return cls.build(
            [(r["x"], r["y"]) for r in nodes],
            [r["cache"] for r in nodes],
            [(r["x"], r["y"]) for r in users],
            [r["file"] for r in users],
            data["signal_range"],
            data["interference_range"],
        )

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, path) -> "Topology":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def helper_positions(coverage_radius: float) -> np.ndarray:
    """The three fixed helper locations used by the helper scenario."""
    r = float(coverage_radius)
    return np.array(
        [(0.0, 0.0), (5.0 / 3.0 * r, 0.0), (5.0 / 6.0 * r, 5.0 * math.sqrt(3.0) / 6.0 * r)]
    )


def build_helper_topology(
    coverage_radius: float,
    user_intensity: float,
    library: Library,
    rng: np.random.Generator,
    placement: str = "popularity",
    explicit: dict | None = None,
) -> Topology:
    """Three fixed helpers with signal range R and interference range 3R.

    Users are drawn by a PPP over the bounding box of the three interference
    disks; anybody outside every helper's serving reach is pruned by the
    topology constructor.
    """
    if coverage_radius <= 0:
        raise ConfigurationError("coverage radius must be positive")
    nodes = helper_positions(coverage_radius)
    caches = place_content(len(nodes), library, placement, rng, explicit)
    region = Region.disk_union(nodes, 3.0 * coverage_radius)
    box = Region.rectangle(*region.bounds)
    users = generate_ppp_points(box, user_intensity, rng)
    requests = library.sample_requests(len(users), rng)
    return Topology.build(nodes, caches, users, requests, coverage_radius, 3.0 * coverage_radius)


def split_active_devices(points: np.ndarray, activity_prob: float, rng: np.random.Generator):
    """Independently mark each device active (a requesting user) with the given probability.

    Returns (user_positions, node_positions).
    """
    if not 0 <= activity_prob <= 1:
        raise ConfigurationError("activity probability must lie in [0, 1]")
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    active = rng.random(len(points)) < activity_prob
    return points[active], points[~active]


def build_d2d_topology(
    side: float,
    intensity: float,
    activity_prob: float,
    library: Library,
    rng: np.random.Generator,
    signal_range: float = 100.0,
    interference_range: float = 300.0,
    placement: str = "popularity",
    explicit: dict | None = None,
) -> Topology:
    """Square-region device network; inactive devices act as caching nodes.

    Active users that no inactive device can serve are dropped (they would be
    handled by the infrastructure and play no role here).
    """
    devices = generate_ppp_points(Region.square(side), intensity, rng)
    users, nodes = split_active_devices(devices, activity_prob, rng)
    caches = place_content(len(nodes), library, placement, rng, explicit)
    requests = library.sample_requests(len(users), rng)
    return Topology.build(nodes, caches, users, requests, signal_range, interference_range)
