"""Discrete-time simulation driver: configuration, slot loop, metrics, sweeps."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import baselines, belief_propagation as bp
from .channel import sample_channel
from .matching import link_schedule
from .objective import LinkParams, PowerGrid, ScheduleDecision, global_utility, user_rates
from .queueing import QueueState, departures, sample_arrivals
from .topology import ConfigurationError, Library, Topology, build_d2d_topology, build_helper_topology

SCHEDULERS = (
    "bp-matching",
    "bp-raw",
    "approx-bp-matching",
    "exhaustive",
    "cluster1",
    "cluster2",
)

# Entropy tags keeping the per-run random streams disjoint.
_TOPOLOGY_STREAM = 101
_ARRIVAL_STREAM = 102
_ORDER_STREAM = 104
_SWEEP_STREAM = 105


@dataclass(frozen=True)
class SimConfig:
    """Everything one run needs; defaults mirror the standard parameter table."""

    scenario: str = "helper"
    scheduler: str = "bp-matching"
    seed: int = 0
    slots: int = 1000
    power_weight: float = 1.0  # tradeoff knob: higher favors power savings over backlog
    max_arrivals: int = 3
    # physical constants
    bandwidth_hz: float = 10e6
    noise_power: float = 1e-8
    slot_seconds: float = 0.01
    chunk_bits: float = 20e3
    path_loss_exponent: float = 3.0
    q_max_watts: float = 2.0
    power_levels: int = 4
    # belief propagation
    bp_iterations: int = 5
    sharpness: float = 1.0
    bp_neighborhood: int = 1
    bp_max_enumeration: int = 1_000_000
    # metrics
    delay_thresholds: tuple = (5, 10, 20)
    # helper scenario
    helper_coverage_radius: float = 100.0
    helper_user_intensity: float = 0.01e-2
    # d2d scenario
    d2d_side: float = 600.0
    d2d_intensity: float = 0.04e-2
    d2d_activity_prob: float = 0.2
    signal_range: float = 100.0
    interference_range: float = 300.0
    # content
    library_files: int = 100
    zipf_exponent: float = 0.8
    cache_capacity: int = 10
    placement: str = "popularity"
    # baselines / matching
    cluster_divisions: int = 3
    matching_order: str = "ascending"
    # optional pre-built scenario
    topology_path: str | None = None
    out: str | None = None

    def __post_init__(self):
        if self.scenario not in ("helper", "d2d"):
            raise ConfigurationError(f"unknown scenario {self.scenario!r}")
        if self.scheduler not in SCHEDULERS:
            raise ConfigurationError(
                f"unknown scheduler {self.scheduler!r}; choose from {', '.join(SCHEDULERS)}"
            )
        if self.slots < 1:
            raise ConfigurationError("need at least one slot")
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")
        if self.power_weight < 0:
            raise ConfigurationError("power weight must be non-negative")
        if self.matching_order not in ("ascending", "random"):
            raise ConfigurationError("matching order must be 'ascending' or 'random'")
        for name in (
            "bandwidth_hz", "noise_power", "slot_seconds", "chunk_bits",
            "path_loss_exponent", "q_max_watts",
        ):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        if "delay_thresholds" in data:
            data = dict(data, delay_thresholds=tuple(data["delay_thresholds"]))
        return cls(**data)

    @classmethod
    def from_json_file(cls, path) -> "SimConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        data = asdict(self)
        data["delay_thresholds"] = list(self.delay_thresholds)
        return data

    def override(self, **changes) -> "SimConfig":
        if "delay_thresholds" in changes:
            changes["delay_thresholds"] = tuple(changes["delay_thresholds"])
        return replace(self, **changes)

    # derived pieces
    def power_grid(self) -> PowerGrid:
        return PowerGrid.uniform(self.q_max_watts, self.power_levels)

    def link_params(self) -> LinkParams:
        return LinkParams(
            bandwidth_hz=self.bandwidth_hz,
            noise_power=self.noise_power,
            slot_seconds=self.slot_seconds,
            chunk_bits=self.chunk_bits,
        )

    def bp_config(self, approximate: bool | None = None) -> bp.BpConfig:
        return bp.BpConfig(
            iterations=self.bp_iterations,
            sharpness=self.sharpness,
            approximate=self.scheduler == "approx-bp-matching" if approximate is None else approximate,
            neighborhood_size=self.bp_neighborhood,
            max_enumeration=self.bp_max_enumeration,
        )

    def library(self) -> Library:
        return Library(
            files=self.library_files,
            zipf_exponent=self.zipf_exponent,
            cache_capacity=self.cache_capacity,
        )


def build_topology(config: SimConfig) -> Topology:
    """Generate (or load) the scenario topology for a run."""
    if config.topology_path:
        return Topology.from_json(config.topology_path)
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, _TOPOLOGY_STREAM)))
    if config.scenario == "helper":
        return build_helper_topology(
            config.helper_coverage_radius,
            config.helper_user_intensity,
            config.library(),
            rng,
            placement=config.placement,
        )
    return build_d2d_topology(
        config.d2d_side,
        config.d2d_intensity,
        config.d2d_activity_prob,
        config.library(),
        rng,
        signal_range=config.signal_range,
        interference_range=config.interference_range,
        placement=config.placement,
    )


@dataclass
class SlotOutcome:
    decision: ScheduleDecision
    rates: np.ndarray
    utility: float
    proposals: int | None = None


def build_scheduler(name: str, config: SimConfig, topology: Topology):
    """Returns a callable (channel, backlog, slot) -> SlotOutcome."""
    grid = config.power_grid()
    params = config.link_params()

    def node_order(slot):
        if config.matching_order == "ascending":
            return None
        rng = np.random.default_rng(np.random.SeedSequence((config.seed, _ORDER_STREAM, slot)))
        return rng.permutation(topology.n_nodes)

    if name in ("bp-matching", "approx-bp-matching"):
        bp_cfg = config.bp_config(approximate=name == "approx-bp-matching")

        def schedule(channel, backlog, slot):
            marginals = bp.run_bp(topology, channel, backlog, config.power_weight, bp_cfg, grid, params)
            outcome = link_schedule(
                marginals, topology, channel, backlog, config.power_weight, grid, params,
                node_order=node_order(slot),
            )
            rates = user_rates(outcome.decision, topology, channel, grid, params)
            return SlotOutcome(outcome.decision, rates, outcome.utility, outcome.proposals)

    elif name == "bp-raw":
        bp_cfg = config.bp_config(approximate=False)

        def schedule(channel, backlog, slot):
            marginals = bp.run_bp(topology, channel, backlog, config.power_weight, bp_cfg, grid, params)
            decision = bp.decide(marginals)
            rates = user_rates(decision, topology, channel, grid, params)
            utility = global_utility(decision, topology, channel, backlog, config.power_weight, grid, params)
            return SlotOutcome(decision, rates, utility)

    elif name == "exhaustive":

        def schedule(channel, backlog, slot):
            decision = baselines.exhaustive_search(
                topology, channel, backlog, config.power_weight, grid, params
            )
            rates = user_rates(decision, topology, channel, grid, params)
            utility = global_utility(decision, topology, channel, backlog, config.power_weight, grid, params)
            return SlotOutcome(decision, rates, utility)

    elif name == "cluster1":
        clusters = _cluster_grid(config)

        def schedule(channel, backlog, slot):
            decision, rates, utility = baselines.clustering_schedule_1(
                topology, channel, backlog, config.power_weight, grid, params, clusters
            )
            return SlotOutcome(decision, rates, utility)

    elif name == "cluster2":
        clusters = _cluster_grid(config)
        bp_cfg = config.bp_config(approximate=True)

        def schedule(channel, backlog, slot):
            decision, rates, utility = baselines.clustering_schedule_2(
                topology, channel, backlog, config.power_weight, grid, params, clusters, bp_cfg
            )
            return SlotOutcome(decision, rates, utility)

    else:
        raise ConfigurationError(f"unknown scheduler {name!r}")

    return schedule


def _cluster_grid(config: SimConfig) -> baselines.ClusterGrid:
    side = config.d2d_side if config.scenario == "d2d" else 6 * config.helper_coverage_radius
    return baselines.ClusterGrid.for_square(side, config.cluster_divisions)


@dataclass
class SlotMetrics:
    slot: int
    queues: np.ndarray  # backlog at slot start, before service
    total_power: float
    active_links: int
    served: int
    utility: float
    served_late: tuple  # cumulative late-served chunks per threshold
    decision_code: str

    @property
    def total_queue(self) -> int:
        return int(self.queues.sum())


def metrics_header(n_users: int, thresholds) -> list[str]:
    return (
        ["slot", "total_queue", "total_power", "active_links", "served", "utility"]
        + [f"served_late_gt{d}" for d in thresholds]
        + ["decision"]
        + [f"queue_u{n}" for n in range(n_users)]
    )


def metrics_row(row: SlotMetrics) -> list[str]:
    return (
        [str(row.slot), str(row.total_queue), repr(row.total_power), str(row.active_links),
         str(row.served), repr(row.utility)]
        + [str(c) for c in row.served_late]
        + [row.decision_code]
        + [str(int(q)) for q in row.queues]
    )


@dataclass
class SimResult:
    config: SimConfig
    topology: Topology
    rows: list
    summary: dict

    def total_queue_series(self) -> np.ndarray:
        return np.array([r.total_queue for r in self.rows])


# A queue growing linearly from slot 0 has last-decile mean ~1.9x its middle-decile
# mean, so the flagging ratio must sit below that; the +1 chunk floor keeps noise
# around a near-empty stable queue from tripping the test.
_DIVERGENCE_RATIO = 1.5
_DIVERGENCE_FLOOR = 1.0


def queue_series_diverges(totals) -> bool:
    """Unstable when the last tenth of slots averages well above the middle tenth."""
    totals = np.asarray(totals, dtype=float)
    n = len(totals)
    if n < 10:
        return False
    mid = totals[int(0.45 * n): max(int(0.45 * n) + 1, int(0.55 * n))]
    last = totals[int(0.9 * n):]
    return float(last.mean()) > _DIVERGENCE_RATIO * float(mid.mean()) + _DIVERGENCE_FLOOR


def run_simulation(config: SimConfig, topology: Topology | None = None) -> SimResult:
    """Slot loop: sample channel, schedule, serve, then take arrivals.

    Fully deterministic given (config, seed): topology, per-pair channel
    substreams, and arrivals each derive from their own tagged stream.
    """
    topo = topology if topology is not None else build_topology(config)
    if topo.n_users == 0 or topo.n_nodes == 0:
        raise ConfigurationError("topology has no servable user/node pairs")
    grid = config.power_grid()
    schedule = build_scheduler(config.scheduler, config, topo)
    queues = QueueState(topo.n_users, config.delay_thresholds)
    arrival_rng = np.random.default_rng(np.random.SeedSequence((config.seed, _ARRIVAL_STREAM)))
    rows = []
    for slot in range(config.slots):
        channel = sample_channel(topo, config.path_loss_exponent, slot, config.seed)
        backlog = queues.backlog
        outcome = schedule(channel, backlog, slot)
        mu = departures(outcome.rates, backlog, config.slot_seconds, config.chunk_bits)
        arrivals = sample_arrivals(topo.n_users, config.max_arrivals, arrival_rng)
        queues.advance(arrivals, mu, slot)
        rows.append(
            SlotMetrics(
                slot=slot,
                queues=backlog,
                total_power=outcome.decision.total_power(grid),
                active_links=outcome.decision.active_links,
                served=int(mu.sum()),
                utility=outcome.utility,
                served_late=tuple(int(c) for c in queues.served_late),
                decision_code=outcome.decision.encode(),
            )
        )
    summary = summarize(config, topo, rows, queues)
    return SimResult(config=config, topology=topo, rows=rows, summary=summary)


def summarize(config: SimConfig, topology: Topology, rows, queues: QueueState) -> dict:
    totals = np.array([r.total_queue for r in rows], dtype=float)
    powers = np.array([r.total_power for r in rows])
    now = len(rows)  # measurement time for still-queued chunks
    failure = queues.failure_rates(now)
    return {
        "scenario": config.scenario,
        "scheduler": config.scheduler,
        "seed": config.seed,
        "slots": len(rows),
        "n_nodes": topology.n_nodes,
        "n_users": topology.n_users,
        "time_avg_total_queue": float(totals.mean()),
        "time_avg_power": float(powers.mean()),
        "avg_active_links": float(np.mean([r.active_links for r in rows])),
        "mean_utility": float(np.mean([r.utility for r in rows])),
        "stable": not queue_series_diverges(totals),
        "final_total_queue": int(totals[-1]),
        "remaining_backlog": int(queues.backlog.sum()),
        "chunks_arrived": int(queues.arrived.sum()),
        "chunks_served": int(queues.served.sum()),
        "failure_rates": {str(d): float(f) for d, f in zip(config.delay_thresholds, failure)},
        "config": config.to_dict(),
    }


def write_metrics_csv(result: SimResult, path) -> None:
    header = metrics_header(result.topology.n_users, result.config.delay_thresholds)
    lines = [",".join(header)]
    lines += [",".join(metrics_row(r)) for r in result.rows]
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_summary_json(summary: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def replicate_seed(base_seed: int, value_index: int, replicate: int) -> int:
    """Per-run seed for sweeps; the first run keeps the base seed, so a
    single-value, single-replicate sweep reproduces a plain run exactly."""
    if value_index == 0 and replicate == 0:
        return base_seed
    ss = np.random.SeedSequence((base_seed, _SWEEP_STREAM, value_index, replicate))
    return int(ss.generate_state(1, dtype=np.uint64)[0] % (2**63))


SWEEPABLE = ("power_weight", "max_arrivals", "delay_threshold")


def sweep(config: SimConfig, parameter: str, values, replicates: int = 1) -> list[dict]:
    """Repeat runs over parameter values on one shared topology.

    Each (value, replicate) pair gets its own derived channel/arrival seed;
    the topology is built once from the base config.  Returns one summary row
    per value with replicate-averaged metrics.
    """
    if parameter not in SWEEPABLE:
        raise ConfigurationError(f"sweep parameter must be one of {SWEEPABLE}")
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    topo = build_topology(config)
    rows = []
    for vi, value in enumerate(values):
        if parameter == "power_weight":
            run_cfg = config.override(power_weight=float(value))
        elif parameter == "max_arrivals":
            run_cfg = config.override(max_arrivals=int(value))
        else:
            run_cfg = config.override(delay_thresholds=(int(value),))
        reps = []
        for r in range(replicates):
            seeded = run_cfg.override(seed=replicate_seed(config.seed, vi, r))
            reps.append(run_simulation(seeded, topology=topo).summary)
        rows.append(
            {
                "parameter": parameter,
                "value": value,
                "replicates": replicates,
                "time_avg_total_queue": float(np.mean([s["time_avg_total_queue"] for s in reps])),
                "time_avg_power": float(np.mean([s["time_avg_power"] for s in reps])),
                "mean_utility": float(np.mean([s["mean_utility"] for s in reps])),
                "stable_fraction": float(np.mean([1.0 if s["stable"] else 0.0 for s in reps])),
                "failure_rates": {
                    d: float(np.mean([s["failure_rates"][d] for s in reps]))
                    for d in reps[0]["failure_rates"]
                },
            }
        )
    return rows


def write_sweep_csv(rows, path) -> None:
    header = [
        "parameter", "value", "replicates", "time_avg_total_queue",
        "time_avg_power", "mean_utility", "stable_fraction",
    ]
    lines = [",".join(header)]
    for row in rows:
        lines.append(
            ",".join(
                [row["parameter"], repr(float(row["value"])), str(row["replicates"]),
                 repr(row["time_avg_total_queue"]), repr(row["time_avg_power"]),
                 repr(row["mean_utility"]), repr(row["stable_fraction"])]
            )
        )
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def compare(config: SimConfig, scheduler_a: str, scheduler_b: str, topology: Topology | None = None):
    """Run two schedulers in lockstep on one topology with shared randomness.

    Both evolve their own queues under identical channel and arrival draws.
    Additionally, scheduler B is evaluated each slot on A's queue state, so
    per-slot utilities are comparable on equal terms; with B = exhaustive the
    reference utility is a true per-slot upper bound for A.

    Returns (report, result_a, result_b); the report's utility ratio averages
    utility_a / reference over slots where the reference is positive.
    """
    topo = topology if topology is not None else build_topology(config)
    if topo.n_users == 0 or topo.n_nodes == 0:
        raise ConfigurationError("topology has no servable user/node pairs")
    grid = config.power_grid()
    cfg_a = config.override(scheduler=scheduler_a)
    cfg_b = config.override(scheduler=scheduler_b)
    sched_a = build_scheduler(scheduler_a, cfg_a, topo)
    sched_b = build_scheduler(scheduler_b, cfg_b, topo)
    queues_a = QueueState(topo.n_users, config.delay_thresholds)
    queues_b = QueueState(topo.n_users, config.delay_thresholds)
    arrival_rng = np.random.default_rng(np.random.SeedSequence((config.seed, _ARRIVAL_STREAM)))
    rows_a, rows_b = [], []
    utilities_a, references = [], []
    for slot in range(config.slots):
        channel = sample_channel(topo, config.path_loss_exponent, slot, config.seed)
        backlog_a = queues_a.backlog
        backlog_b = queues_b.backlog
        out_a = sched_a(channel, backlog_a, slot)
        reference = sched_b(channel, backlog_a, slot)
        out_b = sched_b(channel, backlog_b, slot)
        utilities_a.append(out_a.utility)
        references.append(reference.utility)
        arrivals = sample_arrivals(topo.n_users, config.max_arrivals, arrival_rng)
        for queues, backlog, out, rows in (
            (queues_a, backlog_a, out_a, rows_a),
            (queues_b, backlog_b, out_b, rows_b),
        ):
            mu = departures(out.rates, backlog, config.slot_seconds, config.chunk_bits)
            queues.advance(arrivals, mu, slot)
            rows.append(
                SlotMetrics(
                    slot=slot,
                    queues=backlog,
                    total_power=out.decision.total_power(grid),
                    active_links=out.decision.active_links,
                    served=int(mu.sum()),
                    utility=out.utility,
                    served_late=tuple(int(c) for c in queues.served_late),
                    decision_code=out.decision.encode(),
                )
            )
    result_a = SimResult(cfg_a, topo, rows_a, summarize(cfg_a, topo, rows_a, queues_a))
    result_b = SimResult(cfg_b, topo, rows_b, summarize(cfg_b, topo, rows_b, queues_b))
    utilities_a = np.array(utilities_a)
    references = np.array(references)
    positive = references > 0
    report = {
        "scheduler_a": scheduler_a,
        "scheduler_b": scheduler_b,
        "slots": config.slots,
        "seed": config.seed,
        "mean_utility_ratio": float((utilities_a[positive] / references[positive]).mean())
        if positive.any()
        else 1.0,
        "ratio_slots": int(positive.sum()),
        "a_exceeds_reference_slots": int((utilities_a > references).sum()),
        "summary_a": result_a.summary,
        "summary_b": result_b.summary,
    }
    return report, result_a, result_b
