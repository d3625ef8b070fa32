"""Distributed link scheduling and power allocation for wireless caching networks.

Library layout:
  topology            scenario generation, content placement, neighbor sets
  channel             block-fading gains with power-law path loss
  queueing            per-user chunk queues and delay accounting
  objective           rates and the per-slot drift-plus-penalty utility
  belief_propagation  factor-graph marginals over per-node decisions
  matching            one-to-one repair of belief-propagation output
  baselines           exhaustive oracle and grid-clustering schemes
  sim                 slot-loop driver, metrics, sweeps, comparisons
"""

from .baselines import ClusterGrid, SearchSpaceError, clustering_schedule_1, clustering_schedule_2, exhaustive_search
from .belief_propagation import (
    BeliefState,
    BpConfig,
    EnumerationLimitError,
    NodeMarginals,
    approx_factor_update,
    decide,
    factor_update,
    init_messages,
    run_bp,
    variable_update,
)
from .channel import ChannelRealization, path_gain, sample_channel
from .matching import Matching, MatchingResult, link_schedule, match_request, power_for, preference_order
from .objective import (
    LinkParams,
    PowerGrid,
    ScheduleDecision,
    global_utility,
    per_user_utility,
    user_rate,
    user_rates,
)
from .queueing import QueueState, departures, sample_arrivals
from .sim import SimConfig, SimResult, compare, queue_series_diverges, run_simulation, sweep
from .topology import (
    ConfigurationError,
    Library,
    Region,
    Topology,
    build_d2d_topology,
    build_helper_topology,
    generate_ppp_points,
    place_content,
)

__version__ = "0.1.0"
