"""Movement-pattern-aware routing for social delay-tolerant networks."""
from .core import (ContractError, DimensionError, MovementPattern, MovementRecord, Network, ParameterError,
                   SlotInterval, TimeGrid, accumulate, extract_pattern, load_network, meeting_intervals,
                   movement_pattern)
from .optimizer import TabuParams, brute_force_opt, local_search, tabu_search, tabu_search_restarts
from .prob import CoDelivery, RateContext, expected_delay, race_probability, set_delivery_prob

__version__ = "0.1.0"
