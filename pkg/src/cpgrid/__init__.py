"""Sparse sensor-controller topology design and decentralized gain synthesis."""

from .model import (CH4_PARAMS, GridParams, ModelConstructionError, StateSpaceModel,
                    build_from_params, chain_extend, closed_loop, delay_closed_loop,
                    four_bus_canonical, zone_model)
from .topology import (ConnectionSet, ConstraintSet, LayeredNetwork, SparsityMask,
                       bandwidth_filter, cbscd, complete_sets, cost_configurations,
                       enumerate_paths, load_fixture, mask_from_set)
from .synthesis import (InfeasibleError, SynthesisError, SynthesisProblem, SynthesisResult,
                        alpha_bound, lyapunov_P, max_gamma, max_gamma_delay, select_best,
                        zone_design)
from .scheduler import Task, distribute_loads, metrics, random_taskset, run
from .commsim import Broker, Message, TopicError, simulate_closed_loop
from .harness import SCENARIOS, Settings, run_many, run_scenario

__version__ = "0.1.0"
