"""Two-reservoir risk-aware perimeter control simulator."""

from .bathtub import (DemandModel, GateState, SystemState, Trip, TripLengthDist,
                      advance, detour_fractions, effective_demands,
                      exit_flow_exponential, generate_arrivals)
from .config import (ConfigError, CostWeights, Scenario, bundled_scenario,
                     parse_scenario, scenario_from_dict, scenario_to_dict)
from .control import GatePolicy, RolloutResult, ThresholdMPC, optimize_threshold, rollout_cost
from .fundamentals import (DegradationState, DomainError, FundamentalDiagram,
                           ReservoirParams, degradation_factor, effective_speed,
                           flow, speed)
from .harness import (Aggregate, RunResult, run_monte_carlo, run_simulation, sweep)
from .hawkes import (HawkesState, MomentState, decay_load, intensity,
                     kolmogorov_forward, moment_step, sample_accidents)
from .steady_state import (InfeasibleDemandError, risk_adjusted_occupancies,
                           steady_state_gates, steady_state_occupancies)

__version__ = "0.1.0"
