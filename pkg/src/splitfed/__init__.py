"""Split federated learning toolkit.

Latency modeling of split training over heterogeneous edge networks,
convergence bounds linking aggregation interval and split depth to
training progress, an exact joint planner for both decisions, and a
deterministic desk-scale training engine to validate all of it.
"""

from .bound import (BoundInputs, HyperParams, InfeasibleAccuracy,
                    convergence_bound, drift_bound, min_rounds,
                    min_rounds_int, weighted_objective)
from .engine import (ConstantsEstimate, TimingTrace, TrainingDiverged,
                     TrainingState, TrainResult, averaged_layers,
                     estimate_constants, init_state, replay_timing, train)
from .latency import (LatencyBreakdown, SplitDecision, breakdown_rows,
                      ma_latency, split_round_latency, total_cycle_latency)
from .model import DataShards, LayeredModel, make_dataset, make_shards
from .network import (DeviceResources, FieldSpec, NetworkSnapshot,
                      ResourceDistribution, ServerResources, constant,
                      sample_snapshot, uniform)
from .optimizer import (AuxVars, DenominatorNonpositive, DinkelbachResult,
                        IntervalSolution, NonConvergence, OptimizerSolution,
                        bcd, dinkelbach, evaluate_split, inner_milp,
                        solve_interval, xi)
from .profile import (LayerStats, ModelProfile, ProfileError, build_profile,
                      cumulative_moment, load_profile, save_profile)
from .runner import (RunRecord, ScenarioConfig, load_config, run_scenario,
                     summarize, sweep)

__version__ = "0.1.0"
