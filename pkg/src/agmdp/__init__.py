"""Attack graphs turned into layered MDPs, solved with tabular RL and
grounded against a mutating synthetic network."""

__version__ = "0.1.0"

from .errors import (
    AgmdpError,
    EmptyActionSet,
    EmptyGraph,
    InvalidEvent,
    InvalidModel,
    LayerOrder,
    OracleScaleExceeded,
    ScenarioInvalid,
    StateSpaceCap,
    TargetMissing,
)
from .cvss import CvssVector, base_score, exploitability_score, impact_score
from .netmodel import (
    Action,
    FirewallRule,
    Host,
    MutationEvent,
    MutationKind,
    NetworkModel,
    PrivilegeLevel,
    ReachabilityMatrix,
    Tag,
    Vulnerability,
    apply_mutation,
    compute_reachability,
    mutation_stream,
)
from .attackgraph import (
    AttackGraph,
    GoalSpec,
    GraphKind,
    generate,
    generate_exploit_dependency,
    generate_state_enumeration,
    graph_stats,
    prune_to_goal,
)
from .mdpstack import (
    AdversaryProfile,
    LayeredMdp,
    TaskKind,
    TaskSpec,
    TerrainSpec,
    apply_adversary,
    apply_task,
    apply_terrain,
    build_generic,
    build_stack,
    mdp_diff,
)
from .solver import (
    optimal_agreement,
    QTable,
    brute_force_return,
    detect_cycle_exploit,
    q_learning,
    rollout,
    value_iteration,
    warm_start,
)
from .pipeline import PipelineSpec, build, obstacle_threshold
from .grounding import GroundingConfig, GroundingReport, actuate, run_grounded, sweep
from .scenario import Scenario, load_scenario, parse_scenario
