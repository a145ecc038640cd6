"""Model -> reachability -> attack graph -> layer stack -> value iteration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Mapping

from .attackgraph import DEFAULT_STATE_ENUM_CAP, AttackGraph, GraphKind, generate
from .mdpstack import (
    DEFAULT_GAMMA,
    DEFAULT_P_BOUNDS,
    AdversaryProfile,
    LayerStack,
    TaskSpec,
    TerrainSpec,
    build_stack,
)
from .netmodel import NetworkModel, ReachabilityMatrix, Tag, compute_reachability
from .solver import Solution, policy_states, value_iteration


@dataclass(frozen=True)
class PipelineSpec:
    task: TaskSpec
    terrain: TerrainSpec = field(default_factory=TerrainSpec)
    adversary: AdversaryProfile = field(default_factory=AdversaryProfile)
    generator: GraphKind = GraphKind.STATE_ENUMERATION
    monotone: bool = True
    gamma: float = DEFAULT_GAMMA
    p_bounds: tuple[float, float] = DEFAULT_P_BOUNDS
    eps: float = 1e-8
    max_hosts: int = DEFAULT_STATE_ENUM_CAP

    def protected_hosts(self) -> set[str]:
        """Hosts the task depends on; mutation streams leave them in place."""
        return {self.task.source, *self.task.targets}


@dataclass
class Built:
    model: NetworkModel
    reach: ReachabilityMatrix
    graph: AttackGraph
    stack: LayerStack
    solution: Solution

    @property
    def mdp(self):
        return self.stack.task


def with_entry(model: NetworkModel, entry: str) -> NetworkModel:
    """Move the ENTRY tag to ``entry`` (adversary infrastructure override)."""
    hosts = []
    for h in model.hosts:
        tags = set(h.tags) - {Tag.ENTRY}
        if h.id == entry:
            tags.add(Tag.ENTRY)
        hosts.append(dataclasses.replace(h, tags=frozenset(tags)))
    return model.replace(hosts=tuple(hosts))


def build(model: NetworkModel, spec: PipelineSpec, warm_values: Mapping[str, float] | None = None) -> Built:
    if spec.adversary.infrastructure_entry:
        model = with_entry(model, spec.adversary.infrastructure_entry)
    entry = model.entry_host().id
    reach = compute_reachability(model)
    kwargs = {"max_hosts": spec.max_hosts, "monotone": spec.monotone} if spec.generator is GraphKind.STATE_ENUMERATION else {}
    graph = generate(model, reach, entry, spec.generator, **kwargs)
    stack = build_stack(graph, model, reach, spec.terrain, spec.adversary, spec.task, spec.gamma, spec.p_bounds)
    solution = value_iteration(stack.task, spec.eps, initial_values=warm_values)
    return Built(model, reach, graph, stack, solution)


def uses_monitored_route(built: Built) -> bool:
    """True iff some on-path action of the optimal policy is monitored."""
    m = built.mdp
    for s in policy_states(m, built.solution.policy):
        meta = m.arcs[(s, built.solution.policy[s])].meta
        if meta is not None and meta.monitored:
            return True
    return False


@dataclass(frozen=True)
class ThresholdResult:
    """``penalty`` is the smallest bracketed magnitude that avoids monitoring."""

    penalty: float | None
    lower: float
    upper: float
    iterations: int


def obstacle_threshold(
    model: NetworkModel,
    spec: PipelineSpec,
    max_penalty: float = 100.0,
    tol: float = 1e-6,
) -> ThresholdResult:
    """Bisect the obstacle penalty magnitude at which the optimal policy stops
    using monitored routes. ``penalty`` is None when even ``max_penalty``
    does not push it off.

    Assumes the switch is monotone in the penalty, which holds because the
    penalty only lowers rewards of monitored arcs.
    """

    def avoids(mag: float) -> bool:
        terrain = dataclasses.replace(spec.terrain, obstacle_penalty=-mag)
        return not uses_monitored_route(build(model, dataclasses.replace(spec, terrain=terrain)))

    if avoids(0.0):
        return ThresholdResult(0.0, 0.0, 0.0, 0)
    if not avoids(max_penalty):
        return ThresholdResult(None, max_penalty, max_penalty, 0)
    lo, hi, it = 0.0, max_penalty, 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if avoids(mid):
            hi = mid
        else:
            lo = mid
        it += 1
    return ThresholdResult(hi, lo, hi, it)
