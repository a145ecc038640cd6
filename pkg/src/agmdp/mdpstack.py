"""Layered MDP construction over attack graphs.

A generic MDP is built from an attack graph, then refined by terrain,
adversary and task transforms applied in that fixed order. Each transform is
pure and appends its layer tag.

Every admissible (state, action) pair is an :class:`Arc`: on success the
process moves to ``success``, otherwise it stays put. Rewards are split into
``gain`` (paid on success) and ``cost`` (paid on every attempt), so
``R(s, a) = p * gain + cost`` is the expected immediate reward.
"""

from __future__ import annotations

import dataclasses
import fnmatch
import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .attackgraph import AttackGraph, ExploitInstance, GoalSpec, GraphKind, NodeKind
from .cvss import EXPLOITABILITY_MAX, IMPACT_MAX, exploitability_score, impact_score
from .errors import EmptyActionSet, EmptyGraph, LayerOrder, TargetMissing
from .netmodel import NetworkModel, PrivilegeLevel, ReachabilityMatrix, Tag

DEFAULT_GAMMA = 0.95
DEFAULT_P_BOUNDS = (0.05, 0.99)


class Layer(str, Enum):
    GENERIC = "Generic"
    TERRAIN = "Terrain"
    ADVERSARY = "Adversary"
    TASK = "Task"


LAYER_ORDER = (Layer.GENERIC, Layer.TERRAIN, Layer.ADVERSARY, Layer.TASK)


@dataclass(frozen=True)
class ActionMeta:
    exploit: ExploitInstance
    footholds: tuple[str, ...]
    monitored: bool = False


@dataclass(frozen=True)
class Arc:
    success: str
    p: float
    gain: float = 0.0
    cost: float = 0.0
    meta: ActionMeta | None = None

    @property
    def reward(self) -> float:
        return self.p * self.gain + self.cost

    def distribution(self, state: str) -> dict[str, float]:
        if self.success == state:
            return {state: 1.0}
        return {self.success: self.p, state: 1.0 - self.p}


@dataclass(frozen=True)
class LayeredMdp:
    states: tuple[str, ...]
    initial: str
    arcs: Mapping[tuple[str, str], Arc]
    gamma: float = DEFAULT_GAMMA
    terminals: frozenset[str] = frozenset()
    layers: tuple[Layer, ...] = (Layer.GENERIC,)
    state_privileges: Mapping[str, Mapping[str, PrivilegeLevel]] = field(default_factory=dict)
    host_tags: Mapping[str, frozenset[Tag]] = field(default_factory=dict)
    # Augmented (exfiltration) states map back to attack-graph node ids.
    base_state: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.gamma}")
        if self.initial not in set(self.states):
            raise ValueError(f"initial state {self.initial!r} not among states")
        if tuple(self.layers) != LAYER_ORDER[: len(self.layers)]:
            raise LayerOrder(f"layers {[l.value for l in self.layers]} are not a prefix of the fixed order")

    def replace(self, **changes) -> LayeredMdp:
        return dataclasses.replace(self, **changes)

    @property
    def actions(self) -> tuple[str, ...]:
        return tuple(sorted({a for _, a in self.arcs}))

    @property
    def admissible(self) -> frozenset[tuple[str, str]]:
        return frozenset(self.arcs)

    @property
    def P(self) -> dict[tuple[str, str], dict[str, float]]:
        return {(s, a): arc.distribution(s) for (s, a), arc in self.arcs.items()}

    @property
    def R(self) -> dict[tuple[str, str], float]:
        return {k: arc.reward for k, arc in self.arcs.items()}

    def actions_in(self, state: str) -> list[str]:
        return self._by_state().get(state, [])

    def _by_state(self) -> dict[str, list[str]]:
        idx = self.__dict__.get("_by_state_cache")
        if idx is None:
            idx = {}
            for s, a in self.arcs:
                idx.setdefault(s, []).append(a)
            for v in idx.values():
                v.sort()
            object.__setattr__(self, "_by_state_cache", idx)
        return idx

    def base(self, state: str) -> str:
        return self.base_state.get(state, state)

    def privileges(self, state: str) -> Mapping[str, PrivilegeLevel]:
        return self.state_privileges.get(self.base(state), {})

    def is_absorbing(self, state: str) -> bool:
        return state in self.terminals or not self.actions_in(state)


def clamp(x: float, lo: float, hi: float) -> float:
    return min(max(x, lo), hi)


def success_probability(inst: ExploitInstance, bounds=DEFAULT_P_BOUNDS) -> float:
    return clamp(exploitability_score(inst.cvss) / EXPLOITABILITY_MAX, *bounds)


def success_gain(inst: ExploitInstance, r_max: float = 1.0) -> float:
    return impact_score(inst.cvss) / IMPACT_MAX * r_max


def build_generic(
    g: AttackGraph,
    model: NetworkModel,
    gamma: float = DEFAULT_GAMMA,
    p_bounds: tuple[float, float] = DEFAULT_P_BOUNDS,
    r_max: float = 1.0,
) -> LayeredMdp:
    """One state per graph state (or condition) node, one action per exploit edge.

    Exploit-dependency graphs give a positional MDP: the agent sits on a
    privilege condition and each exploit leads to its postcondition.
    """
    if not g.nodes:
        raise EmptyGraph("cannot build an MDP from an empty attack graph")
    state_kind = NodeKind.STATE if g.kind is GraphKind.STATE_ENUMERATION else NodeKind.CONDITION
    states = tuple(n.id for n in g.nodes if n.kind is state_kind)
    arcs: dict[tuple[str, str], Arc] = {}
    for t in g.transitions:
        inst = t.exploit
        arcs[(t.src, inst.key)] = Arc(
            success=t.dst,
            p=success_probability(inst, p_bounds),
            gain=success_gain(inst, r_max),
            cost=0.0,
            meta=ActionMeta(inst, t.footholds),
        )
    privileges = {n.id: n.privilege_map() for n in g.nodes if n.kind is state_kind}
    tags = {h.id: h.tags for h in model.hosts}
    return LayeredMdp(
        states=states,
        initial=g.initial[0],
        arcs=dict(sorted(arcs.items())),
        gamma=gamma,
        layers=(Layer.GENERIC,),
        state_privileges=privileges,
        host_tags=tags,
    )


def _require_layers(m: LayeredMdp, expected: tuple[Layer, ...], op: str):
    if tuple(m.layers) != expected:
        have = "/".join(l.value for l in m.layers)
        want = "/".join(l.value for l in expected)
        raise LayerOrder(f"{op} needs layers {want}, MDP has {have}")


@dataclass(frozen=True)
class TerrainSpec:
    obstacle_penalty: float = 0.0
    key_terrain: frozenset[str] = frozenset()
    proximity_bonus: float = 0.0
    concealment: Mapping[str, float] = field(default_factory=dict)
    # "per_visit" pays the bonus on every landing, "once" only on first compromise.
    bonus_mode: str = "per_visit"

    def __post_init__(self):
        object.__setattr__(self, "key_terrain", frozenset(self.key_terrain))
        if self.obstacle_penalty > 0:
            raise ValueError("obstacle_penalty must be <= 0")
        if self.proximity_bonus < 0:
            raise ValueError("proximity_bonus must be >= 0")
        for host, d in self.concealment.items():
            if not 0.0 <= d <= 1.0:
                raise ValueError(f"detection probability for {host} outside [0, 1]")
        if self.bonus_mode not in ("per_visit", "once"):
            raise ValueError(f"unknown bonus_mode {self.bonus_mode!r}")


def near_key_terrain(key_terrain: Iterable[str], reach: ReachabilityMatrix) -> set[str]:
    """Key terrain hosts plus every host with a direct route to one of them."""
    key = set(key_terrain)
    near = set(key)
    for (a, b, _), ok in reach.entries.items():
        if ok and b in key and a != b:
            near.add(a)
    return near


def _monitored(meta: ActionMeta, reach: ReachabilityMatrix) -> bool:
    # The attacker takes an unmonitored route whenever one exists.
    inst = meta.exploit
    if inst.cvss.is_local or not meta.footholds:
        return False
    return all(reach.is_monitored(f, inst.host, inst.service) for f in meta.footholds)


def apply_terrain(m: LayeredMdp, t: TerrainSpec, reach: ReachabilityMatrix) -> LayeredMdp:
    _require_layers(m, (Layer.GENERIC,), "apply_terrain")
    near = near_key_terrain(t.key_terrain, reach)
    arcs = {}
    for (s, a), arc in m.arcs.items():
        meta = arc.meta
        if meta is None:
            arcs[(s, a)] = arc
            continue
        host = meta.exploit.host
        monitored = _monitored(meta, reach)
        cost, gain, p = arc.cost, arc.gain, arc.p
        if monitored:
            cost = cost + t.obstacle_penalty
        if host in near:
            first = m.privileges(s).get(host, PrivilegeLevel.NONE) == PrivilegeLevel.NONE
            if t.bonus_mode == "per_visit" or first:
                gain = gain + t.proximity_bonus
        if host in t.concealment:
            p = p * (1.0 - t.concealment[host])
        arcs[(s, a)] = dataclasses.replace(
            arc, p=p, gain=gain, cost=cost, meta=dataclasses.replace(meta, monitored=monitored)
        )
    return m.replace(arcs=arcs, layers=m.layers + (Layer.TERRAIN,))


@dataclass(frozen=True)
class AdversaryProfile:
    """Technique patterns are ``<vector>:<service>`` globs, e.g. ``network:*``."""

    allowed_techniques: frozenset[str] = frozenset({"*"})
    skill: float = 1.0
    infrastructure_entry: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "allowed_techniques", frozenset(self.allowed_techniques))
        if not self.allowed_techniques:
            raise ValueError("allowed_techniques must be nonempty")
        if not 0.0 < self.skill <= 1.0:
            raise ValueError("skill must lie in (0, 1]")

    def allows(self, technique: str) -> bool:
        return any(fnmatch.fnmatchcase(technique, pat) for pat in self.allowed_techniques)


def apply_adversary(m: LayeredMdp, a: AdversaryProfile) -> LayeredMdp:
    _require_layers(m, (Layer.GENERIC, Layer.TERRAIN), "apply_adversary")
    arcs = {}
    for key, arc in m.arcs.items():
        if arc.meta is not None and not a.allows(arc.meta.exploit.technique):
            continue
        arcs[key] = dataclasses.replace(arc, p=arc.p * a.skill)
    if m.arcs and not arcs:
        raise EmptyActionSet(
            f"no action survives technique filter {sorted(a.allowed_techniques)}; "
            "widen allowed_techniques"
        )
    return m.replace(arcs=arcs, layers=m.layers + (Layer.ADVERSARY,))


class TaskKind(str, Enum):
    PATHING = "Pathing"
    CROWN_JEWEL = "CrownJewel"
    EXFILTRATION = "Exfiltration"


@dataclass(frozen=True)
class TaskSpec:
    """``targets``: Pathing one host; CrownJewel defaults to crown_jewel tags;
    Exfiltration is (data_store, exit_node), defaulting to the tagged hosts."""

    kind: TaskKind
    source: str
    targets: tuple[str, ...] = ()
    terminal_reward: float = 10.0
    step_penalty: float = -0.01
    level: PrivilegeLevel = PrivilegeLevel.USER

    def __post_init__(self):
        object.__setattr__(self, "kind", TaskKind(self.kind))
        object.__setattr__(self, "targets", tuple(self.targets))
        if self.terminal_reward <= 0:
            raise ValueError("terminal_reward must be positive")
        if self.step_penalty > 0:
            raise ValueError("step_penalty must be <= 0")


def _tagged(m: LayeredMdp, tag: Tag) -> tuple[str, ...]:
    return tuple(sorted(h for h, tags in m.host_tags.items() if tag in tags))


def resolve_targets(m: LayeredMdp, task: TaskSpec) -> tuple[str, ...]:
    known = set(m.host_tags)
    if task.kind is TaskKind.PATHING:
        if len(task.targets) != 1:
            raise TargetMissing("Pathing needs exactly one target host")
        targets = task.targets
    elif task.kind is TaskKind.CROWN_JEWEL:
        targets = task.targets or _tagged(m, Tag.CROWN_JEWEL)
        if not targets:
            raise TargetMissing("CrownJewel task but no host is tagged crown_jewel")
    else:
        if task.targets:
            targets = task.targets
        else:
            data, exit_ = _tagged(m, Tag.DATA_STORE), _tagged(m, Tag.EXIT_NODE)
            if not data or not exit_:
                raise TargetMissing("Exfiltration needs a data_store and an exit_node host")
            targets = (data[0], exit_[0])
        if len(targets) != 2:
            raise TargetMissing("Exfiltration targets are (data_store, exit_node)")
    for h in (task.source,) + tuple(targets):
        if h not in known:
            raise TargetMissing(f"task references unknown host {h!r}")
    if m.privileges(m.initial).get(task.source, PrivilegeLevel.NONE) < PrivilegeLevel.USER:
        raise TargetMissing(f"task source {task.source!r} is not the attacker foothold of the initial state")
    return tuple(targets)


def _prune(initial: str, states, arcs, terminals):
    out: dict[str, list[str]] = {}
    for (s, _), arc in arcs.items():
        out.setdefault(s, []).append(arc.success)
    seen = {initial}
    queue = deque([initial])
    while queue:
        u = queue.popleft()
        for v in out.get(u, ()):
            if v not in seen:
                seen.add(v)
                queue.append(v)
    kept_states = tuple(s for s in states if s in seen)
    kept_arcs = {k: a for k, a in arcs.items() if k[0] in seen}
    return kept_states, kept_arcs, frozenset(t for t in terminals if t in seen)


def apply_task(m: LayeredMdp, task: TaskSpec) -> LayeredMdp:
    _require_layers(m, (Layer.GENERIC, Layer.TERRAIN, Layer.ADVERSARY), "apply_task")
    targets = resolve_targets(m, task)
    if task.kind is TaskKind.EXFILTRATION:
        return _exfiltration(m, task, targets)

    goal = GoalSpec(targets, task.level)
    terminals = frozenset(s for s in m.states if goal.satisfied(m.privileges(s)))
    arcs = {}
    for (s, a), arc in m.arcs.items():
        if s in terminals:
            continue
        gain = arc.gain + task.terminal_reward if arc.success in terminals else arc.gain
        arcs[(s, a)] = dataclasses.replace(arc, gain=gain, cost=arc.cost + task.step_penalty)
    states, arcs, terminals = _prune(m.initial, m.states, arcs, terminals)
    return m.replace(states=states, arcs=arcs, terminals=terminals, layers=m.layers + (Layer.TASK,))


def augmented_id(state: str, acquired: bool) -> str:
    return f"{state}#{int(acquired)}"


def _exfiltration(m: LayeredMdp, task: TaskSpec, targets: tuple[str, str]) -> LayeredMdp:
    data, exit_ = targets

    def has(state, host):
        return m.privileges(state).get(host, PrivilegeLevel.NONE) >= task.level

    base = {}
    terminals = set()
    states = []
    for s in m.states:
        for flag in (False, True):
            sid = augmented_id(s, flag)
            states.append(sid)
            base[sid] = m.base(s)
            if flag and has(s, exit_):
                terminals.add(sid)
    arcs = {}
    for (s, a), arc in m.arcs.items():
        for flag in (False, True):
            sid = augmented_id(s, flag)
            if sid in terminals:
                continue
            nxt = augmented_id(arc.success, flag or has(arc.success, data))
            gain = arc.gain + task.terminal_reward if nxt in terminals else arc.gain
            arcs[(sid, a)] = dataclasses.replace(arc, success=nxt, gain=gain, cost=arc.cost + task.step_penalty)
    initial = augmented_id(m.initial, has(m.initial, data))
    states, arcs, terminals = _prune(initial, states, arcs, terminals)
    return m.replace(
        states=states,
        initial=initial,
        arcs=arcs,
        terminals=terminals,
        layers=m.layers + (Layer.TASK,),
        base_state={s: base[s] for s in states},
        state_privileges=m.state_privileges,
    )


def well_formedness_violations(m: LayeredMdp, tol: float = 1e-9) -> list[str]:
    """Every broken MDP invariant, as human-readable strings."""
    problems = []
    state_set = set(m.states)
    P, R = m.P, m.R
    if set(P) != set(R):
        problems.append("R is not defined exactly on the admissible pairs")
    for (s, a), dist in P.items():
        if s not in state_set:
            problems.append(f"admissible pair ({s}, {a}) has an unknown state")
        total = sum(dist.values())
        if abs(total - 1.0) > tol:
            problems.append(f"P({s}, {a}) sums to {total!r}")
        for nxt, p in dist.items():
            if nxt not in state_set:
                problems.append(f"P({s}, {a}) reaches unknown state {nxt}")
            if not -tol <= p <= 1.0 + tol:
                problems.append(f"P({s}, {a}, {nxt}) = {p} outside [0, 1]")
    for t in m.terminals:
        if m.actions_in(t):
            problems.append(f"terminal {t} has admissible actions")
    if tuple(m.layers) != LAYER_ORDER[: len(m.layers)]:
        problems.append("layer tags out of order")
    return problems


@dataclass(frozen=True)
class PairChange:
    p_before: dict[str, float] | None
    p_after: dict[str, float] | None
    r_before: float | None
    r_after: float | None


@dataclass(frozen=True)
class MdpDelta:
    states_added: tuple[str, ...] = ()
    states_removed: tuple[str, ...] = ()
    pairs_added: tuple[tuple[str, str], ...] = ()
    pairs_removed: tuple[tuple[str, str], ...] = ()
    changed: Mapping[tuple[str, str], PairChange] = field(default_factory=dict)
    terminals_added: tuple[str, ...] = ()
    terminals_removed: tuple[str, ...] = ()

    @property
    def is_empty(self) -> bool:
        return not (
            self.states_added
            or self.states_removed
            or self.pairs_added
            or self.pairs_removed
            or self.changed
            or self.terminals_added
            or self.terminals_removed
        )

    def touched_pairs(self) -> set[tuple[str, str]]:
        return set(self.changed) | set(self.pairs_added) | set(self.pairs_removed)

    def summary(self) -> dict[str, int]:
        return {
            "states_added": len(self.states_added),
            "states_removed": len(self.states_removed),
            "pairs_added": len(self.pairs_added),
            "pairs_removed": len(self.pairs_removed),
            "pairs_changed": len(self.changed),
            "terminals_added": len(self.terminals_added),
            "terminals_removed": len(self.terminals_removed),
        }

    def to_dict(self) -> dict:
        return {
            "summary": self.summary(),
            "states_added": list(self.states_added),
            "states_removed": list(self.states_removed),
            "pairs_added": [list(k) for k in self.pairs_added],
            "pairs_removed": [list(k) for k in self.pairs_removed],
            "changed": [
                {"state": s, "action": a, "r_before": c.r_before, "r_after": c.r_after,
                 "p_before": c.p_before, "p_after": c.p_after}
                for (s, a), c in sorted(self.changed.items())
            ],
        }


def mdp_diff(m1: LayeredMdp, m2: LayeredMdp) -> MdpDelta:
    s1, s2 = set(m1.states), set(m2.states)
    P1, P2, R1, R2 = m1.P, m2.P, m1.R, m2.R
    shared = sorted(set(P1) & set(P2))
    changed = {
        k: PairChange(P1[k], P2[k], R1[k], R2[k])
        for k in shared
        if P1[k] != P2[k] or R1[k] != R2[k]
    }
    return MdpDelta(
        states_added=tuple(sorted(s2 - s1)),
        states_removed=tuple(sorted(s1 - s2)),
        pairs_added=tuple(sorted(set(P2) - set(P1))),
        pairs_removed=tuple(sorted(set(P1) - set(P2))),
        changed=changed,
        terminals_added=tuple(sorted(m2.terminals - m1.terminals)),
        terminals_removed=tuple(sorted(m1.terminals - m2.terminals)),
    )


def mdp_to_dict(m: LayeredMdp) -> dict:
    """Solver-independent dump: states, admissible pairs, sparse P and R."""
    P = m.P
    return {
        "layers": [l.value for l in m.layers],
        "gamma": m.gamma,
        "initial": m.initial,
        "states": list(m.states),
        "terminals": sorted(m.terminals),
        "admissible": [[s, a] for s, a in sorted(m.arcs)],
        "P": [[s, a, nxt, p] for (s, a) in sorted(P) for nxt, p in sorted(P[(s, a)].items())],
        "R": [[s, a, r] for (s, a), r in sorted(m.R.items())],
    }


def provenance_hash(m: LayeredMdp) -> str:
    blob = json.dumps(mdp_to_dict(m), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class LayerStack:
    generic: LayeredMdp
    terrain: LayeredMdp
    adversary: LayeredMdp
    task: LayeredMdp

    def provenance(self) -> dict[str, MdpDelta]:
        return {
            Layer.TERRAIN.value: mdp_diff(self.generic, self.terrain),
            Layer.ADVERSARY.value: mdp_diff(self.terrain, self.adversary),
            Layer.TASK.value: mdp_diff(self.adversary, self.task),
        }


def build_stack(
    g: AttackGraph,
    model: NetworkModel,
    reach: ReachabilityMatrix,
    terrain: TerrainSpec,
    adversary: AdversaryProfile,
    task: TaskSpec,
    gamma: float = DEFAULT_GAMMA,
    p_bounds: tuple[float, float] = DEFAULT_P_BOUNDS,
) -> LayerStack:
    generic = build_generic(g, model, gamma, p_bounds)
    t = apply_terrain(generic, terrain, reach)
    a = apply_adversary(t, adversary)
    return LayerStack(generic, t, a, apply_task(a, task))
