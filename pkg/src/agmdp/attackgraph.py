"""Attack graph generation: state enumeration, exploit dependency, goal pruning.

Two generators bracket the complexity spectrum. State enumeration builds every
reachable network privilege state (exponential in hosts); the exploit
dependency generator forward-chains privilege conditions under the
monotonicity assumption (polynomial, acyclic by construction).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import networkx as nx

from .cvss import CvssVector
from .errors import StateSpaceCap
from .netmodel import Host, NetworkModel, PrivilegeLevel, ReachabilityMatrix, Tag

DEFAULT_STATE_ENUM_CAP = 12
DEFAULT_EXPLOIT_DEP_CAP = 64


class GraphKind(str, Enum):
    STATE_ENUMERATION = "StateEnumeration"
    EXPLOIT_DEPENDENCY = "ExploitDependency"


class NodeKind(str, Enum):
    STATE = "state"
    CONDITION = "condition"
    EXPLOIT = "exploit"


@dataclass(frozen=True, order=True)
class ExploitInstance:
    """A vulnerability on a concrete host."""

    host: str
    vuln: str
    service: str
    cvss: CvssVector
    pre: PrivilegeLevel
    post: PrivilegeLevel

    @property
    def key(self) -> str:
        return f"{self.vuln}@{self.host}"

    @property
    def technique(self) -> str:
        return f"{self.cvss.vector_name}:{self.service}"


@dataclass(frozen=True)
class AgNode:
    id: str
    kind: NodeKind
    # Host -> level. Total over live hosts for states, one entry for conditions.
    privileges: tuple[tuple[str, PrivilegeLevel], ...] = ()
    exploit: ExploitInstance | None = None

    def privilege_map(self) -> dict[str, PrivilegeLevel]:
        return dict(self.privileges)

    def label(self) -> str:
        if self.exploit is not None:
            return self.exploit.key
        return ",".join(f"{h}={lvl.name}" for h, lvl in self.privileges)


@dataclass(frozen=True)
class Transition:
    """An exploit application: ``src`` state/condition to ``dst``."""

    src: str
    dst: str
    exploit: ExploitInstance
    footholds: tuple[str, ...]


@dataclass(frozen=True)
class AttackGraph:
    kind: GraphKind
    nodes: tuple[AgNode, ...]
    edges: tuple[tuple[str, str], ...]
    initial: tuple[str, ...]
    transitions: tuple[Transition, ...] = ()
    generated_at: int = 0
    entry: str | None = None

    def node(self, node_id: str) -> AgNode:
        return self._index()[node_id]

    def _index(self) -> dict[str, AgNode]:
        idx = self.__dict__.get("_node_index")
        if idx is None:
            idx = {n.id: n for n in self.nodes}
            object.__setattr__(self, "_node_index", idx)
        return idx

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes)

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        for n in self.nodes:
            g.add_node(n.id, kind=n.kind.value, label=n.label())
        labels: dict[tuple[str, str], list[str]] = {}
        if self.kind is GraphKind.STATE_ENUMERATION:
            for t in self.transitions:
                labels.setdefault((t.src, t.dst), []).append(t.exploit.key)
        for u, v in self.edges:
            g.add_edge(u, v, exploits=";".join(sorted(set(labels.get((u, v), [])))))
        return g


@dataclass(frozen=True)
class GoalSpec:
    """Goal: at least ``level`` on any (or, with ``require_all``, every) target."""

    targets: tuple[str, ...]
    level: PrivilegeLevel = PrivilegeLevel.USER
    require_all: bool = False

    def satisfied(self, privileges: Mapping[str, PrivilegeLevel]) -> bool:
        hits = (privileges.get(t, PrivilegeLevel.NONE) >= self.level for t in self.targets)
        return all(hits) if self.require_all else any(hits)

    def node_is_goal(self, node: AgNode) -> bool:
        if node.kind is NodeKind.EXPLOIT:
            return False
        privileges = node.privilege_map()
        if node.kind is NodeKind.CONDITION:
            # A single condition can only witness a single target.
            return any(privileges.get(t, PrivilegeLevel.NONE) >= self.level for t in self.targets)
        return self.satisfied(privileges)


def exploit_instances(model: NetworkModel) -> list[ExploitInstance]:
    out = []
    for h in model.hosts:
        for v in h.vulns:
            out.append(ExploitInstance(h.id, v.id, v.service, v.cvss, v.precondition, v.postcondition))
    out.sort(key=lambda e: (e.host, e.vuln))
    return out


def launch_points(model: NetworkModel, reach: ReachabilityMatrix, inst: ExploitInstance) -> tuple[str, ...]:
    """Hosts an attacker could launch ``inst`` from, ignoring privileges held.

    Local/physical exploits run on the target itself. Adjacent-network
    exploits require a foothold on the target's subnet; network exploits
    need the service to be reachable. Remote exploits never originate on the
    target.
    """
    if inst.cvss.is_local:
        return (inst.host,)
    target = model.host(inst.host)
    out = []
    for h in model.hosts:
        if h.id == inst.host:
            continue
        if inst.cvss.attack_vector == "A" and h.subnet != target.subnet:
            continue
        if reach.reachable(h.id, inst.host, inst.service):
            out.append(h.id)
    return tuple(sorted(out))


def _require_entry(model: NetworkModel, entry: Host | str) -> str:
    entry_id = entry.id if isinstance(entry, Host) else entry
    host = model.host(entry_id)
    if Tag.ENTRY not in host.tags:
        raise ValueError(f"host {entry_id} is not tagged as an entry point")
    return entry_id


def state_id(hosts: Sequence[str], levels: Sequence[PrivilegeLevel]) -> str:
    return "|".join(f"{h}={PrivilegeLevel(l).code}" for h, l in zip(hosts, levels))


def generate_state_enumeration(
    model: NetworkModel,
    reach: ReachabilityMatrix,
    entry: Host | str,
    monotone: bool = True,
    max_hosts: int = DEFAULT_STATE_ENUM_CAP,
    max_states: int | None = None,
) -> AttackGraph:
    """Breadth-first enumeration of network privilege states.

    The initial state gives the attacker USER on the entry host and nothing
    elsewhere. Each edge applies one exploit whose precondition holds on some
    launch point. With ``monotone`` an exploit only fires if it raises the
    target's privilege; otherwise it fires whenever it changes it, which can
    demote a host and close cycles.
    """
    entry_id = _require_entry(model, entry)
    n = len(model.hosts)
    if n > max_hosts:
        bound = len(PrivilegeLevel) ** n
        raise StateSpaceCap(
            f"state enumeration over {n} hosts exceeds cap of {max_hosts} hosts "
            f"(projected state bound {len(PrivilegeLevel)}^{n} = {bound})",
            bound=bound,
        )
    hosts = sorted(model.host_ids)
    pos = {h: i for i, h in enumerate(hosts)}
    prepared = []
    for inst in exploit_instances(model):
        prepared.append((inst, pos[inst.host], tuple(pos[f] for f in launch_points(model, reach, inst))))

    init = tuple(PrivilegeLevel.USER if h == entry_id else PrivilegeLevel.NONE for h in hosts)
    ids = {init: state_id(hosts, init)}
    order = [init]
    queue = deque([init])
    transitions: list[Transition] = []
    while queue:
        s = queue.popleft()
        for inst, t, sources in prepared:
            cur = s[t]
            if (monotone and cur >= inst.post) or cur == inst.post:
                continue
            footholds = tuple(hosts[f] for f in sources if s[f] >= inst.pre)
            if not footholds:
                continue
            nxt = s[:t] + (inst.post,) + s[t + 1:]
            if nxt not in ids:
                if max_states is not None and len(ids) >= max_states:
                    raise StateSpaceCap(f"state enumeration exceeded {max_states} states", bound=max_states)
                ids[nxt] = state_id(hosts, nxt)
                order.append(nxt)
                queue.append(nxt)
            transitions.append(Transition(ids[s], ids[nxt], inst, footholds))

    nodes = tuple(AgNode(ids[s], NodeKind.STATE, tuple(zip(hosts, s))) for s in order)
    edges = tuple(dict.fromkeys((t.src, t.dst) for t in transitions))
    return AttackGraph(
        kind=GraphKind.STATE_ENUMERATION,
        nodes=nodes,
        edges=edges,
        initial=(ids[init],),
        transitions=tuple(transitions),
        generated_at=model.clock,
        entry=entry_id,
    )


def condition_id(host: str, level: PrivilegeLevel) -> str:
    return f"{PrivilegeLevel(level).name}@{host}"


def exploit_node_id(inst: ExploitInstance) -> str:
    return f"x:{inst.key}"


def generate_exploit_dependency(
    model: NetworkModel,
    reach: ReachabilityMatrix,
    entry: Host | str,
    max_hosts: int = DEFAULT_EXPLOIT_DEP_CAP,
) -> AttackGraph:
    """Condition/exploit DAG by forward chaining to a fixpoint.

    Conditions mean "at least this privilege on this host". Chaining runs in
    rounds; an exploit joins the graph in the first round where one of its
    launch points holds its precondition and its postcondition is new. A
    second pass then wires every other enabling condition into existing
    exploit nodes, skipping any edge that would close a cycle. Incoming
    edges of an exploit node are alternative footholds.
    """
    entry_id = _require_entry(model, entry)
    if len(model.hosts) > max_hosts:
        raise StateSpaceCap(f"exploit dependency generation over {len(model.hosts)} hosts exceeds cap {max_hosts}")
    instances = [(inst, launch_points(model, reach, inst)) for inst in exploit_instances(model)]

    conditions: dict[tuple[str, PrivilegeLevel], str] = {}
    cond_order: list[tuple[str, PrivilegeLevel]] = []
    exploit_nodes: dict[str, ExploitInstance] = {}
    succ: dict[str, list[str]] = {}
    edges: list[tuple[str, str]] = []

    def add_condition(fact):
        if fact not in conditions:
            conditions[fact] = condition_id(*fact)
            cond_order.append(fact)
            succ[conditions[fact]] = []
        return conditions[fact]

    def add_edge(u, v):
        succ.setdefault(u, []).append(v)
        edges.append((u, v))

    def implied(facts, host, level):
        return any(f[0] == host and f[1] >= level for f in facts)

    def enabling(facts, inst, sources):
        return [f for f in facts if f[0] in sources and f[1] >= inst.pre]

    initial = add_condition((entry_id, PrivilegeLevel.USER))

    while True:
        snapshot = list(cond_order)
        fired = []
        for inst, sources in instances:
            xid = exploit_node_id(inst)
            if xid in exploit_nodes or implied(snapshot, inst.host, inst.post):
                continue
            pre = enabling(snapshot, inst, sources)
            if pre:
                fired.append((inst, xid, pre))
        if not fired:
            break
        for inst, xid, pre in fired:
            exploit_nodes[xid] = inst
            succ[xid] = []
            for f in pre:
                add_edge(conditions[f], xid)
            add_edge(xid, add_condition((inst.host, inst.post)))

    def reaches(start: str, goal: str) -> bool:
        seen = {start}
        stack = [start]
        while stack:
            u = stack.pop()
            if u == goal:
                return True
            for v in succ.get(u, ()):
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return False

    present = set(edges)
    for inst, sources in instances:
        post = conditions.get((inst.host, inst.post))
        if post is None:
            continue
        xid = exploit_node_id(inst)
        for f in enabling(cond_order, inst, sources):
            c = conditions[f]
            if (c, xid) in present:
                continue
            if reaches(post, c):
                continue
            if xid not in exploit_nodes:
                exploit_nodes[xid] = inst
                succ[xid] = []
                add_edge(xid, post)
                present.add((xid, post))
            add_edge(c, xid)
            present.add((c, xid))

    nodes = [AgNode(conditions[f], NodeKind.CONDITION, (f,)) for f in cond_order]
    nodes += [AgNode(xid, NodeKind.EXPLOIT, exploit=inst) for xid, inst in exploit_nodes.items()]
    post_of = {u: v for u, v in edges if u in exploit_nodes}
    transitions = tuple(
        Transition(u, post_of[v], exploit_nodes[v], (u.split("@", 1)[1],))
        for u, v in edges
        if v in exploit_nodes
    )
    return AttackGraph(
        kind=GraphKind.EXPLOIT_DEPENDENCY,
        nodes=tuple(nodes),
        edges=tuple(edges),
        initial=(initial,),
        transitions=transitions,
        generated_at=model.clock,
        entry=entry_id,
    )


def generate(
    model: NetworkModel,
    reach: ReachabilityMatrix,
    entry: Host | str,
    kind: GraphKind | str = GraphKind.STATE_ENUMERATION,
    **kwargs,
) -> AttackGraph:
    kind = GraphKind(kind)
    if not model.hosts:
        # Nothing to attack: an empty graph, not an error.
        return AttackGraph(kind, (), (), (), generated_at=model.clock)
    if kind is GraphKind.STATE_ENUMERATION:
        return generate_state_enumeration(model, reach, entry, **kwargs)
    return generate_exploit_dependency(model, reach, entry, **kwargs)


def _forward(g: AttackGraph, goals: set[str]) -> set[str]:
    out_edges: dict[str, list[str]] = {}
    for u, v in g.edges:
        out_edges.setdefault(u, []).append(v)
    seen = set(g.initial)
    queue = deque(g.initial)
    while queue:
        u = queue.popleft()
        if u in goals:
            continue
        for v in out_edges.get(u, ()):
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


def prune_to_goal(g: AttackGraph, goal: GoalSpec) -> AttackGraph:
    """Keep exactly the nodes and edges on some initial-to-goal path.

    Goal nodes are treated as end points: paths are not continued through
    them.
    """
    goals = {n.id for n in g.nodes if goal.node_is_goal(n)}
    fwd = _forward(g, goals)
    in_edges: dict[str, list[str]] = {}
    for u, v in g.edges:
        if u in fwd and u not in goals:
            in_edges.setdefault(v, []).append(u)
    bwd = set(goals & fwd)
    queue = deque(sorted(bwd))
    while queue:
        v = queue.popleft()
        for u in in_edges.get(v, ()):
            if u not in bwd:
                bwd.add(u)
                queue.append(u)
    keep = fwd & bwd

    def on_path(u, v):
        return u in keep and v in keep and u not in goals

    edges = tuple(e for e in g.edges if on_path(*e))
    if g.kind is GraphKind.STATE_ENUMERATION:
        transitions = tuple(t for t in g.transitions if on_path(t.src, t.dst))
    else:
        kept = set(edges)
        transitions = tuple(
            t for t in g.transitions if (t.src, exploit_node_id(t.exploit)) in kept
        )
    return AttackGraph(
        kind=g.kind,
        nodes=tuple(n for n in g.nodes if n.id in keep),
        edges=edges,
        initial=tuple(i for i in g.initial if i in keep),
        transitions=transitions,
        generated_at=g.generated_at,
        entry=g.entry,
    )


@dataclass(frozen=True)
class GraphStats:
    node_count: int
    edge_count: int
    is_acyclic: bool
    depth: int | None

    def as_dict(self) -> dict:
        return {
            "node_count": self.node_count,
            "edge_count": self.edge_count,
            "is_acyclic": self.is_acyclic,
            "depth": self.depth,
        }


def graph_stats(g: AttackGraph) -> GraphStats:
    """Counts, acyclicity and (for DAGs) the longest path length in edges."""
    dg = nx.DiGraph()
    dg.add_nodes_from(g.node_ids)
    dg.add_edges_from(g.edges)
    acyclic = nx.is_directed_acyclic_graph(dg)
    depth = nx.dag_longest_path_length(dg) if acyclic and len(dg) else (0 if acyclic else None)
    return GraphStats(len(g.nodes), len(g.edges), acyclic, depth)


def privilege_facts(g: AttackGraph) -> set[tuple[str, PrivilegeLevel]]:
    """All (host, level) facts held in some node, closed downward to USER.

    ROOT on a host implies USER there, so both facts are reported.
    """
    facts = set()
    for n in g.nodes:
        for host, lvl in n.privileges:
            for l in PrivilegeLevel:
                if PrivilegeLevel.NONE < l <= lvl:
                    facts.add((host, l))
    return facts


def export_graphml(g: AttackGraph, path: str | Path) -> Path:
    path = Path(path)
    dg = g.to_networkx()
    dg.graph["kind"] = g.kind.value
    dg.graph["generated_at"] = g.generated_at
    dg.graph["initial"] = ",".join(g.initial)
    nx.write_graphml(dg, path)
    return path
