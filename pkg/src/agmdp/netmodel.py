"""Synthetic network model: hosts, subnets, firewall rules and vulnerabilities.

The model is an immutable value. Reachability is a single-hop firewall
evaluation between subnets; multi-hop movement only appears once an attack
graph is generated. Mutation events produce new models and drive the
grounding simulation.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Any, Iterable, Mapping

import numpy as np

from .cvss import CvssVector
from .errors import InvalidEvent, InvalidModel

WILDCARD = "*"


class PrivilegeLevel(IntEnum):
    NONE = 0
    USER = 1
    ROOT = 2

    @property
    def code(self) -> str:
        return "NUR"[self]

    @classmethod
    def from_name(cls, name: str | int | PrivilegeLevel) -> PrivilegeLevel:
        if isinstance(name, (int, PrivilegeLevel)):
            return cls(name)
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown privilege level {name!r}") from None


class Tag(str, Enum):
    ENTRY = "entry"
    CROWN_JEWEL = "crown_jewel"
    DATA_STORE = "data_store"
    EXIT_NODE = "exit_node"


class Action(str, Enum):
    ALLOW = "allow"
    DENY = "deny"


@dataclass(frozen=True)
class Vulnerability:
    id: str
    service: str
    cvss: CvssVector = field(default_factory=CvssVector)
    precondition: PrivilegeLevel = PrivilegeLevel.USER
    postcondition: PrivilegeLevel = PrivilegeLevel.USER

    def __post_init__(self):
        if self.postcondition <= PrivilegeLevel.NONE:
            raise InvalidModel(f"{self.id}: postcondition must grant at least USER")
        if self.precondition <= PrivilegeLevel.NONE:
            raise InvalidModel(f"{self.id}: precondition must require at least USER on a foothold")
        if self.cvss.is_local and self.postcondition <= self.precondition:
            # A local exploit runs on the target itself, so it must escalate.
            raise InvalidModel(f"{self.id}: local exploit must raise privilege above its precondition")

    @property
    def is_local(self) -> bool:
        return self.cvss.is_local


@dataclass(frozen=True)
class Host:
    id: str
    subnet: str
    services: tuple[str, ...] = ()
    vulns: tuple[Vulnerability, ...] = ()
    tags: frozenset[Tag] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "services", tuple(self.services))
        object.__setattr__(self, "vulns", tuple(self.vulns))
        object.__setattr__(self, "tags", frozenset(Tag(t) for t in self.tags))
        if len(set(self.services)) != len(self.services):
            raise InvalidModel(f"host {self.id}: duplicate service ids")
        seen = set()
        for v in self.vulns:
            if v.service not in self.services:
                raise InvalidModel(f"host {self.id}: vuln {v.id} references missing service {v.service}")
            if v.id in seen:
                raise InvalidModel(f"host {self.id}: duplicate vuln id {v.id}")
            seen.add(v.id)

    def vuln(self, vuln_id: str) -> Vulnerability | None:
        for v in self.vulns:
            if v.id == vuln_id:
                return v
        return None


@dataclass(frozen=True)
class FirewallRule:
    src: str
    dst: str
    service: str = WILDCARD
    action: Action = Action.ALLOW
    monitored: bool = False

    def __post_init__(self):
        object.__setattr__(self, "action", Action(self.action))

    def matches(self, src: str, dst: str, service: str) -> bool:
        return self.src == src and self.dst == dst and self.service in (WILDCARD, service)


@dataclass(frozen=True)
class NetworkModel:
    hosts: tuple[Host, ...]
    subnets: tuple[str, ...]
    firewall_rules: tuple[FirewallRule, ...] = ()
    clock: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hosts", tuple(self.hosts))
        object.__setattr__(self, "subnets", tuple(self.subnets))
        object.__setattr__(self, "firewall_rules", tuple(self.firewall_rules))
        if len(set(self.subnets)) != len(self.subnets):
            raise InvalidModel("duplicate subnet ids")
        ids = [h.id for h in self.hosts]
        if len(set(ids)) != len(ids):
            raise InvalidModel("duplicate host ids")
        subnets = set(self.subnets)
        for h in self.hosts:
            if h.subnet not in subnets:
                raise InvalidModel(f"host {h.id}: unknown subnet {h.subnet}")
        for i, r in enumerate(self.firewall_rules):
            if r.src not in subnets or r.dst not in subnets:
                raise InvalidModel(f"firewall rule {i} references an unknown subnet")

    def host(self, host_id: str) -> Host:
        for h in self.hosts:
            if h.id == host_id:
                return h
        raise KeyError(host_id)

    def has_host(self, host_id: str) -> bool:
        return any(h.id == host_id for h in self.hosts)

    @property
    def host_ids(self) -> tuple[str, ...]:
        return tuple(h.id for h in self.hosts)

    def tagged(self, tag: Tag | str) -> tuple[Host, ...]:
        tag = Tag(tag)
        return tuple(h for h in self.hosts if tag in h.tags)

    def entry_host(self) -> Host:
        """The attacker entry point; scenarios require exactly one."""
        entries = self.tagged(Tag.ENTRY)
        if len(entries) != 1:
            raise InvalidModel(f"expected exactly one entry host, found {len(entries)}")
        return entries[0]

    def replace(self, **changes: Any) -> NetworkModel:
        return dataclasses.replace(self, **changes)


def evaluate_rules(rules: Iterable[FirewallRule], src: str, dst: str, service: str) -> FirewallRule | None:
    """First matching rule, or None for the implicit default deny."""
    for rule in rules:
        if rule.matches(src, dst, service):
            return rule
    return None


@dataclass(frozen=True)
class ReachabilityMatrix:
    """(src host, dst host, service) -> reachable, plus a monitored flag.

    Only services actually offered by the destination host carry entries;
    anything else is unreachable by definition.
    """

    entries: Mapping[tuple[str, str, str], bool]
    monitored: Mapping[tuple[str, str, str], bool]

    def reachable(self, src: str, dst: str, service: str) -> bool:
        return self.entries.get((src, dst, service), False)

    def is_monitored(self, src: str, dst: str, service: str) -> bool:
        return self.monitored.get((src, dst, service), False)

    def hosts(self) -> set[str]:
        out = set()
        for a, b, _ in self.entries:
            out.add(a)
            out.add(b)
        return out


def compute_reachability(model: NetworkModel) -> ReachabilityMatrix:
    entries: dict[tuple[str, str, str], bool] = {}
    monitored: dict[tuple[str, str, str], bool] = {}
    for a in model.hosts:
        for b in model.hosts:
            for svc in b.services:
                key = (a.id, b.id, svc)
                if a.subnet == b.subnet:
                    entries[key] = True
                    monitored[key] = False
                    continue
                rule = evaluate_rules(model.firewall_rules, a.subnet, b.subnet, svc)
                allowed = rule is not None and rule.action is Action.ALLOW
                entries[key] = allowed
                monitored[key] = allowed and rule.monitored
    return ReachabilityMatrix(entries, monitored)


class MutationKind(str, Enum):
    ADD_HOST = "AddHost"
    REMOVE_HOST = "RemoveHost"
    ADD_VULN = "AddVuln"
    REMOVE_VULN = "RemoveVuln"
    FLIP_FIREWALL_RULE = "FlipFirewallRule"


@dataclass(frozen=True)
class MutationEvent:
    """A single atomic network change at tick ``at``.

    Payloads by kind:
      AddHost          {"host": Host}
      RemoveHost       {"host": host_id}
      AddVuln          {"host": host_id, "vuln": Vulnerability}
      RemoveVuln       {"host": host_id, "vuln": vuln_id}
      FlipFirewallRule {"rule": rule_index}
    """

    at: int
    kind: MutationKind
    payload: Mapping[str, Any]

    def describe(self) -> str:
        items = []
        for k in sorted(self.payload):
            v = self.payload[k]
            items.append(f"{k}={getattr(v, 'id', v)}")
        return f"{self.at}:{self.kind.value}({', '.join(items)})"


def apply_mutation(model: NetworkModel, ev: MutationEvent) -> NetworkModel:
    if ev.at < model.clock:
        raise InvalidEvent(f"event at tick {ev.at} precedes model clock {model.clock}")
    kind = MutationKind(ev.kind)
    p = ev.payload
    hosts = list(model.hosts)
    rules = list(model.firewall_rules)

    def index_of(host_id: str) -> int:
        for i, h in enumerate(hosts):
            if h.id == host_id:
                return i
        raise InvalidEvent(f"{kind.value}: no such host {host_id!r}")

    if kind is MutationKind.ADD_HOST:
        host = p["host"]
        if model.has_host(host.id):
            raise InvalidEvent(f"AddHost: host {host.id!r} already exists")
        if host.subnet not in model.subnets:
            raise InvalidEvent(f"AddHost: unknown subnet {host.subnet!r}")
        if Tag.ENTRY in host.tags:
            raise InvalidEvent("AddHost: cannot add a second entry host")
        hosts.append(host)
    elif kind is MutationKind.REMOVE_HOST:
        i = index_of(p["host"])
        if Tag.ENTRY in hosts[i].tags:
            raise InvalidEvent("RemoveHost: the entry host cannot be removed")
        # Vulnerabilities live on the host, so nothing else dangles.
        del hosts[i]
    elif kind is MutationKind.ADD_VULN:
        i = index_of(p["host"])
        vuln: Vulnerability = p["vuln"]
        h = hosts[i]
        if vuln.service not in h.services:
            raise InvalidEvent(f"AddVuln: host {h.id} does not run {vuln.service}")
        if h.vuln(vuln.id) is not None:
            raise InvalidEvent(f"AddVuln: {vuln.id} already present on {h.id}")
        hosts[i] = dataclasses.replace(h, vulns=h.vulns + (vuln,))
    elif kind is MutationKind.REMOVE_VULN:
        i = index_of(p["host"])
        h = hosts[i]
        if h.vuln(p["vuln"]) is None:
            raise InvalidEvent(f"RemoveVuln: {p['vuln']} not present on {h.id}")
        hosts[i] = dataclasses.replace(h, vulns=tuple(v for v in h.vulns if v.id != p["vuln"]))
    elif kind is MutationKind.FLIP_FIREWALL_RULE:
        idx = p["rule"]
        if not 0 <= idx < len(rules):
            raise InvalidEvent(f"FlipFirewallRule: no rule at index {idx}")
        r = rules[idx]
        flipped = Action.DENY if r.action is Action.ALLOW else Action.ALLOW
        rules[idx] = dataclasses.replace(r, action=flipped)
    return model.replace(hosts=tuple(hosts), firewall_rules=tuple(rules), clock=ev.at)


# Palette for vulnerabilities introduced by AddVuln / AddHost events.
_SIM_VECTORS = (
    CvssVector.parse("AV:N/AC:L/PR:N/UI:N/S:U/C:H/I:H/A:H"),
    CvssVector.parse("AV:N/AC:H/PR:L/UI:N/S:U/C:L/I:L/A:N"),
    CvssVector.parse("AV:A/AC:L/PR:N/UI:R/S:U/C:H/I:L/A:N"),
)


def mutation_stream(
    seed: int,
    rates: Mapping[str | MutationKind, float],
    horizon: int,
    model: NetworkModel,
    protected: Iterable[str] = (),
) -> list[MutationEvent]:
    """Seeded Poisson mutation events over ticks ``[0, horizon)``.

    Arrival counts are Poisson(rate * horizon) per kind with uniform ticks,
    i.e. a discretised Poisson process. Targets are drawn against the model
    as it evolves, so every returned event is valid when applied in order.
    Events with no valid target at their tick (e.g. RemoveHost when only the
    entry host is left) are dropped. Hosts in ``protected`` are never removed.
    """
    rates = {MutationKind(k): float(v) for k, v in rates.items()}
    for k, r in rates.items():
        if r < 0:
            raise ValueError(f"negative mutation rate for {k.value}")
    rng = np.random.default_rng(seed)
    arrivals: list[tuple[int, int, MutationKind]] = []
    for order, kind in enumerate(MutationKind):
        rate = rates.get(kind, 0.0)
        if rate == 0 or horizon <= 0:
            continue
        n = int(rng.poisson(rate * horizon))
        for tick in rng.integers(0, horizon, size=n):
            arrivals.append((int(tick), order, kind))
    arrivals.sort(key=lambda x: (x[0], x[1]))

    protected = frozenset(protected)
    events: list[MutationEvent] = []
    # Stream ticks are relative to a model whose clock starts at zero.
    current = model.replace(clock=0)
    serial = 0
    for tick, _, kind in arrivals:
        payload = _draw_payload(rng, current, kind, tick, serial, protected)
        serial += 1
        if payload is None:
            continue
        ev = MutationEvent(tick, kind, payload)
        current = apply_mutation(current, ev)
        events.append(ev)
    return events


def _draw_payload(rng, model: NetworkModel, kind: MutationKind, tick: int, serial: int, protected=frozenset()):
    hosts = model.hosts
    if kind is MutationKind.ADD_HOST:
        subnet = model.subnets[int(rng.integers(len(model.subnets)))]
        services = ("svc",) if not hosts else hosts[int(rng.integers(len(hosts)))].services or ("svc",)
        svc = services[int(rng.integers(len(services)))]
        vuln = Vulnerability(f"SIM-{tick}-{serial}", svc, _SIM_VECTORS[int(rng.integers(len(_SIM_VECTORS)))])
        return {"host": Host(f"new{tick}_{serial}", subnet, (svc,), (vuln,))}
    if kind is MutationKind.REMOVE_HOST:
        candidates = [h for h in hosts if Tag.ENTRY not in h.tags and h.id not in protected]
        if not candidates:
            return None
        return {"host": candidates[int(rng.integers(len(candidates)))].id}
    if kind is MutationKind.ADD_VULN:
        candidates = [h for h in hosts if h.services]
        if not candidates:
            return None
        h = candidates[int(rng.integers(len(candidates)))]
        svc = h.services[int(rng.integers(len(h.services)))]
        cv = _SIM_VECTORS[int(rng.integers(len(_SIM_VECTORS)))]
        return {"host": h.id, "vuln": Vulnerability(f"SIM-{tick}-{serial}", svc, cv)}
    if kind is MutationKind.REMOVE_VULN:
        pairs = [(h.id, v.id) for h in hosts for v in h.vulns]
        if not pairs:
            return None
        host_id, vuln_id = pairs[int(rng.integers(len(pairs)))]
        return {"host": host_id, "vuln": vuln_id}
    if kind is MutationKind.FLIP_FIREWALL_RULE:
        if not model.firewall_rules:
            return None
        return {"rule": int(rng.integers(len(model.firewall_rules)))}
    raise AssertionError(kind)
