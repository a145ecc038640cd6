"""Scenario files: a versioned YAML (or JSON) description of one experiment.

Top-level sections: ``network``, ``terrain``, ``adversary``, ``task``,
``solver``, ``grounding`` and ``seeds``. Unknown keys anywhere are rejected,
and every section is validated before anything runs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .attackgraph import GraphKind
from .cvss import CvssVector
from .errors import AgmdpError, ScenarioInvalid
from .grounding import GroundingConfig
from .mdpstack import AdversaryProfile, TaskSpec, TerrainSpec
from .netmodel import Action, FirewallRule, Host, MutationKind, NetworkModel, PrivilegeLevel, Tag, Vulnerability
from .pipeline import PipelineSpec
from .solver import EpsilonSchedule

FORMAT_VERSION = 1

GENERATOR_NAMES = {
    "state-enum": GraphKind.STATE_ENUMERATION,
    "exploit-dep": GraphKind.EXPLOIT_DEPENDENCY,
}

_TOP = {"format_version", "id", "network", "terrain", "adversary", "task", "solver", "grounding", "seeds"}
_NETWORK = {"subnets", "hosts", "firewall"}
_HOST = {"id", "subnet", "services", "vulns", "tags"}
_VULN = {"id", "service", "cvss", "precondition", "postcondition"}
_RULE = {"src", "dst", "service", "action", "monitored"}
_TERRAIN = {"obstacle_penalty", "key_terrain", "proximity_bonus", "concealment", "bonus_mode"}
_ADVERSARY = {"allowed_techniques", "skill", "infrastructure_entry"}
_TASK = {"kind", "source", "targets", "terminal_reward", "step_penalty", "level"}
_SOLVER = {"generator", "monotone", "gamma", "eps", "p_bounds", "max_hosts", "q_learning"}
_QL = {"episodes", "alpha", "epsilon_start", "epsilon_end", "epsilon_fraction", "max_steps", "alpha_hold"}
_GROUNDING = {"t_agent", "t_refresh", "horizon", "rates", "refresh_delay", "sweep"}
_SWEEP = {"t_refresh", "rate_multipliers"}


@dataclass(frozen=True)
class QLearningSection:
    episodes: int = 5000
    alpha: float = 0.1
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    max_steps: int = 200
    alpha_hold: int | None = 100


@dataclass(frozen=True)
class SweepSection:
    t_refresh: tuple[int, ...]
    rate_multipliers: tuple[float, ...]


@dataclass(frozen=True)
class Scenario:
    id: str
    model: NetworkModel
    pipeline: PipelineSpec | None
    seeds: tuple[int, ...]
    q_learning: QLearningSection | None
    grounding: GroundingConfig | None
    sweep: SweepSection | None
    raw: Mapping[str, Any]
    generator: GraphKind = GraphKind.STATE_ENUMERATION
    monotone: bool = True
    max_hosts: int = 12
    format_version: int = FORMAT_VERSION

    def require_pipeline(self) -> PipelineSpec:
        if self.pipeline is None:
            raise ScenarioInvalid(f"scenario {self.id!r} has no task section")
        return self.pipeline

    @property
    def hash(self) -> str:
        return scenario_hash(self.raw)


def scenario_hash(raw: Mapping[str, Any]) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _section(data: Any, allowed: set[str], where: str, required: tuple[str, ...] = ()) -> dict:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ScenarioInvalid(f"{where}: expected a mapping, got {type(data).__name__}")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ScenarioInvalid(f"{where}: unknown key(s) {', '.join(unknown)}")
    missing = [k for k in required if k not in data]
    if missing:
        raise ScenarioInvalid(f"{where}: missing required key(s) {', '.join(missing)}")
    return data


def _level(value: Any, where: str) -> PrivilegeLevel:
    try:
        return PrivilegeLevel.from_name(value)
    except (ValueError, AttributeError) as exc:
        raise ScenarioInvalid(f"{where}: {exc}") from None


def _network(data: Any) -> NetworkModel:
    net = _section(data, _NETWORK, "network", ("subnets", "hosts"))
    hosts = []
    for i, hd in enumerate(net["hosts"] or []):
        where = f"network.hosts[{i}]"
        hd = _section(hd, _HOST, where, ("id", "subnet"))
        vulns = []
        for j, vd in enumerate(hd.get("vulns") or []):
            vw = f"{where}.vulns[{j}]"
            vd = _section(vd, _VULN, vw, ("id", "service"))
            try:
                cvss = CvssVector.parse(vd["cvss"]) if "cvss" in vd else CvssVector()
            except ValueError as exc:
                raise ScenarioInvalid(f"{vw}.cvss: {exc}") from None
            vulns.append(
                Vulnerability(
                    str(vd["id"]),
                    str(vd["service"]),
                    cvss,
                    _level(vd.get("precondition", "USER"), vw),
                    _level(vd.get("postcondition", "USER"), vw),
                )
            )
        try:
            tags = frozenset(Tag(t) for t in hd.get("tags") or [])
        except ValueError as exc:
            raise ScenarioInvalid(f"{where}.tags: {exc}") from None
        hosts.append(Host(str(hd["id"]), str(hd["subnet"]), tuple(hd.get("services") or ()), tuple(vulns), tags))
    rules = []
    for i, rd in enumerate(net.get("firewall") or []):
        rd = _section(rd, _RULE, f"network.firewall[{i}]", ("src", "dst"))
        try:
            action = Action(str(rd.get("action", "allow")).lower())
        except ValueError as exc:
            raise ScenarioInvalid(f"network.firewall[{i}].action: {exc}") from None
        rules.append(FirewallRule(str(rd["src"]), str(rd["dst"]), str(rd.get("service", "*")), action, bool(rd.get("monitored", False))))
    return NetworkModel(tuple(hosts), tuple(str(s) for s in net["subnets"]), tuple(rules))


def _terrain(data: Any) -> TerrainSpec:
    d = _section(data, _TERRAIN, "terrain")
    return TerrainSpec(
        obstacle_penalty=float(d.get("obstacle_penalty", 0.0)),
        key_terrain=frozenset(d.get("key_terrain") or ()),
        proximity_bonus=float(d.get("proximity_bonus", 0.0)),
        concealment={str(k): float(v) for k, v in (d.get("concealment") or {}).items()},
        bonus_mode=str(d.get("bonus_mode", "per_visit")),
    )


def _adversary(data: Any) -> AdversaryProfile:
    d = _section(data, _ADVERSARY, "adversary")
    return AdversaryProfile(
        allowed_techniques=frozenset(d.get("allowed_techniques") or ["*"]),
        skill=float(d.get("skill", 1.0)),
        infrastructure_entry=d.get("infrastructure_entry"),
    )


def _task(data: Any) -> TaskSpec:
    d = _section(data, _TASK, "task", ("kind", "source"))
    return TaskSpec(
        kind=d["kind"],
        source=str(d["source"]),
        targets=tuple(str(t) for t in d.get("targets") or ()),
        terminal_reward=float(d.get("terminal_reward", 10.0)),
        step_penalty=float(d.get("step_penalty", -0.01)),
        level=_level(d.get("level", "USER"), "task.level"),
    )


def parse_scenario(raw: Mapping[str, Any]) -> Scenario:
    """Validate a scenario mapping; raises :class:`ScenarioInvalid`."""
    try:
        return _parse(raw)
    except ScenarioInvalid:
        raise
    except (AgmdpError, ValueError, TypeError, KeyError) as exc:
        raise ScenarioInvalid(f"invalid scenario: {exc}") from exc


def _parse(raw: Mapping[str, Any]) -> Scenario:
    top = _section(raw, _TOP, "scenario", ("format_version", "network"))
    if top["format_version"] != FORMAT_VERSION:
        raise ScenarioInvalid(f"unsupported format_version {top['format_version']!r}; expected {FORMAT_VERSION}")
    model = _network(top["network"])
    entries = model.tagged(Tag.ENTRY)
    if model.hosts and len(entries) != 1:
        raise ScenarioInvalid(f"network: exactly one host must be tagged entry, found {len(entries)}")

    solver = _section(top.get("solver"), _SOLVER, "solver")
    gen_name = solver.get("generator", "state-enum")
    if gen_name not in GENERATOR_NAMES:
        raise ScenarioInvalid(f"solver.generator must be one of {', '.join(GENERATOR_NAMES)}")
    p_bounds = tuple(float(x) for x in solver.get("p_bounds", (0.05, 0.99)))
    if len(p_bounds) != 2 or not 0.0 <= p_bounds[0] <= p_bounds[1] <= 1.0:
        raise ScenarioInvalid("solver.p_bounds must be [lo, hi] with 0 <= lo <= hi <= 1")
    task = _task(top["task"]) if top.get("task") is not None else None
    adversary = _adversary(top.get("adversary"))
    referenced = [*(h for h in [adversary.infrastructure_entry] if h)]
    if task is not None:
        referenced += [task.source, *task.targets]
    for h in referenced:
        if not model.has_host(h):
            raise ScenarioInvalid(f"unknown host {h!r} referenced by task/adversary")
    terrain = _terrain(top.get("terrain"))
    for h in set(terrain.key_terrain) | set(terrain.concealment):
        if not model.has_host(h):
            raise ScenarioInvalid(f"terrain references unknown host {h!r}")
    gamma = float(solver.get("gamma", 0.95))
    if not 0.0 < gamma < 1.0:
        raise ScenarioInvalid("solver.gamma must lie in (0, 1)")
    generator = GENERATOR_NAMES[gen_name]
    monotone = bool(solver.get("monotone", True))
    max_hosts = int(solver.get("max_hosts", 12))
    pipeline = None if task is None else PipelineSpec(
        task=task,
        terrain=terrain,
        adversary=adversary,
        generator=generator,
        monotone=monotone,
        gamma=gamma,
        p_bounds=p_bounds,
        eps=float(solver.get("eps", 1e-8)),
        max_hosts=max_hosts,
    )

    ql = None
    if solver.get("q_learning") is not None:
        q = _section(solver["q_learning"], _QL, "solver.q_learning")
        ql = QLearningSection(
            episodes=int(q.get("episodes", 5000)),
            alpha=float(q.get("alpha", 0.1)),
            epsilon=EpsilonSchedule(
                float(q.get("epsilon_start", 1.0)),
                float(q.get("epsilon_end", 0.05)),
                float(q.get("epsilon_fraction", 0.8)),
            ),
            max_steps=int(q.get("max_steps", 200)),
            alpha_hold=None if q.get("alpha_hold", 100) is None else int(q.get("alpha_hold", 100)),
        )

    seeds = tuple(int(s) for s in (top.get("seeds") or [0]))
    grounding = sweep = None
    if top.get("grounding") is not None:
        g = _section(top["grounding"], _GROUNDING, "grounding")
        rates = g.get("rates") or {}
        for k in rates:
            try:
                MutationKind(k)
            except ValueError:
                raise ScenarioInvalid(f"grounding.rates: unknown mutation kind {k!r}") from None
        grounding = GroundingConfig(
            t_agent=int(g.get("t_agent", 1)),
            t_refresh=int(g.get("t_refresh", 30)),
            rates=rates,
            horizon=int(g.get("horizon", 300)),
            seeds=seeds,
            refresh_delay=int(g.get("refresh_delay", 0)),
        )
        if g.get("sweep") is not None:
            sw = _section(g["sweep"], _SWEEP, "grounding.sweep", ("t_refresh", "rate_multipliers"))
            sweep = SweepSection(tuple(int(x) for x in sw["t_refresh"]), tuple(float(x) for x in sw["rate_multipliers"]))
            if not sweep.t_refresh or not sweep.rate_multipliers:
                raise ScenarioInvalid("grounding.sweep grid must be nonempty")

    return Scenario(
        id=str(top.get("id", "scenario")),
        model=model,
        pipeline=pipeline,
        seeds=seeds,
        q_learning=ql,
        grounding=grounding,
        sweep=sweep,
        raw=dict(raw),
        generator=generator,
        monotone=monotone,
        max_hosts=max_hosts,
    )


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioInvalid(f"cannot read scenario {path}: {exc}") from None
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ScenarioInvalid(f"{path}: parse error: {exc}") from None
    return parse_scenario(raw)
