"""Two-loop grounding simulation against an evolving network.

Inner loop: every ``t_agent`` ticks the agent takes its policy action in the
MDP it currently holds. Outer loop: every ``t_refresh`` ticks the whole
pipeline is regenerated from the live network and re-solved, warm-started
from the previous values. Each agent action is also actuated against the
live network to see whether it would still work there.

Ordering within a tick is fixed: mutations, then refresh, then agent step.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .attackgraph import launch_points
from .errors import AgmdpError, ScenarioInvalid
from .mdpstack import LayeredMdp
from .netmodel import MutationKind, NetworkModel, PrivilegeLevel, apply_mutation, compute_reachability, mutation_stream
from .pipeline import Built, PipelineSpec, build


class Outcome(str, Enum):
    VALID = "Valid"
    STALE_TARGET = "StaleTarget"
    STALE_ROUTE = "StaleRoute"


@dataclass(frozen=True)
class GroundingConfig:
    t_agent: int = 1
    t_refresh: int = 30
    rates: Mapping[str, float] = field(default_factory=dict)
    horizon: int = 300
    seeds: tuple[int, ...] = (0,)
    refresh_delay: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(self.seeds))
        object.__setattr__(self, "rates", {MutationKind(k).value: float(v) for k, v in self.rates.items()})
        if self.t_agent < 1:
            raise ValueError("t_agent must be >= 1")
        if self.t_refresh < self.t_agent:
            raise ValueError("t_refresh must be >= t_agent")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.refresh_delay < 0:
            raise ValueError("refresh_delay must be >= 0")
        if any(r < 0 for r in self.rates.values()):
            raise ValueError("mutation rates must be >= 0")


@dataclass(frozen=True)
class ActuationResult:
    tick: int
    state: str
    action: str
    outcome: Outcome


class _ReachCache:
    def __init__(self):
        self._model = None
        self._reach = None

    def get(self, model: NetworkModel):
        if self._model is not model:
            self._model = model
            self._reach = compute_reachability(model)
        return self._reach


def actuate(
    policy: Mapping[str, str],
    trace_state: str,
    model: NetworkModel,
    mdp: LayeredMdp,
    reach=None,
) -> Outcome:
    """Classify the policy's action at ``trace_state`` against the live network.

    StaleTarget: the target host or vulnerability is gone. StaleRoute: it is
    still there but no host the agent holds can launch it any more.
    """
    action = policy[trace_state]
    meta = mdp.arcs[(trace_state, action)].meta
    if meta is None:
        return Outcome.VALID
    inst = meta.exploit
    if not model.has_host(inst.host) or model.host(inst.host).vuln(inst.vuln) is None:
        return Outcome.STALE_TARGET
    reach = reach if reach is not None else compute_reachability(model)
    held = mdp.privileges(trace_state)
    for f in launch_points(model, reach, inst):
        if held.get(f, PrivilegeLevel.NONE) >= inst.pre:
            return Outcome.VALID
    return Outcome.STALE_ROUTE


@dataclass
class SeedReport:
    seed: int
    steps: int = 0
    stale_steps: int = 0
    actuated: int = 0
    valid: int = 0
    stale_target: int = 0
    stale_route: int = 0
    refreshes: int = 0
    failed_refreshes: int = 0
    restarts: int = 0
    episodes: int = 0
    goals_reached: int = 0
    goals_achieved: int = 0
    mutations: int = 0

    @property
    def staleness(self) -> float:
        return self.stale_steps / self.steps if self.steps else 0.0

    @property
    def actuation_success_rate(self) -> float:
        return self.valid / self.actuated if self.actuated else 1.0

    def as_dict(self) -> dict:
        d = asdict(self)
        d["staleness"] = self.staleness
        d["actuation_success_rate"] = self.actuation_success_rate
        return d


@dataclass
class GroundingReport:
    config: GroundingConfig
    per_seed: list[SeedReport]

    @property
    def staleness(self) -> float:
        return float(np.mean([r.staleness for r in self.per_seed]))

    @property
    def actuation_success_rate(self) -> float:
        return float(np.mean([r.actuation_success_rate for r in self.per_seed]))

    @property
    def refresh_count(self) -> float:
        return float(np.mean([r.refreshes for r in self.per_seed]))

    def standard_error(self, metric: str) -> float:
        xs = np.array([getattr(r, metric) for r in self.per_seed], dtype=float)
        if len(xs) < 2:
            return 0.0
        return float(xs.std(ddof=1) / math.sqrt(len(xs)))

    def as_dict(self) -> dict:
        return {
            "config": {
                "t_agent": self.config.t_agent,
                "t_refresh": self.config.t_refresh,
                "rates": dict(sorted(self.config.rates.items())),
                "horizon": self.config.horizon,
                "seeds": list(self.config.seeds),
                "refresh_delay": self.config.refresh_delay,
            },
            "staleness": self.staleness,
            "staleness_se": self.standard_error("staleness"),
            "actuation_success_rate": self.actuation_success_rate,
            "actuation_success_rate_se": self.standard_error("actuation_success_rate"),
            "refresh_count": self.refresh_count,
            "per_seed": [r.as_dict() for r in self.per_seed],
        }


def _state_index(mdp: LayeredMdp) -> dict:
    index = {}
    for s in mdp.states:
        key = (tuple(sorted((h, l) for h, l in mdp.privileges(s).items() if l > PrivilegeLevel.NONE)), s.rpartition("#")[2] if "#" in s else None)
        index.setdefault(key, s)
    return index


def _map_state(old: LayeredMdp, state: str, new: LayeredMdp, live_hosts: set[str]) -> str | None:
    """Carry the agent's foothold set over to the regenerated state space."""
    held = tuple(sorted((h, l) for h, l in old.privileges(state).items() if l > PrivilegeLevel.NONE and h in live_hosts))
    flag = state.rpartition("#")[2] if "#" in state else None
    return _state_index(new).get((held, flag))


def _run_seed(model0: NetworkModel, spec: PipelineSpec, cfg: GroundingConfig, seed: int) -> SeedReport:
    report = SeedReport(seed)
    events = mutation_stream(seed, cfg.rates, cfg.horizon, model0.replace(clock=0), protected=spec.protected_hosts())
    rng = np.random.default_rng([seed, 7919])
    reach = _ReachCache()
    model = model0.replace(clock=0)
    ev_i = 0
    last_mutation = -1
    in_use: Built | None = None
    in_use_tick = 0
    pending: tuple[int, Built, int] | None = None
    state = None
    episode_ok = True

    def activate(built: Built, snapshot_tick: int):
        nonlocal in_use, in_use_tick, state, episode_ok
        old = in_use
        in_use, in_use_tick = built, snapshot_tick
        if old is None or state is None:
            state = built.mdp.initial
            return
        mapped = _map_state(old.mdp, state, built.mdp, set(built.model.host_ids))
        if mapped is None:
            report.restarts += 1
            state = built.mdp.initial
            episode_ok = True
        else:
            state = mapped

    for t in range(cfg.horizon):
        while ev_i < len(events) and events[ev_i].at == t:
            model = apply_mutation(model, events[ev_i])
            last_mutation = t
            report.mutations += 1
            ev_i += 1

        if t == 0:
            try:
                activate(build(model, spec), 0)
            except AgmdpError as exc:
                raise ScenarioInvalid(f"scenario does not build on the initial network: {exc}") from exc
        elif t % cfg.t_refresh == 0:
            report.refreshes += 1
            try:
                fresh = build(model, spec, warm_values=in_use.solution.values)
            except AgmdpError:
                report.failed_refreshes += 1
            else:
                pending = (t + cfg.refresh_delay, fresh, t)
        if pending is not None and pending[0] <= t:
            activate(pending[1], pending[2])
            pending = None

        if t % cfg.t_agent:
            continue
        report.steps += 1
        if last_mutation > in_use_tick:
            report.stale_steps += 1
        mdp, policy = in_use.mdp, in_use.solution.policy
        if mdp.is_absorbing(state) or state not in policy:
            report.episodes += 1
            if state in mdp.terminals:
                report.goals_reached += 1
                report.goals_achieved += int(episode_ok)
            state, episode_ok = mdp.initial, True
            if mdp.is_absorbing(state) or state not in policy:
                continue
        action = policy[state]
        outcome = actuate(policy, state, model, mdp, reach.get(model))
        report.actuated += 1
        if outcome is Outcome.VALID:
            report.valid += 1
        elif outcome is Outcome.STALE_TARGET:
            report.stale_target += 1
        else:
            report.stale_route += 1
        arc = mdp.arcs[(state, action)]
        if rng.random() < arc.p:
            if outcome is not Outcome.VALID:
                # The model says it worked; the real network disagrees.
                episode_ok = False
            state = arc.success
    return report


def run_grounded(model0: NetworkModel, spec: PipelineSpec, cfg: GroundingConfig) -> GroundingReport:
    return GroundingReport(cfg, [_run_seed(model0, spec, cfg, s) for s in cfg.seeds])


SWEEP_COLUMNS = (
    "seed",
    "t_agent",
    "t_refresh",
    "rates",
    "staleness",
    "actuation_success_rate",
    "refreshes",
    "restarts",
)

SUMMARY_COLUMNS = (
    "t_agent",
    "t_refresh",
    "rates",
    "n_seeds",
    "staleness_mean",
    "staleness_se",
    "actuation_success_rate_mean",
    "actuation_success_rate_se",
    "refreshes_mean",
    "restarts_mean",
)


def format_rates(rates: Mapping[str, float]) -> str:
    return ";".join(f"{k}={v:g}" for k, v in sorted(rates.items())) or "none"


@dataclass
class SweepTable:
    reports: list[GroundingReport]

    def rows(self) -> list[dict]:
        out = []
        for rep in self.reports:
            for r in rep.per_seed:
                out.append({
                    "seed": r.seed,
                    "t_agent": rep.config.t_agent,
                    "t_refresh": rep.config.t_refresh,
                    "rates": format_rates(rep.config.rates),
                    "staleness": r.staleness,
                    "actuation_success_rate": r.actuation_success_rate,
                    "refreshes": r.refreshes,
                    "restarts": r.restarts,
                })
        return out

    def summary(self) -> list[dict]:
        out = []
        for rep in self.reports:
            out.append({
                "t_agent": rep.config.t_agent,
                "t_refresh": rep.config.t_refresh,
                "rates": format_rates(rep.config.rates),
                "n_seeds": len(rep.per_seed),
                "staleness_mean": rep.staleness,
                "staleness_se": rep.standard_error("staleness"),
                "actuation_success_rate_mean": rep.actuation_success_rate,
                "actuation_success_rate_se": rep.standard_error("actuation_success_rate"),
                "refreshes_mean": rep.refresh_count,
                "restarts_mean": float(np.mean([r.restarts for r in rep.per_seed])),
            })
        return out


def sweep(
    model0: NetworkModel,
    spec: PipelineSpec,
    base: GroundingConfig,
    t_refresh_values: Sequence[int],
    rate_grid: Sequence[Mapping[str, float]],
) -> SweepTable:
    """Full factorial over refresh periods and mutation-rate settings."""
    if not t_refresh_values or not rate_grid:
        raise ValueError("sweep grid must be nonempty")
    reports = []
    for tr in t_refresh_values:
        for rates in rate_grid:
            cfg = GroundingConfig(base.t_agent, tr, rates, base.horizon, base.seeds, base.refresh_delay)
            reports.append(run_grounded(model0, spec, cfg))
    return SweepTable(reports)


def write_table(rows: Iterable[dict], columns: Sequence[str], path: str | Path, delimiter: str = "\t") -> Path:
    path = Path(path)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), delimiter=delimiter, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    path.write_text(buf.getvalue())
    return path
