"""Batch front-end: ``agmdp {validate,generate,solve,ground,growth-study}``.

Every scenario-driven command validates the whole scenario first, computes
all results in memory, then writes its artifacts and finally a
``manifest.json`` naming them. Result files are deterministic for a fixed
scenario; wall-clock timings only appear in the manifest and on stdout.

Exit codes: 0 success, 2 validation error, 3 cap exceeded, 4 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import networkx as nx
import numpy as np

from . import __version__
from .attackgraph import GoalSpec, GraphKind, generate, graph_stats, prune_to_goal
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
from .families import FAMILIES
from .grounding import SUMMARY_COLUMNS, SWEEP_COLUMNS, SweepTable, run_grounded, sweep
from .mdpstack import TaskKind, TaskSpec, mdp_to_dict, provenance_hash
from .netmodel import NetworkModel, Tag, compute_reachability
from .pipeline import Built, build, with_entry
from .scenario import GENERATOR_NAMES, Scenario, load_scenario
from .solver import optimal_agreement, optimal_path, policy_agreement, q_learning

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CAP = 3
EXIT_RUNTIME = 4

_VALIDATION_ERRORS = (ScenarioInvalid, InvalidModel, InvalidEvent, TargetMissing, LayerOrder, EmptyActionSet, EmptyGraph)
_CAP_ERRORS = (StateSpaceCap, OracleScaleExceeded)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, _CAP_ERRORS):
        return EXIT_CAP
    if isinstance(exc, _VALIDATION_ERRORS):
        return EXIT_VALIDATION
    return EXIT_RUNTIME


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


@dataclass
class RunManifest:
    command: str
    scenario_id: str | None
    scenario_hash: str | None
    timings: dict[str, float] = field(default_factory=dict)
    artifacts: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "tool_version": __version__,
            "command": self.command,
            "scenario_id": self.scenario_id,
            "scenario_hash": self.scenario_hash,
            "timings": self.timings,
            "artifacts": self.artifacts,
        }


class _Stages:
    """Collects per-stage wall times."""

    def __init__(self):
        self.timings: dict[str, float] = {}

    def run(self, name: str, fn: Callable, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        finally:
            self.timings[name] = time.perf_counter() - t0


def write_artifacts(out: Path, manifest: RunManifest, files: dict[str, tuple[str, str]]) -> Path:
    """Write ``{key: (relative name, text)}`` then the manifest, last."""
    out.mkdir(parents=True, exist_ok=True)
    for key, (name, text) in files.items():
        (out / name).write_text(text)
        manifest.artifacts[key] = name
    path = out / "manifest.json"
    path.write_text(dumps(manifest.to_dict()))
    return path


def _header(sc: Scenario) -> dict:
    return {"scenario_id": sc.id, "scenario_hash": sc.hash}


# ---------------------------------------------------------------- generate


def goal_for_task(model: NetworkModel, task: TaskSpec) -> GoalSpec:
    if task.kind is TaskKind.PATHING:
        targets = task.targets
    elif task.kind is TaskKind.CROWN_JEWEL:
        targets = task.targets or tuple(sorted(h.id for h in model.tagged(Tag.CROWN_JEWEL)))
    else:
        targets = task.targets or tuple(
            sorted(h.id for h in model.tagged(Tag.DATA_STORE))[:1] + sorted(h.id for h in model.tagged(Tag.EXIT_NODE))[:1]
        )
        return GoalSpec(targets, task.level, require_all=True)
    if not targets:
        raise TargetMissing(f"{task.kind.value} task has no target hosts")
    return GoalSpec(targets, task.level)


@dataclass
class GenerateResult:
    graph: Any
    stats: dict
    files: dict[str, tuple[str, str]]


def run_generate(sc: Scenario, generator: GraphKind | None = None, prune_goal: bool = False, stages: _Stages | None = None) -> GenerateResult:
    stages = stages or _Stages()
    kind = generator or sc.generator
    model = sc.model
    if sc.pipeline is not None and sc.pipeline.adversary.infrastructure_entry:
        model = with_entry(model, sc.pipeline.adversary.infrastructure_entry)
    reach = stages.run("reachability", compute_reachability, model)
    kwargs = {"max_hosts": sc.max_hosts, "monotone": sc.monotone} if kind is GraphKind.STATE_ENUMERATION else {}
    entry = model.entry_host().id if model.hosts else None
    g = stages.run("generate", generate, model, reach, entry, kind, **kwargs)
    if prune_goal:
        goal = goal_for_task(model, sc.require_pipeline().task)
        g = stages.run("prune", prune_to_goal, g, goal)
    stats = graph_stats(g).as_dict()
    dg = g.to_networkx()
    dg.graph.update(kind=g.kind.value, generated_at=g.generated_at, initial=",".join(g.initial), scenario_hash=sc.hash)
    graphml = "\n".join(nx.generate_graphml(dg)) + "\n"
    body = {**_header(sc), "generator": kind.value, "pruned": prune_goal, "stats": stats}
    return GenerateResult(g, stats, {"graph": ("graph.graphml", graphml), "stats": ("graph_stats.json", dumps(body))})


def cmd_generate(args) -> int:
    sc = load_scenario(args.scenario)
    stages = _Stages()
    kind = GENERATOR_NAMES[args.generator] if args.generator else None
    res = run_generate(sc, kind, args.prune_goal, stages)
    manifest = RunManifest("generate", sc.id, sc.hash, stages.timings)
    write_artifacts(Path(args.out), manifest, res.files)
    s = res.stats
    wall = sum(stages.timings.values())
    print(f"nodes={s['node_count']} edges={s['edge_count']} acyclic={s['is_acyclic']} depth={s['depth']} wall_time={wall:.4f}s")
    return EXIT_OK


# ------------------------------------------------------------------- solve


@dataclass
class SolveResult:
    built: Built
    results: dict
    files: dict[str, tuple[str, str]]


def run_solve(sc: Scenario, q_learning_episodes: int | None = None, stages: _Stages | None = None) -> SolveResult:
    stages = stages or _Stages()
    spec = sc.require_pipeline()
    built = stages.run("build_and_solve", build, sc.model, spec)
    m = built.mdp
    sol = built.solution
    ret = spec.task.terminal_reward if m.initial in m.terminals else sol.values[m.initial]
    layers = {
        "generic": built.stack.generic,
        "terrain": built.stack.terrain,
        "adversary": built.stack.adversary,
        "task": built.stack.task,
    }
    hashes = {k: provenance_hash(v) for k, v in layers.items()}
    results = {
        **_header(sc),
        "provenance_hash": hashes["task"],
        "initial": m.initial,
        "value_initial": sol.values[m.initial],
        "optimal_return": ret,
        "optimal_path": optimal_path(m, sol.policy),
        "iterations": sol.iterations,
        "final_residual": sol.residuals[-1] if sol.residuals else 0.0,
        "values": dict(sorted(sol.values.items())),
        "policy": dict(sorted(sol.policy.items())),
        "state_count": len(m.states),
        "admissible_count": len(m.arcs),
    }
    episodes = q_learning_episodes if q_learning_episodes is not None else (sc.q_learning.episodes if sc.q_learning else None)
    if episodes:
        ql = sc.q_learning
        runs = []
        t0 = time.perf_counter()
        for seed in sc.seeds:
            kwargs = {"alpha": ql.alpha, "epsilon": ql.epsilon, "max_steps": ql.max_steps, "alpha_hold": ql.alpha_hold} if ql else {}
            q = q_learning(m, episodes, seed=seed, **kwargs)
            greedy = q.greedy(m)
            runs.append({
                "seed": seed,
                "episodes": episodes,
                "agreement": policy_agreement(m, sol.policy, greedy),
                "agreement_optimal": optimal_agreement(m, sol, greedy),
                "greedy_policy": dict(sorted(greedy.items())),
                "q_values": [[s, a, v] for (s, a), v in sorted(q.values.items())],
                "curve": q.curve,
            })
        stages.timings["q_learning"] = time.perf_counter() - t0
        results["q_learning"] = runs
    provenance = {
        **_header(sc),
        "layer_hashes": hashes,
        "diffs": {k: d.to_dict() for k, d in built.stack.provenance().items()},
    }
    dump = {**_header(sc), "layers": {k: mdp_to_dict(v) for k, v in layers.items()}}
    files = {
        "mdp_dump": ("mdp.json", dumps(dump)),
        "provenance": ("provenance.json", dumps(provenance)),
        "solver_results": ("solver_results.json", dumps(results)),
    }
    return SolveResult(built, results, files)


def cmd_solve(args) -> int:
    sc = load_scenario(args.scenario)
    stages = _Stages()
    res = run_solve(sc, args.q_learning_episodes, stages)
    manifest = RunManifest("solve", sc.id, sc.hash, stages.timings)
    write_artifacts(Path(args.out), manifest, res.files)
    r = res.results
    print(f"states={r['state_count']} V(s0)={r['value_initial']:.6f} optimal_return={r['optimal_return']:.6f} path={' -> '.join(r['optimal_path'])}")
    return EXIT_OK


# ------------------------------------------------------------------ ground


def _table_text(rows: list[dict], columns: Sequence[str]) -> str:
    lines = ["\t".join(columns)]
    for row in rows:
        lines.append("\t".join(repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in columns))
    return "\n".join(lines) + "\n"


def run_ground(sc: Scenario, do_sweep: bool = False, stages: _Stages | None = None):
    stages = stages or _Stages()
    spec = sc.require_pipeline()
    if sc.grounding is None:
        raise ScenarioInvalid(f"scenario {sc.id!r} has no grounding section")
    cfg = sc.grounding
    report = stages.run("run_grounded", run_grounded, sc.model, spec, cfg)
    files = {
        "grounding_report": ("grounding_report.json", dumps({**_header(sc), **report.as_dict()})),
        "grounding_table": ("grounding_seeds.tsv", _table_text(SweepTable([report]).rows(), SWEEP_COLUMNS)),
    }
    if do_sweep:
        if sc.sweep is None:
            raise ScenarioInvalid("--sweep needs a grounding.sweep section")
        grid = [{k: v * mult for k, v in cfg.rates.items()} for mult in sc.sweep.rate_multipliers]
        table = stages.run("sweep", sweep, sc.model, spec, cfg, sc.sweep.t_refresh, grid)
        files["sweep_table"] = ("sweep.tsv", _table_text(table.rows(), SWEEP_COLUMNS))
        files["sweep_summary"] = ("sweep_summary.tsv", _table_text(table.summary(), SUMMARY_COLUMNS))
    return files, report


def cmd_ground(args) -> int:
    sc = load_scenario(args.scenario)
    stages = _Stages()
    files, report = run_ground(sc, args.sweep, stages)
    manifest = RunManifest("ground", sc.id, sc.hash, stages.timings)
    write_artifacts(Path(args.out), manifest, files)
    print(
        f"seeds={len(report.per_seed)} staleness={report.staleness:.4f} "
        f"actuation_success_rate={report.actuation_success_rate:.4f} refreshes={report.refresh_count:.1f}"
    )
    return EXIT_OK


# ------------------------------------------------------------ growth study

GROWTH_COLUMNS = ("family", "n", "generator", "status", "node_count", "edge_count", "is_acyclic", "depth", "seconds")


def _fit(rows: list[dict], generator: str) -> dict:
    ok = [r for r in rows if r["generator"] == generator and r["status"] == "ok"]
    xs = np.array([r["n"] for r in ok], dtype=float)
    ys = np.array([r["node_count"] for r in ok], dtype=float)
    out: dict[str, Any] = {"points": len(ok)}
    if len(ok) < 2:
        return out
    if generator == GraphKind.STATE_ENUMERATION.value:
        slope, intercept = np.polyfit(xs, np.log2(ys), 1)
        out.update(log2_slope=float(slope), log2_intercept=float(intercept))
    else:
        deg = min(2, len(ok) - 1)
        coeffs = np.polyfit(xs, ys, deg)
        pred = np.polyval(coeffs, xs)
        ss_res = float(np.sum((ys - pred) ** 2))
        ss_tot = float(np.sum((ys - ys.mean()) ** 2))
        out.update(poly_degree=deg, poly_coefficients=[float(c) for c in coeffs], r_squared=1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot)
    return out


def growth_study(family: str, n_min: int, n_max: int, max_hosts: int = 12) -> tuple[list[dict], dict]:
    """Node/edge counts per size for both generators; cap errors become rows."""
    if family not in FAMILIES:
        raise ScenarioInvalid(f"unknown family {family!r}; choose from {', '.join(sorted(FAMILIES))}")
    if not 1 <= n_min <= n_max:
        raise ScenarioInvalid("need 1 <= n_min <= n_max")
    rows = []
    for n in range(n_min, n_max + 1):
        model = FAMILIES[family](n)
        reach = compute_reachability(model)
        entry = model.entry_host().id
        for kind in (GraphKind.STATE_ENUMERATION, GraphKind.EXPLOIT_DEPENDENCY):
            row = {"family": family, "n": n, "generator": kind.value}
            t0 = time.perf_counter()
            try:
                kwargs = {"max_hosts": max_hosts} if kind is GraphKind.STATE_ENUMERATION else {}
                st = graph_stats(generate(model, reach, entry, kind, **kwargs))
            except StateSpaceCap as exc:
                row.update(status="cap_exceeded", node_count="", edge_count="", is_acyclic="", depth="", bound=exc.bound)
            else:
                row.update(status="ok", **st.as_dict())
            row["seconds"] = time.perf_counter() - t0
            rows.append(row)
    fits = {k.value: _fit(rows, k.value) for k in GraphKind}
    return rows, fits


def cmd_growth_study(args) -> int:
    t0 = time.perf_counter()
    rows, fits = growth_study(args.family, args.n_min, args.n_max, args.max_hosts)
    wall = time.perf_counter() - t0
    counts = [{k: v for k, v in r.items() if k != "seconds"} for r in rows]
    body = {"family": args.family, "n_min": args.n_min, "n_max": args.n_max, "fits": fits, "rows": counts}
    manifest = RunManifest("growth-study", None, None, {"growth_study": wall})
    files = {"growth_table": ("growth.tsv", _table_text(rows, GROWTH_COLUMNS)), "growth_fits": ("growth.json", dumps(body))}
    write_artifacts(Path(args.out), manifest, files)
    for r in rows:
        print(f"n={r['n']} {r['generator']}: {r['status']} nodes={r['node_count']} edges={r['edge_count']}")
    se = fits[GraphKind.STATE_ENUMERATION.value]
    ed = fits[GraphKind.EXPLOIT_DEPENDENCY.value]
    if "log2_slope" in se:
        print(f"state-enumeration log2 slope = {se['log2_slope']:.4f}")
    if "r_squared" in ed:
        print(f"exploit-dependency degree-{ed['poly_degree']} fit R^2 = {ed['r_squared']:.6f}")
    return EXIT_OK


# -------------------------------------------------------------------- main


def cmd_validate(args) -> int:
    sc = load_scenario(args.scenario)
    parts = [f"id={sc.id}", f"hash={sc.hash}", f"hosts={len(sc.model.hosts)}"]
    if sc.pipeline is not None:
        parts.append(f"task={sc.pipeline.task.kind.value}")
    print("valid: " + " ".join(parts))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="agmdp", description="Attack graphs to layered MDPs, solved and grounded.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a scenario file and exit")
    v.add_argument("scenario")
    v.set_defaults(func=cmd_validate)

    g = sub.add_parser("generate", help="build the attack graph and export it")
    g.add_argument("scenario")
    g.add_argument("--generator", choices=sorted(GENERATOR_NAMES), help="overrides solver.generator")
    g.add_argument("--prune-goal", action="store_true", help="keep only initial-to-goal paths for the scenario task")
    g.add_argument("--out", default="out/generate")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="build all four MDP layers and solve")
    s.add_argument("scenario")
    s.add_argument("--q-learning-episodes", type=int, default=None, help="also run Q-learning per scenario seed")
    s.add_argument("--out", default="out/solve")
    s.set_defaults(func=cmd_solve)

    gr = sub.add_parser("ground", help="run the grounding simulation")
    gr.add_argument("scenario")
    gr.add_argument("--sweep", action="store_true", help="run the grounding.sweep grid as well")
    gr.add_argument("--out", default="out/ground")
    gr.set_defaults(func=cmd_ground)

    gs = sub.add_parser("growth-study", help="graph size versus host count for both generators")
    gs.add_argument("--family", default="fully-connected", choices=sorted(FAMILIES))
    gs.add_argument("--n-min", type=int, default=2)
    gs.add_argument("--n-max", type=int, default=8)
    gs.add_argument("--max-hosts", type=int, default=12, help="state-enumeration host cap")
    gs.add_argument("--out", default="out/growth")
    gs.set_defaults(func=cmd_growth_study)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AgmdpError as exc:
        code = exit_code_for(exc)
        kind = {EXIT_CAP: "cap exceeded", EXIT_VALIDATION: "invalid"}.get(code, "error")
        print(f"agmdp: {kind}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        print(f"agmdp: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
