import dataclasses
from collections import deque

import pytest
from hypothesis import given, settings, strategies as st

from agmdp.attackgraph import AttackGraph, GraphKind, generate
from agmdp.cvss import CvssVector
from agmdp.errors import EmptyActionSet, EmptyGraph, LayerOrder, TargetMissing
from agmdp.families import EASY, chain, random_network, single_host, two_path
from agmdp.mdpstack import (
    Arc,
    Layer,
    LayeredMdp,
    AdversaryProfile,
    TaskKind,
    TaskSpec,
    TerrainSpec,
    apply_adversary,
    apply_task,
    apply_terrain,
    build_generic,
    build_stack,
    mdp_diff,
    mdp_to_dict,
    provenance_hash,
    well_formedness_violations,
)
from agmdp.netmodel import (
    FirewallRule,
    Host,
    MutationEvent,
    MutationKind,
    NetworkModel,
    PrivilegeLevel,
    Tag,
    Vulnerability,
    apply_mutation,
    compute_reachability,
)
from agmdp.pipeline import PipelineSpec, build
from agmdp.solver import value_iteration

from fixtures import GAIN_HIGH, P_EASY, all_fixture_specs, exfil_chain, exfil_star, two_path_closed_form


def generic_of(model, kind=GraphKind.STATE_ENUMERATION, **kw):
    reach = compute_reachability(model)
    g = generate(model, reach, model.entry_host().id, kind)
    return build_generic(g, model, **kw), reach


def terrain_of(model, t=TerrainSpec()):
    m, reach = generic_of(model)
    return apply_terrain(m, t, reach), reach


def same_mdp_content(a, b):
    return a.admissible == b.admissible and a.P == b.P and a.R == b.R and a.states == b.states


# ------------------------------------------------------------------ generic


def test_generic_probability_and_gain_for_easy_high_impact():
    m, _ = generic_of(chain(1))
    (arc,) = m.arcs.values()
    # 3.887 / 3.9 = 0.9967 clamps to 0.99.
    assert arc.p == 0.99 == P_EASY
    # 5.873 / 6.1 gain on success.
    assert arc.gain == pytest.approx(0.963, abs=5e-4)
    assert arc.gain == pytest.approx(GAIN_HIGH, rel=1e-12)
    assert m.R[next(iter(m.arcs))] == pytest.approx(0.99 * GAIN_HIGH, rel=1e-12)
    assert m.layers == (Layer.GENERIC,)


def test_generic_lower_clamp():
    hard = CvssVector.parse("AV:N/AC:H/PR:H/UI:R/S:U/C:L/I:N/A:N")
    m = chain(1, cvss=hard)
    g, _ = generic_of(m)
    (arc,) = g.arcs.values()
    # 8.22 * .85 * .44 * .27 * .62 / 3.9 = 0.132 stays inside the bounds.
    assert arc.p == pytest.approx(8.22 * 0.85 * 0.44 * 0.27 * 0.62 / 3.9)
    g2, _ = generic_of(m, p_bounds=(0.2, 0.9))
    assert next(iter(g2.arcs.values())).p == 0.2


def test_single_node_graph_has_empty_phi():
    m, _ = generic_of(single_host())
    assert len(m.states) == 1 and m.admissible == frozenset()


def test_empty_graph_rejected():
    with pytest.raises(EmptyGraph):
        build_generic(AttackGraph(GraphKind.STATE_ENUMERATION, (), (), ()), single_host())


@given(st.integers(0, 5000))
@settings(max_examples=40)
def test_generic_row_sums_exactly_one(seed):
    m, _ = generic_of(random_network(seed))
    for dist in m.P.values():
        assert sum(dist.values()) == 1.0
        assert all(0.0 <= p <= 1.0 for p in dist.values())


def test_gamma_must_be_proper():
    with pytest.raises(ValueError):
        generic_of(chain(1), gamma=1.0)


def test_exploit_dependency_gives_positional_mdp():
    m, _ = generic_of(chain(3), GraphKind.EXPLOIT_DEPENDENCY)
    assert m.states == ("USER@entry", "USER@h1", "USER@h2", "USER@h3")
    assert [a.success for a in m.arcs.values()] == ["USER@h1", "USER@h2", "USER@h3"]


# ------------------------------------------------------------------ terrain


def test_identity_terrain():
    g, reach = generic_of(two_path())
    t = apply_terrain(g, TerrainSpec(), reach)
    assert same_mdp_content(g, t)
    assert mdp_diff(g, t).is_empty
    assert t.layers == (Layer.GENERIC, Layer.TERRAIN)


def test_obstacle_penalty_hits_exactly_monitored_pairs():
    g, reach = generic_of(two_path())
    t = apply_terrain(g, TerrainSpec(obstacle_penalty=-5.0), reach)
    delta = mdp_diff(g, t)
    crossing = {k for k, arc in g.arcs.items() if arc.meta.footholds == ("entry",) and arc.meta.exploit.host == "jewel"}
    assert crossing and delta.touched_pairs() == crossing
    for k in crossing:
        assert t.R[k] - g.R[k] == pytest.approx(-5.0, abs=1e-12)
        assert t.P[k] == g.P[k]


def test_route_choice_avoids_monitoring():
    # With m2 held, an unmonitored launch point exists, so no penalty applies.
    g, reach = generic_of(two_path())
    t = apply_terrain(g, TerrainSpec(obstacle_penalty=-5.0), reach)
    key = ("entry=U|jewel=N|m1=U|m2=U", "CVE-JEWEL@jewel")
    assert t.R[key] == g.R[key]
    assert not t.arcs[key].meta.monitored


def test_full_concealment_zeroes_success():
    g, reach = generic_of(chain(2))
    t = apply_terrain(g, TerrainSpec(concealment={"h2": 1.0}), reach)
    for (s, a), arc in t.arcs.items():
        if arc.meta.exploit.host == "h2":
            assert arc.p == 0.0 and t.P[(s, a)] == {arc.success: 0.0, s: 1.0}
        else:
            assert arc.p == g.arcs[(s, a)].p
    assert not well_formedness_violations(t)


def test_partial_concealment_scales_probability():
    g, reach = generic_of(chain(2))
    t = apply_terrain(g, TerrainSpec(concealment={"h1": 0.25}), reach)
    for k, arc in t.arcs.items():
        want = g.arcs[k].p * (0.75 if arc.meta.exploit.host == "h1" else 1.0)
        assert arc.p == pytest.approx(want, rel=1e-15)


def test_proximity_bonus_on_and_next_to_key_terrain():
    # h2 is key terrain; h1 routes to h2, so landing on h1 counts as nearby.
    g, reach = generic_of(chain(3))
    t = apply_terrain(g, TerrainSpec(key_terrain={"h2"}, proximity_bonus=2.0), reach)
    for k, arc in t.arcs.items():
        bonus = 2.0 if arc.meta.exploit.host in ("h1", "h2") else 0.0
        assert arc.gain == pytest.approx(g.arcs[k].gain + bonus)


def test_terrain_validation():
    for bad in (dict(obstacle_penalty=1.0), dict(proximity_bonus=-1.0), dict(concealment={"h": 1.5}), dict(bonus_mode="often")):
        with pytest.raises(ValueError):
            TerrainSpec(**bad)


# ---------------------------------------------------------------- adversary


def test_identity_adversary():
    t, _ = terrain_of(two_path())
    a = apply_adversary(t, AdversaryProfile())
    assert same_mdp_content(t, a) and mdp_diff(t, a).is_empty


def test_half_skill_halves_probabilities():
    t, _ = terrain_of(two_path())
    a = apply_adversary(t, AdversaryProfile(skill=0.5))
    assert a.admissible == t.admissible
    for k, arc in a.arcs.items():
        assert arc.p == t.arcs[k].p * 0.5


def cut_edge_model():
    """entry -> h1 over svc, then h1 -> h2 only over smb."""
    hosts = (
        Host("entry", "s0", ("ssh",), (), {Tag.ENTRY}),
        Host("h1", "s1", ("svc",), (Vulnerability("V1", "svc", EASY),)),
        Host("h2", "s2", ("smb",), (Vulnerability("V2", "smb", EASY),), {Tag.CROWN_JEWEL}),
    )
    rules = (FirewallRule("s0", "s1", "svc"), FirewallRule("s1", "s2", "smb"))
    return NetworkModel(hosts, ("s0", "s1", "s2"), rules)


def reachable_states(m):
    out = {}
    for (s, _), arc in m.arcs.items():
        if arc.p > 0:
            out.setdefault(s, set()).add(arc.success)
    seen, queue = {m.initial}, deque([m.initial])
    while queue:
        for v in out.get(queue.popleft(), ()):
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


def test_excluding_cut_edge_class_disconnects_goal():
    t, _ = terrain_of(cut_edge_model())
    a = apply_adversary(t, AdversaryProfile(allowed_techniques={"network:svc"}))
    assert a.admissible < t.admissible
    goal = [s for s in t.states if t.privileges(s).get("h2", 0) >= PrivilegeLevel.USER]
    assert goal and goal[0] in reachable_states(t)
    assert not set(goal) & reachable_states(a)
    task = apply_task(a, TaskSpec(TaskKind.CROWN_JEWEL, "entry"))
    # No goal state survives pruning, so the terminal reward is out of reach.
    assert task.terminals == frozenset()
    assert value_iteration(task).values[task.initial] < 10.0


def test_all_filtered_is_an_error():
    t, _ = terrain_of(chain(2))
    with pytest.raises(EmptyActionSet, match="allowed_techniques"):
        apply_adversary(t, AdversaryProfile(allowed_techniques={"local:*"}))


def test_adversary_validation():
    with pytest.raises(ValueError):
        AdversaryProfile(skill=0.0)
    with pytest.raises(ValueError):
        AdversaryProfile(allowed_techniques=set())


def test_infrastructure_entry_moves_the_foothold():
    m = chain(3)
    spec = PipelineSpec(task=TaskSpec(TaskKind.PATHING, "h1", ("h3",)), adversary=AdversaryProfile(infrastructure_entry="h1"))
    b = build(m, spec)
    assert b.mdp.initial == "entry=N|h1=U|h2=N|h3=N"


# --------------------------------------------------------------- layer order


def test_layer_order_enforced():
    g, reach = generic_of(chain(2))
    with pytest.raises(LayerOrder):
        apply_adversary(g, AdversaryProfile())
    with pytest.raises(LayerOrder):
        apply_task(g, TaskSpec(TaskKind.PATHING, "entry", ("h2",)))
    t = apply_terrain(g, TerrainSpec(), reach)
    with pytest.raises(LayerOrder):
        apply_terrain(t, TerrainSpec(), reach)
    with pytest.raises(LayerOrder):
        LayeredMdp(("s",), "s", {}, layers=(Layer.GENERIC, Layer.TASK))


# --------------------------------------------------------------------- task


def adversary_of(model, t=TerrainSpec(), a=AdversaryProfile()):
    m, reach = terrain_of(model, t)
    return apply_adversary(m, a)


def test_pathing_source_equals_target():
    a = adversary_of(chain(2))
    m = apply_task(a, TaskSpec(TaskKind.PATHING, "entry", ("entry",)))
    assert m.initial in m.terminals and m.states == (m.initial,) and not m.arcs
    assert value_iteration(m).values[m.initial] == 0.0


def test_task_terminal_reward_and_step_penalty():
    a = adversary_of(chain(2))
    m = apply_task(a, TaskSpec(TaskKind.PATHING, "entry", ("h2",), terminal_reward=10.0, step_penalty=-0.25))
    assert m.terminals == {"entry=U|h1=U|h2=U"}
    for k, arc in m.arcs.items():
        base = a.arcs[k]
        assert arc.cost == base.cost - 0.25
        assert arc.gain == base.gain + (10.0 if arc.success in m.terminals else 0.0)
    for t in m.terminals:
        assert m.actions_in(t) == []


def test_task_prunes_unreachable_states():
    a = adversary_of(cut_edge_model(), a=AdversaryProfile(allowed_techniques={"network:svc"}))
    m = apply_task(a, TaskSpec(TaskKind.PATHING, "entry", ("h1",)))
    assert set(m.states) == {"entry=U|h1=N|h2=N", "entry=U|h1=U|h2=N"}


@pytest.mark.parametrize("task", [
    TaskSpec(TaskKind.PATHING, "entry", ("ghost",)),
    TaskSpec(TaskKind.PATHING, "entry", ("h1", "h2")),
    TaskSpec(TaskKind.PATHING, "h1", ("h2",)),
    TaskSpec(TaskKind.CROWN_JEWEL, "entry"),
    TaskSpec(TaskKind.EXFILTRATION, "entry"),
    TaskSpec(TaskKind.EXFILTRATION, "entry", ("h1",)),
])
def test_target_missing(task):
    with pytest.raises(TargetMissing):
        apply_task(adversary_of(chain(2)), task)


def test_task_spec_validation():
    with pytest.raises(ValueError):
        TaskSpec(TaskKind.PATHING, "a", ("b",), terminal_reward=0)
    with pytest.raises(ValueError):
        TaskSpec(TaskKind.PATHING, "a", ("b",), step_penalty=0.1)


def product_space_oracle(a, data, exit_, level=PrivilegeLevel.USER):
    """Explicit BFS over (state, acquired) pairs."""
    def has(s, h):
        return a.privileges(s).get(h, PrivilegeLevel.NONE) >= level

    start = (a.initial, has(a.initial, data))
    seen, queue, terminals = {start}, deque([start]), set()
    while queue:
        s, flag = queue.popleft()
        if flag and has(s, exit_):
            terminals.add((s, flag))
            continue
        for act in a.actions_in(s):
            nxt = a.arcs[(s, act)].success
            node = (nxt, flag or has(nxt, data))
            if node not in seen:
                seen.add(node)
                queue.append(node)
    fmt = lambda n: f"{n[0]}#{int(n[1])}"
    return {fmt(n) for n in seen}, {fmt(n) for n in terminals}


@pytest.mark.parametrize("model,targets", [(exfil_chain(), ("h1", "h2")), (exfil_star(), ("data", "out"))])
def test_exfiltration_matches_product_space(model, targets):
    a = adversary_of(model)
    m = apply_task(a, TaskSpec(TaskKind.EXFILTRATION, "entry"))
    states, terminals = product_space_oracle(a, *targets)
    assert set(m.states) == states and m.terminals == terminals
    assert len(m.states) <= 2 * len(a.states)


def test_exfiltration_chain_counts():
    a = adversary_of(exfil_chain())
    m = apply_task(a, TaskSpec(TaskKind.EXFILTRATION, "entry"))
    # 2 * 3 product states; entry+h1 and entry+h1+h2 never occur unflagged,
    # and entry alone never occurs flagged.
    assert len(a.states) == 3 and len(m.states) == 6 - 3


def test_exfiltration_needs_the_data_first():
    a = adversary_of(exfil_star())
    m = apply_task(a, TaskSpec(TaskKind.EXFILTRATION, "entry"))
    exit_first = "data=N|entry=U|out=U#0"
    assert exit_first in m.states and exit_first not in m.terminals
    assert m.terminals == {"data=U|entry=U|out=U#1"}


# ------------------------------------------------------------------- 2-path


@pytest.mark.parametrize("obstacle", [0.0, -1.0, -2.0, -5.0])
@pytest.mark.parametrize("step", [-0.01, -0.5, -1.0, -2.0])
def test_two_path_matches_closed_form(obstacle, step):
    b = build(two_path(), PipelineSpec(task=TaskSpec(TaskKind.CROWN_JEWEL, "entry", step_penalty=step), terrain=TerrainSpec(obstacle_penalty=obstacle)))
    cf = two_path_closed_form(obstacle, step)
    v0 = b.solution.values[b.mdp.initial]
    assert v0 == pytest.approx(max(cf.values()), abs=1e-7)
    first = b.solution.policy[b.mdp.initial]
    best = max(cf, key=cf.get)
    assert first == ("CVE-JEWEL@jewel" if best == "short" else "CVE-M1@m1")


def test_step_penalty_flips_route_choice():
    choices = []
    for step in (-0.01, -0.1, -0.3, -0.5, -1.0):
        b = build(two_path(), PipelineSpec(task=TaskSpec(TaskKind.CROWN_JEWEL, "entry", step_penalty=step), terrain=TerrainSpec(obstacle_penalty=-1.0)))
        choices.append(b.solution.policy[b.mdp.initial])
    assert choices[0] == "CVE-M1@m1" and choices[-1] == "CVE-JEWEL@jewel"
    # Exactly one switch along the grid.
    assert sum(a != b for a, b in zip(choices, choices[1:])) == 1


# --------------------------------------------------------- diffs/provenance


def test_diff_of_self_is_empty():
    b = build(two_path(), PipelineSpec(task=TaskSpec(TaskKind.CROWN_JEWEL, "entry")))
    for m in (b.stack.generic, b.stack.task):
        assert mdp_diff(m, m).is_empty


def test_terrain_diff_touches_exactly_affected_pairs():
    g, reach = generic_of(chain(4, monitored=True))
    t = apply_terrain(g, TerrainSpec(obstacle_penalty=-1.0, concealment={"h3": 0.5}, key_terrain={"h4"}, proximity_bonus=0.0), reach)
    affected = {k for k, arc in t.arcs.items() if arc.meta.monitored or arc.meta.exploit.host == "h3"}
    assert mdp_diff(g, t).touched_pairs() == affected


def test_rebuild_diff_nonempty_iff_graph_changes():
    m0 = chain(2)
    spec = PipelineSpec(task=TaskSpec(TaskKind.PATHING, "entry", ("h2",)))
    b0 = build(m0, spec)
    # A vuln on the entry host cannot be used: nothing else reaches it.
    inert = apply_mutation(m0, MutationEvent(1, MutationKind.ADD_VULN, {"host": "entry", "vuln": Vulnerability("X", "ssh", EASY)}))
    b1 = build(inert, spec)
    assert b1.graph.edges == b0.graph.edges and mdp_diff(b0.mdp, b1.mdp).is_empty
    patched = apply_mutation(m0, MutationEvent(1, MutationKind.REMOVE_VULN, {"host": "h2", "vuln": "CVE-C2"}))
    b2 = build(patched, spec)
    assert b2.graph.edges != b0.graph.edges and not mdp_diff(b0.mdp, b2.mdp).is_empty


def test_provenance_telescopes():
    b = build(chain(4, monitored=True), PipelineSpec(
        task=TaskSpec(TaskKind.PATHING, "entry", ("h4",), step_penalty=-0.1),
        terrain=TerrainSpec(obstacle_penalty=-1.0, concealment={"h2": 0.3}),
        adversary=AdversaryProfile(skill=0.8),
    ))
    st_ = b.stack
    prov = st_.provenance()
    for k in st_.task.arcs:
        if st_.task.R[k] == st_.generic.R[k]:
            continue
        layers = [name for name, d in prov.items() if k in d.touched_pairs()]
        assert layers
        total = (st_.terrain.R[k] - st_.generic.R[k]) + (st_.adversary.R[k] - st_.terrain.R[k]) + (st_.task.R[k] - st_.adversary.R[k])
        assert total == pytest.approx(st_.task.R[k] - st_.generic.R[k])


def test_identity_layers_attribute_only_to_task():
    b = build(chain(3), PipelineSpec(task=TaskSpec(TaskKind.PATHING, "entry", ("h3",))))
    prov = b.stack.provenance()
    assert prov["Terrain"].is_empty and prov["Adversary"].is_empty
    assert prov["Task"].touched_pairs() == set(b.stack.task.arcs)


def test_adversary_never_adds_pairs_and_task_never_adds_actions():
    for _, m, spec in all_fixture_specs():
        st_ = build(m, spec).stack
        assert st_.adversary.admissible <= st_.terrain.admissible
        if st_.task.base_state:
            continue
        for s in st_.task.states:
            assert set(st_.task.actions_in(s)) <= set(st_.adversary.actions_in(s))


def test_dump_and_hash_deterministic():
    b1 = build(two_path(), PipelineSpec(task=TaskSpec(TaskKind.CROWN_JEWEL, "entry")))
    b2 = build(two_path(), PipelineSpec(task=TaskSpec(TaskKind.CROWN_JEWEL, "entry")))
    assert mdp_to_dict(b1.mdp) == mdp_to_dict(b2.mdp)
    assert provenance_hash(b1.mdp) == provenance_hash(b2.mdp)
    d = mdp_to_dict(b1.mdp)
    assert {tuple(x) for x in d["admissible"]} == set(b1.mdp.arcs)
    assert len(d["R"]) == len(b1.mdp.arcs)


# -------------------------------------------------------- well-formedness


def assert_well_formed_stack(st_):
    for layer in (st_.generic, st_.terrain, st_.adversary, st_.task):
        assert well_formedness_violations(layer) == []
        assert set(layer.P) == set(layer.R) == set(layer.admissible)


def test_every_fixture_well_formed():
    for name, m, spec in all_fixture_specs():
        assert_well_formed_stack(build(m, spec).stack)


@given(
    st.integers(0, 10_000),
    st.floats(-5, 0),
    st.floats(0, 2),
    st.floats(0, 1),
    st.floats(0.05, 1),
    st.sampled_from(list(GraphKind)),
)
@settings(max_examples=80)
def test_random_stacks_well_formed(seed, obstacle, bonus, conceal, skill, kind):
    m = random_network(seed, n_hosts=5)
    spec = PipelineSpec(
        task=TaskSpec(TaskKind.PATHING, "h0", ("h3",)),
        terrain=TerrainSpec(obstacle_penalty=obstacle, key_terrain={"h1"}, proximity_bonus=bonus, concealment={"h2": conceal}),
        adversary=AdversaryProfile(skill=skill),
        generator=kind,
    )
    assert_well_formed_stack(build(m, spec).stack)


def test_violations_reported():
    bad = LayeredMdp(("s", "t"), "s", {("s", "a"): Arc("t", 1.5)}, terminals=frozenset({"s"}))
    problems = well_formedness_violations(bad)
    assert any("terminal" in p for p in problems) and any("outside" in p for p in problems)
