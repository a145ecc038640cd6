"""Small scenarios shared by several test modules."""

from __future__ import annotations

from agmdp.attackgraph import GraphKind
from agmdp.cvss import CvssVector
from agmdp.families import EASY, chain, fully_connected, random_network, two_path
from agmdp.mdpstack import AdversaryProfile, TaskKind, TaskSpec, TerrainSpec
from agmdp.netmodel import Action, FirewallRule, Host, NetworkModel, PrivilegeLevel, Tag, Vulnerability
from agmdp.pipeline import PipelineSpec, build

U, R = PrivilegeLevel.USER, PrivilegeLevel.ROOT

GAMMA = 0.95
# Closed-form generic-layer quantities, from the published CVSS weights.
P_EASY = min(0.99, 8.22 * 0.85 * 0.77 * 0.85 * 0.85 / 3.9)
GAIN_HIGH = 6.42 * (1 - 0.44 ** 3) / 6.1
GAIN_PIVOT = 6.42 * 0.22 / 6.1


def crown_jewel(obstacle=0.0, step_penalty=-0.01, terminal_reward=10.0, **kw):
    return PipelineSpec(
        task=TaskSpec(TaskKind.CROWN_JEWEL, "entry", terminal_reward=terminal_reward, step_penalty=step_penalty),
        terrain=TerrainSpec(obstacle_penalty=obstacle),
        **kw,
    )


def two_path_built(obstacle=0.0, step_penalty=-0.01, **kw):
    return build(two_path(**kw), crown_jewel(obstacle, step_penalty))


def path_value(steps, gamma=GAMMA):
    """Value of retrying each (p, gain, cost) step until it succeeds, in order."""
    v = 0.0
    for p, gain, cost in reversed(steps):
        v = (p * gain + cost + gamma * p * v) / (1 - gamma * (1 - p))
    return v


def two_path_closed_form(obstacle, step_penalty, terminal=10.0):
    """Expected returns of the direct, hybrid and quiet routes to the jewel."""
    jewel_loud = (P_EASY, GAIN_HIGH + terminal, step_penalty + obstacle)
    jewel_quiet = (P_EASY, GAIN_HIGH + terminal, step_penalty)
    pivot = (P_EASY, GAIN_PIVOT, step_penalty)
    return {
        "short": path_value([jewel_loud]),
        "via_m1": path_value([pivot, jewel_loud]),
        "long": path_value([pivot, pivot, jewel_quiet]),
    }


def chain_pathing(n=3, target=None, **kw):
    return build(chain(n), PipelineSpec(task=TaskSpec(TaskKind.PATHING, "entry", (target or f"h{n}",)), **kw))


def exfil_chain():
    m = chain(2)
    hosts = list(m.hosts)
    hosts[1] = Host(hosts[1].id, hosts[1].subnet, hosts[1].services, hosts[1].vulns, {Tag.DATA_STORE})
    hosts[2] = Host(hosts[2].id, hosts[2].subnet, hosts[2].services, hosts[2].vulns, {Tag.EXIT_NODE})
    return m.replace(hosts=tuple(hosts))


def exfil_star():
    """Entry sees both the data store and the exit node directly."""
    hosts = (
        Host("entry", "lan", ("ssh",), (), {Tag.ENTRY}),
        Host("data", "lan", ("svc",), (Vulnerability("CVE-D", "svc", EASY),), {Tag.DATA_STORE}),
        Host("out", "lan", ("svc",), (Vulnerability("CVE-O", "svc", EASY),), {Tag.EXIT_NODE}),
    )
    return NetworkModel(hosts, ("lan",))


def loop_fixture(bonus_mode="per_visit", bonus=1.0, terminal_reward=1.0):
    """Bouncing between USER and ROOT on key terrain beats finishing the task.

    ``t`` has a ROOT exploit and a USER exploit, so a non-monotone graph
    holds a 2-cycle there; the goal host ``g`` is behind a hard exploit.
    """
    hard = CvssVector.parse("AV:N/AC:H/PR:H/UI:R/S:U/C:N/I:N/A:L")
    # Zero impact: only the terrain bonus can make the cycle pay.
    inert = CvssVector.parse("AV:N/AC:L/PR:N/UI:N/S:U/C:N/I:N/A:N")
    hosts = (
        Host("e", "lan", ("svc",), (), {Tag.ENTRY}),
        Host("t", "lan", ("svc",), (Vulnerability("T-ROOT", "svc", inert, U, R), Vulnerability("T-USER", "svc", inert, U, U))),
        Host("g", "lan", ("svc",), (Vulnerability("G", "svc", hard),)),
    )
    model = NetworkModel(hosts, ("lan",))
    spec = PipelineSpec(
        task=TaskSpec(TaskKind.PATHING, "e", ("g",), terminal_reward=terminal_reward),
        terrain=TerrainSpec(key_terrain={"t"}, proximity_bonus=bonus, bonus_mode=bonus_mode),
        monotone=False,
    )
    return model, spec


def all_fixture_specs():
    """(name, model, spec) for every small scenario the suites sweep over."""
    out = [
        ("chain3", chain(3), PipelineSpec(task=TaskSpec(TaskKind.PATHING, "entry", ("h3",)))),
        ("chain4-monitored", chain(4, monitored=True), PipelineSpec(task=TaskSpec(TaskKind.PATHING, "entry", ("h4",)), terrain=TerrainSpec(obstacle_penalty=-1.0))),
        ("two-path", two_path(), crown_jewel(-5.0)),
        ("two-path-flat", two_path(), crown_jewel(0.0)),
        ("two-path-exploit-dep", two_path(), crown_jewel(-5.0, generator=GraphKind.EXPLOIT_DEPENDENCY)),
        ("exfil-chain", exfil_chain(), PipelineSpec(task=TaskSpec(TaskKind.EXFILTRATION, "entry"))),
        ("exfil-star", exfil_star(), PipelineSpec(task=TaskSpec(TaskKind.EXFILTRATION, "entry"), adversary=AdversaryProfile(skill=0.7))),
        ("loop-per-visit", *loop_fixture("per_visit")),
        ("loop-once", *loop_fixture("once")),
        ("fc4", fully_connected(4), PipelineSpec(task=TaskSpec(TaskKind.PATHING, "h0", ("h3",)), terrain=TerrainSpec(concealment={"h2": 0.5}))),
        ("fc5-key", fully_connected(5), PipelineSpec(task=TaskSpec(TaskKind.PATHING, "h0", ("h4",)), terrain=TerrainSpec(key_terrain={"h2"}, proximity_bonus=0.5, bonus_mode="once"))),
    ]
    for seed in range(12):
        m = random_network(seed, n_hosts=5)
        out.append((f"random{seed}", m, PipelineSpec(task=TaskSpec(TaskKind.PATHING, "h0", ("h4",)))))
    return out


def shifted_target_pair(obstacle=-5.0):
    """Same two-path network; source task stops at m2, shifted task wants the jewel."""
    m = two_path()
    src = build(m, PipelineSpec(task=TaskSpec(TaskKind.PATHING, "entry", ("m2",)), terrain=TerrainSpec(obstacle_penalty=obstacle)))
    dst = build(m, crown_jewel(obstacle))
    return src, dst


def small_fixtures(limit=50):
    """Built fixtures with a nonempty action set and at most ``limit`` states."""
    out = []
    for name, m, spec in all_fixture_specs():
        b = build(m, spec)
        if b.mdp.arcs and len(b.mdp.states) <= limit:
            out.append((name, b))
    return out
