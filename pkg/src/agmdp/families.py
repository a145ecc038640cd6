"""Parametric network families used by growth studies, examples and tests."""

from __future__ import annotations

import numpy as np

from .cvss import ALLOWED, CvssVector
from .netmodel import Action, FirewallRule, Host, NetworkModel, PrivilegeLevel, Tag, Vulnerability

EASY = CvssVector.parse("AV:N/AC:L/PR:N/UI:N/S:U/C:H/I:H/A:H")
HARD = CvssVector.parse("AV:N/AC:H/PR:L/UI:N/S:U/C:H/I:H/A:H")
LOCAL_ROOT = CvssVector.parse("AV:L/AC:L/PR:L/UI:N/S:U/C:H/I:H/A:H")
# Easy to exploit, low impact: a stepping stone rather than a prize.
PIVOT = CvssVector.parse("AV:N/AC:L/PR:N/UI:N/S:U/C:L/I:N/A:N")


def fully_connected(n: int, service: str = "svc") -> NetworkModel:
    """``n`` identical hosts on one subnet, one remote USER vuln each; h0 is the entry."""
    hosts = []
    for i in range(n):
        tags = {Tag.ENTRY} if i == 0 else set()
        hosts.append(Host(f"h{i}", "lan", (service,), (Vulnerability(f"CVE-{i:04d}", service, EASY),), tags))
    return NetworkModel(tuple(hosts), ("lan",))


def chain(n: int, monitored: bool = False, cvss: CvssVector = EASY) -> NetworkModel:
    """Entry foothold followed by ``n`` hosts h1..hn, firewalled so only h(i-1) -> h(i) routes."""
    subnets = tuple(f"s{i}" for i in range(n + 1))
    hosts = [Host("entry", "s0", ("ssh",), (), {Tag.ENTRY})]
    rules = []
    for i in range(1, n + 1):
        hosts.append(Host(f"h{i}", f"s{i}", ("svc",), (Vulnerability(f"CVE-C{i}", "svc", cvss),)))
        rules.append(FirewallRule(f"s{i - 1}", f"s{i}", "svc", Action.ALLOW, monitored))
    return NetworkModel(tuple(hosts), subnets, tuple(rules))


def single_host() -> NetworkModel:
    return NetworkModel((Host("h0", "lan", ("svc",), (), {Tag.ENTRY}),), ("lan",))


def two_path(
    short_monitored: bool = True,
    short_cvss: CvssVector = EASY,
    long_hops: int = 2,
    pivot_cvss: CvssVector = PIVOT,
) -> NetworkModel:
    """Two disjoint routes from the entry to a crown jewel ``jewel``.

    The short route is one direct hop across a (monitored) firewall. The long
    route pivots through ``m1..mk`` over unmonitored rules.
    """
    subnets = ["edge", "core"] + [f"mid{i}" for i in range(1, long_hops + 1)]
    hosts = [
        Host("entry", "edge", ("ssh",), (), {Tag.ENTRY}),
        Host("jewel", "core", ("db",), (Vulnerability("CVE-JEWEL", "db", short_cvss),), {Tag.CROWN_JEWEL}),
    ]
    rules = [FirewallRule("edge", "core", "db", Action.ALLOW, short_monitored)]
    prev = "edge"
    for i in range(1, long_hops + 1):
        hosts.append(Host(f"m{i}", f"mid{i}", ("web",), (Vulnerability(f"CVE-M{i}", "web", pivot_cvss),)))
        rules.append(FirewallRule(prev, f"mid{i}", "web", Action.ALLOW, False))
        prev = f"mid{i}"
    # The last pivot reaches the core without inspection.
    rules.append(FirewallRule(prev, "core", "db", Action.ALLOW, False))
    return NetworkModel(tuple(hosts), tuple(subnets), tuple(rules))


def random_network(seed: int, n_hosts: int = 6, n_subnets: int = 3, vuln_prob: float = 0.7) -> NetworkModel:
    """Random small network for property tests; h0 is the entry."""
    rng = np.random.default_rng(seed)
    subnets = tuple(f"s{i}" for i in range(n_subnets))
    services = ("ssh", "http", "smb")
    hosts = []
    for i in range(n_hosts):
        svcs = tuple(s for s in services if rng.random() < 0.6) or ("ssh",)
        vulns = []
        k = 0
        for svc in svcs:
            if rng.random() >= vuln_prob:
                continue
            codes = [ALLOWED[m][int(rng.integers(len(ALLOWED[m])))] for m in ("AV", "AC", "PR", "UI", "S", "C", "I", "A")]
            cv = CvssVector(*codes)
            if cv.is_local:
                pre, post = PrivilegeLevel.USER, PrivilegeLevel.ROOT
            else:
                pre = PrivilegeLevel.USER if rng.random() < 0.8 else PrivilegeLevel.ROOT
                post = PrivilegeLevel.USER if rng.random() < 0.6 else PrivilegeLevel.ROOT
            vulns.append(Vulnerability(f"CVE-{seed}-{i}-{k}", svc, cv, pre, post))
            k += 1
        tags = {Tag.ENTRY} if i == 0 else set()
        hosts.append(Host(f"h{i}", subnets[int(rng.integers(n_subnets))], svcs, tuple(vulns), tags))
    rules = []
    for a in subnets:
        for b in subnets:
            if a != b and rng.random() < 0.5:
                svc = "*" if rng.random() < 0.5 else services[int(rng.integers(len(services)))]
                action = Action.ALLOW if rng.random() < 0.8 else Action.DENY
                rules.append(FirewallRule(a, b, svc, action, bool(rng.random() < 0.3)))
    return NetworkModel(tuple(hosts), subnets, tuple(rules))


FAMILIES = {
    "fully-connected": fully_connected,
    "chain": chain,
    "single": lambda n: single_host(),
}
