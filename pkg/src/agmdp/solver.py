"""Tabular solvers over task MDPs.

Value iteration is the reference solver; Q-learning is the model-free
learner; ``brute_force_return`` is an exhaustive expectimax oracle that
shares no code with either.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping

import numpy as np

from .errors import OracleScaleExceeded
from .mdpstack import LayeredMdp

TIE_TOL = 1e-9


@dataclass
class Solution:
    values: dict[str, float]
    policy: dict[str, str]
    residuals: list[float]

    @property
    def iterations(self) -> int:
        return len(self.residuals)


class _Compiled:
    """Index arrays for vectorised Bellman backups."""

    def __init__(self, m: LayeredMdp):
        self.states = list(m.states)
        self.index = {s: i for i, s in enumerate(self.states)}
        keys = sorted(m.arcs)
        self.keys = keys
        self.src = np.array([self.index[s] for s, _ in keys], dtype=np.int64)
        self.dst = np.array([self.index[m.arcs[k].success] for k in keys], dtype=np.int64)
        self.p = np.array([m.arcs[k].p for k in keys], dtype=float)
        self.r = np.array([m.arcs[k].reward for k in keys], dtype=float)
        self.self_loop = self.src == self.dst
        self.gamma = m.gamma

    def q(self, v: np.ndarray) -> np.ndarray:
        cont = np.where(self.self_loop, v[self.src], self.p * v[self.dst] + (1.0 - self.p) * v[self.src])
        return self.r + self.gamma * cont

    def backup(self, v: np.ndarray) -> np.ndarray:
        out = np.full(len(self.states), -np.inf)
        if len(self.keys):
            np.maximum.at(out, self.src, self.q(v))
        # Terminals and dead ends carry no admissible action and are worth zero.
        return np.where(np.isneginf(out), 0.0, out)


def greedy_policy(m: LayeredMdp, q: Mapping[tuple[str, str], float]) -> dict[str, str]:
    """Argmax per state; ties go to the lexicographically lowest action id."""
    policy = {}
    for s in m.states:
        if s in m.terminals:
            continue
        acts = m.actions_in(s)
        if not acts:
            continue
        best = max(q.get((s, a), 0.0) for a in acts)
        tol = TIE_TOL * max(1.0, abs(best))
        policy[s] = next(a for a in acts if q.get((s, a), 0.0) >= best - tol)
    return policy


def value_iteration(
    m: LayeredMdp,
    eps: float = 1e-8,
    max_iter: int = 100_000,
    initial_values: Mapping[str, float] | None = None,
) -> Solution:
    """Synchronous value iteration until the Bellman residual drops below ``eps``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    c = _Compiled(m)
    v = np.zeros(len(c.states))
    if initial_values:
        for s, val in initial_values.items():
            if s in c.index and s not in m.terminals:
                v[c.index[s]] = val
    residuals = []
    for _ in range(max_iter):
        nv = c.backup(v)
        res = float(np.max(np.abs(nv - v))) if len(v) else 0.0
        residuals.append(res)
        v = nv
        if res < eps:
            break
    values = {s: float(v[i]) for i, s in enumerate(c.states)}
    qv = c.q(v) if len(c.keys) else np.array([])
    q = {k: float(x) for k, x in zip(c.keys, qv)}
    return Solution(values, greedy_policy(m, q), residuals)


def q_values(m: LayeredMdp, values: Mapping[str, float]) -> dict[tuple[str, str], float]:
    c = _Compiled(m)
    v = np.array([values.get(s, 0.0) for s in c.states])
    return {k: float(x) for k, x in zip(c.keys, c.q(v))} if c.keys else {}


def policy_value(m: LayeredMdp, policy: Mapping[str, str]) -> dict[str, float]:
    """Exact value of a deterministic policy (linear solve)."""
    states = list(m.states)
    idx = {s: i for i, s in enumerate(states)}
    n = len(states)
    A = np.eye(n)
    b = np.zeros(n)
    for s, a in policy.items():
        if s not in idx or (s, a) not in m.arcs:
            continue
        arc = m.arcs[(s, a)]
        i = idx[s]
        b[i] = arc.reward
        for nxt, p in arc.distribution(s).items():
            A[i, idx[nxt]] -= m.gamma * p
    x = np.linalg.solve(A, b)
    return {s: float(x[i]) for i, s in enumerate(states)}


@dataclass
class EpsilonSchedule:
    """Linear decay from ``start`` to ``end`` over the first ``fraction`` of episodes."""

    start: float = 1.0
    end: float = 0.05
    fraction: float = 0.8

    def at(self, episode: int, episodes: int) -> float:
        span = max(1, int(self.fraction * episodes))
        if episode >= span:
            return self.end
        return self.start + (self.end - self.start) * episode / span


@dataclass
class QTable:
    values: dict[tuple[str, str], float]
    curve: list[float] = field(default_factory=list)
    seed: int | None = None

    def __getitem__(self, key):
        return self.values[key]

    def greedy(self, m: LayeredMdp) -> dict[str, str]:
        return greedy_policy(m, self.values)


def _step(m: LayeredMdp, rng: np.random.Generator, s: str, a: str) -> tuple[str, float, bool]:
    """Sample one transition; reward is realised (gain only on success)."""
    arc = m.arcs[(s, a)]
    success = bool(rng.random() < arc.p)
    nxt = arc.success if success else s
    return nxt, (arc.gain if success else 0.0) + arc.cost, success


def q_learning(
    m: LayeredMdp,
    episodes: int,
    alpha: float = 0.1,
    epsilon: EpsilonSchedule | None = None,
    seed: int = 0,
    max_steps: int = 200,
    q_init: QTable | Mapping[tuple[str, str], float] | None = None,
    on_episode=None,
    alpha_hold: int | None = 100,
) -> QTable:
    """Epsilon-greedy tabular Q-learning from the initial state.

    The step size for a pair on its n-th update is ``alpha`` while
    n <= ``alpha_hold`` and ``alpha * alpha_hold / n`` after that, so the
    estimates converge instead of jittering around near-ties. Pass
    ``alpha_hold=None`` for a constant step size.
    ``curve`` holds the discounted return of each training episode.
    ``on_episode(i, q)`` is called after every episode, if given.
    """
    epsilon = epsilon or EpsilonSchedule()
    rng = np.random.default_rng(seed)
    q = {k: 0.0 for k in sorted(m.arcs)}
    visits = dict.fromkeys(q, 0)
    if q_init is not None:
        init = q_init.values if isinstance(q_init, QTable) else q_init
        for k, v in init.items():
            if k in q:
                q[k] = float(v)
    curve = []
    for ep in range(episodes):
        eps = epsilon.at(ep, episodes)
        s = m.initial
        ret, disc = 0.0, 1.0
        for _ in range(max_steps):
            if m.is_absorbing(s):
                break
            acts = m.actions_in(s)
            if rng.random() < eps:
                a = acts[int(rng.integers(len(acts)))]
            else:
                best = max(q[(s, x)] for x in acts)
                a = next(x for x in acts if q[(s, x)] >= best - TIE_TOL * max(1.0, abs(best)))
            nxt, r, _ = _step(m, rng, s, a)
            future = 0.0 if m.is_absorbing(nxt) else max(q[(nxt, x)] for x in m.actions_in(nxt))
            visits[(s, a)] += 1
            n = visits[(s, a)]
            step = alpha if alpha_hold is None or n <= alpha_hold else alpha * alpha_hold / n
            q[(s, a)] += step * (r + m.gamma * future - q[(s, a)])
            ret += disc * r
            disc *= m.gamma
            s = nxt
        curve.append(ret)
        if on_episode is not None:
            on_episode(ep, q)
    return QTable(q, curve, seed)


def brute_force_return(m: LayeredMdp, horizon: int, max_states: int = 50, max_horizon: int = 20) -> float:
    """Exact optimal ``horizon``-step discounted return from the initial state."""
    if len(m.states) > max_states or horizon > max_horizon:
        raise OracleScaleExceeded(
            f"oracle limited to {max_states} states / horizon {max_horizon}; "
            f"got {len(m.states)} states / horizon {horizon}"
        )
    choices: dict[str, list[tuple[float, list[tuple[str, float]]]]] = {}
    for (s, a), arc in m.arcs.items():
        choices.setdefault(s, []).append((arc.reward, list(arc.distribution(s).items())))
    terminals = m.terminals
    gamma = m.gamma

    @lru_cache(maxsize=None)
    def best(s: str, depth: int) -> float:
        if depth == 0 or s in terminals or s not in choices:
            return 0.0
        return max(r + gamma * sum(p * best(nxt, depth - 1) for nxt, p in dist) for r, dist in choices[s])

    return best(m.initial, horizon)


@dataclass
class EpisodeTrace:
    states: list[str]
    actions: list[str]
    rewards: list[float]
    seed: int
    total_return: float
    successes: list[bool] = field(default_factory=list)

    @property
    def undiscounted_return(self) -> float:
        return sum(self.rewards)


def rollout(m: LayeredMdp, policy: Mapping[str, str], seed: int = 0, horizon: int = 100) -> EpisodeTrace:
    rng = np.random.default_rng(seed)
    s = m.initial
    states, actions, rewards, successes = [s], [], [], []
    ret, disc = 0.0, 1.0
    for _ in range(horizon):
        if s in m.terminals or s not in policy:
            break
        a = policy[s]
        nxt, r, ok = _step(m, rng, s, a)
        actions.append(a)
        rewards.append(r)
        successes.append(ok)
        ret += disc * r
        disc *= m.gamma
        states.append(nxt)
        s = nxt
    return EpisodeTrace(states, actions, rewards, seed, ret, successes)


def warm_start(q_src: QTable, m_dst: LayeredMdp, state_map: Mapping[str, str] | None = None) -> QTable:
    """Copy source Q-values onto mapped, admissible destination pairs.

    Without ``state_map`` the identity on shared state ids is used; pass an
    empty mapping to get a cold (all-zero) table.
    """
    values = {k: 0.0 for k in sorted(m_dst.arcs)}
    dst_states = set(m_dst.states)
    for (s, a), v in q_src.values.items():
        if state_map is None:
            t = s if s in dst_states else None
        else:
            t = state_map.get(s)
        if t is not None and (t, a) in values:
            values[(t, a)] = v
    return QTable(values)


def episodes_to_threshold(
    m: LayeredMdp,
    episodes: int,
    seed: int,
    fraction: float = 0.9,
    q_init: QTable | None = None,
    **kwargs,
) -> int:
    """First episode after which the greedy policy's exact value reaches
    ``fraction`` of the optimum at the initial state; ``episodes`` if never."""
    optimum = value_iteration(m).values[m.initial]
    target = fraction * optimum
    hit = {"at": None}

    def check(ep, q):
        if hit["at"] is not None:
            return
        pol = greedy_policy(m, q)
        if policy_value(m, pol)[m.initial] >= target - 1e-12:
            hit["at"] = ep + 1

    if q_init is not None and policy_value(m, q_init.greedy(m))[m.initial] >= target - 1e-12:
        return 0
    q_learning(m, episodes, seed=seed, q_init=q_init, on_episode=check, **kwargs)
    return hit["at"] if hit["at"] is not None else episodes


def detect_cycle_exploit(m: LayeredMdp, policy: Mapping[str, str], horizon: int = 200, seed: int = 0) -> bool:
    """True iff a rollout revisits a state having gained positive reward since the last visit."""
    trace = rollout(m, policy, seed=seed, horizon=horizon)
    last_seen = {trace.states[0]: 0.0}
    acc = 0.0
    for r, s in zip(trace.rewards, trace.states[1:]):
        acc += r
        if s in last_seen and acc - last_seen[s] > 1e-12:
            return True
        last_seen[s] = acc
    return False


def v_max(m: LayeredMdp) -> float:
    rmax = max((abs(r) for r in m.R.values()), default=0.0)
    return rmax / (1.0 - m.gamma)


def oracle_tolerance(m: LayeredMdp, eps: float, horizon: int) -> float:
    return eps + m.gamma**horizon * v_max(m)


def policy_states(m: LayeredMdp, policy: Mapping[str, str]) -> list[str]:
    """Non-terminal states reachable from the initial state under ``policy``."""
    seen = {m.initial}
    order = [m.initial]
    i = 0
    while i < len(order):
        s = order[i]
        i += 1
        if s in policy and (s, policy[s]) in m.arcs:
            nxt = m.arcs[(s, policy[s])].success
            if nxt not in seen:
                seen.add(nxt)
                order.append(nxt)
    return [s for s in order if s in policy]


def policy_agreement(m: LayeredMdp, reference: Mapping[str, str], other: Mapping[str, str]) -> float:
    """Fraction of the reference policy's on-path states where ``other`` picks the same action."""
    states = policy_states(m, reference)
    if not states:
        return 1.0
    return sum(other.get(s) == reference[s] for s in states) / len(states)


def optimal_path(m: LayeredMdp, policy: Mapping[str, str]) -> list[str]:
    """States visited when every policy action succeeds, from the initial state."""
    path = [m.initial]
    while path[-1] in policy:
        nxt = m.arcs[(path[-1], policy[path[-1]])].success
        if nxt in path:
            break
        path.append(nxt)
    return path


def optimal_agreement(m: LayeredMdp, solution: Solution, other: Mapping[str, str]) -> float:
    """Like :func:`policy_agreement`, but an action tied with the reference
    optimum (within the tie tolerance) counts as agreeing."""
    states = policy_states(m, solution.policy)
    if not states:
        return 1.0
    q = q_values(m, solution.values)
    ok = 0
    for s in states:
        a = other.get(s)
        v = solution.values[s]
        ok += a is not None and (s, a) in q and q[(s, a)] >= v - TIE_TOL * max(1.0, abs(v))
    return ok / len(states)
