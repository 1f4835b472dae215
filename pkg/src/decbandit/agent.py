"""Per-agent Decision Making / Transmission / Updating cycle.

This is the readable reference form of one agent. The engine runs the same
arithmetic on whole-network arrays; ``tests/test_engine.py`` replays runs
through these functions and demands bit-identical results.
"""
from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, replace

import numpy as np

from .klcore import ConfidenceParams, kl_budget, kl_ucb_solve, ucb1_bonus

__all__ = [
    "POLICIES",
    "DECENTRALIZED",
    "ProtocolError",
    "AgentState",
    "Broadcast",
    "effective_policy",
    "init",
    "arm_index_set",
    "decide",
    "broadcast",
    "update",
]

DECENTRALIZED = ("dec_klucb", "dec_ucb1")
POLICIES = ("dec_klucb", "dec_ucb1", "single_klucb", "single_ucb1")


class ProtocolError(RuntimeError):
    pass


def effective_policy(policy: str, isolated: bool) -> str:
    """Isolated agents have nobody to fuse with and run the single-agent baseline."""
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    if isolated and policy in DECENTRALIZED:
        return policy.replace("dec_", "single_")
    return policy


def uses_kl(policy: str) -> bool:
    return policy.endswith("klucb")


@dataclass(frozen=True, eq=False)
class AgentState:
    agent_id: int
    policy: str
    params: ConfidenceParams
    t: int
    n: np.ndarray
    m: np.ndarray
    xbar: np.ndarray
    z: np.ndarray
    reward_sum: np.ndarray

    @property
    def arm_count(self) -> int:
        return self.n.size


@dataclass(frozen=True, eq=False)
class Broadcast:
    sender: int
    m_vec: np.ndarray
    z_vec: np.ndarray


def init(agent_id: int, policy: str, params: ConfidenceParams, initial_rewards) -> AgentState:
    """State at t = 0 after pulling every arm once."""
    r = np.array(initial_rewards, dtype=float)
    if r.ndim != 1 or r.size < 1:
        raise ValueError("initial_rewards needs one reward per arm")
    ones = np.ones(r.size, dtype=np.int64)
    return AgentState(agent_id, policy, params, 0, ones, ones.copy(), r.copy(), r.copy(), r.copy())


def arm_index_set(s: AgentState, arm_count: int | None = None) -> list[int]:
    """Arms whose local count lags the estimated network maximum by at least M."""
    M = s.arm_count if arm_count is None else arm_count
    return [int(k) for k in np.flatnonzero(s.n <= s.m - M)]


def _index(s: AgentState, t: int) -> np.ndarray:
    single = not s.policy.startswith("dec_")
    est = s.xbar if single else s.z
    if uses_kl(s.policy):
        budget = kl_budget(t, s.params, single_agent=single)
        return kl_ucb_solve(np.clip(est, 0.0, 1.0), s.n, budget)
    return est + ucb1_bonus(t, s.n, s.params, single_agent=single)


def decide(s: AgentState, t: int, rng: np.random.Generator) -> int:
    if s.policy.startswith("dec_"):
        lagging = arm_index_set(s)
        if lagging:
            return lagging[int(rng.integers(len(lagging)))]
    return int(np.argmax(_index(s, t)))


def broadcast(s: AgentState) -> Broadcast:
    return Broadcast(s.agent_id, s.m.copy(), s.z.copy())


def update(
    s: AgentState,
    chosen: int,
    reward: float,
    weights_row: Mapping[int, float],
    inbox: Mapping[int, Broadcast],
) -> AgentState:
    """Advance to t+1 from the time-t broadcasts of every neighbor (self included)."""
    missing = sorted(set(weights_row) - set(inbox))
    if missing:
        raise ProtocolError(f"agent {s.agent_id} at t={s.t}: no broadcast from neighbors {missing}")
    if not 0.0 <= reward <= 1.0:
        raise ValueError(f"reward {reward} outside [0,1]")
    n = s.n.copy()
    reward_sum = s.reward_sum.copy()
    xbar = s.xbar.copy()
    n[chosen] += 1
    reward_sum[chosen] = reward_sum[chosen] + reward
    xbar[chosen] = reward_sum[chosen] / n[chosen]

    nbrs = sorted(weights_row)
    acc = weights_row[nbrs[0]] * inbox[nbrs[0]].z_vec
    for j in nbrs[1:]:
        acc = acc + weights_row[j] * inbox[j].z_vec
    z = acc + (xbar - s.xbar)

    m = n.copy()
    for j in nbrs:
        m = np.maximum(m, inbox[j].m_vec)
    return replace(s, t=s.t + 1, n=n, m=m, xbar=xbar, z=z, reward_sum=reward_sum)
