"""Round-synchronous simulator for decentralized and single-agent bandit policies.

One round at time t: every agent decides from its time-t state, chosen-arm
rewards are drawn, the time-t broadcasts (m, z) of all agents are frozen into a
snapshot, and every agent updates to t+1 from that snapshot only.
"""
from __future__ import annotations

import hashlib
import os
import time
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import agent as agent_mod
from .graph import NeighborGraph, connected_components, metropolis_weights, shortest_distances
from .klcore import kl_budget, kl_ucb_solve, ucb1_bonus
from .rewards import ArmSet, RewardStream, gaps
from .seeding import check_seed, stream_key

__all__ = [
    "SimConfig",
    "RunResult",
    "RunTrace",
    "BatchResult",
    "CheckStat",
    "InvariantReport",
    "ConfigError",
    "run",
    "run_batch",
    "pseudo_regret",
    "snapshot_times",
]


class ConfigError(ValueError):
    pass


def _per_agent(value, n: int, name: str) -> tuple:
    if isinstance(value, (list, tuple, np.ndarray)):
        if len(value) != n:
            raise ConfigError(f"{name} lists {len(value)} entries for {n} agents")
        return tuple(value)
    return (value,) * n


@dataclass(frozen=True, eq=False)
class SimConfig:
    graph: NeighborGraph
    arms: ArmSet
    policies: tuple[str, ...]
    varsigma: tuple[float, ...]
    beta: tuple[float, ...]
    horizon: int
    runs: int = 1
    seed: int = 0
    snapshot_interval: int = 1
    check_invariants: bool = False
    oracle_tracking: bool = False
    # stream id of each agent; lets a sub-network reuse a larger network's streams
    agent_keys: tuple[int, ...] | None = None
    # (round, agent, arm, delta): perturb one z after that round's update
    fault: tuple[int, int, int, float] | None = None

    @classmethod
    def create(cls, graph: NeighborGraph, arms, policy="dec_klucb", varsigma=0.01, beta=0.01,
               horizon: int = 1000, **kwargs) -> "SimConfig":
        if not isinstance(arms, ArmSet):
            arms = ArmSet(tuple(arms))
        n = graph.node_count
        cfg = cls(graph=graph, arms=arms,
                  policies=_per_agent(policy, n, "policy"),
                  varsigma=tuple(float(v) for v in _per_agent(varsigma, n, "varsigma")),
                  beta=tuple(float(b) for b in _per_agent(beta, n, "beta")),
                  horizon=int(horizon), **kwargs)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        n = self.graph.node_count
        if self.horizon < 0:
            raise ConfigError(f"horizon T must be >= 0, got {self.horizon}")
        if self.runs < 1:
            raise ConfigError(f"runs must be >= 1, got {self.runs}")
        if self.snapshot_interval < 1:
            raise ConfigError(f"snapshot_interval must be >= 1, got {self.snapshot_interval}")
        for name in ("policies", "varsigma", "beta"):
            if len(getattr(self, name)) != n:
                raise ConfigError(f"{name} needs {n} per-agent entries")
        for p in self.policies:
            if p not in agent_mod.POLICIES:
                raise ConfigError(f"unknown policy {p!r}; expected one of {agent_mod.POLICIES}")
        if any(v < 0 for v in self.varsigma) or any(b < 0 for b in self.beta):
            raise ConfigError("varsigma and beta must be nonnegative")
        if self.agent_keys is not None and len(self.agent_keys) != n:
            raise ConfigError("agent_keys needs one key per agent")
        check_seed(self.seed)

    @property
    def effective_policies(self) -> tuple[str, ...]:
        return tuple(agent_mod.effective_policy(p, self.graph.is_isolated(i))
                     for i, p in enumerate(self.policies))

    def key_of(self, i: int) -> int:
        return i if self.agent_keys is None else self.agent_keys[i]


def snapshot_times(horizon: int, interval: int) -> np.ndarray:
    times = list(range(0, horizon + 1, interval))
    if times[-1] != horizon:
        times.append(horizon)
    return np.array(times, dtype=np.int64)


@dataclass
class CheckStat:
    applicable: bool = True
    checked: int = 0
    violations: int = 0
    tightest: float = float("inf")
    first_violation: str | None = None

    def record(self, margins: np.ndarray, where=None, strict: bool = False) -> None:
        """Count a violation for every margin < 0 (``strict``: <= 0)."""
        if margins.size == 0:
            return
        self.checked += int(margins.size)
        low = float(margins.min())
        self.tightest = min(self.tightest, low)
        bad = int(np.count_nonzero(margins <= 0 if strict else margins < 0))
        if bad:
            self.violations += bad
            if self.first_violation is None and where is not None:
                self.first_violation = where() if callable(where) else str(where)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def as_dict(self) -> dict:
        return {
            "applicable": self.applicable,
            "checked": self.checked,
            "violations": self.violations,
            "tightest_margin": None if self.tightest == float("inf") else self.tightest,
            "first_violation": self.first_violation,
            "passed": self.passed,
        }


@dataclass
class InvariantReport:
    checks: dict[str, CheckStat] = field(default_factory=dict)

    def stat(self, name: str) -> CheckStat:
        return self.checks.setdefault(name, CheckStat())

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def merge(self, other: "InvariantReport") -> None:
        for name, o in other.checks.items():
            s = self.stat(name)
            s.applicable = s.applicable and o.applicable
            s.checked += o.checked
            s.violations += o.violations
            s.tightest = min(s.tightest, o.tightest)
            s.first_violation = s.first_violation or o.first_violation

    def as_dict(self) -> dict:
        return {k: v.as_dict() for k, v in self.checks.items()}


@dataclass(eq=False)
class RunTrace:
    """Everything needed to replay the consensus algebra of one run."""

    initial_rewards: np.ndarray   # (N, M), X_{i,k}(0)
    choices: np.ndarray           # (T, N), arm pulled at time t+1
    rewards: np.ndarray           # (T, N), reward of that pull
    z: np.ndarray                 # (T+1, N, M), engine's consensus estimates
    weights: np.ndarray           # (N, N)


@dataclass(eq=False)
class RunResult:
    run_index: int
    times: np.ndarray             # stored time points
    regret: np.ndarray            # (len(times), N) pseudo-regret
    pulls: np.ndarray             # (N, M) final n_{i,k}(T)
    seeds: dict
    graph_fingerprint: str
    policies: tuple[str, ...]
    invariants: InvariantReport | None = None
    trace: RunTrace | None = None
    runtime: float = 0.0

    @property
    def final_regret(self) -> np.ndarray:
        return self.regret[-1]


def pseudo_regret(pull_counts, gap, horizon: int | None = None) -> float:
    """Sum of n_k * gap_k over suboptimal arms."""
    counts = np.asarray(pull_counts)
    gap = np.asarray(gap, dtype=float)
    if counts.shape != gap.shape:
        raise ValueError(f"{counts.size} pull counts for {gap.size} arms")
    if horizon is not None and int(counts.sum()) != horizon + gap.size:
        raise ValueError(f"pull counts sum to {int(counts.sum())}, expected T+M = {horizon + gap.size}")
    total = 0.0
    for k in np.flatnonzero(gap > 0):
        total += float(counts[k]) * float(gap[k])
    return total


class _Network:
    """Whole-network state arrays plus the per-round kernels."""

    def __init__(self, cfg: SimConfig, run_index: int):
        g = cfg.graph
        self.cfg = cfg
        self.N, self.M = g.node_count, len(cfg.arms)
        wm = metropolis_weights(g)
        self.W = wm.entries
        width = max(len(s) for s in g.neighbors)
        self.nbr_idx = np.empty((self.N, width), dtype=np.int64)
        self.nbr_w = np.zeros((self.N, width))
        for i, nb in enumerate(g.neighbors):
            self.nbr_idx[i, :] = i  # padding: self with weight 0
            self.nbr_idx[i, :len(nb)] = nb
            self.nbr_w[i, :len(nb)] = [self.W[i, j] for j in nb]

        pol = cfg.effective_policies
        self.policies = pol
        self.dec = np.array([p.startswith("dec_") for p in pol])
        self.kl = np.array([p.endswith("klucb") for p in pol])
        self.kl_rows = np.flatnonzero(self.kl)
        self.ucb_rows = np.flatnonzero(~self.kl)
        self.varsigma = np.array(cfg.varsigma)
        self.beta = np.array(cfg.beta)
        self.size = g.neighborhood_sizes().astype(float)

        self.streams = [[RewardStream(spec, stream_key(cfg.seed, run_index, cfg.key_of(i), "arm_rewards", k))
                         for k, spec in enumerate(cfg.arms.arms)] for i in range(self.N)]
        self.tiebreak = [np.random.default_rng(stream_key(cfg.seed, run_index, cfg.key_of(i), "tiebreak"))
                         for i in range(self.N)]

        x0 = np.array([[s.next() for s in row] for row in self.streams])
        self.initial_rewards = x0
        self.n = np.ones((self.N, self.M), dtype=np.int64)
        self.m = self.n.copy()
        self.reward_sum = x0.copy()
        self.xbar = x0.copy()
        self.z = x0.copy()

    def indices(self, t: int) -> np.ndarray:
        idx = np.empty((self.N, self.M))
        if self.kl_rows.size:
            r = self.kl_rows
            single = ~self.dec[r]
            est = np.where(single[:, None], self.xbar[r], self.z[r])
            budget = np.where(single, kl_budget(t, single_agent=True),
                              kl_budget(t, varsigma=self.varsigma[r], neighborhood_size=self.size[r]))
            idx[r] = kl_ucb_solve(np.clip(est, 0.0, 1.0), self.n[r], budget[:, None])
        if self.ucb_rows.size:
            r = self.ucb_rows
            single = ~self.dec[r]
            est = np.where(single[:, None], self.xbar[r], self.z[r])
            bonus = np.where(single[:, None], ucb1_bonus(t, self.n[r], single_agent=True),
                             ucb1_bonus(t, self.n[r], beta=self.beta[r, None],
                                        neighborhood_size=self.size[r, None]))
            idx[r] = est + bonus
        return idx

    def decide(self, t: int) -> np.ndarray:
        choices = np.argmax(self.indices(t), axis=1)
        lagging = (self.n <= self.m - self.M) & self.dec[:, None]
        for i in np.flatnonzero(lagging.any(axis=1)):
            arms = np.flatnonzero(lagging[i])
            choices[i] = arms[int(self.tiebreak[i].integers(arms.size))]
        return choices

    def draw(self, choices: np.ndarray) -> np.ndarray:
        return np.array([self.streams[i][k].next() for i, k in enumerate(choices.tolist())])

    def update(self, choices: np.ndarray, rewards: np.ndarray, m_snap: np.ndarray, z_snap: np.ndarray) -> None:
        rows = np.arange(self.N)
        n = self.n.copy()
        n[rows, choices] += 1
        reward_sum = self.reward_sum.copy()
        reward_sum[rows, choices] = reward_sum[rows, choices] + rewards
        xbar = self.xbar.copy()
        xbar[rows, choices] = reward_sum[rows, choices] / n[rows, choices]

        acc = self.nbr_w[:, 0, None] * z_snap[self.nbr_idx[:, 0]]
        for d in range(1, self.nbr_idx.shape[1]):
            acc = acc + self.nbr_w[:, d, None] * z_snap[self.nbr_idx[:, d]]
        self.z = acc + (xbar - self.xbar)
        self.m = np.maximum(n, m_snap[self.nbr_idx].max(axis=1))
        self.n, self.reward_sum, self.xbar = n, reward_sum, xbar


class _Checker:
    """Per-round structural checks (sample-count sums, delayed-max identity,
    lag bound, count ratio, lockstep snapshot integrity)."""

    def __init__(self, net: _Network, cfg: SimConfig):
        self.net = net
        self.report = InvariantReport()
        N, M = net.N, net.M
        self.N, self.M = N, M
        dist = shortest_distances(cfg.graph)
        self.dist = dist
        self.max_d = int(dist.max()) if dist.size else 0
        self.by_distance = [dist.T == d for d in range(self.max_d + 1)]  # [d][i, j]: d_{j,i} == d
        self.history: deque[np.ndarray] = deque(maxlen=self.max_d + 1)
        self.history.append(net.n.copy())
        self.lag_bound = M * (M + 2 * N)
        self.ratio_floor = 2 * (M * M + 2 * M * N + N)
        comp = np.empty(N, dtype=np.int64)
        for c, members in enumerate(connected_components(cfg.graph)):
            comp[members] = c
        self.same_comp = comp[:, None] == comp[None, :]
        fusion_ok = all(p.startswith("dec_") or cfg.graph.is_isolated(i)
                        for i, p in enumerate(net.policies))
        for name in ("delayed_max_identity", "lag_bound", "count_ratio"):
            self.report.stat(name).applicable = fusion_ok and any(net.dec)
        for name in ("count_sum", "m_dominates_n", "xbar_in_unit", "lockstep_snapshot"):
            self.report.stat(name)
        self.check(0)

    def check(self, t: int) -> None:
        net, rep = self.net, self.report
        n, m = net.n, net.m
        sums = n.sum(axis=1)
        rep.stat("count_sum").record(-np.abs(sums - (t + self.M)).astype(float),
                                     lambda: f"t={t}: sums {sums.tolist()} != {t + self.M}")
        rep.stat("m_dominates_n").record((m - n).astype(float).ravel(), f"t={t}")
        xb = net.xbar
        rep.stat("xbar_in_unit").record(np.minimum(xb, 1.0 - xb).ravel(), f"t={t}")
        if not rep.stat("delayed_max_identity").applicable:
            return
        # delayed max: m_{i,k}(t) = max_j n_{j,k}(t - d_{j,i}), n = 0 before time 0
        expected = np.zeros_like(n)
        hist = list(self.history)  # hist[-1] is time t
        for d, mask in enumerate(self.by_distance):
            if t - d < 0:
                break
            snap = hist[-1 - d]
            for i in range(self.N):
                sel = mask[i]
                if sel.any():
                    expected[i] = np.maximum(expected[i], snap[sel].max(axis=0))
        rep.stat("delayed_max_identity").record(
            -np.abs(expected - m).astype(float).ravel(), lambda: f"t={t}: m={m.tolist()} expected={expected.tolist()}")
        rep.stat("lag_bound").record((n - (m - self.lag_bound)).astype(float).ravel(), f"t={t}",
                                            strict=True)
        big = n >= self.ratio_floor
        if big.any():
            margins = []
            for i, k in zip(*np.nonzero(big)):
                h = self.same_comp[i]
                col = n[h, k].astype(float)
                margins.append(np.minimum(n[i, k] - 0.5 * col, 1.5 * col - n[i, k]))
            rep.stat("count_ratio").record(np.concatenate(margins), f"t={t}")

    def push(self, t: int) -> None:
        self.history.append(self.net.n.copy())
        self.check(t)


def _digest(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def run(config: SimConfig, run_index: int = 0) -> RunResult:
    """One seeded run; identical (config, run_index) gives bit-identical results."""
    config.validate()
    start = time.perf_counter()
    net = _Network(config, run_index)
    T = config.horizon
    delta = gaps(config.arms.mu)
    pos = np.flatnonzero(delta > 0)
    times = snapshot_times(T, config.snapshot_interval)
    regret = np.zeros((times.size, net.N))

    def regret_now() -> np.ndarray:
        acc = np.zeros(net.N)
        for k in pos:
            acc = acc + net.n[:, k] * delta[k]
        return acc

    checker = _Checker(net, config) if config.check_invariants else None
    tracking = config.oracle_tracking
    if tracking:
        choices_hist = np.empty((T, net.N), dtype=np.int64)
        rewards_hist = np.empty((T, net.N))
        z_hist = np.empty((T + 1, net.N, net.M))
        z_hist[0] = net.z

    slot = 0
    if times[0] == 0:
        regret[0] = regret_now()
        slot = 1
    for t in range(T):
        choices = net.decide(t)
        rewards = net.draw(choices)
        m_snap, z_snap = net.m.copy(), net.z.copy()
        if checker is not None:
            before = _digest(m_snap, z_snap)
        net.update(choices, rewards, m_snap, z_snap)
        if config.fault is not None and config.fault[0] == t:
            _, fi, fk, fd = config.fault
            net.z[fi, fk] += fd
        if checker is not None:
            intact = _digest(m_snap, z_snap) == before
            checker.report.stat("lockstep_snapshot").record(np.array([0.0 if intact else -1.0]), f"t={t}")
            checker.push(t + 1)
        if tracking:
            choices_hist[t] = choices
            rewards_hist[t] = rewards
            z_hist[t + 1] = net.z
        if slot < times.size and times[slot] == t + 1:
            regret[slot] = regret_now()
            slot += 1

    trace = None
    if tracking:
        trace = RunTrace(net.initial_rewards, choices_hist, rewards_hist, z_hist, net.W)
    seeds = {
        "master_seed": int(config.seed),
        "run_index": int(run_index),
        "agent_keys": [config.key_of(i) for i in range(net.N)],
        "scheme": "SeedSequence(master_seed, spawn_key=(run_index, agent_key, purpose[, arm]))",
    }
    return RunResult(
        run_index=run_index,
        times=times,
        regret=regret,
        pulls=net.n.copy(),
        seeds=seeds,
        graph_fingerprint=config.graph.fingerprint(),
        policies=net.policies,
        invariants=checker.report if checker is not None else None,
        trace=trace,
        runtime=time.perf_counter() - start,
    )


@dataclass(eq=False)
class BatchResult:
    runs: list[RunResult]
    times: np.ndarray
    mean_by_agent: np.ndarray     # (len(times), N), mean over runs
    mean: np.ndarray              # (len(times),), then mean over agents
    std_final: float              # std over runs of the agent-averaged final regret

    @property
    def final_mean(self) -> float:
        return float(self.mean[-1])

    def final_by_agent(self) -> np.ndarray:
        return self.mean_by_agent[-1]


def _run_star(args):
    return run(*args)


def aggregate(results: Sequence[RunResult]) -> BatchResult:
    """Mean over runs, then over agents, in fixed index order."""
    results = sorted(results, key=lambda r: r.run_index)
    stack = np.stack([r.regret for r in results])       # (R, times, N)
    acc = np.zeros_like(stack[0])
    for r in stack:
        acc = acc + r
    by_agent = acc / len(results)
    mean = by_agent.mean(axis=1)
    per_run = stack[:, -1, :].mean(axis=1)
    std = float(per_run.std(ddof=1)) if len(results) > 1 else 0.0
    return BatchResult(list(results), results[0].times, by_agent, mean, std)


def run_batch(config: SimConfig, workers: int | None = 1, run_indices: Sequence[int] | None = None) -> BatchResult:
    """``config.runs`` runs (or the explicit ``run_indices``), aggregated in index order."""
    indices = list(range(config.runs)) if run_indices is None else list(run_indices)
    if not indices:
        raise ConfigError("run_batch needs at least one run")
    if workers is None:
        workers = os.cpu_count() or 1
    if workers > 1 and len(indices) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_star, [(config, i) for i in indices]))
    else:
        results = [run(config, i) for i in indices]
    return aggregate(results)
