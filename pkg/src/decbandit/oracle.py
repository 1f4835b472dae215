"""Exact coefficient tracking of the consensus estimates.

Every z_{i,k}(t) is a fixed linear combination of the raw rewards X_{j,k}(tau)
drawn so far. ``track`` rebuilds those coefficients from a run trace by
propagating them through the same recursions the agents use;
``closed_form_coefficients`` gets them a second way, from matrix powers of W.
The two are independent and are cross-checked against each other.
"""
from __future__ import annotations

import csv
from collections.abc import Iterator
from dataclasses import dataclass, field

import numpy as np

from .engine import CheckStat, RunTrace

__all__ = [
    "OracleGuardError",
    "CoefficientLedger",
    "LedgerState",
    "ConcentrationReport",
    "track",
    "reconstruct_z",
    "closed_form_coefficients",
    "check_reconstruction",
    "check_concentration",
    "write_ledger_csv",
    "GUARD_MAX_AGENTS",
    "GUARD_MAX_HORIZON",
]

GUARD_MAX_AGENTS = 16
GUARD_MAX_HORIZON = 2000
# above this many stored coefficients the ledger is rebuilt on demand instead
HISTORY_BUDGET = 5_000_000


class OracleGuardError(ValueError):
    pass


@dataclass(eq=False)
class LedgerState:
    """Coefficients at one time t. ``coeffs[k]`` is (N, S_k) over the first
    S_k samples of arm k; ``counts`` is n_{j,k}(t)."""

    t: int
    coeffs: list[np.ndarray]
    counts: np.ndarray


@dataclass(eq=False)
class CoefficientLedger:
    trace: RunTrace
    # per arm: owner agent, pull time and value of every sample, in draw order
    owner: list[np.ndarray]
    time: list[np.ndarray]
    value: list[np.ndarray]
    history: list[LedgerState] | None = None

    @property
    def agent_count(self) -> int:
        return self.trace.weights.shape[0]

    @property
    def arm_count(self) -> int:
        return self.trace.initial_rewards.shape[1]

    @property
    def horizon(self) -> int:
        return self.trace.choices.shape[0]

    def states(self) -> Iterator[LedgerState]:
        if self.history is not None:
            yield from self.history
        else:
            yield from _propagate(self)

    def state_at(self, t: int) -> LedgerState:
        if not 0 <= t <= self.horizon:
            raise IndexError(f"t={t} outside 0..{self.horizon}")
        if self.history is not None:
            return self.history[t]
        for s in _propagate(self):
            if s.t == t:
                return s
        raise AssertionError("unreachable")

    def rows(self, run_index: int = 0) -> Iterator[tuple]:
        """Flat (run, t, i, k, j, tau, c) rows with zero coefficients pruned."""
        for s in self.states():
            for k, c in enumerate(s.coeffs):
                owners, times = self.owner[k], self.time[k]
                for i, col in zip(*np.nonzero(c)):
                    yield (run_index, s.t, int(i), k, int(owners[col]), int(times[col]), float(c[i, col]))


def _sample_tables(trace: RunTrace):
    N, M = trace.initial_rewards.shape
    T = trace.choices.shape[0]
    owner = [[j for j in range(N)] for _ in range(M)]
    when = [[0] * N for _ in range(M)]
    value = [list(trace.initial_rewards[:, k]) for k in range(M)]
    for t in range(T):
        for j in range(N):
            k = int(trace.choices[t, j])
            owner[k].append(j)
            when[k].append(t + 1)
            value[k].append(float(trace.rewards[t, j]))
    return ([np.array(o, dtype=np.int64) for o in owner],
            [np.array(w, dtype=np.int64) for w in when],
            [np.array(v) for v in value])


def _xbar_coeffs(owner: np.ndarray, size: int, counts: np.ndarray, N: int) -> np.ndarray:
    """Coefficient matrix of the sample means over the first ``size`` samples."""
    b = np.zeros((N, size))
    cols = np.arange(size)
    b[owner[:size], cols] = 1.0 / counts[owner[:size]]
    return b


def _propagate(ledger: CoefficientLedger) -> Iterator[LedgerState]:
    trace = ledger.trace
    W = trace.weights
    N, M = trace.initial_rewards.shape
    counts = np.ones((N, M), dtype=np.int64)
    sizes = [N] * M
    coeffs = [np.eye(N) for _ in range(M)]
    xbar = [np.eye(N) for _ in range(M)]
    yield LedgerState(0, [c.copy() for c in coeffs], counts.copy())
    for t in range(ledger.horizon):
        pulled = np.bincount(trace.choices[t], minlength=M)
        counts = counts.copy()
        counts[np.arange(N), trace.choices[t]] += 1
        for k in range(M):
            new_size = sizes[k] + int(pulled[k])
            old = np.zeros((N, new_size))
            old[:, :sizes[k]] = coeffs[k]
            prev_x = np.zeros((N, new_size))
            prev_x[:, :sizes[k]] = xbar[k]
            cur_x = _xbar_coeffs(ledger.owner[k], new_size, counts[:, k], N)
            coeffs[k] = W @ old + (cur_x - prev_x)
            xbar[k] = cur_x
            sizes[k] = new_size
        yield LedgerState(t + 1, [c.copy() for c in coeffs], counts.copy())


def track(trace: RunTrace, keep_history: bool | None = None, override_guard: bool = False) -> CoefficientLedger:
    """Build the coefficient ledger of a traced run."""
    if trace is None:
        raise ValueError("run was not traced; enable oracle_tracking")
    N, M = trace.initial_rewards.shape
    T = trace.choices.shape[0]
    if trace.rewards.shape != (T, N) or trace.z.shape != (T + 1, N, M):
        raise ValueError("inconsistent trace shapes")
    if not override_guard and (N > GUARD_MAX_AGENTS or T > GUARD_MAX_HORIZON):
        raise OracleGuardError(
            f"coefficient oracle limited to N <= {GUARD_MAX_AGENTS}, T <= {GUARD_MAX_HORIZON} "
            f"(got N={N}, T={T}); pass override_guard to force")
    owner, when, value = _sample_tables(trace)
    ledger = CoefficientLedger(trace, owner, when, value)
    if keep_history is None:
        # sum over t of N * (samples so far), per arm
        keep_history = N * N * (T + 1) * (T + 2) // 2 <= HISTORY_BUDGET
    if keep_history:
        ledger.history = list(_propagate(ledger))
    return ledger


def reconstruct_z(ledger: CoefficientLedger, i: int, k: int, t: int) -> float:
    c = ledger.state_at(t).coeffs[k][i]
    return float(c @ ledger.value[k][:c.size])


def closed_form_coefficients(ledger: CoefficientLedger, k: int, t: int) -> np.ndarray:
    """Dense (N, N, t+1) table c[i, j, tau] from matrix powers of W.

    Uses z(t) = sum_{s<t} (W^{t-s} - W^{t-s-1}) xbar(s) + xbar(t) with each
    sample mean expanded over the rewards it averages; entries for (j, tau)
    where j did not pull k at tau come out as exact zeros.
    """
    trace = ledger.trace
    W = trace.weights
    N = W.shape[0]
    pulled = np.zeros((N, t + 1), dtype=bool)
    pulled[:, 0] = True
    for s in range(t):
        pulled[trace.choices[s] == k, s + 1] = True
    counts = np.cumsum(pulled, axis=1)          # n_{j,k}(s)
    powers = [np.eye(N)]
    for _ in range(t):
        powers.append(powers[-1] @ W)
    # weight on xbar_j(s) in z_i(t), for every i
    a = np.empty((t + 1, N, N))
    for s in range(t):
        a[s] = powers[t - s] - powers[t - s - 1]
    a[t] = powers[0]
    g = a / counts.T[:, None, :]                # g[s, i, j] = a[s, i, j] / n_j(s)
    tail = np.cumsum(g[::-1], axis=0)[::-1]     # tail[s'] = sum_{s >= s'} g[s]
    c = np.transpose(tail, (1, 2, 0)) * pulled[None, :, :]
    return c


@dataclass
class ConcentrationReport:
    epsilon: float
    f2: float
    scope: str
    stat: CheckStat = field(default_factory=CheckStat)
    worst: tuple | None = None     # (i, k, j, tau, t, deviation, bound)
    # largest t - tau among violating entries; -1 when there are none
    oldest_violation_age: int = -1

    @property
    def passed(self) -> bool:
        return self.stat.passed

    def as_dict(self) -> dict:
        d = self.stat.as_dict()
        d.update(epsilon=self.epsilon, f2=self.f2, scope=self.scope, worst=self.worst,
                 oldest_violation_age=self.oldest_violation_age)
        return d


def check_concentration(ledger: CoefficientLedger, epsilon: float, f2: float, scope: str = "all") -> ConcentrationReport:
    """Scan |c_{i,k,j}^{(tau)}(t) - 1/(N n_{j,k}(t))| <= (eps/N) n_{j,k}(t)^{-3/2}
    over every entry whose source agent has n_{j,k}(t) >= f2.

    ``scope="all"`` checks every sample; ``scope="initial"`` only tau = 0.
    """
    if scope not in ("all", "initial"):
        raise ValueError(f"scope must be 'all' or 'initial', got {scope!r}")
    N = ledger.agent_count
    rep = ConcentrationReport(epsilon, f2, scope)
    worst_margin = np.inf
    for s in ledger.states():
        for k, c in enumerate(s.coeffs):
            owners = ledger.owner[k][:c.shape[1]]
            times = ledger.time[k][:c.shape[1]]
            for j in np.flatnonzero(s.counts[:, k] >= f2):
                n = float(s.counts[j, k])
                cols = np.flatnonzero((owners == j) & ((times == 0) if scope == "initial" else True))
                dev = np.abs(c[:, cols] - 1.0 / (N * n))
                bound = (epsilon / N) * n ** -1.5
                margins = bound - dev
                rep.stat.record(margins.ravel(), lambda: f"t={s.t} k={k} j={j}")
                bad = np.any(margins < 0, axis=0)
                if bad.any():
                    age = s.t - int(times[cols[bad]].min())
                    rep.oldest_violation_age = max(rep.oldest_violation_age, age)
                low = margins.min()
                if low < worst_margin:
                    worst_margin = low
                    i, col = np.unravel_index(np.argmin(margins), margins.shape)
                    rep.worst = (int(i), k, int(j), int(times[cols[col]]), s.t, float(dev[i, col]), float(bound))
    return rep


@dataclass
class ReconstructionReport:
    max_abs_error: float = 0.0
    max_sum_error: float = 0.0
    max_closed_form_gap: float = float("nan")
    closed_form_zero_case: bool = True
    entries: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def check_reconstruction(ledger: CoefficientLedger, closed_form_every: int = 1) -> ReconstructionReport:
    """Compare sum c * X against the engine's z, coefficient sums against 1,
    and (every ``closed_form_every`` steps; 0 disables) the propagated
    coefficients against the closed form."""
    rep = ReconstructionReport()
    z = ledger.trace.z
    gaps = []
    for s in ledger.states():
        for k, c in enumerate(s.coeffs):
            x = ledger.value[k][:c.shape[1]]
            rep.max_abs_error = max(rep.max_abs_error, float(np.max(np.abs(c @ x - z[s.t, :, k]))))
            rep.max_sum_error = max(rep.max_sum_error, float(np.max(np.abs(c.sum(axis=1) - 1.0))))
            rep.entries += c.shape[0]
            if closed_form_every and s.t % closed_form_every == 0:
                dense = closed_form_coefficients(ledger, k, s.t)
                owners = ledger.owner[k][:c.shape[1]]
                times = ledger.time[k][:c.shape[1]]
                picked = dense[:, owners, times]
                gaps.append(float(np.max(np.abs(picked - c))))
                mask = np.ones(dense.shape[1:], dtype=bool)
                mask[owners, times] = False
                if np.any(dense[:, mask] != 0.0):
                    rep.closed_form_zero_case = False
    if gaps:
        rep.max_closed_form_gap = max(gaps)
    return rep


def write_ledger_csv(ledger: CoefficientLedger, path, run_index: int = 0) -> int:
    count = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "t", "i", "k", "j", "tau", "c"])
        for row in ledger.rows(run_index):
            w.writerow(row[:-1] + (f"{row[-1]:.12g}",))
            count += 1
    return count
