"""Regret-bound calculators to overlay on simulated regret curves.

Coefficients are multipliers of log T. The KL-UCB finite-time constant is not
computed (it depends on an implicitly defined quantity); only its asymptotic
coefficient is reported.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .klcore import kl_div
from .rewards import gaps

__all__ = [
    "F2ScanError",
    "BoundConstants",
    "BoundReport",
    "asym_coeff_klucb",
    "asym_coeff_ucb1",
    "lower_bound_coeff",
    "f2",
    "f2_floor",
    "f2_conditions",
    "gamma",
    "bound_constants",
    "finite_bound_ucb1",
    "write_bound_csv",
    "BOUND_COLUMNS",
]

F2_SCAN_CAP = 10**6
F2_MIN_HORIZON = 10**4
_F2_CHUNK = 1 << 20
BOUND_COLUMNS = ("T", "bound_value", "policy", "agent_group")


class F2ScanError(RuntimeError):
    pass


def _suboptimal(mu) -> tuple[np.ndarray, np.ndarray]:
    mu = np.asarray(mu, dtype=float)
    if np.any((mu < 0.0) | (mu > 1.0)):
        raise ValueError("means must lie in [0, 1]")
    delta = gaps(mu)
    return mu, delta


def asym_coeff_klucb(mu, neighborhood: int = 1, varsigma: float = 0.01, single_agent: bool = False) -> np.ndarray:
    """Per-arm log T coefficient of the KL-UCB bound; zero for optimal arms.

    Decentralized: 3 (1 + varsigma) / (2 |N_i| d(mu_k; mu_1)). Single agent: 1 / d(mu_k; mu_1).
    """
    mu, delta = _suboptimal(mu)
    best = mu.max()
    if best >= 1.0 and np.any(delta > 0):
        raise ValueError("best mean of 1 makes d(mu_k; mu_1) infinite")
    out = np.zeros_like(mu)
    for k in np.flatnonzero(delta > 0):
        d = kl_div(mu[k], best)
        out[k] = 1.0 / d if single_agent else 3.0 * (1.0 + varsigma) / (2.0 * neighborhood * d)
    return out


def asym_coeff_ucb1(mu, neighborhood: int = 1, beta: float = 0.01, single_agent: bool = False) -> np.ndarray:
    """Per-arm log T coefficient of the UCB1 bound.

    Decentralized: 12 (1 + beta)^2 / (|N_i| Delta_k). Single agent: 8 / Delta_k.
    """
    _, delta = _suboptimal(mu)
    out = np.zeros_like(delta)
    pos = delta > 0
    if single_agent:
        out[pos] = 8.0 / delta[pos]
    else:
        out[pos] = 12.0 * (1.0 + beta) ** 2 / (neighborhood * delta[pos])
    return out


def lower_bound_coeff(mu, N: int) -> np.ndarray:
    """Delta_k / (N d(mu_k; mu_1)): the best any agent of an N-agent network can do."""
    mu, delta = _suboptimal(mu)
    best = mu.max()
    out = np.zeros_like(mu)
    for k in np.flatnonzero(delta > 0):
        out[k] = delta[k] / (N * kl_div(mu[k], best))
    return out


def f2_floor(N: int, M: int) -> int:
    return 2 * (M * M + 2 * M * N + N)


def f2_conditions(n_max: int, epsilon: float, rho2: float, N: int) -> np.ndarray:
    """Boolean array over n = 1..n_max: do both defining conditions of f hold at n?"""
    return next(_condition_chunks(epsilon, rho2, N, n_max))[1][:n_max]


def _condition_chunks(epsilon: float, rho2: float, N: int, chunk: int = _F2_CHUNK):
    """Yield (first_n, ok) blocks covering n = 1, 2, ... indefinitely."""
    state = np.zeros(1)
    start = 1
    log_inv = math.log(1.0 / rho2) if rho2 > 0.0 else math.inf
    while True:
        n = np.arange(start, start + chunk, dtype=float)
        u = np.zeros_like(n)
        pos = n > 1.0
        u[pos] = 1.0 / ((n[pos] - 1.0) * n[pos])
        # S(n) = rho S(n-1) + 1/((n-1) n), S(1) = 0
        s, state = lfilter([1.0], [1.0, -rho2], u, zi=state)
        first = (rho2 ** n + s) * n ** 1.5 <= epsilon / N
        second = 2.0 * np.log(n) / (n * log_inv) < 1.0
        yield start, first & second
        start += chunk


def f2(epsilon: float, rho2: float, N: int, M: int, cap: int = F2_SCAN_CAP) -> int:
    """max(f(epsilon), 2(M^2 + 2MN + N)), with f the smallest n past which both
    conditions keep holding.

    "Keep holding" is checked numerically up to max(10 * candidate, 10^4).
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if not 0.0 <= rho2 < 1.0:
        raise ValueError(f"rho2 must lie in [0, 1), got {rho2}")
    candidate = 1
    for start, ok in _condition_chunks(epsilon, rho2, N):
        fails = np.flatnonzero(~ok)
        if fails.size:
            candidate = start + int(fails[-1]) + 1
        if candidate > cap:
            raise F2ScanError(
                f"f(epsilon) exceeds the scan cap {cap} (epsilon={epsilon}, rho2={rho2}, N={N})")
        if start + ok.size - 1 >= max(10 * candidate, F2_MIN_HORIZON):
            return max(candidate, f2_floor(N, M))


def gamma(N: int, M: int, betas, rho2: float, cap: int = F2_SCAN_CAP) -> float:
    betas = np.broadcast_to(np.asarray(betas, dtype=float), (N,))
    cache: dict[float, int] = {}
    total = float(M * M + 2 * M * N + N)
    for b in betas:
        if b not in cache:
            cache[b] = f2(b, rho2, N, M, cap)
        total += math.pi ** 2 / 3.0 + 2.0 * cache[b] - 1.0
    return total


@dataclass(frozen=True)
class BoundConstants:
    rho2: float
    N: int
    M: int
    f2: int          # F2(beta) of the agent the bound is for
    gamma: float


def bound_constants(rho2: float, N: int, M: int, betas, agent: int = 0,
                    cap: int = F2_SCAN_CAP) -> BoundConstants:
    betas = np.broadcast_to(np.asarray(betas, dtype=float), (N,))
    return BoundConstants(rho2, N, M, f2(float(betas[agent]), rho2, N, M, cap),
                          gamma(N, M, betas, rho2, cap))


def finite_bound_ucb1(T: float, mu, neighborhood: int, beta: float, constants: BoundConstants,
                      *, log_T: float | None = None) -> float:
    """sum over suboptimal k of (max{12 (1+beta)^2 log T / (|N_i| Delta_k^2), 2 F2} + Gamma) Delta_k.

    ``log_T`` may be passed instead of ``T`` for horizons beyond float range.
    """
    if log_T is None:
        if T < 1:
            raise ValueError(f"T must be >= 1, got {T}")
        logt = math.log(T)
    else:
        if log_T < 0:
            raise ValueError(f"log T must be >= 0, got {log_T}")
        logt = float(log_T)
    _, delta = _suboptimal(mu)
    total = 0.0
    for d in delta[delta > 0]:
        pulls = max(12.0 * (1.0 + beta) ** 2 * logt / (neighborhood * d * d), 2.0 * constants.f2)
        total += (pulls + constants.gamma) * d
    return total


@dataclass
class BoundReport:
    policy: str
    params: dict
    coefficients: np.ndarray                 # per arm, multiplier of log T
    finite_bound: float | None = None        # UCB1 only
    horizon: int | None = None
    constants: BoundConstants | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def total_coefficient(self) -> float:
        return float(np.sum(self.coefficients))

    def as_dict(self) -> dict:
        return {
            "policy": self.policy,
            "params": self.params,
            "coefficients": [float(c) for c in self.coefficients],
            "total_coefficient": self.total_coefficient,
            "finite_bound": self.finite_bound,
            "T": self.horizon,
            "constants": None if self.constants is None else dict(self.constants.__dict__),
            "notes": list(self.notes),
        }


def write_bound_csv(rows, path) -> None:
    """rows: iterable of (T, bound_value, policy, agent_group)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BOUND_COLUMNS)
        for T, value, policy, group in rows:
            w.writerow([int(T), f"{float(value):.12g}", policy, group])
