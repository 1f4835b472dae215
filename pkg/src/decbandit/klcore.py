"""Bernoulli KL divergence, its upper-confidence inversion, and the exploration
terms of the four policies.

All functions broadcast over numpy arrays. Every element goes through the same
fixed sequence of IEEE operations regardless of array shape, so the per-agent
reference path and the vectorized engine agree bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

__all__ = [
    "ConfidenceParams",
    "kl_div",
    "kl_ucb_solve",
    "kl_budget",
    "ucb1_bonus",
    "clamped_logs",
    "SOLVE_TOL",
    "SOLVE_MAX_ITER",
]

SOLVE_TOL = 1e-9
SOLVE_MAX_ITER = 100
# the bracket [z, 1] has width <= 1, so this many halvings reach SOLVE_TOL
_SOLVE_STEPS = min(SOLVE_MAX_ITER, math.ceil(math.log2(1.0 / SOLVE_TOL)))


@dataclass(frozen=True)
class ConfidenceParams:
    varsigma: float = 0.01
    beta: float = 0.01
    neighborhood_size: int = 1

    def __post_init__(self):
        if self.varsigma < 0 or self.beta < 0:
            raise ValueError("exploration constants must be nonnegative")
        if int(self.neighborhood_size) != self.neighborhood_size or self.neighborhood_size < 1:
            raise ValueError(f"neighborhood_size must be an integer >= 1, got {self.neighborhood_size}")


def _scalar_out(x, *inputs):
    if all(np.ndim(v) == 0 for v in inputs):
        return float(x)
    return x


def kl_div(p, q):
    """d(p;q) = p log(p/q) + (1-p) log((1-p)/(1-q)), with 0 log 0 = 0."""
    p_arr = np.asarray(p, dtype=float)
    q_arr = np.asarray(q, dtype=float)
    if np.any(~((p_arr >= 0.0) & (p_arr <= 1.0))) or np.any(~((q_arr >= 0.0) & (q_arr <= 1.0))):
        raise ValueError("kl_div arguments must lie in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        d = (xlogy(p_arr, p_arr) + xlogy(1.0 - p_arr, 1.0 - p_arr)) \
            - xlogy(p_arr, q_arr) - xlogy(1.0 - p_arr, 1.0 - q_arr)
    d = np.maximum(d, 0.0)
    return _scalar_out(d, p, q)


def kl_ucb_solve(z, n, budget):
    """Largest q in [z, 1] with n * d(z; q) <= budget, by bisection.

    Always runs the same number of halvings so the result for one element does
    not depend on the other elements of a batch.
    """
    z_arr = np.asarray(z, dtype=float)
    n_arr = np.asarray(n, dtype=float)
    b_arr = np.asarray(budget, dtype=float)
    if np.any(~((z_arr >= 0.0) & (z_arr <= 1.0))):
        raise ValueError("kl_ucb_solve needs z in [0, 1]; clamp first")
    if np.any(n_arr < 1):
        raise ValueError("kl_ucb_solve needs n >= 1")
    if np.any(b_arr < 0):
        raise ValueError("kl_ucb_solve needs a nonnegative budget")
    shape = np.broadcast_shapes(z_arr.shape, n_arr.shape, b_arr.shape)
    z_arr, n_arr, b_arr = (np.ascontiguousarray(np.broadcast_to(a, shape)) for a in (z_arr, n_arr, b_arr))
    comp = 1.0 - z_arr
    neg_entropy = xlogy(z_arr, z_arr) + xlogy(comp, comp)
    lo = z_arr.copy()
    # halving the bracket width is exact, so lo + half stays the midpoint
    half = 0.5 * comp
    with np.errstate(divide="ignore", invalid="ignore"):
        for _ in range(_SOLVE_STEPS):
            mid = lo + half
            d = neg_entropy - xlogy(z_arr, mid) - xlogy(comp, 1.0 - mid)
            lo = lo + (n_arr * d <= b_arr) * half
            half = 0.5 * half
    out = np.where(z_arr >= 1.0, 1.0, np.where(b_arr == 0.0, z_arr, lo)).reshape(shape)
    return _scalar_out(out, z, n, budget)


def clamped_logs(t: float) -> tuple[float, float]:
    """(max(log t, 0), max(log log t, 0)); both vanish for t <= e."""
    if t <= 1.0:
        return 0.0, 0.0
    l1 = math.log(t)
    l2 = math.log(l1) if l1 > 1.0 else 0.0
    return l1, max(l2, 0.0)


def kl_budget(t: float, params: ConfidenceParams | None = None, single_agent: bool = False,
              *, varsigma=None, neighborhood_size=None):
    """Exploration budget Q(t) of the KL-UCB index.

    Decentralized: 3 (1 + varsigma) (log t + 3 log log t) / (2 |N_i|).
    Single agent: log t + 3 log log t.
    ``varsigma`` and ``neighborhood_size`` may be given as arrays instead of
    ``params`` to evaluate a whole network at once.
    """
    l1, l2 = clamped_logs(t)
    base = l1 + 3.0 * l2
    if single_agent:
        return base
    if params is not None:
        varsigma, neighborhood_size = params.varsigma, params.neighborhood_size
    v = np.asarray(varsigma, dtype=float)
    size = np.asarray(neighborhood_size, dtype=float)
    out = 3.0 * (1.0 + v) * base / (2.0 * size)
    return _scalar_out(out, varsigma, neighborhood_size)


def ucb1_bonus(t: float, n, params: ConfidenceParams | None = None, single_agent: bool = False,
               *, beta=None, neighborhood_size=None):
    """Additive UCB1 bonus.

    Decentralized: (1 + beta) sqrt(3 log t / (|N_i| n)). Single agent: sqrt(2 log t / n).
    """
    n_arr = np.asarray(n, dtype=float)
    if np.any(n_arr < 1):
        raise ValueError("ucb1_bonus needs n >= 1")
    l1, _ = clamped_logs(t)
    if single_agent:
        out = np.sqrt(2.0 * l1 / n_arr)
        return _scalar_out(out, n)
    if params is not None:
        beta, neighborhood_size = params.beta, params.neighborhood_size
    beta_arr = np.asarray(beta, dtype=float)
    size_arr = np.asarray(neighborhood_size, dtype=float)
    out = (1.0 + beta_arr) * np.sqrt(3.0 * l1 / (size_arr * n_arr))
    return _scalar_out(out, n, beta, neighborhood_size)
