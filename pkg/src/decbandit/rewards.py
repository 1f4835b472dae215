"""Arm reward models on [0, 1] with known means for regret accounting."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, stats

__all__ = [
    "ArmSpec",
    "ArmSet",
    "bernoulli",
    "truncated_normal",
    "truncated_normal_mean_targeted",
    "beta",
    "sample",
    "sample_many",
    "gaps",
    "parse_arm_spec",
    "RewardStream",
    "DEFAULT_SIGMA",
]

DEFAULT_SIGMA = 0.1
_QUAD_TOL = 1e-10
_TARGET_TOL = 1e-9


@dataclass(frozen=True)
class ArmSpec:
    """One arm. ``kind`` is ``bernoulli`` (a = mean), ``truncated_normal``
    (a = pre-truncation location, b = scale) or ``beta`` (a, b shape params)."""

    kind: str
    a: float
    b: float = 0.0

    def __post_init__(self):
        if self.kind == "bernoulli":
            if not 0.0 <= self.a <= 1.0:
                raise ValueError(f"bernoulli mean must lie in [0,1], got {self.a}")
        elif self.kind == "truncated_normal":
            if not self.b > 0.0:
                raise ValueError(f"truncated normal needs sigma > 0, got {self.b}")
        elif self.kind == "beta":
            if not (self.a > 0.0 and self.b > 0.0):
                raise ValueError(f"beta parameters must be positive, got ({self.a}, {self.b})")
        else:
            raise ValueError(f"unknown arm kind {self.kind!r}")

    @property
    def mean(self) -> float:
        return _mean(self)

    def label(self) -> str:
        if self.kind == "bernoulli":
            return f"bern({self.a:g})"
        if self.kind == "truncated_normal":
            return f"tnorm({self.a:.12g},{self.b:g})"
        return f"beta({self.a:g},{self.b:g})"


def bernoulli(mu: float) -> ArmSpec:
    return ArmSpec("bernoulli", float(mu))


def truncated_normal(mu_raw: float, sigma: float = DEFAULT_SIGMA) -> ArmSpec:
    return ArmSpec("truncated_normal", float(mu_raw), float(sigma))


def beta(a: float, b: float) -> ArmSpec:
    return ArmSpec("beta", float(a), float(b))


def _tnorm_mean_quad(mu_raw: float, sigma: float) -> float:
    dist = stats.norm(mu_raw, sigma)
    mass = dist.cdf(1.0) - dist.cdf(0.0)
    if mass <= 0.0:
        raise ValueError(f"normal({mu_raw}, {sigma}) puts no mass on [0,1]")
    scale = 1.0 / (sigma * math.sqrt(2.0 * math.pi))

    def integrand(x):
        u = (x - mu_raw) / sigma
        return x * scale * math.exp(-0.5 * u * u)

    num, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=_QUAD_TOL, epsrel=0.0)
    return num / mass


_mean_cache: dict[ArmSpec, float] = {}


def _mean(spec: ArmSpec) -> float:
    if spec.kind == "bernoulli":
        return spec.a
    if spec.kind == "beta":
        return spec.a / (spec.a + spec.b)
    if spec not in _mean_cache:
        _mean_cache[spec] = _tnorm_mean_quad(spec.a, spec.b)
    return _mean_cache[spec]


@lru_cache(maxsize=256)
def truncated_normal_mean_targeted(mu: float, sigma: float = DEFAULT_SIGMA) -> ArmSpec:
    """Truncated normal whose mean *after* truncation to [0,1] equals ``mu``.

    The pre-truncation location is found by bisection; the truncated mean is
    increasing in the location parameter.
    """
    if not 0.0 < mu < 1.0:
        raise ValueError(f"targeted mean must lie strictly inside (0,1), got {mu}")
    # walk outward in sigma steps; far jumps would leave no mass on [0,1]
    lo = hi = mu
    for _ in range(200):
        if _tnorm_mean_quad(lo, sigma) <= mu:
            break
        lo -= sigma
    for _ in range(200):
        if _tnorm_mean_quad(hi, sigma) >= mu:
            break
        hi += sigma
    if not _tnorm_mean_quad(lo, sigma) <= mu <= _tnorm_mean_quad(hi, sigma):
        raise ValueError(f"cannot place a truncated normal with sigma={sigma} at mean {mu}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _tnorm_mean_quad(mid, sigma) < mu:
            lo = mid
        else:
            hi = mid
        if hi - lo <= _TARGET_TOL:
            break
    return truncated_normal(0.5 * (lo + hi), sigma)


def sample_many(spec: ArmSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` i.i.d. rewards; the sequence is a deterministic function of the stream."""
    if spec.kind == "bernoulli":
        return (rng.random(size) < spec.a).astype(np.float64)
    if spec.kind == "beta":
        return rng.beta(spec.a, spec.b, size)
    out = np.empty(size)
    filled = 0
    while filled < size:
        draw = rng.normal(spec.a, spec.b, max(2 * (size - filled), 16))
        keep = draw[(draw >= 0.0) & (draw <= 1.0)]
        take = min(keep.size, size - filled)
        out[filled:filled + take] = keep[:take]
        filled += take
    return out


def sample(spec: ArmSpec, rng: np.random.Generator) -> float:
    return float(sample_many(spec, rng, 1)[0])


class RewardStream:
    """Buffered reward sequence for one (run, agent, arm).

    Rewards are produced in fixed-size blocks so the k-th reward depends only on
    the stream seed, never on how many other arms were pulled.
    """

    __slots__ = ("spec", "rng", "block", "_buf", "_pos")

    def __init__(self, spec: ArmSpec, seed, block: int = 256):
        self.spec = spec
        self.rng = np.random.default_rng(seed)
        self.block = block
        self._buf = np.empty(0)
        self._pos = 0

    def next(self) -> float:
        if self._pos >= self._buf.size:
            self._buf = sample_many(self.spec, self.rng, self.block)
            self._pos = 0
        x = self._buf[self._pos]
        self._pos += 1
        return float(x)


@dataclass(frozen=True)
class ArmSet:
    arms: tuple[ArmSpec, ...]

    def __post_init__(self):
        if len(self.arms) < 1:
            raise ValueError("an arm set needs at least one arm")
        object.__setattr__(self, "arms", tuple(self.arms))

    def __len__(self) -> int:
        return len(self.arms)

    @property
    def mu(self) -> np.ndarray:
        return np.array([a.mean for a in self.arms])

    @property
    def delta(self) -> np.ndarray:
        return gaps(self.mu)


def gaps(mu) -> np.ndarray:
    """Suboptimality gaps; arms need not be sorted."""
    if isinstance(mu, ArmSet):
        mu = mu.mu
    mu = np.asarray(mu, dtype=float)
    if mu.size == 0:
        raise ValueError("gaps of an empty arm set")
    return mu.max() - mu


_ARM = re.compile(r"^\s*(bern|tnorm|tnorm_mean|beta)\s*\(\s*([^)]*)\)\s*$")


def parse_arm_spec(text: str) -> ArmSpec:
    """``bern(0.6)``, ``tnorm(0.6,0.1)``, ``tnorm_mean(0.6,0.1)``, ``beta(2,3)``.

    The sigma of the ``tnorm`` forms defaults to 0.1 when omitted.
    """
    if not isinstance(text, str):
        raise ValueError(f"arm spec must be a string, got {text!r}")
    m = _ARM.match(text)
    if not m:
        raise ValueError(f"unknown arm spec {text!r}")
    kind = m.group(1)
    try:
        args = [float(a) for a in m.group(2).split(",") if a.strip()]
    except ValueError:
        raise ValueError(f"non-numeric argument in arm spec {text!r}") from None
    if any(not math.isfinite(a) for a in args):
        raise ValueError(f"non-finite argument in arm spec {text!r}")
    expected = {"bern": (1,), "tnorm": (1, 2), "tnorm_mean": (1, 2), "beta": (2,)}[kind]
    if len(args) not in expected:
        raise ValueError(f"arm spec {text!r} takes {' or '.join(map(str, expected))} argument(s)")
    if kind == "bern":
        return bernoulli(args[0])
    if kind == "beta":
        return beta(*args)
    sigma = args[1] if len(args) == 2 else DEFAULT_SIGMA
    if kind == "tnorm":
        return truncated_normal(args[0], sigma)
    return truncated_normal_mean_targeted(args[0], sigma)
