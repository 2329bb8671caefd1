"""Beta-Bernoulli estimate of each client's probability of sending good updates.

A client starts from a ``Beta(alpha0, beta0)`` prior. Every round in which it
participates, the aggregation rule labels its update good or bad and the
matching counter is incremented, so the posterior is
``Beta(alpha0 + n_good, beta0 + n_bad)``. A client is blocked permanently
once the posterior mass below 0.5 exceeds ``delta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

DEFAULT_ALPHA0 = 3.0
DEFAULT_BETA0 = 3.0
DEFAULT_DELTA = 0.95

_CF_MAX_ITER = 500
_CF_EPS = 1e-16
_CF_TINY = 1e-300


@dataclass(frozen=True)
class ClientQualityState:
    alpha0: float = DEFAULT_ALPHA0
    beta0: float = DEFAULT_BETA0
    n_good: int = 0
    n_bad: int = 0
    blocked: bool = False

    def __post_init__(self):
        if not (self.alpha0 > 1 and self.beta0 > 1):
            raise ValueError("alpha0 and beta0 must both be > 1")
        if self.n_good < 0 or self.n_bad < 0:
            raise ValueError("observation counts must be nonnegative")

    @property
    def alpha(self) -> float:
        return self.alpha0 + self.n_good

    @property
    def beta(self) -> float:
        return self.beta0 + self.n_bad


class BlockedClientError(RuntimeError):
    """Raised when a blocked client's posterior would be updated."""


def posterior_update(state: ClientQualityState, good: bool) -> ClientQualityState:
    if state.blocked:
        raise BlockedClientError("blocked clients receive no posterior updates")
    if good:
        return replace(state, n_good=state.n_good + 1)
    return replace(state, n_bad=state.n_bad + 1)


def good_probability(state: ClientQualityState) -> float:
    """Posterior mean ``alpha / (alpha + beta)``."""
    return state.alpha / (state.alpha + state.beta)


def block(state: ClientQualityState) -> ClientQualityState:
    return replace(state, blocked=True)


def _betacf(x: float, a: float, b: float) -> float:
    # Modified Lentz evaluation of the continued fraction for I_x(a, b).
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (x={x}, a={a}, b={b})")


def beta_cdf(x: float, alpha: float, beta: float) -> float:
    """Regularized incomplete beta function ``I_x(alpha, beta)``.

    The continued fraction converges quickly for ``x < (a + 1) / (a + b + 2)``;
    on the other side the symmetry ``I_x(a, b) = 1 - I_{1-x}(b, a)`` is used.
    """
    if not (alpha > 0 and beta > 0):
        raise ValueError(f"beta_cdf needs alpha > 0 and beta > 0, got {alpha}, {beta}")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"beta_cdf needs x in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    log_front = (
        math.lgamma(alpha + beta) - math.lgamma(alpha) - math.lgamma(beta)
        + alpha * math.log(x) + beta * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (alpha + 1.0) / (alpha + beta + 2.0):
        val = front * _betacf(x, alpha, beta) / alpha
    else:
        val = 1.0 - front * _betacf(1.0 - x, beta, alpha) / beta
    return min(1.0, max(0.0, val))


def should_block(state: ClientQualityState, delta: float = DEFAULT_DELTA) -> bool:
    """True when ``P(quality <= 0.5)`` under the posterior strictly exceeds ``delta``."""
    return beta_cdf(0.5, state.alpha, state.beta) > delta
