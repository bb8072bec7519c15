"""Joint samplers of pairs (X, Y) with prescribed marginals.

Four constructions:

* ``eta_coupling`` -- rejection scheme driven by density ratios, maximal for
  ``eta = 1``; smaller ``eta`` trades meeting probability for a uniformly
  bounded cost variance.
* ``mixture_maximal_coupling`` -- maximal coupling of two univariate Normals
  through the explicit overlap/residual mixture; the overlap mass comes from
  Normal CDFs, the overlap and residual draws use rejection.
* ``reflection_maximal_coupling`` -- maximal coupling of two Normals with a
  common scale, reflecting across the hyperplane bisecting the means when
  the proposal is not shared; no rejection loop, deterministic cost.
* ``crn_quantile_coupling`` -- common-random-numbers coupling through shared
  quantiles; maximizes Cov(X, Y) for univariate laws.

Density ratios are always evaluated as differences of log densities.  When a
construction decides that X and Y coincide, ``y`` is set to ``x``'s value by
assignment rather than recomputed, so the ``identical`` flag is exact and
downstream meeting detection never compares floats.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import math

import numpy as np
from scipy.special import ndtr

from .rng import standard_normal, uniform
from .targets import _normal_crossings

__all__ = [
    "CoupledDraw",
    "DensityHandle",
    "RejectionCapError",
    "eta_coupling",
    "mixture_maximal_coupling",
    "reflection_maximal_coupling",
    "crn_quantile_coupling",
    "normal_overlap",
]

Point = Union[float, np.ndarray]


class RejectionCapError(RuntimeError):
    """A rejection loop exceeded its iteration cap."""

    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (attempts={attempts})")
        self.attempts = attempts


@dataclass(frozen=True)
class CoupledDraw:
    """One draw from a coupling; ``identical`` implies bitwise equal states."""

    x: Point
    y: Point
    identical: bool


@dataclass(frozen=True)
class DensityHandle:
    """A distribution accessed through its log density and a sampler."""

    log_density: Callable[[Point], float]
    sampler: Callable[[np.random.Generator], Point]


def eta_coupling(
    p: DensityHandle,
    q: DensityHandle,
    eta: float,
    stream: np.random.Generator,
    max_iter: int = 10**6,
) -> CoupledDraw:
    """Couple p and q with meeting probability eta * (1 - TV) scaled to eta.

    With ``eta = 1`` the probability of X = Y is maximal, 1 - |p - q|_TV.
    The residual branch redraws from q until the draw is accepted; the loop
    count is capped and reported because its variance is unbounded as eta
    approaches 1 for nearby distributions.
    """
    if not (0.0 < eta <= 1.0):
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    log_eta = math.log(eta)

    x = p.sampler(stream)
    logw = math.log(uniform(stream))
    if logw <= min(log_eta, q.log_density(x) - p.log_density(x)):
        return CoupledDraw(x=x, y=x, identical=True)

    for attempt in range(1, max_iter + 1):
        y = q.sampler(stream)
        logw_star = math.log(uniform(stream))
        if logw_star > log_eta + p.log_density(y) - q.log_density(y):
            return CoupledDraw(x=x, y=y, identical=False)
    raise RejectionCapError("eta_coupling residual rejection loop hit the cap", attempts=max_iter)


def normal_overlap(m1: float, s1: float, m2: float, s2: float) -> float:
    """Overlap mass ``integral of min(p, q)`` for two univariate Normals, from CDFs."""
    if s1 <= 0.0 or s2 <= 0.0:
        raise ValueError("standard deviations must be positive")
    if m1 == m2 and s1 == s2:
        return 1.0

    def cdf1(v):
        return ndtr((v - m1) / s1) if np.isfinite(v) else (1.0 if v > 0 else 0.0)

    def cdf2(v):
        return ndtr((v - m2) / s2) if np.isfinite(v) else (1.0 if v > 0 else 0.0)

    def logpdf1(v):
        return -0.5 * ((v - m1) / s1) ** 2 - math.log(s1)

    def logpdf2(v):
        return -0.5 * ((v - m2) / s2) ** 2 - math.log(s2)

    cuts = _normal_crossings(m1, s1, m2, s2)
    edges = [-np.inf, *cuts, np.inf]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = _finite_midpoint(lo, hi)
        if logpdf1(mid) <= logpdf2(mid):
            total += cdf1(hi) - cdf1(lo)
        else:
            total += cdf2(hi) - cdf2(lo)
    return min(1.0, max(0.0, total))


def _finite_midpoint(lo, hi):
    if np.isinf(lo) and np.isinf(hi):
        return 0.0
    if np.isinf(lo):
        return hi - 1.0
    if np.isinf(hi):
        return lo + 1.0
    return 0.5 * (lo + hi)


def mixture_maximal_coupling(
    p: tuple[float, float],
    q: tuple[float, float],
    stream: np.random.Generator,
    max_iter: int = 10**6,
) -> CoupledDraw:
    """Maximal coupling of two univariate Normals via the overlap mixture.

    ``p`` and ``q`` are (mean, sd) pairs.  With probability equal to the
    overlap mass the draw is shared; otherwise X and Y come independently
    from the residual parts, sampled by rejection from p and q.  Identical
    inputs short-circuit to a shared draw (the residuals are undefined).
    """
    (m1, s1), (m2, s2) = (float(p[0]), float(p[1])), (float(q[0]), float(q[1]))
    if s1 <= 0.0 or s2 <= 0.0:
        raise ValueError("standard deviations must be positive")
    if (m1, s1) == (m2, s2):
        x = m1 + s1 * standard_normal(stream)
        return CoupledDraw(x=x, y=x, identical=True)

    logp = lambda v: -0.5 * ((v - m1) / s1) ** 2 - math.log(s1)
    logq = lambda v: -0.5 * ((v - m2) / s2) ** 2 - math.log(s2)

    c = normal_overlap(m1, s1, m2, s2)
    if uniform(stream) <= c:
        # overlap component min(p,q)/c: propose from p, accept w.p. min(1, q/p)
        for _ in range(max_iter):
            x = m1 + s1 * standard_normal(stream)
            if math.log(uniform(stream)) <= min(0.0, logq(x) - logp(x)):
                return CoupledDraw(x=x, y=x, identical=True)
        raise RejectionCapError("overlap rejection loop hit the cap", attempts=max_iter)

    x = _residual_draw(m1, s1, logp, logq, stream, max_iter)  # from (p - min(p,q))/(1-c)
    y = _residual_draw(m2, s2, logq, logp, stream, max_iter)  # from (q - min(p,q))/(1-c)
    return CoupledDraw(x=x, y=y, identical=False)


def _residual_draw(m, s, log_own, log_other, stream, max_iter):
    # propose from own law, accept w.p. 1 - min(1, other/own)
    for _ in range(max_iter):
        v = m + s * standard_normal(stream)
        if math.log(uniform(stream)) > min(0.0, log_other(v) - log_own(v)):
            return v
    raise RejectionCapError("residual rejection loop hit the cap", attempts=max_iter)


def reflection_maximal_coupling(
    mu1: np.ndarray,
    mu2: np.ndarray,
    sigma,
    stream: np.random.Generator,
) -> CoupledDraw:
    """Maximal coupling of Normal(mu1, diag(sigma^2)) and Normal(mu2, diag(sigma^2)).

    On shared draws Y equals X by construction; otherwise the standardized
    X draw is reflected across the hyperplane bisecting the standardized
    means.  The cost is deterministic: one Normal vector and one uniform.
    """
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=float))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=float))
    sigma_arr = np.broadcast_to(np.asarray(sigma, dtype=float), mu1.shape)
    if np.any(sigma_arr <= 0.0):
        raise ValueError("sigma must be componentwise positive")

    delta = (mu1 - mu2) / sigma_arr
    xstd = np.asarray(standard_normal(stream, mu1.shape[0]), dtype=float)
    if not np.any(delta):
        x = mu1 + sigma_arr * xstd
        return CoupledDraw(x=x, y=x, identical=True)

    logu = math.log(uniform(stream))
    log_ratio = -0.5 * float(np.dot(xstd + delta, xstd + delta)) + 0.5 * float(np.dot(xstd, xstd))
    x = mu1 + sigma_arr * xstd
    if logu <= log_ratio:
        return CoupledDraw(x=x, y=x, identical=True)
    e = delta / math.sqrt(float(np.dot(delta, delta)))
    ystd = xstd - 2.0 * float(np.dot(e, xstd)) * e
    y = mu2 + sigma_arr * ystd
    return CoupledDraw(x=x, y=y, identical=False)


def crn_quantile_coupling(
    qf_p: Callable[[float], float],
    qf_q: Callable[[float], float],
    stream: np.random.Generator,
) -> CoupledDraw:
    """Drive both univariate draws by one shared uniform through their quantiles."""
    u = uniform(stream)
    x = float(qf_p(u))
    y = float(qf_q(u))
    if x == y:
        return CoupledDraw(x=x, y=x, identical=True)
    return CoupledDraw(x=x, y=y, identical=False)
