"""Shared test helpers: finite-state oracle kernels and statistical utilities."""
from __future__ import annotations

import numpy as np
import pytest
from scipy.stats import kstwobign

from unbiasedmcmc.kernels import CoupledStepResult
from unbiasedmcmc.rng import uniform


def ks_critical(n: int, level: float = 0.001) -> float:
    """Asymptotic one-sample Kolmogorov-Smirnov critical value."""
    return float(kstwobign.isf(level)) / np.sqrt(n)


def binom_se(p_hat: float, n: int) -> float:
    return float(np.sqrt(max(p_hat * (1.0 - p_hat), 1e-12) / n))


class TwoStateChain:
    """Explicit two-state Markov chain with a maximal shared-uniform coupling.

    States are the arrays [0.] and [1.].  The coupled transition drives both
    rows through one shared uniform via the inverse CDF, which meets with the
    maximal probability 1 - |P(x,.) - P(y,.)|_TV and is faithful.  All the
    stationary quantities have closed forms, which makes this chain the
    reference oracle for the Poisson-equation and asymptotic-variance tests.
    """

    def __init__(self, p01: float, p10: float):
        self.matrix = np.array([[1.0 - p01, p01], [p10, 1.0 - p10]])
        self.stationary = np.array([p10, p01]) / (p01 + p10)

    def step(self, x, stream):
        i = int(x[0])
        u = uniform(stream)
        return np.array([0.0 if u < self.matrix[i, 0] else 1.0])

    def coupled_step(self, x, y, stream):
        u = uniform(stream)
        nx = 0.0 if u < self.matrix[int(x[0]), 0] else 1.0
        ny = 0.0 if u < self.matrix[int(y[0]), 0] else 1.0
        ax = np.array([nx])
        if nx == ny:
            return CoupledStepResult(next_x=ax, next_y=ax, met=True)
        return CoupledStepResult(next_x=ax, next_y=np.array([ny]), met=False)

    def pi0_sampler(self, stream):
        return np.array([0.0 if uniform(stream) < 0.5 else 1.0])

    def expectation(self, h) -> float:
        return float(sum(p * h(np.array([float(s)])) for s, p in enumerate(self.stationary)))

    def poisson_difference(self, h, x: int, y: int, tol: float = 1e-12) -> float:
        """sum_t (P^t h(x) - P^t h(y)) by truncated matrix powers."""
        hv = np.array([h(np.array([0.0])), h(np.array([1.0]))], dtype=float)
        current = hv.copy()
        total = current[x] - current[y]
        for _ in range(100000):
            current = self.matrix @ current
            term = current[x] - current[y]
            total += term
            if abs(term) < tol:
                return total
        raise RuntimeError("poisson series did not converge")

    def asymptotic_variance(self, h, tol: float = 1e-14) -> float:
        """2 pi((h - pi h) g) - Var_pi(h) with g the truncated fundamental series."""
        hv = np.array([h(np.array([0.0])), h(np.array([1.0]))], dtype=float)
        centered = hv - self.stationary @ hv
        g = np.zeros(2)
        current = centered.copy()
        for _ in range(100000):
            g += current
            current = self.matrix @ current
            if np.max(np.abs(current)) < tol:
                break
        var = float(self.stationary @ (centered**2))
        fishy = float(self.stationary @ (centered * g))
        return 2.0 * fishy - var


@pytest.fixture
def two_state():
    return TwoStateChain(p01=0.3, p10=0.45)
