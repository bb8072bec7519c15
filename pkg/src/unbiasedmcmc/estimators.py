"""Unbiased estimators built from coupled trajectories.

The single-start estimator corrects h(X_k) with the coupled differences
h(X_{k+jL}) - h(Y_{k+(j-1)L}); averaging it over start times k..ell gives the
time-averaged estimator, an MCMC ergodic average plus a weighted bias
cancellation.  The same weights define a signed empirical measure whose
atoms carry real (possibly negative) weights summing to one, from which one
can subsample.  Coupled chains with no lag estimate solutions of the Poisson
equation, which combine with two independent signed measures into an
unbiased estimator of the asymptotic variance of the underlying chain.
Randomized-truncation telescope estimators and replicate aggregation round
out the toolbox.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import norm as _norm

from .chains import CoupledTrajectory, run_lagged_coupling
from .rng import uniform

__all__ = [
    "UnmetTrajectoryError",
    "SignedMeasure",
    "EstimatorRecord",
    "AggregateReport",
    "TruncationLaw",
    "correction_weight",
    "unbiased_estimate",
    "time_averaged_estimate",
    "estimator_cost",
    "signed_measure",
    "subsample",
    "poisson_difference_estimate",
    "asymptotic_variance",
    "telescope_single_term",
    "telescope_coupled_sum",
    "geometric_truncation",
    "aggregate",
    "make_test_function",
]


class UnmetTrajectoryError(RuntimeError):
    """Estimators are undefined on trajectories whose chains never met."""


def correction_weight(t: int, k: int, ell: int, lag: int) -> float:
    """Weight of the difference h(X_t) - h(Y_{t-lag}) in the time-averaged estimator.

    Equals the number of start times in k..ell whose single-start estimator
    contains that difference, divided by ell - k + 1.  The count is done in
    integer arithmetic; the one division happens last.
    """
    if lag < 1:
        raise ValueError("lag must be >= 1")
    if not 0 <= k <= ell:
        raise ValueError(f"need 0 <= k <= ell, got k={k}, ell={ell}")
    if t < k + lag:
        raise ValueError(f"need t >= k + lag, got t={t}, k={k}, lag={lag}")
    hi = (t - k) // lag
    a = max(lag, t - ell)
    lo = -((-a) // lag)  # ceil(a / lag) for positive a
    return (hi - lo + 1) / (ell - k + 1)


def _require_met(trajectory: CoupledTrajectory):
    if not trajectory.met:
        raise UnmetTrajectoryError(
            "trajectory never met within its sweep cap; estimator undefined"
        )


def unbiased_estimate(trajectory: CoupledTrajectory, h: Callable, k: int) -> float:
    """Single-start unbiased estimate anchored at time ``k``.

    h(X_k) plus the telescoping corrections h(X_{k+j*lag}) - h(Y_{k+(j-1)*lag})
    over j >= 1 with k + j*lag < tau; faithfulness makes the sum finite.
    """
    _require_met(trajectory)
    if k < 0:
        raise ValueError("k must be >= 0")
    lag, tau = trajectory.lag, int(trajectory.tau)
    total = float(h(trajectory.x(k)))
    t = k + lag
    while t < tau:
        total += float(h(trajectory.x(t))) - float(h(trajectory.y(t - lag)))
        t += lag
    return total


def estimator_cost(lag: int, tau, ell: int):
    """Cost in kernel-call units: lag + 2 (tau - lag) + max(0, ell - tau).

    Coupled transitions cost two units before the chains meet and one after.
    ``tau`` may be a scalar or an array of meeting times.
    """
    tau = np.asarray(tau, dtype=float)
    cost = lag + 2.0 * (tau - lag) + np.maximum(0.0, ell - tau)
    return float(cost) if cost.ndim == 0 else cost


@dataclass(frozen=True)
class EstimatorRecord:
    """One replicate's estimate with its cost and provenance."""

    value: float
    cost_units: float
    tau: float
    params: dict
    replicate_index: Optional[int] = None


def time_averaged_estimate(
    trajectory: CoupledTrajectory, h: Callable, k: int, ell: int
) -> EstimatorRecord:
    """Average of the single-start estimators over start times k..ell.

    Evaluates as the MCMC average of h over X_k..X_ell plus the weighted
    bias-cancellation sum over t in [k+lag, tau-1]; that sum is empty when
    k + lag >= tau.
    """
    if not 0 <= k <= ell:
        raise ValueError(f"need 0 <= k <= ell, got k={k}, ell={ell}")
    _require_met(trajectory)
    lag, tau = trajectory.lag, int(trajectory.tau)

    mcmc = sum(float(h(trajectory.x(t))) for t in range(k, ell + 1)) / (ell - k + 1)
    correction = 0.0
    for t in range(k + lag, tau):
        v = correction_weight(t, k, ell, lag)
        if v != 0.0:
            correction += v * (float(h(trajectory.x(t))) - float(h(trajectory.y(t - lag))))
    return EstimatorRecord(
        value=mcmc + correction,
        cost_units=estimator_cost(lag, tau, ell),
        tau=trajectory.tau,
        params={"k": k, "ell": ell, "lag": lag},
    )


@dataclass
class SignedMeasure:
    """Atoms with real weights summing to one; applying it to h reproduces
    the time-averaged estimate."""

    atoms: np.ndarray
    weights: np.ndarray
    provenance: dict

    def __call__(self, h: Callable) -> float:
        return float(sum(w * float(h(a)) for a, w in zip(self.atoms, self.weights)))

    def __len__(self) -> int:
        return len(self.weights)


def signed_measure(trajectory: CoupledTrajectory, k: int, ell: int) -> SignedMeasure:
    """The unbiased signed empirical measure of the trajectory.

    X_k..X_ell carry the uniform MCMC weight, merged with the positive
    cancellation weight where both apply; each cancellation time also
    contributes its negatively weighted Y atom.  The weights cancel in
    pairs, so their sum is one up to rounding.
    """
    if not 0 <= k <= ell:
        raise ValueError(f"need 0 <= k <= ell, got k={k}, ell={ell}")
    _require_met(trajectory)
    lag, tau = trajectory.lag, int(trajectory.tau)

    base = 1.0 / (ell - k + 1)
    atoms = [trajectory.x(t) for t in range(k, ell + 1)]
    weights = [base] * (ell - k + 1)
    extra_atoms, extra_weights = [], []
    for t in range(k + lag, tau):
        v = correction_weight(t, k, ell, lag)
        if v == 0.0:
            continue
        if t <= ell:
            weights[t - k] += v
        else:
            extra_atoms.append(trajectory.x(t))
            extra_weights.append(v)
        extra_atoms.append(trajectory.y(t - lag))
        extra_weights.append(-v)
    atoms.extend(extra_atoms)
    weights.extend(extra_weights)
    return SignedMeasure(
        atoms=np.asarray(atoms),
        weights=np.asarray(weights, dtype=float),
        provenance={"k": k, "ell": ell, "lag": lag, "tau": trajectory.tau},
    )


def subsample(
    measure: SignedMeasure,
    m: int,
    stream: np.random.Generator,
    probabilities: Optional[np.ndarray] = None,
):
    """Draw ``m`` weighted atoms whose expectation reproduces the measure.

    Uniform index draws return atom Z_I with weight N * omega_I; with
    selection probabilities xi the weight is omega_I / xi_I.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    n = len(measure)
    if probabilities is None:
        indices = stream.integers(0, n, size=m)
        weights = n * measure.weights[indices]
    else:
        xi = np.asarray(probabilities, dtype=float)
        if xi.shape != (n,):
            raise ValueError("probabilities must have one entry per atom")
        if np.any(xi <= 0.0):
            raise ValueError("selection probabilities must be strictly positive")
        if abs(xi.sum() - 1.0) > 1e-9:
            raise ValueError("selection probabilities must sum to 1")
        indices = stream.choice(n, size=m, p=xi / xi.sum())
        weights = measure.weights[indices] / xi[indices]
    return measure.atoms[indices], weights


def poisson_difference_estimate(
    x: np.ndarray,
    y: np.ndarray,
    h: Callable,
    coupled_step: Callable,
    stream: np.random.Generator,
    max_sweeps: int = 10**6,
) -> float:
    """Unbiased estimate of g(x) - g(y) for the Poisson-equation solution g.

    Runs a lag-free coupled pair from (x, y) and sums h(X_t) - h(Y_t) until
    the chains meet.
    """
    cx = np.asarray(x, dtype=float)
    cy = np.asarray(y, dtype=float)
    total = float(h(cx)) - float(h(cy))
    for _ in range(max_sweeps):
        result = coupled_step(cx, cy, stream)
        if result.met:
            return total
        cx, cy = np.asarray(result.next_x, dtype=float), np.asarray(result.next_y, dtype=float)
        total += float(h(cx)) - float(h(cy))
    raise UnmetTrajectoryError("lag-free coupled pair did not meet within max_sweeps")


def asymptotic_variance(
    h: Callable,
    pi0_sampler: Callable,
    step: Callable,
    coupled_step: Callable,
    k: int,
    ell: int,
    lag: int,
    y_anchor: np.ndarray,
    stream: np.random.Generator,
    m_indices: int = 1,
    max_sweeps: int = 10**6,
) -> float:
    """One unbiased estimate of the asymptotic variance of the chain for h.

    Two independent signed measures estimate the stationary moments; a
    uniformly subsampled atom anchors a Poisson-equation run against
    ``y_anchor``.  Returns 2 * (A) - (B) where (A) estimates the fishy-term
    pi((h - pi h) g) and (B) estimates the stationary variance of h.
    """
    h2 = lambda v: float(h(v)) ** 2
    measures = []
    for _ in range(2):
        traj = run_lagged_coupling(
            pi0_sampler, step, coupled_step, lag, ell, stream, max_sweeps=max_sweeps
        )
        measures.append(signed_measure(traj, k, ell))
    m1, m2 = measures

    b_term = 0.5 * (m1(h2) + m2(h2)) - m1(h) * m2(h)

    n = len(m1)
    m2_h = m2(h)
    a_values = []
    for _ in range(m_indices):
        idx = int(stream.integers(0, n))
        z = np.asarray(m1.atoms[idx], dtype=float)
        g_est = poisson_difference_estimate(z, y_anchor, h, coupled_step, stream, max_sweeps)
        a_values.append(n * m1.weights[idx] * g_est * (float(h(z)) - m2_h))
    a_term = float(np.mean(a_values))
    return 2.0 * a_term - b_term


@dataclass(frozen=True)
class TruncationLaw:
    """Distribution of the telescope truncation variable on {0, 1, 2, ...}."""

    pmf: Callable[[int], float]
    tail: Callable[[int], float]  # P(xi >= k)
    sample: Callable[[np.random.Generator], int]


def geometric_truncation(success: float) -> TruncationLaw:
    """Geometric law on {0, 1, ...}: pmf(k) = success * (1 - success)^k."""
    if not 0.0 < success < 1.0:
        raise ValueError("success probability must lie in (0, 1)")
    fail = 1.0 - success

    def sample(stream):
        # inversion: count of full failure blocks before the uniform
        return int(math.floor(math.log1p(-uniform(stream)) / math.log(fail)))

    return TruncationLaw(
        pmf=lambda k: success * fail**k,
        tail=lambda k: fail**k,
        sample=sample,
    )


def telescope_single_term(
    a: Callable[[int], float], law: TruncationLaw, stream: np.random.Generator
) -> float:
    """Single-term randomized telescope: a_xi / P(xi = xi)."""
    xi = law.sample(stream)
    p = law.pmf(xi)
    if p <= 0.0:
        raise ValueError(f"truncation law puts zero mass on reachable index {xi}")
    return a(xi) / p


def telescope_coupled_sum(
    a: Callable[[int], float], law: TruncationLaw, stream: np.random.Generator
) -> float:
    """Coupled-sum randomized telescope: a_0 + sum_{k<=xi} a_k / P(xi >= k)."""
    xi = law.sample(stream)
    total = a(0)
    for k in range(1, xi + 1):
        tail = law.tail(k)
        if tail <= 0.0:
            raise ValueError(f"truncation law has zero tail at reachable index {k}")
        total += a(k) / tail
    return total


@dataclass(frozen=True)
class AggregateReport:
    """Replicate-level summary: mean, spread, Normal-quantile interval, cost."""

    mean: float
    std: float
    ci_low: float
    ci_high: float
    alpha: float
    count: int
    mean_cost: float
    inefficiency: float


def aggregate(records: Sequence[EstimatorRecord], alpha: float = 0.05) -> AggregateReport:
    """Summarize independent replicates.

    The interval uses Normal quantiles of the sample mean; inefficiency is
    mean cost times sample variance, the scale-free price of one replicate.
    """
    if len(records) < 2:
        raise ValueError("need at least two replicates to aggregate")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    values = np.array([r.value for r in records], dtype=float)
    costs = np.array([r.cost_units for r in records], dtype=float)
    c = len(values)
    mean = float(np.mean(values))
    std = float(np.std(values, ddof=1))
    half = std / math.sqrt(c)
    q_low = float(_norm.ppf(alpha / 2.0))
    q_high = float(_norm.ppf(1.0 - alpha / 2.0))
    mean_cost = float(np.mean(costs))
    return AggregateReport(
        mean=mean,
        std=std,
        ci_low=mean + q_low * half,
        ci_high=mean + q_high * half,
        alpha=alpha,
        count=c,
        mean_cost=mean_cost,
        inefficiency=mean_cost * std**2,
    )


def make_test_function(name: str) -> Callable[[np.ndarray], float]:
    """Resolve a serializable test-function name.

    Names are coordinate projections with an optional integer power:
    ``coord0`` is x[0], ``coord1^2`` is x[1] squared, and so on.
    """
    base, _, power = name.partition("^")
    if not base.startswith("coord"):
        raise ValueError(f"unknown test function {name!r}")
    try:
        index = int(base[len("coord"):])
        exponent = int(power) if power else 1
    except ValueError as exc:
        raise ValueError(f"unknown test function {name!r}") from exc
    if index < 0 or exponent < 1:
        raise ValueError(f"unknown test function {name!r}")

    if exponent == 1:
        fn = lambda x: float(np.asarray(x).reshape(-1)[index])
    else:
        fn = lambda x: float(np.asarray(x).reshape(-1)[index]) ** exponent
    fn.__name__ = name
    return fn
