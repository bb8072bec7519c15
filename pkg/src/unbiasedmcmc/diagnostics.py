"""Coupling-based convergence bounds and tuning.

Meeting times of lagged coupled chains turn into computable upper bounds on
the total variation and 1-Wasserstein distance between the time-k marginal
and the stationary distribution.  The same meeting times drive the tuning
guideline: pick the burn-in as a high quantile of the number of coupled
transitions from a lag-1 pilot, then reuse it as the lag and take the
trajectory length as ten times the burn-in.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .chains import CoupledTrajectory, MeetingTimeSample

__all__ = [
    "BoundCurve",
    "TuningAdvice",
    "tv_bound",
    "tv_bound_curve",
    "w1_bound_curve",
    "tune",
]


@dataclass(frozen=True)
class BoundCurve:
    """An estimated bound value per burn-in k, with Monte Carlo spread.

    ``values`` are the raw empirical averages; they may wiggle and, for TV,
    exceed one even though the distance cannot.  ``display_values`` clips TV
    curves at one and leaves other metrics untouched.
    """

    metric: str  # "TV" or "W1"
    lag: int
    ks: np.ndarray
    values: np.ndarray
    stderrs: np.ndarray
    replicates: int

    @property
    def display_values(self) -> np.ndarray:
        if self.metric == "TV":
            return np.minimum(self.values, 1.0)
        return self.values


def _tv_summands(taus: np.ndarray, lag: int, k: int) -> np.ndarray:
    # number of coupled pairs still unequal at times k + j*lag, j >= 1
    return np.maximum(0, -((-(taus - lag - k)) // lag))


def _checked_taus(meetings: MeetingTimeSample) -> np.ndarray:
    if not meetings.values:
        raise ValueError("meeting-time sample is empty")
    if meetings.unmet_count:
        raise ValueError(
            f"{meetings.unmet_count} capped runs present; bounds from the met "
            "subset alone would be understated"
        )
    return np.asarray(meetings.values, dtype=np.int64)


def tv_bound(meetings: MeetingTimeSample, k: int) -> float:
    """Empirical upper bound on the TV distance to stationarity at time k."""
    if k < 0:
        raise ValueError("k must be >= 0")
    taus = _checked_taus(meetings)
    return float(np.mean(_tv_summands(taus, meetings.lag, k)))


def tv_bound_curve(meetings: MeetingTimeSample, k_max: Optional[int] = None) -> BoundCurve:
    """TV bound for every k from 0 to the point where the bound is exactly zero.

    The summand is zero for every run once k >= tau - lag, so the curve ends
    at max(tau) - lag with an exact zero.
    """
    taus = _checked_taus(meetings)
    lag = meetings.lag
    if k_max is None:
        k_max = int(taus.max()) - lag
    ks = np.arange(0, k_max + 1, dtype=np.int64)
    values = np.empty(ks.size)
    stderrs = np.empty(ks.size)
    for i, k in enumerate(ks):
        s = _tv_summands(taus, lag, int(k)).astype(float)
        values[i] = s.mean()
        stderrs[i] = s.std(ddof=1) / math.sqrt(s.size) if s.size > 1 else 0.0
    return BoundCurve(
        metric="TV", lag=lag, ks=ks, values=values, stderrs=stderrs, replicates=taus.size
    )


def w1_bound_curve(
    trajectories: Sequence[CoupledTrajectory],
    ks: Optional[Sequence[int]] = None,
    norm: str = "euclidean",
) -> BoundCurve:
    """1-Wasserstein bound from stored pre-meeting pairs.

    For each run and burn-in k the summand is
    sum_j |X_{k+j*lag} - Y_{k+(j-1)*lag}| over j >= 1 with k + j*lag < tau;
    the curve reports the empirical mean over runs.
    """
    if not trajectories:
        raise ValueError("no trajectories given")
    if norm not in ("euclidean", "l1", "max"):
        raise ValueError(f"unknown norm {norm!r}")
    lag = trajectories[0].lag
    taus = []
    for traj in trajectories:
        if not traj.met:
            raise ValueError("capped (unmet) trajectory present; bound would be understated")
        if traj.lag != lag:
            raise ValueError("all trajectories must share one lag")
        if traj.x_states is None or traj.y_states is None:
            raise ValueError(f"trajectory stored with storage={traj.storage!r} has no states")
        taus.append(int(traj.tau))

    if ks is None:
        ks = range(0, max(taus) - lag + 1)
    ks = np.asarray(list(ks), dtype=np.int64)

    def distance(a, b):
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        if norm == "euclidean":
            return float(np.sqrt(np.sum(d * d)))
        if norm == "l1":
            return float(np.sum(np.abs(d)))
        return float(np.max(np.abs(d)))

    summands = np.zeros((len(trajectories), ks.size))
    for r, (traj, tau) in enumerate(zip(trajectories, taus)):
        for i, k in enumerate(ks):
            t = int(k) + lag
            total = 0.0
            while t < tau:
                total += distance(traj.x(t), traj.y(t - lag))
                t += lag
            summands[r, i] = total
    values = summands.mean(axis=0)
    if len(trajectories) > 1:
        stderrs = summands.std(axis=0, ddof=1) / math.sqrt(len(trajectories))
    else:
        stderrs = np.zeros(ks.size)
    return BoundCurve(
        metric="W1", lag=lag, ks=ks, values=values, stderrs=stderrs,
        replicates=len(trajectories),
    )


@dataclass(frozen=True)
class TuningAdvice:
    """Burn-in, lag and length recommendation from a pilot meeting sample."""

    k: int
    lag: int
    ell: int
    quantile_level: float
    sample_size: int


def tune(pilot: MeetingTimeSample, quantile_level: float = 0.99) -> TuningAdvice:
    """Quantile-based tuning from lag-1 pilot meeting times.

    k is the ``quantile_level`` empirical quantile (higher order statistic,
    so always an observed value rounded up) of the number of coupled
    transitions tau - lag; then lag = k and ell = 10 k.
    """
    if not pilot.values:
        raise ValueError("pilot meeting-time sample is empty")
    if not 0.0 < quantile_level < 1.0:
        raise ValueError("quantile_level must lie in (0, 1)")
    counts = pilot.coupled_transition_counts
    k = int(math.ceil(float(np.quantile(counts, quantile_level, method="higher"))))
    k = max(k, 1)
    return TuningAdvice(
        k=k, lag=k, ell=10 * k, quantile_level=quantile_level, sample_size=counts.size
    )
