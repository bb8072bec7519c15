"""Vectorized replicate engine for one-dimensional random-walk chains.

Runs many lagged coupled Metropolis chains simultaneously with array
arithmetic: reflection-maximal proposal coupling, one shared acceptance
uniform per coupled transition, exact meeting flags, and streaming
accumulation of time-averaged estimates so nothing is stored per step.

This engine exists for large-replicate studies (thousands of replicates
with five-digit trajectory lengths) where the per-replicate runner would
be too slow.  Its draws come from one generator for the whole batch, so
results are deterministic given (generator state, replicate count) but a
single replicate's draws depend on the batch it ran in; the per-replicate
runner in :mod:`unbiasedmcmc.runner` keeps the stream-per-replicate
contract for CLI outputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtri

from .estimators import correction_weight, estimator_cost

__all__ = ["BatchEstimates", "batch_meeting_times", "batch_estimates", "batch_poisson_sums"]

_TINY = 2.0**-54


def _ndtri_safe(u: np.ndarray) -> np.ndarray:
    return ndtri(np.where(u > 0.0, u, _TINY))


def _normals(rng: np.random.Generator, n: int) -> np.ndarray:
    return _ndtri_safe(rng.random(n))


@dataclass
class BatchEstimates:
    """Per-replicate estimator values for each test function, with costs and taus."""

    values: np.ndarray  # (n_h, C)
    costs: np.ndarray  # (C,)
    taus: np.ndarray  # (C,) int64; meaningful where met
    met: np.ndarray  # (C,) bool


class _CoupledBatch:
    """State and one-step updates for C simultaneous coupled 1-d chains."""

    def __init__(self, u_vec, sigma, x, y, rng):
        self.u_vec = u_vec
        self.sigma = float(sigma)
        self.rng = rng
        self.x = x
        self.y = y.copy()
        self.ux = u_vec(x)
        self.uy = u_vec(self.y)
        self.n = x.shape[0]

    def x_only_step(self, idx=None):
        """Marginal transition for the X chains (used during the lag phase
        and after meetings, when Y mirrors X)."""
        rng, sigma = self.rng, self.sigma
        if idx is None:
            xstd = _normals(rng, self.n)
            logu = np.log(rng.random(self.n))
            prop = self.x + sigma * xstd
            up = self.u_vec(prop)
            acc = logu < self.ux - up
            self.x = np.where(acc, prop, self.x)
            self.ux = np.where(acc, up, self.ux)
        else:
            m = idx.size
            xstd = _normals(rng, m)
            logu = np.log(rng.random(m))
            prop = self.x[idx] + sigma * xstd
            up = self.u_vec(prop)
            acc = logu < self.ux[idx] - up
            self.x[idx] = np.where(acc, prop, self.x[idx])
            self.ux[idx] = np.where(acc, up, self.ux[idx])

    def coupled_step(self, idx) -> np.ndarray:
        """Coupled transition on the chains listed in ``idx``; returns the
        boolean just-met mask aligned with ``idx``."""
        rng, sigma = self.rng, self.sigma
        m = idx.size
        xstd = _normals(rng, m)
        logu_same = np.log(rng.random(m))
        logu_acc = np.log(rng.random(m))

        xi, yi = self.x[idx], self.y[idx]
        z = (xi - yi) / sigma
        same = logu_same < (-0.5 * (xstd + z) ** 2 + 0.5 * xstd**2)
        xprop = xi + sigma * xstd
        # 1-d reflection is negation of the standardized draw
        yprop = np.where(same, xprop, yi - sigma * xstd)
        uxp = self.u_vec(xprop)
        uyp = np.where(same, uxp, self.u_vec(yprop))

        xacc = logu_acc < self.ux[idx] - uxp
        yacc = logu_acc < self.uy[idx] - uyp
        # chains already equal stay equal whatever the shared decision does
        met_now = same & ((xacc & yacc) | (xi == yi))

        new_x = np.where(xacc, xprop, xi)
        new_y = np.where(yacc, yprop, yi)
        new_y = np.where(met_now, new_x, new_y)
        self.x[idx] = new_x
        self.ux[idx] = np.where(xacc, uxp, self.ux[idx])
        self.y[idx] = new_y
        self.uy[idx] = np.where(yacc, uyp, self.uy[idx])
        return met_now


def batch_meeting_times(
    u_vec: Callable[[np.ndarray], np.ndarray],
    sigma: float,
    pi0_vec: Callable[[np.random.Generator, int], np.ndarray],
    lag: int,
    replicates: int,
    rng: np.random.Generator,
    max_sweeps: int = 10**6,
):
    """Meeting times (X clock) of C simultaneous lag-``lag`` coupled pairs.

    Returns ``(taus, met)``; unmet entries hold the cap value and are False
    in ``met``.
    """
    if lag < 1:
        raise ValueError("lag must be >= 1")
    batch = _CoupledBatch(u_vec, sigma, pi0_vec(rng, replicates), pi0_vec(rng, replicates), rng)
    for _ in range(lag):
        batch.x_only_step()

    taus = np.full(replicates, -1, dtype=np.int64)
    unmet = np.arange(replicates)
    t = lag
    sweeps = 0
    while unmet.size and sweeps < max_sweeps:
        t += 1
        sweeps += 1
        met_now = batch.coupled_step(unmet)
        taus[unmet[met_now]] = t
        unmet = unmet[~met_now]
    met = taus >= 0
    taus[~met] = t
    return taus, met


def batch_estimates(
    u_vec: Callable[[np.ndarray], np.ndarray],
    sigma: float,
    pi0_vec: Callable[[np.random.Generator, int], np.ndarray],
    k: int,
    lag: int,
    ell: int,
    hs: Sequence[Callable[[np.ndarray], np.ndarray]],
    replicates: int,
    rng: np.random.Generator,
    max_sweeps: int = 10**6,
) -> BatchEstimates:
    """Time-averaged estimates for every test function in ``hs``, streamed.

    Equivalent in law to running the per-replicate pipeline and evaluating
    the time-averaged estimator on each trajectory; states are folded into
    running sums instead of stored.
    """
    if not 0 <= k <= ell:
        raise ValueError(f"need 0 <= k <= ell, got k={k}, ell={ell}")
    if lag < 1:
        raise ValueError("lag must be >= 1")
    n_h = len(hs)
    c = replicates
    batch = _CoupledBatch(u_vec, sigma, pi0_vec(rng, c), pi0_vec(rng, c), rng)

    window_sums = np.zeros((n_h, c))
    corrections = np.zeros((n_h, c))

    def add_window(t):
        if k <= t <= ell:
            for j, h in enumerate(hs):
                window_sums[j] += h(batch.x)

    add_window(0)
    for t in range(1, lag + 1):
        batch.x_only_step()
        add_window(t)

    taus = np.full(c, -1, dtype=np.int64)
    unmet_mask = np.ones(c, dtype=bool)
    unmet = np.arange(c)
    t = lag
    sweeps = 0
    capped = False
    while unmet.size or t < ell:
        t += 1
        if unmet.size:
            if sweeps >= max_sweeps:
                capped = True
                t -= 1
                break
            sweeps += 1
            if t <= ell and unmet.size < c:
                # met chains keep advancing as a single chain toward ell
                batch.x_only_step(np.flatnonzero(~unmet_mask))
            met_now = batch.coupled_step(unmet)
            taus[unmet[met_now]] = t
            unmet_mask[unmet[met_now]] = False
            still = unmet[~met_now]
            if t >= k + lag and still.size:
                v = correction_weight(t, k, ell, lag)
                if v != 0.0:
                    for j, h in enumerate(hs):
                        corrections[j, still] += v * (h(batch.x[still]) - h(batch.y[still]))
            unmet = still
        else:
            batch.x_only_step()
        add_window(t)

    if capped:
        # finish the averaging window so the chains that did meet stay valid
        while t < ell:
            t += 1
            batch.x_only_step()
            add_window(t)

    met = taus >= 0
    taus[~met] = t
    values = window_sums / (ell - k + 1) + corrections
    costs = estimator_cost(lag, taus.astype(float), ell)
    return BatchEstimates(values=values, costs=costs, taus=taus, met=met)


def batch_poisson_sums(
    u_vec: Callable[[np.ndarray], np.ndarray],
    sigma: float,
    x0: np.ndarray,
    y0: np.ndarray,
    h: Callable[[np.ndarray], np.ndarray],
    rng: np.random.Generator,
    max_sweeps: int = 10**6,
):
    """Lag-free coupled sums of h differences from paired start points.

    Returns ``(sums, taus, met)`` where each sum accumulates
    h(X_t) - h(Y_t) for t up to the meeting time exclusive.
    """
    x0 = np.asarray(x0, dtype=float)
    y0 = np.broadcast_to(np.asarray(y0, dtype=float), x0.shape).copy()
    c = x0.shape[0]
    batch = _CoupledBatch(u_vec, sigma, x0.copy(), y0, rng)
    sums = h(batch.x) - h(batch.y)
    taus = np.full(c, -1, dtype=np.int64)
    unmet = np.arange(c)
    t = 0
    while unmet.size and t < max_sweeps:
        t += 1
        met_now = batch.coupled_step(unmet)
        taus[unmet[met_now]] = t
        still = unmet[~met_now]
        if still.size:
            sums[still] += h(batch.x[still]) - h(batch.y[still])
        unmet = still
    met = taus >= 0
    taus[~met] = t
    return sums, taus, met
