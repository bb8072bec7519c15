"""Lagged coupled chains and meeting times.

``run_lagged_coupling`` realizes one pair of chains: X and Y both start from
the initial distribution (independently by default), X advances alone for
``lag`` steps, then the pair evolves through the coupled transition until the
chains have met and X has reached length ``ell``.  The meeting time ``tau``
lives on the X clock: the first time t with X_t = Y_{t-lag}, detected only
through the ``met`` flag that couplings propagate.  After the meeting the
chains are advanced as one and Y mirrors X exactly.

Runs that fail to meet within ``max_sweeps`` coupled steps come back as
explicit unmet trajectories with whatever was recorded; dropping or
truncating them silently would bias everything downstream, so they are
surfaced and counted everywhere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .rng import derive_stream

__all__ = [
    "CoupledTrajectory",
    "MeetingTimeSample",
    "StorageRequest",
    "STORAGE_FULL",
    "STORAGE_PAIRS",
    "STORAGE_NONE",
    "state_storage_policy",
    "run_lagged_coupling",
    "sample_meeting_times",
]

STORAGE_FULL = "full"
STORAGE_PAIRS = "pairs-until-meeting"
STORAGE_NONE = "none"


@dataclass
class CoupledTrajectory:
    """One realized lag-L pair of chains.

    ``x_states[t]`` is X_t and ``y_states[t]`` is Y_t under full storage;
    under pairs-until-meeting storage the arrays stop at the meeting time;
    under none they are absent.  ``tau`` is ``math.inf`` when the run was
    capped before meeting.
    """

    lag: int
    length: int
    tau: float
    met: bool
    x_states: Optional[np.ndarray] = None
    y_states: Optional[np.ndarray] = None
    coupled_steps: int = 0
    storage: str = STORAGE_FULL

    def x(self, t: int) -> np.ndarray:
        if self.x_states is None or not (0 <= t < len(self.x_states)):
            raise IndexError(f"X_{t} not stored (storage={self.storage!r})")
        return self.x_states[t]

    def y(self, t: int) -> np.ndarray:
        if self.y_states is None or not (0 <= t < len(self.y_states)):
            raise IndexError(f"Y_{t} not stored (storage={self.storage!r})")
        return self.y_states[t]


@dataclass
class MeetingTimeSample:
    """Independent meeting times for a fixed lag; capped runs counted apart."""

    lag: int
    values: list = field(default_factory=list)
    replicate_indices: list = field(default_factory=list)
    unmet_count: int = 0
    requested: int = 0
    master_seed: Optional[int] = None

    @property
    def coupled_transition_counts(self) -> np.ndarray:
        """tau - lag for each met run: the number of coupled transitions."""
        return np.asarray(self.values, dtype=np.int64) - self.lag


@dataclass(frozen=True)
class StorageRequest:
    """What downstream consumers will need from a trajectory."""

    estimators: bool = False
    w1_bound: bool = False
    tv_bound: bool = False


def state_storage_policy(request: StorageRequest) -> str:
    """Minimal storage honoring the declared downstream uses.

    Estimators read X up to max(ell, tau) and Y up to the meeting, so they
    force full storage.  W1 bounds only need the pre-meeting pairs.  TV
    bounds need nothing beyond tau.
    """
    if request.estimators:
        return STORAGE_FULL
    if request.w1_bound:
        return STORAGE_PAIRS
    return STORAGE_NONE


def run_lagged_coupling(
    pi0_sampler: Callable[[np.random.Generator], np.ndarray],
    step: Callable,
    coupled_step: Callable,
    lag: int,
    ell: int,
    stream: np.random.Generator,
    max_sweeps: int = 10**6,
    storage: str = STORAGE_FULL,
) -> CoupledTrajectory:
    """Run one lag-``lag`` coupled pair until meeting and until length ``ell``."""
    if lag < 1:
        raise ValueError(f"lag must be >= 1, got {lag}")
    if ell < 0:
        raise ValueError(f"ell must be >= 0, got {ell}")
    if max_sweeps <= lag:
        raise ValueError("max_sweeps must exceed the lag")
    if storage not in (STORAGE_FULL, STORAGE_PAIRS, STORAGE_NONE):
        raise ValueError(f"unknown storage policy {storage!r}")

    x = np.asarray(pi0_sampler(stream), dtype=float)
    y = np.asarray(pi0_sampler(stream), dtype=float)
    keep = storage != STORAGE_NONE
    xs = [x] if keep else None
    ys = [y] if keep else None

    for _ in range(lag):
        x = np.asarray(step(x, stream), dtype=float)
        if keep:
            xs.append(x)

    t = lag
    met = False
    tau = math.inf
    sweeps = 0
    while True:
        if not met:
            if sweeps >= max_sweeps:
                break
            result = coupled_step(x, y, stream)
            sweeps += 1
            x, y = np.asarray(result.next_x, dtype=float), np.asarray(result.next_y, dtype=float)
            t += 1
            if result.met:
                met = True
                tau = t
                if storage == STORAGE_PAIRS:
                    keep = False
        else:
            # chains advance as one; Y mirrors X exactly
            x = np.asarray(step(x, stream), dtype=float)
            y = x
            t += 1
        if keep:
            xs.append(x)
            ys.append(y)
        if met and t >= ell:
            break

    return CoupledTrajectory(
        lag=lag,
        length=ell,
        tau=tau,
        met=met,
        x_states=np.asarray(xs) if xs is not None else None,
        y_states=np.asarray(ys) if ys is not None else None,
        coupled_steps=sweeps,
        storage=storage,
    )


def sample_meeting_times(
    pi0_sampler: Callable,
    step: Callable,
    coupled_step: Callable,
    lag: int,
    replicates: int,
    master_seed: int,
    max_sweeps: int = 10**6,
    replicate_offset: int = 0,
) -> MeetingTimeSample:
    """Draw independent meeting times, one replicate stream per run.

    Runs use ``ell = 0`` and store no states; results are deterministic in
    ``master_seed`` and independent of any scheduling.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    sample = MeetingTimeSample(lag=lag, requested=replicates, master_seed=master_seed)
    for i in range(replicates):
        index = replicate_offset + i
        stream = derive_stream(master_seed, index)
        traj = run_lagged_coupling(
            pi0_sampler, step, coupled_step, lag, 0, stream, max_sweeps=max_sweeps, storage=STORAGE_NONE
        )
        if traj.met:
            sample.values.append(int(traj.tau))
            sample.replicate_indices.append(index)
        else:
            sample.unmet_count += 1
    return sample
