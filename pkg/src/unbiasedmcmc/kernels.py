"""Markov transitions and coupled transitions.

The workhorse is the random-walk Metropolis transition with Normal proposals
and its coupled version: proposals are drawn from a coupling of the two
proposal distributions (reflection-maximal by default) and a single shared
uniform accepts or rejects both chains.  A step reports ``met=True`` only
when the proposal was shared and both chains accepted; callers never detect
meetings by comparing floating-point states.

Also provided: an exact-draw kernel for targets with a direct sampler (every
step is an independent draw from the target, so coupled chains meet at the
first coupled step -- the reference case for asymptotic-variance tests), and
mixtures of kernels where one shared component indicator, drawn independently
of the states, selects which coupled transition both chains follow.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import math

import numpy as np

from .couplings import (
    CoupledDraw,
    DensityHandle,
    eta_coupling,
    mixture_maximal_coupling,
    reflection_maximal_coupling,
)
from .rng import standard_normal, uniform
from .targets import Ar1Oracle, TargetDistribution

__all__ = [
    "CoupledStepResult",
    "KernelSpec",
    "TransitionPair",
    "PROPOSAL_COUPLINGS",
    "mrth_step",
    "coupled_mrth_step",
    "independence_oracle_step",
    "coupled_independence_oracle_step",
    "mixture_step",
    "coupled_mixture_step",
    "make_transitions",
    "make_ar1_transitions",
]

PROPOSAL_COUPLINGS = ("reflection-maximal", "eta", "mixture", "crn")


@dataclass(frozen=True)
class CoupledStepResult:
    """Joint transition output; ``met`` implies the states are exactly equal."""

    next_x: np.ndarray
    next_y: np.ndarray
    met: bool


@dataclass(frozen=True)
class TransitionPair:
    """A transition and a coupling of it with itself."""

    step: Callable[[np.ndarray, np.random.Generator], np.ndarray]
    coupled_step: Callable[[np.ndarray, np.ndarray, np.random.Generator], CoupledStepResult]


@dataclass(frozen=True)
class KernelSpec:
    """Declarative kernel choice resolved by :func:`make_transitions`.

    ``proposal_sd`` is a scalar or a vector of the target dimension.  For
    ``kind="mixture"``, ``components`` lists (weight, KernelSpec) pairs and
    the other proposal fields are ignored.
    """

    target: TargetDistribution
    proposal_sd: Union[float, np.ndarray] = 1.0
    kind: str = "mrth"
    proposal_coupling: str = "reflection-maximal"
    eta: float = 1.0
    components: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("mrth", "independence_oracle", "mixture"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "mrth":
            sd = np.atleast_1d(np.asarray(self.proposal_sd, dtype=float))
            if np.any(sd <= 0.0):
                raise ValueError("proposal_sd must be componentwise positive")
            if sd.size not in (1, self.target.dimension):
                raise ValueError("proposal_sd must be a scalar or match the target dimension")
            if self.proposal_coupling not in PROPOSAL_COUPLINGS:
                raise ValueError(f"unknown proposal coupling {self.proposal_coupling!r}")
        if self.kind == "mixture":
            if not self.components:
                raise ValueError("mixture kernel needs a nonempty component list")
            weights = np.array([w for w, _ in self.components], dtype=float)
            if np.any(weights < 0.0) or abs(weights.sum() - 1.0) > 1e-12:
                raise ValueError("mixture weights must be nonnegative and sum to 1")


def mrth_step(
    x: np.ndarray,
    target: TargetDistribution,
    proposal_sd,
    stream: np.random.Generator,
) -> np.ndarray:
    """One random-walk Metropolis transition with Normal proposals."""
    x = np.asarray(x, dtype=float)
    sd = np.broadcast_to(np.asarray(proposal_sd, dtype=float), x.shape)
    prop = x + sd * standard_normal(stream, x.shape[0])
    logu = math.log(uniform(stream))
    # infinite potential at the proposal makes the comparison -inf: rejected
    if logu < target.potential(x) - target.potential(prop):
        return prop
    return x


def _couple_proposals(x, y, sd, stream, proposal_coupling, eta) -> CoupledDraw:
    if proposal_coupling == "reflection-maximal":
        return reflection_maximal_coupling(x, y, sd, stream)
    if proposal_coupling == "crn":
        shared = standard_normal(stream, x.shape[0])
        xprop = x + sd * shared
        yprop = y + sd * shared
        if np.array_equal(xprop, yprop):
            return CoupledDraw(x=xprop, y=xprop, identical=True)
        return CoupledDraw(x=xprop, y=yprop, identical=False)
    if proposal_coupling == "mixture" and x.shape[0] == 1:
        draw = mixture_maximal_coupling((float(x[0]), float(sd[0])), (float(y[0]), float(sd[0])), stream)
        xa = np.array([draw.x])
        ya = xa if draw.identical else np.array([draw.y])
        return CoupledDraw(x=xa, y=ya, identical=draw.identical)
    # "eta", and "mixture" beyond one dimension where the overlap mass has no
    # closed form; eta=1 keeps the coupling maximal on that route
    eta_val = eta if proposal_coupling == "eta" else 1.0

    def handle(center):
        return DensityHandle(
            log_density=lambda v: -0.5 * float(np.sum(((v - center) / sd) ** 2)),
            sampler=lambda s: center + sd * np.asarray(standard_normal(s, x.shape[0])),
        )

    return eta_coupling(handle(x), handle(y), eta_val, stream)


def coupled_mrth_step(
    x: np.ndarray,
    y: np.ndarray,
    target: TargetDistribution,
    proposal_sd,
    stream: np.random.Generator,
    proposal_coupling: str = "reflection-maximal",
    eta: float = 1.0,
) -> CoupledStepResult:
    """One coupled random-walk Metropolis transition.

    Proposals come from the requested coupling of Normal(x, sd^2) and
    Normal(y, sd^2); one shared uniform decides both acceptances.  Each
    output is marginally a :func:`mrth_step` from its own starting point.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sd = np.broadcast_to(np.asarray(proposal_sd, dtype=float), x.shape)

    if np.array_equal(x, y):
        # faithful: equal chains move together forever
        nxt = mrth_step(x, target, sd, stream)
        return CoupledStepResult(next_x=nxt, next_y=nxt, met=True)

    draw = _couple_proposals(x, y, sd, stream, proposal_coupling, eta)
    logu = math.log(uniform(stream))
    ux, uy = target.potential(x), target.potential(y)
    x_accept = logu < ux - target.potential(draw.x)
    y_accept = logu < uy - target.potential(draw.y)

    next_x = draw.x if x_accept else x
    next_y = draw.y if y_accept else y
    met = bool(draw.identical and x_accept and y_accept)
    if met:
        next_y = next_x
    return CoupledStepResult(next_x=next_x, next_y=next_y, met=met)


def independence_oracle_step(
    x: np.ndarray,
    target: TargetDistribution,
    stream: np.random.Generator,
) -> np.ndarray:
    """Exact-draw kernel: the next state is an independent draw from the target."""
    if target.sampler is None:
        raise ValueError(f"target {target.label!r} has no direct sampler")
    return target.sampler(stream)


def coupled_independence_oracle_step(
    x: np.ndarray,
    y: np.ndarray,
    target: TargetDistribution,
    stream: np.random.Generator,
) -> CoupledStepResult:
    """Coupled exact-draw kernel: one shared draw moves both chains, meeting at once."""
    if target.sampler is None:
        raise ValueError(f"target {target.label!r} has no direct sampler")
    nxt = target.sampler(stream)
    return CoupledStepResult(next_x=nxt, next_y=nxt, met=True)


def _pick_component(weights_cum, stream) -> int:
    # the indicator never looks at the chain states
    idx = int(np.searchsorted(weights_cum, uniform(stream)))
    return min(idx, weights_cum.size - 1)


def mixture_step(
    x: np.ndarray,
    components: Sequence[tuple],
    stream: np.random.Generator,
) -> np.ndarray:
    """One step of the mixture kernel sum_i w_i P_i.

    ``components`` holds (weight, step, coupled_step) triples.
    """
    if not components:
        raise ValueError("mixture needs at least one component")
    cum = np.cumsum([w for w, *_ in components])
    idx = _pick_component(cum, stream)
    return components[idx][1](x, stream)


def coupled_mixture_step(
    x: np.ndarray,
    y: np.ndarray,
    components: Sequence[tuple],
    stream: np.random.Generator,
) -> CoupledStepResult:
    """One coupled mixture step: a shared component indicator, then that
    component's coupled transition for both chains.

    Choosing the component from the pair's distance would break the marginal
    law, so the indicator is drawn before touching the states.
    """
    if not components:
        raise ValueError("mixture needs at least one component")
    cum = np.cumsum([w for w, *_ in components])
    idx = _pick_component(cum, stream)
    return components[idx][2](x, y, stream)


def make_transitions(spec: KernelSpec) -> TransitionPair:
    """Resolve a kernel spec into concrete (step, coupled_step) callables."""
    if spec.kind == "mrth":
        target, sd = spec.target, spec.proposal_sd
        coupling, eta = spec.proposal_coupling, spec.eta
        return TransitionPair(
            step=lambda x, s: mrth_step(x, target, sd, s),
            coupled_step=lambda x, y, s: coupled_mrth_step(x, y, target, sd, s, coupling, eta),
        )
    if spec.kind == "independence_oracle":
        target = spec.target
        return TransitionPair(
            step=lambda x, s: independence_oracle_step(x, target, s),
            coupled_step=lambda x, y, s: coupled_independence_oracle_step(x, y, target, s),
        )
    # mixture: resolve components recursively
    resolved = []
    for weight, sub in spec.components:
        pair = make_transitions(sub)
        resolved.append((float(weight), pair.step, pair.coupled_step))
    resolved = tuple(resolved)
    return TransitionPair(
        step=lambda x, s: mixture_step(x, resolved, s),
        coupled_step=lambda x, y, s: coupled_mixture_step(x, y, resolved, s),
    )


def make_ar1_transitions(oracle: Ar1Oracle) -> TransitionPair:
    """Transitions for the Normal(0,1)-invariant AR(1) kernel, coupled by reflection."""
    rho, noise_sd = oracle.rho, oracle.noise_sd

    def step(x, stream):
        x = np.asarray(x, dtype=float)
        return rho * x + noise_sd * np.asarray(standard_normal(stream, x.shape[0]))

    def coupled_step(x, y, stream):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        draw = reflection_maximal_coupling(rho * x, rho * y, noise_sd, stream)
        return CoupledStepResult(next_x=draw.x, next_y=draw.y, met=draw.identical)

    return TransitionPair(step=step, coupled_step=coupled_step)
