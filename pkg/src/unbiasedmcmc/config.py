"""Experiment configuration: validation and resolution into runnable pieces.

Configs arrive as JSON files through the CLI (or as plain dicts through the
library).  Validation happens before any computation; "auto" values for the
burn-in, lag and length are resolved by a lag-1 pilot run plus the quantile
tuning rule.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from typing import Optional, Union

import numpy as np

from .estimators import make_test_function
from .kernels import KernelSpec, TransitionPair, make_transitions, PROPOSAL_COUPLINGS
from .targets import TargetDistribution, make_normal_mixture, make_std_normal

__all__ = ["ExperimentConfig", "ConfigError", "build_target", "build_pi0", "build_transitions"]

_U64_MAX = 2**64 - 1


class ConfigError(ValueError):
    """Invalid experiment configuration."""


_KNOWN_KEYS = {
    "target", "seed", "replicates", "kernel", "proposal_sd", "coupling", "eta",
    "mixture_components", "pi0", "lag", "k", "ell", "h", "workers", "out_dir",
    "max_sweeps", "pilot_replicates", "quantile_level", "alpha", "lags",
    "k_values", "avar_copies", "avar_k", "avar_ell", "avar_lag", "y_anchor",
    "m_indices",
}


@dataclass
class ExperimentConfig:
    """Validated experiment description.

    ``k``, ``lag`` and ``ell`` may be the string "auto", in which case a
    pilot phase with lag 1 chooses them by the quantile rule.
    """

    target: dict
    seed: int
    replicates: int = 100
    kernel: str = "mrth"
    proposal_sd: Union[float, list] = 1.0
    coupling: str = "reflection-maximal"
    eta: float = 1.0
    mixture_components: Optional[list] = None
    pi0: dict = field(default_factory=lambda: {"kind": "target"})
    lag: Union[int, str] = "auto"
    k: Union[int, str] = "auto"
    ell: Union[int, str] = "auto"
    h: list = field(default_factory=lambda: ["coord0"])
    workers: int = 1
    out_dir: str = "out"
    max_sweeps: int = 10**6
    pilot_replicates: int = 500
    quantile_level: float = 0.99
    alpha: float = 0.05
    lags: list = field(default_factory=lambda: [1])
    k_values: Optional[list] = None
    avar_copies: int = 200
    avar_k: Optional[int] = None
    avar_ell: Optional[int] = None
    avar_lag: Optional[int] = None
    y_anchor: Optional[list] = None
    m_indices: int = 1

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        unknown = set(raw) - _KNOWN_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "target" not in raw or "seed" not in raw:
            raise ConfigError("config requires at least 'target' and 'seed'")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def validate(self):
        if not (0 <= int(self.seed) <= _U64_MAX):
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.kernel not in ("mrth", "independence_oracle", "mixture"):
            raise ConfigError(f"unknown kernel {self.kernel!r}")
        if self.coupling not in PROPOSAL_COUPLINGS:
            raise ConfigError(f"unknown coupling {self.coupling!r}")
        if not (0.0 < self.eta <= 1.0):
            raise ConfigError("eta must lie in (0, 1]")
        if self.max_sweeps < 2:
            raise ConfigError("max_sweeps must be >= 2")
        if self.pilot_replicates < 1:
            raise ConfigError("pilot_replicates must be >= 1")
        if not (0.0 < self.quantile_level < 1.0):
            raise ConfigError("quantile_level must lie in (0, 1)")
        if not (0.0 < self.alpha < 1.0):
            raise ConfigError("alpha must lie in (0, 1)")
        if not self.h:
            raise ConfigError("at least one test function is required")
        for name in self.h:
            try:
                make_test_function(name)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc

        fixed = [v for v in (self.k, self.ell, self.lag) if v != "auto"]
        for v in fixed:
            if not isinstance(v, int) or v < 0:
                raise ConfigError("k, ell and lag must be nonnegative integers or 'auto'")
        if self.lag != "auto" and self.lag < 1:
            raise ConfigError("lag must be >= 1")
        if self.k != "auto" and self.ell != "auto" and self.ell < self.k:
            raise ConfigError(f"ell must be >= k, got k={self.k}, ell={self.ell}")
        if not self.lags or any((not isinstance(v, int)) or v < 1 for v in self.lags):
            raise ConfigError("lags must be a nonempty list of integers >= 1")
        if self.k_values is not None:
            if not self.k_values or any((not isinstance(v, int)) or v < 1 for v in self.k_values):
                raise ConfigError("k_values must be a nonempty list of integers >= 1")
        if self.m_indices < 1:
            raise ConfigError("m_indices must be >= 1")
        if self.avar_copies < 2:
            raise ConfigError("avar_copies must be >= 2")
        build_target(self.target)  # validates target parameters
        if self.pi0.get("kind", "target") not in ("target", "normal", "point", "std_normal"):
            raise ConfigError(f"unknown pi0 kind {self.pi0.get('kind')!r}")

    def canonical_json(self) -> str:
        # workers and out_dir describe the execution environment, not the
        # experiment: aggregates must not depend on them
        payload = {k: v for k, v in asdict(self).items() if k not in ("workers", "out_dir")}
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


def build_target(spec: dict) -> TargetDistribution:
    """Resolve a target spec dict into a TargetDistribution."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("target spec must be a dict with a 'kind'")
    kind = spec["kind"]
    try:
        if kind == "std_normal":
            return make_std_normal(int(spec.get("dimension", 1)))
        if kind == "normal_mixture":
            return make_normal_mixture(spec["weights"], spec["means"], spec["sds"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad target spec {spec!r}: {exc}") from exc
    raise ConfigError(f"unknown target kind {kind!r}")


def build_pi0(spec: dict, target: TargetDistribution):
    """Initial-distribution sampler from its config spec."""
    kind = spec.get("kind", "target")
    d = target.dimension
    if kind == "target":
        if target.sampler is None:
            raise ConfigError("pi0 kind 'target' requires a target with a direct sampler")
        return target.sampler
    if kind == "std_normal":
        std = make_std_normal(d)
        return std.sampler
    if kind == "normal":
        mean = np.broadcast_to(np.asarray(spec.get("mean", 0.0), dtype=float), (d,))
        sd = np.broadcast_to(np.asarray(spec.get("sd", 1.0), dtype=float), (d,))
        if np.any(sd <= 0):
            raise ConfigError("pi0 normal sd must be positive")
        base = make_std_normal(d).sampler
        return lambda stream: mean + sd * base(stream)
    if kind == "point":
        value = np.asarray(spec["value"], dtype=float).reshape(-1)
        if value.shape != (d,):
            raise ConfigError("pi0 point value must match the target dimension")
        return lambda stream: value
    raise ConfigError(f"unknown pi0 kind {kind!r}")


def pi0_mean(spec: dict, target: TargetDistribution) -> np.ndarray:
    """Mean of the configured initial distribution (anchor default)."""
    kind = spec.get("kind", "target")
    d = target.dimension
    if kind == "target":
        if target.oracle is not None:
            return np.asarray(target.oracle.mean, dtype=float)
        return np.zeros(d)
    if kind == "std_normal":
        return np.zeros(d)
    if kind == "normal":
        return np.broadcast_to(np.asarray(spec.get("mean", 0.0), dtype=float), (d,)).copy()
    if kind == "point":
        return np.asarray(spec["value"], dtype=float).reshape(-1)
    raise ConfigError(f"unknown pi0 kind {kind!r}")


def build_transitions(config: ExperimentConfig, target: TargetDistribution) -> TransitionPair:
    """Resolve the configured kernel into (step, coupled_step)."""
    if config.kernel == "mixture":
        if not config.mixture_components:
            raise ConfigError("mixture kernel requires mixture_components")
        components = []
        for comp in config.mixture_components:
            sub = KernelSpec(
                target=target,
                proposal_sd=np.asarray(comp.get("proposal_sd", config.proposal_sd), dtype=float),
                kind=comp.get("kernel", "mrth"),
                proposal_coupling=comp.get("coupling", config.coupling),
                eta=comp.get("eta", config.eta),
            )
            components.append((float(comp["weight"]), sub))
        spec = KernelSpec(target=target, kind="mixture", components=tuple(components))
    else:
        spec = KernelSpec(
            target=target,
            proposal_sd=np.asarray(config.proposal_sd, dtype=float),
            kind=config.kernel,
            proposal_coupling=config.coupling,
            eta=config.eta,
        )
    return make_transitions(spec)
