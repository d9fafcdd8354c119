"""Lévy exponents of the supported sheet drivers.

Every driver is described by its exponent ``Psi(xi) = a(xi) + i b(xi)``, with
the convention ``E[exp(i xi dL)] = exp(-area * Psi(xi))`` for the increment
``dL`` of the sheet over a rectangle of the given area.  Under this
convention a Brownian driver with ``drift = d`` has increments with mean
``-d * area``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "AssumptionViolated",
    "Brownian",
    "Poisson",
    "CompoundPoisson",
    "SymmetricStable",
    "ExponentModel",
    "ThetaConfig",
    "exponent_a",
    "exponent_b",
    "exponent",
    "normalization_K",
    "check_assumption",
    "model_from_dict",
    "model_to_dict",
]

# a(xi) below this is treated as zero when checking the a(theta)a(2theta) != 0 hypothesis
A_ZERO_TOL = 1e-12


class AssumptionViolated(ValueError):
    """Raised when a(theta) or a(2 theta) vanishes for the chosen driver."""


@dataclass(frozen=True)
class Brownian:
    sigma: float = 1.0
    drift: float = 0.0
    tag = "brownian"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"Brownian sigma must be > 0, got {self.sigma}")


@dataclass(frozen=True)
class CompoundPoisson:
    """Finitely many jump sizes; ``atoms`` holds ``(size, mass)`` pairs."""

    atoms: tuple[tuple[float, float], ...]
    tag = "compound_poisson"

    def __post_init__(self):
        atoms = tuple((float(s), float(m)) for s, m in self.atoms)
        if not atoms:
            raise ValueError("CompoundPoisson needs at least one atom")
        for size, mass in atoms:
            if size == 0:
                raise ValueError("atom size must be nonzero")
            if not mass > 0:
                raise ValueError("atom mass must be > 0")
        object.__setattr__(self, "atoms", atoms)

    @property
    def total_rate(self) -> float:
        return sum(m for _, m in self.atoms)


@dataclass(frozen=True)
class Poisson:
    """Single-atom compound Poisson driver (jumps of size ``jump`` at ``rate``)."""

    rate: float = 1.0
    jump: float = 1.0
    tag = "poisson"

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"Poisson rate must be > 0, got {self.rate}")
        if self.jump == 0:
            raise ValueError("Poisson jump must be nonzero")

    @property
    def atoms(self) -> tuple[tuple[float, float], ...]:
        return ((float(self.jump), float(self.rate)),)

    @property
    def total_rate(self) -> float:
        return float(self.rate)

    def as_compound(self) -> CompoundPoisson:
        return CompoundPoisson(self.atoms)


@dataclass(frozen=True)
class SymmetricStable:
    """Symmetric alpha-stable driver; ``a(xi) = (scale |xi|)^alpha``."""

    alpha: float = 1.5
    scale: float = 1.0
    tag = "symmetric_stable"

    def __post_init__(self):
        if not 0 < self.alpha < 2:
            raise ValueError(f"alpha must lie in (0, 2), got {self.alpha}")
        if not self.scale > 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")


ExponentModel = Union[Brownian, Poisson, CompoundPoisson, SymmetricStable]


def _atoms(model):
    sizes = np.array([s for s, _ in model.atoms])
    masses = np.array([m for _, m in model.atoms])
    return sizes, masses


def exponent_a(model: ExponentModel, xi):
    """Real part a(xi) of the exponent.  Accepts scalars or arrays."""
    xi_arr = np.asarray(xi, dtype=float)
    if isinstance(model, Brownian):
        out = 0.5 * model.sigma**2 * xi_arr**2
    elif isinstance(model, (Poisson, CompoundPoisson)):
        sizes, masses = _atoms(model)
        out = np.tensordot(1.0 - np.cos(np.multiply.outer(xi_arr, sizes)), masses, axes=([-1], [0]))
    elif isinstance(model, SymmetricStable):
        out = (model.scale * np.abs(xi_arr)) ** model.alpha
    else:
        raise TypeError(f"unsupported model {model!r}")
    return float(out) if np.ndim(out) == 0 else out


def exponent_b(model: ExponentModel, xi):
    """Imaginary part b(xi) of the exponent.  Accepts scalars or arrays."""
    xi_arr = np.asarray(xi, dtype=float)
    if isinstance(model, Brownian):
        out = model.drift * xi_arr
    elif isinstance(model, (Poisson, CompoundPoisson)):
        # Psi(xi) = sum mass * (1 - exp(i xi size)); no compensator, so b is -sum mass sin(xi size)
        sizes, masses = _atoms(model)
        out = -np.tensordot(np.sin(np.multiply.outer(xi_arr, sizes)), masses, axes=([-1], [0]))
    elif isinstance(model, SymmetricStable):
        out = np.zeros_like(xi_arr)
    else:
        raise TypeError(f"unsupported model {model!r}")
    return float(out) if np.ndim(out) == 0 else out


def exponent(model: ExponentModel, xi):
    """Psi(xi) = a(xi) + i b(xi)."""
    return exponent_a(model, xi) + 1j * np.asarray(exponent_b(model, xi))


@dataclass(frozen=True)
class ThetaConfig:
    theta: float
    model: ExponentModel

    def __post_init__(self):
        if not 0 < self.theta < 2 * math.pi:
            raise ValueError(f"theta must lie in (0, 2*pi), got {self.theta}")

    @property
    def a(self) -> float:
        return exponent_a(self.model, self.theta)

    @property
    def b(self) -> float:
        return exponent_b(self.model, self.theta)

    @property
    def psi_abs(self) -> float:
        return math.hypot(self.a, self.b)


def check_assumption(cfg: ThetaConfig) -> None:
    a1 = exponent_a(cfg.model, cfg.theta)
    a2 = exponent_a(cfg.model, 2 * cfg.theta)
    bad = []
    if abs(a1) <= A_ZERO_TOL:
        bad.append(f"a(theta)=a({cfg.theta:g})={a1:g}")
    if abs(a2) <= A_ZERO_TOL:
        bad.append(f"a(2theta)=a({2 * cfg.theta:g})={a2:g}")
    if bad:
        raise AssumptionViolated(
            "a(theta)*a(2*theta) must be nonzero for the "
            f"{cfg.model.tag} driver: " + ", ".join(bad) + " vanishes"
        )


def normalization_K(cfg: ThetaConfig) -> float:
    """K = (a(theta)^2 + b(theta)^2) / (sqrt(2) a(theta))."""
    check_assumption(cfg)
    a, b = cfg.a, cfg.b
    return (a * a + b * b) / (math.sqrt(2.0) * a)


def model_to_dict(model: ExponentModel) -> dict:
    if isinstance(model, Brownian):
        return {"type": "brownian", "sigma": model.sigma, "drift": model.drift}
    if isinstance(model, Poisson):
        return {"type": "poisson", "rate": model.rate, "jump": model.jump}
    if isinstance(model, CompoundPoisson):
        return {"type": "compound_poisson", "atoms": [[s, m] for s, m in model.atoms]}
    if isinstance(model, SymmetricStable):
        return {"type": "symmetric_stable", "alpha": model.alpha, "scale": model.scale}
    raise TypeError(f"unsupported model {model!r}")


_MODEL_FIELDS = {
    "brownian": (Brownian, {"sigma", "drift"}),
    "poisson": (Poisson, {"rate", "jump"}),
    "compound_poisson": (CompoundPoisson, {"atoms"}),
    "symmetric_stable": (SymmetricStable, {"alpha", "scale"}),
}


def model_from_dict(spec: dict) -> ExponentModel:
    """Build a model from a tagged record such as ``{"type": "poisson", "rate": 1}``."""
    if not isinstance(spec, dict) or "type" not in spec:
        raise ValueError("model must be an object with a 'type' field")
    kind = spec["type"]
    if kind not in _MODEL_FIELDS:
        raise ValueError(f"unknown model type {kind!r}; expected one of {sorted(_MODEL_FIELDS)}")
    cls, allowed = _MODEL_FIELDS[kind]
    extra = set(spec) - allowed - {"type"}
    if extra:
        raise ValueError(f"unknown fields for {kind} model: {sorted(extra)}")
    kwargs = {k: v for k, v in spec.items() if k != "type"}
    if kind == "compound_poisson":
        kwargs["atoms"] = tuple(tuple(a) for a in kwargs.get("atoms", ()))
    else:
        kwargs = {k: float(v) for k, v in kwargs.items()}
    return cls(**kwargs)
