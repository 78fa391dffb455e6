"""Finite restrictions of the weighted operator and its Jacobi form."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .model import (AnalyticTorusFunction, FrequencyVector, Phase, WeightFunction,
                    evaluate, rotate)


class DegenerateWeightError(ValueError):
    """A weight sample fell below the positivity floor."""

    def __init__(self, site: int, value: float, floor: float):
        super().__init__(f"weight {value:.3e} at site {site} is below floor {floor:.3e}")
        self.site = site
        self.value = value
        self.floor = floor


@dataclass(frozen=True)
class LatticeInterval:
    a: int
    b: int

    def __post_init__(self):
        if self.b < self.a:
            raise ValueError(f"empty interval [{self.a}, {self.b}]")

    @classmethod
    def centered(cls, N: int, center: int = 0) -> "LatticeInterval":
        return cls(center - N, center + N)

    @property
    def size(self) -> int:
        return self.b - self.a + 1

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.a, self.b + 1)

    def shift(self, k: int) -> "LatticeInterval":
        return LatticeInterval(self.a + k, self.b + k)

    def contains(self, other: "LatticeInterval") -> bool:
        return self.a <= other.a and other.b <= self.b

    def index(self, n: int) -> int:
        return n - self.a


@dataclass(frozen=True, eq=False)
class TridiagonalMatrix:
    diagonal: np.ndarray
    off_diagonal: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.diagonal, dtype=float)
        e = np.asarray(self.off_diagonal, dtype=float)
        if d.ndim != 1 or e.ndim != 1 or e.size != max(d.size - 1, 0):
            raise ValueError("off-diagonal must have length size - 1")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(e))):
            raise ValueError("non-finite matrix entry")
        d.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "diagonal", d)
        object.__setattr__(self, "off_diagonal", e)

    @property
    def size(self) -> int:
        return self.diagonal.size

    def to_dense(self) -> np.ndarray:
        return (np.diag(self.diagonal) + np.diag(self.off_diagonal, 1)
                + np.diag(self.off_diagonal, -1))

    def matvec(self, u):
        u = np.asarray(u)
        out = self.diagonal * u
        out[:-1] += self.off_diagonal * u[1:]
        out[1:] += self.off_diagonal * u[:-1]
        return out

    def shifted(self, E: float) -> "TridiagonalMatrix":
        return TridiagonalMatrix(self.diagonal - E, self.off_diagonal)

    def scaled(self, s: float) -> "TridiagonalMatrix":
        return TridiagonalMatrix(self.diagonal * s, self.off_diagonal * s)


@dataclass(frozen=True)
class ModelParameters:
    """Coupling, energy, potential, weight, frequency and phase."""

    lam: float
    E: float
    v: AnalyticTorusFunction
    w: AnalyticTorusFunction | WeightFunction
    omega: FrequencyVector
    phase: Phase

    def __post_init__(self):
        if not (math.isfinite(self.lam) and math.isfinite(self.E)):
            raise ValueError("coupling and energy must be finite")

    @property
    def weight(self) -> AnalyticTorusFunction:
        return self.w.base if isinstance(self.w, WeightFunction) else self.w

    def with_energy(self, E: float) -> "ModelParameters":
        return replace(self, E=float(E))

    def with_phase(self, x: float, y: float) -> "ModelParameters":
        return replace(self, phase=Phase(x, y))

    def potential_samples(self, sites) -> np.ndarray:
        return np.asarray(evaluate(self.v, rotate(self.phase.x, self.omega.omega1, sites)))

    def weight_samples(self, sites) -> np.ndarray:
        return np.asarray(evaluate(self.weight, rotate(self.phase.y, self.omega.omega2, sites)))


def assemble_H(p: ModelParameters, interval: LatticeInterval) -> TridiagonalMatrix:
    """``R (lam V + Delta - E W) R`` with hopping -1."""
    sites = interval.sites
    diag = p.lam * p.potential_samples(sites) - p.E * p.weight_samples(sites)
    return TridiagonalMatrix(diag, -np.ones(interval.size - 1))


def assemble_H0(p: ModelParameters, interval: LatticeInterval) -> TridiagonalMatrix:
    return assemble_H(replace(p, E=0.0), interval)


def weight_diagonal(p: ModelParameters, interval: LatticeInterval) -> np.ndarray:
    return p.weight_samples(interval.sites)


def check_weight_floor(w_samples, interval: LatticeInterval, floor: float):
    if floor <= 0:
        raise ValueError("weight floor must be positive")
    bad = np.nonzero(w_samples < floor)[0]
    if bad.size:
        j = int(bad[np.argmin(w_samples[bad])])
        raise DegenerateWeightError(interval.a + j, float(w_samples[j]), floor)


def assemble_jacobi(p: ModelParameters, interval: LatticeInterval,
                    floor: float = 1e-8) -> TridiagonalMatrix:
    """Restriction of ``W^{-1/2} H_0 W^{-1/2}``; the energy in ``p`` is ignored."""
    sites = interval.sites
    w = p.weight_samples(sites)
    check_weight_floor(w, interval, floor)
    diag = p.lam * p.potential_samples(sites) / w
    off = -1.0 / np.sqrt(w[:-1] * w[1:])
    return TridiagonalMatrix(diag, off)


def weighted_inner_product(u, h, w_samples) -> float:
    u = np.asarray(u, dtype=float)
    h = np.asarray(h, dtype=float)
    w_samples = np.asarray(w_samples, dtype=float)
    if not (u.shape == h.shape == w_samples.shape):
        raise ValueError(f"dimension mismatch: {u.shape}, {h.shape}, {w_samples.shape}")
    return float(np.sum(u * h * w_samples))


def scaled_H(p: ModelParameters, interval: LatticeInterval,
             regime: str = "coupling") -> TridiagonalMatrix:
    """``H / lam`` (regime 'coupling') or ``H / E`` (regime 'energy')."""
    if regime == "coupling":
        s = p.lam
    elif regime == "energy":
        s = p.E
    else:
        raise ValueError(f"unknown regime {regime!r}")
    if s == 0:
        raise ValueError(f"scaling parameter for regime {regime!r} is zero")
    return assemble_H(p, interval).scaled(1.0 / s)
