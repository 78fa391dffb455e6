"""Torus functions, frequencies, phases and the diagnostics built on them.

Analytic 1-periodic functions are stored as finitely many Fourier modes
with Hermitian symmetry, so evaluations on the real line are real.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np
from scipy.optimize import minimize_scalar

TWO_PI = 2.0 * math.pi

# exact split of a frequency into a coarse part (n * hi is exact for |n| < 2**30)
# and a small remainder
_SPLIT_BITS = 22


class NormalizationWarning(UserWarning):
    """Raised when Fourier modes exceed the exp(-|k|) normalization."""


class FunctionSpecError(ValueError):
    pass


class WeightError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AnalyticTorusFunction:
    """Real-analytic 1-periodic function given by finitely many Fourier modes.

    Parameters
    ----------
    modes : mapping of int -> complex
        Fourier amplitudes.  Missing negative modes are filled by conjugation;
        inconsistent pairs raise ``FunctionSpecError``.
    decay : {"rescale", "strict", "allow"}
        What to do when some ``|c_k| > exp(-|k|)``: rescale the whole function
        (with a warning), raise, or keep the modes as given.
    """

    modes: Mapping[int, complex]
    decay: str = "rescale"
    name: str = ""
    scale_applied: float = field(default=1.0, init=False)
    ks: np.ndarray = field(init=False, repr=False)
    coeffs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        full: dict[int, complex] = {}
        for k, c in self.modes.items():
            k = int(k)
            c = complex(c)
            if k in full and abs(full[k] - c) > 1e-14 * (1 + abs(c)):
                raise FunctionSpecError(f"conflicting amplitude for mode {k}")
            full[k] = c
        for k in list(full):
            c = full[k]
            if k == 0:
                if abs(c.imag) > 1e-14 * (1 + abs(c)):
                    raise FunctionSpecError("mode 0 must be real")
                full[0] = complex(c.real, 0.0)
            elif -k not in full:
                full[-k] = c.conjugate()
            elif abs(full[-k] - c.conjugate()) > 1e-14 * (1 + abs(c)):
                raise FunctionSpecError(f"modes {k} and {-k} are not conjugate")
        full = {k: c for k, c in full.items() if c != 0}
        if not full:
            full = {0: 0j}

        ratio = max(abs(c) * math.exp(abs(k)) for k, c in full.items())
        scale = 1.0
        if ratio > 1.0 + 1e-12:
            if self.decay == "strict":
                raise FunctionSpecError(
                    f"Fourier modes exceed exp(-|k|) by a factor {ratio:.3g}")
            if self.decay == "rescale":
                scale = 1.0 / ratio
                warnings.warn(
                    f"rescaling function {self.name or '<anonymous>'} by {scale:.6g} "
                    "to meet |c_k| <= exp(-|k|)", NormalizationWarning, stacklevel=3)
            elif self.decay != "allow":
                raise FunctionSpecError(f"unknown decay policy {self.decay!r}")

        ks = np.array(sorted(full), dtype=np.int64)
        coeffs = np.array([full[k] * scale for k in ks], dtype=complex)
        object.__setattr__(self, "modes", {int(k): c for k, c in zip(ks, coeffs)})
        object.__setattr__(self, "scale_applied", scale)
        object.__setattr__(self, "ks", ks)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def band(self) -> int:
        return int(np.max(np.abs(self.ks)))

    @property
    def is_normalized(self) -> bool:
        return bool(np.all(np.abs(self.coeffs) <= np.exp(-np.abs(self.ks)) * (1 + 1e-12)))

    def __call__(self, t):
        return evaluate(self, t)

    def _combine(self, other, alpha, beta):
        out: dict[int, complex] = {}
        for k, c in self.modes.items():
            out[k] = out.get(k, 0) + alpha * c
        for k, c in other.modes.items():
            out[k] = out.get(k, 0) + beta * c
        return AnalyticTorusFunction(out, decay="allow")

    def __add__(self, other):
        return self._combine(other, 1.0, 1.0)

    def __sub__(self, other):
        return self._combine(other, 1.0, -1.0)

    def __mul__(self, alpha):
        alpha = float(alpha)
        return AnalyticTorusFunction({k: alpha * c for k, c in self.modes.items()},
                                     decay="allow")

    __rmul__ = __mul__

    def to_table(self) -> dict[str, list[float]]:
        return {str(k): [c.real, c.imag] for k, c in self.modes.items()}


def evaluate(f: AnalyticTorusFunction, t):
    """Evaluate ``sum_k c_k exp(2 pi i k t)``; scalar in, scalar out."""
    t_arr = np.asarray(t, dtype=float)
    pos = f.ks > 0
    out = np.full(t_arr.shape, f.modes.get(0, 0j).real)
    for k, c in zip(f.ks[pos], f.coeffs[pos]):
        phase = TWO_PI * k * t_arr
        out = out + 2.0 * (c.real * np.cos(phase) - c.imag * np.sin(phase))
    if np.ndim(t) == 0:
        return float(out)
    return out


def builtin_function(name: str, value: float = 1.0) -> AnalyticTorusFunction:
    """Named test functions used throughout the calibration runs.

    These are exempt from the exp(-|k|) normalization: the standard
    examples (cos, sin^2) do not satisfy it and rescaling them would change
    the model.
    """
    if name == "cos":
        return AnalyticTorusFunction({1: 0.5, -1: 0.5}, decay="allow", name="cos")
    if name == "sin2":
        # sin^2(2 pi t) = 1/2 - cos(4 pi t)/2
        return AnalyticTorusFunction({0: 0.5, 2: -0.25, -2: -0.25}, decay="allow",
                                     name="sin2")
    if name == "one_plus_cos":
        return AnalyticTorusFunction({0: 1.0, 1: 0.5, -1: 0.5}, decay="allow",
                                     name="one_plus_cos")
    if name == "const":
        return AnalyticTorusFunction({0: float(value)}, decay="allow", name="const")
    raise FunctionSpecError(f"unknown builtin function {name!r}")


def function_from_spec(spec) -> AnalyticTorusFunction:
    """Build a function from a config entry.

    Accepted forms: ``"cos"``, ``{"builtin": "const", "value": 2}`` or
    ``{"modes": {"1": [0.1, 0.0], ...}, "decay": "strict"}``.
    """
    if isinstance(spec, str):
        return builtin_function(spec)
    if not isinstance(spec, Mapping):
        raise FunctionSpecError(f"function spec must be a name or a table, got {spec!r}")
    if "builtin" in spec:
        return builtin_function(spec["builtin"], spec.get("value", 1.0))
    if "modes" in spec:
        modes = {}
        for k, val in spec["modes"].items():
            try:
                re, im = val
            except (TypeError, ValueError):
                raise FunctionSpecError(f"mode {k}: expected [re, im], got {val!r}")
            modes[int(k)] = complex(float(re), float(im))
        return AnalyticTorusFunction(modes, decay=spec.get("decay", "rescale"),
                                     name=spec.get("name", ""))
    raise FunctionSpecError("function spec needs 'builtin' or 'modes'")


# -- Fourier truncation -------------------------------------------------------

@dataclass(frozen=True)
class Truncation:
    polynomial: AnalyticTorusFunction
    band: int
    error_bound: float
    geometric_bound: float
    target: float
    target_met: bool


def fourier_truncate(f: AnalyticTorusFunction, N: int, cap: int | None = None) -> Truncation:
    """Trigonometric polynomial of degree <= min(N**4, cap) close to ``f``.

    ``error_bound`` is the sum of the dropped amplitudes (a certified sup-norm
    bound for the stored function); ``geometric_bound`` is the tail
    ``sum_{|k|>band} exp(-|k|)`` that holds for any normalized function.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    band = N ** 4
    if cap is not None:
        band = min(band, int(cap))
    keep = np.abs(f.ks) <= band
    dropped = float(np.sum(np.abs(f.coeffs[~keep])))
    poly = AnalyticTorusFunction({int(k): c for k, c in zip(f.ks[keep], f.coeffs[keep])},
                                 decay="allow", name=f.name)
    geometric = 2.0 * math.exp(-(band + 1)) / (1.0 - math.exp(-1.0))
    # e^{-N^3} underflows to 0.0 for N >= 9; a zero dropped sum still meets it
    target = math.exp(-float(N) ** 3)
    return Truncation(poly, band, dropped, geometric, target, dropped <= target)


# -- frequencies and phases ---------------------------------------------------

@dataclass(frozen=True)
class FrequencyVector:
    omega1: float
    omega2: float
    dc_constant: float = 1e-3
    dc_exponent: float = 3.0

    def __post_init__(self):
        for name in ("omega1", "omega2"):
            val = getattr(self, name)
            if not (0.0 < val < 1.0) or not math.isfinite(val):
                raise ValueError(f"{name} must lie in (0, 1), got {val!r}")
        if self.dc_constant <= 0:
            raise ValueError("dc_constant must be positive")
        if self.dc_exponent < 3:
            raise ValueError("dc_exponent must be at least 3")

    @property
    def as_array(self) -> np.ndarray:
        return np.array([self.omega1, self.omega2])


@dataclass(frozen=True)
class Phase:
    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x) % 1.0)
        object.__setattr__(self, "y", float(self.y) % 1.0)


def golden_frequency() -> FrequencyVector:
    """The calibration frequency ((sqrt 5 - 1)/2, sqrt 2 - 1)."""
    return FrequencyVector((math.sqrt(5.0) - 1.0) / 2.0, math.sqrt(2.0) - 1.0)


def _frac_multiple(omega: float, n):
    """Fractional part of n*omega with compensated splitting."""
    n = np.asarray(n, dtype=np.int64)
    scale = float(1 << _SPLIT_BITS)
    hi = math.floor(omega * scale) / scale
    lo = omega - hi
    nf = n.astype(float)
    a = nf * hi
    a = a - np.floor(a)
    b = nf * lo
    b = b - np.floor(b)
    s = a + b
    return s - np.floor(s)


def rotate(t: float, omega: float, n):
    """``t + n*omega mod 1`` for integer (array) n."""
    s = t + _frac_multiple(omega, n)
    s = s - np.floor(s)
    # s can round up to exactly 1.0
    return np.where(s >= 1.0, 0.0, s)


def orbit(p: Phase, omega: FrequencyVector, n: int) -> Phase:
    x = rotate(p.x, omega.omega1, n)
    y = rotate(p.y, omega.omega2, n)
    return Phase(float(x), float(y))


def orbit_exact(p: Phase, omega: FrequencyVector, n: int) -> tuple[float, float]:
    """Rational-arithmetic reference for ``orbit`` (slow)."""
    out = []
    for t, w in ((p.x, omega.omega1), (p.y, omega.omega2)):
        s = Fraction(t) + n * Fraction(w)
        out.append(float(s - math.floor(s)))
    return out[0], out[1]


def torus_distance(a, b):
    """Distance to the nearest integer of ``a - b``."""
    d = np.abs(np.asarray(a, dtype=float) - b) % 1.0
    return np.minimum(d, 1.0 - d)


# -- Diophantine diagnostics --------------------------------------------------

@dataclass(frozen=True)
class DiophantineMargin:
    worst_l: tuple[int, int]
    margin: float
    radius: int
    exponent: float
    certified: bool


def diophantine_margin(omega: FrequencyVector, L: int, exponent: float | None = None
                       ) -> DiophantineMargin:
    """Exhaustive scan of ``||l.omega|| * |l|**A`` over 0 < |l|_1 <= L.

    Only one representative of each pair +-l is visited since both give the
    same value.
    """
    if L < 1:
        raise ValueError("radius must be at least 1")
    A = omega.dc_exponent if exponent is None else exponent
    l1 = np.arange(0, L + 1)
    rows = []
    for a in l1:
        rest = L - a
        l2 = np.arange(-rest, rest + 1) if a > 0 else np.arange(1, rest + 1)
        rows.append(np.column_stack([np.full(l2.shape, a), l2]))
    ls = np.concatenate(rows)
    norm1 = np.abs(ls).sum(axis=1).astype(float)
    phase = ls[:, 0] * omega.omega1 + ls[:, 1] * omega.omega2
    dist = np.abs(phase - np.round(phase))
    vals = dist * norm1 ** A
    # ties go to the shortest l in the Euclidean sense, then to larger l2
    i = int(np.lexsort((-ls[:, 1], np.hypot(ls[:, 0], ls[:, 1]), vals))[0])
    margin = float(vals[i])
    return DiophantineMargin((int(ls[i, 0]), int(ls[i, 1])), margin, L, A,
                             margin > omega.dc_constant)


def weight_orbit_margin(y0: float, omega2: float, zeros, K: int, A: float = 3.0):
    """Smallest ``min_i ||y0 + k omega2 - y_i|| * |k|**A`` over 1 <= |k| <= K.

    This is the second Diophantine condition along the orbit; the anchor
    site ``k = 0`` is excluded.
    """
    k = np.concatenate([np.arange(-K, 0), np.arange(1, K + 1)])
    ys = rotate(y0, omega2, k)
    d = np.min(np.stack([torus_distance(ys, z) for z in zeros]), axis=0)
    vals = d * np.abs(k).astype(float) ** A
    i = int(np.argmin(vals))
    return int(k[i]), float(vals[i])


# -- weight zeros -------------------------------------------------------------

@dataclass(frozen=True)
class WeightFunction:
    base: AnalyticTorusFunction
    zeros: tuple[tuple[float, int], ...]
    max_order: int
    lower_constant: float
    grid_resolution: float

    def __call__(self, t):
        return evaluate(self.base, t)

    @property
    def zero_locations(self) -> list[float]:
        return [z for z, _ in self.zeros]

    def lower_bound(self, y):
        """``c_w * min_i ||y - y_i||**C_w`` (infinite-free: 1.0 distance if no zeros)."""
        if not self.zeros:
            return np.full(np.shape(y), self.lower_constant)
        d = np.min(np.stack([torus_distance(y, z) for z in self.zero_locations]), axis=0)
        return self.lower_constant * d ** self.max_order


def _zero_order(w: AnalyticTorusFunction, y0: float, r0: float = 1e-2) -> int:
    radii = r0 * 0.5 ** np.arange(4)
    slopes = []
    for side in (1.0, -1.0):
        vals = np.abs(np.asarray(evaluate(w, y0 + side * radii)))
        if np.any(vals <= 0):
            continue
        s = np.diff(np.log(vals)) / np.diff(np.log(radii))
        slopes.extend(s.tolist())
    if not slopes:
        return 1
    slope = float(np.mean(slopes))
    lo = math.floor(slope)
    # round to nearest integer, ties toward the larger order
    order = lo + 1 if slope - lo >= 0.5 else lo
    return max(order, 1)


def weight_zero_analysis(w: AnalyticTorusFunction, grid_resolution: float = 1e-4,
                         zero_tol: float = 1e-10) -> WeightFunction:
    """Locate the real zeros of a nonnegative weight and fit the lower bound.

    Zeros are grid local minima whose refined value is below
    ``zero_tol * max(w)``.  The order of each zero comes from log-log slopes
    over dyadic neighbourhoods; ``c_w`` is the grid minimum of
    ``w(y) / min_i ||y - y_i||**C_w`` shrunk by 1e-9 relative so the bound
    survives rounding at the minimizer.
    """
    n = int(round(1.0 / grid_resolution))
    grid = np.arange(n) / n
    vals = np.asarray(evaluate(w, grid))
    scale = float(np.max(np.abs(vals)))
    if scale == 0.0:
        raise WeightError("weight vanishes identically")
    if np.min(vals) < -1e-12 * scale:
        j = int(np.argmin(vals))
        raise WeightError(f"weight is negative at y={grid[j]:.6g} (value {vals[j]:.3g})")

    prev = np.roll(vals, 1)
    nxt = np.roll(vals, -1)
    cand = np.nonzero((vals <= prev) & (vals <= nxt) & (vals < 1e-3 * scale))[0]
    h = 1.0 / n
    zeros: list[tuple[float, int]] = []
    for j in cand:
        y_best, f_best = grid[j], abs(vals[j])
        res = minimize_scalar(lambda t: evaluate(w, t), bounds=(grid[j] - h, grid[j] + h),
                              method="bounded", options={"xatol": 1e-13})
        if res.success and abs(res.fun) < f_best:
            y_best, f_best = float(res.x) % 1.0, abs(float(res.fun))
        if f_best > zero_tol * scale:
            continue
        if any(torus_distance(y_best, z) < 2 * h for z, _ in zeros):
            continue
        zeros.append((float(y_best), _zero_order(w, y_best)))
    zeros.sort()

    if zeros:
        C_w = max(m for _, m in zeros)
        d = np.min(np.stack([torus_distance(grid, z) for z, _ in zeros]), axis=0)
        mask = d > 0
        c_w = float(np.min(np.clip(vals[mask], 0.0, None) / d[mask] ** C_w))
    else:
        C_w = 1
        c_w = float(np.min(vals))
    c_w *= 1.0 - 1e-9
    if zeros and c_w <= 0:
        raise WeightError("could not establish a positive lower constant")
    return WeightFunction(w, tuple(zeros), C_w, c_w, grid_resolution)


# -- samplers and sublevel measure --------------------------------------------

@dataclass(frozen=True)
class GridSampler:
    """Cell centres of a ``resolution x resolution`` grid on the torus."""

    resolution: int = 2048

    def points(self):
        t = (np.arange(self.resolution) + 0.5) / self.resolution
        xs, ys = np.meshgrid(t, t, indexing="ij")
        return xs.ravel(), ys.ravel()

    def describe(self) -> dict:
        return {"kind": "grid", "resolution": self.resolution}


@dataclass(frozen=True)
class MonteCarloSampler:
    count: int = 1000
    seed: int = 0

    def points(self):
        rng = np.random.default_rng(self.seed)
        pts = rng.random((self.count, 2))
        return pts[:, 0], pts[:, 1]

    def describe(self) -> dict:
        return {"kind": "mc", "count": self.count, "seed": self.seed}


def sampler_from_spec(spec) -> GridSampler | MonteCarloSampler:
    kind = spec.get("kind", "grid")
    if kind == "grid":
        return GridSampler(int(spec.get("resolution", 2048)))
    if kind == "mc":
        return MonteCarloSampler(int(spec.get("count", 1000)), int(spec.get("seed", 0)))
    raise ValueError(f"unknown sampler kind {kind!r}")


@dataclass(frozen=True)
class MeasureEstimate:
    measure: float
    stderr: float
    sampler: dict


def _row_fraction(g: np.ndarray) -> np.ndarray:
    """Fraction of each periodic row where the piecewise-linear ``g`` is negative."""
    g0 = g
    g1 = np.roll(g, -1, axis=-1)
    both = (g0 < 0) & (g1 < 0)
    frac = both.astype(float)
    cross = (g0 < 0) != (g1 < 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = g0 / (g0 - g1)
    part = np.where(g0 < 0, t, 1.0 - t)
    frac = frac + np.where(cross, part, 0.0)
    return frac.mean(axis=-1)


def sublevel_measure(v: AnalyticTorusFunction, w: AnalyticTorusFunction, ratio: float,
                     eps: float, sampler: GridSampler | MonteCarloSampler | None = None
                     ) -> MeasureEstimate:
    """Measure of ``{(x, y): |v(x) - ratio * w(y)| < eps}`` on the torus.

    The grid sampler integrates each ``y``-row exactly for the piecewise
    linear interpolant in ``x`` and reports the change against the
    half-resolution grid as its error estimate.  The Monte Carlo sampler
    reports the binomial standard error.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    sampler = GridSampler() if sampler is None else sampler
    if isinstance(sampler, MonteCarloSampler):
        xs, ys = sampler.points()
        hit = np.abs(np.asarray(evaluate(v, xs)) - ratio * np.asarray(evaluate(w, ys))) < eps
        p = float(hit.mean())
        return MeasureEstimate(p, math.sqrt(max(p * (1 - p), 0.0) / hit.size), sampler.describe())

    def at(res):
        t = np.arange(res) / res
        vx = np.asarray(evaluate(v, t))
        wy = np.asarray(evaluate(w, (np.arange(res) + 0.5) / res))
        total = 0.0
        for chunk in np.array_split(np.arange(res), max(1, res // 256)):
            g = np.abs(vx[None, :] - ratio * wy[chunk, None]) - eps
            total += float(_row_fraction(g).sum())
        return total / res

    m = at(sampler.resolution)
    m_half = at(max(sampler.resolution // 2, 2))
    return MeasureEstimate(m, abs(m - m_half), sampler.describe())
