"""Finite-volume Green's functions and numerical checks of the pasting lemmas."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

from .operator import LatticeInterval, ModelParameters, TridiagonalMatrix, assemble_H

EPS = np.finfo(float).eps
SINGULAR_CONDITION = 1.0 / (10.0 * EPS)
LOG_FLOOR = 1e-300
DENSE_NORM_LIMIT = 5000


class SingularOperatorError(ArithmeticError):
    """The restricted operator is numerically singular (E hits its spectrum)."""

    def __init__(self, condition: float, interval: LatticeInterval | None = None):
        super().__init__(f"restricted operator is numerically singular "
                         f"(condition estimate {condition:.3e})")
        self.condition = condition
        self.interval = interval


class HypothesisError(ValueError):
    """An instance does not satisfy a lemma's hypotheses."""


class CoveringError(HypothesisError):
    def __init__(self, k: int):
        super().__init__(f"site {k} is not covered by any sub-interval")
        self.site = k


class LemmaFalsified(AssertionError):
    """A lemma's conclusion failed although its hypotheses hold."""


@dataclass(frozen=True, eq=False)
class GreensMatrix:
    entries: np.ndarray
    operator_norm: float
    interval: LatticeInterval
    condition_estimate: float

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def hs_norm(self) -> float:
        return float(np.linalg.norm(self.entries))

    def at(self, m: int, n: int) -> float:
        """Entry indexed by lattice sites rather than array positions."""
        return float(self.entries[m - self.interval.a, n - self.interval.a])


def operator_norm(A: np.ndarray, tol: float = 1e-6, maxiter: int = 1000) -> float:
    """Spectral norm of a symmetric matrix; power iteration above 5000 sites."""
    if A.shape[0] <= DENSE_NORM_LIMIT:
        return float(np.max(np.abs(np.linalg.eigvalsh(A))))
    x = np.ones(A.shape[0]) / math.sqrt(A.shape[0])
    est = 0.0
    for _ in range(maxiter):
        y = A @ x
        new = float(np.linalg.norm(y))
        if new == 0.0:
            return 0.0
        x = y / new
        if abs(new - est) <= tol * new:
            return new
        est = new
    return est


def _factor_solve_identity(T: TridiagonalMatrix) -> np.ndarray:
    d, e = T.diagonal, T.off_diagonal
    n = d.size
    if n == 1:
        if d[0] == 0.0:
            raise SingularOperatorError(math.inf)
        return np.array([[1.0 / d[0]]])
    rhs = np.eye(n)
    # definite case: LDL^T without pivoting is stable
    for sign in (1.0, -1.0):
        dd, ee, info = lapack.dpttrf(sign * d, sign * e)
        if info == 0:
            x, info = lapack.dpttrs(dd, ee, rhs)
            if info == 0:
                return sign * x
    # indefinite: Gaussian elimination with partial pivoting
    *_, x, info = lapack.dgtsv(e.copy(), d.copy(), e.copy(), rhs)
    if info != 0:
        raise SingularOperatorError(math.inf)
    return x


def invert_tridiagonal(T: TridiagonalMatrix, interval: LatticeInterval | None = None
                       ) -> GreensMatrix:
    if interval is None:
        interval = LatticeInterval(0, T.size - 1)
    if interval.size != T.size:
        raise ValueError("interval size does not match the matrix")
    try:
        G = _factor_solve_identity(T)
    except SingularOperatorError as exc:
        raise SingularOperatorError(exc.condition, interval) from None
    if not np.all(np.isfinite(G)):
        raise SingularOperatorError(math.inf, interval)
    G = 0.5 * (G + G.T)
    h1 = np.abs(T.diagonal).copy()
    h1[:-1] += np.abs(T.off_diagonal)
    h1[1:] += np.abs(T.off_diagonal)
    cond = float(np.max(h1) * np.max(np.abs(G).sum(axis=0)))
    if not cond < SINGULAR_CONDITION:
        raise SingularOperatorError(cond, interval)
    return GreensMatrix(G, operator_norm(G), interval, cond)


def greens(p: ModelParameters, interval: LatticeInterval) -> GreensMatrix:
    """``(H_Lambda)^{-1}`` for the restriction of ``lam V + Delta - E W``."""
    return invert_tridiagonal(assemble_H(p, interval), interval)


def greens_from_entries(entries, interval: LatticeInterval | None = None) -> GreensMatrix:
    """Wrap an explicit matrix (used for synthetic checks)."""
    entries = np.asarray(entries, dtype=float)
    if interval is None:
        interval = LatticeInterval(0, entries.shape[0] - 1)
    return GreensMatrix(entries, operator_norm(0.5 * (entries + entries.T)), interval, math.nan)


# -- goodness -----------------------------------------------------------------

@dataclass(frozen=True)
class GoodnessVerdict:
    norm_ok: bool
    decay_ok: bool
    b: float
    gamma: float
    scale: float
    prefactor: float
    cutoff: float
    norm: float
    norm_bound: float
    worst_pair: tuple[int, int] | None
    worst_ratio: float

    @property
    def good(self) -> bool:
        return self.norm_ok and self.decay_ok

    def as_dict(self) -> dict:
        return {
            "norm_ok": self.norm_ok, "decay_ok": self.decay_ok, "good": self.good,
            "b": self.b, "gamma": self.gamma, "scale": self.scale,
            "prefactor": self.prefactor, "cutoff": self.cutoff, "norm": self.norm,
            "norm_bound": self.norm_bound,
            "worst_pair": list(self.worst_pair) if self.worst_pair else None,
            "worst_ratio": self.worst_ratio,
        }


def _distance_matrix(n: int) -> np.ndarray:
    idx = np.arange(n)
    return np.abs(idx[:, None] - idx[None, :])


def verify_ldt_bounds(G: GreensMatrix, b: float, gamma: float, scale: float | None = None,
                      prefactor: float = 10.0, cutoff: float | None = None) -> GoodnessVerdict:
    """Check ``||G|| < exp(scale**b)`` and ``|G(m,n)| < prefactor exp(-gamma |m-n|)``.

    The off-diagonal bound is only required for ``|m-n| > cutoff``, by
    default ``scale/10``.  For ``G_N`` on ``[-N, N]`` the scale is ``N``.
    """
    if not (0 < b < 1):
        raise ValueError("b must lie in (0, 1)")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if scale is None:
        scale = (G.size - 1) / 2 if G.size > 1 else 1.0
    if cutoff is None:
        cutoff = scale / 10.0
    norm_bound = math.exp(scale ** b)
    norm_ok = G.operator_norm < norm_bound
    dist = _distance_matrix(G.size)
    region = dist > cutoff
    worst_pair = None
    worst_ratio = 0.0
    if np.any(region):
        with np.errstate(divide="ignore"):
            log_ratio = np.where(region, np.log(np.abs(G.entries) + 0.0)
                                 + gamma * dist - math.log(prefactor), -np.inf)
        i, j = np.unravel_index(int(np.argmax(log_ratio)), log_ratio.shape)
        worst_ratio = float(np.exp(min(log_ratio[i, j], 700.0)))
        worst_pair = (int(i) + G.interval.a, int(j) + G.interval.a)
        decay_ok = bool(log_ratio[i, j] < 0.0)
    else:
        decay_ok = True
    return GoodnessVerdict(bool(norm_ok), decay_ok, b, gamma, float(scale), prefactor,
                           float(cutoff), G.operator_norm, norm_bound, worst_pair, worst_ratio)


# -- decay fits ---------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    rate: float
    prefactor: float
    residual: float
    cutoff: float
    n_points: int
    clamped: int
    reliable: bool

    def as_dict(self) -> dict:
        return {"rate": self.rate, "prefactor": self.prefactor, "residual": self.residual,
                "cutoff": self.cutoff, "n_points": self.n_points, "clamped": self.clamped,
                "reliable": self.reliable}


class DegenerateFitError(ValueError):
    pass


def fit_log_linear(dist, log_amp, cutoff: float, clamped: int = 0) -> DecayFit:
    """Least-squares fit ``log_amp ~ log(a) - rate * dist``."""
    dist = np.asarray(dist, dtype=float)
    log_amp = np.asarray(log_amp, dtype=float)
    if dist.size < 5:
        raise DegenerateFitError(f"only {dist.size} points in the fit region")
    A = np.column_stack([np.ones_like(dist), -dist])
    coef, *_ = np.linalg.lstsq(A, log_amp, rcond=None)
    resid = float(np.max(np.abs(A @ coef - log_amp)))
    rate = float(coef[1])
    span = float(np.ptp(dist))
    # at least one e-fold of decay across the region, and a residual small against it
    reliable = rate * span >= 1.0 and resid <= 0.1 * rate * span and clamped == 0
    return DecayFit(rate, float(math.exp(coef[0])), resid, cutoff, int(dist.size),
                    clamped, bool(reliable))


def decay_fit(G: GreensMatrix, cutoff: float | None = None) -> DecayFit:
    """Fit ``|G(m,n)| ~ a exp(-rate |m-n|)`` over ``|m-n| > size/10``."""
    if cutoff is None:
        cutoff = G.size / 10.0
    dist = _distance_matrix(G.size)
    mask = dist > cutoff
    vals = np.abs(G.entries[mask])
    clamped = int(np.sum(vals < LOG_FLOOR))
    vals = np.maximum(vals, LOG_FLOOR)
    return fit_log_linear(dist[mask], np.log(vals), cutoff, clamped)


# -- perturbation lemma -------------------------------------------------------

@dataclass(frozen=True)
class PerturbationVerdict:
    condition_value: float
    condition_ok: bool
    norm_ok: bool
    decay_ok: bool
    perturbed_norm: float
    worst_decay_ratio: float

    @property
    def conclusions_hold(self) -> bool:
        return self.norm_ok and self.decay_ok


def perturbation_verify(D, D_prime, S, B: float, K: float, gamma: float, a: float,
                        eps: float, strict: bool = True) -> PerturbationVerdict:
    """Check one instance of the diagonal perturbation lemma.

    ``S`` is the off-diagonal of the common tridiagonal part.  Hypotheses
    (``||G|| < B``, off-diagonal decay with ``a, gamma`` beyond ``K``,
    ``|D' - D| < eps`` and ``B, K >= 1``) are checked first and raise
    ``HypothesisError``.  When the smallness condition holds but a
    conclusion fails, ``LemmaFalsified`` is raised unless ``strict`` is off.
    """
    D = np.asarray(D, dtype=float)
    D_prime = np.asarray(D_prime, dtype=float)
    S = np.asarray(S, dtype=float)
    n = D.size
    if D_prime.size != n or S.size != n - 1:
        raise ValueError("inconsistent dimensions")
    if B < 1 or K < 1:
        raise HypothesisError("B and K must be at least 1")
    G = invert_tridiagonal(TridiagonalMatrix(D, S))
    if not G.operator_norm < B:
        raise HypothesisError(f"||G|| = {G.operator_norm:.4g} is not below B = {B:.4g}")
    dist = _distance_matrix(n)
    far = dist > K
    bound = a * np.exp(-gamma * dist)
    if np.any(far & (np.abs(G.entries) >= bound)):
        raise HypothesisError("unperturbed Green's function violates the decay hypothesis")
    if not np.all(np.abs(D_prime - D) < eps) and eps > 0:
        raise HypothesisError("diagonal perturbation is not below eps")
    if eps == 0 and np.any(D_prime != D):
        raise HypothesisError("diagonal perturbation is not below eps")

    cond_value = eps * n * B ** 2 * math.exp(2 * gamma * K)
    cond_ok = cond_value < 0.5
    Gp = invert_tridiagonal(TridiagonalMatrix(D_prime, S))
    norm_ok = Gp.operator_norm < 2 * B
    with np.errstate(divide="ignore"):
        ratio = np.where(far, np.abs(Gp.entries) / ((a + 1) * np.exp(-gamma * dist)), 0.0)
    worst = float(np.max(ratio)) if np.any(far) else 0.0
    decay_ok = worst < 1.0
    verdict = PerturbationVerdict(cond_value, cond_ok, bool(norm_ok), bool(decay_ok),
                                  Gp.operator_norm, worst)
    if strict and cond_ok and not verdict.conclusions_hold:
        raise LemmaFalsified(f"perturbation lemma conclusion failed: {verdict}")
    return verdict


# -- coupling (pasting) lemma -------------------------------------------------

@dataclass(frozen=True)
class PasteVerdict:
    interval: LatticeInterval
    sub_scale: int
    covering_ok: bool
    hypotheses_ok: bool
    norm_ok: bool
    decay_ok: bool
    norm: float
    norm_bound: float
    worst_pair: tuple[int, int] | None
    worst_ratio: float

    @property
    def conclusions_hold(self) -> bool:
        return self.norm_ok and self.decay_ok


def coupling_goodness(G: GreensMatrix, M: float, b: float) -> GoodnessVerdict:
    """Sub-interval goodness used by the pasting lemma.

    ``||G|| <= exp(M**b)`` and ``|G(n1,n2)| <= 10 exp(-|n1-n2|/2)`` beyond ``M/10``.
    """
    return verify_ldt_bounds(G, b, 0.5, scale=M, prefactor=10.0, cutoff=M / 10.0)


def uncovered_site(I: LatticeInterval, subs, M: float) -> int | None:
    for k in range(I.a, I.b + 1):
        lo = max(math.ceil(k - M / 4), I.a)
        hi = min(math.floor(k + M / 4), I.b)
        if not any(s.a <= lo and hi <= s.b for s in subs):
            return k
    return None


def covering_windows(I: LatticeInterval, M: int, stride: int | None = None):
    """Size-``M`` windows inside ``I`` whose quarter-cores cover every site."""
    if M >= I.size:
        return [I]
    if stride is None:
        stride = max(1, M // 4)
    starts = list(range(I.a, I.b - M + 2, stride))
    if starts[-1] != I.b - M + 1:
        starts.append(I.b - M + 1)
    return [LatticeInterval(s, s + M - 1) for s in starts]


def paste_intervals(p: ModelParameters, I: LatticeInterval, sub_reports, M: int,
                    b: float, strict: bool = True) -> PasteVerdict:
    """Check the pasting lemma on ``I`` from good size-``M`` sub-intervals.

    ``sub_reports`` is a list of ``(LatticeInterval, GoodnessVerdict)``.
    The covering condition and the sub-interval goodness are hypotheses;
    the conclusions ``||G_I|| <= e^M`` and ``|G_I(n1,n2)| <= e^{-|n1-n2|/4}``
    for ``|n1-n2| > |I|/10`` are checked against a direct inversion.
    """
    subs = [s for s, _ in sub_reports]
    for s in subs:
        if not I.contains(s):
            raise HypothesisError(f"sub-interval {s} is not inside {I}")
    k = uncovered_site(I, subs, M)
    if k is not None:
        raise CoveringError(k)
    for s, verdict in sub_reports:
        if not verdict.good:
            raise HypothesisError(f"sub-interval {s} is not good: {verdict.as_dict()}")

    G = greens(p, I)
    N = I.size
    norm_bound = math.exp(M)
    norm_ok = G.operator_norm <= norm_bound
    dist = _distance_matrix(N)
    far = dist > N / 10.0
    worst_pair, worst_ratio, decay_ok = None, 0.0, True
    if np.any(far):
        with np.errstate(divide="ignore"):
            log_ratio = np.where(far, np.log(np.abs(G.entries)) + dist / 4.0, -np.inf)
        i, j = np.unravel_index(int(np.argmax(log_ratio)), log_ratio.shape)
        worst_pair = (int(i) + I.a, int(j) + I.a)
        worst_ratio = float(np.exp(min(log_ratio[i, j], 700.0)))
        decay_ok = bool(log_ratio[i, j] <= 0.0)
    verdict = PasteVerdict(I, M, True, True, bool(norm_ok), decay_ok, G.operator_norm,
                           norm_bound, worst_pair, worst_ratio)
    if strict and not verdict.conclusions_hold:
        raise LemmaFalsified(f"pasting conclusion failed on {I}: {verdict}")
    return verdict
