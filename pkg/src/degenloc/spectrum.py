"""Eigenpairs of the Jacobi form, localization diagnostics and Lyapunov exponents."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh, eigh_tridiagonal, eigvalsh_tridiagonal

from .greens import (DecayFit, DegenerateFitError, GreensMatrix, fit_log_linear, greens,
                     invert_tridiagonal, SingularOperatorError, SINGULAR_CONDITION)
from .operator import (LatticeInterval, ModelParameters, TridiagonalMatrix, assemble_H0,
                       assemble_jacobi, check_weight_floor, weight_diagonal)

DECAY_FLOOR = 1.0 / 18.0
WEIGHT_THREAT = 1e-6
CORE_RADIUS = 5


class NumericalInconsistency(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class EigenReport:
    """Eigenpairs of ``H_1`` on an interval plus per-vector diagnostics.

    ``log_profiles[:, j]`` holds ``log|psi_j(n)|`` computed by ratio
    recursion, accurate far below the eigensolver's noise floor.
    """

    interval: LatticeInterval
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    iprs: np.ndarray
    centers: np.ndarray
    decay_fits: list
    log_profiles: np.ndarray
    route: str
    flagged_sites: tuple[int, ...]
    matrix_norm: float

    def __len__(self):
        return self.eigenvalues.size


def fix_signs(vectors: np.ndarray, rel: float = 1e-8) -> np.ndarray:
    """Make the first non-negligible component of each column positive."""
    out = vectors.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        big = np.nonzero(np.abs(col) > rel * np.max(np.abs(col)))[0]
        if big.size and col[big[0]] < 0:
            out[:, j] = -col
    return out


def ipr(psi) -> float:
    psi = np.asarray(psi, dtype=float)
    nrm = float(np.sum(psi ** 2))
    if abs(nrm - 1.0) > 1e-10:
        raise ValueError(f"vector is not normalized (squared norm {nrm!r})")
    return float(np.sum(psi ** 4))


def eigenvector_log_profiles(T: TridiagonalMatrix, energies, centers) -> np.ndarray:
    """``log|psi(n)| - log|psi(c)|`` for eigenvectors with the given centres.

    Ratios ``psi(k)/psi(k-1)`` to the right of the centre come from the
    backward recursion started at the right Dirichlet boundary, and
    symmetrically on the left, so each ratio is computed in its stable
    direction.
    """
    d, e = T.diagonal, T.off_diagonal
    n = d.size
    E = np.atleast_1d(np.asarray(energies, dtype=float))
    centers = np.atleast_1d(np.asarray(centers, dtype=int))
    m = E.size
    tiny = np.finfo(float).tiny
    log_right = np.zeros((n, m))  # log|psi(k)/psi(k-1)|
    rho = np.zeros(m)
    for k in range(n - 1, 0, -1):
        den = d[k] - E + (e[k] * rho if k < n - 1 else 0.0)
        den = np.where(den == 0.0, tiny, den)
        rho = -e[k - 1] / den
        log_right[k] = np.log(np.abs(rho) + tiny)
    log_left = np.zeros((n, m))  # log|psi(k)/psi(k+1)|
    sig = np.zeros(m)
    for k in range(n - 1):
        den = d[k] - E + (e[k - 1] * sig if k > 0 else 0.0)
        den = np.where(den == 0.0, tiny, den)
        sig = -e[k] / den
        log_left[k] = np.log(np.abs(sig) + tiny)
    out = np.zeros((n, m))
    idx = np.arange(n)[:, None]
    cum_r = np.cumsum(log_right, axis=0)
    cum_l = np.cumsum(log_left[::-1], axis=0)[::-1]
    c = centers[None, :]
    right = cum_r - cum_r[centers, np.arange(m)][None, :]
    # sum_{k=n}^{c-1} log_left[k] = cum_l[n] - cum_l[c]
    left = cum_l - cum_l[centers, np.arange(m)][None, :]
    out = np.where(idx > c, right, np.where(idx < c, left, 0.0))
    return out


@dataclass(frozen=True)
class EigenvectorDecay:
    fit: DecayFit
    center: int
    above_floor: bool
    lyapunov_ratio: float | None


def decay_rate_of_eigenvector(psi, center: int, log_profile=None, core: int = CORE_RADIUS,
                              lyapunov: float | None = None,
                              noise_floor: float = 1e-13) -> EigenvectorDecay:
    """Fit ``log|psi(n)|`` against ``|n - center|`` outside a core.

    Without ``log_profile`` only components above ``noise_floor * max|psi|``
    are used.  The fitted rate is compared with 1/18 and, if given, with a
    Lyapunov estimate.
    """
    psi = np.asarray(psi, dtype=float)
    n = psi.size
    dist = np.abs(np.arange(n) - center)
    outside = dist > core
    if log_profile is None:
        amp = np.abs(psi)
        usable = outside & (amp > noise_floor * np.max(amp))
        logs = np.log(np.where(usable, amp, 1.0))
    else:
        logs = np.asarray(log_profile, dtype=float)
        usable = outside & np.isfinite(logs)
    if not np.any(usable):
        raise DegenerateFitError("vector is at the numerical floor outside the core")
    fit = fit_log_linear(dist[usable], logs[usable], float(core))
    ratio = None
    if lyapunov is not None and lyapunov > 0:
        ratio = fit.rate / lyapunov
    return EigenvectorDecay(fit, int(center), fit.rate >= DECAY_FLOOR, ratio)


def pencil_eigensolve(H0: TridiagonalMatrix, w_samples, floor: float = 1e-8):
    """Solve ``H0 psi = E W psi`` with ``W = diag(w_samples)``.

    Returns eigenvalues and ``W``-orthonormal eigenvectors.
    """
    w_samples = np.asarray(w_samples, dtype=float)
    if np.any(w_samples <= 0) or np.any(w_samples < floor):
        j = int(np.argmin(w_samples))
        raise ValueError(f"non-positive or sub-floor weight {w_samples[j]:.3e} at index {j}")
    vals, vecs = eigh(H0.to_dense(), np.diag(w_samples))
    return vals, vecs


def eigensolve_jacobi(p: ModelParameters, interval: LatticeInterval, floor: float = 1e-8,
                      threat: float = WEIGHT_THREAT, diagnostics: bool = True) -> EigenReport:
    """Full eigen-decomposition of the Jacobi form on ``interval``.

    Sites whose weight is below ``threat`` are flagged, and the solve then
    goes through the generalized pencil; eigenvectors are returned in the
    Jacobi variables either way.
    """
    T = assemble_jacobi(p, interval, floor)
    w = weight_diagonal(p, interval)
    flagged = tuple(int(s) for s in interval.sites[w < threat])
    if flagged:
        vals, vecs = pencil_eigensolve(assemble_H0(p, interval), w, floor)
        vecs = vecs * np.sqrt(w)[:, None]
        vecs /= np.linalg.norm(vecs, axis=0)
        route = "pencil"
    else:
        vals, vecs = eigh_tridiagonal(T.diagonal, T.off_diagonal)
        route = "tridiagonal"
    vecs = fix_signs(vecs)
    residuals = np.array([np.linalg.norm(T.matvec(vecs[:, j]) - vals[j] * vecs[:, j])
                          for j in range(vals.size)])
    iprs = np.sum(vecs ** 4, axis=0)
    centers = np.argmax(np.abs(vecs), axis=0)
    mat_norm = float(np.max(np.abs(vals)))
    fits = []
    profiles = np.zeros_like(vecs)
    if diagnostics:
        profiles = eigenvector_log_profiles(T, vals, centers)
        profiles += np.log(np.abs(vecs[centers, np.arange(vals.size)]))[None, :]
        for j in range(vals.size):
            try:
                fits.append(decay_rate_of_eigenvector(vecs[:, j], int(centers[j]),
                                                      profiles[:, j]).fit)
            except DegenerateFitError:
                fits.append(None)
    return EigenReport(interval, vals, vecs, residuals, iprs, centers, fits, profiles,
                       route, flagged, mat_norm)


def weighted_eigenvectors(report: EigenReport, p: ModelParameters) -> np.ndarray:
    """Map Jacobi eigenvectors back to ``psi = W^{-1/2} psi'``."""
    w = weight_diagonal(p, report.interval)
    return report.eigenvectors / np.sqrt(w)[:, None]


# -- Poisson reconstruction ---------------------------------------------------

def poisson_reconstruct(psi_left: float, psi_right: float, G: GreensMatrix) -> np.ndarray:
    """Interior values ``psi_{a-1} G delta_a + psi_{b+1} G delta_b``."""
    if G.condition_estimate >= SINGULAR_CONDITION:
        raise SingularOperatorError(G.condition_estimate, G.interval)
    return psi_left * G.entries[:, 0] + psi_right * G.entries[:, -1]


@dataclass(frozen=True)
class GeneralizedEigenvectorProbe:
    anchor: int
    E: float
    C_psi: float
    C_prime_psi: float
    reconstruction_residual: float
    window: LatticeInterval
    condition: float
    values: np.ndarray = field(repr=False)


def probe_generalized_eigenvector(p: ModelParameters, interval: LatticeInterval, index: int,
                                  half_width: int = 20, C_prime: float = 0.0,
                                  floor: float = 1e-8) -> GeneralizedEigenvectorProbe:
    """Treat an eigenvector on a large box as a generalized eigenvector.

    The vector is normalized so that ``psi(k0) = 1`` at its maximum, the
    polynomial-bound constant is measured for the given exponent, and the
    Poisson identity is checked on ``[k0 - half_width, k0 + half_width]``.
    The window contains the localization centre, so E sits close to the
    window spectrum once the boundary values are tiny; ``condition`` reports
    how far the residual can be trusted.
    """
    rep = eigensolve_jacobi(p, interval, floor, diagnostics=False)
    E = float(rep.eigenvalues[index])
    psi = weighted_eigenvectors(rep, p)[:, index]
    c = int(np.argmax(np.abs(psi)))
    k0 = interval.a + c
    psi = psi / psi[c]
    n = interval.sites
    C = float(np.max(np.abs(psi) / (1.0 + np.abs(n)) ** C_prime))
    a = max(interval.a + 1, k0 - half_width)
    b = min(interval.b - 1, k0 + half_width)
    win = LatticeInterval(a, b)
    G = greens(p.with_energy(E), win)
    rec = poisson_reconstruct(psi[a - 1 - interval.a], psi[b + 1 - interval.a], G)
    res = float(np.linalg.norm(rec - psi[a - interval.a:b + 1 - interval.a]))
    return GeneralizedEigenvectorProbe(k0, E, C, C_prime, res, win, G.condition_estimate,
                                       psi)


# -- distance to spectrum -----------------------------------------------------

def resolvent_distance(T: TridiagonalMatrix, E: float) -> float:
    try:
        G = invert_tridiagonal(T.shifted(E))
    except SingularOperatorError:
        return 0.0
    return 1.0 / G.operator_norm


def distance_to_spectrum(E: float, p: ModelParameters, interval: LatticeInterval,
                         floor: float = 1e-8, check: bool = True) -> float:
    """``min_j |E - E_j|`` over the spectrum of the restricted Jacobi form.

    With ``check`` the value is compared with ``1/||(H_1 - E)^{-1}||``.
    """
    T = assemble_jacobi(p, interval, floor)
    ev = eigvalsh_tridiagonal(T.diagonal, T.off_diagonal)
    dist = float(np.min(np.abs(ev - E)))
    if check:
        alt = resolvent_distance(T, E)
        scale = float(np.max(np.abs(ev)))
        tol = 1e-8 * dist + 100 * np.finfo(float).eps * max(scale, abs(E))
        if abs(alt - dist) > tol:
            raise NumericalInconsistency(
                f"spectral distance {dist:.12g} disagrees with resolvent route {alt:.12g}")
    return dist


# -- Lyapunov exponent --------------------------------------------------------

@dataclass(frozen=True)
class LyapunovEstimate:
    E: float
    gamma: float
    steps: int
    phase: tuple[float, float]
    renormalizations: int


def lyapunov_many(p: ModelParameters, energies, steps: int = 4096, every: int = 16
                  ) -> list[LyapunovEstimate]:
    """Top Lyapunov exponent of ``u_{n+1} = (lam v_n - E w_n) u_n - u_{n-1}``.

    Transfer products are re-orthonormalized by QR every ``every`` steps;
    all energies share the orbit samples.
    """
    if steps < 1000:
        raise ValueError("at least 1000 steps are required")
    E = np.atleast_1d(np.asarray(energies, dtype=float))
    sites = np.arange(steps)
    lv = p.lam * p.potential_samples(sites)
    wv = p.weight_samples(sites)
    m = E.size
    Q = np.broadcast_to(np.eye(2), (m, 2, 2)).copy()
    acc = np.zeros(m)
    count = 0
    for start in range(0, steps, every):
        for k in range(start, min(start + every, steps)):
            d = lv[k] - E * wv[k]
            top = d[:, None] * Q[:, 0, :] - Q[:, 1, :]
            Q[:, 1, :] = Q[:, 0, :]
            Q[:, 0, :] = top
        if not np.all(np.isfinite(Q)):
            raise FloatingPointError("transfer product overflowed between renormalizations")
        Qn, R = np.linalg.qr(Q)
        acc += np.log(np.abs(R[:, 0, 0]))
        Q = Qn * np.sign(R[:, 0, 0])[:, None, None]
        count += 1
    gam = acc / steps
    ph = (p.phase.x, p.phase.y)
    return [LyapunovEstimate(float(e), float(max(g, 0.0)), steps, ph, count)
            for e, g in zip(E, gam)]


def lyapunov(p: ModelParameters, E: float | None = None, steps: int = 4096,
             every: int = 16) -> LyapunovEstimate:
    return lyapunov_many(p, [p.E if E is None else E], steps, every)[0]
