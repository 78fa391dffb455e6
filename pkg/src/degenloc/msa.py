"""Empirical exceptional sets, orbit hits and the scale-ladder check."""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .greens import (GoodnessVerdict, LemmaFalsified, SingularOperatorError, coupling_goodness,
                     greens, invert_tridiagonal, paste_intervals, uncovered_site,
                     verify_ldt_bounds)
from .model import (FrequencyVector, GridSampler, MonteCarloSampler, Phase,
                    diophantine_margin, evaluate, rotate)
from .operator import LatticeInterval, ModelParameters, scaled_H

log = logging.getLogger(__name__)

DEFAULT_KAPPA = 0.04
DEFAULT_B = 0.9
DEFAULT_DELTA = 0.35  # b = 0.9 needs delta > sqrt(0.1) ~ 0.316
DEFAULT_GAMMA = 0.5
PASTED_GAMMA = 0.25


class LadderError(ValueError):
    pass


class RegimeError(ValueError):
    pass


class DiophantineError(ValueError):
    pass


@dataclass(frozen=True)
class ScaleLadder:
    scales: tuple[int, ...]
    kappa: float = DEFAULT_KAPPA
    b: float = DEFAULT_B
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        scales = tuple(int(s) for s in self.scales)
        object.__setattr__(self, "scales", scales)
        if not scales:
            raise LadderError("ladder needs at least one scale")
        for name in ("kappa", "b", "delta"):
            if not 0 < getattr(self, name) < 1:
                raise LadderError(f"{name} must lie in (0, 1)")
        if not 2 * self.kappa < self.b:
            raise LadderError(f"need 2*kappa < b, got kappa={self.kappa}, b={self.b}")
        if not self.b > 1 - self.delta ** 2:
            raise LadderError(f"need b > 1 - delta^2, got b={self.b}, delta={self.delta}")
        for lo, hi in zip(scales, scales[1:]):
            if hi <= lo:
                raise LadderError(f"scales must increase: {lo} then {hi}")
            if hi > lo ** (1.0 / self.delta ** 2):
                raise LadderError(
                    f"scale {hi} exceeds the induction window {lo}^(1/delta^2)")


# -- parallel helper ----------------------------------------------------------

def default_workers() -> int:
    return os.cpu_count() or 1


def _pmap(fn, items, workers: int | None):
    items = list(items)
    workers = default_workers() if workers is None else int(workers)
    if workers <= 1 or len(items) < 2:
        return [fn(it) for it in items]
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=chunk))


# -- initial scale ------------------------------------------------------------

@dataclass(frozen=True)
class InitialScaleVerdict:
    regime: str
    N: int
    threshold: float
    escapes: bool
    offending_site: int | None
    min_diagonal: float
    ldt_ok: bool | None
    scaled_verdict: GoodnessVerdict | None
    unscaled_verdict: GoodnessVerdict | None

    @property
    def consistent(self) -> bool:
        """Escaping the diagonal sublevel set must imply the Green's bounds."""
        return (not self.escapes) or bool(self.ldt_ok)


def regime_of(lam: float, E: float) -> tuple[str, float]:
    """'coupling' for ``|E| <= |lam|``; 'energy' when the unit interval holding E
    is at distance ``>= |lam|`` from 0."""
    if abs(E) <= abs(lam):
        return "coupling", abs(lam)
    s = math.floor(E)
    d_I = s if s > 0 else -(s + 1)
    if d_I < abs(lam):
        raise RegimeError(f"E={E} lies in neither regime (dist(0, I) = {d_I} < |lam|)")
    return "energy", float(d_I)


def initial_scale_check(p: ModelParameters, N: int, kappa: float = DEFAULT_KAPPA,
                        b: float = DEFAULT_B, lambda0: float = 100.0,
                        enforce_window: bool = True) -> InitialScaleVerdict:
    """Diagonal sublevel screening followed by the initial-scale Green's bounds.

    The scaled diagonal is ``v - (E/lam) w`` (coupling regime) or
    ``(lam/E) v - w`` (energy regime).  A phase escapes when every site in
    ``[-N, N]`` clears ``exp(-N^(4 kappa / 3))``; escaping phases must then
    satisfy ``||G~_N|| < exp(N^b)`` and ``|G~_N(m,n)| < 10 exp(-|m-n|)``.
    """
    if abs(p.lam) < lambda0:
        raise RegimeError(f"|lam| = {abs(p.lam)} is below lambda0 = {lambda0}")
    regime, scale = regime_of(p.lam, p.E)
    window = math.log(scale) ** (1.0 / (2 * kappa)) if scale > 1 else 0.0
    if enforce_window and N > window:
        raise RegimeError(f"N = {N} exceeds the regime window {window:.4g}")
    interval = LatticeInterval.centered(N)
    Ht = scaled_H(p, interval, regime)
    threshold = math.exp(-N ** (4.0 * kappa / 3.0))
    diag = np.abs(Ht.diagonal)
    j = int(np.argmin(diag))
    escapes = bool(diag[j] >= threshold)
    offending = None if escapes else int(interval.a + j)
    ldt_ok = scaled = unscaled = None
    if escapes:
        try:
            Gt = invert_tridiagonal(Ht, interval)
            scaled = verify_ldt_bounds(Gt, b, 1.0, scale=N, prefactor=10.0)
            unscaled = verify_ldt_bounds(greens(p, interval), b, 1.0, scale=N, prefactor=10.0)
            ldt_ok = scaled.good
        except SingularOperatorError:
            ldt_ok = False
    return InitialScaleVerdict(regime, N, threshold, escapes, offending, float(diag[j]),
                               ldt_ok, scaled, unscaled)


# -- bad sets -----------------------------------------------------------------

@dataclass(frozen=True)
class BadCell:
    x: float
    y: float
    N: int
    E: float
    reason: str


@dataclass(frozen=True)
class BadSetReport:
    N: int
    E: float
    lam: float
    sampler: dict
    samples: int
    bad_count: int
    bad_fraction: float
    stderr: float
    threshold: float
    kappa: float
    b: float
    gamma: float
    grid_resolution: int
    bad_cells: tuple[BadCell, ...] = field(default=())

    def recomputed_fraction(self) -> float:
        return len(self.bad_cells) / self.samples

    def as_dict(self) -> dict:
        return {
            "N": self.N, "E": self.E, "lam": self.lam, "sampler": self.sampler,
            "samples": self.samples, "bad_count": self.bad_count,
            "bad_fraction": self.bad_fraction, "stderr": self.stderr,
            "threshold": self.threshold, "kappa": self.kappa, "b": self.b,
            "gamma": self.gamma, "grid_resolution": self.grid_resolution,
        }


def classify_phase(p: ModelParameters, N: int, b: float = DEFAULT_B,
                   gamma: float = DEFAULT_GAMMA) -> str | None:
    """Failure reason for the phase of ``p`` at scale ``N``, or None when good."""
    try:
        G = greens(p, LatticeInterval.centered(N))
    except SingularOperatorError:
        return "singular"
    v = verify_ldt_bounds(G, b, gamma, scale=N, prefactor=10.0)
    if v.good:
        return None
    return "+".join(r for r, ok in (("norm", v.norm_ok), ("decay", v.decay_ok)) if not ok)


def _classify_task(args):
    p, N, b, gamma, x, y = args
    return classify_phase(p.with_phase(x, y), N, b, gamma)


def _sampler_resolution(sampler) -> int:
    if isinstance(sampler, GridSampler):
        return sampler.resolution
    return max(1, int(math.ceil(math.sqrt(sampler.count))))


def bad_set_estimate(p: ModelParameters, N: int, sampler=None, b: float = DEFAULT_B,
                     gamma: float = DEFAULT_GAMMA, kappa: float = DEFAULT_KAPPA,
                     workers: int | None = 1) -> BadSetReport:
    """Fraction of sampled phases where ``G_N`` fails the large-deviation bounds.

    Classification inverts ``H_N`` directly at every sampled phase; singular
    restrictions count as bad.
    """
    sampler = GridSampler(64) if sampler is None else sampler
    if isinstance(sampler, GridSampler) and sampler.resolution < 64:
        raise ValueError("grid sampler needs at least 64 cells per axis")
    if isinstance(sampler, MonteCarloSampler) and sampler.count < 1000:
        raise ValueError("Monte Carlo sampler needs at least 1000 points")
    xs, ys = sampler.points()
    reasons = _pmap(_classify_task, [(p, N, b, gamma, x, y) for x, y in zip(xs, ys)], workers)
    cells = tuple(BadCell(float(x), float(y), N, p.E, r)
                  for x, y, r in zip(xs, ys, reasons) if r is not None)
    n = len(reasons)
    frac = len(cells) / n
    return BadSetReport(N, p.E, p.lam, sampler.describe(), n, len(cells), frac,
                        math.sqrt(frac * (1 - frac) / n), math.exp(-N ** kappa), kappa, b,
                        gamma, _sampler_resolution(sampler), cells)


CSV_COLUMNS = ("x", "y", "N", "E", "reason")


def write_bad_cells(path, cells) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CSV_COLUMNS)
        for c in cells:
            wr.writerow([repr(c.x), repr(c.y), c.N, repr(c.E), c.reason])


def read_bad_cells(path) -> list[BadCell]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(rd.fieldnames or ())
        if missing:
            raise ValueError(f"bad-cell file lacks columns {sorted(missing)}")
        return [BadCell(float(r["x"]), float(r["y"]), int(r["N"]), float(r["E"]), r["reason"])
                for r in rd]


class BadCellSet:
    """Phase predicate: true inside any persisted bad cell of a ``resolution`` grid."""

    def __init__(self, cells, resolution: int):
        self.resolution = int(resolution)
        self.cells = frozenset((int(c.x * resolution) % resolution,
                                int(c.y * resolution) % resolution) for c in cells)

    def __len__(self):
        return len(self.cells)

    def measure(self) -> float:
        return len(self.cells) / self.resolution ** 2

    def contains_many(self, xs, ys) -> np.ndarray:
        if not self.cells:
            return np.zeros(np.shape(xs), dtype=bool)
        r = self.resolution
        ix = (np.asarray(xs) * r).astype(np.int64) % r
        iy = (np.asarray(ys) * r).astype(np.int64) % r
        keys = ix * r + iy
        table = np.array(sorted(i * r + j for i, j in self.cells))
        return np.isin(keys, table)

    def __call__(self, phase: Phase) -> bool:
        return bool(self.contains_many(np.array([phase.x]), np.array([phase.y]))[0])


# -- orbit hits ---------------------------------------------------------------

@dataclass(frozen=True)
class OrbitHitReport:
    phase0: Phase
    K: int
    hits: int
    delta: float
    bound: float
    longest_free_run: tuple[int, int]

    @property
    def within_bound(self) -> bool:
        return self.hits < self.bound

    @property
    def hit_rate(self) -> float:
        return self.hits / self.K


def orbit_hit_count(phase0: Phase, omega: FrequencyVector, K: int, bad_membership,
                    delta: float = 0.1, check_frequency: bool = True) -> OrbitHitReport:
    """Count ``k = 1..K`` with ``phase0 + k omega`` in the bad set.

    ``bad_membership`` is a ``Phase -> bool`` predicate; objects with a
    vectorized ``contains_many(xs, ys)`` are used directly.  The longest
    hit-free run is returned as ``(first k, length)``.
    """
    if check_frequency:
        dm = diophantine_margin(omega, K)
        if not dm.certified:
            raise DiophantineError(
                f"frequency fails the Diophantine check up to radius {K} "
                f"(margin {dm.margin:.3g} at l={dm.worst_l})")
    k = np.arange(1, K + 1)
    xs = rotate(phase0.x, omega.omega1, k)
    ys = rotate(phase0.y, omega.omega2, k)
    if hasattr(bad_membership, "contains_many"):
        hit = np.asarray(bad_membership.contains_many(xs, ys), dtype=bool)
    else:
        hit = np.array([bool(bad_membership(Phase(x, y))) for x, y in zip(xs, ys)])
    best_start, best_len, run_start = 1, 0, None
    for i, h in enumerate(hit, start=1):
        if not h:
            if run_start is None:
                run_start = i
            if i - run_start + 1 > best_len:
                best_start, best_len = run_start, i - run_start + 1
        else:
            run_start = None
    return OrbitHitReport(phase0, K, int(hit.sum()), delta, K ** (1.0 - delta),
                          (best_start, best_len))


# -- scale ladder -------------------------------------------------------------

@dataclass
class ScaleReport:
    N: int
    phases: int = 0
    bad: int = 0
    threshold: float = 0.0
    sub_scale: int | None = None
    paste_scale: int | None = None
    bad_window_budget: float | None = None
    over_budget_phases: int = 0
    mean_bad_windows: float = 0.0
    paste_applied: int = 0
    paste_ok: int = 0
    evaluations: int = 0
    budget_exhausted: bool = False
    kappa: float = DEFAULT_KAPPA
    b: float = DEFAULT_B
    delta: float = DEFAULT_DELTA

    @property
    def bad_fraction(self) -> float:
        return self.bad / self.phases if self.phases else math.nan

    @property
    def stderr(self) -> float:
        f = self.bad_fraction
        return math.sqrt(f * (1 - f) / self.phases) if self.phases else math.nan

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["bad_fraction"] = self.bad_fraction
        d["stderr"] = self.stderr
        return d


def _screen_phase(p: ModelParameters, N: int, ladder: ScaleLadder, gamma: float):
    """Sub-window screening, pasting and the scale-N verdict for one phase."""
    I = LatticeInterval.centered(N)
    M0 = max(1, math.ceil(N ** (ladder.delta / 5.0)))
    M = 2 * M0 + 1
    evaluations = 0
    good_reports = []
    bad_windows = 0
    for k in range(I.a, I.b + 1):
        win = LatticeInterval(max(I.a, k - M0), min(I.b, k + M0))
        evaluations += 1
        try:
            Gs = greens(p, win)
        except SingularOperatorError:
            bad_windows += 1
            continue
        screen = verify_ldt_bounds(Gs, ladder.b, gamma, scale=M0, prefactor=10.0)
        if not screen.good:
            bad_windows += 1
        paste_hyp = coupling_goodness(Gs, M, ladder.b)
        if paste_hyp.good:
            good_reports.append((win, paste_hyp))
    pasted = None
    subs = [s for s, _ in good_reports]
    if uncovered_site(I, subs, M) is None:
        evaluations += 1
        try:
            pasted = paste_intervals(p, I, good_reports, M, ladder.b,
                                     strict=False).conclusions_hold
        except SingularOperatorError:
            pasted = False
    evaluations += 1
    try:
        G = greens(p, I)
        ok = verify_ldt_bounds(G, ladder.b, PASTED_GAMMA, scale=N, prefactor=10.0).good
    except SingularOperatorError:
        ok = False
    return ok, bad_windows, pasted, evaluations, M0, M


def inductive_scale_verify(ladder: ScaleLadder, p: ModelParameters, phases_per_scale: int = 300,
                           seed: int = 0, budget: int | None = None,
                           gamma: float = DEFAULT_GAMMA) -> list[ScaleReport]:
    """Walk the ladder and record per-scale exceptional fractions.

    The first scale is measured directly.  At later scales each sampled
    phase has its ``M0``-windows screened, bad windows counted against
    ``N^(1 - delta)``, the good covering pasted (the outcome is recorded,
    since ladder windows are far below the size the pasting bounds need), and ``G_N`` checked against
    ``exp(N^b)`` and ``10 exp(-|m-n|/4)``.  ``budget`` caps the total number
    of inversions; running out is reported on the scale where it happened.
    """
    reports: list[ScaleReport] = []
    spent = 0
    for j, N in enumerate(ladder.scales):
        rep = ScaleReport(N, threshold=math.exp(-N ** ladder.kappa), kappa=ladder.kappa,
                          b=ladder.b, delta=ladder.delta)
        reports.append(rep)
        sampler = MonteCarloSampler(max(phases_per_scale, 1), seed + j)
        xs, ys = sampler.points()
        xs, ys = xs[:phases_per_scale], ys[:phases_per_scale]
        bad_windows_total = 0
        for x, y in zip(xs, ys):
            q = p.with_phase(x, y)
            if j == 0:
                cost = 1
                bad = classify_phase(q, N, ladder.b, gamma) is not None
            else:
                ok, nbad, pasted, cost, M0, M = _screen_phase(q, N, ladder, gamma)
                bad = not ok
                rep.sub_scale, rep.paste_scale = M0, M
                rep.bad_window_budget = N ** (1.0 - ladder.delta)
                bad_windows_total += nbad
                if nbad > rep.bad_window_budget:
                    rep.over_budget_phases += 1
                if pasted is not None:
                    rep.paste_applied += 1
                    rep.paste_ok += int(pasted)
            if budget is not None and spent + cost > budget:
                rep.budget_exhausted = True
                log.warning("inversion budget %d exhausted at scale %d after %d phases",
                            budget, N, rep.phases)
                return reports
            spent += cost
            rep.evaluations += cost
            rep.phases += 1
            rep.bad += int(bad)
        if rep.phases:
            rep.mean_bad_windows = bad_windows_total / rep.phases
    return reports
