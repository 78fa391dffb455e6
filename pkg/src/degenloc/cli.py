"""Command-line driver: one config file, one run, deterministic outputs.

Usage::

    degenloc greens   --config run.json --out results/
    degenloc badset   --config run.yaml
    degenloc msa | spectrum | lyapunov ...

Exit codes: 0 success, 2 config error, 3 numerical failure,
4 a lemma's conclusion failed although its hypotheses held.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .greens import (DegenerateFitError, HypothesisError, LemmaFalsified, SingularOperatorError,
                     coupling_goodness, covering_windows, decay_fit, greens, paste_intervals,
                     perturbation_verify, verify_ldt_bounds)
from .model import (FrequencyVector, FunctionSpecError, MonteCarloSampler, Phase, WeightError,
                    function_from_spec, golden_frequency, sampler_from_spec)
from .msa import (DEFAULT_B, DEFAULT_DELTA, DEFAULT_GAMMA, DEFAULT_KAPPA, DiophantineError,
                  LadderError, RegimeError, ScaleLadder, bad_set_estimate, default_workers,
                  initial_scale_check, inductive_scale_verify, write_bad_cells)
from .operator import DegenerateWeightError, LatticeInterval, ModelParameters, assemble_H
from .spectrum import (DECAY_FLOOR, WEIGHT_THREAT, NumericalInconsistency,
                       eigensolve_jacobi, lyapunov_many)

log = logging.getLogger("degenloc")

COMMANDS = ("greens", "badset", "msa", "spectrum", "lyapunov")
EXIT_CONFIG, EXIT_NUMERIC, EXIT_FALSIFIED = 2, 3, 4


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


# -- config -------------------------------------------------------------------

# Per-command run keys and their defaults.  ``None`` means optional.
RUN_DEFAULTS = {
    "greens": {"N": None, "interval": None, "b": DEFAULT_B, "gamma": DEFAULT_GAMMA,
               "cutoff": None, "paste_M": None, "perturbation_eps": None,
               "perturbation_K": None, "seed": 0},
    "badset": {"scales": [20, 40, 80], "sampler": {"kind": "grid", "resolution": 64},
               "b": DEFAULT_B, "gamma": DEFAULT_GAMMA, "kappa": DEFAULT_KAPPA,
               "workers": None, "persist_cells": True},
    "msa": {"scales": [20, 40], "kappa": DEFAULT_KAPPA, "b": DEFAULT_B, "delta": DEFAULT_DELTA,
            "gamma": DEFAULT_GAMMA, "phases_per_scale": 300, "seed": 0, "budget": None,
            "initial_check": True, "lambda0": 100.0},
    "spectrum": {"N": 200, "interval": None, "floor": 1e-8, "threat": WEIGHT_THREAT,
                 "lyapunov": True, "lyapunov_steps": 4096, "ipr_threshold": 0.1},
    "lyapunov": {"energies": None, "steps": 4096, "every": 16},
}

MODEL_KEYS = ("lam", "E", "energies", "v", "w", "omega", "phase")
OUTPUT_DEFAULTS = {"directory": "degenloc-out", "formats": ["csv", "json"]}


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}")
    try:
        if path.suffix in (".yaml", ".yml"):
            import yaml
            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
    except Exception as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}")
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a table")
    return data


def _number(value, name, positive=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(name, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(name, "must be finite")
    if integer:
        if int(value) != value:
            raise ConfigError(name, f"expected an integer, got {value!r}")
        value = int(value)
    else:
        value = float(value)
    if positive and value <= 0:
        raise ConfigError(name, f"must be positive, got {value!r}")
    return value


def _pair(value, name):
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(name, f"expected a pair, got {value!r}")
    return [_number(value[0], f"{name}[0]"), _number(value[1], f"{name}[1]")]


@dataclass
class ExperimentConfig:
    command: str
    model: dict
    run: dict
    output: dict = field(default_factory=lambda: dict(OUTPUT_DEFAULTS))

    @classmethod
    def from_dict(cls, data: dict, command: str | None = None) -> "ExperimentConfig":
        data = copy.deepcopy(data)
        command = command or data.get("command")
        if command not in COMMANDS:
            raise ConfigError("command", f"expected one of {', '.join(COMMANDS)}, got {command!r}")
        if data.get("command") not in (None, command):
            raise ConfigError("command", f"config says {data['command']!r}, "
                                         f"command line says {command!r}")
        extra = set(data) - {"command", "model", "run", "output"}
        if extra:
            raise ConfigError(sorted(extra)[0], "unknown section")
        model = _validate_model(data.get("model"), command)
        run = _validate_run(data.get("run") or {}, command)
        output = _validate_output(data.get("output") or {})
        return cls(command, model, run, output)

    def to_dict(self) -> dict:
        return {"command": self.command, "model": copy.deepcopy(self.model),
                "run": copy.deepcopy(self.run), "output": copy.deepcopy(self.output)}

    def canonical_json(self) -> str:
        d = self.to_dict()
        d["output"] = {k: v for k, v in d["output"].items() if k != "directory"}
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def parameters(self, E: float | None = None) -> ModelParameters:
        m = self.model
        if E is None:
            E = m["E"] if m["E"] is not None else m["energies"][0]
        return ModelParameters(m["lam"], float(E), function_from_spec(m["v"]),
                               function_from_spec(m["w"]), _omega(m["omega"]),
                               Phase(*m["phase"]))

    def energies(self) -> list[float]:
        m = self.model
        return list(m["energies"]) if m["energies"] is not None else [m["E"]]


def _omega(spec) -> FrequencyVector:
    if spec == "golden":
        return golden_frequency()
    return FrequencyVector(*spec)


def _validate_model(model, command) -> dict:
    if not isinstance(model, dict):
        raise ConfigError("model", "missing or not a table")
    extra = set(model) - set(MODEL_KEYS)
    if extra:
        raise ConfigError(f"model.{sorted(extra)[0]}", "unknown key")
    if "lam" not in model:
        raise ConfigError("model.lam", "required")
    out = {"lam": _number(model["lam"], "model.lam")}
    out["E"] = None if model.get("E") is None else _number(model["E"], "model.E")
    energies = model.get("energies")
    if energies is not None:
        if not isinstance(energies, list) or not energies:
            raise ConfigError("model.energies", "expected a non-empty list")
        energies = [_number(e, f"model.energies[{i}]") for i, e in enumerate(energies)]
    out["energies"] = energies
    if out["E"] is None and energies is None:
        if command in ("greens", "badset", "msa"):
            raise ConfigError("model.E", "required (or give model.energies)")
        out["E"] = 0.0
    for key, default in (("v", "cos"), ("w", "sin2")):
        spec = model.get(key, default)
        try:
            function_from_spec(spec)
        except (FunctionSpecError, ValueError, TypeError) as exc:
            raise ConfigError(f"model.{key}", str(exc))
        out[key] = spec
    omega = model.get("omega", "golden")
    if omega != "golden":
        omega = _pair(omega, "model.omega")
        for i, val in enumerate(omega):
            if not 0.0 < val < 1.0:
                raise ConfigError(f"model.omega[{i}]", f"must lie in (0, 1), got {val!r}")
    out["omega"] = omega
    out["phase"] = _pair(model.get("phase", [0.0, 0.0]), "model.phase")
    return out


def _validate_run(run, command) -> dict:
    if not isinstance(run, dict):
        raise ConfigError("run", "not a table")
    defaults = RUN_DEFAULTS[command]
    extra = set(run) - set(defaults)
    if extra:
        raise ConfigError(f"run.{sorted(extra)[0]}", f"unknown key for '{command}'")
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(run))
    for key in ("b", "gamma", "kappa", "delta", "floor", "threat", "lambda0", "ipr_threshold"):
        if key in out:
            out[key] = _number(out[key], f"run.{key}", positive=True)
    for key in ("N", "paste_M", "perturbation_K", "steps", "every", "phases_per_scale",
                "seed", "budget", "workers", "lyapunov_steps"):
        if out.get(key) is not None:
            out[key] = _number(out[key], f"run.{key}", integer=True)
            if out[key] < 0 or (key != "seed" and out[key] == 0 and key != "N"):
                raise ConfigError(f"run.{key}", f"must be positive, got {out[key]!r}")
    for key in ("cutoff", "perturbation_eps"):
        if out.get(key) is not None:
            out[key] = _number(out[key], f"run.{key}", positive=True)
    if out.get("interval") is not None:
        a, b = _pair(out["interval"], "run.interval")
        if int(a) != a or int(b) != b or b < a:
            raise ConfigError("run.interval", f"expected integers a <= b, got {out['interval']!r}")
        out["interval"] = [int(a), int(b)]
    if "scales" in out:
        sc = out["scales"]
        if not isinstance(sc, list) or not sc:
            raise ConfigError("run.scales", "expected a non-empty list")
        out["scales"] = [_number(s, f"run.scales[{i}]", positive=True, integer=True)
                         for i, s in enumerate(sc)]
    if command == "greens" and out["N"] is None and out["interval"] is None:
        raise ConfigError("run.N", "give run.N or run.interval")
    if command == "badset":
        try:
            sampler_from_spec(out["sampler"])
        except (ValueError, TypeError, AttributeError) as exc:
            raise ConfigError("run.sampler", str(exc))
    if command == "lyapunov" and out["energies"] is not None:
        out["energies"] = [_number(e, f"run.energies[{i}]") for i, e in enumerate(out["energies"])]
    for key in ("lyapunov", "initial_check", "persist_cells"):
        if key in out and not isinstance(out[key], bool):
            raise ConfigError(f"run.{key}", f"expected true/false, got {out[key]!r}")
    return out


def _validate_output(output) -> dict:
    if not isinstance(output, dict):
        raise ConfigError("output", "not a table")
    extra = set(output) - set(OUTPUT_DEFAULTS)
    if extra:
        raise ConfigError(f"output.{sorted(extra)[0]}", "unknown key")
    out = dict(OUTPUT_DEFAULTS)
    out.update(output)
    if not isinstance(out["directory"], str):
        raise ConfigError("output.directory", "expected a path string")
    fmts = out["formats"]
    if not isinstance(fmts, list) or not set(fmts) <= {"csv", "json"} or not fmts:
        raise ConfigError("output.formats", f"expected a subset of ['csv', 'json'], got {fmts!r}")
    out["formats"] = sorted(set(fmts))
    return out


# -- writers ------------------------------------------------------------------

def _plain(obj):
    """JSON-ready copy: numpy scalars unwrapped, non-finite floats as null."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if x is None:
        return "nan"
    return str(x)


class RunWriter:
    """Single writer for one output directory; tracks the file inventory."""

    def __init__(self, directory, formats):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.formats = set(formats)
        self.files: list[str] = []

    def json(self, name, payload):
        if "json" not in self.formats:
            return
        path = self.directory / name
        path.write_text(json.dumps(_plain(payload), sort_keys=True, indent=2) + "\n")
        self.files.append(name)

    def csv(self, name, header, rows):
        if "csv" not in self.formats:
            return
        path = self.directory / name
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(header)
            for row in rows:
                wr.writerow([_cell(x) for x in row])
        self.files.append(name)

    def adopt(self, name):
        self.files.append(name)

    def inventory(self) -> list[dict]:
        out = []
        for name in sorted(self.files):
            data = (self.directory / name).read_bytes()
            out.append({"file": name, "bytes": len(data),
                        "sha256": hashlib.sha256(data).hexdigest()})
        return out


@dataclass
class RunManifest:
    config_hash: str
    version: str
    config: dict
    workers: int
    wall_time: float = 0.0
    stages: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    status: str = "ok"

    def as_dict(self) -> dict:
        return {"config_hash": self.config_hash, "version": self.version,
                "config": self.config, "workers": self.workers,
                "wall_time": self.wall_time, "stages": self.stages,
                "outputs": self.outputs, "status": self.status}


class _Stage:
    def __init__(self, manifest: RunManifest, name: str):
        self.manifest, self.name = manifest, name

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.manifest.stages[self.name] = time.perf_counter() - self.t0
        return False


def _interval(run) -> LatticeInterval:
    if run.get("interval") is not None:
        return LatticeInterval(*run["interval"])
    return LatticeInterval.centered(run["N"])


# -- runners ------------------------------------------------------------------

def run_greens(cfg: ExperimentConfig, out: RunWriter, manifest: RunManifest) -> int:
    run = cfg.run
    p = cfg.parameters()
    I = _interval(run)
    with _Stage(manifest, "invert"):
        G = greens(p, I)
    out.csv("greens.csv", ["m", "n", "G"],
            ((int(I.a + i), int(I.a + j), G.entries[i, j])
             for i in range(G.size) for j in range(G.size)))
    scale = (I.size - 1) / 2
    with _Stage(manifest, "verify"):
        verdict = verify_ldt_bounds(G, run["b"], run["gamma"], scale=scale,
                                    cutoff=run["cutoff"])
        try:
            fit = decay_fit(G, cutoff=run["cutoff"]).as_dict()
        except DegenerateFitError as exc:
            fit = {"error": str(exc)}
    report = {"interval": [I.a, I.b], "E": p.E, "operator_norm": G.operator_norm,
              "hs_norm": G.hs_norm, "condition_estimate": G.condition_estimate,
              "verdict": verdict.as_dict(), "decay_fit": fit}

    if run["paste_M"] is not None:
        M = run["paste_M"]
        with _Stage(manifest, "paste"):
            reports = [(win, coupling_goodness(greens(p, win), M, run["b"]))
                       for win in covering_windows(I, M)]
            bad = [[w.a, w.b] for w, v in reports if not v.good]
            if bad:
                report["paste"] = {"M": M, "applied": False, "bad_windows": bad}
            else:
                pv = paste_intervals(p, I, reports, M, run["b"])
                report["paste"] = {"M": M, "applied": True, "norm": pv.norm,
                                   "norm_bound": pv.norm_bound, "norm_ok": pv.norm_ok,
                                   "decay_ok": pv.decay_ok, "worst_ratio": pv.worst_ratio}

    if run["perturbation_eps"] is not None:
        eps = run["perturbation_eps"]
        K = run["perturbation_K"] or max(1, math.ceil(scale / 10))
        T = assemble_H(p, I)
        rng = np.random.default_rng(run["seed"])
        shift = 0.999 * eps * rng.uniform(-1.0, 1.0, T.size)
        B = max(1.0, 1.01 * G.operator_norm)
        with _Stage(manifest, "perturb"):
            pv = perturbation_verify(T.diagonal, T.diagonal + shift, T.off_diagonal, B, K,
                                     run["gamma"], 10.0, eps)
        report["perturbation"] = {"eps": eps, "K": K, "B": B, "a": 10.0,
                                  "condition_value": pv.condition_value,
                                  "condition_ok": pv.condition_ok, "norm_ok": pv.norm_ok,
                                  "decay_ok": pv.decay_ok, "perturbed_norm": pv.perturbed_norm,
                                  "worst_decay_ratio": pv.worst_decay_ratio}
    out.json("greens_report.json", report)
    return 0


def run_badset_scan(cfg: ExperimentConfig, out: RunWriter, manifest: RunManifest) -> int:
    run = cfg.run
    sampler = sampler_from_spec(run["sampler"])
    reports = []
    for i, E in enumerate(cfg.energies()):
        p = cfg.parameters(E)
        for N in run["scales"]:
            with _Stage(manifest, f"E{i}_N{N}"):
                r = bad_set_estimate(p, N, sampler, run["b"], run["gamma"], run["kappa"],
                                     workers=manifest.workers)
            d = r.as_dict()
            d["energy_index"] = i
            if run["persist_cells"] and "csv" in out.formats:
                name = f"bad_cells_E{i}_N{N}.csv"
                write_bad_cells(out.directory / name, r.bad_cells)
                out.adopt(name)
                d["cells_file"] = name
            reports.append(d)
    out.csv("badset_summary.csv",
            ["energy_index", "E", "N", "samples", "bad_count", "bad_fraction", "stderr",
             "threshold"],
            ([d["energy_index"], d["E"], d["N"], d["samples"], d["bad_count"],
              d["bad_fraction"], d["stderr"], d["threshold"]] for d in reports))
    out.json("badset_report.json", {"reports": reports, "workers": manifest.workers})
    return 0


def run_msa(cfg: ExperimentConfig, out: RunWriter, manifest: RunManifest) -> int:
    run = cfg.run
    ladder = ScaleLadder(tuple(run["scales"]), run["kappa"], run["b"], run["delta"])
    payload = {"ladder": {"scales": list(ladder.scales), "kappa": ladder.kappa,
                          "b": ladder.b, "delta": ladder.delta}, "energies": []}
    status = 0
    for i, E in enumerate(cfg.energies()):
        p = cfg.parameters(E)
        entry = {"E": E}
        if run["initial_check"]:
            entry["initial_scale"] = _initial_scale_summary(p, ladder, run)
        with _Stage(manifest, f"ladder_E{i}"):
            reps = inductive_scale_verify(ladder, p, run["phases_per_scale"], run["seed"],
                                          run["budget"], run["gamma"])
        entry["scales"] = [r.as_dict() for r in reps]
        if any(r.budget_exhausted for r in reps):
            status = EXIT_NUMERIC
        payload["energies"].append(entry)
    out.json("msa_report.json", payload)
    out.csv("msa_scales.csv",
            ["E", "N", "phases", "bad", "bad_fraction", "stderr", "threshold",
             "mean_bad_windows", "paste_applied", "paste_ok", "budget_exhausted"],
            ([e["E"], s["N"], s["phases"], s["bad"], s["bad_fraction"], s["stderr"],
              s["threshold"], s["mean_bad_windows"], s["paste_applied"], s["paste_ok"],
              s["budget_exhausted"]] for e in payload["energies"] for s in e["scales"]))
    if status:
        log.error("inversion budget exhausted; partial ladder written")
    return status


def _initial_scale_summary(p, ladder, run) -> dict:
    N = ladder.scales[0]
    try:
        first = initial_scale_check(p, N, ladder.kappa, ladder.b, run["lambda0"])
    except RegimeError as exc:
        return {"skipped": str(exc)}
    xs, ys = MonteCarloSampler(run["phases_per_scale"], run["seed"]).points()
    escapes = consistent = 0
    for x, y in zip(xs, ys):
        v = initial_scale_check(p.with_phase(x, y), N, ladder.kappa, ladder.b, run["lambda0"])
        escapes += v.escapes
        consistent += v.consistent
    return {"N": N, "regime": first.regime, "threshold": first.threshold,
            "phases": len(xs), "escapes": escapes, "consistent": consistent}


def run_spectrum(cfg: ExperimentConfig, out: RunWriter, manifest: RunManifest) -> int:
    run = cfg.run
    p = cfg.parameters()
    I = _interval(run)
    with _Stage(manifest, "eigensolve"):
        rep = eigensolve_jacobi(p, I, run["floor"], run["threat"])
    gammas = [None] * len(rep)
    if run["lyapunov"]:
        with _Stage(manifest, "lyapunov"):
            gammas = [e.gamma for e in lyapunov_many(p, rep.eigenvalues, run["lyapunov_steps"])]
    rows = []
    ratios = []
    for j in range(len(rep)):
        fit = rep.decay_fits[j] if rep.decay_fits else None
        rate = fit.rate if fit is not None else math.nan
        g = gammas[j]
        ratio = rate / g if (g is not None and g > 0 and fit is not None) else math.nan
        localized = rep.iprs[j] > run["ipr_threshold"]
        if localized and math.isfinite(ratio):
            ratios.append(ratio)
        rows.append([j, rep.eigenvalues[j], int(I.a + rep.centers[j]), rep.iprs[j],
                     rep.residuals[j], rate,
                     fit.residual if fit is not None else math.nan,
                     bool(fit is not None and fit.reliable),
                     math.nan if g is None else g, ratio])
    out.csv("eigen_decay.csv",
            ["index", "eigenvalue", "center", "ipr", "residual", "rate", "fit_residual",
             "reliable", "lyapunov", "rate_over_lyapunov"], rows)
    localized_rates = [r[5] for r in rows if r[3] > run["ipr_threshold"]]
    summary = {
        "interval": [I.a, I.b], "size": I.size, "route": rep.route,
        "flagged_sites": list(rep.flagged_sites), "matrix_norm": rep.matrix_norm,
        "eigenvalues": rep.eigenvalues, "max_residual": float(np.max(rep.residuals)),
        "ipr_threshold": run["ipr_threshold"],
        "localized_fraction": float(np.mean(rep.iprs > run["ipr_threshold"])),
        "min_localized_rate": min(localized_rates) if localized_rates else None,
        "median_localized_rate": float(np.median(localized_rates)) if localized_rates else None,
        "decay_floor": DECAY_FLOOR,
        "median_rate_over_lyapunov": float(np.median(ratios)) if ratios else None,
    }
    out.json("eigen_report.json", summary)
    return 0


def run_lyapunov(cfg: ExperimentConfig, out: RunWriter, manifest: RunManifest) -> int:
    run = cfg.run
    energies = run["energies"] if run["energies"] is not None else cfg.energies()
    p = cfg.parameters(energies[0])
    with _Stage(manifest, "transfer"):
        est = lyapunov_many(p, energies, run["steps"], run["every"])
    out.csv("lyapunov.csv", ["E", "gamma", "steps", "renormalizations"],
            ([e.E, e.gamma, e.steps, e.renormalizations] for e in est))
    out.json("lyapunov_report.json",
             {"phase": list(est[0].phase), "steps": run["steps"], "every": run["every"],
              "estimates": [{"E": e.E, "gamma": e.gamma} for e in est]})
    return 0


RUNNERS = {"greens": run_greens, "badset": run_badset_scan, "msa": run_msa,
           "spectrum": run_spectrum, "lyapunov": run_lyapunov}


def execute(cfg: ExperimentConfig, directory=None) -> tuple[int, RunManifest]:
    """Run one configured experiment and write its files plus ``manifest.json``."""
    directory = directory or cfg.output["directory"]
    cfg.output["directory"] = str(directory)
    workers = cfg.run.get("workers") or default_workers()
    manifest = RunManifest(cfg.config_hash(), __version__, cfg.to_dict(), workers)
    out = RunWriter(directory, cfg.output["formats"])
    t0 = time.perf_counter()
    try:
        status = RUNNERS[cfg.command](cfg, out, manifest)
    finally:
        manifest.wall_time = time.perf_counter() - t0
        manifest.outputs = out.inventory()
    manifest.status = "ok" if status == 0 else "incomplete"
    path = out.directory / "manifest.json"
    path.write_text(json.dumps(_plain(manifest.as_dict()), sort_keys=True, indent=2) + "\n")
    return status, manifest


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="degenloc", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", "-c", required=True, help="JSON or YAML config file")
        sp.add_argument("--out", "-o", help="output directory (overrides output.directory)")
        sp.add_argument("--workers", type=int, help="worker processes (badset only)")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        data = load_config_file(args.config)
        if args.workers is not None:
            data.setdefault("run", {})["workers"] = args.workers
        cfg = ExperimentConfig.from_dict(data, args.command)
        status, manifest = execute(cfg, args.out)
    except (ConfigError, LadderError, RegimeError, DiophantineError, FunctionSpecError,
            WeightError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LemmaFalsified as exc:
        print(f"PROPERTY FALSIFIED: {exc}", file=sys.stderr)
        return EXIT_FALSIFIED
    except (SingularOperatorError, DegenerateWeightError, NumericalInconsistency,
            HypothesisError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if args.verbose:
        for stage, secs in manifest.stages.items():
            log.info("%s: %.3f s", stage, secs)
    return status


if __name__ == "__main__":
    sys.exit(main())
