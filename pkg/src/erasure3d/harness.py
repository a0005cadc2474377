"""Experiment sweeps over n, exponent regression and persistence."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import (
    Granularity,
    binning_check,
    cutset_bounds,
    k_alpha,
    tdma_root,
    theoretical_exponent,
)
from .channel import DecayFamily, ErasureModel, StalledLinkError
from .netgen import DensityMode, NetworkConfig, generate
from .percolation import PercolationConfig, highway_system_for
from .routing import (
    HIGHWAY_DISTANCE,
    PlanFailure,
    RoutingConfig,
    TdmaParams,
    access_hop_units,
    assign_slices_and_entries,
    highway_bottleneck_margin,
    simulate,
)

CSV_COLUMNS = (
    "n",
    "seed",
    "mode",
    "throughput",
    "bound_x",
    "bound_y",
    "bound_z",
    "bound_min",
    "failed",
    "bottleneck_phase",
)


class Mode(str, Enum):
    SIMULATE = "simulate"
    BOUND = "bound"
    PERCOLATION_STATS = "percolation_stats"
    BINNING_STATS = "binning_stats"
    CONSTANTS = "constants"


class AllTrialsFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    n_list: tuple[int, ...]
    seeds_per_n: int = 1
    base_seed: int = 0
    mode: Mode = Mode.SIMULATE
    model: str = "exponential"
    gamma: float | None = 0.7
    alpha: float | None = 4.0
    lam: float = 1 / 3
    mu: float = 1 / 3
    nu: float = 1 / 3
    density_mode: DensityMode = DensityMode.EXTENDED
    c: float = 1.5
    kappa: float = 1.3
    w: float | None = None
    packets_per_source: int = 1
    slot_budget: float | None = None
    with_bounds: bool = True
    workers: int = 1
    out: str | None = None
    trace: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "density_mode", DensityMode(self.density_mode))
        DecayFamily(self.model)
        if self.mode is not Mode.CONSTANTS:
            if not self.n_list:
                raise ValueError("n_list is empty")
            if any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
                raise ValueError("n_list must be strictly increasing")
        if self.mode in (Mode.SIMULATE, Mode.BOUND) and len(self.n_list) < 2:
            raise ValueError("regression modes need at least two sizes")
        if self.seeds_per_n < 1:
            raise ValueError("seeds_per_n must be positive")
        if self.trace and self.workers > 1:
            raise ValueError("event tracing needs a single worker")
        self.erasure_model()
        self.network_config(self.n_list[0] if self.n_list else 1, 0)

    def erasure_model(self) -> ErasureModel:
        if DecayFamily(self.model) is DecayFamily.EXPONENTIAL:
            return ErasureModel.exponential(self.gamma)
        return ErasureModel.polynomial(self.alpha)

    def network_config(self, n: int, seed: int) -> NetworkConfig:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return NetworkConfig(
                n, self.lam, self.mu, self.nu, self.density_mode, seed,
                allow_flat=min(self.lam, self.mu, self.nu) == 0,
            )

    def percolation_config(self) -> PercolationConfig:
        return PercolationConfig(self.c, self.kappa)

    def routing_config(self) -> RoutingConfig:
        return RoutingConfig(
            w=self.w, packets_per_source=self.packets_per_source,
            slot_budget=self.slot_budget, trace=bool(self.trace),
        )

    def seeds(self) -> list[int]:
        return [self.base_seed + i for i in range(self.seeds_per_n)]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mode"] = self.mode.value
        out["density_mode"] = self.density_mode.value
        out["n_list"] = list(self.n_list)
        for key in ("workers", "out", "trace"):
            out.pop(key)
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def feasibility_notes(self) -> list[str]:
        notes = list(self.percolation_config().diagnostics(self.lam, self.mu, self.nu))
        model = self.erasure_model()
        if model.family is DecayFamily.EXPONENTIAL:
            margin = highway_bottleneck_margin(model, self.c, self.kappa, (self.lam, self.mu, self.nu))
            if margin <= 0:
                notes.append(f"access phases may dominate: highway-bottleneck margin {margin:.4f} <= 0")
        return notes


@dataclass
class TrialResult:
    n: int
    seed: int
    mode: str
    throughput: float = math.nan
    bound_x: float = math.nan
    bound_y: float = math.nan
    bound_z: float = math.nan
    bound_min: float = math.nan
    failed: bool = False
    bottleneck_phase: str = ""
    incomplete: bool = False
    report: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {k: getattr(self, k) for k in CSV_COLUMNS}


def run_trial(spec: ExperimentSpec, n: int, seed: int, trace_sink=None) -> TrialResult:
    """One network instance of the sweep, evaluated according to the mode."""
    mode = spec.mode
    res = TrialResult(n, seed, mode.value)
    instance = generate(spec.network_config(n, seed))
    model = spec.erasure_model()
    if mode in (Mode.SIMULATE, Mode.BOUND) and spec.with_bounds:
        b = cutset_bounds(instance, model)
        res.bound_x, res.bound_y, res.bound_z, res.bound_min = b.bound_x, b.bound_y, b.bound_z, b.min_bound
        res.report["bounds"] = b.to_dict()
    if mode is Mode.BOUND:
        return res
    if mode is Mode.BINNING_STATS:
        res.report["binning"] = {
            g.value: asdict(binning_check(instance, g, spec.c, spec.w)) | {"granularity": g.value}
            for g in Granularity
        }
        res.failed = not all(v["held"] for v in res.report["binning"].values())
        return res
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        grid, system = highway_system_for(instance, spec.percolation_config())
    if mode is Mode.PERCOLATION_STATS:
        res.failed = system.failed
        res.report["percolation"] = {
            "dims": list(system.dims),
            "delta_hat": system.delta_hat,
            "epsilon_m": system.epsilon_m,
            "min_crossings": min((r.crossings for r in system.rectangles), default=0),
            "zero_rectangles": sum(r.crossings == 0 for r in system.rectangles),
            "notes": system.notes,
        }
        return res
    if system.failed:
        res.failed = True
        res.report["failure"] = system.notes
        return res
    try:
        table = assign_slices_and_entries(instance, grid, system, spec.w)
        rng = np.random.default_rng([seed, n])
        sim = simulate(table, model, rng, spec.kappa, spec.routing_config(), trace_sink)
    except (PlanFailure, StalledLinkError) as exc:
        res.failed = True
        res.report["failure"] = [str(exc)]
        return res
    res.throughput = sim.aggregate_throughput
    res.bottleneck_phase = sim.bottleneck_phase or ""
    res.incomplete = sim.incomplete
    res.report["simulation"] = sim.to_dict()
    return res


def fit_exponent(points) -> tuple[float, float]:
    """Least-squares slope of ln(value) against ln(n), with its standard error."""
    pts = [(float(n), float(v)) for n, v in points]
    if any(v <= 0 for _, v in pts) or any(n <= 0 for n, _ in pts):
        raise ValueError("fit needs positive n and values")
    x = np.log([n for n, _ in pts])
    y = np.log([v for _, v in pts])
    if len(np.unique(x)) < 2:
        raise ValueError("fit needs at least two distinct n")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (y - y.mean()) / sxx)
    dof = len(x) - 2
    if dof <= 0:
        return slope, 0.0
    resid = y - y.mean() - slope * xc
    return slope, math.sqrt(float(resid @ resid) / dof / sxx)


def fit_deflated_exponent(points, power: float = 2.0) -> tuple[float, float]:
    """Slope after dividing every value by (ln n)^power."""
    return fit_exponent([(n, v / math.log(n) ** power) for n, v in points])


@dataclass
class SweepResult:
    spec: ExperimentSpec
    trials: list[TrialResult]
    fitted_exponent: float = math.nan
    fit_stderr: float = math.nan
    polylog_corrected_exponent: float = math.nan
    bound_exponent: float = math.nan
    bound_stderr: float = math.nan
    bound_deflated_exponent: float = math.nan
    notes: list[str] = field(default_factory=list)

    @property
    def any_incomplete(self) -> bool:
        return any(t.incomplete for t in self.trials)

    def means(self, column: str) -> list[tuple[int, float]]:
        out = []
        for n in self.spec.n_list:
            vals = [getattr(t, column) for t in self.trials if t.n == n and not t.failed]
            vals = [v for v in vals if np.isfinite(v)]
            if vals:
                out.append((n, float(np.mean(vals))))
        return out

    def summary(self) -> dict:
        return {
            "fitted_exponent": self.fitted_exponent,
            "fit_stderr": self.fit_stderr,
            "polylog_corrected_exponent": self.polylog_corrected_exponent,
            "bound_exponent": self.bound_exponent,
            "bound_stderr": self.bound_stderr,
            "bound_deflated_exponent": self.bound_deflated_exponent,
            "theoretical_exponent": theoretical_exponent(self.spec.lam, self.spec.mu, self.spec.nu),
            "notes": self.notes,
        }

    def metadata(self) -> dict:
        return _metadata(self.spec)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for t in self.trials:
            row = t.row()
            row["failed"] = int(row["failed"])
            for key in ("throughput", "bound_x", "bound_y", "bound_z", "bound_min"):
                row[key] = "" if not np.isfinite(row[key]) else repr(float(row[key]))
            writer.writerow(row)
        buf.write("# " + json.dumps(self.metadata(), sort_keys=True) + "\n")
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "spec": self.spec.to_dict(),
            "summary": self.summary(),
            "trials": [
                {**t.row(), "incomplete": t.incomplete, **t.report} for t in self.trials
            ],
            "metadata": self.metadata(),
        }
        return json.dumps(doc, indent=1, default=_json_default)

    def write(self, path: str | Path) -> tuple[Path, Path]:
        base = Path(path)
        csv_path = base.with_suffix(".csv")
        json_path = base.with_suffix(".json")
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        csv_path.write_text(self.to_csv())
        json_path.write_text(self.to_json())
        return csv_path, json_path


def _metadata(spec: ExperimentSpec) -> dict:
    return {"tool": "erasure3d", "version": __version__, "config_hash": spec.config_hash()}


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Enum):
        return obj.value
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _trial_star(args):
    return run_trial(*args)


def run_sweep(spec: ExperimentSpec) -> SweepResult:
    """Run every (n, seed) trial, then fit throughput and bound exponents.

    Trials are merged in (n, seed) order, so the output does not depend on
    the number of workers.
    """
    jobs = [(spec, n, s) for n in spec.n_list for s in spec.seeds()]
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            trials = list(pool.map(_trial_star, jobs))
    elif spec.trace:
        Path(spec.trace).parent.mkdir(parents=True, exist_ok=True)
        with open(spec.trace, "w") as sink:
            trials = [run_trial(*job, trace_sink=sink) for job in jobs]
            sink.write("# " + json.dumps(_metadata(spec), sort_keys=True) + "\n")
    else:
        trials = [run_trial(*job) for job in jobs]
    result = SweepResult(spec, trials, notes=spec.feasibility_notes())
    for n in spec.n_list:
        if all(t.failed for t in trials if t.n == n) and spec.mode in (Mode.SIMULATE, Mode.BOUND):
            raise AllTrialsFailed(f"every trial failed at n={n}")
    if spec.mode is Mode.SIMULATE:
        pts = result.means("throughput")
        if len(pts) >= 2 and all(v > 0 for _, v in pts):
            result.fitted_exponent, result.fit_stderr = fit_exponent(pts)
            result.polylog_corrected_exponent = fit_deflated_exponent(pts)[0]
    if spec.mode in (Mode.SIMULATE, Mode.BOUND) and spec.with_bounds:
        pts = [(n, v) for n, v in result.means("bound_min") if v > 0]
        if len(pts) >= 2:
            result.bound_exponent, result.bound_stderr = fit_exponent(pts)
            result.bound_deflated_exponent = fit_deflated_exponent(pts)[0]
    return result


def constants_report(spec: ExperimentSpec) -> dict:
    """Derived constants and TDMA parameters for the experiment's model."""
    model = spec.erasure_model()
    out = {"tdma_root": tdma_root(), "theoretical_exponent": theoretical_exponent(spec.lam, spec.mu, spec.nu)}
    if model.family is DecayFamily.POLYNOMIAL and model.alpha > 3:
        out["K_alpha"] = k_alpha(model.alpha)
    else:
        out["d_star"] = model.d_star
        out["highway_bottleneck_margin"] = highway_bottleneck_margin(model, spec.c, spec.kappa, (spec.lam, spec.mu, spec.nu))
    hw = TdmaParams.for_reach(model, spec.c, HIGHWAY_DISTANCE)
    out["highway_tdma"] = {"d": hw.d, "k": hw.k, "K": hw.spacing, "t": hw.t}
    for n in spec.n_list:
        cfg = spec.network_config(n, 0)
        m = max(1, math.floor(max(cfg.extended_sides) / spec.c + 1e-9))
        acc = TdmaParams.for_reach(model, spec.c, access_hop_units(spec.kappa, m))
        out.setdefault("access_tdma", {})[str(n)] = {"d": acc.d, "k": acc.k, "K": acc.spacing, "t": acc.t}
    return out


def with_overrides(spec: ExperimentSpec, **kw) -> ExperimentSpec:
    return replace(spec, **{k: v for k, v in kw.items() if v is not None})
