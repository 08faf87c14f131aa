"""Run parsed jobs and render their CSV/JSON outputs.

Every job returns a :class:`JobOutput`: the rendered files (name to text) plus
the in-memory results, so callers can either write the files or inspect the
numbers. Rendering is deterministic: floats use ``repr`` and rows follow the
order of the input grids.
"""
from __future__ import annotations

import cmath
import csv
import io
import json
import math
import numbers
from dataclasses import dataclass, field

from . import __version__
from .config import ConfigError, JobConfig, expand_grid
from .fock import NumericalIntegrityError
from .lineshape import (LineshapeParams, PulseSpec, compute_gamma_srs, compute_h_srs,
                        line_overlap, spectral_density_samples)
from .metrology import evaluate
from .optimizer import (OptimizationError, SweepAxis, SweepPlan, _map_ordered, crossover_scan,
                        optimize_probe, run_sweep)
from .states import COHERENT, SQUEEZED, TMS, ProbeSpec

SCHEMA_VERSION = 1


class JobError(RuntimeError):
    """A job ran but produced nothing usable; ``exit_code`` follows the CLI contract."""

    def __init__(self, message, exit_code=2):
        super().__init__(message)
        self.exit_code = exit_code


@dataclass
class JobOutput:
    files: dict = field(default_factory=dict)
    results: object = None
    ok: bool = True


# -- rendering -------------------------------------------------------------------


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, numbers.Integral):
        return str(int(value))
    if isinstance(value, numbers.Real):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ";".join(fmt(v) for v in value)
    return str(value)


def render_csv(command: str, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# srs_qmetro {__version__} {command} schema {SCHEMA_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return fmt(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def render_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _require(params, key, command):
    if key not in params:
        raise ConfigError(f"[{command}] needs '{key}'")
    return params[key]


def _check_keys(params, allowed, command):
    extra = set(params) - set(allowed)
    if extra:
        raise ConfigError(f"[{command}] has unknown keys {sorted(extra)}")


# -- lineshape ---------------------------------------------------------------------


def _pulse(table, what):
    try:
        return PulseSpec(**table)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {what} pulse: {exc}") from exc


def run_lineshape(job: JobConfig, threads: int = 1) -> JobOutput:
    p = job.params
    _check_keys(p, {"n_molecules", "eps_pu", "eps_pr", "lines", "pump", "probe", "samples",
                    "method"}, "lineshape")
    try:
        params = LineshapeParams(_require(p, "n_molecules", "lineshape"), _require(p, "eps_pu", "lineshape"),
                                 _require(p, "eps_pr", "lineshape"), tuple(p.get("lines", ())))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad lineshape parameters: {exc}") from exc
    pu = _pulse(_require(p, "pump", "lineshape"), "pump")
    pr = _pulse(_require(p, "probe", "lineshape"), "probe")
    method = p.get("method", "adaptive")
    gamma = compute_gamma_srs(params, pu, pr, method=method)
    h = compute_h_srs(params, pu, pr, method=method)
    lines = []
    for line in params.lines:
        w = params.prefactor * line.polarizability_sq
        absorptive = line_overlap("absorptive", line, pu, pr, method=method) if w else 0.0
        dispersive = line_overlap("dispersive", line, pu, pr, method=method) if w else 0.0
        lines.append({"omega_line": line.omega_line, "gamma_line": line.gamma_line,
                      "polarizability_sq": line.polarizability_sq,
                      "gamma_srs": 2 * w * absorptive, "h_srs": w * dispersive})
    report = {"gamma_srs": gamma, "h_srs": h, "lines": lines, "params": params.to_dict(),
              "pump": {"center_freq": pu.center_freq, "bandwidth": pu.bandwidth},
              "probe": {"center_freq": pr.center_freq, "bandwidth": pr.bandwidth},
              "version": __version__}
    omega, phi_sq = spectral_density_samples(pu, pr, params, int(p.get("samples", 201)))
    rows = [{"omega": float(w), "phi_sq": float(v)} for w, v in zip(omega, phi_sq)]
    files = {f"{job.name}.json": render_json(report),
             f"{job.name}_phi.csv": render_csv("lineshape", ["omega", "phi_sq"], rows)}
    return JobOutput(files, report)


# -- curves and sweeps ------------------------------------------------------------


def plan_from_params(p: dict, command: str, label: str = "") -> SweepPlan:
    _check_keys(p, {"family", "fixed", "axes", "observables", "compute_qfi", "derivative"}, command)
    try:
        axes = tuple(SweepAxis(_require(a, "param", command), tuple(expand_grid(_require(a, "grid", command))))
                     for a in p.get("axes", ()))
        return SweepPlan(
            family=_require(p, "family", command), fixed=dict(p.get("fixed", {})), axes=axes,
            observables=tuple(p.get("observables", ("delta_n",))),
            compute_qfi=bool(p.get("compute_qfi", True)), derivative=p.get("derivative", "fd"),
            label=label,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad [{command}] plan: {exc}") from exc


def _result_row(r, observables):
    row = {"gamma_srs": r.gamma_srs, "h_srs": r.h_srs, "n_tot": r.n_tot, "qfi": r.qfi,
           "qfi_lossy": r.qfi_lossy, "snr": r.snr, "eta_pu": r.eta_pu, "eta_pr": r.eta_pr,
           "flags": r.flags}
    for name in observables:
        row[f"mom_{name}"] = r.mom.get(name)
    if r.dims is not None:
        row["d_pu"], row["d_pr"] = r.dims.d_pu, r.dims.d_pr
    return row


def _all_failed(results):
    return bool(results) and all(any(f.startswith("failed:") for f in r.flags) for r in results)


def run_curve(job: JobConfig, threads: int = 1) -> JobOutput:
    plan = plan_from_params(job.params, "curve", job.name)
    results = run_sweep(plan, threads)
    columns = (["gamma_srs", "n_tot", "qfi"] + [f"mom_{o}" for o in plan.observables]
               + ["snr", "eta_pu", "eta_pr", "flags"])
    rows = []
    for point, r in zip(plan.points(), results):
        row = _result_row(r, plan.observables)
        row["n_tot"] = point["n_tot"]
        rows.append(row)
    if _all_failed(results):
        raise JobError("every grid point failed")
    return JobOutput({f"{job.name}.csv": render_csv("curve", columns, rows)}, results)


def run_sweep_job(job: JobConfig, threads: int = 1) -> JobOutput:
    plan = plan_from_params(job.params, "sweep", job.name)
    points = list(plan.points())
    results = run_sweep(plan, threads)
    params = ["n_tot", "n_pr", "n_sq", "phase_pr", "phase_sq", "gamma_srs", "h_srs", "eta_pu", "eta_pr"]
    columns = (params + ["qfi", "qfi_lossy"] + [f"mom_{o}" for o in plan.observables]
               + ["snr", "d_pu", "d_pr", "flags"])
    rows = []
    for point, r in zip(points, results):
        row = _result_row(r, plan.observables)
        row.update({k: point[k] for k in params})
        rows.append(row)
    if _all_failed(results):
        raise JobError("every grid point failed")
    return JobOutput({f"{job.name}.csv": render_csv("sweep", columns, rows)}, results)


# -- optimization ---------------------------------------------------------------------


OPTIMIZE_COLUMNS = ["family", "n_tot", "gamma_srs", "target", "best_value", "snr", "qfi", "mom",
                    "n_pu", "n_pr", "n_sq", "phase_sq", "iterations", "converged", "evaluations",
                    "flags"]


@dataclass(frozen=True)
class OptimizeRow:
    family: str
    n_tot: float
    gamma_srs: float
    target: str
    best_value: float
    snr: float
    qfi: float | None
    mom: float | None
    probe: ProbeSpec | None
    iterations: int | None = None
    converged: bool | None = None
    evaluations: int | None = None
    flags: tuple = ()

    def as_row(self) -> dict:
        row = {k: getattr(self, k) for k in OPTIMIZE_COLUMNS if hasattr(self, k)}
        if self.probe is not None:
            n_pu, n_pr = self.probe.mode_means()
            row["n_pu"] = abs(self.probe.alpha_pu) ** 2 if self.family != TMS else n_pu
            if self.family == TMS:
                row["n_pr"] = n_pr
            else:
                row["n_pr"] = abs(self.probe.alpha_pr) ** 2
                row["n_sq"] = self.probe.n_sq
                row["phase_sq"] = _squeezing_phase(self.probe)
        return row


def _squeezing_phase(probe):
    if probe.n_sq == 0:
        return 0.0
    theta = cmath.phase(probe.zeta_pr)
    if abs(probe.alpha_pr) > 0:
        theta -= 2 * cmath.phase(probe.alpha_pr)
    return math.remainder(theta, 2 * math.pi)


def _observable_of(target):
    return target.partition(":")[2] or None


def _optimize_one(family, n, gamma, target, eta, h, starts, seed, n_sq, compute_qfi):
    obs = _observable_of(target)
    try:
        rec = optimize_probe(family, n, gamma, target, eta, h=h, starts=starts, seed=seed, n_sq=n_sq)
    except OptimizationError as exc:
        return OptimizeRow(family, n, gamma, target, math.nan, math.nan, None, None, None,
                           flags=(f"failed:optimize:{exc}",))
    qfi = mom = None
    snr = math.nan
    flags = () if rec.converged else ("not_converged",)
    if compute_qfi or obs:
        res = evaluate(rec.best_params, gamma, h, eta, (obs,) if obs else (),
                       compute_qfi=compute_qfi, strict=True)
        qfi = res.qfi_lossy
        mom = res.mom.get(obs) if obs else None
        snr = res.snr
        flags = flags + res.flags
    return OptimizeRow(family, n, gamma, target, rec.best_value, snr, qfi, mom, rec.best_params,
                       rec.iterations, rec.converged, rec.evaluations, flags)


def _tms_row(n, gamma, eta, h, obs, compute_qfi):
    probe = ProbeSpec.tms_with_photons(n)
    res = evaluate(probe, gamma, h, eta, (obs,), compute_qfi=compute_qfi, strict=True)
    return OptimizeRow(TMS, n, gamma, f"mom:{obs}", res.mom[obs], res.snr, res.qfi_lossy,
                       res.mom[obs], probe, flags=res.flags)


def run_optimize(job: JobConfig, threads: int = 1) -> JobOutput:
    p = job.params
    _check_keys(p, {"families", "n_grid", "gamma_srs", "h_srs", "target", "eta", "starts", "n_sq",
                    "compute_qfi", "tms_reference", "tms_observable"}, "optimize")
    families = list(p.get("families", [COHERENT]))
    for fam in families:
        if fam not in (COHERENT, SQUEEZED):
            raise ConfigError(f"cannot optimize family {fam!r}")
    n_grid = expand_grid(_require(p, "n_grid", "optimize"))
    gamma = float(_require(p, "gamma_srs", "optimize"))
    h = float(p.get("h_srs", 0.0))
    eta = tuple(float(x) for x in p.get("eta", (1.0, 1.0)))
    target = p.get("target", "mom:n_pr")
    starts = int(p.get("starts", 8))
    n_sq = p.get("n_sq")
    compute_qfi = bool(p.get("compute_qfi", True))
    tasks = [(fam, n) for fam in families for n in n_grid]
    try:
        rows = _map_ordered(
            lambda t: _optimize_one(t[0], t[1], gamma, target, eta, h, starts, job.seed, n_sq, compute_qfi),
            tasks, threads)
        if p.get("tms_reference", False):
            obs = p.get("tms_observable", "delta_n")
            rows += _map_ordered(lambda n: _tms_row(n, gamma, eta, h, obs, compute_qfi), n_grid, threads)
    except ValueError as exc:
        raise ConfigError(f"bad [optimize] parameters: {exc}") from exc
    if rows and all(r.probe is None for r in rows):
        raise JobError("every optimization failed")
    csv_text = render_csv("optimize", OPTIMIZE_COLUMNS, [r.as_row() for r in rows])
    return JobOutput({f"{job.name}.csv": csv_text}, rows)


# -- crossover ---------------------------------------------------------------------


CROSSOVER_COLUMNS = ["family", "gamma_srs", "n_cr", "censored", "bracket_lo", "bracket_hi",
                     "n_pr_at_cr", "n_sq_at_cr"]


def run_crossover(job: JobConfig, threads: int = 1) -> JobOutput:
    p = job.params
    _check_keys(p, {"families", "gammas", "n_grid", "threshold", "target", "refine", "starts"},
                "crossover")
    families = list(p.get("families", [COHERENT]))
    gammas = expand_grid(_require(p, "gammas", "crossover"))
    n_grid = expand_grid(_require(p, "n_grid", "crossover"))
    try:
        tables = [crossover_scan(fam, gammas, n_grid, threshold=float(p.get("threshold", 0.01)),
                                 target=p.get("target", "mom:n_pr"), refine=int(p.get("refine", 5)),
                                 starts=int(p.get("starts", 8)), seed=job.seed, threads=threads)
                  for fam in families]
    except ValueError as exc:
        raise ConfigError(f"bad [crossover] parameters: {exc}") from exc
    rows = []
    for tab in tables:
        for r in tab.rows:
            rows.append({"family": tab.family, "gamma_srs": r.gamma_srs, "n_cr": r.n_cr,
                         "censored": r.censored, "bracket_lo": r.bracket[0], "bracket_hi": r.bracket[1],
                         "n_pr_at_cr": r.n_pr_at_cr, "n_sq_at_cr": r.n_sq_at_cr})
    fits = {tab.family: {"slope": tab.slope, "intercept": tab.intercept, "threshold": tab.threshold}
            for tab in tables}
    files = {f"{job.name}.csv": render_csv("crossover", CROSSOVER_COLUMNS, rows),
             f"{job.name}_fit.json": render_json({"fits": fits, "version": __version__})}
    return JobOutput(files, tables)


RUNNERS = {
    "lineshape": run_lineshape,
    "curve": run_curve,
    "sweep": run_sweep_job,
    "optimize": run_optimize,
    "crossover": run_crossover,
}


def run_job(job: JobConfig, threads: int = 1) -> JobOutput:
    """Dispatch a non-acceptance job."""
    if job.command == "accept":
        from .acceptance import run_accept_job
        return run_accept_job(job, threads)
    return RUNNERS[job.command](job, threads)


__all__ = ["JobError", "JobOutput", "NumericalIntegrityError", "fmt", "plan_from_params",
           "render_csv", "render_json", "run_job"]
