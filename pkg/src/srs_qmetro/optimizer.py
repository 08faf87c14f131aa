"""Parameter sweeps and photon-budget-constrained probe optimization.

Probes are described by budget coordinates: total photons ``n_tot``, coherent
probe photons ``n_pr``, probe squeezing photons ``n_sq`` and two relative
phases (see :func:`srs_qmetro.states.with_budget`); the pump takes the rest.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .fock import NumericalIntegrityError, TruncationError
from .metrology import OBSERVABLES, DerivativeError, FisherResult, evaluate
from .states import COHERENT, FAMILIES, SQUEEZED, ProbeSpec, mean_total_photons, with_budget

PROBE_PARAMS = ("n_tot", "n_pr", "n_sq", "phase_pr", "phase_sq")
CHANNEL_PARAMS = ("gamma_srs", "h_srs", "eta_pu", "eta_pr", "eta")
SWEEP_PARAMS = PROBE_PARAMS + CHANNEL_PARAMS

_DEFAULTS = {"n_pr": 0.0, "n_sq": 0.0, "phase_pr": 0.0, "phase_sq": 0.0,
             "h_srs": 0.0, "eta_pu": 1.0, "eta_pr": 1.0}


class OptimizationError(RuntimeError):
    """No multistart run converged; ``partial`` holds what was found."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial or []


@dataclass(frozen=True)
class SweepAxis:
    param: str
    grid: tuple

    def __post_init__(self):
        if self.param not in SWEEP_PARAMS:
            raise ValueError(f"unknown sweep parameter {self.param!r}; expected one of {SWEEP_PARAMS}")
        grid = tuple(float(x) for x in self.grid)
        if not all(math.isfinite(x) for x in grid):
            raise ValueError(f"grid of {self.param} must be finite")
        object.__setattr__(self, "grid", grid)


@dataclass(frozen=True)
class SweepPlan:
    """Grid of points evaluated in row-major order over ``axes``.

    ``fixed`` supplies every parameter that is not swept; ``gamma_srs`` and
    ``n_tot`` must be given one way or the other.
    """

    family: str
    fixed: dict
    axes: tuple = ()
    observables: tuple = ("delta_n",)
    compute_qfi: bool = True
    derivative: str = "fd"
    label: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown probe family {self.family!r}")
        axes = tuple(a if isinstance(a, SweepAxis) else SweepAxis(**a) for a in self.axes)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "observables", tuple(self.observables))
        for name in self.observables:
            if name not in OBSERVABLES:
                raise ValueError(f"unknown observable {name!r}")
        fixed = {k: float(v) for k, v in dict(self.fixed).items()}
        for name in fixed:
            if name not in SWEEP_PARAMS:
                raise ValueError(f"unknown fixed parameter {name!r}")
        swept = [a.param for a in axes]
        if len(set(swept)) != len(swept):
            raise ValueError("an axis parameter appears twice")
        for name in ("gamma_srs", "n_tot"):
            if name not in fixed and name not in swept:
                raise ValueError(f"{name} must be fixed or swept")
        object.__setattr__(self, "fixed", fixed)

    @property
    def shape(self):
        return tuple(len(a.grid) for a in self.axes)

    def points(self):
        """Parameter dicts in row-major order (last axis fastest)."""
        names = [a.param for a in self.axes]
        for values in itertools.product(*(a.grid for a in self.axes)):
            point = dict(_DEFAULTS)
            point.update(self.fixed)
            point.update(zip(names, values))
            # "eta" sets both detector efficiencies at once
            if "eta" in point:
                point["eta_pu"] = point["eta_pr"] = point.pop("eta")
            yield point


def probe_from_point(family: str, point: dict) -> ProbeSpec:
    return with_budget(family, point["n_tot"], point["n_pr"], point["n_sq"],
                       point["phase_pr"], point["phase_sq"])


def failed_result(point: dict, reason: str, probe=None) -> FisherResult:
    nan = float("nan")
    return FisherResult(
        gamma_srs=point["gamma_srs"], h_srs=point["h_srs"], n_tot=point["n_tot"], probe=probe,
        eta_pu=point["eta_pu"], eta_pr=point["eta_pr"], qfi=None, qfi_lossy=None, mom={},
        snr=nan, snr_observable=None, dims=None, flags=(f"failed:{reason}",),
    )


def evaluate_point(plan: SweepPlan, point: dict) -> FisherResult:
    """Evaluate one grid point; truncation and budget problems become failed cells."""
    try:
        probe = probe_from_point(plan.family, point)
    except ValueError:
        return failed_result(point, "budget")
    try:
        return evaluate(
            probe, point["gamma_srs"], point["h_srs"], (point["eta_pu"], point["eta_pr"]),
            plan.observables, compute_qfi=plan.compute_qfi, derivative=plan.derivative,
        )
    except TruncationError:
        return failed_result(point, "truncation", probe)
    except DerivativeError:
        return failed_result(point, "derivative", probe)


def _map_ordered(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def run_sweep(plan: SweepPlan, threads: int = 1) -> list[FisherResult]:
    """One result per grid point, in row-major order regardless of ``threads``."""
    return _map_ordered(lambda p: evaluate_point(plan, p), list(plan.points()), threads)


# -- optimization --------------------------------------------------------------------


@dataclass(frozen=True)
class OptimumRecord:
    """Best probe found by :func:`optimize_probe`.

    ``converged`` reports whether the best start met the simplex tolerances;
    ``iterations`` sums the iterations of all starts.
    """

    best_params: ProbeSpec
    best_value: float
    target: str
    n_tot: float
    gamma_srs: float
    iterations: int
    converged: bool
    evaluations: int
    starts: tuple = field(default=())

    @property
    def n_pr(self) -> float:
        return abs(self.best_params.alpha_pr) ** 2

    @property
    def n_sq(self) -> float:
        return self.best_params.n_sq


def _parse_target(target: str):
    if target == "qfi":
        return "qfi", None
    kind, _, obs = target.partition(":")
    if kind in ("mom", "snr") and obs in OBSERVABLES:
        return kind, obs
    raise ValueError(f"unknown optimization target {target!r}; use 'qfi', 'mom:<obs>' or 'snr:<obs>'")


def _budget(x, n_tot, family, fixed_sq):
    """Photon split and squeezing phase from the unconstrained search vector."""
    if family == COHERENT:
        (u,) = x
        return n_tot * math.cos(u) ** 2, n_tot * math.sin(u) ** 2, 0.0, 0.0
    if fixed_sq is not None:
        u, phase_sq = x
        rest = n_tot - fixed_sq
        return rest * math.cos(u) ** 2, rest * math.sin(u) ** 2, fixed_sq, phase_sq
    u, v, phase_sq = x
    s2 = math.sin(u) ** 2
    return n_tot * math.cos(u) ** 2, n_tot * s2 * math.cos(v) ** 2, n_tot * s2 * math.sin(v) ** 2, phase_sq


def _probe_from_budget(family, n_tot, split):
    n_pu, n_pr, n_sq, phase_sq = split
    # n_pu + n_pr + n_sq equals n_tot up to rounding; hand the pump the exact remainder
    return with_budget(family, n_tot, n_pr, n_sq, 0.0, phase_sq)


def _start_points(family, fixed_sq, starts, rng):
    if family == COHERENT:
        coarse = [np.array([u]) for u in np.linspace(0.0, math.pi / 2, 9)]
        rand = [np.array([rng.uniform(0, math.pi / 2)]) for _ in range(starts)]
    elif fixed_sq is not None:
        coarse = [np.array([u, 0.0]) for u in np.linspace(0.0, math.pi / 2, 9)]
        rand = [np.array([rng.uniform(0, math.pi / 2), rng.uniform(-math.pi, math.pi)])
                for _ in range(starts)]
    else:
        coarse = [np.array([u, v, 0.0]) for u in np.linspace(0.0, math.pi / 2, 7)
                  for v in np.linspace(0.0, math.pi / 2, 4)]
        rand = [np.array([rng.uniform(0, math.pi / 2), rng.uniform(0, math.pi / 2),
                          rng.uniform(-math.pi, math.pi)]) for _ in range(starts)]
    return coarse, rand


def optimize_probe(family: str, n_tot: float, gamma: float, target: str = "mom:n_pr",
                   eta=(1.0, 1.0), *, h: float = 0.0, starts: int = 8, seed: int = 0,
                   n_sq: float | None = None, xatol: float = 1e-4, fatol: float = 1e-9,
                   maxiter: int = 400) -> OptimumRecord:
    """Maximize a Fisher-information target at a fixed photon budget.

    The budget is split as ``n_pu = n cos^2 u``, ``n_pr = n sin^2 u cos^2 v``,
    ``n_sq = n sin^2 u sin^2 v``, so every candidate satisfies it exactly. The
    remaining free parameter is the squeezing phase relative to the probe
    displacement; the pump-probe phase is fixed at zero because the channel
    and detection are covariant under separate phase shifts of either mode.
    Nelder-Mead runs from the best point of a coarse grid plus ``starts - 1``
    seeded random points; ``-log F`` is minimized.

    Parameters
    ----------
    family : {"coherent-coherent", "coherent-squeezedcoherent"}
    target : str
        ``"qfi"``, ``"mom:<observable>"`` or ``"snr:<observable>"``.
    n_sq : float, optional
        Hold the squeezing photons fixed (squeezed family only).
    """
    if family not in (COHERENT, SQUEEZED):
        raise ValueError(f"cannot optimize family {family!r}")
    if not n_tot > 0:
        raise ValueError("n_tot must be > 0")
    if starts < 1:
        raise ValueError("need at least one start")
    if n_sq is not None and (family != SQUEEZED or not 0 <= n_sq <= n_tot):
        raise ValueError("a fixed n_sq needs the squeezed family and n_sq <= n_tot")
    kind, obs = _parse_target(target)
    compute_qfi = kind == "qfi"
    derivative = "exact" if h == 0 else "fd"
    observables = (obs,) if obs else ()
    memo = {}

    def value(x):
        key = tuple(float(t) for t in x)
        if key not in memo:
            probe = _probe_from_budget(family, n_tot, _budget(x, n_tot, family, n_sq))
            try:
                res = evaluate(probe, gamma, h, eta, observables, compute_qfi=compute_qfi,
                               derivative=derivative)
            except (TruncationError, DerivativeError, NumericalIntegrityError):
                memo[key] = (None, -math.inf)
            else:
                f = res.qfi_lossy if compute_qfi else res.mom[obs]
                if kind == "snr":
                    f = res.snr
                memo[key] = (probe, f)
        return memo[key]

    def objective(x):
        f = value(x)[1]
        if f == math.inf:
            return -1e300
        return -math.log(f) if f > 0 else 1e300

    rng = np.random.default_rng(seed)
    coarse, rand = _start_points(family, n_sq, starts, rng)
    best_coarse = min(coarse, key=objective)
    runs = []
    for x0 in [best_coarse] + rand[: starts - 1]:
        res = minimize(objective, x0, method="Nelder-Mead",
                       options={"xatol": xatol, "fatol": fatol, "maxiter": maxiter})
        probe, f = value(res.x)
        runs.append((f, bool(res.success), int(res.nit), probe))
    ok = [r for r in runs if r[3] is not None and r[0] > -math.inf]
    if not ok:
        raise OptimizationError("every start failed", partial=runs)
    # ties broken by start order so the result is reproducible
    best = max(range(len(ok)), key=lambda i: (ok[i][0], -i))
    f, converged, _, probe = ok[best]
    if not any(r[1] for r in runs):
        raise OptimizationError("no start met the convergence tolerances", partial=runs)
    if abs(mean_total_photons(probe) - n_tot) > 1e-8 * max(1.0, n_tot):
        raise NumericalIntegrityError("optimum violates the photon budget")
    return OptimumRecord(
        best_params=probe, best_value=float(f), target=target, n_tot=float(n_tot),
        gamma_srs=float(gamma), iterations=sum(r[2] for r in runs), converged=converged,
        evaluations=len(memo), starts=tuple((float(r[0]), r[1]) for r in runs),
    )


# -- spontaneous to stimulated crossover ---------------------------------------------


@dataclass(frozen=True)
class CrossoverRow:
    """``n_cr`` is None when censored: ``"above"`` (no crossover up to the last
    grid point) or ``"below"`` (already stimulated at the first one)."""

    gamma_srs: float
    n_cr: float | None
    censored: str | None
    bracket: tuple
    n_pr_at_cr: float | None
    n_sq_at_cr: float | None


@dataclass(frozen=True)
class CrossoverTable:
    family: str
    threshold: float
    rows: tuple
    slope: float | None
    intercept: float | None


def _stimulated(record, threshold):
    return record.n_pr > threshold * record.n_tot


def crossover_scan(family: str, gammas, n_grid, *, threshold: float = 0.01,
                   target: str = "mom:n_pr", refine: int = 5, starts: int = 8, seed: int = 0,
                   threads: int = 1) -> CrossoverTable:
    """Smallest photon budget at which a seeded (stimulated) probe is optimal.

    For each ``gamma`` the ascending ``n_grid`` is scanned until the optimal
    coherent probe photon number exceeds ``threshold * n_tot``; the bracket is
    then narrowed by ``refine`` log-bisection steps and ``n_cr`` is its
    geometric midpoint. A log-log line is fitted through the uncensored rows.
    """
    n_grid = sorted(float(n) for n in n_grid)
    if not n_grid:
        raise ValueError("empty photon-number grid")

    def opt(n, gamma):
        return optimize_probe(family, n, gamma, target, starts=starts, seed=seed)

    def scan(gamma):
        prev = None
        hit = None
        for n in n_grid:
            rec = opt(n, gamma)
            if _stimulated(rec, threshold):
                hit = rec
                break
            prev = n
        if hit is None:
            return CrossoverRow(gamma, None, "above", (n_grid[-1], math.inf), None, None)
        if prev is None:
            return CrossoverRow(gamma, None, "below", (0.0, hit.n_tot), hit.n_pr, hit.n_sq)
        lo, hi = prev, hit.n_tot
        for _ in range(refine):
            mid = math.sqrt(lo * hi)
            rec = opt(mid, gamma)
            if _stimulated(rec, threshold):
                hi, hit = mid, rec
            else:
                lo = mid
        return CrossoverRow(gamma, math.sqrt(lo * hi), None, (lo, hi), hit.n_pr, hit.n_sq)

    rows = tuple(_map_ordered(scan, [float(g) for g in gammas], threads))
    good = [r for r in rows if r.n_cr is not None]
    slope = intercept = None
    if len(good) >= 2:
        slope, intercept = np.polyfit(np.log([r.gamma_srs for r in good]),
                                      np.log([r.n_cr for r in good]), 1)
        slope, intercept = float(slope), float(intercept)
    return CrossoverTable(family, threshold, rows, slope, intercept)


def tms_curve(n_grid, gamma, eta=(1.0, 1.0), observables=("delta_n",), compute_qfi=True,
              threads: int = 1) -> list[FisherResult]:
    """Two-mode squeezed vacuum evaluated along a photon-number grid."""
    def one(n):
        return evaluate(ProbeSpec.tms_with_photons(n), gamma, 0.0, eta, observables,
                        compute_qfi=compute_qfi)
    return _map_ordered(one, list(n_grid), threads)


__all__ = [
    "CrossoverRow", "CrossoverTable", "OptimizationError", "OptimumRecord", "SweepAxis",
    "SweepPlan", "crossover_scan", "evaluate_point", "failed_result", "optimize_probe",
    "probe_from_point", "run_sweep", "tms_curve",
]
