"""Raman coupling constants from pulse spectra and molecular lines.

Pulses are Gaussian frequency-domain mode functions normalized as
``int dw/2pi |psi(w)|^2 = 1``. The two-photon spectral density

    Phi(w) = int dw'/2pi psi_pu(w') psi_pr*(w' - w)

is weighted by a Lorentzian (``gamma_srs``) or dispersive (``h_srs``) kernel
around each Raman line:

    gamma_srs = 2 N eps_pu^2 eps_pr^2 sum |a|^2 int dw/2pi  g / ((w - w_l)^2 + g^2) |Phi(w)|^2
    h_srs     =   N eps_pu^2 eps_pr^2 sum |a|^2 int dw/2pi  (w - w_l) / ((w - w_l)^2 + g^2) |Phi(w)|^2
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

WINDOW_SIGMAS = 8.0
WINDOW_LINEWIDTHS = 20.0


class QuadratureError(ArithmeticError):
    """An overlap integral did not reach the requested accuracy."""


@dataclass(frozen=True)
class PulseSpec:
    """Pulse with carrier ``center_freq`` and Gaussian spectral width ``bandwidth``.

    ``|psi(w)|^2 / 2pi`` is a normal density with standard deviation ``bandwidth``.
    """

    center_freq: float
    bandwidth: float
    shape: str = "gaussian"

    def __post_init__(self):
        if self.shape != "gaussian":
            raise ValueError(f"unsupported pulse shape {self.shape!r}")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be > 0")
        if not math.isfinite(self.center_freq):
            raise ValueError("center_freq must be finite")

    def amplitude(self, omega):
        """Frequency-domain mode function ``psi(omega)`` (real for a Gaussian)."""
        s = self.bandwidth
        norm = math.sqrt(2 * math.pi) * (2 * math.pi * s * s) ** -0.25
        return norm * np.exp(-((np.asarray(omega, dtype=float) - self.center_freq) ** 2) / (4 * s * s))


@dataclass(frozen=True)
class Line:
    """One Raman transition: frequency, Lorentzian half width, ``|polarizability|^2``."""

    omega_line: float
    gamma_line: float
    polarizability_sq: float

    def __post_init__(self):
        if not self.gamma_line > 0:
            raise ValueError("gamma_line must be > 0")
        if self.polarizability_sq < 0:
            raise ValueError("polarizability_sq must be >= 0")


@dataclass(frozen=True)
class LineshapeParams:
    n_molecules: int
    eps_pu: float
    eps_pr: float
    lines: tuple = field(default=())

    def __post_init__(self):
        if int(self.n_molecules) != self.n_molecules or self.n_molecules < 1:
            raise ValueError("n_molecules must be an integer >= 1")
        lines = tuple(x if isinstance(x, Line) else Line(**x) for x in self.lines)
        object.__setattr__(self, "lines", lines)
        object.__setattr__(self, "n_molecules", int(self.n_molecules))

    @property
    def prefactor(self) -> float:
        return self.n_molecules * self.eps_pu ** 2 * self.eps_pr ** 2

    def to_dict(self) -> dict:
        return {
            "n_molecules": self.n_molecules, "eps_pu": self.eps_pu, "eps_pr": self.eps_pr,
            "lines": [{"omega_line": x.omega_line, "gamma_line": x.gamma_line,
                       "polarizability_sq": x.polarizability_sq} for x in self.lines],
        }


# -- two-photon spectral density ---------------------------------------------------------


def combined_bandwidth(pu: PulseSpec, pr: PulseSpec) -> float:
    return math.hypot(pu.bandwidth, pr.bandwidth)


def _quad(f, a, b, points=None, epsrel=1e-10, epsabs=0.0):
    pts = None
    if points:
        pts = sorted(p for p in points if a < p < b) or None
    out = quad(f, a, b, points=pts, epsrel=epsrel, epsabs=epsabs, limit=500, full_output=1)
    if len(out) == 4:
        raise QuadratureError(f"quadrature on [{a:g}, {b:g}] did not converge: {out[3]}")
    value, err = out[0], out[1]
    if err > max(epsabs, 1e-6 * abs(value)) and err > 1e-14:
        raise QuadratureError(f"quadrature error estimate {err:.2e} too large for value {value:.6e}")
    return value


def two_photon_spectral_density(pu: PulseSpec, pr: PulseSpec, omega: float) -> complex:
    """``Phi(omega)`` by adaptive quadrature over the overlap of the two spectra."""
    omega = float(omega)
    width = WINDOW_SIGMAS * max(pu.bandwidth, pr.bandwidth)
    c1, c2 = pu.center_freq, pr.center_freq + omega
    a, b = min(c1, c2) - width, max(c1, c2) + width
    # both Gaussian mode functions are real, so Phi is real
    scale = _gaussian_spectral_density_peak(pu, pr)

    def integrand(w):
        return float(pu.amplitude(w) * pr.amplitude(w - omega)) / (2 * math.pi)

    value = _quad(integrand, a, b, points=[c1, c2], epsabs=1e-13 * scale)
    return complex(value)


def _gaussian_spectral_density_peak(pu, pr):
    s1, s2 = pu.bandwidth, pr.bandwidth
    return math.sqrt(2 * s1 * s2 / (s1 * s1 + s2 * s2))


def gaussian_spectral_density(pu: PulseSpec, pr: PulseSpec, omega):
    """Closed-form ``Phi(omega)`` for two Gaussian pulses.

    A Gaussian centred at ``omega_pu - omega_pr`` with peak
    ``sqrt(2 s1 s2 / (s1^2 + s2^2))`` and ``|Phi|^2`` of variance ``s1^2 + s2^2``.
    """
    s1, s2 = pu.bandwidth, pr.bandwidth
    detuning = pu.center_freq - pr.center_freq
    omega = np.asarray(omega, dtype=float)
    return _gaussian_spectral_density_peak(pu, pr) * np.exp(
        -((omega - detuning) ** 2) / (4 * (s1 * s1 + s2 * s2)))


def spectral_density_sq(pu: PulseSpec, pr: PulseSpec, omega):
    """``|Phi(omega)|^2``."""
    return gaussian_spectral_density(pu, pr, omega) ** 2


# -- rate integrals ------------------------------------------------------------------------


def integration_window(line: Line, pu: PulseSpec, pr: PulseSpec):
    """Hull of ``detuning +- 8 sigma_c`` and ``omega_line +- 20 gamma_line``."""
    sc = combined_bandwidth(pu, pr)
    detuning = pu.center_freq - pr.center_freq
    lo = min(detuning - WINDOW_SIGMAS * sc, line.omega_line - WINDOW_LINEWIDTHS * line.gamma_line)
    hi = max(detuning + WINDOW_SIGMAS * sc, line.omega_line + WINDOW_LINEWIDTHS * line.gamma_line)
    return lo, hi


def _kernel(kind, line):
    wl, g = line.omega_line, line.gamma_line
    if kind == "absorptive":
        return lambda w: g / ((w - wl) ** 2 + g * g)
    if kind == "dispersive":
        return lambda w: (w - wl) / ((w - wl) ** 2 + g * g)
    raise ValueError(kind)


def _phi_sq_function(pu, pr, spectral):
    if spectral == "closed":
        return lambda w: spectral_density_sq(pu, pr, w)
    if spectral == "quad":
        return lambda w: abs(two_photon_spectral_density(pu, pr, w)) ** 2
    raise ValueError(f"unknown spectral-density method {spectral!r}")


def line_overlap(kind: str, line: Line, pu: PulseSpec, pr: PulseSpec, *,
                 spectral: str = "closed", method: str = "adaptive") -> float:
    """``int dw/2pi kernel(w) |Phi(w)|^2`` for one line.

    ``method="adaptive"`` uses Gauss-Kronrod with breakpoints at the line and
    at the two-photon detuning; ``method="panels"`` uses composite
    Gauss-Legendre with step halving (see :func:`panel_quadrature`).
    """
    kern = _kernel(kind, line)
    phi_sq = _phi_sq_function(pu, pr, spectral)
    lo, hi = integration_window(line, pu, pr)
    detuning = pu.center_freq - pr.center_freq

    def f(w):
        return kern(w) * phi_sq(w) / (2 * math.pi)

    # the pulse and line features can differ in width by orders of magnitude, so
    # both get their own breakpoints
    sc = combined_bandwidth(pu, pr)
    g = line.gamma_line
    points = [detuning + k * sc for k in (-WINDOW_SIGMAS, -2, 0, 2, WINDOW_SIGMAS)]
    points += [line.omega_line + k * g for k in (-2, 0, 2)]
    if method == "adaptive":
        scale = 1.0 / (2 * math.pi * g)
        return _quad(f, lo, hi, points=points, epsabs=1e-14 * scale)
    if method == "panels":
        return panel_quadrature(np.vectorize(f) if spectral == "quad" else f, lo, hi,
                                breakpoints=points)[0]
    raise ValueError(f"unknown quadrature method {method!r}")


def panel_quadrature(f, a, b, *, breakpoints=(), order=20, panels=8, rtol=1e-9, max_doublings=12):
    """Composite Gauss-Legendre on ``[a, b]`` with the number of panels doubled
    until successive results agree to ``rtol``.

    Returns ``(value, last_relative_change)``.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.unique(np.concatenate([[a, b], [p for p in breakpoints if a < p < b]]))

    def rule(n):
        total = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            cuts = np.linspace(lo, hi, n + 1)
            mid = 0.5 * (cuts[1:] + cuts[:-1])[:, None]
            half = 0.5 * (cuts[1:] - cuts[:-1])[:, None]
            total += float(np.sum(half * w * f(mid + half * x)))
        return total

    prev = rule(panels)
    for _ in range(max_doublings):
        panels *= 2
        cur = rule(panels)
        change = abs(cur - prev) / max(abs(cur), 1e-300)
        if change < rtol or cur == prev:
            return cur, change
        prev = cur
    raise QuadratureError(f"panel quadrature did not settle (last relative change {change:.2e})")


def _rate(kind, factor, p: LineshapeParams, pu, pr, **kw):
    total = 0.0
    for line in p.lines:
        if line.polarizability_sq == 0:
            continue
        total += line.polarizability_sq * line_overlap(kind, line, pu, pr, **kw)
    return factor * p.prefactor * total


def compute_gamma_srs(p: LineshapeParams, pu: PulseSpec, pr: PulseSpec, **kw) -> float:
    """Dimensionless Raman gain ``gamma_srs`` (absorptive Lorentzian kernel)."""
    return max(_rate("absorptive", 2.0, p, pu, pr, **kw), 0.0)


def compute_h_srs(p: LineshapeParams, pu: PulseSpec, pr: PulseSpec, **kw) -> float:
    """Dimensionless coherent coupling ``h_srs`` (dispersive kernel)."""
    return _rate("dispersive", 1.0, p, pu, pr, **kw)


def narrowband_gamma_srs(p: LineshapeParams, pu: PulseSpec, pr: PulseSpec) -> float:
    """Limit of ``gamma_srs`` for pulses much narrower than every line, on resonance.

    The Lorentzian is then ``1 / gamma_line`` over the support of ``|Phi|^2``,
    whose integral ``int dw/2pi |Phi|^2`` is ``sigma_c / sqrt(2 pi)`` times the
    squared peak.
    """
    sc = combined_bandwidth(pu, pr)
    phi_norm = _gaussian_spectral_density_peak(pu, pr) ** 2 * sc / math.sqrt(2 * math.pi)
    return 2.0 * p.prefactor * sum(x.polarizability_sq / x.gamma_line for x in p.lines) * phi_norm


def spectral_density_samples(pu: PulseSpec, pr: PulseSpec, p: LineshapeParams | None = None,
                             points: int = 201):
    """``(omega, |Phi(omega)|^2)`` across the integration window."""
    sc = combined_bandwidth(pu, pr)
    detuning = pu.center_freq - pr.center_freq
    lo, hi = detuning - WINDOW_SIGMAS * sc, detuning + WINDOW_SIGMAS * sc
    for line in (p.lines if p else ()):
        a, b = integration_window(line, pu, pr)
        lo, hi = min(lo, a), max(hi, b)
    omega = np.linspace(lo, hi, points)
    return omega, spectral_density_sq(pu, pr, omega)
