"""Probe-state families on the truncated two-mode Fock space.

Three families are supported: a coherent pump with a coherent probe, a
coherent pump with a squeezed coherent probe, and the two-mode squeezed
vacuum. Squeezed coherent states follow the convention
``|alpha, zeta> = D(alpha) S(zeta) |0>`` with
``S(zeta) = exp((zeta* a^2 - zeta a^dag^2) / 2)``, so that ``zeta = r e^{i theta}``
with ``theta = 2 arg(alpha)`` is amplitude (number) squeezed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln
from scipy.stats import poisson

from .fock import EPS_TRUNC, DensityMatrix, FockDims, TruncationError

COHERENT = "coherent-coherent"
SQUEEZED = "coherent-squeezedcoherent"
TMS = "two-mode-squeezed"
FAMILIES = (COHERENT, SQUEEZED, TMS)

MAX_DIM = 4096


def _as_complex(value) -> complex:
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise ValueError(f"complex value must be [re, im], got {value!r}")
        return complex(float(value[0]), float(value[1]))
    return complex(value)


@dataclass(frozen=True)
class ProbeSpec:
    """Declarative description of an input state.

    Fields that do not apply to ``family`` must be zero.
    """

    family: str
    alpha_pu: complex = 0j
    alpha_pr: complex = 0j
    zeta_pr: complex = 0j
    r_tms: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown probe family {self.family!r}; expected one of {FAMILIES}")
        for name in ("alpha_pu", "alpha_pr", "zeta_pr"):
            object.__setattr__(self, name, _as_complex(getattr(self, name)))
        object.__setattr__(self, "r_tms", float(self.r_tms))
        values = [self.alpha_pu, self.alpha_pr, self.zeta_pr, self.r_tms]
        if not all(np.isfinite(complex(v)) for v in values):
            raise ValueError("probe parameters must be finite")
        if self.r_tms < 0:
            raise ValueError("r_tms must be >= 0")
        unused = {
            COHERENT: ("zeta_pr", "r_tms"),
            SQUEEZED: ("r_tms",),
            TMS: ("alpha_pu", "alpha_pr", "zeta_pr"),
        }[self.family]
        for name in unused:
            if getattr(self, name) != 0:
                raise ValueError(f"{name} must be zero for family {self.family}")

    @classmethod
    def coherent(cls, alpha_pu, alpha_pr=0j):
        return cls(COHERENT, alpha_pu=alpha_pu, alpha_pr=alpha_pr)

    @classmethod
    def squeezed(cls, alpha_pu, alpha_pr, zeta_pr):
        return cls(SQUEEZED, alpha_pu=alpha_pu, alpha_pr=alpha_pr, zeta_pr=zeta_pr)

    @classmethod
    def tms(cls, r):
        return cls(TMS, r_tms=r)

    @classmethod
    def tms_with_photons(cls, n_tot):
        """Two-mode squeezed vacuum with ``<n_pu + n_pr> = n_tot``."""
        return cls(TMS, r_tms=math.asinh(math.sqrt(n_tot / 2.0)))

    @property
    def n_sq(self) -> float:
        return math.sinh(abs(self.zeta_pr)) ** 2

    def mode_means(self) -> tuple[float, float]:
        if self.family == TMS:
            n = math.sinh(self.r_tms) ** 2
            return n, n
        return abs(self.alpha_pu) ** 2, abs(self.alpha_pr) ** 2 + self.n_sq

    def to_dict(self) -> dict:
        out = {"family": self.family}
        for name in ("alpha_pu", "alpha_pr", "zeta_pr"):
            z = getattr(self, name)
            if z != 0:
                out[name] = [z.real, z.imag]
        if self.r_tms:
            out["r_tms"] = self.r_tms
        return out

    @classmethod
    def from_dict(cls, data: dict):
        known = {"family", "alpha_pu", "alpha_pr", "zeta_pr", "r_tms"}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown probe fields {sorted(extra)}")
        return cls(**data)


def mean_total_photons(spec: ProbeSpec) -> float:
    """Closed-form photon budget ``<n_pu + n_pr>`` of the input state."""
    return float(sum(spec.mode_means()))


def suggested_dim(mean: float) -> int:
    """Rule-of-thumb truncation ``ceil(4 n + 10)``."""
    return int(math.ceil(4 * mean + 10))


def _tail(pops, d):
    """Population on levels >= d - 1 (the top kept level and everything above)."""
    return float(np.sum(pops[d - 1:]))


def _required(pops, eps):
    # smallest d >= 2 with tail(d) < eps; pops must extend past the answer
    rev = np.cumsum(pops[::-1])[::-1]
    ok = np.nonzero(rev < eps)[0]
    if ok.size == 0:
        return None
    return max(2, int(ok[0]) + 1)


def coherent_amplitudes(alpha, length: int) -> np.ndarray:
    alpha = complex(alpha)
    n = np.arange(length)
    if alpha == 0:
        out = np.zeros(length, dtype=complex)
        out[0] = 1.0
        return out
    mag = -0.5 * abs(alpha) ** 2 + n * math.log(abs(alpha)) - 0.5 * gammaln(n + 1)
    return np.exp(mag) * np.exp(1j * n * np.angle(alpha))


def coherent_state(alpha, d: int, eps: float = EPS_TRUNC) -> np.ndarray:
    """Truncated, renormalized coherent state ``|alpha>``."""
    alpha = complex(alpha)
    mean = abs(alpha) ** 2
    tail = float(poisson.sf(d - 2, mean)) if mean > 0 else 0.0
    if tail >= eps:
        need = int(poisson.isf(eps, mean)) + 2
        while poisson.sf(need - 2, mean) >= eps:
            need += 1
        raise TruncationError(
            f"coherent state |alpha|^2={mean:.4g} needs d >= {need} (got {d})", required_dim=need
        )
    psi = coherent_amplitudes(alpha, d)
    return psi / np.linalg.norm(psi)


def squeezed_vacuum_amplitudes(zeta, length: int) -> np.ndarray:
    """Fock amplitudes of ``S(zeta)|0>``; only even levels are populated."""
    zeta = complex(zeta)
    r, theta = abs(zeta), np.angle(zeta)
    out = np.zeros(length, dtype=complex)
    if r == 0:
        out[0] = 1.0
        return out
    n = np.arange((length + 1) // 2)
    logmag = (0.5 * gammaln(2 * n + 1) - n * math.log(2.0) - gammaln(n + 1)
              + n * math.log(math.tanh(r)) - 0.5 * math.log(math.cosh(r)))
    out[0::2] = np.exp(logmag) * np.exp(1j * n * (theta + math.pi))
    return out


def squeezed_coherent_amplitudes(alpha, zeta, length: int) -> np.ndarray:
    """Fock amplitudes of ``D(alpha) S(zeta)|0>`` on levels ``0 .. length-1``.

    The state is annihilated by ``mu a + nu a^dag - beta`` with
    ``mu = cosh r``, ``nu = e^{i theta} sinh r`` and
    ``beta = mu alpha + nu alpha*``, which gives the forward recurrence
    ``c[n+1] = (beta c[n] - nu sqrt(n) c[n-1]) / (mu sqrt(n+1))``. No
    truncation enters, so the amplitudes are those of the untruncated state.
    """
    alpha, zeta = complex(alpha), complex(zeta)
    if abs(alpha) ** 2 > 1400:
        raise ValueError("squeezed coherent amplitudes underflow beyond |alpha|^2 = 1400")
    r, theta = abs(zeta), np.angle(zeta)
    mu = math.cosh(r)
    nu = complex(math.cos(theta), math.sin(theta)) * math.sinh(r)
    beta = mu * alpha + nu * alpha.conjugate()
    c = np.zeros(length, dtype=complex)
    c[0] = np.exp(-0.5 * abs(alpha) ** 2 - 0.5 * alpha.conjugate() ** 2 * nu / mu) / math.sqrt(mu)
    if length > 1:
        c[1] = beta * c[0] / mu
    roots = np.sqrt(np.arange(length))
    for n in range(1, length - 1):
        c[n + 1] = (beta * c[n] - nu * roots[n] * c[n - 1]) / (mu * roots[n + 1])
    return c


def _pad_for(d):
    return d + max(10, d // 4)


def squeezed_coherent_state(alpha, zeta, d: int, eps: float = EPS_TRUNC) -> np.ndarray:
    """Truncated ``D(alpha) S(zeta)|0>``, computed on a padded space then cut to ``d``."""
    alpha, zeta = complex(alpha), complex(zeta)
    if zeta == 0:
        return coherent_state(alpha, d, eps)
    psi = squeezed_coherent_amplitudes(alpha, zeta, _pad_for(d))
    pops = np.abs(psi) ** 2
    if _tail(pops, d) >= eps:
        need = required_mode_dim(alpha, zeta, eps)
        raise TruncationError(
            f"squeezed coherent state (|alpha|^2={abs(alpha) ** 2:.4g}, r={abs(zeta):.4g}) "
            f"needs d >= {need} (got {d})",
            required_dim=need,
        )
    psi = psi[:d]
    return psi / np.linalg.norm(psi)


def required_mode_dim(alpha, zeta=0j, eps: float = EPS_TRUNC) -> int:
    """Smallest truncation keeping the top-level-and-above population below ``eps``."""
    alpha, zeta = complex(alpha), complex(zeta)
    mean = abs(alpha) ** 2
    if zeta == 0:
        if mean == 0:
            return 2
        need = max(2, int(poisson.isf(eps, mean)))
        while poisson.sf(need - 2, mean) >= eps:
            need += 1
        while need > 2 and poisson.sf(need - 3, mean) < eps:
            need -= 1
        return need
    length = suggested_dim(mean + math.sinh(abs(zeta)) ** 2)
    while length <= MAX_DIM:
        pops = np.abs(squeezed_coherent_amplitudes(alpha, zeta, _pad_for(length))) ** 2
        need = _required(pops, eps)
        if need is not None and need < length - 5:
            return need
        length = int(length * 1.5) + 10
    raise TruncationError(f"no truncation below {MAX_DIM} is safe for alpha={alpha}, zeta={zeta}")


def two_mode_squeezed_vacuum(r: float, dims: FockDims, eps: float = EPS_TRUNC) -> np.ndarray:
    """``sum_n tanh^n(r)/cosh(r) |n>_pu |n>_pr`` truncated and renormalized."""
    r = float(r)
    d = min(dims.d_pu, dims.d_pr)
    x = math.tanh(r) ** 2
    tail = x ** (d - 1)
    if tail >= eps:
        need = required_tms_dim(r, eps)
        raise TruncationError(
            f"two-mode squeezed vacuum r={r:.4g} needs d >= {need} per mode (got {d})",
            required_dim=need,
        )
    n = np.arange(d)
    amps = np.tanh(r) ** n / math.cosh(r)
    psi = np.zeros(dims.joint, dtype=complex)
    psi[n * dims.d_pr + n] = amps
    return psi / np.linalg.norm(psi)


def required_tms_dim(r: float, eps: float = EPS_TRUNC) -> int:
    x = math.tanh(r) ** 2
    if x == 0:
        return 2
    return max(2, int(math.floor(math.log(eps) / math.log(x))) + 2)


def required_dims(spec: ProbeSpec, eps: float = EPS_TRUNC) -> FockDims:
    """Minimal truncation that keeps the input state's tails below ``eps``."""
    if spec.family == TMS:
        d = required_tms_dim(spec.r_tms, eps)
        return FockDims(d, d)
    return FockDims(required_mode_dim(spec.alpha_pu, 0j, eps),
                    required_mode_dim(spec.alpha_pr, spec.zeta_pr, eps))


def mode_vectors(spec: ProbeSpec, dims: FockDims, eps: float = EPS_TRUNC):
    """Single-mode state vectors ``(psi_pu, psi_pr)`` of a product-state family."""
    if spec.family == TMS:
        raise ValueError("the two-mode squeezed vacuum is not a product state")
    psi_pu = coherent_state(spec.alpha_pu, dims.d_pu, eps)
    psi_pr = squeezed_coherent_state(spec.alpha_pr, spec.zeta_pr, dims.d_pr, eps)
    return psi_pu, psi_pr


def build_state_vector(spec: ProbeSpec, dims: FockDims, eps: float = EPS_TRUNC) -> np.ndarray:
    if spec.family == TMS:
        return two_mode_squeezed_vacuum(spec.r_tms, dims, eps)
    psi_pu, psi_pr = mode_vectors(spec, dims, eps)
    return np.kron(psi_pu, psi_pr)


def build_input(spec: ProbeSpec, dims: FockDims, eps: float = EPS_TRUNC) -> DensityMatrix:
    """Pure input density matrix of the requested family."""
    return DensityMatrix.from_pure(build_state_vector(spec, dims, eps), dims)


def with_budget(family: str, n_tot: float, n_pr: float = 0.0, n_sq: float = 0.0,
                phase_pr: float = 0.0, phase_sq: float = 0.0) -> ProbeSpec:
    """Probe spec from a photon budget.

    The pump gets ``n_tot - n_pr - n_sq`` photons with a real amplitude.
    ``phase_pr`` is ``arg(alpha_pr) - arg(alpha_pu)`` and ``phase_sq`` is
    ``theta - 2 arg(alpha_pr)``; ``phase_sq = 0`` is the number-squeezed
    setting.
    """
    if family == TMS:
        if n_pr or n_sq:
            raise ValueError("n_pr and n_sq do not apply to the two-mode squeezed vacuum")
        return ProbeSpec.tms_with_photons(n_tot)
    n_pu = n_tot - n_pr - n_sq
    if min(n_pu, n_pr, n_sq) < -1e-12:
        raise ValueError(f"photon budget n_tot={n_tot} cannot hold n_pr={n_pr}, n_sq={n_sq}")
    n_pu, n_pr, n_sq = max(n_pu, 0.0), max(n_pr, 0.0), max(n_sq, 0.0)
    alpha_pu = math.sqrt(n_pu)
    alpha_pr = math.sqrt(n_pr) * complex(math.cos(phase_pr), math.sin(phase_pr))
    if family == COHERENT:
        if n_sq:
            raise ValueError("coherent-coherent family has no squeezing")
        return ProbeSpec.coherent(alpha_pu, alpha_pr)
    r = math.asinh(math.sqrt(n_sq))
    theta = phase_sq + 2 * phase_pr
    zeta = r * complex(math.cos(theta), math.sin(theta))
    return ProbeSpec.squeezed(alpha_pu, alpha_pr, zeta)
