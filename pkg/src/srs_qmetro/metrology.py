"""Quantum and method-of-moments Fisher information for the Raman gain.

All shipped observables (``n_pu``, ``n_pr``, ``delta_n``, ``n_tot``) are
diagonal in the Fock basis, so their moments only need photon-number
populations. :func:`evaluate` therefore picks the cheapest storage that still
answers the question: populations when no QFI is requested, the
``n_pu - n_pr`` block structure for the two-mode squeezed vacuum, and the full
operator otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._layout import Layout
from .fock import (
    EPS_TRUNC,
    DensityMatrix,
    DimensionError,
    FockDims,
    NumericalIntegrityError,
    TruncationError,
    embed,
    is_hermitian,
    number_op,
)
from .states import (
    TMS,
    ProbeSpec,
    squeezed_coherent_amplitudes,
    build_state_vector,
    coherent_amplitudes,
    mean_total_photons,
    required_dims,
)

EPS_EIG = 1e-12
VAR_FLOOR = 1e-14
MOM_QFI_RTOL = 1e-6
MAX_GROWTH_STEPS = 8

_OBSERVABLE_WEIGHTS = {
    "n_pu": (1.0, 0.0),
    "n_pr": (0.0, 1.0),
    "delta_n": (1.0, -1.0),
    "n_tot": (1.0, 1.0),
}
OBSERVABLES = tuple(_OBSERVABLE_WEIGHTS)


class DerivativeError(ArithmeticError):
    """The finite-difference derivative failed its step-halving consistency check."""


def observable_operator(name: str, dims: FockDims) -> np.ndarray:
    """Dense matrix of a named number observable on the joint space."""
    w_pu, w_pr = _weights(name)
    return (w_pu * embed(number_op(dims.d_pu), "pump", dims)
            + w_pr * embed(number_op(dims.d_pr), "probe", dims))


def _weights(name):
    try:
        return _OBSERVABLE_WEIGHTS[name]
    except KeyError:
        raise ValueError(f"unknown observable {name!r}; expected one of {OBSERVABLES}") from None


# -- Fisher information ---------------------------------------------------------


@dataclass(frozen=True)
class MomentFisher:
    """Method-of-moments information; ``diverged`` marks a vanishing variance."""

    value: float
    diverged: bool = False
    variance: float = float("nan")

    def __float__(self):
        return self.value


def _mom(mean_derivative, var) -> MomentFisher:
    num = abs(mean_derivative) ** 2
    if var <= VAR_FLOOR:
        if num == 0.0:
            return MomentFisher(0.0, False, var)
        return MomentFisher(math.inf, True, var)
    return MomentFisher(num / var, False, var)


def mom_fisher(rho, drho, obs) -> MomentFisher:
    """``|d<X>/dgamma|^2 / Var(X)`` for a Hermitian observable ``X``.

    Variances below ``VAR_FLOOR`` are reported as a flagged divergence
    (``value = inf``, ``diverged = True``) unless the numerator is also zero.
    """
    m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    obs = np.asarray(obs)
    if not is_hermitian(obs):
        raise ValueError("method of moments needs a Hermitian observable")
    drho = np.asarray(drho)
    if obs.shape != m.shape or drho.shape != m.shape:
        raise DimensionError("state, derivative and observable shapes differ")
    mean = np.einsum("ij,ji->", obs, m).real
    var = np.einsum("ij,ji->", obs @ obs, m).real - mean ** 2
    deriv = np.einsum("ij,ji->", obs, drho).real
    return _mom(deriv, var)


def _mom_from_populations(P, dP, x) -> MomentFisher:
    mean = float(np.sum(P * x))
    var = float(np.sum(P * (x - mean) ** 2))
    return _mom(float(np.sum(dP * x)), var)


def _qfi_terms(lam, a, cutoffs):
    s = lam[:, None] + lam[None, :]
    w = np.abs(a) ** 2
    out = []
    for eps in cutoffs:
        mask = s > eps
        out.append(float(np.sum(2.0 * w[mask] / s[mask])))
    # every dropped pair would contribute at least 2 |a|^2 / eps_ref
    eps_ref = cutoffs[len(cutoffs) // 2]
    dropped = float(np.sum(w[s <= eps_ref])) * 2.0 / eps_ref
    return out, dropped


def _qfi_blocks(pairs, cutoffs):
    totals = np.zeros(len(cutoffs))
    dropped = 0.0
    lmin = math.inf
    for rho_b, drho_b in pairs:
        lam, vec = np.linalg.eigh(rho_b)
        lmin = min(lmin, float(lam[0]))
        a = vec.conj().T @ drho_b @ vec
        terms, d = _qfi_terms(lam, a, cutoffs)
        totals += terms
        dropped += d
    return totals, dropped, lmin


def qfi(rho, drho, eps_eig: float = EPS_EIG) -> float:
    """Quantum Fisher information from the eigendecomposition of ``rho``.

    ``F = sum 2 |<i|drho|j>|^2 / (l_i + l_j)`` over pairs with
    ``l_i + l_j > eps_eig``. Returns ``inf`` when the dropped pairs carry
    more information than the kept ones, which happens when ``drho`` leaves
    the support of a rank-deficient ``rho`` (e.g. a pure state at zero gain).
    """
    m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    drho = np.asarray(drho)
    if drho.shape != m.shape:
        raise DimensionError("state and derivative shapes differ")
    if not (is_hermitian(m, 1e-10) and is_hermitian(drho, 1e-8 * max(1.0, np.abs(drho).max()))):
        raise ValueError("qfi needs Hermitian rho and drho")
    (value,), dropped, _ = _qfi_blocks([(m, drho)], [eps_eig])
    if dropped > max(value, 0.0):
        return math.inf
    return max(value, 0.0)


def qfi_with_sensitivity(pairs, eps_eig: float = EPS_EIG):
    """QFI summed over Hermitian blocks, plus a cutoff-sensitivity flag.

    Returns ``(qfi, sensitive, min_eigenvalue)``; ``sensitive`` is set when the
    values at ``10 eps_eig`` and ``eps_eig / 10`` differ by more than 1%.
    The QFI is ``inf`` when the pairs below the cutoff dominate (see `qfi`).
    """
    (hi, mid, lo), dropped, lmin = _qfi_blocks(pairs, [10 * eps_eig, eps_eig, eps_eig / 10])
    if dropped > max(mid, 0.0):
        return math.inf, False, float(lmin)
    sensitive = abs(lo - hi) > 0.01 * max(abs(mid), 1e-300)
    return float(max(mid, 0.0)), bool(sensitive), float(lmin)


def snr_per_shot(gamma: float, fisher: float) -> float:
    """Single-shot signal-to-noise ratio ``gamma * sqrt(F)``."""
    if fisher < 0:
        raise ValueError("Fisher information must be >= 0")
    if math.isinf(fisher):
        return math.inf
    return float(gamma) * math.sqrt(fisher)


# -- derivatives ----------------------------------------------------------------


def fd_step(gamma: float) -> float:
    return max(1e-8, 1e-3 * gamma)


def _norm(x):
    return float(np.sqrt(np.sum(np.abs(x) ** 2)))


def finite_difference(f, gamma, *, rtol=1e-6, max_halvings=8):
    """Derivative of ``f`` at ``gamma`` by central differences with a Richardson check.

    The step starts at ``max(1e-8, 1e-3 gamma)`` and is halved until the
    estimates at ``delta`` and ``delta / 2`` agree to ``rtol``; the
    extrapolated value is returned. Below ``gamma < delta`` a one-sided
    second-order stencil is used instead. Returns ``(derivative, info)``
    where ``info`` has the final step and a ``boundary`` flag.
    """
    delta = fd_step(gamma)
    boundary = gamma < delta
    cache = {}

    def value(g):
        if g not in cache:
            cache[g] = f(g)
        return cache[g]

    def estimate(step):
        if boundary:
            return (-3 * value(gamma) + 4 * value(gamma + step) - value(gamma + 2 * step)) / (2 * step)
        return (value(gamma + step) - value(gamma - step)) / (2 * step)

    coarse = estimate(delta)
    history = []
    for _ in range(max_halvings):
        fine = estimate(delta / 2)
        err, scale = _norm(fine - coarse), _norm(fine)
        history.append((delta, err / scale if scale else 0.0))
        if err <= rtol * scale or scale == 0.0:
            return (4 * fine - coarse) / 3, {"step": delta, "boundary": boundary}
        delta /= 2
        coarse = fine
    steps = ", ".join(f"delta={d:.3e}: rel. change {e:.2e}" for d, e in history)
    raise DerivativeError(f"finite-difference derivative at gamma={gamma:g} did not settle ({steps})")


class _Evolution:
    """Input state in a given layout plus the channel and loss maps acting on it."""

    def __init__(self, layout: Layout, T0, h: float):
        self.layout = layout
        self.T0 = T0
        self.h = h

    def state(self, gamma):
        return self.layout.propagate(self.T0, gamma, self.h)

    def state_and_derivative(self, gamma, method="fd"):
        if method == "exact":
            if self.h != 0:
                raise ValueError("the exact derivative is only available for h_srs = 0")
            T = self.state(gamma)
            return T, self.layout.dissipator(T), {"step": 0.0, "boundary": False}
        if method != "fd":
            raise ValueError(f"unknown derivative method {method!r}")
        T = self.state(gamma)
        if self.h == 0:
            # K is linear in gamma, so rho(gamma + s) = exp(s K1) rho(gamma) for either sign of s
            def f(g):
                return T if g == gamma else self.layout.taylor_propagate(T, g - gamma)
        else:
            f = self.state
        dT, info = finite_difference(f, gamma)
        return T, dT, info

    def attenuate(self, T, eta_pu, eta_pr):
        T = self.layout.attenuate(T, eta_pu, "pump")
        return self.layout.attenuate(T, eta_pr, "probe")


# -- input preparation ------------------------------------------------------------


def _layout_kind(probe, compute_qfi):
    if not compute_qfi:
        return "diagonal"
    return "sector" if probe.family == TMS else "full"


def _mode_populations(probe, mode, length):
    if mode == "pump":
        amps = coherent_amplitudes(probe.alpha_pu, length)
    elif probe.zeta_pr == 0:
        amps = coherent_amplitudes(probe.alpha_pr, length)
    else:
        amps = squeezed_coherent_amplitudes(probe.alpha_pr, probe.zeta_pr, length)
    return np.abs(amps) ** 2


def _window(pops, eps):
    """(start, stop) keeping all but ``eps`` of the population at each end."""
    cum = np.cumsum(pops)
    start = int(np.searchsorted(cum, eps * 1e-2))
    rev = np.cumsum(pops[::-1])[::-1]
    stop = int(np.nonzero(rev >= eps * 1e-2)[0][-1]) + 1 if np.any(rev >= eps * 1e-2) else 1
    return start, stop


def _transfer_margin(probe, gamma):
    """Fock levels to reserve for photons moved from pump to probe.

    The probe is amplified by roughly ``G = exp(gamma n_pu)``; an unseeded
    probe ends up close to thermal, whose 1e-8 tail sits about 18 means out.
    """
    n_pu, n_pr = probe.mode_means()
    gain = math.exp(min(gamma * n_pu, 50.0))
    moved = min(n_pu, (gain - 1.0) * (n_pr + 1.0))
    spread = math.sqrt(moved * (moved / (n_pr + 1.0) + 1.0))
    return int(math.ceil(moved + 20 * spread + 4))


def _initial_plan(probe, kind, gamma, eps, windowed):
    """Dims and window offsets for a first attempt."""
    base = required_dims(probe, eps * 0.1)
    margin = _transfer_margin(probe, gamma)
    if probe.family == TMS:
        d = base.d_pu + margin
        return FockDims(d, d), (0, 0)
    if not windowed:
        return FockDims(base.d_pu, base.d_pr + margin), (0, 0)
    pu = _mode_populations(probe, "pump", base.d_pu + 1)
    pr = _mode_populations(probe, "probe", base.d_pr + 1)
    k0, _ = _window(pu, eps)
    m0, _ = _window(pr, eps)
    k0 = max(0, k0 - margin)
    return FockDims(max(2, base.d_pu - k0), max(2, base.d_pr - m0 + margin)), (k0, 0 if m0 < 2 * margin else m0)


def _prepare(probe, layout, eps):
    dims = layout.dims
    if layout.kind != "diagonal":
        return layout.from_pure(build_state_vector(probe, dims, eps))
    k0, m0 = layout.k0, layout.m0
    if probe.family == TMS:
        d = min(dims.d_pu, dims.d_pr)
        x = math.tanh(probe.r_tms) ** 2
        P = np.zeros(layout.shape)
        n = np.arange(d)
        P[n, n] = (1 - x) * x ** n
    else:
        pu = _mode_populations(probe, "pump", k0 + dims.d_pu)[k0:]
        pr = _mode_populations(probe, "probe", m0 + dims.d_pr)[m0:]
        P = np.outer(pu, pr)
    total = P.sum()
    if abs(total - 1.0) > 1e-6:
        raise TruncationError(f"truncation window {dims} at {layout.k0, layout.m0} drops {1 - total:.2e}")
    return P / total


def _grow(dims, offset, edges, kind):
    top_pu, top_pr, bottom_pu = edges
    d_pu, d_pr = dims.d_pu, dims.d_pr
    k0, m0 = offset
    grow = lambda d: int(d * 1.15) + 4  # noqa: E731
    if kind == "sector":
        d = grow(max(d_pu, d_pr))
        return FockDims(d, d), offset
    if top_pu > 0:
        d_pu = grow(d_pu)
    if top_pr > 0:
        d_pr = grow(d_pr)
    if bottom_pu > 0:
        shift = min(k0, max(4, d_pu // 4))
        k0 -= shift
        d_pu += shift
    return FockDims(d_pu, d_pr), (k0, m0)


# -- results ---------------------------------------------------------------------


@dataclass(frozen=True)
class FisherResult:
    """One evaluated point: Fisher information and SNR for a probe at ``gamma_srs``.

    ``qfi`` is the QFI of the lossless output; ``qfi_lossy`` that of the state
    after detector loss (equal to ``qfi`` when both efficiencies are 1). The
    method-of-moments values in ``mom`` refer to the detected (lossy) state.
    ``snr`` is ``gamma_srs * sqrt(mom[snr_observable])``.
    """

    gamma_srs: float
    h_srs: float
    n_tot: float
    probe: ProbeSpec
    eta_pu: float
    eta_pr: float
    qfi: float | None
    qfi_lossy: float | None
    mom: dict
    snr: float
    snr_observable: str | None
    dims: FockDims
    flags: tuple = ()
    mom_diverged: tuple = field(default=())

    def as_dict(self) -> dict:
        return {
            "gamma_srs": self.gamma_srs,
            "h_srs": self.h_srs,
            "n_tot": self.n_tot,
            "probe": self.probe.to_dict() if self.probe is not None else None,
            "eta_pu": self.eta_pu,
            "eta_pr": self.eta_pr,
            "qfi": self.qfi,
            "qfi_lossy": self.qfi_lossy,
            "mom": dict(self.mom),
            "snr": self.snr,
            "snr_observable": self.snr_observable,
            "dims": [self.dims.d_pu, self.dims.d_pr] if self.dims is not None else None,
            "flags": list(self.flags),
        }


def _block_pairs(layout, T, dT):
    return [(r, d) for (_, _, r), (_, _, d) in zip(layout.blocks(T), layout.blocks(dT))]


def _check_state(layout, T, blocks_lmin, what):
    trace = float(np.sum(layout.populations(T)))
    if abs(trace - 1.0) > 1e-10:
        raise NumericalIntegrityError(f"{what}: trace {trace:.15f} deviates from 1")
    if layout.kind == "diagonal":
        lmin = float(np.min(np.real(T)))
        herm = float(np.max(np.abs(np.imag(T))))
    else:
        lmin = blocks_lmin
        herm = 0.0
        for _, _, b in layout.blocks(T):
            herm = max(herm, float(np.max(np.abs(b - b.conj().T))))
    if lmin < -1e-9:
        raise NumericalIntegrityError(f"{what}: negative eigenvalue {lmin:.3e}")
    if herm > 1e-10:
        raise NumericalIntegrityError(f"{what}: hermiticity violated by {herm:.3e}")


def _normalize_observables(observables):
    obs = tuple(observables)
    for name in obs:
        _weights(name)
    return obs


def evaluate(probe: ProbeSpec, gamma: float, h: float = 0.0, eta=(1.0, 1.0),
             observables=("delta_n",), dims: FockDims | None = None, *,
             compute_qfi: bool = True, derivative: str = "fd",
             eps_trunc: float = EPS_TRUNC, strict: bool = False) -> FisherResult:
    """Fisher information of the channel output for one probe and coupling.

    Parameters
    ----------
    probe : ProbeSpec
    gamma, h : float
        Raman gain ``gamma_srs`` and coherent coupling ``h_srs``.
    eta : (float, float)
        Detector efficiencies of pump and probe, applied after the channel.
    observables : sequence of str
        Names from ``OBSERVABLES``; the first one drives ``snr``.
    dims : FockDims, optional
        Fixed truncation. By default the truncation is chosen from the input
        tails and enlarged until the output keeps less than ``eps_trunc`` on
        its edge levels.
    compute_qfi : bool
        When false only photon-number populations are propagated.
    derivative : {"fd", "exact"}
        Finite differences, or the exact generator derivative (``h = 0``).
    """
    gamma, h = float(gamma), float(h)
    if gamma < 0:
        raise ValueError("gamma_srs must be >= 0")
    eta_pu, eta_pr = (float(eta[0]), float(eta[1]))
    obs = _normalize_observables(observables)
    kind = _layout_kind(probe, compute_qfi)
    lossy = (eta_pu, eta_pr) != (1.0, 1.0)
    windowed = kind == "diagonal" and not lossy and dims is None
    flags = []

    if dims is None:
        cur_dims, offset = _initial_plan(probe, kind, gamma, eps_trunc, windowed)
        adaptive = True
    else:
        cur_dims, offset = dims, (0, 0)
        adaptive = False
    for _ in range(MAX_GROWTH_STEPS):
        layout = Layout(kind, cur_dims, offset)
        evo = _Evolution(layout, _prepare(probe, layout, eps_trunc), h)
        T, dT, info = evo.state_and_derivative(gamma, derivative)
        edges = layout.edge_populations(T)
        if max(edges) < eps_trunc:
            break
        if not adaptive:
            msg = f"output edge population {max(edges):.2e} exceeds {eps_trunc:.1e} at {cur_dims}"
            if strict:
                raise TruncationError(msg)
            flags.append("truncation")
            break
        cur_dims, offset = _grow(cur_dims, offset, edges, kind)
    else:
        raise TruncationError(f"no safe truncation found up to {cur_dims} for {probe}")
    if info["boundary"]:
        flags.append("boundary")

    qfi_value = qfi_lossy = None
    lmin = 0.0
    if compute_qfi:
        qfi_value, sensitive, lmin = qfi_with_sensitivity(_block_pairs(layout, T, dT))
        if sensitive:
            flags.append("cutoff_sensitive")
        if math.isinf(qfi_value):
            flags.append("diverged:qfi")
    _check_state(layout, T, lmin, "channel output")

    if lossy:
        T_det = evo.attenuate(T, eta_pu, eta_pr)
        dT_det = evo.attenuate(dT, eta_pu, eta_pr)
        if compute_qfi:
            qfi_lossy, sensitive, _ = qfi_with_sensitivity(_block_pairs(layout, T_det, dT_det))
            if sensitive and "cutoff_sensitive" not in flags:
                flags.append("cutoff_sensitive")
            if math.isinf(qfi_lossy) and "diverged:qfi" not in flags:
                flags.append("diverged:qfi")
    else:
        T_det, dT_det = T, dT
        qfi_lossy = qfi_value

    P = layout.populations(T_det)
    dP = layout.populations(dT_det)
    n_pu = (np.arange(cur_dims.d_pu) + layout.k0)[:, None]
    n_pr = (np.arange(cur_dims.d_pr) + layout.m0)[None, :]
    mom = {}
    diverged = []
    for name in obs:
        w_pu, w_pr = _weights(name)
        m = _mom_from_populations(P, dP, w_pu * n_pu + w_pr * n_pr)
        mom[name] = m.value
        if m.diverged:
            diverged.append(name)
            flags.append(f"diverged:{name}")
        elif qfi_lossy is not None and m.value > qfi_lossy * (1 + MOM_QFI_RTOL) + 1e-300:
            raise NumericalIntegrityError(
                f"method-of-moments information {m.value:.10g} for {name} exceeds the QFI "
                f"{qfi_lossy:.10g} at gamma={gamma:g}"
            )

    if obs:
        snr_obs = obs[0]
        snr = math.inf if obs[0] in diverged else snr_per_shot(gamma, mom[obs[0]])
    else:
        snr_obs = None
        snr = snr_per_shot(gamma, qfi_lossy) if qfi_lossy is not None else float("nan")
    return FisherResult(
        gamma_srs=gamma, h_srs=h, n_tot=mean_total_photons(probe), probe=probe,
        eta_pu=eta_pu, eta_pr=eta_pr, qfi=qfi_value, qfi_lossy=qfi_lossy, mom=mom,
        snr=snr, snr_observable=snr_obs, dims=cur_dims, flags=tuple(flags),
        mom_diverged=tuple(diverged),
    )


def drho_dgamma(probe: ProbeSpec, gamma: float, h: float = 0.0, dims: FockDims | None = None,
                method: str = "fd", eps_trunc: float = EPS_TRUNC):
    """Derivative of the output density matrix with respect to ``gamma_srs``.

    Returns ``(rho, drho)`` as dense matrices. ``method="fd"`` uses central
    differences with step ``max(1e-8, 1e-3 gamma)`` and a step-halving check
    (one-sided at ``gamma = 0``); ``method="exact"`` applies the dissipator to
    the output state, valid for ``h = 0``.
    """
    dims = required_dims(probe, eps_trunc) if dims is None else dims
    kind = "sector" if probe.family == TMS else "full"
    layout = Layout(kind, dims)
    evo = _Evolution(layout, layout.from_pure(build_state_vector(probe, dims, eps_trunc)), float(h))
    T, dT, _ = evo.state_and_derivative(float(gamma), method)
    return layout.to_dense(T), layout.to_dense(dT)

