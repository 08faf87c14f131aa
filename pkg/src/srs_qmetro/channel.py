"""The SRS channel exp(K_SRS) and detector-loss channels.

The generator is

    K[rho] = -i h [L^dag L, rho] + gamma (L rho L^dag - {L^dag L, rho} / 2)

with the jump operator ``L = A B^dag`` that moves one photon from the pump into
the probe. Dense superoperator matrices (column stacking) are available for
small truncations; :func:`apply_channel` and :func:`apply_loss` use the
structured kernels and scale to the truncations used for the figures.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import _expm
from ._layout import Layout, _propagator
from .fock import (
    EPS_TRUNC,
    DensityMatrix,
    DimensionError,
    FockDims,
    Mode,
    NumericalIntegrityError,
    annihilation,
    creation,
    embed,
    number_op,
    unvec,
    vectorize,
)

MAX_DENSE_JOINT_DIM = 50


@dataclass(frozen=True)
class SrsParams:
    """Coherent coupling ``h_srs`` and Raman gain ``gamma_srs`` (both dimensionless)."""

    gamma_srs: float
    h_srs: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "gamma_srs", float(self.gamma_srs))
        object.__setattr__(self, "h_srs", float(self.h_srs))
        if not (math.isfinite(self.gamma_srs) and math.isfinite(self.h_srs)):
            raise ValueError("SRS rates must be finite")
        if self.gamma_srs < 0:
            raise ValueError(f"gamma_srs must be >= 0, got {self.gamma_srs}")


@dataclass(frozen=True, eq=False)
class Superoperator:
    """Linear map on column-stacked density matrices."""

    dims: FockDims
    matrix: np.ndarray

    def __post_init__(self):
        n = self.dims.joint ** 2
        if self.matrix.shape != (n, n):
            raise DimensionError(f"superoperator must be {n}x{n}, got {self.matrix.shape}")

    def __matmul__(self, other: "Superoperator") -> "Superoperator":
        if other.dims != self.dims:
            raise DimensionError("cannot compose superoperators on different spaces")
        return Superoperator(self.dims, self.matrix @ other.matrix)

    def apply(self, rho):
        """Apply to a :class:`DensityMatrix` (returns one) or to a raw matrix."""
        D = self.dims.joint
        if isinstance(rho, DensityMatrix):
            return DensityMatrix(self.dims, unvec(self.matrix @ vectorize(rho), D))
        return unvec(self.matrix @ vectorize(rho), D)

    def trace_defect(self) -> float:
        """max |Tr S[E_ij] - Tr E_ij| over matrix units."""
        t = np.eye(self.dims.joint).reshape(-1, order="F")
        return float(np.max(np.abs(t @ self.matrix - t)))

    def hermiticity_defect(self, rng=None, trials=3) -> float:
        rng = np.random.default_rng(0) if rng is None else rng
        D = self.dims.joint
        worst = 0.0
        for _ in range(trials):
            x = rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D))
            x = x + x.conj().T
            y = self.apply(x)
            worst = max(worst, float(np.max(np.abs(y - y.conj().T))))
        return worst


def _check_dense(dims):
    if dims.joint > MAX_DENSE_JOINT_DIM:
        raise DimensionError(
            f"dense superoperators are limited to joint dimension {MAX_DENSE_JOINT_DIM}; "
            f"use apply_channel for {dims}"
        )


def jump_operator(dims: FockDims) -> np.ndarray:
    """``L = A B^dag`` on the joint space."""
    return embed(annihilation(dims.d_pu), "pump", dims) @ embed(creation(dims.d_pr), "probe", dims)


def build_generator(params: SrsParams, dims: FockDims) -> Superoperator:
    """Dense superoperator matrix of K_SRS (column stacking)."""
    _check_dense(dims)
    L = jump_operator(dims)
    LdL = L.conj().T @ L
    eye = np.eye(dims.joint)
    hamiltonian = np.kron(eye, LdL) - np.kron(LdL.T, eye)
    dissipator = np.kron(L.conj(), L) - 0.5 * np.kron(eye, LdL) - 0.5 * np.kron(LdL.T, eye)
    return Superoperator(dims, -1j * params.h_srs * hamiltonian + params.gamma_srs * dissipator)


def matrix_exponential(m):
    """exp of a :class:`Superoperator` (or plain matrix) by Pade scaling and squaring."""
    if isinstance(m, Superoperator):
        return Superoperator(m.dims, _expm.matrix_exponential(m.matrix))
    return _expm.matrix_exponential(m)


def channel_superoperator(params: SrsParams, dims: FockDims) -> Superoperator:
    return matrix_exponential(build_generator(params, dims))


def loss_kraus(eta: float, d: int) -> list[np.ndarray]:
    """Kraus operators ``sqrt((1-eta)^k / k!) eta^(n/2) a^k`` of single-mode loss."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"quantum efficiency must lie in [0, 1], got {eta}")
    n = np.arange(d)
    a = annihilation(d)
    if eta == 0.0:
        damp = np.diag((n == 0).astype(float))
    else:
        damp = np.diag(eta ** (n / 2.0))
    ops = []
    ak = np.eye(d, dtype=complex)
    for k in range(d):
        if eta == 0.0:
            pre = 1.0 / math.sqrt(math.exp(gammaln(k + 1)))
        else:
            pre = math.sqrt((1.0 - eta) ** k / math.exp(gammaln(k + 1)))
        ops.append(pre * damp @ ak)
        ak = ak @ a
    return ops


def loss_channel(eta: float, mode: Mode, dims: FockDims) -> Superoperator:
    """Dense pure-loss (beam-splitter) channel with transmissivity ``eta`` on one mode."""
    _check_dense(dims)
    ops = [embed(k, mode, dims) for k in loss_kraus(eta, dims.of(mode))]
    return Superoperator(dims, sum(np.kron(k.conj(), k) for k in ops))


def number_superoperator(dims: FockDims) -> Superoperator:
    """Commutator superoperator ``rho -> [n_pu + n_pr, rho]``."""
    _check_dense(dims)
    ntot = embed(number_op(dims.d_pu), "pump", dims) + embed(number_op(dims.d_pr), "probe", dims)
    eye = np.eye(dims.joint)
    return Superoperator(dims, np.kron(eye, ntot) - np.kron(ntot.T, eye))


def _checked(dims, matrix, eps_trunc, strict):
    try:
        out = DensityMatrix(dims, matrix)
    except NumericalIntegrityError as exc:
        raise NumericalIntegrityError(f"channel output invalid: {exc}") from exc
    out.check_truncation(eps_trunc, strict=strict)
    return out


def apply_channel(params: SrsParams, rho_in: DensityMatrix, method: str = "auto",
                  eps_trunc: float = EPS_TRUNC, strict: bool = False) -> DensityMatrix:
    """rho_out = exp(K_SRS) rho_in.

    ``method`` selects the Taylor action (``"taylor"``), exact chain
    exponentials (``"chains"``), or lets the norm of the generator decide.
    """
    layout = Layout("full", rho_in.dims)
    T = layout.propagate(layout.from_dense(rho_in.matrix), params.gamma_srs, params.h_srs, method)
    return _checked(rho_in.dims, layout.to_dense(T), eps_trunc, strict)


def apply_loss(rho: DensityMatrix, eta_pu: float = 1.0, eta_pr: float = 1.0) -> DensityMatrix:
    """Detector inefficiency: pure loss on each mode."""
    layout = Layout("full", rho.dims)
    T = layout.from_dense(rho.matrix)
    T = layout.attenuate(layout.attenuate(T, eta_pu, "pump"), eta_pr, "probe")
    return _checked(rho.dims, layout.to_dense(T), 1.0, False)


def clear_cache():
    _propagator.cache_clear()
