"""Dense operator algebra on truncated single- and two-mode Fock spaces.

Mode ordering is fixed as pump (x) probe: the joint basis index of
``|k>_pu |m>_pr`` is ``k * d_pr + m``. Operators are plain complex numpy
arrays; :class:`DensityMatrix` wraps a state together with its truncation.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Literal

import numpy as np

Mode = Literal["pump", "probe"]

EPS_TRUNC = 1e-8


class DimensionError(ValueError):
    """Operator or state dimensions are invalid or do not match."""


class TruncationError(ValueError):
    """A state has too much population at the edge of the Fock truncation."""

    def __init__(self, message, required_dim=None):
        super().__init__(message)
        self.required_dim = required_dim


class TruncationWarning(UserWarning):
    pass


class NumericalIntegrityError(ArithmeticError):
    """A result violates trace, hermiticity or positivity beyond tolerance."""


@dataclass(frozen=True)
class FockDims:
    """Truncation of the pump and probe modes."""

    d_pu: int
    d_pr: int

    def __post_init__(self):
        for name in ("d_pu", "d_pr"):
            value = getattr(self, name)
            if int(value) != value or value < 2:
                raise DimensionError(f"{name} must be an integer >= 2, got {value}")
            object.__setattr__(self, name, int(value))

    @property
    def joint(self) -> int:
        return self.d_pu * self.d_pr

    def of(self, mode: Mode) -> int:
        if mode == "pump":
            return self.d_pu
        if mode == "probe":
            return self.d_pr
        raise ValueError(f"unknown mode {mode!r}")


def _check_dim(d):
    if int(d) != d or d < 2:
        raise DimensionError(f"Fock dimension must be an integer >= 2, got {d}")
    return int(d)


def annihilation(d: int) -> np.ndarray:
    """Truncated annihilation operator, sqrt(n) on the first superdiagonal."""
    d = _check_dim(d)
    return np.diag(np.sqrt(np.arange(1, d, dtype=float)), 1).astype(complex)


def creation(d: int) -> np.ndarray:
    return annihilation(d).conj().T


def number_op(d: int) -> np.ndarray:
    d = _check_dim(d)
    return np.diag(np.arange(d, dtype=float)).astype(complex)


def embed(op, mode: Mode, dims: FockDims) -> np.ndarray:
    """Lift a single-mode operator to the joint space (pump (x) probe)."""
    op = np.asarray(op)
    d = dims.of(mode)
    if op.shape != (d, d):
        raise DimensionError(f"{mode} operator must be {d}x{d}, got {op.shape}")
    if mode == "pump":
        return np.kron(op, np.eye(dims.d_pr))
    return np.kron(np.eye(dims.d_pu), op)


def is_hermitian(op, tol=1e-12) -> bool:
    op = np.asarray(op)
    return op.shape[0] == op.shape[1] and float(np.max(np.abs(op - op.conj().T), initial=0.0)) < tol


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """A two-mode density matrix on a truncated Fock space.

    Construction validates trace, hermiticity and positivity; the truncation
    tail is checked separately with :meth:`check_truncation` because the
    response (warn or raise) depends on the caller.
    """

    dims: FockDims
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        D = self.dims.joint
        if m.shape != (D, D):
            raise DimensionError(f"density matrix must be {D}x{D}, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        self.validate()

    def validate(self, trace_tol=1e-10, herm_tol=1e-12, pos_tol=1e-10):
        m = self.matrix
        tr = np.trace(m)
        if abs(tr - 1.0) > trace_tol:
            raise NumericalIntegrityError(f"trace {tr} deviates from 1")
        herm = float(np.max(np.abs(m - m.conj().T)))
        if herm > herm_tol:
            raise NumericalIntegrityError(f"hermiticity violated by {herm:.3e}")
        lmin = float(np.linalg.eigvalsh(m)[0])
        if lmin < -pos_tol:
            raise NumericalIntegrityError(f"negative eigenvalue {lmin:.3e}")

    @classmethod
    def from_pure(cls, psi, dims: FockDims):
        psi = np.asarray(psi, dtype=complex)
        return cls(dims, np.outer(psi, psi.conj()))

    @property
    def purity(self) -> float:
        return float(np.real(np.vdot(self.matrix, self.matrix)))

    def populations(self) -> np.ndarray:
        """Joint photon-number distribution as a (d_pu, d_pr) array."""
        return np.real(np.diag(self.matrix)).reshape(self.dims.d_pu, self.dims.d_pr)

    def tail_population(self) -> tuple[float, float]:
        """Population of the highest Fock level of the pump and of the probe."""
        p = self.populations()
        return float(p[-1, :].sum()), float(p[:, -1].sum())

    def check_truncation(self, eps=EPS_TRUNC, strict=False) -> bool:
        tail = max(self.tail_population())
        if tail < eps:
            return True
        msg = f"truncation tail population {tail:.2e} exceeds {eps:.1e} for {self.dims}"
        if strict:
            raise TruncationError(msg)
        warnings.warn(msg, TruncationWarning, stacklevel=2)
        return False


def _matrix_of(rho):
    return rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)


def expectation(rho, op) -> complex:
    """Tr(op rho)."""
    m = _matrix_of(rho)
    op = np.asarray(op)
    if op.shape != m.shape:
        raise DimensionError(f"operator shape {op.shape} does not match state {m.shape}")
    return complex(np.einsum("ij,ji->", op, m))


def variance(rho, op) -> float:
    """<op^2> - <op>^2 for a Hermitian observable."""
    op = np.asarray(op)
    if not is_hermitian(op):
        raise ValueError("variance requires a Hermitian observable")
    mean = expectation(rho, op).real
    return expectation(rho, op @ op).real - mean ** 2


def vectorize(rho) -> np.ndarray:
    """Column-stacking vec: ``vec(A rho B) = (B^T kron A) vec(rho)``."""
    return np.asarray(_matrix_of(rho)).reshape(-1, order="F")


def devectorize(vec, dims: FockDims) -> DensityMatrix:
    vec = np.asarray(vec)
    D = dims.joint
    if vec.shape != (D * D,):
        raise DimensionError(f"vector length must be {D * D}, got {vec.shape}")
    return DensityMatrix(dims, vec.reshape(D, D, order="F"))


def unvec(vec, D: int) -> np.ndarray:
    """Column-stacked vector back to a D x D matrix, no state checks."""
    return np.asarray(vec).reshape(D, D, order="F")


def sandwich(a, b) -> np.ndarray:
    """Superoperator matrix of ``rho -> a rho b^dagger`` under column stacking."""
    return np.kron(np.asarray(b).conj(), np.asarray(a))
