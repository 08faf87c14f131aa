"""Storage layouts for two-mode operators and the channel kernels acting on them.

In the basis of matrix units ``|k,m><k',m'|`` the SRS generator is diagonal
plus a single shift ``(k,m,k',m') -> (k-1,m+1,k'-1,m'+1)``, and the loss
channel shifts ``k`` and ``k'`` (or ``m`` and ``m'``) together. Three supports
are closed under both maps:

``full``
    every matrix unit, stored as ``T[k, m, k', m']`` (the dense matrix
    reshaped);
``sector``
    operators that are block diagonal in ``n_pu - n_pr``, stored as
    ``T[k, m, t] = <k,m| X |k+t, m+t>``;
``diagonal``
    photon-number populations ``T[k, m]``, optionally on a window
    ``k >= k0``, ``m >= m0`` of the Fock lattice.
"""
from __future__ import annotations

import functools
import math

import numpy as np
from scipy.special import gammaln

from ._expm import expm_action, matrix_exponential
from .fock import FockDims

KINDS = ("full", "sector", "diagonal")

_CHAIN_CHUNK = 400_000


class Layout:
    def __init__(self, kind: str, dims: FockDims, offset=(0, 0)):
        if kind not in KINDS:
            raise ValueError(f"unknown layout {kind!r}")
        if offset != (0, 0) and kind != "diagonal":
            raise ValueError("Fock windows are only supported for population layouts")
        self.kind = kind
        self.dims = dims
        self.k0, self.m0 = (int(offset[0]), int(offset[1]))
        d_pu, d_pr = dims.d_pu, dims.d_pr
        ku = np.arange(d_pu)
        mr = np.arange(d_pr)
        if kind == "full":
            self.shape = (d_pu, d_pr, d_pu, d_pr)
            self.K = ku[:, None, None, None]
            self.M = mr[None, :, None, None]
            self.KP = ku[None, None, :, None]
            self.MP = mr[None, None, None, :]
            self.valid = np.ones(self.shape, dtype=bool)
        elif kind == "sector":
            self.tmax = min(d_pu, d_pr) - 1
            t = np.arange(-self.tmax, self.tmax + 1)[None, None, :]
            self.shape = (d_pu, d_pr, t.size)
            self.K = ku[:, None, None]
            self.M = mr[None, :, None]
            self.KP = self.K + t
            self.MP = self.M + t
            self.valid = (self.KP >= 0) & (self.KP < d_pu) & (self.MP >= 0) & (self.MP < d_pr)
        else:
            self.shape = (d_pu, d_pr)
            self.K = ku[:, None]
            self.M = mr[None, :]
            self.KP = self.K
            self.MP = self.M
            self.valid = np.ones(self.shape, dtype=bool)
        self.valid = np.broadcast_to(self.valid, self.shape)
        self.size = int(np.prod(self.shape))
        self._rates = None

    def __repr__(self):
        return f"Layout({self.kind!r}, {self.dims}, offset=({self.k0}, {self.m0}))"

    @property
    def key(self):
        return (self.kind, self.dims.d_pu, self.dims.d_pr, self.k0, self.m0)

    # -- slices -----------------------------------------------------------
    def _jump_slices(self):
        a, b = slice(1, None), slice(0, -1)
        if self.kind == "full":
            return (a, b, a, b), (b, a, b, a)
        if self.kind == "sector":
            return (a, b, slice(None)), (b, a, slice(None))
        return (a, b), (b, a)

    def _shift_slices(self, mode, l):
        d = self.dims.of(mode)
        src, dst, keep = slice(l, None), slice(0, d - l), slice(None)
        if self.kind == "full":
            if mode == "pump":
                return (src, keep, src, keep), (dst, keep, dst, keep)
            return (keep, src, keep, src), (keep, dst, keep, dst)
        rest = (keep,) if self.kind == "sector" else ()
        if mode == "pump":
            return (src, keep) + rest, (dst, keep) + rest
        return (keep, src) + rest, (keep, dst) + rest

    # -- generator ---------------------------------------------------------
    def _scattering_weights(self):
        """``c = <L^dag L>`` on the ket and bra labels of every cell."""
        if self._rates is None:
            d_pu, d_pr = self.dims.d_pu, self.dims.d_pr

            def weight(k, m):
                inside = (k > 0) & (k < d_pu) & (m >= 0) & (m < d_pr - 1)
                return np.where(inside, (k + self.k0) * (m + self.m0 + 1.0), 0.0)

            c = np.broadcast_to(weight(self.K, self.M), self.shape)
            cp = np.broadcast_to(weight(self.KP, self.MP), self.shape)
            c = np.where(self.valid, c, 0.0)
            cp = np.where(self.valid, cp, 0.0)
            self._rates = (c, cp, np.sqrt(c * cp))
        return self._rates

    def generator_coefficients(self, gamma, h=0.0):
        c, cp, root = self._scattering_weights()
        lam = -0.5 * gamma * (c + cp)
        if h:
            lam = lam - 1j * h * (c - cp)
        return lam, gamma * root

    def generator_norm(self, gamma, h=0.0):
        lam, mu = self.generator_coefficients(gamma, h)
        return float(np.max(np.abs(lam), initial=0.0) + np.max(np.abs(mu), initial=0.0))

    def apply_generator(self, T, gamma, h=0.0, coeffs=None):
        lam, mu = coeffs if coeffs is not None else self.generator_coefficients(gamma, h)
        src, dst = self._jump_slices()
        out = lam * T
        out[dst] += (mu * T)[src]
        return out

    def dissipator(self, T):
        """Action of the gamma = 1, h = 0 generator; the exact d/dgamma of exp(gamma K1)."""
        return self.apply_generator(T, 1.0, 0.0)

    # -- propagation -------------------------------------------------------
    def propagate(self, T, gamma, h=0.0, method="auto"):
        """``exp(K) T`` for the SRS generator with the given rates."""
        if gamma == 0 and h == 0:
            return np.array(T, dtype=complex, copy=True)
        if method == "auto":
            method = self._pick_method(gamma, h)
        if method == "taylor":
            return self.taylor_propagate(T, gamma, h)
        if method == "chains":
            return _propagator(self.key, float(gamma), float(h)).apply(T)
        raise ValueError(f"unknown propagation method {method!r}")

    def taylor_propagate(self, T, gamma, h=0.0):
        """``exp(K) T`` by the Taylor action; ``gamma`` may be negative (inverse semigroup step)."""
        coeffs = self.generator_coefficients(gamma, h)
        norm = float(np.max(np.abs(coeffs[0]), initial=0.0) + np.max(np.abs(coeffs[1]), initial=0.0))
        return expm_action(lambda x: self.apply_generator(x, gamma, h, coeffs), T, norm)

    def _pick_method(self, gamma, h):
        # rough flop counts: Taylor needs ~18 generator sweeps per unit step of
        # norm 2; the chains need a batched Pade exponential of every chain
        norm = self.generator_norm(gamma, h)
        if norm <= 24.0:
            return "taylor"
        longest = min(self.dims.d_pu, self.dims.d_pr)
        taylor_cost = math.ceil(norm / 2.0) * 18 * 4 * self.size
        chain_cost = 15 * self.size * longest ** 2
        if chain_cost < taylor_cost and self.size * longest < 6e7:
            return "chains"
        return "taylor"

    # -- loss --------------------------------------------------------------
    def attenuate(self, T, eta, mode):
        """Pure-loss channel with transmissivity ``eta`` on one mode."""
        if not 0.0 <= eta <= 1.0:
            raise ValueError(f"transmissivity must lie in [0, 1], got {eta}")
        if eta == 1.0:
            return np.array(T, copy=True)
        if (mode == "pump" and self.k0) or (mode == "probe" and self.m0):
            raise ValueError("loss needs the Fock window to start at the vacuum")
        n, npr = (self.K, self.KP) if mode == "pump" else (self.M, self.MP)
        n = np.broadcast_to(n, self.shape)
        npr = np.broadcast_to(npr, self.shape)
        out = np.zeros(self.shape, dtype=np.result_type(T, float))
        for l in range(self.dims.of(mode)):
            coef = _kraus_weight(n, l, eta) * _kraus_weight(npr, l, eta)
            coef = np.where(self.valid, coef, 0.0)
            if not coef.any():
                continue
            src, dst = self._shift_slices(mode, l)
            out[dst] += (coef * T)[src]
        return out

    # -- conversions ---------------------------------------------------------
    def from_pure(self, psi):
        d_pu, d_pr = self.dims.d_pu, self.dims.d_pr
        P = np.asarray(psi, dtype=complex).reshape(d_pu, d_pr)
        if self.kind == "full":
            return P[:, :, None, None] * P.conj()[None, None, :, :]
        if self.kind == "diagonal":
            return np.abs(P) ** 2 + 0j
        k, m = np.nonzero(np.abs(P) > 0)
        if np.unique(k - m).size > 1:
            raise ValueError("state is not an eigenvector of n_pu - n_pr; use the full layout")
        KP = np.clip(np.broadcast_to(self.KP, self.shape), 0, d_pu - 1)
        MP = np.clip(np.broadcast_to(self.MP, self.shape), 0, d_pr - 1)
        T = P[:, :, None] * P.conj()[KP, MP]
        return np.where(self.valid, T, 0.0)

    def from_dense(self, rho):
        d_pu, d_pr = self.dims.d_pu, self.dims.d_pr
        R = np.asarray(rho).reshape(d_pu, d_pr, d_pu, d_pr)
        if self.kind == "full":
            return R.astype(complex)
        if self.kind == "diagonal":
            return np.einsum("kmkm->km", R).astype(complex)
        KP = np.clip(np.broadcast_to(self.KP, self.shape), 0, d_pu - 1)
        MP = np.clip(np.broadcast_to(self.MP, self.shape), 0, d_pr - 1)
        K = np.broadcast_to(self.K, self.shape)
        M = np.broadcast_to(self.M, self.shape)
        return np.where(self.valid, R[K, M, KP, MP], 0.0).astype(complex)

    def to_dense(self, T):
        d_pu, d_pr = self.dims.d_pu, self.dims.d_pr
        D = d_pu * d_pr
        if self.kind == "full":
            return np.asarray(T).reshape(D, D)
        if self.kind == "diagonal":
            return np.diag(np.asarray(T).reshape(D))
        out = np.zeros((d_pu, d_pr, d_pu, d_pr), dtype=complex)
        v = self.valid
        K = np.broadcast_to(self.K, self.shape)[v]
        M = np.broadcast_to(self.M, self.shape)[v]
        out[K, M, np.broadcast_to(self.KP, self.shape)[v], np.broadcast_to(self.MP, self.shape)[v]] = T[v]
        return out.reshape(D, D)

    def populations(self, T) -> np.ndarray:
        if self.kind == "full":
            return np.real(np.einsum("kmkm->km", T))
        if self.kind == "sector":
            return np.real(T[:, :, self.tmax])
        return np.real(T)

    def blocks(self, T):
        """Hermitian blocks of the operator: list of ``(k, m, matrix)``.

        The full layout yields the whole matrix as one block; the sector
        layout yields one block per value of ``n_pu - n_pr``.
        """
        d_pu, d_pr = self.dims.d_pu, self.dims.d_pr
        if self.kind == "full":
            k, m = np.divmod(np.arange(d_pu * d_pr), d_pr)
            return [(k, m, self.to_dense(T))]
        if self.kind == "diagonal":
            raise ValueError("population layouts carry no coherences")
        out = []
        for delta in range(-(d_pr - 1), d_pu):
            k = np.arange(max(0, delta), min(d_pu, d_pr + delta))
            m = k - delta
            t = k[None, :] - k[:, None]
            out.append((k, m, T[k[:, None], m[:, None], t + self.tmax]))
        return out

    def edge_populations(self, T):
        """Population on the outermost kept levels: (pump top, probe top, pump bottom)."""
        P = self.populations(T)
        bottom = float(P[0, :].sum()) if self.k0 > 0 else 0.0
        return float(P[-1, :].sum()), float(P[:, -1].sum()), bottom


def _kraus_weight(n, l, eta):
    """sqrt(C(n, l) eta^(n-l) (1-eta)^l), zero where n < l."""
    n = np.asarray(n)
    ok = n >= l
    nn = np.where(ok, n, l)
    if eta == 0.0:
        return np.where(ok & (nn == l), 1.0, 0.0)
    logw = gammaln(nn + 1) - gammaln(l + 1) - gammaln(nn - l + 1) + (nn - l) * math.log(eta)
    if l:
        logw = logw + l * math.log1p(-eta)
    return np.where(ok, np.exp(0.5 * logw), 0.0)


class _ChainPropagator:
    """exp(K) restricted to the independent bidiagonal chains of the generator."""

    def __init__(self, layout: Layout, gamma, h):
        self.shape = layout.shape
        lam, mu = layout.generator_coefficients(gamma, h)
        lam = lam.ravel()
        mu = mu.ravel()
        c, cp, _ = layout._scattering_weights()
        size = layout.size
        flat = np.arange(size).reshape(layout.shape)
        src, dst = layout._jump_slices()
        link = (c * cp > 0)[src]
        succ = np.full(size + 1, -1, dtype=np.int64)
        succ[flat[src][link]] = flat[dst][link]
        has_pred = np.zeros(size + 1, dtype=bool)
        has_pred[succ[succ >= 0]] = True
        tops = np.nonzero(layout.valid.ravel() & ~has_pred[:size])[0]
        cols = [tops]
        cur = tops
        while True:
            cur = succ[np.where(cur >= 0, cur, size)]
            if not np.any(cur >= 0):
                break
            cols.append(cur)
        paths = np.stack(cols, axis=1)
        lengths = (paths >= 0).sum(axis=1)
        self.groups = []
        for ell in np.unique(lengths):
            idx = paths[lengths == ell, :ell]
            if ell == 1:
                self.groups.append((idx, np.exp(lam[idx[:, 0]])))
                continue
            n = idx.shape[0]
            step = max(1, _CHAIN_CHUNK // (ell * ell))
            blocks = []
            diag = np.arange(ell)
            for start in range(0, n, step):
                sub = idx[start:start + step]
                M = np.zeros((sub.shape[0], ell, ell), dtype=complex)
                M[:, diag, diag] = lam[sub]
                M[:, diag[1:], diag[:-1]] = mu[sub[:, :-1]]
                blocks.append(matrix_exponential(M))
            self.groups.append((idx, np.concatenate(blocks)))

    def apply(self, T):
        v = np.asarray(T).ravel()
        out = np.zeros(v.shape, dtype=complex)
        for idx, E in self.groups:
            if E.ndim == 1:
                out[idx[:, 0]] = E * v[idx[:, 0]]
            else:
                out[idx] = np.einsum("nij,nj->ni", E, v[idx])
        return out.reshape(self.shape)


@functools.lru_cache(maxsize=6)
def _propagator(key, gamma, h):
    kind, d_pu, d_pr, k0, m0 = key
    return _ChainPropagator(Layout(kind, FockDims(d_pu, d_pr), (k0, m0)), gamma, h)
