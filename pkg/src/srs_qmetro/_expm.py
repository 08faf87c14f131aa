"""Matrix exponentials: Pade scaling-and-squaring and the Taylor action exp(A) v.

Both accept stacked input. ``matrix_exponential`` works on ``(..., n, n)``
arrays so that many small chain blocks can be exponentiated in one call.
"""
from __future__ import annotations

import math

import numpy as np

# Higham (2005) degree-dependent 1-norm bounds for double precision.
_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}

_PADE_COEFFS = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0, 960960.0,
         16380.0, 182.0, 1.0),
}


def _one_norm(a):
    return float(np.max(np.abs(a).sum(axis=-2))) if a.size else 0.0


def _pade_uv(a, m):
    b = _PADE_COEFFS[m]
    ident = np.broadcast_to(np.eye(a.shape[-1], dtype=a.dtype), a.shape)
    a2 = a @ a
    if m == 13:
        a4 = a2 @ a2
        a6 = a4 @ a2
        u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
                 + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident)
        v = (a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
             + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident)
        return u, v
    powers = [ident, a2]
    for _ in range(2, m // 2 + 1):
        powers.append(powers[-1] @ a2)
    u_even = sum(b[2 * j + 1] * powers[j] for j in range(m // 2 + 1))
    v = sum(b[2 * j] * powers[j] for j in range(m // 2 + 1))
    return a @ u_even, v


def _pade_exp(a, m):
    u, v = _pade_uv(a, m)
    return np.linalg.solve(v - u, v + u)


def matrix_exponential(a):
    """Exponential of a square matrix (or a stack of them).

    Scaling and squaring with a diagonal Pade approximant of degree 3 to 13
    chosen from the 1-norm (Higham 2005). For a stack the largest norm in the
    stack drives the choice.

    Parameters
    ----------
    a : array_like, shape (..., n, n)

    Returns
    -------
    ndarray
        ``exp(a)`` with the same shape.
    """
    a = np.asarray(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix exponential of non-finite entries")
    if not np.iscomplexobj(a):
        a = a.astype(float)
    if a.shape[-1] == 0:
        return a.copy()
    if a.shape[-1] == 1:
        return np.exp(a)
    norm = _one_norm(a)
    for m in (3, 5, 7, 9):
        if norm <= _THETA[m]:
            return _pade_exp(a, m)
    s = max(0, int(math.ceil(math.log2(norm / _THETA[13]))))
    x = _pade_exp(a / 2.0 ** s, 13)
    for _ in range(s):
        x = x @ x
    return x


def expm_action(apply, v, norm, *, theta=2.0, tol=2.0 ** -53, max_terms=60):
    """Compute ``exp(A) v`` given only the action ``apply(x) = A x``.

    The interval is split into ``s = ceil(norm / theta)`` steps and each step
    uses a truncated Taylor series, stopped once two consecutive terms are
    below ``tol`` relative to the partial sum. ``norm`` must bound ``||A||``.
    """
    s = max(1, int(math.ceil(norm / theta)))
    x = np.array(v, copy=True)
    if not np.issubdtype(x.dtype, np.inexact):
        x = x.astype(float)
    for _ in range(s):
        term = x
        acc = x.copy()
        small = 0
        for k in range(1, max_terms + 1):
            term = apply(term) / (s * k)
            acc += term
            tn = np.max(np.abs(term)) if term.size else 0.0
            an = np.max(np.abs(acc)) if acc.size else 0.0
            if tn <= tol * an:
                small += 1
                if small == 2:
                    break
            else:
                small = 0
        else:
            raise ArithmeticError("Taylor series for exp(A) v did not converge")
        x = acc
    return x
