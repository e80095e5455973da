"""Compiled clause kernels.

Clauses are stored padded: ``var[m, r]``, ``sign[m, r]`` with ``sign == 0`` on
padding slots, and ``norm[m] = 2**-len(m)``. The state vector is
``y = [s (N), log a (M)]``.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def clause_K(s, var, sign, norm, K):
    M, L = var.shape
    for m in range(M):
        prod = norm[m]
        for r in range(L):
            if sign[m, r] != 0.0:
                prod *= 1.0 - sign[m, r] * s[var[m, r]]
        K[m] = prod


@numba.njit(cache=True)
def _powk(K, alpha):
    if K <= 0.0:
        return 0.0
    return K**alpha


@numba.njit(cache=True)
def rhs(y, N, var, sign, norm, alpha, out):
    """``out = [ds, d(log a)]`` with ``ds = -grad_s V`` and ``d(log a) = K**alpha``."""
    M, L = var.shape
    fac = np.empty(L)
    pre = np.empty(L + 1)
    for p in range(N):
        out[p] = 0.0
    for m in range(M):
        pre[0] = 1.0
        for r in range(L):
            if sign[m, r] != 0.0:
                fac[r] = 1.0 - sign[m, r] * y[var[m, r]]
            else:
                fac[r] = 1.0
            pre[r + 1] = pre[r] * fac[r]
        Km = norm[m] * pre[L]
        out[N + m] = _powk(Km, alpha)
        if Km == 0.0:
            continue
        w = 2.0 * np.exp(y[N + m]) * Km * norm[m]
        suf = 1.0
        for r in range(L - 1, -1, -1):
            if sign[m, r] != 0.0:
                out[var[m, r]] += w * sign[m, r] * pre[r] * suf
            suf *= fac[r]


@numba.njit(cache=True)
def observe(y, N, var, sign, norm, K):
    """Fill ``K`` and return ``(V, max K, max log a)`` at state ``y``."""
    M = var.shape[0]
    clause_K(y[:N], var, sign, norm, K)
    V = 0.0
    kmax = 0.0
    lamax = -np.inf
    for m in range(M):
        la = y[N + m]
        V += np.exp(la) * K[m] * K[m]
        if K[m] > kmax:
            kmax = K[m]
        if la > lamax:
            lamax = la
    return V, kmax, lamax


@numba.njit(cache=True)
def jacobian_parts(y, N, var, sign, norm, alpha, A, Bv, Cv):
    """Blocks of the Jacobian of :func:`rhs`.

    ``A`` is the dense ``N x N`` spin-spin block. ``Bv[m, r]`` is
    ``d(ds_{var[m,r]}) / d(log a_m)`` and ``Cv[m, r]`` is
    ``d(d log a_m) / d s_{var[m,r]}``; the log-a/log-a block is zero.
    """
    M, L = var.shape
    fac = np.empty(L)
    excl = np.empty(L)  # product of all factors except r
    g = np.empty(L)
    pre = np.empty(L + 1)
    suf = np.empty(L + 1)
    A[:, :] = 0.0
    for m in range(M):
        for r in range(L):
            if sign[m, r] != 0.0:
                fac[r] = 1.0 - sign[m, r] * y[var[m, r]]
            else:
                fac[r] = 1.0
        pre[0] = 1.0
        for r in range(L):
            pre[r + 1] = pre[r] * fac[r]
        suf[L] = 1.0
        for r in range(L - 1, -1, -1):
            suf[r] = suf[r + 1] * fac[r]
        for r in range(L):
            excl[r] = pre[r] * suf[r + 1]
        nm = norm[m]
        Km = nm * pre[L]
        am = np.exp(y[N + m])
        if alpha == 1.0:
            dpow = 1.0
        elif Km > 0.0:
            dpow = alpha * Km ** (alpha - 1.0)
        else:
            dpow = 0.0
        for r in range(L):
            c_r = sign[m, r]
            if c_r == 0.0:
                Bv[m, r] = 0.0
                Cv[m, r] = 0.0
                continue
            l = var[m, r]
            Kml = nm * excl[r]
            Bv[m, r] = 2.0 * am * c_r * Kml * Km
            Cv[m, r] = -dpow * c_r * Kml
            A[l, l] -= 2.0 * am * Kml * Kml
            # products excluding both r and r2
            for q in range(L):
                g[q] = fac[q] if q != r else 1.0
            pre[0] = 1.0
            for q in range(L):
                pre[q + 1] = pre[q] * g[q]
            suf[L] = 1.0
            for q in range(L - 1, -1, -1):
                suf[q] = suf[q + 1] * g[q]
            for r2 in range(L):
                c_p = sign[m, r2]
                if r2 == r or c_p == 0.0:
                    continue
                Kmlp = nm * pre[r2] * suf[r2 + 1]
                Kmp = nm * excl[r2]
                A[l, var[m, r2]] -= 2.0 * am * c_r * c_p * (Kmlp * Km + Kml * Kmp)
