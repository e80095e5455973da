"""Compiled adaptive integrators.

Two one-step methods share a driver that advances ``C`` copies of the state on
a common step sequence (``C = 2`` for perturbation pairs):

* Dormand-Prince 5(4) with Hairer's stiffness detector;
* TR-BDF2 (trapezoidal stage followed by a BDF2 stage, L-stable) with the
  Hosea-Shampine error estimate filtered through the iteration matrix.

In automatic mode integration starts explicit and switches to TR-BDF2 for the
rest of the run once stiffness is detected. The iteration matrix
``I - d h J`` is never formed in full: the log-a rows of ``J`` have a zero
diagonal block, so the solve reduces to an ``N x N`` Schur complement.
"""

import numba
import numpy as np

from ._kernels import jacobian_parts, observe, rhs

AUTO, EXPLICIT, IMPLICIT = 0, 1, 2

DONE, STOPPED = 0, 1
UNDERFLOW, NONFINITE, TOO_MANY_STEPS = -1, -2, -3

# info slots
NFEV, NJEV, NINV, NACC, NREJ, METHOD = range(6)

# Dormand-Prince tableau
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = (71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200,
                          22 / 525, -1 / 40)

# TR-BDF2
GAMMA = 2.0 - np.sqrt(2.0)
D_TR = GAMMA / 2.0
W_TR = np.sqrt(2.0) / 4.0
_B2 = 1.0 / (6.0 * GAMMA * (1.0 - GAMMA))
_B3 = 0.5 - 1.0 / (6.0 * (1.0 - GAMMA))
_B1 = 1.0 - _B2 - _B3
EST1, EST2, EST3 = _B1 - W_TR, _B2 - W_TR, _B3 - D_TR


@numba.njit(cache=True)
def _clamp(Y, N):
    changed = False
    for c in range(Y.shape[0]):
        for p in range(N):
            v = Y[c, p]
            if v > 1.0:
                Y[c, p] = 1.0
                changed = True
            elif v < -1.0:
                Y[c, p] = -1.0
                changed = True
    return changed


@numba.njit(cache=True)
def _project(Y1, Y0, N):
    """Clamp spins and keep ``log a`` from decreasing across an accepted step."""
    changed = _clamp(Y1, N)
    for c in range(Y1.shape[0]):
        for i in range(N, Y1.shape[1]):
            if Y1[c, i] < Y0[c, i]:
                Y1[c, i] = Y0[c, i]
                changed = True
    return changed


@numba.njit(cache=True)
def _err_norm(E, Y0, Y1, rtol, atol):
    acc = 0.0
    C, D = E.shape
    for c in range(C):
        for i in range(D):
            sc = atol + rtol * max(abs(Y0[c, i]), abs(Y1[c, i]))
            acc += (E[c, i] / sc) ** 2
    return np.sqrt(acc / (C * D))


@numba.njit(cache=True)
def _vec_norm(e, y, rtol, atol):
    acc = 0.0
    for i in range(e.shape[0]):
        acc += (e[i] / (atol + rtol * abs(y[i]))) ** 2
    return np.sqrt(acc / e.shape[0])


@numba.njit(cache=True)
def _hermite(y0, f0, y1, f1, h, theta, out):
    t2 = theta * theta
    t3 = t2 * theta
    h00 = 2 * t3 - 3 * t2 + 1
    h10 = (t3 - 2 * t2 + theta) * h
    h01 = -2 * t3 + 3 * t2
    h11 = (t3 - t2) * h
    for i in range(y0.shape[0]):
        out[i] = h00 * y0[i] + h10 * f0[i] + h01 * y1[i] + h11 * f1[i]


@numba.njit(cache=True)
def _monotone_cubic(y0, f0, y1, f1, h, theta):
    """Hermite cubic with Fritsch-Carlson limited slopes; nondecreasing when ``y1 >= y0``."""
    if h <= 0.0 or y1 <= y0:
        return y0
    sec = (y1 - y0) / h
    m0 = min(max(f0, 0.0), 3.0 * sec)
    m1 = min(max(f1, 0.0), 3.0 * sec)
    t2 = theta * theta
    t3 = t2 * theta
    return ((2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + theta) * h * m0
            + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * h * m1)


@numba.njit(cache=True)
def _record(k, c, y, N, var, sign, norm, keep_s, keep_la, out_s, out_la, out_scal, K):
    for p in range(N):
        if y[p] > 1.0:
            y[p] = 1.0
        elif y[p] < -1.0:
            y[p] = -1.0
    for q in range(keep_s.shape[0]):
        out_s[k, c, q] = y[keep_s[q]]
    for q in range(keep_la.shape[0]):
        out_la[k, c, q] = y[N + keep_la[q]]
    V, kmax, lamax = observe(y, N, var, sign, norm, K)
    out_scal[k, c, 0] = V
    out_scal[k, c, 1] = kmax
    out_scal[k, c, 2] = lamax
    smax = 0.0
    for p in range(N):
        smax = max(smax, abs(y[p]))
    out_scal[k, c, 3] = smax
    out_scal[k, c, 4] = K.min()


@numba.njit(cache=True)
def _emit(t0, Y0, F0, t1, Y1, F1, obs, k, N, var, sign, norm,
          keep_s, keep_la, out_t, out_s, out_la, out_scal, K, tmp):
    h = t1 - t0
    C = Y0.shape[0]
    while k < obs.shape[0] and obs[k] <= t1:
        theta = (obs[k] - t0) / h if h > 0 else 1.0
        for c in range(C):
            _hermite(Y0[c], F0[c], Y1[c], F1[c], h, theta, tmp)
            for i in range(N, tmp.shape[0]):
                tmp[i] = _monotone_cubic(Y0[c, i], F0[c, i], Y1[c, i], F1[c, i], h, theta)
            _record(k, c, tmp, N, var, sign, norm, keep_s, keep_la,
                    out_s, out_la, out_scal, K)
        out_t[k] = obs[k]
        k += 1
    return k


@numba.njit(cache=True)
def _separation(Y, N):
    acc = 0.0
    for p in range(N):
        d = Y[1, p] - Y[0, p]
        acc += d * d
    return np.sqrt(acc)


@numba.njit(cache=True)
def _find_crossing(t0, Y0, F0, Y1, F1, h, N, target, tmp0, tmp1):
    lo, hi = 0.0, 1.0
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        _hermite(Y0[0], F0[0], Y1[0], F1[0], h, mid, tmp0)
        _hermite(Y0[1], F0[1], Y1[1], F1[1], h, mid, tmp1)
        acc = 0.0
        for p in range(N):
            d = tmp1[p] - tmp0[p]
            acc += d * d
        if np.sqrt(acc) >= target:
            hi = mid
        else:
            lo = mid
    return hi


@numba.njit(cache=True)
def _build_inverse(y, N, var, sign, norm, alpha, dh, A, Bv, Cv, Winv):
    jacobian_parts(y, N, var, sign, norm, alpha, A, Bv, Cv)
    M, L = var.shape
    S = -dh * A
    for p in range(N):
        S[p, p] += 1.0
    dh2 = dh * dh
    for m in range(M):
        for r in range(L):
            b = Bv[m, r]
            if b == 0.0:
                continue
            l = var[m, r]
            for r2 in range(L):
                cv = Cv[m, r2]
                if cv != 0.0:
                    S[l, var[m, r2]] -= dh2 * b * cv
    Winv[:, :] = np.linalg.inv(S)


@numba.njit(cache=True)
def _solve(Winv, Bv, Cv, var, N, dh, r, out, tmp):
    M, L = var.shape
    for p in range(N):
        tmp[p] = r[p]
    for m in range(M):
        rl = r[N + m]
        if rl == 0.0:
            continue
        for q in range(L):
            b = Bv[m, q]
            if b != 0.0:
                tmp[var[m, q]] += dh * b * rl
    xs = Winv @ tmp[:N]
    for p in range(N):
        out[p] = xs[p]
    for m in range(M):
        acc = 0.0
        for q in range(L):
            cv = Cv[m, q]
            if cv != 0.0:
                acc += cv * xs[var[m, q]]
        out[N + m] = r[N + m] + dh * acc


@numba.njit(cache=True)
def _newton_step(z, psi, dh, dhw, N, var, sign, norm, alpha, Winv, Bv, Cv, rtol, atol,
                 F, res, delta, tmp, info):
    """One simplified Newton update of ``z``; returns the scaled update norm (inf if nonfinite)."""
    D = z.shape[0]
    rhs(z, N, var, sign, norm, alpha, F)
    info[NFEV] += 1
    for i in range(D):
        res[i] = psi[i] + dh * F[i] - z[i]
    _solve(Winv, Bv, Cv, var, N, dhw, res, delta, tmp)
    for i in range(D):
        z[i] += delta[i]
        if not np.isfinite(z[i]):
            return np.inf
    return _vec_norm(delta, z, rtol, atol)


@numba.njit(cache=True)
def _newton(z, psi, dh, dhw, N, var, sign, norm, alpha, Winv, Bv, Cv, rtol, atol,
            F, res, delta, tmp, info, min_it):
    """Simplified Newton for ``z - dh f(z) = psi``.

    ``dhw`` is the step used when the iteration matrix was built. At least
    ``min_it`` iterations are taken. Returns the iteration count, or -1 when
    the iteration diverges or stalls.
    """
    prev = 0.0
    for it in range(max(8, min_it)):
        nd = _newton_step(z, psi, dh, dhw, N, var, sign, norm, alpha, Winv, Bv, Cv,
                          rtol, atol, F, res, delta, tmp, info)
        if not np.isfinite(nd):
            return -1
        if it + 1 >= min_it:
            if nd <= 1e-10:
                return it + 1
            if it == 0:
                if nd <= 1e-2:
                    return 1
            else:
                theta = nd / prev if prev > 0 else 0.0
                if theta >= 0.9:
                    return -1
                if theta / (1.0 - theta) * nd <= 5e-2:
                    return it + 1
        prev = nd
    return -1


@numba.njit(cache=True)
def _newton_all(Z, Psi, dh, dhw, N, var, sign, norm, alpha, Winv, Bv, Cv, rtol, atol,
                F, res, delta, tmp, info):
    """Newton solve for every copy with a common iteration count.

    Equal counts make the discrete step the same smooth map for all copies,
    so the difference between a pair is not polluted by where each copy's
    convergence test happened to fire.
    """
    C = Z.shape[0]
    done = np.zeros(C, dtype=np.int64)
    target = 0
    for c in range(C):
        n = _newton(Z[c], Psi[c], dh, dhw, N, var, sign, norm, alpha, Winv[c], Bv[c],
                    Cv[c], rtol, atol, F, res, delta, tmp, info, target)
        if n < 0:
            return False
        done[c] = n
        if n > target:
            target = n
    for c in range(C):
        for _ in range(target - done[c]):
            nd = _newton_step(Z[c], Psi[c], dh, dhw, N, var, sign, norm, alpha, Winv[c],
                              Bv[c], Cv[c], rtol, atol, F, res, delta, tmp, info)
            if not np.isfinite(nd):
                return False
    return True


@numba.njit(cache=True)
def integrate_copies(Y, t0, t_end, obs, var, sign, norm, N, alpha, rtol, atol,
                     h_init, max_step, method, max_steps, stop_sep,
                     keep_s, keep_la, out_t, out_s, out_la, out_scal, info):
    """Advance every row of ``Y`` from ``t0`` to ``t_end`` in place.

    Observation times ``obs`` (ascending, inside ``[t0, t_end]``) are filled
    from the dense output. With ``stop_sep > 0`` and two copies, integration
    stops when the spin separation first reaches ``stop_sep``.

    Returns ``(status, t_reached, n_recorded, t_switch)``; ``t_switch`` is the
    time the driver moved to TR-BDF2, or -1.
    """
    C, D = Y.shape
    M, L = var.shape
    K = np.empty(M)
    tmp = np.empty(D)
    tmp2 = np.empty(D)
    F0 = np.empty((C, D))
    F1 = np.empty((C, D))
    Y1 = np.empty((C, D))
    E = np.empty((C, D))
    K2 = np.empty((C, D))
    K3 = np.empty((C, D))
    K4 = np.empty((C, D))
    K5 = np.empty((C, D))
    K6 = np.empty((C, D))
    Ys = np.empty((C, D))
    # implicit work space
    A = np.empty((N, N))
    Bv = np.zeros((C, M, L))
    Cv = np.zeros((C, M, L))
    Winv = np.empty((C, N, N))
    Zg = np.empty((C, D))
    Fg = np.empty((C, D))
    Psi = np.empty((C, D))
    res = np.empty(D)
    delta = np.empty(D)
    Fw = np.empty(D)

    _clamp(Y, N)
    for c in range(C):
        rhs(Y[c], N, var, sign, norm, alpha, F0[c])
    info[NFEV] += C
    t = t0
    k = 0
    while k < obs.shape[0] and obs[k] <= t0:
        for c in range(C):
            for i in range(D):
                tmp[i] = Y[c, i]
            _record(k, c, tmp, N, var, sign, norm, keep_s, keep_la,
                    out_s, out_la, out_scal, K)
        out_t[k] = obs[k]
        k += 1

    current = IMPLICIT if method == IMPLICIT else EXPLICIT
    info[METHOD] = current
    t_switch = -1.0
    h = min(h_init, max_step, t_end - t0)
    n_steps = 0
    stiff_hits = 0
    calm_hits = 0
    have_inv = False
    inv_h = 0.0
    reject_prev = False

    while t < t_end:
        if n_steps >= max_steps:
            return TOO_MANY_STEPS, t, k, t_switch
        n_steps += 1
        h = min(h, max_step)
        last = False
        if t + h >= t_end or t + 1.01 * h >= t_end:
            h = t_end - t
            last = True
        if h < 1e-13 * max(1.0, abs(t)):
            return UNDERFLOW, t, k, t_switch

        if current == EXPLICIT:
            for c in range(C):
                y0 = Y[c]
                f0 = F0[c]
                for i in range(D):
                    tmp[i] = y0[i] + h * A21 * f0[i]
                rhs(tmp, N, var, sign, norm, alpha, K2[c])
                for i in range(D):
                    tmp[i] = y0[i] + h * (A31 * f0[i] + A32 * K2[c, i])
                rhs(tmp, N, var, sign, norm, alpha, K3[c])
                for i in range(D):
                    tmp[i] = y0[i] + h * (A41 * f0[i] + A42 * K2[c, i] + A43 * K3[c, i])
                rhs(tmp, N, var, sign, norm, alpha, K4[c])
                for i in range(D):
                    tmp[i] = y0[i] + h * (A51 * f0[i] + A52 * K2[c, i] + A53 * K3[c, i]
                                          + A54 * K4[c, i])
                rhs(tmp, N, var, sign, norm, alpha, K5[c])
                for i in range(D):
                    Ys[c, i] = y0[i] + h * (A61 * f0[i] + A62 * K2[c, i] + A63 * K3[c, i]
                                            + A64 * K4[c, i] + A65 * K5[c, i])
                rhs(Ys[c], N, var, sign, norm, alpha, K6[c])
                for i in range(D):
                    Y1[c, i] = y0[i] + h * (B1 * f0[i] + B3 * K3[c, i] + B4 * K4[c, i]
                                            + B5 * K5[c, i] + B6 * K6[c, i])
                rhs(Y1[c], N, var, sign, norm, alpha, F1[c])
                for i in range(D):
                    E[c, i] = h * (E1 * f0[i] + E3 * K3[c, i] + E4 * K4[c, i]
                                   + E5 * K5[c, i] + E6 * K6[c, i] + E7 * F1[c, i])
            info[NFEV] += 6 * C
            finite = True
            for c in range(C):
                for i in range(D):
                    if not np.isfinite(Y1[c, i]):
                        finite = False
            if not finite:
                if h < 1e-10 * max(1.0, abs(t)):
                    return NONFINITE, t, k, t_switch
                h *= 0.1
                info[NREJ] += 1
                reject_prev = True
                continue
            err = _err_norm(E, Y, Y1, rtol, atol)
            if err > 1.0:
                info[NREJ] += 1
                h *= max(0.2, 0.9 * err ** -0.2)
                reject_prev = True
                if method == AUTO and h < 1e-9 * max(1.0, abs(t)):
                    current = IMPLICIT
                    info[METHOD] = IMPLICIT
                    t_switch = t
                    have_inv = False
                continue
            # Hairer's stiffness test on the last two stages
            num = 0.0
            den = 0.0
            for c in range(C):
                for i in range(D):
                    num += (F1[c, i] - K6[c, i]) ** 2
                    den += (Y1[c, i] - Ys[c, i]) ** 2
            if den > 0.0 and h * np.sqrt(num / den) > 3.25:
                calm_hits = 0
                stiff_hits += 1
            else:
                calm_hits += 1
                if calm_hits >= 6:
                    stiff_hits = 0
            fac = 0.9 * err ** -0.2 if err > 0 else 10.0
            fac = min(10.0 if not reject_prev else 1.0, max(0.2, fac))
            h_next = h * fac
        else:
            dh = D_TR * h
            # a matrix built for a nearby step size still drives Newton to convergence
            if not have_inv or h > 1.5 * inv_h or h < 0.6 * inv_h:
                for c in range(C):
                    _build_inverse(Y[c], N, var, sign, norm, alpha, dh, A,
                                   Bv[c], Cv[c], Winv[c])
                info[NJEV] += C
                info[NINV] += C
                have_inv = True
                inv_h = h
                fresh = True
            else:
                fresh = False
            dhw = D_TR * inv_h
            for c in range(C):
                for i in range(D):
                    Psi[c, i] = Y[c, i] + dh * F0[c, i]
                    Zg[c, i] = Y[c, i] + GAMMA * h * F0[c, i]
            converged = _newton_all(Zg, Psi, dh, dhw, N, var, sign, norm, alpha, Winv, Bv,
                                    Cv, rtol, atol, Fw, res, delta, tmp, info)
            if converged:
                for c in range(C):
                    for i in range(D):
                        Fg[c, i] = (Zg[c, i] - Psi[c, i]) / dh
                        Psi[c, i] = Y[c, i] + W_TR * h * (F0[c, i] + Fg[c, i])
                        Y1[c, i] = Psi[c, i] + dh * Fg[c, i]
                converged = _newton_all(Y1, Psi, dh, dhw, N, var, sign, norm, alpha, Winv,
                                        Bv, Cv, rtol, atol, Fw, res, delta, tmp, info)
            if converged:
                for c in range(C):
                    for i in range(D):
                        F1[c, i] = (Y1[c, i] - Psi[c, i]) / dh
                        tmp2[i] = h * (EST1 * F0[c, i] + EST2 * Fg[c, i] + EST3 * F1[c, i])
                    _solve(Winv[c], Bv[c], Cv[c], var, N, dhw, tmp2, E[c], tmp)
            if not converged:
                info[NREJ] += 1
                if fresh:
                    h *= 0.25
                have_inv = False
                reject_prev = True
                continue
            err = _err_norm(E, Y, Y1, rtol, atol)
            if not np.isfinite(err):
                info[NREJ] += 1
                h *= 0.25
                have_inv = False
                reject_prev = True
                continue
            if err > 1.0:
                info[NREJ] += 1
                h *= max(0.2, 0.9 * err ** (-1.0 / 3.0))
                have_inv = False
                reject_prev = True
                continue
            fac = 0.9 * err ** (-1.0 / 3.0) if err > 0 else 5.0
            fac = min(5.0 if not reject_prev else 1.0, max(0.2, fac))
            h_next = h * fac
            _project(Y1, Y, N)
            for c in range(C):
                rhs(Y1[c], N, var, sign, norm, alpha, F1[c])
            info[NFEV] += C

        # accepted
        if current == EXPLICIT and _project(Y1, Y, N):
            for c in range(C):
                rhs(Y1[c], N, var, sign, norm, alpha, F1[c])
            info[NFEV] += C
        info[NACC] += 1
        t_new = t_end if last else t + h

        if stop_sep > 0.0 and C == 2 and _separation(Y1, N) >= stop_sep:
            theta = _find_crossing(t, Y, F0, Y1, F1, t_new - t, N, stop_sep, tmp, tmp2)
            t_stop = t + theta * (t_new - t)
            k = _emit(t, Y, F0, t_stop, Y1, F1, obs, k, N, var, sign, norm,
                      keep_s, keep_la, out_t, out_s, out_la, out_scal, K, tmp)
            for c in range(C):
                _hermite(Y[c], F0[c], Y1[c], F1[c], t_new - t, theta, tmp)
                for i in range(D):
                    Y[c, i] = tmp[i]
            _clamp(Y, N)
            return STOPPED, t_stop, k, t_switch

        k = _emit(t, Y, F0, t_new, Y1, F1, obs, k, N, var, sign, norm,
                  keep_s, keep_la, out_t, out_s, out_la, out_scal, K, tmp)
        for c in range(C):
            for i in range(D):
                Y[c, i] = Y1[c, i]
                F0[c, i] = F1[c, i]
        t = t_new
        reject_prev = False
        h = h_next
        if current == EXPLICIT and method == AUTO and stiff_hits >= 15:
            current = IMPLICIT
            info[METHOD] = IMPLICIT
            t_switch = t
            have_inv = False
    return DONE, t, k, t_switch
