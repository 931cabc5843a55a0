"""Dormand-Prince 5(4) stepping with a continuous extension, compiled with numba.

The stepper takes the right-hand side as a jitted function
``rhs(t, y, out, args)`` so the same code drives the trajectory and the
mean-field kernels.
"""
from __future__ import annotations

import numba as nb
import numpy as np

C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1 / 5, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3 / 40, 9 / 40, 0.0, 0.0, 0.0, 0.0],
    [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0, 0.0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0, 0.0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0.0],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
])
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# difference between the 5th and embedded 4th order weights
E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# Shampine's quartic interpolant: weights are P[j] . (theta, theta^2, theta^3, theta^4)
P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0


@nb.njit(cache=True, nogil=True)
def dp5_attempt(rhs, t, y, h, K, y_new, tmp, rtol, atol, args):
    """One trial step. ``K[0]`` must hold ``rhs(t, y)``; on return ``K[6]`` holds ``rhs(t+h, y_new)``.

    Returns the scaled RMS error estimate (accept when <= 1).
    """
    n = y.shape[0]
    for s in range(1, 7):
        for i in range(n):
            acc = y[i]
            for r in range(s):
                if A[s, r] != 0.0:
                    acc += h * A[s, r] * K[r, i]
            tmp[i] = acc
        rhs(t + C[s] * h, tmp, K[s], args)
    # stage 6 is evaluated at the 5th order solution (FSAL)
    err = 0.0
    for i in range(n):
        y_new[i] = tmp[i]
        e = 0.0
        for r in range(7):
            e += E[r] * K[r, i]
        e *= h
        scale = atol + rtol * max(abs(y[i]), abs(y_new[i]))
        err += (abs(e) / scale) ** 2
    return np.sqrt(err / n)


@nb.njit(cache=True, nogil=True)
def step_factor(err):
    if err == 0.0:
        return MAX_FACTOR
    return min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * err ** -0.2))


@nb.njit(cache=True, nogil=True)
def dense_weights(theta):
    w = np.empty(7)
    for r in range(7):
        w[r] = theta * (P[r, 0] + theta * (P[r, 1] + theta * (P[r, 2] + theta * P[r, 3])))
    return w


@nb.njit(cache=True, nogil=True)
def dense_value(y, h, K, theta, out):
    """Interpolated solution at ``t + theta * h`` within the last accepted step."""
    w = dense_weights(theta)
    for i in range(y.shape[0]):
        acc = y[i]
        for r in range(7):
            acc += h * w[r] * K[r, i]
        out[i] = acc


@nb.njit(cache=True, nogil=True)
def dense_component(y, h, K, theta, i):
    w = dense_weights(theta)
    acc = y[i]
    for r in range(7):
        acc += h * w[r] * K[r, i]
    return acc


@nb.njit(cache=True, nogil=True)
def integrate(rhs, t0, y0, t_eval, rtol, atol, h0, args):
    """Plain adaptive integration returning the solution at the (increasing) times ``t_eval``.

    Steps are clipped to land on every output time. Returns ``(ys, status)`` with
    status 0 on success and 1 on step-size underflow.
    """
    n = y0.shape[0]
    m = t_eval.shape[0]
    ys = np.empty((m, n), dtype=y0.dtype)
    K = np.empty((7, n), dtype=y0.dtype)
    y = y0.copy()
    y_new = np.empty_like(y)
    tmp = np.empty_like(y)
    t = t0
    h = h0
    rhs(t, y, K[0], args)
    k = 0
    while k < m and t_eval[k] <= t:
        ys[k] = y
        k += 1
    while k < m:
        target = t_eval[k]
        hh = min(h, target - t)
        if hh < 1e-14 * max(1.0, abs(t)):
            return ys, 1
        clipped = hh < h
        err = dp5_attempt(rhs, t, y, hh, K, y_new, tmp, rtol, atol, args)
        if err <= 1.0:
            t = target if clipped or hh == target - t else t + hh
            y[:] = y_new
            K[0] = K[6]
            h = max(h, hh * step_factor(err)) if clipped else hh * step_factor(err)
            while k < m and t_eval[k] <= t:
                ys[k] = y
                k += 1
        else:
            h = hh * step_factor(err)
    return ys, 0
