"""Compiled per-iteration kernels.

All kernels are ``nogil`` so worker threads overlap their gradient and
two-loop work; only the shared-cell read/commit runs under the GIL.
"""

import numpy as np
from numba import njit

LS, LOGISTIC, HINGE = 0, 1, 2


@njit(cache=True, nogil=True, inline="always")
def _slope(kind, margin, y):
    if kind == LS:
        return -2.0 * (y - margin)
    if kind == LOGISTIC:
        t = y * margin
        if t >= 0:
            s = 1.0 / (1.0 + np.exp(-t))
        else:
            e = np.exp(t)
            s = e / (1.0 + e)
        return s * y
    if y * margin < 1.0:
        return -y
    return 0.0


@njit(cache=True, nogil=True)
def two_loop(S, Y, rho, npairs, p):
    """Overwrite ``p`` (holding ``-v``) with ``-H v``; pairs ordered oldest first."""
    d = p.shape[0]
    alpha = np.empty(npairs)
    for i in range(npairs - 1, -1, -1):
        acc = 0.0
        for j in range(d):
            acc += S[i, j] * p[j]
        a = rho[i] * acc
        alpha[i] = a
        for j in range(d):
            p[j] -= a * Y[i, j]
    last = npairs - 1
    sy = 0.0
    yy = 0.0
    for j in range(d):
        sy += S[last, j] * Y[last, j]
        yy += Y[last, j] * Y[last, j]
    gamma = sy / yy
    for j in range(d):
        p[j] *= gamma
    for i in range(npairs):
        acc = 0.0
        for j in range(d):
            acc += Y[i, j] * p[j]
        c = alpha[i] - rho[i] * acc
        for j in range(d):
            p[j] += c * S[i, j]


@njit(cache=True, nogil=True)
def _finish(lam, x_read, w, mu, use_vr, S, Y, rho, npairs, out):
    # out holds the averaged loss part; add ridge and anchor terms, then negate
    d = out.shape[0]
    for j in range(d):
        g = out[j]
        if use_vr:
            g += 2.0 * lam * (x_read[j] - w[j]) + mu[j]
        else:
            g += 2.0 * lam * x_read[j]
        out[j] = -g
    if npairs > 0:
        two_loop(S, Y, rho, npairs, out)


@njit(cache=True, nogil=True)
def direction_dense(kind, lam, Z, labels, idx, x_read, w, mu, use_vr, S, Y, rho, npairs, out):
    """Search direction ``-H v`` (or ``-v`` when ``npairs == 0``) for one minibatch."""
    d = out.shape[0]
    b = idx.shape[0]
    for j in range(d):
        out[j] = 0.0
    for k in range(b):
        i = idx[k]
        mx = 0.0
        for j in range(d):
            mx += Z[i, j] * x_read[j]
        c = _slope(kind, mx, labels[i])
        if use_vr:
            mw = 0.0
            for j in range(d):
                mw += Z[i, j] * w[j]
            c -= _slope(kind, mw, labels[i])
        if c != 0.0:
            for j in range(d):
                out[j] += c * Z[i, j]
    for j in range(d):
        out[j] /= b
    _finish(lam, x_read, w, mu, use_vr, S, Y, rho, npairs, out)


@njit(cache=True, nogil=True)
def direction_csr(kind, lam, indptr, indices, values, labels, idx, x_read, w, mu, use_vr,
                  S, Y, rho, npairs, out):
    d = out.shape[0]
    b = idx.shape[0]
    for j in range(d):
        out[j] = 0.0
    for k in range(b):
        i = idx[k]
        lo = indptr[i]
        hi = indptr[i + 1]
        mx = 0.0
        for q in range(lo, hi):
            mx += values[q] * x_read[indices[q]]
        c = _slope(kind, mx, labels[i])
        if use_vr:
            mw = 0.0
            for q in range(lo, hi):
                mw += values[q] * w[indices[q]]
            c -= _slope(kind, mw, labels[i])
        if c != 0.0:
            for q in range(lo, hi):
                out[indices[q]] += c * values[q]
    for j in range(d):
        out[j] /= b
    _finish(lam, x_read, w, mu, use_vr, S, Y, rho, npairs, out)
