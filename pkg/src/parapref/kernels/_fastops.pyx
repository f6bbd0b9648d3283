# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the tiny transformer's hot loops.

Same contracts as ``pyops``; each function fuses the per-row loops that the
numpy fallback expresses as several array passes.  float64 only.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, sqrt, tanh

cnp.import_array()

BACKEND_NAME = "c"

cdef double GELU_C = sqrt(2.0 / 3.14159265358979323846)
cdef double GELU_A = 0.044715


def layernorm_fwd(double[:, ::1] x, double[::1] gamma, double[::1] beta, double eps=1e-5):
    cdef Py_ssize_t T = x.shape[0], d = x.shape[1]
    cdef cnp.ndarray[double, ndim=2] y = np.empty((T, d))
    cdef cnp.ndarray[double, ndim=2] xhat = np.empty((T, d))
    cdef cnp.ndarray[double, ndim=1] rstd = np.empty(T)
    cdef double[:, ::1] yv = y, xh = xhat
    cdef double[::1] rs = rstd
    cdef Py_ssize_t t, j
    cdef double mu, var, diff, r
    for t in range(T):
        mu = 0.0
        for j in range(d):
            mu += x[t, j]
        mu /= d
        var = 0.0
        for j in range(d):
            diff = x[t, j] - mu
            var += diff * diff
        var /= d
        r = 1.0 / sqrt(var + eps)
        rs[t] = r
        for j in range(d):
            xh[t, j] = (x[t, j] - mu) * r
            yv[t, j] = xh[t, j] * gamma[j] + beta[j]
    return y, xhat, rstd


def layernorm_bwd(double[:, ::1] dy, double[:, ::1] xhat, double[::1] rstd, double[::1] gamma):
    cdef Py_ssize_t T = dy.shape[0], d = dy.shape[1]
    cdef cnp.ndarray[double, ndim=2] dx = np.empty((T, d))
    cdef cnp.ndarray[double, ndim=1] dgamma = np.zeros(d)
    cdef cnp.ndarray[double, ndim=1] dbeta = np.zeros(d)
    cdef double[:, ::1] dxv = dx
    cdef double[::1] dg = dgamma, db = dbeta
    cdef Py_ssize_t t, j
    cdef double m1, m2, dxh
    for t in range(T):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            dxh = dy[t, j] * gamma[j]
            m1 += dxh
            m2 += dxh * xhat[t, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            dxh = dy[t, j] * gamma[j]
            dxv[t, j] = (dxh - m1 - xhat[t, j] * m2) * rstd[t]
            dg[j] += dy[t, j] * xhat[t, j]
            db[j] += dy[t, j]
    return dx, dgamma, dbeta


def gelu_fwd(double[:, ::1] x):
    cdef Py_ssize_t T = x.shape[0], d = x.shape[1]
    cdef cnp.ndarray[double, ndim=2] y = np.empty((T, d))
    cdef double[:, ::1] yv = y
    cdef Py_ssize_t t, j
    cdef double v, inner
    for t in range(T):
        for j in range(d):
            v = x[t, j]
            inner = GELU_C * (v + GELU_A * v * v * v)
            yv[t, j] = 0.5 * v * (1.0 + tanh(inner))
    return y


def gelu_bwd(double[:, ::1] x, double[:, ::1] dy):
    cdef Py_ssize_t T = x.shape[0], d = x.shape[1]
    cdef cnp.ndarray[double, ndim=2] dx = np.empty((T, d))
    cdef double[:, ::1] dxv = dx
    cdef Py_ssize_t t, j
    cdef double v, inner, tval, dinner
    for t in range(T):
        for j in range(d):
            v = x[t, j]
            inner = GELU_C * (v + GELU_A * v * v * v)
            tval = tanh(inner)
            dinner = GELU_C * (1.0 + 3.0 * GELU_A * v * v)
            dxv[t, j] = dy[t, j] * (0.5 * (1.0 + tval) + 0.5 * v * (1.0 - tval * tval) * dinner)
    return dx


def causal_softmax_fwd(double[:, :, ::1] scores):
    cdef Py_ssize_t H = scores.shape[0], T = scores.shape[1]
    cdef cnp.ndarray[double, ndim=3] probs = np.zeros((H, T, T))
    cdef double[:, :, ::1] pv = probs
    cdef Py_ssize_t h, t, j
    cdef double m, s, e
    for h in range(H):
        for t in range(T):
            m = scores[h, t, 0]
            for j in range(1, t + 1):
                if scores[h, t, j] > m:
                    m = scores[h, t, j]
            s = 0.0
            for j in range(t + 1):
                e = exp(scores[h, t, j] - m)
                pv[h, t, j] = e
                s += e
            for j in range(t + 1):
                pv[h, t, j] /= s
    return probs


def causal_softmax_bwd(double[:, :, ::1] probs, double[:, :, ::1] dprobs):
    cdef Py_ssize_t H = probs.shape[0], T = probs.shape[1]
    cdef cnp.ndarray[double, ndim=3] ds = np.zeros((H, T, T))
    cdef double[:, :, ::1] dsv = ds
    cdef Py_ssize_t h, t, j
    cdef double inner
    for h in range(H):
        for t in range(T):
            inner = 0.0
            for j in range(t + 1):
                inner += dprobs[h, t, j] * probs[h, t, j]
            for j in range(t + 1):
                dsv[h, t, j] = probs[h, t, j] * (dprobs[h, t, j] - inner)
    return ds


def token_logprobs_fwd(double[:, ::1] logits, long[::1] targets):
    cdef Py_ssize_t T = logits.shape[0], V = logits.shape[1]
    cdef cnp.ndarray[double, ndim=1] logp = np.empty(T)
    cdef cnp.ndarray[double, ndim=1] lse = np.empty(T)
    cdef double[::1] lp = logp, ls = lse
    cdef Py_ssize_t t, j
    cdef double m, s
    for t in range(T):
        m = logits[t, 0]
        for j in range(1, V):
            if logits[t, j] > m:
                m = logits[t, j]
        s = 0.0
        for j in range(V):
            s += exp(logits[t, j] - m)
        ls[t] = m + log(s)
        lp[t] = logits[t, targets[t]] - ls[t]
    return logp, lse


def token_logprobs_bwd(double[:, ::1] logits, long[::1] targets, double[::1] lse, double[::1] dlogp):
    cdef Py_ssize_t T = logits.shape[0], V = logits.shape[1]
    cdef cnp.ndarray[double, ndim=2] dlogits = np.empty((T, V))
    cdef double[:, ::1] dl = dlogits
    cdef Py_ssize_t t, j
    for t in range(T):
        for j in range(V):
            dl[t, j] = -exp(logits[t, j] - lse[t]) * dlogp[t]
        dl[t, targets[t]] += dlogp[t]
    return dlogits
