# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: cyclic Jacobi and batched GD/NAG unrolls with adjoints.

Signatures and loop order mirror ``_pykernels``.
"""
import numpy as np

from libc.math cimport sqrt, fabs, copysign


def jacobi_eig(A, double tol, int max_sweeps):
    cdef double[:, ::1] a = np.array(A, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t d = a.shape[0]
    V = np.eye(d)
    cdef double[:, ::1] v = V
    cdef Py_ssize_t i, j, p, q
    cdef double scale = 0.0, off, thresh, apq, theta, t, c, s, xp, xq
    cdef int sweep
    for i in range(d):
        for j in range(d):
            scale += a[i, j] * a[i, j]
    thresh = tol * sqrt(scale)
    for sweep in range(max_sweeps + 1):
        off = 0.0
        for i in range(d):
            for j in range(d):
                if i != j:
                    off += a[i, j] * a[i, j]
        if sqrt(off) <= thresh:
            return np.array([a[i, i] for i in range(d)]), V, sweep
        if sweep == max_sweeps:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = copysign(1.0, theta) / (fabs(theta) + sqrt(theta * theta + 1.0))
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for i in range(d):
                    xp = a[i, p]
                    xq = a[i, q]
                    a[i, p] = c * xp - s * xq
                    a[i, q] = s * xp + c * xq
                for i in range(d):
                    xp = a[p, i]
                    xq = a[q, i]
                    a[p, i] = c * xp - s * xq
                    a[q, i] = s * xp + c * xq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for i in range(d):
                    xp = v[i, p]
                    xq = v[i, q]
                    v[i, p] = c * xp - s * xq
                    v[i, q] = s * xp + c * xq
    return np.array([a[i, i] for i in range(d)]), V, -1


def gd_forward(Q, b, double phi, int k):
    cdef double[:, :, ::1] q = np.ascontiguousarray(Q, dtype=np.float64)
    cdef double[:, ::1] bb = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t B = bb.shape[0], d = bb.shape[1]
    YS = np.zeros((k + 1, B, d))
    cdef double[:, :, ::1] ys = YS
    cdef Py_ssize_t n, i, j, t
    cdef double g
    for t in range(k):
        for n in range(B):
            for i in range(d):
                g = 0.0
                for j in range(d):
                    g = g + q[n, i, j] * ys[t, n, j]
                g = g + bb[n, i]
                ys[t + 1, n, i] = ys[t, n, i] - phi * g
    return YS


def gd_backward(Q, b, double phi, YS, upstream):
    cdef double[:, :, ::1] q = np.ascontiguousarray(Q, dtype=np.float64)
    cdef double[:, ::1] bb = np.ascontiguousarray(b, dtype=np.float64)
    cdef double[:, :, ::1] ys = np.ascontiguousarray(YS, dtype=np.float64)
    cdef Py_ssize_t k = ys.shape[0] - 1
    cdef Py_ssize_t B = bb.shape[0], d = bb.shape[1]
    DQ = np.zeros((B, d, d))
    DB = np.zeros((B, d))
    DPHI = np.zeros(B)
    A = np.array(upstream, dtype=np.float64, order="C", copy=True)
    TMP = np.zeros(d)
    cdef double[:, :, ::1] dQ = DQ
    cdef double[:, ::1] db = DB
    cdef double[::1] dphi = DPHI
    cdef double[:, ::1] a = A
    cdef double[::1] tmp = TMP
    cdef Py_ssize_t n, i, j, t
    cdef double g, acc
    for n in range(B):
        for t in range(k - 1, -1, -1):
            acc = 0.0
            for i in range(d):
                g = 0.0
                for j in range(d):
                    g = g + q[n, i, j] * ys[t, n, j]
                g = g + bb[n, i]
                acc = acc + a[n, i] * g
            dphi[n] -= acc
            for i in range(d):
                for j in range(d):
                    dQ[n, i, j] -= phi * a[n, i] * ys[t, n, j]
                db[n, i] -= phi * a[n, i]
            for i in range(d):
                g = 0.0
                for j in range(d):
                    g = g + q[n, j, i] * a[n, j]
                tmp[i] = a[n, i] - phi * g
            for i in range(d):
                a[n, i] = tmp[i]
    return DQ, DB, DPHI


def nag_forward(Q, b, double phi, double beta, int k):
    cdef double[:, :, ::1] q = np.ascontiguousarray(Q, dtype=np.float64)
    cdef double[:, ::1] bb = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t B = bb.shape[0], d = bb.shape[1]
    YS = np.zeros((k + 1, B, d))
    ZS = np.zeros((k + 1, B, d))
    cdef double[:, :, ::1] ys = YS
    cdef double[:, :, ::1] zs = ZS
    cdef Py_ssize_t n, i, j, t
    cdef double g, yn
    for t in range(k):
        for n in range(B):
            for i in range(d):
                g = 0.0
                for j in range(d):
                    g = g + q[n, i, j] * zs[t, n, j]
                g = g + bb[n, i]
                yn = zs[t, n, i] - phi * g
                ys[t + 1, n, i] = yn
                zs[t + 1, n, i] = yn + beta * (yn - ys[t, n, i])
    return YS, ZS


def nag_backward(Q, b, double phi, double beta, YS, ZS, upstream):
    cdef double[:, :, ::1] q = np.ascontiguousarray(Q, dtype=np.float64)
    cdef double[:, ::1] bb = np.ascontiguousarray(b, dtype=np.float64)
    cdef double[:, :, ::1] ys = np.ascontiguousarray(YS, dtype=np.float64)
    cdef double[:, :, ::1] zs = np.ascontiguousarray(ZS, dtype=np.float64)
    cdef Py_ssize_t k = ys.shape[0] - 1
    cdef Py_ssize_t B = bb.shape[0], d = bb.shape[1]
    DQ = np.zeros((B, d, d))
    DB = np.zeros((B, d))
    DPHI = np.zeros(B)
    DBETA = np.zeros(B)
    UP = np.ascontiguousarray(upstream, dtype=np.float64)
    AYN = np.zeros(d)
    AYC = np.zeros(d)
    AZ = np.zeros(d)
    TMP = np.zeros(d)
    cdef double[:, :, ::1] dQ = DQ
    cdef double[:, ::1] db = DB
    cdef double[::1] dphi = DPHI
    cdef double[::1] dbeta = DBETA
    cdef double[:, ::1] up = UP
    cdef double[::1] ayn = AYN   # adjoint of y_{t+1}
    cdef double[::1] ayc = AYC   # adjoint of y_t, partially accumulated
    cdef double[::1] az = AZ     # adjoint of z_{t+1}
    cdef double[::1] tmp = TMP
    cdef Py_ssize_t n, i, j, t
    cdef double g, acc
    for n in range(B):
        for i in range(d):
            ayn[i] = up[n, i]
            ayc[i] = 0.0
            az[i] = 0.0
        for t in range(k - 1, -1, -1):
            # z_{t+1} = (1 + beta) y_{t+1} - beta y_t
            acc = 0.0
            for i in range(d):
                acc = acc + az[i] * (ys[t + 1, n, i] - ys[t, n, i])
                ayn[i] += (1.0 + beta) * az[i]
                ayc[i] -= beta * az[i]
            dbeta[n] += acc
            # y_{t+1} = z_t - phi (Q z_t + b)
            acc = 0.0
            for i in range(d):
                g = 0.0
                for j in range(d):
                    g = g + q[n, i, j] * zs[t, n, j]
                g = g + bb[n, i]
                acc = acc + ayn[i] * g
            dphi[n] -= acc
            for i in range(d):
                for j in range(d):
                    dQ[n, i, j] -= phi * ayn[i] * zs[t, n, j]
                db[n, i] -= phi * ayn[i]
            for i in range(d):
                g = 0.0
                for j in range(d):
                    g = g + q[n, j, i] * ayn[j]
                tmp[i] = ayn[i] - phi * g
            for i in range(d):
                az[i] = tmp[i]
                ayn[i] = ayc[i]
                ayc[i] = 0.0
    return DQ, DB, DPHI, DBETA
