"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature.
Batched arrays are laid out as ``Q[B, d, d]``, ``b[B, d]`` and traces as
``ys[k + 1, B, d]``.
"""
import math

import numpy as np


def jacobi_eig(A, tol, max_sweeps):
    """Cyclic Jacobi on a symmetric matrix.

    Returns ``(w, V, sweeps)`` with unsorted eigenvalues ``w`` and
    eigenvectors in the columns of ``V``. ``sweeps`` is -1 when the
    off-diagonal mass did not drop below ``tol * ||A||_F`` in time.
    """
    a = np.array(A, dtype=np.float64, copy=True)
    d = a.shape[0]
    v = np.eye(d)
    scale = math.sqrt(float(np.sum(a * a)))
    thresh = tol * scale
    for sweep in range(max_sweeps + 1):
        off = math.sqrt(max(float(np.sum(a * a) - np.sum(np.diag(a) ** 2)), 0.0))
        if off <= thresh:
            return np.diag(a).copy(), v, sweep
        if sweep == max_sweeps:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J with J the (p, q) rotation
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v, -1


def _mv(Q, x):
    return np.einsum("bij,bj->bi", Q, x)


def _mtv(Q, x):
    return np.einsum("bji,bj->bi", Q, x)


def gd_forward(Q, b, phi, k):
    B, d = b.shape
    ys = np.zeros((k + 1, B, d))
    y = ys[0]
    for t in range(k):
        y = y - phi * (_mv(Q, y) + b)
        ys[t + 1] = y
    return ys


def gd_backward(Q, b, phi, ys, upstream):
    k = ys.shape[0] - 1
    B, d = b.shape
    dQ = np.zeros((B, d, d))
    db = np.zeros((B, d))
    dphi = np.zeros(B)
    a = np.array(upstream, dtype=np.float64, copy=True)
    for t in range(k - 1, -1, -1):
        y = ys[t]
        g = _mv(Q, y) + b
        dphi -= np.einsum("bi,bi->b", a, g)
        dQ -= phi * a[:, :, None] * y[:, None, :]
        db -= phi * a
        a = a - phi * _mtv(Q, a)
    return dQ, db, dphi


def nag_forward(Q, b, phi, beta, k):
    B, d = b.shape
    ys = np.zeros((k + 1, B, d))
    zs = np.zeros((k + 1, B, d))
    for t in range(k):
        z = zs[t]
        y_next = z - phi * (_mv(Q, z) + b)
        ys[t + 1] = y_next
        zs[t + 1] = y_next + beta * (y_next - ys[t])
    return ys, zs


def nag_backward(Q, b, phi, beta, ys, zs, upstream):
    k = ys.shape[0] - 1
    B, d = b.shape
    dQ = np.zeros((B, d, d))
    db = np.zeros((B, d))
    dphi = np.zeros(B)
    dbeta = np.zeros(B)
    ay = np.zeros((k + 1, B, d))
    ay[k] = upstream
    az = np.zeros((B, d))  # adjoint of z_{t+1}, complete when step t is reached
    for t in range(k - 1, -1, -1):
        # z_{t+1} = (1 + beta) y_{t+1} - beta y_t
        dbeta += np.einsum("bi,bi->b", az, ys[t + 1] - ys[t])
        ay[t + 1] += (1.0 + beta) * az
        ay[t] -= beta * az
        # y_{t+1} = z_t - phi (Q z_t + b)
        g = ay[t + 1]
        z = zs[t]
        dphi -= np.einsum("bi,bi->b", g, _mv(Q, z) + b)
        dQ -= phi * g[:, :, None] * z[:, None, :]
        db -= phi * g
        az = g - phi * _mtv(Q, g)
    return dQ, db, dphi, dbeta
