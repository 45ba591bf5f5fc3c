"""Dense symmetric linear algebra and seeded randomness.

Matrices and vectors are plain float64 numpy arrays. The symmetric
eigensolver is a cyclic Jacobi iteration run by the compiled kernel when
available.
"""
from __future__ import annotations

import math

import numpy as np

from . import _backend
from .errors import NumericalError, ShapeError, SymmetryError

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
POWER_TOL = 1e-10
POWER_MAX_ITER = 10000


class SeededRng:
    """Counter-based random stream keyed by ``(seed, stream)``.

    Wraps a Philox generator. Two instances built from the same pair draw
    identical sequences; :meth:`spawn` derives child streams without
    touching the parent's state.
    """

    def __init__(self, seed: int, stream: int | tuple = 0):
        self.seed = int(seed)
        self.stream = tuple(stream) if isinstance(stream, tuple) else (int(stream),)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream)
        self.gen = np.random.Generator(np.random.Philox(ss))

    def spawn(self, *keys: int) -> "SeededRng":
        return SeededRng(self.seed, self.stream + tuple(int(k) for k in keys))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, size=None):
        return self.gen.standard_normal(size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def choice(self, a, size=None, replace=True):
        return self.gen.choice(a, size=size, replace=replace)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, stream={self.stream})"


def _check_square(A):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def is_symmetric(A, rtol=1e-10) -> bool:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        return False
    return np.linalg.norm(A - A.T) <= rtol * max(np.linalg.norm(A), np.finfo(float).tiny)


def sym_eig(A):
    """Eigendecomposition of a symmetric matrix.

    Returns ``(w, V)`` with ``w`` ascending and orthonormal eigenvectors in
    the columns of ``V``.
    """
    A = _check_square(A)
    if not is_symmetric(A):
        raise SymmetryError("sym_eig needs a symmetric matrix")
    A = 0.5 * (A + A.T)
    w, V, sweeps = _backend.kernels.jacobi_eig(A, JACOBI_TOL, JACOBI_MAX_SWEEPS)
    if sweeps < 0:
        raise NumericalError(f"Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps")
    order = np.argsort(w, kind="stable")
    return np.asarray(w)[order], np.asarray(V)[:, order]


def spectral_norm(A) -> float:
    """Largest singular value.

    Symmetric inputs use the eigensolver; others run power iteration on
    ``A^T A`` from the normalized all-ones vector.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {A.shape}")
    if A.size == 0 or not np.any(A):
        return 0.0
    if A.shape[0] == A.shape[1] and is_symmetric(A):
        w, _ = sym_eig(A)
        return float(max(abs(w[0]), abs(w[-1])))
    AtA = A.T @ A
    v = np.ones(A.shape[1]) / math.sqrt(A.shape[1])
    est = 0.0
    for _ in range(POWER_MAX_ITER):
        u = AtA @ v
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return 0.0
        v = u / nu
        new = float(v @ AtA @ v)
        if abs(new - est) <= POWER_TOL * new:
            return math.sqrt(new)
        est = new
    return math.sqrt(est)


def haar_orthogonal(rng: SeededRng, d: int):
    """Haar-distributed orthogonal d x d matrix (sign-corrected QR of a Gaussian)."""
    if d < 1:
        raise ShapeError("d must be at least 1")
    G = rng.normal((d, d))
    Qm, R = np.linalg.qr(G)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Qm * signs
