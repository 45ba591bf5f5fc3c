"""Quadratic energy instances E(y) = 1/2 y^T Q y + b^T y and their exact minimizer."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, SpectrumError, SymmetryError
from .numkernel import SeededRng, haar_orthogonal, is_symmetric, sym_eig

SPECTRUM_SLACK = 1e-9


@dataclass
class QuadraticProblem:
    """SPD matrix ``Q`` with spectrum in ``[mu, L]`` plus linear term ``b``.

    ``frame`` optionally caches a known eigendecomposition ``(U, lambdas)``
    so that :func:`opt_solve` can skip the Jacobi solve.
    """

    Q: np.ndarray
    b: np.ndarray
    mu: float
    L: float
    frame: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.Q.ndim != 2 or self.Q.shape[0] != self.Q.shape[1]:
            raise ShapeError(f"Q must be square, got {self.Q.shape}")
        if self.b.shape != (self.Q.shape[0],):
            raise ShapeError(f"b has shape {self.b.shape}, expected ({self.Q.shape[0]},)")
        if not (0 < self.mu <= self.L):
            raise SpectrumError(f"need 0 < mu <= L, got mu={self.mu}, L={self.L}")
        if not is_symmetric(self.Q):
            raise SymmetryError("Q must be symmetric")

    @property
    def d(self) -> int:
        return self.b.shape[0]

    def eigen(self):
        if self.frame is None:
            w, U = sym_eig(self.Q)
            self.frame = (U, w)
        return self.frame

    def check_spectrum(self):
        _, w = self.eigen()
        if w.min() < self.mu - SPECTRUM_SLACK or w.max() > self.L + SPECTRUM_SLACK:
            raise SpectrumError(
                f"spectrum [{w.min():.6g}, {w.max():.6g}] outside [{self.mu}, {self.L}]"
            )


def opt_solve(p: QuadraticProblem):
    """The unique minimizer y* = -Q^{-1} b, via the eigenframe."""
    p.check_spectrum()
    U, w = p.eigen()
    return -U @ ((U.T @ p.b) / w)


def make_spd(U, lambdas, mu=None, L=None):
    """U diag(lambdas) U^T, checking lambdas against ``[mu, L]`` when given."""
    U = np.asarray(U, dtype=np.float64)
    lam = np.asarray(lambdas, dtype=np.float64)
    if U.ndim != 2 or U.shape[0] != U.shape[1] or lam.shape != (U.shape[0],):
        raise ShapeError(f"U {U.shape} and lambdas {lam.shape} do not agree")
    if np.max(np.abs(U.T @ U - np.eye(U.shape[0]))) > 1e-10:
        raise ValueError("U is not orthogonal")
    lo = lam.min() if mu is None else mu
    hi = lam.max() if L is None else L
    if lam.min() < lo or lam.max() > hi:
        raise SpectrumError(f"eigenvalues {lam} outside [{lo}, {hi}]")
    Q = (U * lam) @ U.T
    return 0.5 * (Q + Q.T)


def sample_spectrum(rng: SeededRng, d: int, mu: float, L: float):
    """d eigenvalues in [mu, L]: uniform draws with the extremes pinned to mu and L."""
    if d == 1:
        return np.array([mu]) if mu == L else rng.uniform(mu, L, 1)
    lam = np.empty(d)
    lam[0] = mu
    lam[1] = L
    lam[2:] = rng.uniform(mu, L, d - 2)
    return lam


def sample_spd_problem(rng: SeededRng, d: int, mu: float, L: float, b_range: float):
    if not (0 < mu <= L):
        raise SpectrumError(f"need 0 < mu <= L, got mu={mu}, L={L}")
    if b_range <= 0:
        raise ValueError("b_range must be positive")
    U = haar_orthogonal(rng, d)
    lam = sample_spectrum(rng, d, mu, L)
    b = rng.uniform(-b_range, b_range, d)
    return QuadraticProblem(make_spd(U, lam, mu, L), b, mu, L, frame=(U, lam))


def sample_problem_batch(rng: SeededRng, n: int, d: int, mu: float, L: float, b_range: float):
    """Stacked arrays ``(U[n,d,d], lam[n,d], Q[n,d,d], b[n,d], y_star[n,d])``."""
    Us = np.empty((n, d, d))
    lams = np.empty((n, d))
    bs = np.empty((n, d))
    for i in range(n):
        Us[i] = haar_orthogonal(rng, d)
        lams[i] = sample_spectrum(rng, d, mu, L)
        bs[i] = rng.uniform(-b_range, b_range, d)
    Qs = batch_spd(Us, lams)
    return Us, lams, Qs, bs, batch_opt(Us, lams, bs)


def batch_spd(Us, lams):
    Q = np.einsum("nij,nj,nkj->nik", Us, lams, Us)
    return 0.5 * (Q + np.swapaxes(Q, 1, 2))


def batch_opt(Us, lams, bs):
    """Row-wise -U (U^T b / lam) for stacked eigenframes."""
    c = np.einsum("nji,nj->ni", Us, bs) / lams
    return -np.einsum("nij,nj->ni", Us, c)
