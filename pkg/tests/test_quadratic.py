import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reasonlayers.errors import ShapeError, SpectrumError, SymmetryError
from reasonlayers.numkernel import SeededRng, haar_orthogonal, spectral_norm, sym_eig
from reasonlayers.quadratic import (
    QuadraticProblem,
    batch_opt,
    make_spd,
    opt_solve,
    sample_problem_batch,
    sample_spd_problem,
)


def test_opt_identity():
    p = QuadraticProblem(np.eye(3), np.array([1.0, 0, 0]), 1.0, 1.0)
    assert np.allclose(opt_solve(p), [-1, 0, 0], atol=1e-15)


def test_opt_diagonal():
    p = QuadraticProblem(np.diag([0.1, 1.0]), np.array([0.1, 1.0]), 0.1, 1.0)
    assert np.allclose(opt_solve(p), [-1, -1], atol=1e-14)


@pytest.mark.parametrize("seed", range(20))
def test_opt_residual(seed):
    rng = SeededRng(seed)
    U = haar_orthogonal(rng, 5)
    lam = rng.uniform(0.1, 1.0, 5)
    b = rng.uniform(-5, 5, 5)
    # no cached frame: forces the Jacobi route
    p = QuadraticProblem(make_spd(U, lam), b, 0.1, 1.0)
    y = opt_solve(p)
    assert np.linalg.norm(p.Q @ y + b) <= 1e-10 * (1 + np.linalg.norm(b))
    assert np.linalg.norm(y) <= np.linalg.norm(b) / 0.1 * (1 + 1e-12)


def test_opt_spectrum_violation():
    p = QuadraticProblem(np.diag([0.05, 1.0]), np.ones(2), 0.1, 1.0)
    with pytest.raises(SpectrumError):
        opt_solve(p)


def test_problem_validation():
    with pytest.raises(ShapeError):
        QuadraticProblem(np.eye(2), np.ones(3), 0.1, 1.0)
    with pytest.raises(SymmetryError):
        QuadraticProblem(np.array([[1.0, 0.5], [0.0, 1.0]]), np.ones(2), 0.1, 1.0)
    with pytest.raises(SpectrumError):
        QuadraticProblem(np.eye(2), np.ones(2), 1.0, 0.5)


def test_make_spd_identity_frame():
    assert np.allclose(make_spd(np.eye(3), [0.1, 0.5, 1.0]), np.diag([0.1, 0.5, 1.0]))


def test_make_spd_rotation():
    c = math.cos(math.pi / 4)
    plus = np.array([[c, -c], [c, c]])    # rotation by +pi/4
    minus = np.array([[c, c], [-c, c]])   # rotation by -pi/4
    assert np.allclose(make_spd(plus, [0.1, 1.0]), [[0.55, -0.45], [-0.45, 0.55]], atol=1e-15)
    assert np.allclose(make_spd(minus, [0.1, 1.0]), [[0.55, 0.45], [0.45, 0.55]], atol=1e-15)


def test_make_spd_out_of_range():
    with pytest.raises(SpectrumError):
        make_spd(np.eye(2), [0.05, 0.5], 0.1, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_make_spd_spectrum_roundtrip(seed, d):
    rng = SeededRng(seed)
    U = haar_orthogonal(rng, d)
    lam = rng.uniform(0.1, 1.0, d)
    Q = make_spd(U, lam, 0.1, 1.0)
    w, _ = sym_eig(Q)
    assert np.allclose(w, np.sort(lam), atol=1e-9)
    assert spectral_norm(Q) == pytest.approx(lam.max(), abs=1e-9)
    # opt_solve round trip: b = U c -> y* = -U (c / lam)
    c = rng.uniform(-5, 5, d)
    y = opt_solve(QuadraticProblem(Q, U @ c, 0.1, 1.0))
    assert np.allclose(y, -U @ (c / lam), atol=1e-9)


def test_sample_d1_degenerate():
    p = sample_spd_problem(SeededRng(0), 1, 0.5, 0.5, 1.0)
    assert p.Q[0, 0] == pytest.approx(0.5)


def test_sample_spectrum_audit():
    rng = SeededRng(1)
    for _ in range(1000):
        p = sample_spd_problem(rng, 10, 0.1, 1.0, 5.0)
        U, lam = p.frame
        assert lam.min() == 0.1 and lam.max() == 1.0
        assert np.all((lam >= 0.1) & (lam <= 1.0))
        assert np.all(np.abs(p.b) <= 5.0)
    w, _ = sym_eig(p.Q)
    assert w[0] == pytest.approx(0.1, abs=1e-12) and w[-1] == pytest.approx(1.0, abs=1e-12)


def test_sample_validation():
    with pytest.raises(SpectrumError):
        sample_spd_problem(SeededRng(0), 3, 1.0, 0.1, 1.0)
    with pytest.raises(ValueError):
        sample_spd_problem(SeededRng(0), 3, 0.1, 1.0, 0.0)


def test_batch_matches_single():
    U, lam, Q, b, ys = sample_problem_batch(SeededRng(3), 50, 5, 0.1, 1.0, 5.0)
    for i in range(50):
        p = QuadraticProblem(Q[i], b[i], 0.1, 1.0)
        assert np.allclose(opt_solve(p), ys[i], atol=1e-10)
    assert np.allclose(batch_opt(U, lam, b), ys)
