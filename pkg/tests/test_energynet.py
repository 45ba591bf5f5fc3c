import json

import numpy as np
import pytest

from helpers import central_diff, max_rel_err
from reasonlayers.energynet import (
    DenseNetParams,
    EnergyNet,
    InputPoint,
    eig_forward,
    make_energy_net,
    make_ground_truth,
    q_backward,
    q_error,
    q_forward,
    q_forward_batch,
)
from reasonlayers.errors import InconsistencyError, ShapeError
from reasonlayers.numkernel import SeededRng, haar_orthogonal, spectral_norm, sym_eig


def point(rng):
    return InputPoint(rng.uniform(-5, 5, 10), haar_orthogonal(rng, 5))


def zero_net(h=4):
    return EnergyNet(DenseNetParams([(np.zeros((h, 10)), np.zeros(h)), (np.zeros((3, h)), np.zeros(3))]))


def test_zero_net_midpoint():
    lam, _ = eig_forward(zero_net(), np.ones(10))
    assert np.allclose(lam[:3], 0.55) and lam[3] == 0.1 and lam[4] == 1.0


@pytest.mark.parametrize("h", [0, 3, 16, 32])
def test_pinned_extremes(h):
    rng = SeededRng(h)
    net = make_energy_net(rng, h)
    Z = rng.uniform(-5, 5, (200, 10))
    lam, _ = eig_forward(net, Z)
    assert np.all(lam.min(axis=1) == 0.1) and np.all(lam.max(axis=1) == 1.0)
    assert np.all((lam[:, :3] >= 0.1) & (lam[:, :3] <= 1.0))


def test_eig_forward_straight_line():
    rng = SeededRng(1)
    net = make_energy_net(rng, 5)
    z = rng.uniform(-5, 5, 10)
    (W1, b1), (W2, b2) = net.g.layers
    h = [np.tanh(sum(W1[i, j] * z[j] for j in range(10)) + b1[i]) for i in range(5)]
    o = [sum(W2[i, j] * h[j] for j in range(5)) + b2[i] for i in range(3)]
    ref = [0.1 + 0.9 / (1 + np.exp(-v)) for v in o]
    lam, _ = eig_forward(net, z)
    assert np.allclose(lam[:3], ref, atol=1e-14)


def test_q_forward_identity_frame():
    net = make_energy_net(SeededRng(2), 16)
    x = InputPoint(np.linspace(-1, 1, 10), np.eye(5))
    Q, _ = q_forward(net, x)
    lam, _ = eig_forward(net, x.z)
    assert np.allclose(Q, np.diag(lam), atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_q_forward_spectrum(seed):
    rng = SeededRng(seed)
    net = make_energy_net(rng, 16)
    x = point(rng)
    Q, _ = q_forward(net, x)
    assert spectral_norm(Q) == pytest.approx(1.0, abs=1e-9)
    w, _ = sym_eig(Q)
    lam, _ = eig_forward(net, x.z)
    assert np.allclose(w, np.sort(lam), atol=1e-9)


def test_q_backward_zero():
    rng = SeededRng(3)
    net = make_energy_net(rng, 8)
    Q, cache = q_forward(net, point(rng))
    assert all(np.all(g == 0) for g in q_backward(net, cache, np.zeros((5, 5))))


def test_q_backward_diagonal_decoupling():
    rng = SeededRng(4)
    net = make_energy_net(rng, 0)
    x = InputPoint(rng.uniform(-5, 5, 10), np.eye(5))
    _, cache = q_forward(net, x)
    dQ = np.zeros((5, 5))
    dQ[0, 0] = 1.0
    gW, gb = q_backward(net, cache, dQ)
    W, b = net.g.layers[0]
    s = 1 / (1 + np.exp(-(W[0] @ x.z + b[0])))
    assert gb[0] == pytest.approx(0.9 * s * (1 - s), rel=1e-12)
    assert np.all(gb[1:] == 0)
    assert np.allclose(gW[0], 0.9 * s * (1 - s) * x.z, rtol=1e-12)


@pytest.mark.parametrize("h", [0, 3, 16])
def test_q_backward_fd(h):
    rng = SeededRng(10 + h)
    net = make_energy_net(rng, h)
    Z = rng.uniform(-2, 2, (3, 10))
    U = np.stack([haar_orthogonal(rng, 5) for _ in range(3)])
    G = rng.normal((3, 5, 5))
    _, cache = q_forward_batch(net, Z, U)
    ana = q_backward(net, cache, G)
    # |f| ~ 10 here, so h = 1e-6 leaves ~1e-9 roundoff in the oracle; 1e-5 balances truncation
    num = central_diff(lambda: float(np.sum(q_forward_batch(net, Z, U)[0] * G)), net.g.arrays(), step=1e-5)
    assert max_rel_err(ana, num) <= 1e-6


def test_q_backward_cache_mismatch():
    rng = SeededRng(5)
    a = make_energy_net(rng, 4)
    b = make_energy_net(rng, 4)
    _, cache = q_forward(a, point(rng))
    with pytest.raises(InconsistencyError):
        q_backward(b, cache, np.zeros((5, 5)))
    _, cache = eig_forward(a, np.zeros(10))
    with pytest.raises(InconsistencyError):
        q_backward(a, cache, np.zeros((5, 5)))


def test_ground_truth_determinism_and_distinctness():
    a = make_ground_truth(SeededRng(0))
    b = make_ground_truth(SeededRng(0))
    assert all(np.array_equal(x, y) for x, y in zip(a.g.arrays(), b.g.arrays()))
    assert a.g.hidden_dim == 3
    nets = [make_ground_truth(SeededRng(s)) for s in range(20)]
    for i in range(20):
        for j in range(i + 1, 20):
            assert any(not np.array_equal(x, y) for x, y in zip(nets[i].g.arrays(), nets[j].g.arrays()))


def test_q_error_examples():
    rng = SeededRng(6)
    net = make_energy_net(rng, 3)
    pts = [point(rng) for _ in range(10)]
    assert q_error(net, net, pts) == 0.0
    a = zero_net(2)
    b = zero_net(2)
    b.g.layers[1][1][0] = 1.0  # shifts lambda_1 only
    x = InputPoint(np.zeros(10), np.eye(5))
    delta = 0.9 * (1 / (1 + np.exp(-1.0)) - 0.5)
    assert q_error(a, b, [x]) == pytest.approx(delta ** 2, rel=1e-12)
    with pytest.raises(ValueError):
        q_error(a, b, [])


def test_q_error_direct_sum():
    rng = SeededRng(7)
    a = make_energy_net(rng, 16)
    b = make_ground_truth(rng)
    pts = [point(rng) for _ in range(100)]
    total = 0.0
    for x in pts:
        Qa, _ = q_forward(a, x)
        Qb, _ = q_forward(b, x)
        total += sum((Qa[i, j] - Qb[i, j]) ** 2 for i in range(5) for j in range(5))
    assert q_error(a, b, pts) == pytest.approx(total / 100, rel=1e-10)


def test_shared_frame_commutes():
    rng = SeededRng(8)
    a = make_energy_net(rng, 16)
    b = make_ground_truth(rng)
    for _ in range(20):
        x = point(rng)
        Qa, _ = q_forward(a, x)
        Qb, _ = q_forward(b, x)
        assert np.linalg.norm(Qa @ Qb - Qb @ Qa) <= 1e-9


def test_json_roundtrip():
    net = make_energy_net(SeededRng(9), 16)
    back = EnergyNet.from_json(json.loads(json.dumps(net.to_json())))
    assert all(np.array_equal(x, y) for x, y in zip(net.g.arrays(), back.g.arrays()))
    assert set(net.to_json()) == {"layers", "mu", "L"}


def test_input_validation():
    with pytest.raises(ShapeError):
        InputPoint(np.zeros(9), np.eye(5))
    with pytest.raises(ValueError):
        InputPoint(np.zeros(10), 2 * np.eye(5))
    with pytest.raises(ShapeError):
        eig_forward(make_energy_net(SeededRng(0), 3), np.zeros(4))
