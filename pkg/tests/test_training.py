import math

import numpy as np
import pytest

from helpers import central_diff, max_rel_err
from reasonlayers.energynet import eig_forward, make_energy_net, make_ground_truth
from reasonlayers.errors import TrainingFailure
from reasonlayers.layers import GdLayer, NagLayer, RnnLayer, init_rnn_weights, stable_region
from reasonlayers.numkernel import SeededRng, haar_orthogonal
from reasonlayers.quadratic import batch_opt, sample_problem_batch
from reasonlayers.training import (
    AdamState,
    ModelState,
    ProblemSet,
    RunRecord,
    TrainConfig,
    adam_step,
    evaluate,
    fit,
    loss_and_grad,
    per_sample_losses,
    sgd_step,
    split_indices,
    train_model,
)


def energy_problems(n=300, seed=0):
    rng = SeededRng(seed)
    star = make_ground_truth(rng.spawn(1))
    Z = rng.uniform(-5, 5, (n, 10))
    U = np.stack([haar_orthogonal(rng, 5) for _ in range(n)])
    b = rng.uniform(-5, 5, (n, 5))
    lam, _ = eig_forward(star, Z)
    return ProblemSet(b=b, y_star=batch_opt(U, lam, b), Z=Z, U=U, star=star)


def l2o_problems(n=200, d=4, seed=0):
    _, _, Q, b, ys = sample_problem_batch(SeededRng(seed), n, d, 0.1, 1.0, 5.0)
    return ProblemSet(b=b, y_star=ys, Q=Q)


def energy_model(alg, k, h=8, seed=0, phi=0.8):
    net = make_energy_net(SeededRng(seed), h)
    if alg == "GD":
        return ModelState(net, GdLayer(phi, k), stable_region("GD", 0.1, 1.0), False)
    if alg == "NAG":
        return ModelState(net, NagLayer(phi, 0.1, k), stable_region("NAG", 0.1, 1.0), False)
    w = init_rnn_weights(SeededRng(seed + 1), 5, [6, 6])
    return ModelState(net, RnnLayer(w, k), None, False)


def test_loss_zero_when_exact():
    P = l2o_problems(5)
    model = ModelState(None, GdLayer(1.0, 3), None, False)
    batch = P.batch(np.arange(5))
    y = None
    Q, b, _ = batch
    from reasonlayers.layers import forward
    y, _ = forward(model.layer, Q, b)
    loss, grads = loss_and_grad(model, (Q, b, y))
    assert loss == 0.0
    assert all(np.all(g == 0) for g in grads)


def test_k0_constant_model():
    P = energy_problems(20)
    model = energy_model("GD", 0)
    batch = P.batch(np.arange(20))
    loss, grads = loss_and_grad(model, batch)
    assert loss == pytest.approx(np.mean(np.linalg.norm(P.y_star, axis=1)), rel=1e-14)
    assert all(np.all(g == 0) for g in grads)


@pytest.mark.parametrize("alg", ["GD", "NAG", "RNN"])
def test_loss_grad_fd(alg):
    P = energy_problems(6, seed=3)
    model = energy_model(alg, 5)
    batch = P.batch(np.arange(6))
    params = model.params()
    loss, grads = loss_and_grad(model, batch)
    # loss ~ 40 here: five-point stencil at a larger step keeps roundoff below 1e-9
    num = central_diff(lambda: loss_and_grad(model.with_params(params), batch)[0], params, step=1e-4, order=4)
    assert max_rel_err(grads, num) <= 1e-5


def test_l2o_params_are_layer_only():
    P = l2o_problems(10)
    m = ModelState(None, GdLayer(1.0, 4), stable_region("GD", 0.1, 1.0), True)
    _, grads = loss_and_grad(m, P.batch(np.arange(10)))
    assert len(grads) == 1 and grads[0].shape == ()


def test_sgd_examples():
    assert sgd_step([np.array(1.0)], [np.array(1.0)], 0.1)[0] == pytest.approx(0.9)
    p = [np.arange(3.0)]
    assert np.array_equal(sgd_step(p, [np.zeros(3)], 0.5)[0], p[0])


def test_adam_zero_grad_unchanged():
    p = [np.arange(4.0)]
    new, st = adam_step(p, [np.zeros(4)], AdamState.zeros_like(p), 0.1)
    assert np.array_equal(new[0], p[0]) and st.t == 1


def test_adam_first_step_by_hand():
    c, lr = 3.0, 0.01
    new, _ = adam_step([np.array(0.0)], [np.array(c)], AdamState.zeros_like([np.array(0.0)]), lr)
    m_hat = (1 - 0.9) * c / (1 - 0.9)
    v_hat = (1 - 0.999) * c * c / (1 - 0.999)
    assert float(new[0]) == pytest.approx(-lr * m_hat / (math.sqrt(v_hat) + 1e-8), rel=1e-14)
    assert abs(float(new[0])) == pytest.approx(lr, rel=1e-6)


def test_projection_keeps_phi_in_region():
    P = energy_problems(120)
    cfg = TrainConfig(alg="GD", k=5, hidden_dim=4, n_train=100, epochs=3, batch_size=16, lr_grid=[0.5])
    train, _ = split_indices(cfg, len(P))
    log = []
    fit(cfg, P, train, 0.5, phi_log=log)
    lo, hi = stable_region("GD", 0.1, 1.0, cfg.c0)
    assert log and all(lo <= p <= hi for p in log)
    assert max(log) == hi  # a big lr pushes phi onto the boundary


def test_epochs0_reflects_init():
    P = energy_problems(300)
    cfg = TrainConfig(alg="GD", k=5, hidden_dim=4, n_train=100, epochs=0, lr_grid=[1e-3])
    rec = train_model(cfg, P)
    scale = np.mean(np.linalg.norm(P.y_star, axis=1))
    assert 0.1 * scale < rec.train_loss < 2 * scale
    assert abs(rec.gap) < 0.2 * scale
    assert rec.gap == rec.test_loss - rec.train_loss


def test_training_improves_well_specified():
    P = energy_problems(300)
    base = TrainConfig(alg="GD", k=30, hidden_dim=3, n_train=100, epochs=0, batch_size=32, lr_grid=[1e-2], seed=1)
    r0 = train_model(base, P)
    r1 = train_model(TrainConfig(**{**base.__dict__, "epochs": 20}), P)
    assert r1.train_loss < r0.train_loss


def test_determinism_bitwise():
    P = energy_problems(200)
    cfg = TrainConfig(alg="NAG", k=5, hidden_dim=4, n_train=80, epochs=3, batch_size=16, lr_grid=[1e-2, 1e-3])
    a = train_model(cfg, P)
    b = train_model(cfg, P)
    assert a.to_json() == b.to_json()


def test_divergence_handling():
    P = l2o_problems(100)
    cfg = TrainConfig(alg="RNN", k=20, n_train=50, epochs=3, batch_size=10, lr_grid=[1e12, 1e-3],
                      rnn_hidden=[8, 8])
    rec = train_model(cfg, P)
    assert rec.best_lr == 1e-3 and math.isinf(rec.lr_losses[1e12])
    with pytest.raises(TrainingFailure):
        train_model(TrainConfig(**{**cfg.__dict__, "lr_grid": [1e12]}), P)


def test_evaluate_examples():
    P = energy_problems(50)
    perfect = ModelState(P.star, GdLayer(1.8, 2000), None, False)
    loss, qe = evaluate(perfect, P)
    assert loss < 1e-9 and qe == 0.0
    const = energy_model("NAG", 0)
    loss, _ = evaluate(const, P)
    assert loss == pytest.approx(np.mean(np.linalg.norm(P.y_star, axis=1)), rel=1e-13)
    m = energy_model("GD", 7)
    loss, _ = evaluate(m, P, np.arange(10, 40))
    direct = sum(per_sample_losses(m, P.batch(np.array([i])))[0] for i in range(10, 40)) / 30
    assert loss == pytest.approx(direct, abs=1e-12)
    with pytest.raises(ValueError):
        evaluate(m, P, np.array([], dtype=int))


def test_split_disjoint():
    cfg = TrainConfig(n_train=40, seed=9)
    tr, te = split_indices(cfg, 100)
    assert len(tr) == 40 and len(te) == 60 and not set(tr) & set(te)
    with pytest.raises(ValueError):
        split_indices(TrainConfig(n_train=500), 100)


def test_record_json_keys():
    P = l2o_problems(60)
    rec = train_model(TrainConfig(alg="GD", k=3, n_train=30, epochs=1, lr_grid=[1e-2]), P)
    assert list(rec.to_json()) == ["alg", "k", "hidden_dim", "n_train", "best_lr", "train_loss",
                                   "test_loss", "gap", "q_error", "phi_final", "c_phi_final", "seed"]
    back = RunRecord.from_json(rec.to_json())
    assert back.to_json() == rec.to_json()


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr_grid=[])
    with pytest.raises(ValueError):
        TrainConfig(optimizer="RMSprop")
    with pytest.raises(ValueError):
        TrainConfig(alg="CG")
