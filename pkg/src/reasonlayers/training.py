"""End-to-end training of y = Alg^k_phi(Q_theta(x), b) against exact minimizers.

Two settings share one code path:

* energy setting: ``Q`` comes from an :class:`EnergyNet` applied to ``(z, U)``,
  and both the network and the layer parameters are trained;
* learning-to-optimize setting: ``Q`` is given, only the layer is trained.

Per-sample loss is the unsquared distance ||y_k - y*||.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .energynet import EnergyNet, make_energy_net, q_backward, q_error, q_forward_batch
from .errors import ShapeError, TrainingFailure
from .layers import (
    GD,
    NAG,
    RNN,
    GdLayer,
    NagLayer,
    RnnCellWeights,
    RnnLayer,
    forward,
    init_rnn_weights,
    project_phi,
    rnn_contraction,
    stable_region,
    unroll_backward,
)
from .numkernel import SeededRng

LR_GRID = [1e-2, 5e-3, 1e-3, 5e-4, 1e-4]
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
RESIDUAL_FLOOR = 1e-12
EVAL_CHUNK = 4096

# RNG stream ids, one per independent purpose
_S_INIT_NET = 1
_S_SUBSET = 2
_S_SHUFFLE = 3
_S_INIT_RNN = 4


@dataclass
class ProblemSet:
    """Stacked problems. ``Z``/``U``/``star`` are absent in the learning-to-optimize setting."""

    b: np.ndarray
    y_star: np.ndarray
    Q: np.ndarray | None = None
    Z: np.ndarray | None = None
    U: np.ndarray | None = None
    star: EnergyNet | None = None

    def __post_init__(self):
        if (self.Q is None) == (self.Z is None):
            raise ShapeError("give either Q (given energies) or Z/U (learned energies)")
        if self.b.shape != self.y_star.shape:
            raise ShapeError("b and y_star disagree")

    def __len__(self):
        return len(self.b)

    @property
    def learned(self) -> bool:
        return self.Z is not None

    def batch(self, idx):
        if self.learned:
            return (self.Z[idx], self.U[idx], self.b[idx], self.y_star[idx])
        return (self.Q[idx], self.b[idx], self.y_star[idx])


@dataclass
class TrainConfig:
    alg: str = GD
    k: int = 10
    hidden_dim: int = 16
    n_train: int = 500
    optimizer: str = "Adam"
    lr_grid: list = field(default_factory=lambda: list(LR_GRID))
    epochs: int = 200
    batch_size: int = 64
    seed: int = 0
    c0: float = 1e-3
    project_phi: bool = True
    rnn_hidden: list = field(default_factory=lambda: [20, 20, 20])
    mu: float = 0.1
    L: float = 1.0

    def __post_init__(self):
        if self.alg not in (GD, NAG, RNN):
            raise ValueError(f"unknown algorithm {self.alg}")
        if self.optimizer not in ("SGD", "Adam"):
            raise ValueError(f"unknown optimizer {self.optimizer}")
        if not self.lr_grid:
            raise ValueError("lr_grid must be nonempty")
        if self.k < 0 or self.epochs < 0 or self.batch_size < 1 or self.n_train < 1:
            raise ValueError("k, epochs must be >= 0; batch_size, n_train >= 1")


@dataclass
class ModelState:
    """Trainable energy network (or None) plus the reasoning layer."""

    energy: EnergyNet | None
    layer: object
    region: tuple | None = None
    project: bool = True

    def params(self) -> list:
        out = [] if self.energy is None else list(self.energy.g.arrays())
        if self.layer.alg == RNN:
            out += self.layer.weights.arrays()
        else:
            out.append(np.array(self.layer.phi, dtype=np.float64))
        return out

    def with_params(self, params) -> "ModelState":
        params = list(params)
        energy = None
        if self.energy is not None:
            n = len(self.energy.g.arrays())
            g = type(self.energy.g).from_arrays(params[:n])
            energy = EnergyNet(g, self.energy.mu, self.energy.L)
            params = params[n:]
        if self.layer.alg == RNN:
            layer = RnnLayer(RnnCellWeights.from_arrays(params), self.layer.k)
        else:
            phi = float(params[0])
            if self.project and self.region is not None:
                phi = project_phi(phi, self.region)
            layer = GdLayer(phi, self.layer.k) if self.layer.alg == GD else NagLayer(phi, self.layer.mu, self.layer.k)
        return ModelState(energy, layer, self.region, self.project)

    def copy(self) -> "ModelState":
        return self.with_params([np.array(p, copy=True) for p in self.params()])

    @property
    def phi(self):
        return None if self.layer.alg == RNN else float(self.layer.phi)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        if isinstance(params, ModelState):
            params = params.params()
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


@dataclass
class RunRecord:
    alg: str
    k: int
    hidden_dim: int
    n_train: int
    best_lr: float
    train_loss: float
    test_loss: float
    gap: float
    q_error: float | None
    phi_final: float | None
    c_phi_final: float | None
    seed: int
    epochs_run: int = 0
    lr_losses: dict = field(default_factory=dict, repr=False)
    model: ModelState | None = field(default=None, repr=False, compare=False)

    JSON_KEYS = ("alg", "k", "hidden_dim", "n_train", "best_lr", "train_loss", "test_loss",
                 "gap", "q_error", "phi_final", "c_phi_final", "seed")

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.JSON_KEYS}

    @classmethod
    def from_json(cls, obj) -> "RunRecord":
        return cls(**{k: obj[k] for k in cls.JSON_KEYS})


# --- loss and gradient ------------------------------------------------------

def _energies(model: ModelState, batch):
    if model.energy is None:
        Q, b, ys = batch
        return np.asarray(Q), None, np.asarray(b), np.asarray(ys)
    Z, U, b, ys = batch
    Q, cache = q_forward_batch(model.energy, Z, U)
    return Q, cache, np.asarray(b), np.asarray(ys)


def per_sample_losses(model: ModelState, batch) -> np.ndarray:
    Q, _, b, ystar = _energies(model, batch)
    y, _ = forward(model.layer, Q, b)
    return np.linalg.norm(y - ystar, axis=1)


def loss_and_grad(model: ModelState, batch, weights=None):
    """Weighted loss sum_i w_i ||y_k,i - y*_i|| and its gradient (aligned with ``model.params()``).

    ``weights`` defaults to 1/n, i.e. the batch mean.
    """
    Q, cache, b, ystar = _energies(model, batch)
    n = len(b)
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=np.float64)
    y, trace = forward(model.layer, Q, b)
    r = y - ystar
    norms = np.linalg.norm(r, axis=1)
    up = (w / np.maximum(norms, RESIDUAL_FLOOR))[:, None] * r
    g = unroll_backward(model.layer, Q, b, trace, up)
    grads = [] if model.energy is None else q_backward(model.energy, cache, g.dQ)
    if model.layer.alg == RNN:
        grads += g.dweights.arrays()
    else:
        grads.append(np.array(g.dphi))
    return float(np.dot(w, norms)), grads


# --- optimizers -------------------------------------------------------------

def sgd_step(params, grads, lr):
    return [p - lr * g for p, g in zip(params, grads)]


def adam_step(params, grads, state: AdamState, lr):
    t = state.t + 1
    m = [ADAM_BETA1 * mi + (1 - ADAM_BETA1) * g for mi, g in zip(state.m, grads)]
    v = [ADAM_BETA2 * vi + (1 - ADAM_BETA2) * g * g for vi, g in zip(state.v, grads)]
    c1 = 1 - ADAM_BETA1 ** t
    c2 = 1 - ADAM_BETA2 ** t
    new = [p - lr * (mi / c1) / (np.sqrt(vi / c2) + ADAM_EPS) for p, mi, vi in zip(params, m, v)]
    return new, AdamState(m, v, t)


def model_step(model: ModelState, grads, lr, optimizer="Adam", state: AdamState | None = None, ascent=False):
    """One optimizer step on a :class:`ModelState`, projecting phi afterward."""
    if ascent:
        grads = [-g for g in grads]
    if optimizer == "SGD":
        return model.with_params(sgd_step(model.params(), grads, lr)), state
    new, state = adam_step(model.params(), grads, state or AdamState.zeros_like(model), lr)
    return model.with_params(new), state


# --- training ---------------------------------------------------------------

def evaluate(model: ModelState, problems: ProblemSet, idx=None):
    """(mean loss, q_error) over ``idx`` (default: all). q_error is None without a ground-truth net."""
    idx = np.arange(len(problems)) if idx is None else np.asarray(idx)
    if len(idx) == 0:
        raise ValueError("cannot evaluate on an empty split")
    total = 0.0
    for s in range(0, len(idx), EVAL_CHUNK):
        total += float(np.sum(per_sample_losses(model, problems.batch(idx[s:s + EVAL_CHUNK]))))
    qe = None
    if problems.learned and model.energy is not None and problems.star is not None:
        qe = q_error(model.energy, problems.star, (problems.Z[idx], problems.U[idx]))
    return total / len(idx), qe


def split_indices(cfg: TrainConfig, n_total: int):
    """Seed-derived training subset and its held-out complement."""
    if cfg.n_train > n_total:
        raise ValueError(f"n_train={cfg.n_train} exceeds dataset size {n_total}")
    perm = SeededRng(cfg.seed, (_S_SUBSET,)).permutation(n_total)
    train = np.sort(perm[:cfg.n_train])
    test = np.sort(perm[cfg.n_train:])
    return train, test


def init_model(cfg: TrainConfig, problems: ProblemSet, train_idx) -> ModelState:
    energy = None
    if problems.learned:
        energy = make_energy_net(SeededRng(cfg.seed, (_S_INIT_NET, cfg.hidden_dim)), cfg.hidden_dim, cfg.mu, cfg.L)
    if cfg.alg == RNN:
        Qs = problems.Q[train_idx] if not problems.learned else None
        w = init_rnn_weights(SeededRng(cfg.seed, (_S_INIT_RNN,)), problems.b.shape[1],
                             list(cfg.rnn_hidden), 0.9, Qs, cfg.mu, cfg.L)
        return ModelState(energy, RnnLayer(w, cfg.k), None, False)
    region = stable_region(cfg.alg, cfg.mu, cfg.L, cfg.c0)
    phi = 0.5 * (region[0] + region[1])
    layer = GdLayer(phi, cfg.k) if cfg.alg == GD else NagLayer(phi, cfg.mu, cfg.k)
    return ModelState(energy, layer, region, cfg.project_phi)


def _finite(model: ModelState) -> bool:
    return all(np.all(np.isfinite(p)) for p in model.params())


def fit(cfg: TrainConfig, problems: ProblemSet, train_idx, lr, phi_log=None):
    """Train one fresh model at a single learning rate. Returns (model, final train loss)."""
    model = init_model(cfg, problems, train_idx)
    shuffle = SeededRng(cfg.seed, (_S_SHUFFLE,))
    state = None
    n = len(train_idx)
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is detected below
        return _fit_loop(cfg, problems, train_idx, lr, model, shuffle, state, n, phi_log)


def _fit_loop(cfg, problems, train_idx, lr, model, shuffle, state, n, phi_log):
    for _ in range(cfg.epochs):
        order = train_idx[shuffle.permutation(n)]
        for s in range(0, n, cfg.batch_size):
            loss, grads = loss_and_grad(model, problems.batch(order[s:s + cfg.batch_size]))
            if not math.isfinite(loss):
                return model, math.inf
            model, state = model_step(model, grads, lr, cfg.optimizer, state)
            if phi_log is not None and model.phi is not None:
                phi_log.append(model.phi)
        if not _finite(model):
            return model, math.inf
    train_loss, _ = evaluate(model, problems, train_idx)
    return model, train_loss


def train_model(cfg: TrainConfig, problems: ProblemSet, split=None) -> RunRecord:
    """Grid-search the learning rate, keep the lowest final train loss, evaluate held-out."""
    train_idx, test_idx = split if split is not None else split_indices(cfg, len(problems))
    best = None
    lr_losses = {}
    for lr in cfg.lr_grid:
        model, loss = fit(cfg, problems, train_idx, lr)
        lr_losses[lr] = loss
        if math.isfinite(loss) and (best is None or loss < best[2]):
            best = (lr, model, loss)
    if best is None:
        raise TrainingFailure(f"every learning rate diverged for {cfg.alg} k={cfg.k} seed={cfg.seed}")
    lr, model, train_loss = best
    test_loss, qe = evaluate(model, problems, test_idx)
    c_phi = None
    if cfg.alg == RNN:
        Qs = problems.Q[train_idx] if not problems.learned else None
        c_phi = rnn_contraction(model.layer.weights, Qs, cfg.mu, cfg.L)
    return RunRecord(
        alg=cfg.alg, k=cfg.k, hidden_dim=cfg.hidden_dim, n_train=cfg.n_train, best_lr=lr,
        train_loss=train_loss, test_loss=test_loss, gap=test_loss - train_loss, q_error=qe,
        phi_final=model.phi, c_phi_final=c_phi, seed=cfg.seed, epochs_run=cfg.epochs,
        lr_losses=lr_losses, model=model,
    )
