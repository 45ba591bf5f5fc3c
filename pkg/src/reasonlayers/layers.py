"""Unrolled reasoning layers: k steps of GD, NAG or an RNN cell, with adjoints.

All forwards start from y_0 = z_0 = 0. Inputs may be a single problem
(``Q[d, d]``, ``b[d]``) or a batch (``Q[B, d, d]``, ``b[B, d]``); outputs
follow the input's rank. Gradients with respect to shared layer
parameters (``phi`` or RNN weights) are summed over the batch, while
``dQ`` and ``db`` stay per-problem.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import DomainError, InconsistencyError, ShapeError

GD = "GD"
NAG = "NAG"
RNN = "RNN"


@dataclass
class GdLayer:
    phi: float
    k: int
    alg = GD


@dataclass
class NagLayer:
    phi: float
    mu: float
    k: int
    alg = NAG

    @property
    def beta(self) -> float:
        return nag_beta(self.phi, self.mu)


@dataclass
class RnnCellWeights:
    """Cell y -> V relu(W_L ... relu(W1_y y + W1_g (Q y + b)))."""

    V: np.ndarray
    W1_y: np.ndarray
    W1_g: np.ndarray
    W_hidden: list = field(default_factory=list)

    def __post_init__(self):
        self.V = np.asarray(self.V, dtype=np.float64)
        self.W1_y = np.asarray(self.W1_y, dtype=np.float64)
        self.W1_g = np.asarray(self.W1_g, dtype=np.float64)
        self.W_hidden = [np.asarray(W, dtype=np.float64) for W in self.W_hidden]
        d = self.V.shape[0]
        if self.W1_y.shape != self.W1_g.shape or self.W1_y.shape[1] != d:
            raise ShapeError("W1_y and W1_g must both be h1 x d")
        width = self.W1_y.shape[0]
        for W in self.W_hidden:
            if W.shape[1] != width:
                raise ShapeError("hidden weight shapes are not chained")
            width = W.shape[0]
        if self.V.shape[1] != width:
            raise ShapeError("V does not match the last hidden width")

    @property
    def d(self) -> int:
        return self.V.shape[0]

    def arrays(self) -> list:
        return [self.V, self.W1_y, self.W1_g, *self.W_hidden]

    @classmethod
    def from_arrays(cls, arrays):
        return cls(arrays[0], arrays[1], arrays[2], list(arrays[3:]))

    def scaled(self, t: float) -> "RnnCellWeights":
        return RnnCellWeights(self.V * t, self.W1_y, self.W1_g, self.W_hidden)


@dataclass
class RnnLayer:
    weights: RnnCellWeights
    k: int
    alg = RNN


@dataclass
class UnrollTrace:
    alg: str
    k: int
    phi: float | None
    ys: np.ndarray                    # [k + 1, B, d]
    zs: np.ndarray | None = None      # NAG auxiliary sequence
    pre: list | None = None           # RNN: per step, per layer pre-activations
    batched: bool = True


@dataclass
class LayerGradients:
    dQ: np.ndarray
    db: np.ndarray
    dphi: float = 0.0
    dweights: RnnCellWeights | None = None


def stable_region(alg: str, mu: float, L: float, c0: float = 1e-3):
    """Step-size interval keeping the unroll bounded for every k."""
    if alg == GD:
        hi = 2.0 / (mu + L)
    elif alg == NAG:
        hi = 4.0 / (mu + 3.0 * L)
    else:
        raise DomainError(f"no closed-form stable region for {alg}")
    if not (0 < c0 < hi):
        raise DomainError(f"empty stable region: c0={c0} not in (0, {hi})")
    return (c0, hi)


def project_phi(phi: float, region) -> float:
    lo, hi = region
    return float(min(max(phi, lo), hi))


def nag_beta(phi: float, mu: float) -> float:
    if phi < 0 or mu * phi > 1.0:
        raise DomainError(f"momentum undefined for mu*phi={mu * phi}")
    r = math.sqrt(mu * phi)
    return (1.0 - r) / (1.0 + r)


def nag_dbeta(phi: float, mu: float) -> float:
    r = math.sqrt(mu * phi)
    if r == 0.0:
        raise DomainError("d beta / d phi is unbounded at phi = 0")
    return -mu / (r * (1.0 + r) ** 2)


def _batch(Q, b):
    Q = np.asarray(Q, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if b.ndim == 1:
        Q, b, batched = Q[None], b[None], False
    else:
        batched = True
    if Q.ndim != 3 or Q.shape[0] != b.shape[0] or Q.shape[1:] != (b.shape[1], b.shape[1]):
        raise ShapeError(f"Q {Q.shape} and b {b.shape} do not agree")
    return np.ascontiguousarray(Q), np.ascontiguousarray(b), batched


def _unbatch(x, batched):
    return x if batched else x[0]


def gd_forward(layer: GdLayer, Q, b):
    Q, b, batched = _batch(Q, b)
    ys = _backend.kernels.gd_forward(Q, b, float(layer.phi), int(layer.k))
    return _unbatch(ys[-1], batched), UnrollTrace(GD, layer.k, layer.phi, ys, batched=batched)


def nag_forward(layer: NagLayer, Q, b):
    Q, b, batched = _batch(Q, b)
    beta = nag_beta(layer.phi, layer.mu)
    ys, zs = _backend.kernels.nag_forward(Q, b, float(layer.phi), beta, int(layer.k))
    trace = UnrollTrace(NAG, layer.k, layer.phi, ys, zs=zs, batched=batched)
    return _unbatch(ys[-1], batched), trace


def _relu(x):
    return np.maximum(x, 0.0)


def rnn_cell(w: RnnCellWeights, Q, b, y):
    """One cell application on batched inputs; returns (y_next, pre-activations)."""
    g = np.einsum("bij,bj->bi", Q, y) + b
    h = y @ w.W1_y.T + g @ w.W1_g.T
    pre = [h]
    a = _relu(h)
    for W in w.W_hidden:
        h = a @ W.T
        pre.append(h)
        a = _relu(h)
    return a @ w.V.T, pre


def rnn_forward(weights: RnnCellWeights, k: int, Q, b):
    Q, b, batched = _batch(Q, b)
    B, d = b.shape
    if d != weights.d:
        raise ShapeError(f"cell expects d={weights.d}, problem has d={d}")
    ys = np.zeros((k + 1, B, d))
    pre = []
    for t in range(k):
        ys[t + 1], p = rnn_cell(weights, Q, b, ys[t])
        pre.append(p)
    return _unbatch(ys[-1], batched), UnrollTrace(RNN, k, None, ys, pre=pre, batched=batched)


def forward(layer, Q, b):
    if layer.alg == GD:
        return gd_forward(layer, Q, b)
    if layer.alg == NAG:
        return nag_forward(layer, Q, b)
    return rnn_forward(layer.weights, layer.k, Q, b)


def _check_trace(layer, trace, b):
    if trace.alg != layer.alg or trace.k != layer.k:
        raise InconsistencyError(f"trace ({trace.alg}, k={trace.k}) does not match layer")
    if layer.alg != RNN and trace.phi != layer.phi:
        raise InconsistencyError("trace was produced with a different step size")
    if trace.ys.shape[1:] != b.shape:
        raise InconsistencyError("trace batch shape does not match the problem")


def unroll_backward(layer, Q, b, trace: UnrollTrace, upstream) -> LayerGradients:
    """Reverse-mode gradients of ``upstream . y_k`` w.r.t. Q, b and the layer parameters."""
    Q, b, batched = _batch(Q, b)
    up = np.asarray(upstream, dtype=np.float64)
    up = np.ascontiguousarray(up if batched else up[None])
    if up.shape != b.shape:
        raise ShapeError(f"upstream {up.shape} does not match b {b.shape}")
    _check_trace(layer, trace, b)
    if layer.alg == GD:
        dQ, db, dphi = _backend.kernels.gd_backward(Q, b, float(layer.phi), trace.ys, up)
        grads = LayerGradients(dQ, db, float(np.sum(dphi)))
    elif layer.alg == NAG:
        beta = nag_beta(layer.phi, layer.mu)
        dQ, db, dphi, dbeta = _backend.kernels.nag_backward(
            Q, b, float(layer.phi), beta, trace.ys, trace.zs, up
        )
        total = float(np.sum(dphi))
        if layer.k > 0:
            total += float(np.sum(dbeta)) * nag_dbeta(layer.phi, layer.mu)
        grads = LayerGradients(dQ, db, total)
    else:
        grads = _rnn_backward(layer.weights, Q, b, trace, up)
    if not batched:
        grads.dQ = grads.dQ[0]
        grads.db = grads.db[0]
    return grads


def _rnn_backward(w: RnnCellWeights, Q, b, trace, up):
    B, d = b.shape
    dV = np.zeros_like(w.V)
    dW1y = np.zeros_like(w.W1_y)
    dW1g = np.zeros_like(w.W1_g)
    dWh = [np.zeros_like(W) for W in w.W_hidden]
    dQ = np.zeros((B, d, d))
    db = np.zeros((B, d))
    ay = up.copy()
    for t in range(trace.k - 1, -1, -1):
        y = trace.ys[t]
        pre = trace.pre[t]
        acts = [_relu(p) for p in pre]
        dV += ay.T @ acts[-1]
        da = ay @ w.V
        for li in range(len(w.W_hidden), 0, -1):
            delta = da * (pre[li] > 0)
            dWh[li - 1] += delta.T @ acts[li - 1]
            da = delta @ w.W_hidden[li - 1]
        delta = da * (pre[0] > 0)
        g = np.einsum("bij,bj->bi", Q, y) + b
        dW1y += delta.T @ y
        dW1g += delta.T @ g
        dg = delta @ w.W1_g
        dQ += dg[:, :, None] * y[:, None, :]
        db += dg
        ay = delta @ w.W1_y + np.einsum("bji,bj->bi", Q, dg)
    return LayerGradients(dQ, db, 0.0, RnnCellWeights(dV, dW1y, dW1g, dWh))


# --- RNN cell constants -----------------------------------------------------

def _opnorm(A):
    return float(np.linalg.norm(A, 2)) if A.size else 0.0


def rnn_chain_norm(w: RnnCellWeights) -> float:
    """||V||_2 * prod ||W_l||_2 over hidden layers 2..L."""
    out = _opnorm(w.V)
    for W in w.W_hidden:
        out *= _opnorm(W)
    return out


def rnn_c_hat(w: RnnCellWeights) -> float:
    return rnn_chain_norm(w) * _opnorm(w.W1_g)


def rnn_c_q(w: RnnCellWeights, Qs) -> np.ndarray:
    """Per-matrix contraction factor ||V|| ||W1_y + W1_g Q|| prod ||W_l||."""
    Qs = np.asarray(Qs, dtype=np.float64)
    if Qs.ndim == 2:
        Qs = Qs[None]
    M = w.W1_y[None] + np.einsum("hd,nde->nhe", w.W1_g, Qs)
    return rnn_chain_norm(w) * np.linalg.norm(M, 2, axis=(1, 2))


def gd_encoding_weights(d: int, s: float, n_layers: int = 2) -> RnnCellWeights:
    """Cell weights that make one RNN step equal one GD step with step size s.

    ``n_layers`` counts the ReLU layers; all hidden widths are 2d.
    """
    I = np.eye(d)
    V = np.hstack([I, -I])
    W1_y = np.vstack([I, -I])
    W1_g = np.vstack([-s * I, s * I])
    hidden = [np.eye(2 * d) for _ in range(n_layers - 1)]
    return RnnCellWeights(V, W1_y, W1_g, hidden)


def init_rnn_weights(rng, d: int, hidden: list, target_c: float = 0.9, Qs=None, mu=0.1, L=1.0):
    """Fan-in uniform weights with V rescaled so that sup_Q c^Q equals ``target_c``.

    The supremum runs over ``Qs`` plus the endpoint matrices mu*I and L*I.
    """
    if not hidden:
        raise ShapeError("RNN cell needs at least one hidden layer")
    a1 = 1.0 / math.sqrt(2 * d)
    W1_y = rng.uniform(-a1, a1, (hidden[0], d))
    W1_g = rng.uniform(-a1, a1, (hidden[0], d))
    Wh = []
    for h_in, h_out in zip(hidden[:-1], hidden[1:]):
        a = 1.0 / math.sqrt(h_in)
        Wh.append(rng.uniform(-a, a, (h_out, h_in)))
    av = 1.0 / math.sqrt(hidden[-1])
    V = rng.uniform(-av, av, (d, hidden[-1]))
    w = RnnCellWeights(V, W1_y, W1_g, Wh)
    c = rnn_contraction(w, Qs, mu, L)
    return w.scaled(target_c / c) if c > 0 else w


def rnn_contraction(w: RnnCellWeights, Qs=None, mu=0.1, L=1.0) -> float:
    """c_phi approximated as a max over sampled matrices and mu*I, L*I."""
    d = w.d
    ends = np.stack([mu * np.eye(d), L * np.eye(d)])
    allQ = ends if Qs is None else np.concatenate([np.asarray(Qs).reshape(-1, d, d), ends])
    return float(np.max(rnn_c_q(w, allQ)))
