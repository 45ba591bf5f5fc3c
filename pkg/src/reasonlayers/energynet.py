"""Energy network Q(x) = U_x diag([lam_g(z_x), mu, L]) U_x^T.

``g`` is a small dense network (tanh hidden layer, or a single affine map
when ``hidden_dim == 0``). Its three outputs are squashed into (mu, L)
by a scaled sigmoid; the last two eigenvalues are pinned to mu and L.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InconsistencyError, ShapeError
from .numkernel import SeededRng

Z_DIM = 10
OUT_DIM = 3
D = OUT_DIM + 2


@dataclass
class DenseNetParams:
    layers: list  # [(W[out, in], b[out]), ...]

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def hidden_dim(self) -> int:
        return 0 if len(self.layers) == 1 else self.layers[0][0].shape[0]

    def arrays(self) -> list:
        return [a for pair in self.layers for a in pair]

    @classmethod
    def from_arrays(cls, arrays):
        return cls([(arrays[i], arrays[i + 1]) for i in range(0, len(arrays), 2)])


@dataclass
class EnergyNet:
    g: DenseNetParams
    mu: float = 0.1
    L: float = 1.0

    def __post_init__(self):
        if not self.mu < self.L:
            raise ValueError("EnergyNet needs mu < L")

    def to_json(self) -> dict:
        return {
            "layers": [{"w": W.tolist(), "b": b.tolist()} for W, b in self.g.layers],
            "mu": self.mu,
            "L": self.L,
        }

    @classmethod
    def from_json(cls, obj) -> "EnergyNet":
        layers = [(np.array(l["w"], dtype=np.float64), np.array(l["b"], dtype=np.float64))
                  for l in obj["layers"]]
        return cls(DenseNetParams(layers), float(obj["mu"]), float(obj["L"]))


@dataclass
class InputPoint:
    z: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        self.U = np.asarray(self.U, dtype=np.float64)
        if self.z.shape != (Z_DIM,) or self.U.shape != (D, D):
            raise ShapeError("InputPoint needs z[10] and U[5, 5]")
        if np.max(np.abs(self.U.T @ self.U - np.eye(D))) > 1e-10:
            raise ValueError("U is not orthogonal")


def init_dense(rng: SeededRng, hidden_dim: int, in_dim: int = Z_DIM, out_dim: int = OUT_DIM):
    """Fan-in uniform init: every weight and bias ~ U[-a, a], a = 1/sqrt(fan_in)."""
    dims = [in_dim, out_dim] if hidden_dim == 0 else [in_dim, hidden_dim, out_dim]
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        a = 1.0 / math.sqrt(fan_in)
        W = rng.uniform(-a, a, (fan_out, fan_in))
        b = rng.uniform(-a, a, fan_out)
        layers.append((W, b))
    return DenseNetParams(layers)


def make_energy_net(rng: SeededRng, hidden_dim: int, mu=0.1, L=1.0) -> EnergyNet:
    return EnergyNet(init_dense(rng, hidden_dim), mu, L)


def make_ground_truth(rng: SeededRng, mu=0.1, L=1.0) -> EnergyNet:
    """The fixed target network: hidden width 3, parameters drawn once."""
    return make_energy_net(rng, 3, mu, L)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def eig_forward(net: EnergyNet, z):
    """Eigenvalues ``[lam_g(z) (3 entries), mu, L]`` for one z or a batch ``z[B, 10]``."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    Z = z[None] if single else z
    if Z.shape[1] != net.g.in_dim:
        raise ShapeError(f"z has {Z.shape[1]} features, network expects {net.g.in_dim}")
    acts = [Z]
    h = Z
    n = len(net.g.layers)
    for i, (W, b) in enumerate(net.g.layers):
        h = h @ W.T + b
        if i < n - 1:
            h = np.tanh(h)
        acts.append(h)
    s = _sigmoid(h)
    B = Z.shape[0]
    lam = np.empty((B, D))
    lam[:, :OUT_DIM] = net.mu + (net.L - net.mu) * s
    lam[:, OUT_DIM] = net.mu
    lam[:, OUT_DIM + 1] = net.L
    cache = {"acts": acts, "sig": s, "lam": lam, "net_id": id(net.g)}
    return (lam[0] if single else lam), cache


def q_forward_batch(net: EnergyNet, Z, U):
    """Batched Q(x) for ``Z[B, 10]`` and ``U[B, 5, 5]``."""
    lam, cache = eig_forward(net, Z)
    U = np.asarray(U, dtype=np.float64)
    Q = np.einsum("bij,bj,bkj->bik", U, lam, U)
    Q = 0.5 * (Q + np.swapaxes(Q, 1, 2))
    cache["U"] = U
    return Q, cache


def q_forward(net: EnergyNet, x: InputPoint):
    Q, cache = q_forward_batch(net, x.z[None], x.U[None])
    cache["single"] = True
    return Q[0], cache


def q_backward(net: EnergyNet, cache, dQ) -> list:
    """Parameter gradients (flat list matching ``net.g.arrays()``) given dL/dQ.

    Uses dL/dlam_i = u_i^T dQ u_i; the pinned entries carry no parameters.
    """
    if cache.get("net_id") != id(net.g) or "U" not in cache:
        raise InconsistencyError("cache was not produced by q_forward on this network")
    dQ = np.asarray(dQ, dtype=np.float64)
    if cache.get("single"):
        dQ = dQ[None]
    U = cache["U"]
    if dQ.shape != U.shape:
        raise ShapeError(f"dQ {dQ.shape} does not match the cached batch {U.shape}")
    dlam = np.einsum("bji,bjk,bki->bi", U[:, :, :OUT_DIM], dQ, U[:, :, :OUT_DIM])
    s = cache["sig"]
    dh = dlam * (net.L - net.mu) * s * (1.0 - s)
    acts = cache["acts"]
    grads = []
    n = len(net.g.layers)
    for i in range(n - 1, -1, -1):
        W, _ = net.g.layers[i]
        a_in = acts[i]
        grads.append((dh.T @ a_in, dh.sum(axis=0)))
        if i > 0:
            dh = (dh @ W) * (1.0 - acts[i] ** 2)
    grads.reverse()
    return [a for pair in grads for a in pair]


def q_error(theta_net: EnergyNet, star_net: EnergyNet, inputs) -> float:
    """Mean squared Frobenius distance between Q_theta(x) and Q*(x).

    ``inputs`` is a list of :class:`InputPoint` or a ``(Z, U)`` array pair.
    Both matrices share U_x, so the distance equals the eigenvalue gap.
    """
    if (theta_net.mu, theta_net.L) != (star_net.mu, star_net.L):
        raise ValueError("networks disagree on (mu, L)")
    if isinstance(inputs, tuple):
        Z = np.asarray(inputs[0])
    else:
        Z = np.array([x.z for x in inputs])
    if len(Z) == 0:
        raise ValueError("q_error needs at least one input")
    lt, _ = eig_forward(theta_net, Z)
    ls, _ = eig_forward(star_net, Z)
    return float(np.mean(np.sum((lt - ls) ** 2, axis=1)))
