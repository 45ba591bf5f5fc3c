"""Closed-form convergence / stability / sensitivity bounds and their empirical certifiers.

Bounds are evaluated per (algorithm, k, step size). The ``empirical_*``
estimators sample problems from the SPD class with spectrum in [mu, L],
measure the corresponding ratios, and count how often a sampled instance
exceeds its bound. A nonzero violation count is an implementation bug,
not noise.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .layers import (
    GD,
    NAG,
    RNN,
    GdLayer,
    NagLayer,
    RnnCellWeights,
    RnnLayer,
    forward,
    rnn_c_hat,
    rnn_contraction,
    stable_region,
)
from .numkernel import SeededRng
from .quadratic import batch_opt, batch_spd, sample_problem_batch

RATIO_TOL = 1e-12
REPORT_COLUMNS = [
    "alg", "k", "phi", "cvg_emp", "cvg_bound", "stab_emp", "stabQ_bound",
    "stabB_bound", "sens_emp", "sens_bound", "violations",
]


def _check_phi(alg, phi, mu, L):
    if phi <= 0:
        raise DomainError(f"step size must be positive, got {phi}")
    if L is not None:
        _, hi = stable_region(alg, mu, L, np.finfo(float).tiny)
        if phi > hi * (1 + 1e-12):
            raise DomainError(f"phi={phi} outside the stable region (0, {hi}]")
    if mu * phi > 1.0:
        raise DomainError(f"mu*phi={mu * phi} > 1")


def cvg_bound(alg: str, k: int, phi: float, mu: float, L: float | None = None) -> float:
    """Worst-case ||y_k - y*|| / ||y_0 - y*||."""
    _check_phi(alg, phi, mu, L)
    if alg == GD:
        return (1.0 - phi * mu) ** k
    if alg == NAG:
        return 2.0 * math.sqrt(2.0) * (1 + k) * (1.0 - math.sqrt(mu * phi)) ** k
    raise DomainError(f"no convergence bound for {alg}")


def nag_pair_bound(k: int, phi: float, mu: float) -> float:
    """Bound on (||y_{k+1}-y*||^2 + ||y_k-y*||^2) / ||y_0-y*||^2."""
    return 8.0 * (1 + k) ** 2 * (1.0 - math.sqrt(mu * phi)) ** (2 * k)


def stab_bound(alg: str, k: int, phi: float, mu: float, M: float, L: float | None = None):
    """(coefQ, coefB) with ||dy_k|| <= coefQ ||dQ||_2 + coefB ||db||_2.

    ``M`` is the minimizer-norm scale; the bounds stay valid with the smaller of
    the two problems' ||y*||.
    """
    if k == 0:
        return 0.0, 0.0
    _check_phi(alg, phi, mu, L)
    if alg == GD:
        q = 1.0 - phi * mu
        geo = (1.0 - q ** k) / mu
        return (geo + phi * k * q ** (k - 1)) * M, geo
    if alg == NAG:
        p = 1.0 - math.sqrt(mu * phi)
        coefQ = 2.0 / mu * (1.0 - p ** (k - 1)) + phi * 8.0 * (k - 1) * k * (k + 4) / 3.0 * p ** (k - 1)
        coefB = 2.0 / mu * (1.0 - p ** k)
        return coefQ * M, coefB
    raise DomainError(f"use rnn_stab_bound for {alg}")


def sens_bound(alg: str, k: int, c0: float, mu: float, L: float, R0: float) -> float:
    """Lipschitz constant of y_k in the step size over [c0, hi], per unit |phi - phi'|."""
    if c0 <= 0:
        raise DomainError("c0 must be positive")
    if k == 0:
        return 0.0
    if alg == GD:
        return L * k * (1.0 - c0 * mu) ** (k - 1) * R0
    if alg == NAG:
        poly = 2.0 * L * (1 + k) + 4.0 / 3.0 * k * (k + 1) * (k + 5) * (math.sqrt(mu / c0) + 2.0 * L)
        return poly * (1.0 - math.sqrt(mu * c0)) ** k * R0
    raise DomainError(f"no sensitivity bound for {alg}")


def rnn_contraction_coefficient(weights: RnnCellWeights, Q_samples, mu=0.1, L=1.0) -> float:
    return rnn_contraction(weights, Q_samples, mu, L)


def rnn_stab_bound(weights: RnnCellWeights, k: int, b_norm: float, c_phi: float):
    """(coefQ, coefB) for the RNN cell in its contractive region c_phi < 1."""
    if c_phi >= 1.0:
        raise DomainError(f"c_phi={c_phi} >= 1: outside the stable region")
    if k == 0:
        return 0.0, 0.0
    c_hat = rnn_c_hat(weights)
    geo = (1.0 - c_phi ** k) / (1.0 - c_phi)
    return c_hat ** 2 * b_norm / (1.0 - c_phi) * geo, c_hat * geo


# --- empirical estimators ---------------------------------------------------

@dataclass
class PropertyConfig:
    alg: str = GD
    mu: float = 0.1
    L: float = 1.0
    c0: float = 1e-3
    k_grid: list = field(default_factory=lambda: [1, 5, 20, 100])
    n_samples: int = 500
    d: int = 5
    b_range: float = 5.0
    perturb_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.alg in (GD, NAG):
            stable_region(self.alg, self.mu, self.L, self.c0)

    def region(self):
        return stable_region(self.alg, self.mu, self.L, self.c0)

    def rng(self, purpose: int) -> SeededRng:
        return SeededRng(self.seed, (purpose,))


@dataclass
class Estimate:
    """Per-k sup ratio and violation count."""

    k_grid: list
    value: np.ndarray
    violations: np.ndarray

    def as_dict(self):
        return dict(zip(self.k_grid, self.value.tolist()))


def _with_k(layer, k):
    if layer.alg == GD:
        return GdLayer(layer.phi, k)
    if layer.alg == NAG:
        return NagLayer(layer.phi, layer.mu, k)
    return RnnLayer(layer.weights, k)


def _trajectory(layer, Q, b, kmax):
    _, trace = forward(_with_k(layer, kmax), Q, b)
    return trace.ys


def empirical_cvg(cfg: PropertyConfig, layer, problems=None) -> Estimate:
    """Sup over sampled problems of ||y_k - y*|| / ||y*||.

    For NAG the violation count checks the pair bound on
    ||y_{k+1}-y*||^2 + ||y_k-y*||^2, for GD the per-iterate bound.
    """
    if problems is None:
        problems = sample_problem_batch(cfg.rng(1), cfg.n_samples, cfg.d, cfg.mu, cfg.L, cfg.b_range)
    _, _, Q, b, ystar = problems
    kmax = max(cfg.k_grid) + 1
    ys = _trajectory(layer, Q, b, kmax)
    r0 = np.linalg.norm(ystar, axis=1)
    keep = r0 >= 1e-12
    err = np.linalg.norm(ys - ystar[None], axis=2)[:, keep]  # [kmax + 1, n]
    r0 = r0[keep]
    vals, viol = [], []
    for k in cfg.k_grid:
        ratio = err[k] / r0
        vals.append(float(ratio.max()) if ratio.size else 0.0)
        if layer.alg == GD:
            viol.append(int(np.sum(ratio > cvg_bound(GD, k, layer.phi, cfg.mu) + RATIO_TOL)))
        elif layer.alg == NAG:
            lhs = err[k + 1] ** 2 + err[k] ** 2
            rhs = nag_pair_bound(k, layer.phi, cfg.mu) * r0 ** 2
            viol.append(int(np.sum(lhs > rhs + RATIO_TOL * r0 ** 2)))
        else:
            viol.append(0)
    return Estimate(list(cfg.k_grid), np.array(vals), np.array(viol))


def perturbed_pairs(cfg: PropertyConfig, rng: SeededRng | None = None):
    """Pairs (Q, b), (Q', b') in a shared Haar frame, both inside the SPD class."""
    rng = rng or cfg.rng(2)
    U, lam, Q, b, ystar = sample_problem_batch(rng, cfg.n_samples, cfg.d, cfg.mu, cfg.L, cfg.b_range)
    n, d = b.shape
    s = cfg.perturb_scale
    lam2 = np.clip(lam + rng.uniform(-s, s, (n, d)) * (cfg.L - cfg.mu), cfg.mu, cfg.L)
    b2 = np.clip(b + rng.uniform(-s, s, (n, d)) * cfg.b_range, -cfg.b_range, cfg.b_range)
    Q2 = batch_spd(U, lam2)
    return (Q, b, ystar), (Q2, b2, batch_opt(U, lam2, b2))


def empirical_stab(cfg: PropertyConfig, layer, pairs=None, c_phi=None) -> Estimate:
    """Sup of ||Alg(Q,b) - Alg(Q',b')|| / (||Q-Q'||_2 + ||b-b'||_2) over perturbed pairs."""
    (Q, b, ys1), (Q2, b2, ys2) = pairs if pairs is not None else perturbed_pairs(cfg)
    kmax = max(cfg.k_grid)
    t1 = _trajectory(layer, Q, b, kmax)
    t2 = _trajectory(layer, Q2, b2, kmax)
    dQ = np.linalg.norm(Q - Q2, 2, axis=(1, 2))
    db = np.linalg.norm(b - b2, axis=1)
    denom = dQ + db
    keep = denom > 0
    M = np.minimum(np.linalg.norm(ys1, axis=1), np.linalg.norm(ys2, axis=1))
    if layer.alg == RNN and c_phi is None:
        c_phi = rnn_contraction(layer.weights, np.concatenate([Q, Q2]), cfg.mu, cfg.L)
    vals, viol = [], []
    for k in cfg.k_grid:
        num = np.linalg.norm(t1[k] - t2[k], axis=1)
        vals.append(float(np.max(num[keep] / denom[keep])) if keep.any() else 0.0)
        if layer.alg == RNN:
            bn = np.linalg.norm(b2, axis=1)
            cq = np.array([rnn_stab_bound(layer.weights, k, x, c_phi)[0] for x in bn])
            cb = rnn_stab_bound(layer.weights, k, 1.0, c_phi)[1]
            bound = cq * dQ + cb * db
        else:
            cq, cb = stab_bound(layer.alg, k, layer.phi, cfg.mu, 1.0)
            bound = cq * M * dQ + cb * db
        viol.append(int(np.sum(num > bound * (1 + RATIO_TOL) + 1e-14)))
    return Estimate(list(cfg.k_grid), np.array(vals), np.array(viol))


def empirical_sens(cfg: PropertyConfig, layer, problems=None, phi_pairs=None) -> Estimate:
    """Sup of ||y_k(phi) - y_k(phi')|| / |phi - phi'| with phi' drawn from the stable region.

    Only defined for the step-size families GD and NAG.
    """
    if layer.alg not in (GD, NAG):
        raise DomainError("sensitivity is estimated for GD and NAG only")
    rng = cfg.rng(3)
    if problems is None:
        problems = sample_problem_batch(rng, cfg.n_samples, cfg.d, cfg.mu, cfg.L, cfg.b_range)
    _, _, Q, b, ystar = problems
    lo, hi = cfg.region()
    if phi_pairs is None:
        phi2 = rng.uniform(lo, hi, len(b))
        phi_pairs = (np.full(len(b), layer.phi), phi2)
    p1, p2 = phi_pairs
    kmax = max(cfg.k_grid)
    dy = np.zeros((len(cfg.k_grid), len(b)))
    # one unroll per distinct step size
    for i in range(len(b)):
        a = _trajectory(_phi_layer(layer, p1[i]), Q[i:i + 1], b[i:i + 1], kmax)
        c = _trajectory(_phi_layer(layer, p2[i]), Q[i:i + 1], b[i:i + 1], kmax)
        for j, k in enumerate(cfg.k_grid):
            dy[j, i] = np.linalg.norm(a[k, 0] - c[k, 0])
    dphi = np.abs(p1 - p2)
    keep = dphi > 0
    R0 = np.linalg.norm(ystar, axis=1)
    vals, viol = [], []
    for j, k in enumerate(cfg.k_grid):
        vals.append(float(np.max(dy[j, keep] / dphi[keep])) if keep.any() else 0.0)
        bound = np.array([sens_bound(layer.alg, k, cfg.c0, cfg.mu, cfg.L, r) for r in R0]) * dphi
        viol.append(int(np.sum(dy[j] > bound * (1 + RATIO_TOL) + 1e-14)))
    return Estimate(list(cfg.k_grid), np.array(vals), np.array(viol))


def _phi_layer(layer, phi):
    return GdLayer(phi, layer.k) if layer.alg == GD else NagLayer(phi, layer.mu, layer.k)


@dataclass
class PropertyReport:
    rows: list  # dicts keyed by REPORT_COLUMNS
    meta: dict = field(default_factory=dict)

    @property
    def violations(self) -> int:
        return int(sum(r["violations"] for r in self.rows))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({c: (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in REPORT_COLUMNS})


def certify(cfg: PropertyConfig, phis=None, weights: RnnCellWeights | None = None) -> PropertyReport:
    """Run every estimator over ``phis`` (default: 5 points spanning the stable region)."""
    problems = sample_problem_batch(cfg.rng(1), cfg.n_samples, cfg.d, cfg.mu, cfg.L, cfg.b_range)
    pairs = perturbed_pairs(cfg)
    M_emp = float(np.max(np.linalg.norm(problems[4], axis=1)))
    meta = {
        "M_empirical": M_emp,
        "M_analytic": math.sqrt(cfg.d) * cfg.b_range / cfg.mu,
        "B_Q": 2.0 * cfg.L * math.sqrt(cfg.d),
    }
    rows = []
    if cfg.alg == RNN:
        if weights is None:
            raise ValueError("RNN certification needs cell weights")
        allQ = np.concatenate([problems[2], pairs[0][0], pairs[1][0]])
        c_phi = rnn_contraction(weights, allQ, cfg.mu, cfg.L)
        meta["c_phi"] = c_phi
        meta["c_phi_note"] = "sup over sampled Q plus mu*I and L*I"
        layer = RnnLayer(weights, 1)
        cv = empirical_cvg(cfg, layer, problems)
        st = empirical_stab(cfg, layer, pairs, c_phi=c_phi) if c_phi < 1 else None
        for j, k in enumerate(cfg.k_grid):
            sq, sb = rnn_stab_bound(weights, k, cfg.b_range * math.sqrt(cfg.d), c_phi) if c_phi < 1 else (math.inf, math.inf)
            rows.append({
                "alg": RNN, "k": k, "phi": float(c_phi),
                "cvg_emp": float(cv.value[j]), "cvg_bound": math.nan,
                "stab_emp": float(st.value[j]) if st else math.nan,
                "stabQ_bound": float(sq), "stabB_bound": float(sb),
                "sens_emp": math.nan, "sens_bound": math.nan,
                "violations": int(st.violations[j]) if st else 0,
            })
        return PropertyReport(rows, meta)
    lo, hi = cfg.region()
    phis = list(np.linspace(lo, hi, 5)) if phis is None else list(phis)
    for phi in phis:
        layer = GdLayer(phi, 1) if cfg.alg == GD else NagLayer(phi, cfg.mu, 1)
        cv = empirical_cvg(cfg, layer, problems)
        st = empirical_stab(cfg, layer, pairs)
        se = empirical_sens(cfg, layer, problems)
        for j, k in enumerate(cfg.k_grid):
            sq, sb = stab_bound(cfg.alg, k, phi, cfg.mu, M_emp)
            rows.append({
                "alg": cfg.alg, "k": int(k), "phi": float(phi),
                "cvg_emp": float(cv.value[j]),
                "cvg_bound": float(cvg_bound(cfg.alg, k, phi, cfg.mu)),
                "stab_emp": float(st.value[j]), "stabQ_bound": float(sq), "stabB_bound": float(sb),
                "sens_emp": float(se.value[j]),
                "sens_bound": float(sens_bound(cfg.alg, k, cfg.c0, cfg.mu, cfg.L, M_emp)),
                "violations": int(cv.violations[j] + st.violations[j] + se.violations[j]),
            })
    return PropertyReport(rows, meta)


# --- representation inequality ----------------------------------------------

def lemma2_check(theta_net, star_net, layer, data, sigma_b_sq: float = 25.0 / 3.0):
    """Compare mean ||Q_theta - Q*||_F^2 with sigma_b^-2 L^4 (sqrt(P l^2) + M Cvg)^2.

    ``data`` is ``(Z, U, b, y_star)`` arrays. Returns ``(lhs, rhs, holds)``.
    """
    from .energynet import q_error, q_forward_batch

    Z, U, b, ystar = data
    if len(Z) == 0:
        raise ValueError("lemma2_check needs a nonempty dataset")
    lhs = q_error(theta_net, star_net, (Z, U))
    Q, _ = q_forward_batch(theta_net, Z, U)
    y, _ = forward(layer, Q, b)
    pl2 = float(np.mean(np.sum((y - ystar) ** 2, axis=1)))
    M = float(np.max(np.linalg.norm(ystar, axis=1)))
    cvg = cvg_bound(layer.alg, layer.k, layer.phi, star_net.mu)
    rhs = star_net.L ** 4 / sigma_b_sq * (math.sqrt(pl2) + M * cvg) ** 2
    return lhs, rhs, bool(lhs <= rhs * (1 + 1e-9))


# --- bound-shape curves -----------------------------------------------------

@dataclass
class BoundCurveConfig:
    M: float
    r: float = 0.0
    B_phi: float | None = None
    k_grid: list = field(default_factory=lambda: list(range(0, 101)))
    mu: float = 0.1
    L: float = 1.0
    c0: float = 1e-3
    n_phi: int = 200

    def __post_init__(self):
        if self.M <= 0:
            raise ValueError("M must be positive")
        if self.B_phi is not None and self.B_phi < 0:
            raise ValueError("B_phi must be nonnegative")


def bound_curves(cfg: BoundCurveConfig, alg: str):
    """Worst case over the stable region of Cvg, Stab and the trade-off products.

    Returns a list of dicts with keys k, cvg, stab, stab_x_cvg, sens_x_B.
    ``cvg`` is attained at phi = c0; NAG's k = 0 entry is clamped to 1.
    """
    lo, hi = stable_region(alg, cfg.mu, cfg.L, cfg.c0)
    B_phi = 0.5 * (hi - lo) if cfg.B_phi is None else cfg.B_phi
    phis = np.linspace(lo, hi, cfg.n_phi)
    out = []
    for k in cfg.k_grid:
        if k == 0:
            cvg = 1.0
        else:
            cvg = max(cvg_bound(alg, k, p, cfg.mu) for p in (lo, hi))
        stab = max(max(stab_bound(alg, k, p, cfg.mu, cfg.M)) for p in phis)
        out.append({
            "k": int(k),
            "cvg": cvg,
            "stab": stab,
            "stab_x_cvg": stab * (cvg * cfg.M + math.sqrt(cfg.r)),
            "sens_x_B": sens_bound(alg, k, cfg.c0, cfg.mu, cfg.L, cfg.M) * B_phi,
        })
    return out


# --- Rademacher lower bound -------------------------------------------------

def rademacher_lower_bound(model, batch, rng: SeededRng, n_draws: int = 32, steps: int = 50,
                           lr: float = 1e-2, absolute: bool = False):
    """Monte-Carlo lower estimate of E_sigma sup_model (1/n) sum sigma_i l_i.

    For each sign vector the supremum is approached by Adam ascent on the
    signed mean loss starting from ``model``; the best value seen counts.
    When 2^n <= n_draws all sign vectors are enumerated, giving the exact
    sign expectation. ``absolute=True`` maximizes |sum sigma_i l_i| instead.
    Returns ``(estimate, budget)``.
    """
    from .training import loss_and_grad, model_step, per_sample_losses

    n = len(batch[-1])
    if n < 1:
        raise ValueError("need at least one sample")
    if 2 ** n <= n_draws:
        signs = np.array(list(itertools.product([-1.0, 1.0], repeat=n)))
    else:
        signs = rng.choice(np.array([-1.0, 1.0]), size=(n_draws, n))
    values = []
    for sigma in signs:
        best = -math.inf
        for direction in ((1.0, -1.0) if absolute else (1.0,)):
            m = model.copy()
            state = None
            w = direction * sigma / n
            best = max(best, float(np.dot(w, per_sample_losses(m, batch))))
            for _ in range(steps):
                _, grads = loss_and_grad(m, batch, weights=w)
                m, state = model_step(m, grads, lr, "Adam", state, ascent=True)
                best = max(best, float(np.dot(w, per_sample_losses(m, batch))))
        values.append(best)
    return float(np.mean(values)), {"draws": len(signs), "steps": steps, "lr": lr}
