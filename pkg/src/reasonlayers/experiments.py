"""Synthetic datasets, multi-seed experiment drivers, aggregation, CSV and SVG output."""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from xml.sax.saxutils import escape

import numpy as np

from .energynet import D, Z_DIM, EnergyNet, eig_forward, make_ground_truth
from .errors import TrainingFailure
from .layers import GD, NAG, RNN
from .numkernel import SeededRng, haar_orthogonal
from .quadratic import batch_opt, sample_problem_batch
from .training import LR_GRID, ProblemSet, RunRecord, TrainConfig, split_indices, train_model

CSV_HEADER = ["alg", "k", "hidden_dim", "metric", "mean", "std", "n_runs"]
METRICS = ("train_loss", "q_error", "gap", "test_loss")
KINDS = ("approx", "qerr", "gap", "rnn-compare", "properties")
DEFAULT_METRIC = {"approx": "train_loss", "qerr": "q_error", "gap": "gap", "rnn-compare": "train_loss"}


@dataclass
class DatasetSpec:
    n_total: int = 10000
    d: int = D
    z_dim: int = Z_DIM
    z_range: float = 5.0
    b_range: float = 5.0
    mu: float = 0.1
    L: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.mu < self.L:
            raise ValueError("dataset needs mu < L")
        if self.n_total < 1:
            raise ValueError("n_total must be >= 1")

    @property
    def sigma_b_sq(self) -> float:
        return self.b_range ** 2 / 3.0

    def to_json(self) -> dict:
        out = asdict(self)
        out["sigma_b_sq"] = self.sigma_b_sq
        return out

    @classmethod
    def from_json(cls, obj) -> "DatasetSpec":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in names})


@dataclass
class SyntheticDataset:
    spec: DatasetSpec
    star: EnergyNet
    Z: np.ndarray
    U: np.ndarray
    b: np.ndarray
    y_star: np.ndarray

    def __len__(self):
        return len(self.b)

    def problems(self) -> ProblemSet:
        return ProblemSet(b=self.b, y_star=self.y_star, Z=self.Z, U=self.U, star=self.star)

    def to_json(self) -> dict:
        return {
            "spec": self.spec.to_json(),
            "star_params": self.star.to_json(),
            "samples": [
                {"z": z.tolist(), "U": U.tolist(), "b": b.tolist(), "y_star": y.tolist()}
                for z, U, b, y in zip(self.Z, self.U, self.b, self.y_star)
            ],
        }

    @classmethod
    def from_json(cls, obj) -> "SyntheticDataset":
        s = obj["samples"]
        return cls(
            DatasetSpec.from_json(obj["spec"]),
            EnergyNet.from_json(obj["star_params"]),
            np.array([x["z"] for x in s], dtype=np.float64),
            np.array([x["U"] for x in s], dtype=np.float64),
            np.array([x["b"] for x in s], dtype=np.float64),
            np.array([x["y_star"] for x in s], dtype=np.float64),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, separators=(",", ":"))

    @classmethod
    def load(cls, path) -> "SyntheticDataset":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def gen_dataset(spec: DatasetSpec) -> SyntheticDataset:
    """Uniform z and b, Haar frames, labels from the fixed ground-truth network."""
    rng = SeededRng(spec.seed, (0,))
    star = make_ground_truth(rng.spawn(1), spec.mu, spec.L)
    r = rng.spawn(2)
    n = spec.n_total
    Z = r.uniform(-spec.z_range, spec.z_range, (n, spec.z_dim))
    U = np.stack([haar_orthogonal(r, spec.d) for _ in range(n)])
    b = r.uniform(-spec.b_range, spec.b_range, (n, spec.d))
    lam, _ = eig_forward(star, Z)
    return SyntheticDataset(spec, star, Z, U, b, batch_opt(U, lam, b))


def l2o_problems(seed: int, n_total: int = 10000, d: int = 10, mu=0.1, L=1.0, b_range=5.0) -> ProblemSet:
    """Given-energy problems for the learning-to-optimize comparison."""
    _, _, Q, b, ys = sample_problem_batch(SeededRng(seed, (5,)), n_total, d, mu, L, b_range)
    return ProblemSet(b=b, y_star=ys, Q=Q)


# --- experiment driver ------------------------------------------------------

@dataclass
class ExperimentConfig:
    kind: str = "approx"
    algs: list = field(default_factory=lambda: [GD, NAG])
    k_grid: list = field(default_factory=lambda: [1, 2, 5, 10, 20, 50, 100])
    hidden_dims: list = field(default_factory=lambda: [16])
    n_train: int = 500
    seeds: int = 20
    seed: int = 0
    epochs: int = 200
    batch_size: int = 64
    lr_grid: list = field(default_factory=lambda: list(LR_GRID))
    optimizers: list = field(default_factory=lambda: ["Adam"])
    c0: float = 1e-3
    project_phi: bool = True
    rnn_hidden: list = field(default_factory=lambda: [20, 20, 20])
    n_total: int = 10000
    d: int = D
    out: str = "out"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind}")
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")
        if self.kind == "rnn-compare" and self.d == D:
            self.d = 10

    @classmethod
    def from_json(cls, obj) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**obj)

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(n_total=self.n_total, seed=self.seed)


def run_seed(base: int, index: int) -> int:
    """64-bit run seed; distinct indices give independent streams."""
    ss = np.random.SeedSequence(entropy=int(base), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _cells(cfg: ExperimentConfig):
    hidden = [0] if cfg.kind == "rnn-compare" else cfg.hidden_dims
    for s in range(cfg.seeds):
        for alg in cfg.algs:
            for h in hidden:
                for k in cfg.k_grid:
                    yield TrainConfig(
                        alg=alg, k=k, hidden_dim=h, n_train=cfg.n_train, lr_grid=list(cfg.lr_grid),
                        epochs=cfg.epochs, batch_size=cfg.batch_size, seed=run_seed(cfg.seed, s),
                        c0=cfg.c0, project_phi=cfg.project_phi, rnn_hidden=list(cfg.rnn_hidden),
                    )


_WORKER_PROBLEMS = None


def _init_worker(problems):
    global _WORKER_PROBLEMS
    _WORKER_PROBLEMS = problems


def _failed(tc: TrainConfig) -> RunRecord:
    nan = math.nan
    return RunRecord(tc.alg, tc.k, tc.hidden_dim, tc.n_train, nan, nan, nan, nan, None, None, None, tc.seed)


def run_cell(tc: TrainConfig, optimizers, problems=None, keep_model=False) -> RunRecord:
    """Best run over optimizers (lowest train loss); failures yield a NaN record."""
    problems = problems if problems is not None else _WORKER_PROBLEMS
    split = split_indices(tc, len(problems))
    best = None
    for opt in optimizers:
        try:
            rec = train_model(TrainConfig(**{**asdict(tc), "optimizer": opt}), problems, split)
        except TrainingFailure:
            continue
        if best is None or rec.train_loss < best.train_loss:
            best = rec
    if best is None:
        return _failed(tc)
    if not keep_model:
        best.model = None
    return best


def record_key(r: RunRecord):
    return (r.alg, r.hidden_dim, r.k, r.seed)


def run_experiment(cfg: ExperimentConfig, dataset: SyntheticDataset | None = None, jobs: int = 1,
                   keep_models: bool = False):
    """One RunRecord per (seed, alg, hidden_dim, k), sorted canonically.

    ``keep_models`` leaves the trained ModelState on each record (serial runs only).

    ``kind == "properties"`` instead returns one PropertyReport per algorithm.
    """
    if cfg.kind == "properties":
        from .properties import PropertyConfig, certify

        return [certify(PropertyConfig(alg=a, c0=cfg.c0, seed=cfg.seed)) for a in cfg.algs if a in (GD, NAG)]
    if cfg.kind == "rnn-compare":
        problems = l2o_problems(cfg.seed, cfg.n_total, cfg.d)
    else:
        dataset = dataset if dataset is not None else gen_dataset(cfg.dataset_spec())
        problems = dataset.problems()
    cells = list(_cells(cfg))
    if jobs <= 1:
        records = [run_cell(tc, cfg.optimizers, problems, keep_models) for tc in cells]
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(problems,)) as ex:
            records = list(ex.map(run_cell, cells, [cfg.optimizers] * len(cells), chunksize=1))
    return sorted(records, key=record_key)


def save_records(records, path):
    with open(path, "w") as fh:
        json.dump([r.to_json() for r in records], fh, indent=1)


def load_records(path):
    with open(path) as fh:
        return [RunRecord.from_json(o) for o in json.load(fh)]


# --- aggregation and output -------------------------------------------------

@dataclass
class AggregateRow:
    alg: str
    k: int
    hidden_dim: int
    metric: str
    mean: float
    std: float
    n_runs: int
    failed: int = 0


def _metric(r: RunRecord, metric):
    v = getattr(r, metric)
    return math.nan if v is None else float(v)


def aggregate(records, metric: str = "train_loss"):
    """Mean and sample std per (alg, k, hidden_dim); non-finite runs are counted as failed."""
    if not records:
        raise ValueError("nothing to aggregate")
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric}")
    groups = {}
    for r in sorted(records, key=record_key):
        groups.setdefault((r.alg, r.hidden_dim, r.k), []).append(_metric(r, metric))
    rows = []
    for (alg, h, k), vals in groups.items():
        ok = np.array([v for v in vals if math.isfinite(v)])
        n = len(ok)
        mean = float(np.mean(ok)) if n else math.nan
        std = float(np.std(ok, ddof=1)) if n > 1 else (0.0 if n == 1 else math.nan)
        rows.append(AggregateRow(alg, k, h, metric, mean, std, n, len(vals) - n))
    return rows


def emit_csv(rows, path):
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([r.alg, r.k, r.hidden_dim, r.metric, repr(r.mean), repr(r.std), r.n_runs])


def read_csv(path):
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        if next(rd) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header")
        return [AggregateRow(a, int(k), int(h), m, float(mu), float(sd), int(n))
                for a, k, h, m, mu, sd, n in rd]


_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def emit_svg(rows, path, width=640, height=420):
    """Line plot of mean vs k per (alg, hidden_dim) with +-1 std whiskers."""
    if not rows:
        raise ValueError("no rows to plot")
    rows = [r for r in rows if math.isfinite(r.mean)]
    ks = sorted({r.k for r in rows})
    lo = min(r.mean - r.std for r in rows) if rows else 0.0
    hi = max(r.mean + r.std for r in rows) if rows else 1.0
    if hi <= lo:
        lo, hi = lo - 1.0, hi + 1.0
    ml, mr, mt, mb = 70, 150, 30, 50
    pw, ph = width - ml - mr, height - mt - mb

    def sx(k):
        return ml + (pw * ks.index(k) / (len(ks) - 1) if len(ks) > 1 else pw / 2)

    def sy(v):
        return mt + ph * (1.0 - (v - lo) / (hi - lo))

    metric = rows[0].metric if rows else ""
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
        f'<text x="{ml + pw / 2:.2f}" y="{height - 10}" text-anchor="middle" font-size="13">k</text>',
        f'<text x="15" y="{mt + ph / 2:.2f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 15 {mt + ph / 2:.2f})">{escape(metric)}</text>',
    ]
    for k in ks:
        out.append(f'<text x="{sx(k):.2f}" y="{mt + ph + 18}" text-anchor="middle" font-size="11">{k}</text>')
    for i in range(5):
        v = lo + (hi - lo) * i / 4
        out.append(f'<text x="{ml - 6}" y="{sy(v) + 4:.2f}" text-anchor="end" font-size="11">{v:.3g}</text>')
    series = {}
    for r in rows:
        series.setdefault((r.alg, r.hidden_dim), []).append(r)
    for i, ((alg, h), rs) in enumerate(sorted(series.items())):
        color = _COLORS[i % len(_COLORS)]
        rs = sorted(rs, key=lambda r: r.k)
        pts = " ".join(f"{sx(r.k):.2f},{sy(r.mean):.2f}" for r in rs)
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        for r in rs:
            x = sx(r.k)
            out.append(f'<line x1="{x:.2f}" y1="{sy(r.mean - r.std):.2f}" x2="{x:.2f}" '
                       f'y2="{sy(r.mean + r.std):.2f}" stroke="{color}"/>')
        ly = mt + 16 * i + 8
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 34}" y="{ly + 4}" font-size="11">{escape(f"{alg} h={h}")}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def write_outputs(records, out_dir, metric):
    os.makedirs(out_dir, exist_ok=True)
    rows = aggregate(records, metric)
    emit_csv(rows, os.path.join(out_dir, f"{metric}.csv"))
    emit_svg(rows, os.path.join(out_dir, f"{metric}.svg"))
    return rows
