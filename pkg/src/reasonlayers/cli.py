"""Command-line entry point: gen-data, properties, train, experiment, report.

Exit codes: 0 success, 1 usage error, 2 run failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

from .errors import TrainingFailure


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ValueError(f"config file not found: {path}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="reasonlayers", description="Unrolled reasoning layers: data, training, certification.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="base seed (overrides the config)")
    common.add_argument("--out", default="out", help="output directory")
    sub.add_parser("gen-data", parents=[common], help="generate the synthetic dataset")
    sub.add_parser("properties", parents=[common], help="certify convergence/stability/sensitivity bounds")
    t = sub.add_parser("train", parents=[common], help="train a single model")
    t.add_argument("--dataset", help="dataset JSON from gen-data (default: generate)")
    e = sub.add_parser("experiment", parents=[common], help="run a multi-seed experiment")
    e.add_argument("--dataset", help="dataset JSON from gen-data (default: generate)")
    e.add_argument("--jobs", type=int, default=1, help="worker processes")
    e.add_argument("--metric", choices=["train_loss", "q_error", "gap"])
    r = sub.add_parser("report", parents=[common], help="aggregate records.json in --out into CSV and SVG")
    r.add_argument("--metric", choices=["train_loss", "q_error", "gap"], default="train_loss")
    return p


def _cmd_gen_data(args):
    from .experiments import DatasetSpec, gen_dataset

    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    spec = DatasetSpec.from_json(cfg)
    os.makedirs(args.out, exist_ok=True)
    gen_dataset(spec).save(os.path.join(args.out, "dataset.json"))
    print(json.dumps(spec.to_json(), sort_keys=True))
    return 0


def _cmd_properties(args):
    from .layers import GD, NAG
    from .properties import PropertyConfig, certify

    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    algs = cfg.pop("algs", [GD, NAG])
    os.makedirs(args.out, exist_ok=True)
    total = 0
    for alg in algs:
        rep = certify(PropertyConfig(**{**cfg, "alg": alg}))
        rep.write_csv(os.path.join(args.out, f"properties_{alg}.csv"))
        print(f"{alg}: {len(rep.rows)} rows, {rep.violations} violations")
        total += rep.violations
    return 0 if total == 0 else 2


def _dataset(args, spec):
    from .experiments import SyntheticDataset, gen_dataset

    if args.dataset:
        return SyntheticDataset.load(args.dataset)
    return gen_dataset(spec)


def _cmd_train(args):
    from .experiments import DatasetSpec
    from .training import TrainConfig, train_model

    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    tc = TrainConfig(**cfg)
    rec = train_model(tc, _dataset(args, DatasetSpec(seed=tc.seed)).problems())
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "run.json"), "w") as fh:
        json.dump(rec.to_json(), fh, indent=1)
    print(json.dumps(rec.to_json()))
    return 0


def _cmd_experiment(args):
    from .experiments import DEFAULT_METRIC, ExperimentConfig, run_experiment, save_records, write_outputs

    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg["out"] = args.out
    ec = ExperimentConfig.from_json(cfg)
    os.makedirs(args.out, exist_ok=True)
    if ec.kind == "properties":
        reports = run_experiment(ec)
        for rep in reports:
            rep.write_csv(os.path.join(args.out, f"properties_{rep.rows[0]['alg']}.csv"))
        return 0 if all(r.violations == 0 for r in reports) else 2
    dataset = _dataset(args, ec.dataset_spec()) if ec.kind != "rnn-compare" else None
    records = run_experiment(ec, dataset, jobs=args.jobs)
    save_records(records, os.path.join(args.out, "records.json"))
    metrics = [args.metric] if args.metric else [DEFAULT_METRIC[ec.kind]]
    if ec.kind == "rnn-compare" and not args.metric:
        metrics.append("gap")
    for m in metrics:
        write_outputs(records, args.out, m)
    with open(os.path.join(args.out, "config.json"), "w") as fh:
        json.dump(asdict(ec), fh, indent=1, sort_keys=True)
    if all(r.train_loss != r.train_loss for r in records):
        return 2
    return 0


def _cmd_report(args):
    from .experiments import load_records, write_outputs

    path = args.config or os.path.join(args.out, "records.json")
    rows = write_outputs(load_records(path), args.out, args.metric)
    for r in rows:
        print(f"{r.alg},{r.k},{r.hidden_dim},{r.metric},{r.mean!r},{r.std!r},{r.n_runs}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "properties": _cmd_properties,
    "train": _cmd_train,
    "experiment": _cmd_experiment,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"reasonlayers: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (TypeError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"reasonlayers: invalid configuration: {exc}", file=sys.stderr)
        return 1
    except (TrainingFailure, ArithmeticError, OSError) as exc:
        print(f"reasonlayers: run failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
