"""Command-line entry point: ``activecf {synth,train,run,verify}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import kernels
from .aspect_model import TrainConfig, load_model, save_model, train_em
from .dataset import DatasetError, generate_synthetic, load_dataset, write_dataset
from .harness import ExperimentConfig, load_config, run_experiment
from .verify import run_all

_logger = logging.getLogger("activecf")

_DELIMITERS = {"tab": "\t", "\\t": "\t", "comma": ",", "space": " "}


def _delimiter(text: str) -> str:
    d = _DELIMITERS.get(text, text)
    if len(d) != 1:
        raise argparse.ArgumentTypeError("delimiter must be a single character or tab/comma/space")
    return d


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def cmd_synth(args) -> int:
    data, truth = generate_synthetic(args.k, args.users, args.items, args.ratings_per_user,
                                     args.rating_scale, args.seed, sigma=args.sigma,
                                     concentration=args.concentration)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(data, out / "ratings.tsv")
    save_model(truth, out / "truth_model.txt")
    print(f"wrote {len(data)} ratings ({data.num_users} users, {data.num_items} items) to {out}")
    return 0


def cmd_train(args) -> int:
    data = load_dataset(args.data, args.rating_scale, args.delimiter, args.header)
    cfg = TrainConfig(k=args.k, max_iter=args.max_iter, loglik_tol=args.tol, seed=args.seed,
                      n_init=args.restarts)
    model = train_em(data, cfg)
    save_model(model, args.out)
    print(f"trained K={model.k} on {len(data)} ratings; final log-likelihood "
          f"{model.loglik_trace[-1]:.4f}; model written to {args.out}")
    return 0


def cmd_run(args) -> int:
    overrides = dict(seed=args.seed, out=args.out, jobs=args.jobs)
    if args.dump_losses:
        overrides["dump_losses"] = True
    cfg = load_config(args.config, **overrides) if args.config else ExperimentConfig(
        **{k: v for k, v in overrides.items() if v is not None})
    table = run_experiment(cfg)
    sys.stdout.write(table.to_csv())
    print(f"results written to {cfg.out}", file=sys.stderr)
    return 0


def cmd_verify(args) -> int:
    model = load_model(args.model) if args.model else None
    results = run_all(args.seed, model, args.instances, args.samples)
    for r in results:
        print(r.line())
    return 0 if all(r.ok for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="activecf", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset and its ground-truth model")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--k", type=int, default=4)
    s.add_argument("--users", type=int, default=300)
    s.add_argument("--items", type=int, default=50)
    s.add_argument("--ratings-per-user", type=int, default=30)
    s.add_argument("--rating-scale", type=int, default=5)
    s.add_argument("--sigma", type=float, default=0.3)
    s.add_argument("--concentration", type=float, default=0.5)
    s.add_argument("--seed", type=_seed, default=0)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="fit an aspect model to a ratings file")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="model file to write")
    t.add_argument("--rating-scale", type=int, default=5)
    t.add_argument("--delimiter", type=_delimiter, default="\t")
    t.add_argument("--header", action="store_true", help="skip the first line")
    t.add_argument("--k", type=int, default=5)
    t.add_argument("--max-iter", type=int, default=200)
    t.add_argument("--tol", type=float, default=1e-6)
    t.add_argument("--restarts", type=int, default=8)
    t.add_argument("--seed", type=_seed, default=0)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("run", help="run the simulated elicitation experiment")
    r.add_argument("--config", help="flat key = value config file")
    r.add_argument("--seed", type=_seed, help="master seed (overrides config)")
    r.add_argument("--out", help="output directory (overrides config)")
    r.add_argument("--jobs", type=int, help="worker processes (overrides config)")
    r.add_argument("--dump-losses", action="store_true", help="write per-candidate losses")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="closed-form vs Monte-Carlo self-checks")
    v.add_argument("--model", help="use this model's Gaussians instead of random ones")
    v.add_argument("--instances", type=int, default=100)
    v.add_argument("--samples", type=int, default=100_000)
    v.add_argument("--seed", type=_seed, default=0)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    _logger.debug("kernel backend: %s", kernels.BACKEND)
    try:
        return args.func(args)
    except (DatasetError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
