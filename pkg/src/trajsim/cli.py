"""Command-line entry point: ``trajsim train|simulate|stats|synth``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import plots
from .config import PRESETS, ConfigError, load_config
from .dataset import DatasetError, compute_popularity, dataset_stats, serialize_movielens, synthetic_movielens
from .runner import load_dataset, load_model, run_cohorts, train_model, write_outputs
from .snapshot import SnapshotError

_logger = logging.getLogger("trajsim")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON run config (flags override it)")
    p.add_argument("--data", help="ratings file (ratings.dat or CSV); relative paths honor $TRAJSIM_DATA_ROOT")
    p.add_argument("--format", dest="data_format", choices=("auto", "dat", "csv"))
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trajsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train a recommender and write a snapshot")
    _common(tr)
    tr.add_argument("--model", dest="kind", choices=("mf", "rnn"))
    tr.add_argument("--dim", type=int)
    tr.add_argument("--lambda", dest="lam", type=float)
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--hidden", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--max-len", type=int)
    tr.add_argument("--seed", type=int, help="training RNG seed")

    sim = sub.add_parser("simulate", help="simulate test users against a trained snapshot")
    _common(sim)
    sim.add_argument("--model-path")
    sim.add_argument("--preset", choices=sorted(PRESETS))
    sim.add_argument("--T", type=int, dest="T")
    sim.add_argument("--k", type=int)
    sim.add_argument("--n-users", type=int)
    sim.add_argument("--choice", choices=("lazy", "uniform", "ranked", "alpha_preference"))
    sim.add_argument("--alpha", type=float)
    sim.add_argument("--feedback", choices=("positive", "beta_preference"))
    sim.add_argument("--beta", type=int, choices=(-1, 1))
    sim.add_argument("--rho0", type=float)
    sim.add_argument("--seed-strategy", choices=("random_single", "real_history"))
    sim.add_argument("--seed-user", type=int)
    sim.add_argument("--prefix", type=int)
    sim.add_argument("--popularity-mode", choices=("raw_count", "percentile"))
    sim.add_argument("--split", choices=("seed_quartile",))
    sim.add_argument("--master-seed", type=int)
    sim.add_argument("--threads", type=int)
    sim.add_argument("--no-plots", action="store_true")

    st = sub.add_parser("stats", help="dataset distributions (popularity, history length, correlation)")
    _common(st)
    st.add_argument("--no-plots", action="store_true")

    sy = sub.add_parser("synth", help="write a synthetic MovieLens-shaped ratings file")
    sy.add_argument("--users", type=int, default=6040)
    sy.add_argument("--items", type=int, default=3706)
    sy.add_argument("--mean-history", type=float, default=165.0)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--format", choices=("dat", "csv"), default="dat")
    sy.add_argument("--out", required=True, help="output file")
    return parser


def _overrides(args) -> dict:
    o: dict = {}
    for key in ("data", "data_format", "out", "T", "k", "n_users", "rho0", "split",
                "master_seed", "threads", "model_path", "preset"):
        v = getattr(args, key, None)
        if v is not None:
            o[key] = v
    if getattr(args, "popularity_mode", None):
        o["popularity_mode"] = args.popularity_mode
    if getattr(args, "no_plots", False):
        o["plots"] = False
    model = {k: getattr(args, a) for k, a in (("kind", "kind"), ("dim", "dim"), ("lam", "lam"),
                                              ("epochs", "epochs"), ("hidden", "hidden"), ("lr", "lr"),
                                              ("max_len", "max_len"), ("seed", "seed"))
             if getattr(args, a, None) is not None}
    if model:
        o["model"] = model
    um: dict = {}
    if getattr(args, "choice", None) or getattr(args, "alpha", None) is not None:
        um["choice"] = {k: v for k, v in (("variant", args.choice), ("alpha", args.alpha)) if v is not None}
    if getattr(args, "feedback", None) or getattr(args, "beta", None) is not None:
        um["feedback"] = {k: v for k, v in (("variant", args.feedback), ("beta", args.beta)) if v is not None}
    if getattr(args, "seed_strategy", None) or getattr(args, "seed_user", None) is not None \
            or getattr(args, "prefix", None) is not None:
        um["seed"] = {k: v for k, v in (("variant", args.seed_strategy), ("user_id", args.seed_user),
                                        ("prefix", args.prefix)) if v is not None}
    if um:
        o["user_model"] = um
    return o


def cmd_train(args) -> int:
    cfg = load_config(args.config, None, _overrides(args)).validate()
    d = load_dataset(cfg)
    t0 = time.perf_counter()
    model = train_model(cfg, d)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "model.npz"
    model.save(path)
    cfg.model_path = str(path.resolve())
    (out / "config.json").write_text(cfg.to_json() + "\n")
    hist = getattr(model, "objective_history", None) or getattr(model, "loss_history", ())
    summary = {"model": cfg.model["kind"], "snapshot": str(path), "users": len(d.users),
               "items": len(d.items), "interactions": len(d),
               "final_objective": hist[-1] if hist else None,
               "seconds": round(time.perf_counter() - t0, 2)}
    print(json.dumps(summary, indent=2))
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, None, _overrides(args)).validate(need_model=True)
    d = load_dataset(cfg)
    model = load_model(cfg.model_path)
    attribute = compute_popularity(d, cfg.popularity_mode)
    results = run_cohorts(cfg, d, model, attribute)
    out = write_outputs(cfg, results, attribute)
    failures = sum(len(r.batch.failures) for r in results)
    for r in results:
        s = r.summary
        line = f"{r.name}: {len(r.reports)} trajectories"
        if s is not None:
            line += (f", first step {s.metrics['first_step_pop'].mean:.2f}"
                     f", mean {s.metrics['mean_pop'].mean:.2f}"
                     f", slope {s.metrics['slope'].mean:.4f}"
                     f", positive slope {s.percent_positive_slope:.1f}%")
        if r.batch.failures:
            line += f", {len(r.batch.failures)} failed"
        print(line)
    print(f"outputs in {out}")
    return 0 if failures == 0 else 1


def cmd_stats(args) -> int:
    cfg = load_config(args.config, None, _overrides(args)).validate()
    d = load_dataset(cfg)
    st = dataset_stats(d)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    report = {"users": len(d.users), "items": len(d.items), "interactions": len(d),
              **st.summary()}
    (out / "stats.json").write_text(json.dumps(report, indent=2) + "\n")
    for name, (counts, edges) in st.histograms().items():
        with open(out / f"hist_{name}.csv", "w") as fh:
            fh.write("bin_left,bin_right,count\n")
            for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                fh.write(f"{lo!r},{hi!r},{int(c)}\n")
    pct = compute_popularity(d, "percentile")
    with open(out / "item_popularity.csv", "w") as fh:
        fh.write("item_id,count,percentile\n")
        for item, c, p in zip(d.items.tolist(), d.counts.tolist(), pct.values.tolist()):
            fh.write(f"{item},{c},{p!r}\n")
    if cfg.plots and not getattr(args, "no_plots", False):
        plots.plot_dataset_stats(st, out / "dataset_stats.png")
    print(json.dumps(report, indent=2))
    return 0


def cmd_synth(args) -> int:
    d = synthetic_movielens(args.users, args.items, args.mean_history, rng_seed=args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_bytes(serialize_movielens(d, args.format))
    print(f"wrote {len(d)} ratings from {len(d.users)} users on {len(d.items)} items to {args.out}")
    return 0


COMMANDS = {"train": cmd_train, "simulate": cmd_simulate, "stats": cmd_stats, "synth": cmd_synth}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DatasetError, SnapshotError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
