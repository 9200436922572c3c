"""Glue between a RunConfig and the library: load, train, simulate, report."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

from . import plots
from .config import RunConfig
from .dataset import Dataset, PopularityAttribute, compute_popularity, parse_movielens
from .engine import BatchResult, simulate_batch, write_log
from .metrics import CohortSummary, TrajectoryReport, emit_report, series_csv, summarize_cohort, trajectory_report
from .mf import MfModel, train_mf
from .rnn import RnnModel, train_rnn
from .snapshot import load_snapshot
from .users import build_seed_strategy, build_user_model

_logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ("cohort", "n", "failures", "seed_pop", "first_step_pop", "mean_pop",
                 "last_step_pop", "first_step_increase", "slope", "percent_positive_slope")


def load_dataset(cfg: RunConfig) -> Dataset:
    return parse_movielens(cfg.data)


def train_model(cfg: RunConfig, d: Dataset) -> MfModel | RnnModel:
    m = cfg.model
    if m["kind"] == "mf":
        return train_mf(d, int(m["dim"]), float(m["lam"]), int(m["epochs"]), int(m["seed"]))
    return train_rnn(d, hidden=int(m["hidden"]), dim=int(m["dim"]), lam=float(m.get("lam", 1e-5)),
                     epochs=int(m["epochs"]), lr=float(m["lr"]), rng_seed=int(m["seed"]),
                     batch_size=int(m.get("batch_size", 64)), max_len=int(m.get("max_len", 50)))


def load_model(path) -> MfModel | RnnModel:
    kind, _, _ = load_snapshot(path)
    return MfModel.load(path) if kind == "mf" else RnnModel.load(path)


@dataclass
class CohortResult:
    name: str
    user_model: dict
    batch: BatchResult
    reports: list[TrajectoryReport]
    summary: CohortSummary


def _resolve_user_spec(spec: dict, cfg: RunConfig) -> dict:
    spec = {k: dict(v) for k, v in spec.items()}
    fb = spec.setdefault("feedback", {"variant": "positive"})
    if fb.get("variant") == "beta_preference":
        fb.setdefault("rho0", cfg.rho0)
    return spec


def default_n_users(cfg: RunConfig, d: Dataset, seed_spec: dict) -> int:
    if cfg.n_users is not None:
        return cfg.n_users
    if seed_spec.get("variant", "random_single") == "real_history" and seed_spec.get("user_id") is None:
        return len(d.users)
    return 1000


def run_cohorts(cfg: RunConfig, d: Dataset, model, attribute: PopularityAttribute | None = None
                ) -> list[CohortResult]:
    attribute = attribute or compute_popularity(d, cfg.popularity_mode)
    results = []
    for name, spec in cfg.cohort_specs():
        spec = _resolve_user_spec(spec, cfg)
        um = build_user_model(spec, attribute)
        strategy = build_seed_strategy(spec.get("seed", {}))
        n = default_n_users(cfg, d, spec.get("seed", {}))
        prov = {"model": model.fingerprint()[:16], "cohort": name, "user_model": um.describe()}
        batch = simulate_batch(model, um, strategy, d, n, cfg.T, cfg.k, cfg.master_seed,
                               threads=cfg.threads, provenance=prov)
        reports = [trajectory_report(t, attribute) for t in batch.completed]
        meta = {"cohort": name, "popularity_mode": attribute.mode, "user_model": um.describe(),
                "seed": spec.get("seed", {}), "failures": len(batch.failures)}
        summary = summarize_cohort(reports, cfg.split, meta) if reports else None
        results.append(CohortResult(name, spec, batch, reports, summary))
        _logger.info("cohort %s: %d trajectories, %d failures", name, len(reports), len(batch.failures))
    return results


def sweep_rows(results: list[CohortResult]) -> list[dict]:
    rows = []
    for r in results:
        row = {"cohort": r.name, "n": len(r.reports), "failures": len(r.batch.failures)}
        if r.summary is not None:
            for m in SWEEP_COLUMNS[3:-1]:
                row[m] = r.summary.metrics[m].mean
            row["percent_positive_slope"] = r.summary.percent_positive_slope
        rows.append(row)
    return rows


def write_outputs(cfg: RunConfig, results: list[CohortResult], attribute: PopularityAttribute) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    for r in results:
        cdir = out / r.name if len(results) > 1 else out
        cdir.mkdir(parents=True, exist_ok=True)
        with open(cdir / "trajectories.jsonl", "w") as fh:
            write_log(r.batch.completed, attribute, fh)
        if r.batch.failures:
            with open(cdir / "failures.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["traj_id", "error"])
                w.writerows(sorted(r.batch.failures.items()))
        if r.summary is None:
            continue
        (cdir / "trajectories.csv").write_bytes(emit_report(r.summary, r.reports, "trajectories-csv"))
        (cdir / "series.csv").write_bytes(emit_report(r.summary, r.reports, "series-csv"))
        (cdir / "summary.json").write_bytes(emit_report(r.summary, r.reports, "json"))
        for group, s in (r.summary.split or {}).items():
            (cdir / f"series_{group}.csv").write_text(series_csv(s))
        if cfg.plots:
            figs = cdir / "figures"
            ylabel = f"popularity ({attribute.mode})"
            plots.plot_average_trajectory(r.summary, figs / "average_trajectory.png", ylabel)
            plots.plot_popularity_diff(r.reports, figs / "popularity_diff.png")
            plots.plot_slopes(r.reports, figs / "slopes.png")
    rows = sweep_rows(results)
    if len(results) > 1:
        with open(out / "sweep.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, SWEEP_COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        if cfg.plots and all(r.summary is not None for r in results):
            plots.plot_sweep(rows, out / "sweep.png")
    return out
