"""Per-trajectory popularity statistics and cohort summaries."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import PopularityAttribute
from .engine import Trajectory

METRICS = ("seed_pop", "first_step_pop", "mean_pop", "last_step_pop", "first_step_increase", "slope")
TRAJECTORY_COLUMNS = ("traj_id",) + METRICS
SERIES_COLUMNS = ("step", "mean_popularity", "std_popularity")


def ols_line(y) -> tuple[float, float]:
    """Slope and intercept of y against x = 1..len(y)."""
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if n < 2:
        raise ValueError("need at least two points for a slope")
    x = np.arange(1, n + 1, dtype=np.float64)
    xc = x - x.mean()
    slope = float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))
    return slope, float(y.mean() - slope * x.mean())


@dataclass
class TrajectoryReport:
    traj_id: int
    series: list[float]
    seed_pop: float
    first_step_pop: float
    mean_pop: float
    last_step_pop: float
    first_step_increase: float
    slope: float | None  # None when fewer than two simulated steps
    intercept: float | None


def trajectory_report(traj: Trajectory, attribute: PopularityAttribute,
                      traj_id: int | None = None) -> TrajectoryReport:
    if not traj.seed:
        raise ValueError("trajectory has no seed history")
    if not traj.steps:
        raise ValueError("trajectory has no simulated steps")
    seed_vals = attribute.lookup([s.choice for s in traj.seed])
    series = attribute.lookup([s.choice for s in traj.steps]).astype(float)
    seed_pop = float(np.mean(seed_vals))
    slope = intercept = None
    if len(series) >= 2:
        slope, intercept = ols_line(series)
    tid = traj.provenance.get("trajectory", 0) if traj_id is None else traj_id
    return TrajectoryReport(int(tid), series.tolist(), seed_pop, float(series[0]),
                            float(np.mean(series)), float(series[-1]),
                            float(series[0]) - seed_pop, slope, intercept)


@dataclass
class Quantiles:
    mean: float
    p5: float
    p95: float


@dataclass
class CohortSummary:
    n: int
    metrics: dict[str, Quantiles]
    percent_positive_slope: float
    percent_nonpositive_slope: float
    series_mean: list[float]
    series_std: list[float]
    split: dict[str, "CohortSummary"] | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "CohortSummary":
        split = obj.get("split")
        return cls(obj["n"], {k: Quantiles(**v) for k, v in obj["metrics"].items()},
                   obj["percent_positive_slope"], obj["percent_nonpositive_slope"],
                   list(obj["series_mean"]), list(obj["series_std"]),
                   {k: cls.from_dict(v) for k, v in split.items()} if split is not None else None,
                   dict(obj.get("metadata", {})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CohortSummary":
        return cls.from_dict(json.loads(text))


def _quantiles(values) -> Quantiles:
    # sorted first so the result does not depend on report order
    v = np.sort(np.asarray(values, dtype=np.float64))
    if len(v) == 0:
        return Quantiles(math.nan, math.nan, math.nan)
    return Quantiles(float(np.mean(v)), float(np.percentile(v, 5, method="linear")),
                     float(np.percentile(v, 95, method="linear")))


def _summary(reports: list[TrajectoryReport], metadata: dict) -> CohortSummary:
    metrics = {}
    for name in METRICS:
        vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        metrics[name] = _quantiles(vals)
    slopes = [r.slope for r in reports if r.slope is not None]
    if slopes:
        n_pos = sum(1 for s in slopes if s > 0)
        pos = 100.0 * n_pos / len(slopes)
        nonpos = 100.0 - pos
    else:
        pos = nonpos = math.nan
    T = max(len(r.series) for r in reports)
    means, stds = [], []
    for t in range(T):
        col = np.sort([r.series[t] for r in reports if len(r.series) > t])
        means.append(float(np.mean(col)))
        stds.append(float(np.std(col)))
    return CohortSummary(len(reports), metrics, pos, nonpos, means, stds, None, dict(metadata))


def seed_quartile_labels(reports: list[TrajectoryReport]) -> list[str]:
    seeds = np.array([r.seed_pop for r in reports])
    bounds = np.percentile(seeds, [25, 50, 75], method="linear")
    idx = np.searchsorted(bounds, seeds, side="left")
    names = ("q1_0-25", "q2_25-50", "q3_50-75", "q4_75-100")
    return [names[i] for i in idx]


def summarize_cohort(reports, split: str | None = None, metadata: dict | None = None) -> CohortSummary:
    """Mean / 5th / 95th percentile of each metric plus the per-step mean curve.

    With ``split="seed_quartile"`` the cohort is also summarized per quartile
    of seed popularity (boundaries at the cohort's 25/50/75th percentiles,
    a value on a boundary goes to the lower group).
    """
    reports = list(reports)
    if not reports:
        raise ValueError("cannot summarize an empty cohort")
    meta = dict(metadata or {})
    meta.setdefault("first_step_baseline", "mean seed popularity")
    meta.setdefault("percentile_method", "linear")
    out = _summary(reports, meta)
    if split == "seed_quartile":
        labels = seed_quartile_labels(reports)
        groups: dict[str, list] = {}
        for lab, r in sorted(zip(labels, reports), key=lambda p: (p[0], p[1].traj_id)):
            groups.setdefault(lab, []).append(r)
        out.split = {lab: _summary(g, {"split": "seed_quartile", "group": lab})
                     for lab, g in groups.items()}
    elif split is not None:
        raise ValueError(f"unknown split {split!r}")
    return out


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def trajectories_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJECTORY_COLUMNS)
    for r in reports:
        w.writerow([r.traj_id] + [_fmt(getattr(r, m)) for m in METRICS])
    return buf.getvalue()


def series_csv(summary: CohortSummary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SERIES_COLUMNS)
    for t, (m, s) in enumerate(zip(summary.series_mean, summary.series_std), 1):
        w.writerow([t, repr(m), repr(s)])
    return buf.getvalue()


def emit_report(summary: CohortSummary, reports, fmt: str = "csv") -> bytes:
    """Serialize a cohort.

    ``csv``: the per-trajectory table, a blank line, then the per-step table.
    ``trajectories-csv`` / ``series-csv``: one table each. ``json``: the summary.
    """
    if fmt == "csv":
        text = trajectories_csv(reports) + "\n" + series_csv(summary)
    elif fmt == "trajectories-csv":
        text = trajectories_csv(reports)
    elif fmt == "series-csv":
        text = series_csv(summary)
    elif fmt == "json":
        text = summary.to_json()
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return text.encode("utf-8")
