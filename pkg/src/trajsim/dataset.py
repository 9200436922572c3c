"""Interaction logs, item popularity, and dataset summaries.

Ratings files come in the MovieLens ``UserID::MovieID::Rating::Timestamp``
layout or a headed CSV variant (``user_id,item_id,rating,timestamp``).
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Literal

import numpy as np
from scipy import stats

_logger = logging.getLogger(__name__)

PopularityMode = Literal["raw_count", "percentile"]
CSV_HEADER = ("user_id", "item_id", "rating", "timestamp")


class DatasetError(ValueError):
    pass


class ParseError(DatasetError):
    def __init__(self, lineno: int, line: str, reason: str):
        super().__init__(f"line {lineno}: {reason}: {line!r}")
        self.lineno = lineno


class EmptyDatasetError(DatasetError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """Deduplicated explicit-feedback interactions.

    Interactions are stored column-wise and sorted by (user, timestamp, item).
    ``items`` and ``users`` are the sorted unique ids; ``counts[j]`` is the
    number of interactions with ``items[j]``.
    """

    user_ids: np.ndarray
    item_ids: np.ndarray
    ratings: np.ndarray
    timestamps: np.ndarray
    users: np.ndarray = field(init=False)
    items: np.ndarray = field(init=False)
    counts: np.ndarray = field(init=False)

    def __post_init__(self):
        u = np.asarray(self.user_ids, dtype=np.int64)
        i = np.asarray(self.item_ids, dtype=np.int64)
        r = np.asarray(self.ratings, dtype=np.float64)
        ts = np.asarray(self.timestamps, dtype=np.int64)
        if not (len(u) == len(i) == len(r) == len(ts)):
            raise DatasetError("interaction columns have different lengths")
        if len(u) == 0:
            raise EmptyDatasetError("dataset has no interactions")
        order = np.lexsort((i, ts, u))
        u, i, r, ts = u[order], i[order], r[order], ts[order]
        key = u * (int(i.max()) - int(i.min()) + 1) + (i - int(i.min()))
        if len(np.unique(key)) != len(u):
            raise DatasetError("duplicate (user, item) pairs; use from_records to deduplicate")
        items, counts = np.unique(i, return_counts=True)
        for name, arr in (("user_ids", u), ("item_ids", i), ("ratings", r),
                          ("timestamps", ts), ("users", np.unique(u)),
                          ("items", items), ("counts", counts)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_records(cls, records: Iterable[tuple]) -> "Dataset":
        """Build from (user, item, rating, timestamp) tuples, keeping the latest
        timestamp per (user, item) pair (later records win exact ties)."""
        latest: dict[tuple[int, int], tuple[float, int]] = {}
        for u, i, r, ts in records:
            key = (int(u), int(i))
            prev = latest.get(key)
            if prev is None or int(ts) >= prev[1]:
                latest[key] = (float(r), int(ts))
        if not latest:
            raise EmptyDatasetError("dataset has no interactions")
        keys = np.array(list(latest.keys()), dtype=np.int64)
        vals = list(latest.values())
        return cls(keys[:, 0], keys[:, 1],
                   np.array([v[0] for v in vals]), np.array([v[1] for v in vals], dtype=np.int64))

    def __len__(self) -> int:
        return len(self.user_ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return all(np.array_equal(getattr(self, n), getattr(other, n))
                   for n in ("user_ids", "item_ids", "ratings", "timestamps"))

    @property
    def popularity(self) -> dict[int, int]:
        return dict(zip(self.items.tolist(), self.counts.tolist()))

    @property
    def global_mean(self) -> float:
        return float(np.mean(self.ratings))

    def item_index(self, item_ids) -> np.ndarray:
        """Map item ids to rows of ``items``; raises KeyError on unknown ids."""
        ids = np.asarray(item_ids, dtype=np.int64)
        pos = np.searchsorted(self.items, ids)
        pos = np.minimum(pos, len(self.items) - 1)
        bad = self.items[pos] != ids
        if np.any(bad):
            raise KeyError(f"unknown item id {int(np.atleast_1d(ids)[np.argmax(np.atleast_1d(bad))])}")
        return pos

    def user_history(self, user: int) -> list[tuple[int, float, int]]:
        """Timestamp-ordered (item, rating, timestamp) for one user."""
        lo, hi = np.searchsorted(self.user_ids, [user, user + 1])
        if lo == hi:
            raise KeyError(f"unknown user id {user}")
        return list(zip(self.item_ids[lo:hi].tolist(), self.ratings[lo:hi].tolist(),
                        self.timestamps[lo:hi].tolist()))

    def user_slices(self) -> tuple[np.ndarray, np.ndarray]:
        """Start offsets per user (aligned with ``users``) plus the end sentinel."""
        starts = np.searchsorted(self.user_ids, self.users)
        return starts, np.append(starts[1:], len(self.user_ids))

    def subsample_users(self, n: int, rng_seed: int) -> "Dataset":
        if n >= len(self.users):
            return self
        keep = np.random.default_rng(rng_seed).choice(self.users, size=n, replace=False)
        mask = np.isin(self.user_ids, keep)
        return Dataset(self.user_ids[mask], self.item_ids[mask],
                       self.ratings[mask], self.timestamps[mask])


def _format_rating(r: float) -> str:
    return str(int(r)) if float(r).is_integer() else repr(float(r))


def parse_movielens(source: BinaryIO | bytes | str | Path) -> Dataset:
    """Parse a ``ratings.dat`` stream (or the CSV variant, detected by its header)."""
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            return parse_movielens(fh)
    raw = source if isinstance(source, bytes) else source.read()
    text = raw.decode("latin-1")
    lines = text.splitlines()
    first = next((ln for ln in lines if ln.strip()), "")
    if first.replace(" ", "").lower().startswith("user_id,"):
        return _parse_csv(lines)
    records = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        parts = line.strip().split("::")
        if len(parts) != 4:
            raise ParseError(lineno, line, "expected 4 '::'-separated fields")
        records.append(_coerce(lineno, line, parts))
    return Dataset.from_records(records)


def _parse_csv(lines: list[str]) -> Dataset:
    reader = csv.reader(lines)
    header = [h.strip().lower() for h in next(reader)]
    if tuple(header) != CSV_HEADER:
        raise ParseError(1, ",".join(header), f"expected header {','.join(CSV_HEADER)}")
    records = []
    for lineno, row in enumerate(reader, 2):
        if not row or not "".join(row).strip():
            continue
        if len(row) != 4:
            raise ParseError(lineno, ",".join(row), "expected 4 comma-separated fields")
        records.append(_coerce(lineno, ",".join(row), row))
    return Dataset.from_records(records)


def _coerce(lineno, line, parts):
    try:
        u, i, r, ts = int(parts[0]), int(parts[1]), float(parts[2]), int(float(parts[3]))
    except ValueError as exc:
        raise ParseError(lineno, line, "non-numeric field") from exc
    if not np.isfinite(r):
        raise ParseError(lineno, line, "rating is not finite")
    return u, i, r, ts


def serialize_movielens(d: Dataset, fmt: Literal["dat", "csv"] = "dat") -> bytes:
    buf = io.StringIO()
    rows = zip(d.user_ids.tolist(), d.item_ids.tolist(), d.ratings.tolist(), d.timestamps.tolist())
    if fmt == "csv":
        buf.write(",".join(CSV_HEADER) + "\n")
        for u, i, r, ts in rows:
            buf.write(f"{u},{i},{_format_rating(r)},{ts}\n")
    elif fmt == "dat":
        for u, i, r, ts in rows:
            buf.write(f"{u}::{i}::{_format_rating(r)}::{ts}\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return buf.getvalue().encode("latin-1")


@dataclass(frozen=True, eq=False)
class PopularityAttribute:
    """Per-item attribute values aligned with ``items`` (sorted ids)."""

    mode: PopularityMode
    items: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.items.setflags(write=False)
        self.values.setflags(write=False)

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.items.tolist(), self.values.tolist()))

    def lookup(self, item_ids) -> np.ndarray:
        ids = np.asarray(item_ids, dtype=np.int64)
        pos = np.clip(np.searchsorted(self.items, ids), 0, len(self.items) - 1)
        if np.any(self.items[pos] != ids):
            raise KeyError("item without an attribute value")
        return self.values[pos]

    def __getitem__(self, item: int) -> float:
        return float(self.lookup([item])[0])

    def normalized(self) -> np.ndarray:
        """Values rescaled to [0, 1]: percentile / 100, or count / max count."""
        if self.mode == "percentile":
            return self.values / 100.0
        top = self.values.max()
        return self.values / top if top > 0 else np.zeros_like(self.values)


def percentile_ranks(counts: np.ndarray) -> np.ndarray:
    """100 * fraction of entries with a strictly smaller count (ties share a value)."""
    counts = np.asarray(counts)
    below = np.searchsorted(np.sort(counts), counts, side="left")
    return 100.0 * below / len(counts)


def compute_popularity(d: Dataset, mode: PopularityMode = "raw_count") -> PopularityAttribute:
    if mode == "raw_count":
        values = d.counts.astype(np.float64)
    elif mode == "percentile":
        values = percentile_ranks(d.counts)
    else:
        raise ValueError(f"unknown popularity mode {mode!r}")
    return PopularityAttribute(mode, d.items.copy(), values)


@dataclass
class DatasetStats:
    item_popularity: np.ndarray  # ratings per item
    history_length: np.ndarray  # ratings per user
    history_popularity: np.ndarray  # per-user mean popularity of rated items
    rating_popularity_corr: np.ndarray  # per-user Spearman rho, users with >= min_ratings
    mean_item_popularity: float

    def histograms(self, bins: int = 30) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        out = {}
        for name in ("item_popularity", "history_length", "history_popularity",
                     "rating_popularity_corr"):
            out[name] = np.histogram(getattr(self, name), bins=bins)
        return out

    def summary(self) -> dict:
        def describe(x):
            x = np.asarray(x, dtype=float)
            if len(x) == 0:
                return {"n": 0}
            return {"n": int(len(x)), "mean": float(np.mean(x)), "median": float(np.median(x)),
                    "min": float(np.min(x)), "max": float(np.max(x)),
                    "skew": float(stats.skew(x)) if len(x) > 2 else 0.0}
        return {
            "item_popularity": describe(self.item_popularity),
            "history_length": describe(self.history_length),
            "history_popularity": describe(self.history_popularity),
            "rating_popularity_corr": describe(self.rating_popularity_corr),
            "mean_item_popularity": self.mean_item_popularity,
        }


def dataset_stats(d: Dataset, min_ratings: int = 3) -> DatasetStats:
    pop = d.counts[d.item_index(d.item_ids)].astype(float)
    starts, ends = d.user_slices()
    lengths = ends - starts
    hist_pop = np.add.reduceat(pop, starts) / lengths
    corr = []
    for lo, hi in zip(starts, ends):
        if hi - lo < min_ratings:
            continue
        r, p = d.ratings[lo:hi], pop[lo:hi]
        # constant input has no defined rank correlation
        if np.ptp(r) == 0 or np.ptp(p) == 0:
            continue
        corr.append(stats.spearmanr(r, p).statistic)
    return DatasetStats(d.counts.astype(float), lengths.astype(float), hist_pop,
                        np.asarray(corr, dtype=float), float(np.mean(d.counts)))


def synthetic_movielens(
    n_users: int = 6040,
    n_items: int = 3706,
    mean_history: float = 165.0,
    min_history: int = 20,
    zipf_exponent: float = 1.0,
    rng_seed: int = 0,
) -> Dataset:
    """Generate a MovieLens-shaped dataset with power-law item popularity.

    Item exposure follows a Zipf law, history lengths a shifted Pareto law
    with at least ``min_history`` ratings. Ratings mix a popularity-correlated
    item quality term with a low-rank user/item taste term, rounded to 1..5.
    """
    rng = np.random.default_rng(rng_seed)
    weights = (np.arange(n_items) + 10.0) ** -zipf_exponent
    weights = rng.permutation(weights)
    log_w = np.log(weights)
    z = (log_w - log_w.mean()) / log_w.std()
    quality = 0.45 * z + 0.35 * rng.standard_normal(n_items)

    shape = 1.6
    scale = (mean_history - min_history) * (shape - 1)
    lengths = (min_history + scale * rng.pareto(shape, n_users)).astype(int)
    lengths = np.minimum(lengths, n_items // 2)

    dim = 6
    user_taste = rng.standard_normal((n_users, dim))
    item_taste = rng.standard_normal((n_items, dim))
    user_bias = 0.35 * rng.standard_normal(n_users)

    us, its, rs, tss = [], [], [], []
    for u in range(n_users):
        keys = log_w + rng.gumbel(size=n_items)
        chosen = np.argpartition(-keys, lengths[u])[: lengths[u]]
        affinity = item_taste[chosen] @ user_taste[u] / np.sqrt(dim)
        raw = 3.6 + user_bias[u] + quality[chosen] + 0.45 * affinity + 0.6 * rng.standard_normal(len(chosen))
        start = 956_700_000 + int(rng.integers(0, 50_000_000))
        ts = start + np.sort(rng.integers(0, 10_000_000, len(chosen)))
        us.append(np.full(len(chosen), u + 1))
        its.append(chosen + 1)
        rs.append(np.clip(np.rint(raw), 1, 5))
        tss.append(ts)
    return Dataset(np.concatenate(us), np.concatenate(its), np.concatenate(rs), np.concatenate(tss))
