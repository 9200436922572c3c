"""Closed-loop simulation of a frozen recommender against a test user.

Each step asks the recommender for a slate of unseen items given the whole
history so far, lets the user model pick and rate one item, and appends the
result. Model parameters are never touched; only the history grows.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import IO, Iterable, Protocol, Sequence

import numpy as np

from .dataset import Dataset, PopularityAttribute
from .ranking import top_k
from .users import SeedItem, SeedStrategy, UserModel, make_seed

_logger = logging.getLogger(__name__)

LOG_SCHEMA = "trajsim.trajectory-log/1"


class Recommender(Protocol):
    items: np.ndarray

    def user_scores(self, history: Sequence["InteractionStep"]) -> np.ndarray: ...

    def fingerprint(self) -> str: ...


@dataclass(frozen=True)
class InteractionStep:
    t: int
    slate: tuple[int, ...] | None  # None for seed steps that were not recommended
    choice: int
    rating: float
    from_feedback: bool = True


@dataclass
class Trajectory:
    seed: list[InteractionStep]
    steps: list[InteractionStep]
    rng_seed: list[int]
    provenance: dict = field(default_factory=dict)

    @property
    def choices(self) -> list[int]:
        return [s.choice for s in self.seed] + [s.choice for s in self.steps]

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (self.seed, self.steps, list(self.rng_seed), self.provenance) == \
            (other.seed, other.steps, list(other.rng_seed), other.provenance)


class SimulationError(RuntimeError):
    def __init__(self, msg: str, step: int, partial: Trajectory):
        super().__init__(msg)
        self.step = step
        self.partial = partial


class CandidateExhaustedError(SimulationError):
    pass


def trajectory_stream(master_seed: int, index: int) -> np.random.SeedSequence:
    """Independent RNG stream for trajectory ``index`` of a batch."""
    return np.random.SeedSequence([int(master_seed), int(index)])


def make_rng(seed) -> tuple[np.random.Generator, list[int]]:
    """Counter-based generator plus a serializable record of its seed."""
    if isinstance(seed, np.random.Generator):
        return seed, []
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
    else:
        ss = np.random.SeedSequence(int(seed))
    entropy = ss.entropy if isinstance(ss.entropy, int) else list(ss.entropy)
    record = ([entropy] if isinstance(entropy, int) else list(entropy)) + list(ss.spawn_key)
    return np.random.Generator(np.random.Philox(ss)), [int(x) for x in record]


def seed_steps(seed: Iterable[SeedItem | InteractionStep]) -> list[InteractionStep]:
    out = list(seed)
    n = len(out)
    steps = []
    for j, s in enumerate(out):
        if isinstance(s, InteractionStep):
            steps.append(s)
        else:
            steps.append(InteractionStep(j - n + 1, None, int(s.item), float(s.rating), s.from_feedback))
    return steps


def simulate(recommender: Recommender, user_model: UserModel, seed, T: int, k: int,
             rng_seed, provenance: dict | None = None) -> Trajectory:
    """Run ``T`` recommend/choose/rate steps after the seed history.

    ``rng_seed`` may be an int, a ``SeedSequence`` or a ``Generator`` that is
    already positioned (for instance after drawing a random seed item).
    When fewer than ``k`` unseen items remain the slate shrinks; when none
    remain a ``CandidateExhaustedError`` carrying the completed prefix is raised.
    """
    if T < 1 or k < 1:
        raise ValueError("T and k must be >= 1")
    rng, record = make_rng(rng_seed)
    history = seed_steps(seed)
    items = recommender.items
    seen = np.zeros(len(items), dtype=bool)
    seed_pos = np.searchsorted(items, [s.choice for s in history])
    if np.any(items[np.clip(seed_pos, 0, len(items) - 1)] != [s.choice for s in history]):
        raise KeyError("seed contains items unknown to the recommender")
    seen[seed_pos] = True
    traj = Trajectory(history, [], record, dict(provenance or {}))

    for t in range(1, T + 1):
        remaining = len(items) - int(seen.sum())
        if remaining == 0:
            raise CandidateExhaustedError(f"no unseen items left at step {t}", t, traj)
        try:
            scores = recommender.user_scores(traj.seed + traj.steps)
            slate = tuple(items[top_k(scores, min(k, remaining), seen)].tolist())
            choice, rating = user_model.act(slate, rng)
        except Exception as exc:
            raise SimulationError(f"step {t}: {exc}", t, traj) from exc
        traj.steps.append(InteractionStep(t, slate, int(choice), float(rating), True))
        seen[np.searchsorted(items, choice)] = True
    return traj


@dataclass
class BatchResult:
    trajectories: list[Trajectory | None]
    failures: dict[int, str]

    @property
    def completed(self) -> list[Trajectory]:
        return [t for t in self.trajectories if t is not None]


def batch_seed_users(d: Dataset, strategy: SeedStrategy, n_users: int, master_seed: int) -> list[int | None]:
    """User ids backing each trajectory of a real-history batch.

    All users in id order when ``n_users`` covers the dataset, otherwise a
    sorted subsample drawn from ``master_seed``.
    """
    if strategy.variant != "real_history":
        return [None] * n_users
    if strategy.user_id is not None:
        return [strategy.user_id] * n_users
    if n_users > len(d.users):
        raise ValueError(f"asked for {n_users} real-history users but dataset has {len(d.users)}")
    if n_users == len(d.users):
        return d.users.tolist()
    rng = np.random.default_rng(np.random.SeedSequence([int(master_seed), 2**31 - 1]))
    return np.sort(rng.choice(d.users, n_users, replace=False)).tolist()


def simulate_batch(recommender: Recommender, user_model: UserModel, strategy: SeedStrategy,
                   d: Dataset, n_users: int, T: int, k: int, master_seed: int,
                   threads: int = 1, provenance: dict | None = None) -> BatchResult:
    """Independent trajectories; trajectory i draws from ``trajectory_stream(master_seed, i)``."""
    if n_users < 1:
        raise ValueError("n_users must be >= 1")
    users = batch_seed_users(d, strategy, n_users, master_seed)

    def run(i: int):
        rng, record = make_rng(trajectory_stream(master_seed, i))
        prov = dict(provenance or {}, trajectory=i)
        if users[i] is not None:
            prov["seed_user"] = users[i]
        try:
            seed = make_seed(strategy, d, rng, users[i])
            traj = simulate(recommender, user_model, seed, T, k, rng, prov)
        except Exception as exc:  # collected, not fatal
            return i, None, f"{type(exc).__name__}: {exc}"
        traj.rng_seed = record
        return i, traj, None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(n_users)))
    else:
        results = [run(i) for i in range(n_users)]
    out = BatchResult([None] * n_users, {})
    for i, traj, err in results:
        out.trajectories[i] = traj
        if err is not None:
            out.failures[i] = err
            _logger.warning("trajectory %d failed: %s", i, err)
    return out


def write_log(trajectories: Iterable[Trajectory], attribute: PopularityAttribute, fh: IO[str]) -> int:
    """One JSON record per step; seed steps carry ``t <= 0`` and a null slate."""
    n = 0
    for traj in trajectories:
        tid = traj.provenance.get("trajectory", n)
        for s in traj.seed + traj.steps:
            rec = {"schema": LOG_SCHEMA, "traj_id": tid, "t": s.t,
                   "slate": list(s.slate) if s.slate is not None else None,
                   "choice": s.choice, "rating": s.rating, "from_feedback": s.from_feedback,
                   "rho": float(attribute[s.choice])}
            fh.write(json.dumps(rec) + "\n")
        n += 1
    return n


def read_log(fh: IO[str]) -> list[Trajectory]:
    by_id: dict[int, Trajectory] = {}
    for line in fh:
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec.get("schema") != LOG_SCHEMA:
            raise ValueError(f"unsupported trajectory log schema {rec.get('schema')!r}")
        tid = rec["traj_id"]
        traj = by_id.setdefault(tid, Trajectory([], [], [], {"trajectory": tid}))
        slate = tuple(rec["slate"]) if rec["slate"] is not None else None
        step = InteractionStep(rec["t"], slate, rec["choice"], rec["rating"], rec["from_feedback"])
        (traj.steps if rec["t"] >= 1 else traj.seed).append(step)
    return [by_id[k] for k in sorted(by_id)]


def trajectory_to_dict(traj: Trajectory) -> dict:
    return asdict(traj)
