"""Matrix factorization recommender: ALS training and least-squares fold-in.

Training minimizes, over mean-centered ratings,

    sum_(u,i) (p_u . q_i - (r_ui - mean))^2 + lam * (||P||_F^2 + ||Q||_F^2)

by alternating exact row solves. At simulation time the item table ``Q`` is
frozen and each user vector is recomputed from their accumulated history.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dataset import Dataset
from .ranking import ids_to_mask, top_k
from .snapshot import fingerprint, freeze, load_snapshot, save_snapshot

_logger = logging.getLogger(__name__)


class SingularSystemError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class MfModel:
    items: np.ndarray
    Q: np.ndarray
    lam: float
    global_mean: float
    P: np.ndarray | None = None
    users: np.ndarray | None = None
    objective_history: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.Q.ndim != 2 or self.Q.shape[0] != len(self.items):
            raise ValueError("Q must have one row per item")
        if self.Q.shape[1] < 1:
            raise ValueError("embedding dimension must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if not np.all(np.isfinite(self.Q)):
            raise ValueError("Q has non-finite entries")
        object.__setattr__(self, "items", freeze(np.asarray(self.items, dtype=np.int64)))
        object.__setattr__(self, "Q", freeze(self.Q))
        if self.P is not None:
            object.__setattr__(self, "P", freeze(self.P))
            object.__setattr__(self, "users", freeze(np.asarray(self.users, dtype=np.int64)))

    @property
    def dim(self) -> int:
        return self.Q.shape[1]

    def item_rows(self, item_ids) -> np.ndarray:
        ids = np.asarray(item_ids, dtype=np.int64)
        pos = np.clip(np.searchsorted(self.items, ids), 0, len(self.items) - 1)
        bad = self.items[pos] != ids
        if np.any(bad):
            raise KeyError(f"unknown item id {int(np.atleast_1d(ids)[np.argmax(np.atleast_1d(bad))])}")
        return pos

    # recommender interface used by the simulation engine

    def user_scores(self, history: Sequence) -> np.ndarray:
        """Scores for every item given (choice, rating, from_feedback) steps."""
        seen = [(s.choice, s.rating if s.from_feedback else s.rating - self.global_mean)
                for s in history]
        p = fold_in(self, seen, centered=True)
        return self.Q @ p

    def fingerprint(self) -> str:
        return fingerprint(self._meta(), self._arrays())

    def _meta(self) -> dict:
        return {"lam": self.lam, "global_mean": self.global_mean, "dim": self.dim,
                "objective_history": list(self.objective_history)}

    def _arrays(self) -> dict:
        arrays = {"items": self.items, "Q": self.Q}
        if self.P is not None:
            arrays.update(P=self.P, users=self.users)
        return arrays

    def save(self, path):
        return save_snapshot(path, "mf", self._meta(), self._arrays())

    @classmethod
    def load(cls, path) -> "MfModel":
        _, meta, arrays = load_snapshot(path, "mf")
        return cls(arrays["items"], arrays["Q"], float(meta["lam"]), float(meta["global_mean"]),
                   arrays.get("P"), arrays.get("users"), tuple(meta.get("objective_history", ())))


def _solve_row(M: np.ndarray, y: np.ndarray, lam: float, what: str) -> np.ndarray:
    d = M.shape[1]
    A = M.T @ M + lam * np.eye(d)
    b = M.T @ y
    try:
        L = np.linalg.cholesky(A)
        if lam > 0 or np.min(np.diag(L)) > 1e-10 * max(1.0, np.sqrt(np.max(np.diag(A)))):
            return np.linalg.solve(L.T, np.linalg.solve(L, b))
    except np.linalg.LinAlgError:
        pass
    # singular normal equations; only a zero right-hand side has a canonical answer
    if np.max(np.abs(b), initial=0.0) <= 1e-12:
        return np.zeros(d)
    raise SingularSystemError(f"singular normal equations for {what}; use lam > 0")


def mf_objective(P, Q, u_idx, i_idx, resid, lam) -> float:
    err = np.einsum("ij,ij->i", P[u_idx], Q[i_idx]) - resid
    return float(err @ err + lam * (np.sum(P * P) + np.sum(Q * Q)))


def train_mf(d: Dataset, dim: int = 32, lam: float = 0.1, epochs: int = 10,
             rng_seed: int = 0, keep_users: bool = True) -> MfModel:
    """Alternating least squares; each epoch solves all user rows then all item rows."""
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if lam < 0:
        raise ValueError("lam must be non-negative")
    rng = np.random.default_rng(rng_seed)
    mean = d.global_mean
    resid = d.ratings - mean
    u_idx = np.searchsorted(d.users, d.user_ids)
    i_idx = d.item_index(d.item_ids)
    n_u, n_i = len(d.users), len(d.items)

    Q = rng.uniform(-0.1, 0.1, size=(n_i, dim))
    P = np.zeros((n_u, dim))

    u_starts, u_ends = d.user_slices()
    by_item = np.argsort(i_idx, kind="stable")
    i_starts = np.searchsorted(i_idx[by_item], np.arange(n_i))
    i_ends = np.append(i_starts[1:], len(i_idx))

    history = []
    for epoch in range(epochs):
        for u in range(n_u):
            sl = slice(u_starts[u], u_ends[u])
            P[u] = _solve_row(Q[i_idx[sl]], resid[sl], lam, f"user {d.users[u]}")
        for j in range(n_i):
            rows = by_item[i_starts[j]:i_ends[j]]
            Q[j] = _solve_row(P[u_idx[rows]], resid[rows], lam, f"item {d.items[j]}")
        obj = mf_objective(P, Q, u_idx, i_idx, resid, lam)
        history.append(obj)
        _logger.info("als epoch %d objective %.6f", epoch + 1, obj)
    return MfModel(d.items.copy(), Q, float(lam), mean,
                   P if keep_users else None, d.users.copy() if keep_users else None,
                   tuple(history))


def fold_in(m: MfModel, seen: Iterable[tuple[int, float]], centered: bool = False) -> np.ndarray:
    """User vector minimizing squared error on ``seen`` plus ``lam * ||p||^2``.

    Ratings are centered on the training mean unless ``centered`` is set.
    With ``lam == 0`` and rank-deficient item rows the minimum-norm solution
    is returned.
    """
    seen = list(seen)
    if not seen:
        raise ValueError("fold-in needs at least one rated item")
    items = np.array([s[0] for s in seen], dtype=np.int64)
    y = np.array([s[1] for s in seen], dtype=np.float64)
    if not centered:
        y = y - m.global_mean
    M = m.Q[m.item_rows(items)]
    if m.lam > 0:
        A = M.T @ M + m.lam * np.eye(m.dim)
        return np.linalg.solve(A, M.T @ y)
    return np.linalg.lstsq(M, y, rcond=None)[0]


def recommend_mf(m: MfModel, p: np.ndarray, excluded=(), k: int = 10) -> list[int]:
    """Top-``k`` item ids by ``p . q`` outside ``excluded`` (ids or boolean mask)."""
    mask = excluded if isinstance(excluded, np.ndarray) and excluded.dtype == bool \
        else ids_to_mask(m.items, excluded)
    return m.items[top_k(m.Q @ np.asarray(p, dtype=float), k, mask)].tolist()


def predict_ratings(m: MfModel, user_ids, item_ids) -> np.ndarray:
    """Training-time predictions; needs the user table kept by ``train_mf``."""
    if m.P is None:
        raise ValueError("model was saved without user vectors")
    u = np.asarray(user_ids, dtype=np.int64)
    pos = np.clip(np.searchsorted(m.users, u), 0, len(m.users) - 1)
    if np.any(m.users[pos] != u):
        raise KeyError("unknown user id")
    return np.einsum("ij,ij->i", m.P[pos], m.Q[m.item_rows(item_ids)]) + m.global_mean


def select_lambda(d: Dataset, grid=(0.1, 1.0, 3.0, 10.0, 30.0), dim: int = 32, epochs: int = 6,
                  holdout: float = 0.1, rng_seed: int = 0) -> tuple[float, dict[float, float]]:
    """Pick ``lam`` by held-out RMSE on a random split of the interactions.

    Held-out pairs whose user or item has no training interaction are ignored.
    Returns the best value and the RMSE for every grid point.
    """
    rng = np.random.default_rng(rng_seed)
    test = rng.random(len(d)) < holdout
    train = Dataset(d.user_ids[~test], d.item_ids[~test], d.ratings[~test], d.timestamps[~test])
    tu, ti, tr = d.user_ids[test], d.item_ids[test], d.ratings[test]
    ok = np.isin(tu, train.users) & np.isin(ti, train.items)
    scores = {}
    for lam in grid:
        m = train_mf(train, dim, lam, epochs, rng_seed)
        err = predict_ratings(m, tu[ok], ti[ok]) - tr[ok]
        scores[float(lam)] = float(np.sqrt(np.mean(err * err)))
        _logger.info("lam %g held-out rmse %.4f", lam, scores[float(lam)])
    best = min(scores, key=scores.get)
    return best, scores
