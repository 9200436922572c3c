"""Toy recurrent recommender.

The user vector is a linear readout of a tanh recurrence over the embeddings
of the items consumed so far::

    h_t = tanh(W_xh q_{c_t} + W_hh h_{t-1} + b),   h_0 = 0
    p   = W_out h_T

and an item is scored by ``p . q_v``. Training fits mean-centered ratings of
the next item with squared error plus an L2 penalty on every parameter,
using mini-batch gradient descent and hand-written backpropagation through
time.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .ranking import ids_to_mask, top_k
from .snapshot import fingerprint, freeze, load_snapshot, save_snapshot

_logger = logging.getLogger(__name__)

PARAMS = ("Q", "W_xh", "W_hh", "b", "W_out")


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True, eq=False)
class RnnModel:
    items: np.ndarray
    Q: np.ndarray  # (n_items, d)
    W_xh: np.ndarray  # (h, d)
    W_hh: np.ndarray  # (h, h)
    b: np.ndarray  # (h,)
    W_out: np.ndarray  # (d, h)
    global_mean: float = 0.0
    max_len: int = 50
    loss_history: tuple[float, ...] = field(default=())

    def __post_init__(self):
        n, d = self.Q.shape
        h = self.W_hh.shape[0]
        if d < 1 or h < 1:
            raise ValueError("hidden and embedding sizes must be >= 1")
        expected = {"W_xh": (h, d), "W_hh": (h, h), "b": (h,), "W_out": (d, h)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if len(self.items) != n:
            raise ValueError("Q must have one row per item")
        for name in PARAMS:
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, freeze(arr))
        object.__setattr__(self, "items", freeze(np.asarray(self.items, dtype=np.int64)))

    @property
    def dim(self) -> int:
        return self.Q.shape[1]

    @property
    def hidden(self) -> int:
        return self.W_hh.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAMS}

    def with_params(self, params: dict[str, np.ndarray], **kw) -> "RnnModel":
        return replace(self, **params, **kw)

    def item_rows(self, item_ids) -> np.ndarray:
        ids = np.asarray(item_ids, dtype=np.int64)
        pos = np.clip(np.searchsorted(self.items, ids), 0, len(self.items) - 1)
        bad = self.items[pos] != ids
        if np.any(bad):
            raise KeyError(f"unknown item id {int(np.atleast_1d(ids)[np.argmax(np.atleast_1d(bad))])}")
        return pos

    def user_scores(self, history: Sequence) -> np.ndarray:
        # choices only; the recurrence never sees ratings
        seq = [s.choice for s in history][-self.max_len:]
        return self.Q @ rnn_forward(self, seq)

    def fingerprint(self) -> str:
        return fingerprint(self._meta(), {"items": self.items, **self.params()})

    def _meta(self) -> dict:
        return {"global_mean": self.global_mean, "max_len": self.max_len,
                "loss_history": list(self.loss_history)}

    def save(self, path):
        return save_snapshot(path, "rnn", self._meta(), {"items": self.items, **self.params()})

    @classmethod
    def load(cls, path) -> "RnnModel":
        _, meta, arrays = load_snapshot(path, "rnn")
        return cls(arrays["items"], *(arrays[k] for k in PARAMS),
                   global_mean=float(meta["global_mean"]), max_len=int(meta["max_len"]),
                   loss_history=tuple(meta.get("loss_history", ())))


def init_rnn(items: np.ndarray, hidden: int = 32, dim: int = 32, rng_seed: int = 0,
             global_mean: float = 0.0, max_len: int = 50) -> RnnModel:
    rng = np.random.default_rng(rng_seed)
    return RnnModel(
        np.asarray(items, dtype=np.int64),
        Q=rng.normal(0.0, 1.0 / np.sqrt(dim), size=(len(items), dim)),
        W_xh=rng.normal(0.0, 1.0 / np.sqrt(dim), size=(hidden, dim)),
        W_hh=rng.normal(0.0, 0.5 / np.sqrt(hidden), size=(hidden, hidden)),
        b=np.zeros(hidden),
        W_out=rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(dim, hidden)),
        global_mean=global_mean, max_len=max_len,
    )


def _hidden_states(params, x):
    """Hidden states (B, L, h) for padded item-row sequences ``x`` (B, L)."""
    Q, W_xh, W_hh, b = params["Q"], params["W_xh"], params["W_hh"], params["b"]
    B, L = x.shape
    hs = np.zeros((B, L, W_hh.shape[0]))
    h = np.zeros((B, W_hh.shape[0]))
    for t in range(L):
        h = np.tanh(Q[x[:, t]] @ W_xh.T + h @ W_hh.T + b)
        hs[:, t] = h
    return hs


def rnn_forward_batch(m: RnnModel, sequences: Sequence[Sequence[int]]) -> np.ndarray:
    """User vectors for several item-id sequences; shape (B, d).

    Rows are computed one sequence at a time so a row never depends on what
    else is in the batch.
    """
    return np.stack([rnn_forward(m, s) for s in sequences])


def rnn_forward(m: RnnModel, sequence: Sequence[int]) -> np.ndarray:
    """User vector ``W_out h_T`` after running the recurrence over ``sequence``."""
    if len(sequence) == 0:
        raise ValueError("sequence must be non-empty")
    rows = m.item_rows(list(sequence))
    Q, W_xh, W_hh, b = m.Q, m.W_xh, m.W_hh, m.b
    h = np.zeros(m.hidden)
    for r in rows:
        h = np.tanh(W_xh @ Q[r] + W_hh @ h + b)
    return m.W_out @ h


def recommend_rnn(m: RnnModel, trajectory: Sequence[int], excluded=(), k: int = 10) -> list[int]:
    mask = excluded if isinstance(excluded, np.ndarray) and excluded.dtype == bool \
        else ids_to_mask(m.items, excluded)
    return m.items[top_k(m.Q @ rnn_forward(m, trajectory), k, mask)].tolist()


def loss_and_grad(params: dict[str, np.ndarray], x: np.ndarray, y: np.ndarray,
                  mask: np.ndarray, lam: float) -> tuple[float, dict[str, np.ndarray]]:
    """Batch objective and its gradient.

    ``x`` (B, L) holds item rows, ``y`` (B, L) centered ratings, ``mask`` (B, L)
    marks real positions. The state after position t predicts the rating at
    t + 1, so each window of n items contributes n - 1 squared errors. The
    objective is their mean plus ``lam`` times the summed squared parameters.
    """
    Q, W_xh, W_hh, W_out = params["Q"], params["W_xh"], params["W_hh"], params["W_out"]
    B, L = x.shape
    hs = _hidden_states(params, x)
    z = hs[:, :-1] @ W_out.T  # (B, L-1, d)
    q_next = Q[x[:, 1:]]
    pred = np.einsum("bld,bld->bl", z, q_next)
    target_mask = mask[:, 1:]
    n = max(int(target_mask.sum()), 1)
    err = np.where(target_mask, pred - y[:, 1:], 0.0)
    data_loss = float(np.sum(err * err)) / n
    reg = sum(float(np.sum(params[k] ** 2)) for k in PARAMS)
    loss = data_loss + lam * reg

    g = {k: 2.0 * lam * params[k] for k in PARAMS}
    e = 2.0 * err / n  # dloss/dpred
    dz = e[..., None] * q_next  # (B, L-1, d)
    np.add.at(g["Q"], x[:, 1:], e[..., None] * z)
    g["W_out"] += np.einsum("bld,blh->dh", dz, hs[:, :-1])

    dh_next = np.zeros((B, W_hh.shape[0]))
    for t in range(L - 1, -1, -1):
        dh = dh_next
        if t < L - 1:
            dh = dh + dz[:, t] @ W_out
        h_t = hs[:, t]
        h_prev = hs[:, t - 1] if t > 0 else np.zeros_like(h_t)
        da = dh * (1.0 - h_t * h_t)
        g["W_xh"] += da.T @ Q[x[:, t]]
        g["W_hh"] += da.T @ h_prev
        g["b"] += da.sum(axis=0)
        np.add.at(g["Q"], x[:, t], da @ W_xh)
        dh_next = da @ W_hh
    return loss, g


def _windows(d: Dataset, max_len: int):
    """Per-user timestamp-ordered windows of at most ``max_len`` items (length >= 2)."""
    rows = d.item_index(d.item_ids)
    resid = d.ratings - d.global_mean
    starts, ends = d.user_slices()
    out = []
    for lo, hi in zip(starts, ends):
        for w in range(lo, hi, max_len):
            w_hi = min(w + max_len, hi)
            if w_hi - w >= 2:
                out.append((rows[w:w_hi], resid[w:w_hi]))
    return out


def _pack(windows):
    L = max(len(w[0]) for w in windows)
    x = np.zeros((len(windows), L), dtype=np.int64)
    y = np.zeros((len(windows), L))
    mask = np.zeros((len(windows), L), dtype=bool)
    for i, (r, v) in enumerate(windows):
        x[i, :len(r)] = r
        y[i, :len(r)] = v
        mask[i, :len(r)] = True
    return x, y, mask


def train_rnn(d: Dataset, hidden: int = 32, dim: int = 32, lam: float = 1e-5,
              epochs: int = 10, lr: float = 0.01, rng_seed: int = 0,
              batch_size: int = 64, max_len: int = 50, momentum: float = 0.9,
              clip_norm: float | None = 5.0) -> RnnModel:
    """Fit the recurrent recommender by mini-batch gradient descent with momentum.

    Sequences longer than ``max_len`` are cut into consecutive windows, each
    started from a zero state. ``loss_history`` holds the mean batch loss of
    every epoch.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    windows = _windows(d, max_len)
    if not windows:
        raise ValueError("no user has a sequence of length >= 2")
    model = init_rnn(d.items, hidden, dim, rng_seed, d.global_mean, max_len)
    params = {k: np.array(v) for k, v in model.params().items()}
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    rng = np.random.default_rng(rng_seed + 1)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(windows))
        total, batches = 0.0, 0
        for lo in range(0, len(order), batch_size):
            x, y, mask = _pack([windows[i] for i in order[lo:lo + batch_size]])
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grad = loss_and_grad(params, x, y, mask, lam)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite in epoch {epoch + 1}; try a smaller lr (got {lr})")
            if clip_norm is not None:
                norm = np.sqrt(sum(float(np.sum(g * g)) for g in grad.values()))
                if norm > clip_norm:
                    grad = {k: g * (clip_norm / norm) for k, g in grad.items()}
            for k in PARAMS:
                velocity[k] = momentum * velocity[k] - lr * grad[k]
                params[k] += velocity[k]
            total += loss
            batches += 1
        history.append(total / batches)
        if not all(np.all(np.isfinite(p)) for p in params.values()):
            raise TrainingDivergedError(f"parameters diverged in epoch {epoch + 1}; try a smaller lr")
        _logger.info("rnn epoch %d loss %.6f", epoch + 1, history[-1])
    return model.with_params(params, loss_history=tuple(history))


def training_rmse(m: RnnModel, d: Dataset) -> float:
    """Root mean squared next-item rating error over all training windows."""
    x, y, mask = _pack(_windows(d, m.max_len))
    hs = _hidden_states(m.params(), x)
    pred = np.einsum("bld,bld->bl", hs[:, :-1] @ m.W_out.T, m.Q[x[:, 1:]])
    err = (pred - y[:, 1:])[mask[:, 1:]]
    return float(np.sqrt(np.mean(err * err)))
