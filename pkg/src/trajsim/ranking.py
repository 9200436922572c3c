"""Top-k selection over item scores with deterministic tie-breaking."""
from __future__ import annotations

import numpy as np


class CandidateShortfallError(ValueError):
    def __init__(self, available: int, k: int):
        super().__init__(f"need {k} candidates but only {available} remain (short by {k - available})")
        self.available = available
        self.k = k


def top_k(scores: np.ndarray, k: int, excluded: np.ndarray | None = None) -> np.ndarray:
    """Indices of the ``k`` highest scores, best first.

    ``scores`` is indexed by position in an ascending item-id table, so
    breaking ties by ascending index is the same as by ascending item id.
    ``excluded`` is a boolean mask of positions that may not be returned.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if excluded is None:
        cand = np.arange(len(scores))
    else:
        cand = np.flatnonzero(~excluded)
    if len(cand) < k:
        raise CandidateShortfallError(len(cand), k)
    s = scores[cand]
    if len(cand) > k:
        # kth largest value; everything strictly above it is in, ties at it fill by id
        kth = np.partition(s, len(s) - k)[len(s) - k]
        above = cand[s > kth]
        at = cand[s == kth][: k - len(above)]
        cand = np.concatenate([above, at])
        s = scores[cand]
    order = np.lexsort((cand, -s))
    return cand[order]


def ids_to_mask(items: np.ndarray, ids) -> np.ndarray:
    """Boolean mask over the sorted ``items`` table marking ``ids``."""
    mask = np.zeros(len(items), dtype=bool)
    ids = np.fromiter(ids, dtype=np.int64) if not isinstance(ids, np.ndarray) else ids.astype(np.int64)
    if len(ids):
        pos = np.clip(np.searchsorted(items, ids), 0, len(items) - 1)
        if np.any(items[pos] != ids):
            raise KeyError("excluded set contains unknown item ids")
        mask[pos] = True
    return mask
