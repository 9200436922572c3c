"""Test-user behavior: slate choice, explicit feedback, and trajectory seeds."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .dataset import Dataset, PopularityAttribute

ChoiceVariant = Literal["lazy", "uniform", "ranked", "alpha_preference"]
FeedbackVariant = Literal["positive", "beta_preference"]
SeedVariant = Literal["random_single", "real_history"]


@dataclass(frozen=True)
class ChoiceModel:
    variant: ChoiceVariant = "uniform"
    alpha: float = 0.0
    attribute: PopularityAttribute | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.variant not in ("lazy", "uniform", "ranked", "alpha_preference"):
            raise ValueError(f"unknown choice variant {self.variant!r}")
        if not np.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        if (self.variant == "alpha_preference") != (self.attribute is not None):
            raise ValueError("an attribute is required for alpha_preference and only for it")
        if self.attribute is not None:
            object.__setattr__(self, "_scaled", self.attribute.normalized())

    def probabilities(self, slate: Sequence[int]) -> np.ndarray:
        k = len(slate)
        if k == 0:
            raise ValueError("cannot choose from an empty slate")
        if self.variant == "lazy":
            p = np.zeros(k)
            p[0] = 1.0
            return p
        if self.variant == "uniform":
            return np.full(k, 1.0 / k)
        if self.variant == "ranked":
            w = 1.0 / np.log1p(np.arange(1, k + 1))
            return w / w.sum()
        return softmax(self.alpha * self.scaled(slate))

    def scaled(self, slate: Sequence[int]) -> np.ndarray:
        """Attribute of slate items rescaled to [0, 1]."""
        attr = self.attribute
        pos = np.clip(np.searchsorted(attr.items, slate), 0, len(attr.items) - 1)
        if np.any(attr.items[pos] != np.asarray(slate)):
            raise KeyError("slate item without an attribute value")
        return self._scaled[pos]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - np.max(logits))
    return z / z.sum()


def choose(c: ChoiceModel, slate: Sequence[int], rng: np.random.Generator) -> int:
    if c.variant == "lazy":
        if len(slate) == 0:
            raise ValueError("cannot choose from an empty slate")
        return slate[0]
    p = c.probabilities(slate)
    # inverse-CDF draw consumes exactly one uniform per choice
    idx = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
    return slate[min(idx, len(slate) - 1)]


@dataclass(frozen=True)
class FeedbackModel:
    variant: FeedbackVariant = "positive"
    beta: int = 1
    rho0: float = 0.0

    def __post_init__(self):
        if self.variant not in ("positive", "beta_preference"):
            raise ValueError(f"unknown feedback variant {self.variant!r}")
        if self.beta not in (-1, 1):
            raise ValueError("beta must be -1 or +1")
        if not np.isfinite(self.rho0):
            raise ValueError("rho0 must be finite")


def feedback(f: FeedbackModel, item: int, attribute: PopularityAttribute) -> int:
    if f.variant == "positive":
        return 1
    return f.beta if attribute[item] >= f.rho0 else -f.beta


@dataclass(frozen=True)
class SeedStrategy:
    variant: SeedVariant = "random_single"
    user_id: int | None = None
    prefix: int | None = None

    def __post_init__(self):
        if self.variant not in ("random_single", "real_history"):
            raise ValueError(f"unknown seed variant {self.variant!r}")
        if self.prefix is not None and self.prefix < 1:
            raise ValueError("prefix must be >= 1")


@dataclass(frozen=True)
class SeedItem:
    item: int
    rating: float
    from_feedback: bool


def make_seed(s: SeedStrategy, d: Dataset, rng: np.random.Generator,
              user_id: int | None = None) -> list[SeedItem]:
    """Initial history for one simulated user.

    ``user_id`` overrides ``s.user_id`` so one strategy can seed a whole cohort.
    Real histories keep dataset ratings; a random seed is a single item rated +1.
    """
    if s.variant == "random_single":
        item = int(d.items[rng.integers(len(d.items))])
        return [SeedItem(item, 1.0, True)]
    uid = s.user_id if user_id is None else user_id
    if uid is None:
        raise ValueError("real_history seeds need a user id")
    history = d.user_history(uid)
    if s.prefix is not None:
        history = history[: s.prefix]
    return [SeedItem(i, r, False) for i, r, _ in history]


@dataclass(frozen=True)
class UserModel:
    choice: ChoiceModel
    feedback: FeedbackModel
    attribute: PopularityAttribute = field(compare=False, repr=False)

    def act(self, slate: Sequence[int], rng: np.random.Generator) -> tuple[int, int]:
        c = choose(self.choice, slate, rng)
        return c, feedback(self.feedback, c, self.attribute)

    def describe(self) -> dict:
        out = {"choice": {"variant": self.choice.variant},
               "feedback": {"variant": self.feedback.variant},
               "popularity_mode": self.attribute.mode}
        if self.choice.variant == "alpha_preference":
            out["choice"]["alpha"] = self.choice.alpha
        if self.feedback.variant == "beta_preference":
            out["feedback"].update(beta=self.feedback.beta, rho0=self.feedback.rho0)
        return out


def build_user_model(spec: dict, attribute: PopularityAttribute) -> UserModel:
    """From the ``{choice: {...}, feedback: {...}}`` config block."""
    ch = dict(spec.get("choice", {}))
    fb = dict(spec.get("feedback", {}))
    variant = ch.get("variant", "uniform")
    choice = ChoiceModel(variant, float(ch.get("alpha", 0.0)),
                         attribute if variant == "alpha_preference" else None)
    fbm = FeedbackModel(fb.get("variant", "positive"), int(fb.get("beta", 1)),
                        float(fb.get("rho0", 0.0)))
    return UserModel(choice, fbm, attribute)


def build_seed_strategy(spec: dict) -> SeedStrategy:
    return SeedStrategy(spec.get("variant", "random_single"), spec.get("user_id"),
                        spec.get("prefix"))
