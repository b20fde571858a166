"""Group rating model and Bayesian inference over a user's latent group.

Ratings of item ``v`` by users in group ``g`` are Gaussian with mean
``mu[g, v]`` and variance ``sigma2[g, v]``. With a uniform prior over groups
the posterior of a new user's group is proportional to the likelihood of the
ratings observed so far.

Log-likelihoods here drop the group-independent ``-(n/2) log(2 pi)`` term, so
``log p(D | g) = -sum_i log sigma(g, v_i) - sum_i (r_i - mu(g, v_i))^2 / (2 sigma2(g, v_i))``.
The constant cancels in the posterior.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import DuplicateItemError, SchemaError

DEFAULT_VARIANCE_FLOOR = 0.05
MODEL_FORMAT = "latentbandit.group_model"
MODEL_FORMAT_VERSION = 1


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GroupModel:
    """Per-group, per-item Gaussian rating statistics.

    ``sigma2`` is clamped to ``variance_floor`` on construction. Instances are
    immutable and may be shared between threads.
    """

    mu: np.ndarray
    sigma2: np.ndarray
    rating_scale: tuple[float, float] = (1.0, 5.0)
    variance_floor: float = DEFAULT_VARIANCE_FLOOR
    item_labels: tuple[str, ...] | None = None
    group_labels: tuple[str, ...] | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma2 = np.asarray(self.sigma2, dtype=np.float64)
        if mu.ndim != 2 or mu.shape[0] < 1 or mu.shape[1] < 1:
            raise ValueError(f"mu must be a non-empty [groups x items] matrix, got shape {mu.shape}")
        if sigma2.shape != mu.shape:
            raise ValueError(f"sigma2 shape {sigma2.shape} does not match mu shape {mu.shape}")
        if not (self.variance_floor > 0):
            raise ValueError("variance_floor must be positive")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma2))):
            raise ValueError("mu and sigma2 must be finite")
        sigma2 = np.maximum(sigma2, self.variance_floor)
        lo, hi = self.rating_scale
        object.__setattr__(self, "rating_scale", (float(lo), float(hi)))
        object.__setattr__(self, "variance_floor", float(self.variance_floor))
        object.__setattr__(self, "mu", _frozen(mu))
        object.__setattr__(self, "sigma2", _frozen(sigma2))
        object.__setattr__(self, "sigma", _frozen(np.sqrt(sigma2)))
        object.__setattr__(self, "half_log_sigma2", _frozen(0.5 * np.log(sigma2)))
        object.__setattr__(self, "inv_two_sigma2", _frozen(0.5 / sigma2))
        for name, n in (("item_labels", mu.shape[1]), ("group_labels", mu.shape[0])):
            labels = getattr(self, name)
            if labels is not None:
                labels = tuple(str(x) for x in labels)
                if len(labels) != n:
                    raise ValueError(f"{name} has {len(labels)} entries, expected {n}")
                object.__setattr__(self, name, labels)

    @property
    def num_groups(self) -> int:
        return self.mu.shape[0]

    @property
    def num_items(self) -> int:
        return self.mu.shape[1]

    def check_group(self, g: int) -> int:
        if not 0 <= g < self.num_groups:
            raise IndexError(f"group index {g} out of range for {self.num_groups} groups")
        return int(g)

    def check_item(self, v: int) -> int:
        if not 0 <= v < self.num_items:
            raise IndexError(f"item index {v} out of range for {self.num_items} items")
        return int(v)

    def shifted(self, offset: float) -> "GroupModel":
        """Return a copy with every mean moved by ``offset`` (variances untouched)."""
        meta = dict(self.metadata)
        meta["rating_shift"] = float(meta.get("rating_shift", 0.0)) + float(offset)
        lo, hi = self.rating_scale
        return GroupModel(
            self.mu + offset,
            self.sigma2,
            rating_scale=(lo + offset, hi + offset),
            variance_floor=self.variance_floor,
            item_labels=self.item_labels,
            group_labels=self.group_labels,
            metadata=meta,
        )


@dataclass(frozen=True)
class RatingHistory:
    """Ordered ``(item, rating)`` observations for one user; each item at most once."""

    observations: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        obs = tuple((int(v), float(r)) for v, r in self.observations)
        seen = set()
        for v, _ in obs:
            if v < 0:
                raise IndexError(f"negative item index {v}")
            if v in seen:
                raise DuplicateItemError(f"item {v} rated more than once")
            seen.add(v)
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "_rated", frozenset(seen))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]]) -> "RatingHistory":
        return cls(tuple(pairs))

    def __len__(self) -> int:
        return len(self.observations)

    def __iter__(self):
        return iter(self.observations)

    @property
    def rated(self) -> frozenset:
        return self._rated

    @property
    def items(self) -> np.ndarray:
        return np.fromiter((v for v, _ in self.observations), dtype=np.intp, count=len(self))

    @property
    def ratings(self) -> np.ndarray:
        return np.fromiter((r for _, r in self.observations), dtype=np.float64, count=len(self))

    def append(self, item: int, rating: float) -> "RatingHistory":
        if item in self._rated:
            raise DuplicateItemError(f"item {item} already rated")
        return RatingHistory(self.observations + ((int(item), float(rating)),))

    def check_against(self, model: GroupModel) -> None:
        for v, _ in self.observations:
            model.check_item(v)


@dataclass(frozen=True, eq=False)
class GroupPosterior:
    """Probability vector over groups."""

    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("posterior must be a non-empty vector")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValueError("posterior entries must be finite and non-negative")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"posterior sums to {p.sum()!r}, not 1")
        object.__setattr__(self, "probs", p)

    def __len__(self) -> int:
        return self.probs.size

    def __getitem__(self, g):
        return self.probs[g]

    def argmax(self) -> int:
        # np.argmax returns the first maximum, i.e. the lowest group index on ties
        return int(np.argmax(self.probs))

    @classmethod
    def uniform(cls, num_groups: int) -> "GroupPosterior":
        return cls(np.full(num_groups, 1.0 / num_groups))

    @classmethod
    def point_mass(cls, num_groups: int, g: int) -> "GroupPosterior":
        p = np.zeros(num_groups)
        p[g] = 1.0
        return cls(p)


def log_likelihoods(model: GroupModel, items: np.ndarray, ratings: np.ndarray) -> np.ndarray:
    """Vector of ``log p(D | g)`` over all groups, constant term dropped."""
    items = np.asarray(items, dtype=np.intp)
    if items.size == 0:
        return np.zeros(model.num_groups)
    if items.min() < 0 or items.max() >= model.num_items:
        bad = items[(items < 0) | (items >= model.num_items)][0]
        raise IndexError(f"item index {bad} out of range for {model.num_items} items")
    diff = np.asarray(ratings, dtype=np.float64)[None, :] - model.mu[:, items]
    terms = model.half_log_sigma2[:, items] + diff * diff * model.inv_two_sigma2[:, items]
    return -terms.sum(axis=1)


def log_likelihood(model: GroupModel, history: RatingHistory, g: int) -> float:
    """``log p(D_n | G = g)`` with the ``-(n/2) log 2 pi`` constant dropped."""
    model.check_group(g)
    return float(log_likelihoods(model, history.items, history.ratings)[g])


def normalize_log(logw: np.ndarray) -> np.ndarray:
    """Max-shifted softmax of unnormalized log weights."""
    shifted = logw - np.max(logw)
    w = np.exp(shifted)
    return w / w.sum()


def log_posterior(model: GroupModel, history: RatingHistory) -> np.ndarray:
    """Normalized log posterior (log-sum-exp), uniform prior."""
    ll = log_likelihoods(model, history.items, history.ratings)
    m = np.max(ll)
    return ll - (m + np.log(np.exp(ll - m).sum()))


def posterior(model: GroupModel, history: RatingHistory) -> GroupPosterior:
    """Posterior over groups given the ratings in ``history`` (uniform prior)."""
    ll = log_likelihoods(model, history.items, history.ratings)
    return GroupPosterior(normalize_log(ll))


def hypothetical_posterior(
    model: GroupModel, history: RatingHistory, item: int, rating: float
) -> GroupPosterior:
    """Posterior after ``history`` plus one more rating; ``history`` is left unchanged."""
    model.check_item(item)
    if item in history.rated:
        raise DuplicateItemError(f"item {item} already rated")
    return posterior(model, history.append(item, rating))


def draw_ratings(model: GroupModel, groups, rng: np.random.Generator) -> np.ndarray:
    """One independent Gaussian rating per item for each entry of ``groups``.

    Returns a ``(len(groups), num_items)`` matrix; row ``k`` is a user of
    group ``groups[k]``.
    """
    groups = np.asarray(groups, dtype=np.intp)
    z = rng.standard_normal((groups.size, model.num_items))
    return model.mu[groups] + model.sigma[groups] * z


# -- persistence -------------------------------------------------------------


def model_to_dict(model: GroupModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "format_version": MODEL_FORMAT_VERSION,
        "num_groups": model.num_groups,
        "num_items": model.num_items,
        "rating_scale": list(model.rating_scale),
        "variance_floor": model.variance_floor,
        "mu": model.mu.ravel().tolist(),
        "sigma2": model.sigma2.ravel().tolist(),
        "item_labels": list(model.item_labels) if model.item_labels is not None else None,
        "group_labels": list(model.group_labels) if model.group_labels is not None else None,
        "metadata": model.metadata,
    }


def model_from_dict(d: dict) -> GroupModel:
    if d.get("format") != MODEL_FORMAT:
        raise SchemaError(f"not a group model file (format={d.get('format')!r})")
    try:
        shape = (int(d["num_groups"]), int(d["num_items"]))
        mu = np.array(d["mu"], dtype=np.float64).reshape(shape)
        sigma2 = np.array(d["sigma2"], dtype=np.float64).reshape(shape)
        return GroupModel(
            mu,
            sigma2,
            rating_scale=tuple(d["rating_scale"]),
            variance_floor=d["variance_floor"],
            item_labels=d.get("item_labels"),
            group_labels=d.get("group_labels"),
            metadata=d.get("metadata") or {},
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise SchemaError(f"malformed group model: {exc}") from exc


def dumps_model(model: GroupModel) -> str:
    # repr-based float formatting in json round-trips every double exactly
    return json.dumps(model_to_dict(model), indent=1, sort_keys=True) + "\n"


def save_model(model: GroupModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_model(model))


def load_model(path) -> GroupModel:
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(d)

