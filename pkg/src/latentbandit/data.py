"""Building group models from ratings data or synthetically.

Real data goes through three steps: :func:`load_ratings` reads
``user_id,item_id,rating`` triples, :func:`cluster_users` runs k-means on
mean-imputed user rating vectors and :func:`estimate_model` turns the
assignment into per-group means and variances.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import DEFAULT_VARIANCE_FLOOR, GroupModel

log = logging.getLogger(__name__)


class RatingsFormatError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


@dataclass(eq=False)
class RatingsTable:
    """Sparse ratings with dense user/item index maps.

    ``users[k]``, ``items[k]``, ``ratings[k]`` form triple ``k``; user and item
    indices refer to positions in ``user_ids`` / ``item_ids``.
    """

    user_ids: list
    item_ids: list
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    rating_scale: tuple | None = None
    duplicates: int = 0

    @property
    def num_users(self) -> int:
        return len(self.user_ids)

    @property
    def num_items(self) -> int:
        return len(self.item_ids)

    def __len__(self) -> int:
        return self.ratings.size

    def dense(self) -> np.ndarray:
        """Users x items matrix with ``nan`` for missing ratings."""
        out = np.full((self.num_users, self.num_items), np.nan)
        out[self.users, self.items] = self.ratings
        return out

    def subset_users(self, keep: np.ndarray) -> "RatingsTable":
        """Table restricted to the user indices in ``keep`` (re-indexed, item map kept)."""
        keep = np.asarray(keep, dtype=np.intp)
        remap = np.full(self.num_users, -1, dtype=np.intp)
        remap[keep] = np.arange(keep.size)
        sel = remap[self.users] >= 0
        return RatingsTable(
            [self.user_ids[u] for u in keep],
            list(self.item_ids),
            remap[self.users[sel]],
            self.items[sel].copy(),
            self.ratings[sel].copy(),
            self.rating_scale,
        )


def load_ratings(path, scale: tuple | None = None, format: str = "csv_triples") -> RatingsTable:
    """Stream ``user_id,item_id,rating`` rows (with header) into a table.

    Repeated ``(user, item)`` pairs keep the first rating; the number dropped
    is stored in ``duplicates``. Rows that do not parse, or whose rating lies
    outside ``scale``, raise :class:`RatingsFormatError` naming the line.
    """
    if format != "csv_triples":
        raise ValueError(f"unsupported ratings format {format!r}")
    user_index, item_index = {}, {}
    users, items, ratings = [], [], []
    seen = set()
    duplicates = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return RatingsTable([], [], np.zeros(0, np.intp), np.zeros(0, np.intp), np.zeros(0), scale)
        if [h.strip() for h in header] != ["user_id", "item_id", "rating"]:
            raise RatingsFormatError(path, 1, f"expected header user_id,item_id,rating, got {','.join(header)}")
        for row in reader:
            line = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise RatingsFormatError(path, line, f"expected 3 fields, got {len(row)}")
            uid, iid, raw = (x.strip() for x in row)
            try:
                r = float(raw)
            except ValueError:
                raise RatingsFormatError(path, line, f"rating {raw!r} is not a number") from None
            if not np.isfinite(r):
                raise RatingsFormatError(path, line, f"rating {raw!r} is not finite")
            if scale is not None and not scale[0] <= r <= scale[1]:
                raise RatingsFormatError(path, line, f"rating {r:g} outside scale [{scale[0]:g}, {scale[1]:g}]")
            u = user_index.setdefault(uid, len(user_index))
            v = item_index.setdefault(iid, len(item_index))
            if (u, v) in seen:
                duplicates += 1
                continue
            seen.add((u, v))
            users.append(u)
            items.append(v)
            ratings.append(r)
    if duplicates:
        log.warning("%s: dropped %d duplicate (user, item) ratings", path, duplicates)
    return RatingsTable(
        list(user_index),
        list(item_index),
        np.array(users, dtype=np.intp),
        np.array(items, dtype=np.intp),
        np.array(ratings, dtype=np.float64),
        tuple(scale) if scale is not None else None,
        duplicates,
    )


def write_ratings(table: RatingsTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "item_id", "rating"])
        for u, v, r in zip(table.users, table.items, table.ratings):
            w.writerow([table.user_ids[u], table.item_ids[v], repr(float(r))])


def train_holdout_split(table: RatingsTable, holdout: float, rng: np.random.Generator):
    """User-level split; returns ``(train, holdout)`` tables."""
    if not 0.0 <= holdout < 1.0:
        raise ValueError("holdout fraction must lie in [0, 1)")
    perm = rng.permutation(table.num_users)
    n_hold = int(round(holdout * table.num_users))
    return table.subset_users(np.sort(perm[n_hold:])), table.subset_users(np.sort(perm[:n_hold]))


@dataclass(frozen=True)
class ClusteringConfig:
    k: int
    max_iters: int = 100
    restarts: int = 10
    min_item_support: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


@dataclass(eq=False)
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    history: list = field(default_factory=list)


def mean_imputed(table: RatingsTable) -> np.ndarray:
    """Dense user vectors with missing ratings replaced by the item's mean rating."""
    x = table.dense()
    missing = np.isnan(x)
    counts = (~missing).sum(axis=0)
    sums = np.where(missing, 0.0, x).sum(axis=0)
    col = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return np.where(missing, col[None, :], x)


def _sq_dist(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(axis=1)[:, None] - 2.0 * x @ c.T + (c * c).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def kmeans(x: np.ndarray, k: int, rng: np.random.Generator, max_iters: int = 100) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    ``history`` records the within-cluster sum of squares after every
    assignment step; it never increases.
    """
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = _sq_dist(x, centers[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        idx = rng.choice(n, p=closest / total) if total > 0 else rng.integers(n)
        centers[j] = x[idx]
        closest = np.minimum(closest, _sq_dist(x, centers[j : j + 1])[:, 0])
    history = []
    labels = None
    for _ in range(max_iters):
        d = _sq_dist(x, centers)
        new = np.argmin(d, axis=1)
        history.append(float(d[np.arange(n), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = x[members].mean(axis=0)
            else:
                # reseed an empty cluster at the worst-served point
                far = int(np.argmax(d[np.arange(n), labels]))
                centers[j] = x[far]
                labels[far] = j
    d = _sq_dist(x, centers)
    inertia = float(d[np.arange(n), labels].sum())
    return KMeansResult(labels, centers, inertia, history)


def cluster_users(table: RatingsTable, cfg: ClusteringConfig) -> np.ndarray:
    """Group index per user: best of ``cfg.restarts`` k-means runs by within-cluster SS."""
    if cfg.k > table.num_users:
        raise ValueError(f"k={cfg.k} exceeds the number of users ({table.num_users})")
    if cfg.k == 1:
        return np.zeros(table.num_users, dtype=np.intp)
    x = mean_imputed(table)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)
    best = None
    for ss in seeds:
        res = kmeans(x, cfg.k, np.random.default_rng(ss), cfg.max_iters)
        if best is None or res.inertia < best.inertia:
            best = res
    return _canonical_labels(best.labels)


def _canonical_labels(labels: np.ndarray) -> np.ndarray:
    # relabel groups in order of first appearance so equal partitions give equal labels
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty(order.size, dtype=np.intp)
    remap[np.unique(labels)[order]] = np.arange(order.size)
    return remap[labels]


def estimate_model(
    table: RatingsTable,
    assignment: np.ndarray,
    variance_floor: float = DEFAULT_VARIANCE_FLOOR,
    min_item_support: int = 5,
    num_groups: int | None = None,
    rating_scale: tuple | None = None,
) -> GroupModel:
    """Per-group item means and unbiased variances.

    A cell with fewer than ``min_item_support`` ratings falls back to the
    item's global mean and variance; a cell (or item) with a single rating
    gets the variance floor; an item nobody rated gets the scale midpoint.
    Fallbacks are counted in the model metadata.
    """
    assignment = np.asarray(assignment, dtype=np.intp)
    if assignment.size != table.num_users:
        raise ValueError("assignment must cover every user")
    G = int(num_groups if num_groups is not None else (assignment.max() + 1 if assignment.size else 1))
    V = table.num_items
    scale = tuple(rating_scale or table.rating_scale or (1.0, 5.0))
    grp = assignment[table.users]
    idx = grp * V + table.items
    count = np.bincount(idx, minlength=G * V).reshape(G, V).astype(np.float64)
    s1 = np.bincount(idx, weights=table.ratings, minlength=G * V).reshape(G, V)
    s2 = np.bincount(idx, weights=table.ratings**2, minlength=G * V).reshape(G, V)

    gcount = count.sum(axis=0)
    g1, g2 = s1.sum(axis=0), s2.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        gmean = np.where(gcount > 0, g1 / gcount, 0.5 * (scale[0] + scale[1]))
        gvar = np.where(gcount > 1, (g2 - gcount * gmean**2) / (gcount - 1), variance_floor)
        mean = np.where(count > 0, s1 / count, 0.0)
        var = np.where(count > 1, (s2 - count * mean**2) / (count - 1), variance_floor)
    gvar = np.maximum(gvar, variance_floor)

    support = max(int(min_item_support), 1)
    fallback = count < support
    mu = np.where(fallback, gmean[None, :], mean)
    sigma2 = np.where(fallback, gvar[None, :], np.maximum(var, variance_floor))
    single = (count == 1) & ~fallback
    meta = {
        "provenance": "estimate_model",
        "min_item_support": int(min_item_support),
        "fallback_cells": int(fallback.sum()),
        "single_rating_cells": int(single.sum()),
        "unrated_items": [int(v) for v in np.flatnonzero(gcount == 0)],
        "cell_support_min": int(count.min()),
        "cell_support_median": float(np.median(count)),
    }
    return GroupModel(
        mu,
        sigma2,
        rating_scale=scale,
        variance_floor=variance_floor,
        item_labels=[str(x) for x in table.item_ids],
        metadata=meta,
    )


def build_model(table: RatingsTable, cfg: ClusteringConfig, variance_floor: float = DEFAULT_VARIANCE_FLOOR):
    """Cluster then estimate; clustering settings are recorded in the metadata."""
    labels = cluster_users(table, cfg)
    model = estimate_model(table, labels, variance_floor, cfg.min_item_support, num_groups=cfg.k)
    model.metadata["clustering"] = {
        "method": "kmeans, mean-imputed user vectors, k-means++ seeding",
        **asdict(cfg),
        "group_sizes": np.bincount(labels, minlength=cfg.k).tolist(),
    }
    return model


def synth_model(
    num_groups: int,
    num_items: int,
    separation: float,
    rng: np.random.Generator,
    rating_scale: tuple = (1.0, 5.0),
    variance_range: tuple = (0.25, 1.5),
) -> GroupModel:
    """Random group model for controlled experiments.

    Each item gets a base mean in the middle half of the scale; each group's
    mean sits uniformly within ``separation`` rating units around it, so
    ``separation`` is the width of the band of group means per item (the
    expected gap between two groups is ``separation / 3``). Item variances are
    uniform in ``variance_range`` and shared by all groups, so
    ``separation=0`` makes the groups indistinguishable.
    """
    if separation < 0:
        raise ValueError("separation must be >= 0")
    lo, hi = rating_scale
    span = hi - lo
    base = rng.uniform(lo + span / 4, hi - span / 4, num_items)
    offsets = separation * (rng.uniform(size=(num_groups, num_items)) - 0.5)
    var = rng.uniform(*variance_range, num_items)
    return GroupModel(
        base[None, :] + offsets,
        np.broadcast_to(var, (num_groups, num_items)),
        rating_scale=rating_scale,
        metadata={"provenance": "synth_model", "separation": float(separation)},
    )
