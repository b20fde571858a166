"""Baseline policies: a CART group classifier, the oracle and uniform random.

The decision tree is trained on synthetic users drawn from the group model,
so it faces the same environment as the bandit policies. Each internal node
asks for one item's rating and goes left when ``rating < threshold``. Every
node carries its majority training group, which is the tree's estimate when
the walk stops there.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ExhaustedItemsError, SchemaError, TreeStructureError
from .model import GroupModel, RatingHistory, draw_ratings
from .policy import ranked_items

TREE_FORMAT = "latentbandit.decision_tree"


@dataclass(frozen=True)
class TrainConfig:
    users_per_group: int = 1000
    max_depth: int = 25
    min_leaf: int = 5
    candidate_thresholds: int = 8
    criterion: str = "gini"

    def __post_init__(self):
        if self.users_per_group < 1:
            raise ValueError("users_per_group must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.candidate_thresholds < 1:
            raise ValueError("candidate_thresholds must be >= 1")
        if self.criterion != "gini":
            raise ValueError("only the gini criterion is supported")


@dataclass(frozen=True, eq=False)
class DecisionTree:
    """Binary tree stored as preorder node arrays.

    Leaves have ``split_item == -1`` and ``left == right == -1``.
    """

    split_item: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    majority: np.ndarray
    max_depth: int
    num_groups: int = 0

    def __post_init__(self):
        for name in ("split_item", "left", "right", "majority"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.intp))
        object.__setattr__(self, "threshold", np.asarray(self.threshold, dtype=np.float64))
        self.validate()

    @property
    def num_nodes(self) -> int:
        return self.split_item.size

    def is_leaf(self, node: int) -> bool:
        return self.split_item[node] < 0

    def validate(self) -> None:
        n = self.num_nodes
        if n == 0:
            raise TreeStructureError("tree has no nodes")
        arrays = (self.threshold, self.left, self.right, self.majority)
        if any(a.size != n for a in arrays):
            raise TreeStructureError("node arrays differ in length")
        visited = np.zeros(n, dtype=bool)
        stack = [(0, frozenset())]
        while stack:
            node, path = stack.pop()
            if not 0 <= node < n:
                raise TreeStructureError(f"child index {node} out of range")
            if visited[node]:
                raise TreeStructureError(f"node {node} reached twice (cycle or shared child)")
            visited[node] = True
            if self.is_leaf(node):
                if self.left[node] != -1 or self.right[node] != -1:
                    raise TreeStructureError(f"leaf {node} has children")
                continue
            item = int(self.split_item[node])
            if item in path:
                raise TreeStructureError(f"item {item} asked twice on one path")
            stack.append((int(self.right[node]), path | {item}))
            stack.append((int(self.left[node]), path | {item}))
        if not visited.all():
            raise TreeStructureError(f"{int((~visited).sum())} nodes unreachable from the root")

    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            if not self.is_leaf(node):
                stack += [(int(self.left[node]), d + 1), (int(self.right[node]), d + 1)]
        return best

    def predict(self, ratings: np.ndarray, depth: int | None = None) -> np.ndarray:
        """Majority group reached by each row of ``ratings`` within ``depth`` questions."""
        ratings = np.atleast_2d(ratings)
        out = np.empty(ratings.shape[0], dtype=np.intp)
        limit = self.num_nodes if depth is None else depth
        for k, row in enumerate(ratings):
            node, asked = 0, 0
            while not self.is_leaf(node) and asked < limit:
                child = self.left if row[self.split_item[node]] < self.threshold[node] else self.right
                node = int(child[node])
                asked += 1
            out[k] = self.majority[node]
        return out

    def to_dict(self) -> dict:
        nodes = []
        for i in range(self.num_nodes):
            if self.is_leaf(i):
                nodes.append({"majority_group": int(self.majority[i])})
            else:
                nodes.append(
                    {
                        "split_item": int(self.split_item[i]),
                        "threshold": float(self.threshold[i]),
                        "left": int(self.left[i]),
                        "right": int(self.right[i]),
                        "majority_group": int(self.majority[i]),
                    }
                )
        return {
            "format": TREE_FORMAT,
            "format_version": 1,
            "max_depth": int(self.max_depth),
            "num_groups": int(self.num_groups),
            "nodes": nodes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        if d.get("format") != TREE_FORMAT:
            raise SchemaError(f"not a decision tree file (format={d.get('format')!r})")
        nodes = d["nodes"]
        return cls(
            split_item=[n.get("split_item", -1) for n in nodes],
            threshold=[n.get("threshold", 0.0) for n in nodes],
            left=[n.get("left", -1) for n in nodes],
            right=[n.get("right", -1) for n in nodes],
            majority=[n["majority_group"] for n in nodes],
            max_depth=d["max_depth"],
            num_groups=d.get("num_groups", 0),
        )


def save_tree(tree: DecisionTree, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(tree.to_dict(), indent=1, sort_keys=True) + "\n")


def load_tree(path) -> DecisionTree:
    with open(path, encoding="utf-8") as fh:
        return DecisionTree.from_dict(json.load(fh))


def _gini_split(x: np.ndarray, y: np.ndarray, num_groups: int, k: int, min_leaf: int):
    """Best (column, threshold, impurity) over quantile thresholds of each column of ``x``.

    Returns ``None`` when no split leaves ``min_leaf`` rows on both sides.
    """
    n, a = x.shape
    # the median is always a candidate so balanced two-way splits are reachable
    levels = np.union1d(np.arange(1, k + 1) / (k + 1), [0.5])
    k = levels.size
    thr = np.quantile(x, levels, axis=0).T  # (a, k), ascending per column
    # bin b = number of thresholds <= x; x < thr[j] exactly when b <= j
    b = (x[:, :, None] >= thr[None, :, :]).sum(axis=2)
    flat = ((np.arange(a)[None, :] * (k + 1) + b) * num_groups + y[:, None]).ravel()
    hist = np.bincount(flat, minlength=a * (k + 1) * num_groups).reshape(a, k + 1, num_groups)
    left = np.cumsum(hist, axis=1)[:, :k, :].astype(np.float64)  # (a, k, G)
    total = hist.sum(axis=1)[:, None, :].astype(np.float64)
    right = total - left
    n_left = left.sum(axis=2)
    n_right = n - n_left
    with np.errstate(divide="ignore", invalid="ignore"):
        g_left = n_left - (left * left).sum(axis=2) / n_left
        g_right = n_right - (right * right).sum(axis=2) / n_right
    impurity = (g_left + g_right) / n
    impurity[(n_left < min_leaf) | (n_right < min_leaf)] = np.inf
    best = int(np.argmin(impurity))
    col, j = divmod(best, k)
    if not np.isfinite(impurity[col, j]):
        return None
    return col, float(thr[col, j]), float(impurity[col, j])


def fit_tree(x: np.ndarray, y: np.ndarray, num_groups: int, cfg: TrainConfig) -> DecisionTree:
    """Greedy Gini CART on a training matrix ``x`` (users x items) with labels ``y``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    num_items = x.shape[1]
    split_item, threshold, left, right, majority = [], [], [], [], []

    def grow(idx: np.ndarray, depth: int, used: frozenset) -> int:
        node = len(split_item)
        counts = np.bincount(y[idx], minlength=num_groups)
        split_item.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        majority.append(int(np.argmax(counts)))
        n = idx.size
        parent = n - float(counts @ counts) / n
        avail = np.array([v for v in range(num_items) if v not in used], dtype=np.intp)
        if depth >= cfg.max_depth or parent <= 0.0 or n < 2 * cfg.min_leaf or avail.size == 0:
            return node
        found = _gini_split(x[np.ix_(idx, avail)], y[idx], num_groups, cfg.candidate_thresholds, cfg.min_leaf)
        # no strict impurity decrease: stop
        if found is None or found[2] * n >= parent - 1e-9:
            return node
        col, thr, _ = found
        item = int(avail[col])
        go_left = x[idx, item] < thr
        split_item[node] = item
        threshold[node] = thr
        left[node] = grow(idx[go_left], depth + 1, used | {item})
        right[node] = grow(idx[~go_left], depth + 1, used | {item})
        return node

    grow(np.arange(y.size), 0, frozenset())
    return DecisionTree(split_item, threshold, left, right, majority, cfg.max_depth, num_groups)


def training_sample(model: GroupModel, users_per_group: int, rng: np.random.Generator):
    y = np.repeat(np.arange(model.num_groups), users_per_group)
    return draw_ratings(model, y, rng), y


def train_tree(model: GroupModel, cfg: TrainConfig, rng: np.random.Generator) -> DecisionTree:
    """Fit a CART group classifier on synthetic users drawn from ``model``."""
    x, y = training_sample(model, cfg.users_per_group, rng)
    return fit_tree(x, y, model.num_groups, cfg)


@dataclass(frozen=True)
class TreeStep:
    """Outcome of walking the tree with the ratings gathered so far.

    ``item`` is the next question, or ``None`` once a leaf (or the depth
    budget) is reached. ``group`` is the majority group of the deepest node
    reached, i.e. the tree's current estimate.
    """

    item: int | None
    group: int
    depth: int


def tree_policy_step(tree: DecisionTree, history: RatingHistory, depth_budget: int | None = None) -> TreeStep:
    answers = dict(history.observations)
    node, depth = 0, 0
    limit = tree.max_depth if depth_budget is None else min(depth_budget, tree.max_depth)
    while not tree.is_leaf(node):
        if depth > tree.num_nodes:
            raise TreeStructureError("walk exceeded node count (cycle)")
        item = int(tree.split_item[node])
        if item not in answers:
            if depth >= limit:
                break
            return TreeStep(item, int(tree.majority[node]), depth)
        node = int(tree.left[node] if answers[item] < tree.threshold[node] else tree.right[node])
        if not 0 <= node < tree.num_nodes:
            raise TreeStructureError(f"child index {node} out of range")
        depth += 1
    return TreeStep(None, int(tree.majority[node]), depth)


def oracle_policy(model: GroupModel, g_star: int, rated) -> int:
    """Best unrated item for the true group."""
    order = ranked_items(model, rated, g_star)
    if order.size == 0:
        raise ExhaustedItemsError("every item has already been rated")
    return int(order[0])


def random_policy(rated, num_items: int, rng: np.random.Generator) -> int:
    mask = np.ones(num_items, dtype=bool)
    mask[list(rated)] = False
    free = np.flatnonzero(mask)
    if free.size == 0:
        raise ExhaustedItemsError("every item has already been rated")
    return int(free[rng.integers(free.size)])
