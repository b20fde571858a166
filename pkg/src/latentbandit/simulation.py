"""Synthetic new users, policy episodes and accuracy/regret metrics.

Expected regret after ``n`` questions is set-based and uses group means:
the summed mean rating of the true group's ``n`` best items minus the summed
mean rating of the ``n`` items actually asked. Asking the top-``n`` items in
any order therefore costs nothing. A consequence is that the curve can step
down when a policy later picks up a top item it skipped earlier.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .baselines import DecisionTree, oracle_policy, random_policy, tree_policy_step
from .errors import ProtocolViolation
from .model import GroupModel, GroupPosterior, RatingHistory, draw_ratings, log_likelihoods, normalize_log
from .policy import PolicyConfig, future_regret_vector, ranked_items, select_item

DEFAULT_HORIZON = 25
GROUP_ACCURACY_STEP = 15


@dataclass(frozen=True, eq=False)
class SyntheticUser:
    group: int
    ratings: np.ndarray


def sample_user(model: GroupModel, g: int, rng: np.random.Generator, clamp: bool = False) -> SyntheticUser:
    """Draw one user of group ``g``; ratings are fixed for the user's lifetime."""
    model.check_group(g)
    ratings = draw_ratings(model, [g], rng)[0]
    if clamp:
        ratings = np.clip(ratings, *model.rating_scale)
    ratings.setflags(write=False)
    return SyntheticUser(int(g), ratings)


def cumulative_regret(model: GroupModel, g_star: int, chosen, n: int | None = None) -> float:
    """Mean-rating shortfall of the first ``n`` chosen items against the best ``n``."""
    chosen = list(chosen)
    n = len(chosen) if n is None else n
    if len(set(chosen[:n])) != len(chosen[:n]):
        raise ValueError("chosen items must be distinct")
    row = model.mu[g_star]
    best = np.sort(row)[::-1][:n].sum()
    got = row[np.asarray(chosen[:n], dtype=np.intp)].sum() if n else 0.0
    return max(float(best - got), 0.0)


# -- policies ----------------------------------------------------------------


class Policy:
    """Interface consumed by :func:`run_episode`.

    ``select`` returns the next item; ``estimate`` returns the group estimate
    after the ratings in ``history``. Bandit policies estimate by posterior
    argmax.
    """

    label = "policy"
    beta = 1.0

    def select(self, model, history, posterior, rng, true_group) -> int:
        raise NotImplementedError

    def estimate(self, model, history, posterior) -> int:
        return posterior.argmax()


class BanditPolicy(Policy):
    def __init__(self, config: PolicyConfig, label: str | None = None):
        self.config = config
        self.beta = config.beta
        if label is None:
            label = f"lba(beta={config.beta:g})" if config.mode == "lba_linear" else "explore_mc"
        self.label = label

    def select(self, model, history, posterior, rng, true_group):
        return select_item(model, history, self.config, rng)


class TreePolicy(Policy):
    """Asks the tree's questions, then recommends the predicted group's best items."""

    def __init__(self, tree: DecisionTree, label: str = "tree"):
        self.tree = tree
        self.label = label

    def select(self, model, history, posterior, rng, true_group):
        step = tree_policy_step(self.tree, history)
        if step.item is not None:
            return step.item
        return int(ranked_items(model, history.rated, step.group)[0])

    def estimate(self, model, history, posterior):
        return tree_policy_step(self.tree, history).group


class OraclePolicy(Policy):
    label = "oracle"

    def select(self, model, history, posterior, rng, true_group):
        return oracle_policy(model, true_group, history.rated)


class RandomPolicy(Policy):
    label = "random"

    def select(self, model, history, posterior, rng, true_group):
        return random_policy(history.rated, model.num_items, rng)


# -- episodes ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Step:
    item: int
    rating: float
    posterior: GroupPosterior
    estimate: int
    cumulative_regret: float
    future_regret_true: float = float("nan")


@dataclass(eq=False)
class EpisodeResult:
    true_group: int
    horizon: int
    steps: list = field(default_factory=list)

    @property
    def items(self) -> list:
        return [s.item for s in self.steps]

    @property
    def final_estimate(self) -> int:
        # no questions asked: argmax of the uniform prior
        return self.steps[-1].estimate if self.steps else 0


def run_episode(
    policy: Policy,
    model: GroupModel,
    user: SyntheticUser,
    horizon: int,
    rng: np.random.Generator | None = None,
    trace: bool = False,
) -> EpisodeResult:
    """Ask ``horizon`` items one at a time and record posterior, estimate and regret.

    With ``trace`` set, each step also records the discounted future regret
    of acting as the true group (at the policy's ``beta``).
    """
    if not 0 <= horizon <= model.num_items:
        raise ValueError(f"horizon {horizon} outside [0, {model.num_items}]")
    g_star = user.group
    best_cum = np.cumsum(np.sort(model.mu[g_star])[::-1])
    history = RatingHistory()
    loglik = np.zeros(model.num_groups)
    post = GroupPosterior.uniform(model.num_groups)
    got = 0.0
    result = EpisodeResult(g_star, horizon)
    for n in range(1, horizon + 1):
        item = int(policy.select(model, history, post, rng, g_star))
        if not 0 <= item < model.num_items:
            raise ProtocolViolation(f"{policy.label} returned invalid item {item}")
        if item in history.rated:
            raise ProtocolViolation(f"{policy.label} asked for already rated item {item}")
        rating = float(user.ratings[item])
        history = history.append(item, rating)
        loglik = loglik + log_likelihoods(model, [item], [rating])
        post = GroupPosterior(normalize_log(loglik))
        got += model.mu[g_star, item]
        regret = max(float(best_cum[n - 1] - got), 0.0)
        fr = float("nan")
        if trace:
            fr = float(future_regret_vector(model, history.rated, post, policy.beta)[g_star])
        result.steps.append(Step(item, rating, post, int(policy.estimate(model, history, post)), regret, fr))
    return result


# -- evaluation --------------------------------------------------------------


def _label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def user_rng(seed: int, g: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 0, g, i]))


def policy_rng(seed: int, label: str, g: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 1, _label_key(label), g, i]))


@dataclass(eq=False)
class MetricsSummary:
    """Per-policy, per-group, per-step accuracy and expected regret.

    ``correct`` and ``regret`` hold per-user values with shape
    ``(policies, groups, users_per_group, horizon)``; step ``n`` (1-based) is
    column ``n - 1``.
    """

    policies: list
    num_groups: int
    users_per_group: int
    horizon: int
    seed: int
    correct: np.ndarray
    regret: np.ndarray
    config: dict = field(default_factory=dict)
    episodes: dict | None = None

    def accuracy(self) -> np.ndarray:
        """Mean accuracy, shape ``(policies, groups, horizon)``."""
        return self.correct.mean(axis=2)

    def mean_regret(self) -> np.ndarray:
        return self.regret.mean(axis=2)

    def overall_accuracy(self) -> np.ndarray:
        """Mean over every user of every group, shape ``(policies, horizon)``."""
        return self.correct.mean(axis=(1, 2))

    def overall_regret(self) -> np.ndarray:
        return self.regret.mean(axis=(1, 2))

    def index(self, label: str) -> int:
        return self.policies.index(label)


def evaluate(
    model: GroupModel,
    policies: list,
    users_per_group: int,
    horizon: int,
    seed: int,
    jobs: int = 1,
    keep_episodes: bool = False,
    trace: bool = False,
    clamp: bool = False,
    config: dict | None = None,
) -> MetricsSummary:
    """Paired evaluation: every policy faces the same sampled users.

    User ``i`` of group ``g`` and each policy's episode generator are seeded
    from ``(seed, g, i)`` alone, so results do not depend on ``jobs`` or on
    completion order.
    """
    if users_per_group < 1:
        raise ValueError("users_per_group must be >= 1")
    labels = [p.label for p in policies]
    if len(set(labels)) != len(labels):
        raise ValueError(f"policy labels must be unique, got {labels}")
    G, P, U = model.num_groups, len(policies), users_per_group

    def run_group(g):
        correct = np.zeros((P, U, horizon), dtype=bool)
        regret = np.zeros((P, U, horizon))
        eps = {}
        for i in range(U):
            user = sample_user(model, g, user_rng(seed, g, i), clamp=clamp)
            for p, pol in enumerate(policies):
                res = run_episode(pol, model, user, horizon, policy_rng(seed, pol.label, g, i), trace=trace)
                correct[p, i] = [s.estimate == g for s in res.steps]
                regret[p, i] = [s.cumulative_regret for s in res.steps]
                if keep_episodes:
                    eps[(pol.label, g, i)] = res
        return correct, regret, eps

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(run_group, range(G)))
    else:
        parts = [run_group(g) for g in range(G)]

    correct = np.stack([c for c, _, _ in parts], axis=1)
    regret = np.stack([r for _, r, _ in parts], axis=1)
    episodes = None
    if keep_episodes:
        episodes = {}
        for _, _, e in parts:
            episodes.update(e)
    return MetricsSummary(labels, G, U, horizon, seed, correct, regret, dict(config or {}), episodes)
