"""Item selection for the latent bandit.

Two scoring modes are provided:

``lba_linear``
    Balances learning the user's group against recommending well-rated
    items. Candidate ``v`` scores
    ``sum_g P(g | D) * P(g | D, v, mu[g, v]) * (J(g)**2 + mu[g, v])`` where
    ``J(g)`` is the expected discounted future regret of acting as if the
    user were in group ``g``.

``explore_mc``
    Pure exploration: ``sum_g P(g | D) * E[P(g | D, v, R)]`` with the
    expectation over ``R ~ N(mu[g, v], sigma2[g, v])`` estimated by Monte
    Carlo. Serves as an accuracy upper bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DuplicateItemError, ExhaustedItemsError
from .model import GroupModel, GroupPosterior, RatingHistory, log_posterior

MODES = ("lba_linear", "explore_mc")
TIE_BREAKS = ("lowest_index", "random")

# Monte-Carlo scoring skips target groups whose posterior weight is below
# MC_PRUNE_WEIGHT and drops groups more than MC_PRUNE_LOG_GAP nats below the
# leader from the normalization. Both cut-offs perturb scores by < 1e-12.
MC_PRUNE_WEIGHT = 1e-12
MC_PRUNE_LOG_GAP = 60.0


@dataclass(frozen=True)
class PolicyConfig:
    beta: float = 1.0
    mc_samples: int = 1000
    mode: str = "lba_linear"
    tie_break: str = "lowest_index"
    mc_prune: bool = True

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if int(self.mc_samples) != self.mc_samples or self.mc_samples < 1:
            raise ValueError(f"mc_samples must be a positive integer, got {self.mc_samples}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.tie_break not in TIE_BREAKS:
            raise ValueError(f"tie_break must be one of {TIE_BREAKS}, got {self.tie_break!r}")


@dataclass(frozen=True)
class ItemScore:
    item: int
    score: float


def unrated_items(model: GroupModel, rated) -> np.ndarray:
    """Ascending indices of items not in ``rated``."""
    mask = np.ones(model.num_items, dtype=bool)
    for v in rated:
        mask[model.check_item(v)] = False
    return np.flatnonzero(mask)


def _rank(mu_row: np.ndarray) -> np.ndarray:
    # stable sort on the negated means keeps equal means in ascending index order
    return np.argsort(-mu_row, kind="stable")


def ranked_items(model: GroupModel, rated, g: int) -> np.ndarray:
    """Unrated items ordered by decreasing mean rating for group ``g``."""
    model.check_group(g)
    rem = unrated_items(model, rated)
    return rem[_rank(model.mu[g, rem])]


def _discounts(beta: float, m: int) -> np.ndarray:
    return float(beta) ** np.arange(1, m + 1, dtype=np.float64)


def future_reward(model: GroupModel, rated, g: int, beta: float) -> float:
    """Discounted reward of presenting group ``g``'s best unrated items in order."""
    order = ranked_items(model, rated, g)
    return float(_discounts(beta, order.size) @ model.mu[g, order])


def future_loss(model: GroupModel, rated, g: int, h: int, beta: float) -> float:
    """Discounted loss for a group-``g`` user served group ``h``'s ranking."""
    own = ranked_items(model, rated, g)
    acted = ranked_items(model, rated, h)
    diff = np.abs(model.mu[g, own] - model.mu[g, acted])
    return float(_discounts(beta, own.size) @ diff)


def future_loss_matrix(model: GroupModel, rated, beta: float) -> np.ndarray:
    """``L[g, h] = future_loss(model, rated, g, h, beta)`` for all group pairs."""
    rem = unrated_items(model, rated)
    mu_rem = np.ascontiguousarray(model.mu[:, rem])
    order = np.stack([_rank(row) for row in mu_rem]) if rem.size else np.zeros((model.num_groups, 0), dtype=np.intp)
    return kernels.future_loss_matrix(mu_rem, order, _discounts(beta, rem.size))


def future_regret(model: GroupModel, rated, post: GroupPosterior, h: int, beta: float) -> float:
    """Posterior-weighted discounted loss of acting as if the user were in group ``h``."""
    model.check_group(h)
    return float(future_regret_vector(model, rated, post, beta)[h])


def future_regret_vector(model: GroupModel, rated, post: GroupPosterior, beta: float) -> np.ndarray:
    probs = post.probs if isinstance(post, GroupPosterior) else np.asarray(post)
    if probs.size != model.num_groups:
        raise ValueError("posterior length does not match the model's group count")
    if beta == 0.0:
        return np.zeros(model.num_groups)
    return probs @ future_loss_matrix(model, rated, beta)


def expected_posterior_linear(model: GroupModel, history: RatingHistory, item: int, g: int) -> float:
    """Posterior of ``g`` after a hypothetical rating of ``item`` at group ``g``'s mean."""
    model.check_group(g)
    _check_unrated(model, history, item)
    lp = log_posterior(model, history)
    cols = [item]
    e = kernels.linear_explore(
        lp,
        np.ascontiguousarray(model.mu[:, cols]),
        np.ascontiguousarray(model.half_log_sigma2[:, cols]),
        np.ascontiguousarray(model.inv_two_sigma2[:, cols]),
    )
    return float(e[g, 0])


def expected_posterior_mc(
    model: GroupModel, history: RatingHistory, item: int, g: int, samples: int, rng: np.random.Generator
) -> float:
    """Monte-Carlo estimate of ``E[P(g | D, item, R)]`` for ``R`` drawn from group ``g``.

    Consumes exactly ``samples`` standard normals from ``rng``.
    """
    model.check_group(g)
    _check_unrated(model, history, item)
    if samples < 1:
        raise ValueError("samples must be >= 1")
    z = rng.standard_normal(samples)
    lp = log_posterior(model, history)
    r = model.mu[g, item] + model.sigma[g, item] * z
    d = r[None, :] - model.mu[:, item][:, None]
    terms = (lp - model.half_log_sigma2[:, item])[:, None] - d * d * model.inv_two_sigma2[:, item][:, None]
    m = terms.max(axis=0)
    share = np.exp(terms[g] - m) / np.exp(terms - m).sum(axis=0)
    return float(share.mean())


def _check_unrated(model: GroupModel, history: RatingHistory, item: int) -> None:
    model.check_item(item)
    if item in history.rated:
        raise DuplicateItemError(f"item {item} already rated")


def _candidates(model: GroupModel, history: RatingHistory) -> np.ndarray:
    history.check_against(model)
    cand = unrated_items(model, history.rated)
    if cand.size == 0:
        raise ExhaustedItemsError("every item has already been rated")
    return cand


def lba_scores(model: GroupModel, history: RatingHistory, config: PolicyConfig):
    """Candidate items and their combined exploration/exploitation scores."""
    cand = _candidates(model, history)
    lp = log_posterior(model, history)
    probs = np.exp(lp)
    e = kernels.linear_explore(
        lp,
        np.ascontiguousarray(model.mu[:, cand]),
        np.ascontiguousarray(model.half_log_sigma2[:, cand]),
        np.ascontiguousarray(model.inv_two_sigma2[:, cand]),
    )
    j = future_regret_vector(model, history.rated, probs, config.beta)
    weight = (probs[:, None] * e) * (j[:, None] ** 2 + model.mu[:, cand])
    return cand, weight.sum(axis=0)


def explore_mc_scores(model: GroupModel, history: RatingHistory, config: PolicyConfig, rng: np.random.Generator):
    """Candidate items and their Monte-Carlo pure-exploration scores.

    Draws ``(len(candidates), num_groups, mc_samples)`` standard normals,
    candidate-major, so results match calling :func:`expected_posterior_mc`
    for each (candidate, group) pair in order with the same generator.
    """
    cand = _candidates(model, history)
    lp = log_posterior(model, history)
    probs = np.exp(lp)
    G = model.num_groups
    z = rng.standard_normal((cand.size, G, config.mc_samples))
    if config.mc_prune:
        g_idx = np.flatnonzero(probs >= MC_PRUNE_WEIGHT)
        h_idx = np.flatnonzero(lp >= lp.max() - MC_PRUNE_LOG_GAP)
    else:
        g_idx = h_idx = np.arange(G)
    e = kernels.mc_explore(
        lp,
        np.ascontiguousarray(model.mu[:, cand]),
        np.ascontiguousarray(model.sigma[:, cand]),
        np.ascontiguousarray(model.half_log_sigma2[:, cand]),
        np.ascontiguousarray(model.inv_two_sigma2[:, cand]),
        z,
        g_idx,
        h_idx,
    )
    return cand, probs[g_idx] @ e


def _argmax(cand: np.ndarray, scores: np.ndarray, tie_break: str, rng) -> int:
    best = np.max(scores)
    if tie_break == "random":
        if rng is None:
            raise ValueError("tie_break='random' needs an rng")
        ties = cand[scores == best]
        return int(ties[rng.integers(ties.size)]) if ties.size > 1 else int(ties[0])
    return int(cand[int(np.argmax(scores))])


def select_item_lba(model: GroupModel, history: RatingHistory, config: PolicyConfig, rng=None) -> int:
    """Next item under the combined exploration/exploitation rule."""
    cand, scores = lba_scores(model, history, config)
    return _argmax(cand, scores, config.tie_break, rng)


def select_item_explore_mc(model: GroupModel, history: RatingHistory, config: PolicyConfig, rng) -> int:
    """Next item under Monte-Carlo pure exploration."""
    cand, scores = explore_mc_scores(model, history, config, rng)
    return _argmax(cand, scores, config.tie_break, rng)


def select_item(model: GroupModel, history: RatingHistory, config: PolicyConfig, rng=None) -> int:
    if config.mode == "explore_mc":
        return select_item_explore_mc(model, history, config, rng)
    return select_item_lba(model, history, config, rng)


def item_scores(model: GroupModel, history: RatingHistory, config: PolicyConfig, rng=None) -> list[ItemScore]:
    """Per-candidate scores for diagnostics, in ascending item order."""
    if config.mode == "explore_mc":
        cand, scores = explore_mc_scores(model, history, config, rng)
    else:
        cand, scores = lba_scores(model, history, config)
    return [ItemScore(int(v), float(s)) for v, s in zip(cand, scores)]
