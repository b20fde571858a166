"""Latent-bandit item selection for onboarding new users of a recommender.

A new user belongs to one of a few latent groups whose per-item rating
distributions are known. The bandit keeps a posterior over the user's group
and picks the next item to rate by trading off how much the rating would
sharpen that posterior against how well the user is expected to rate it.
"""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    GroupModel,
    GroupPosterior,
    RatingHistory,
    hypothetical_posterior,
    load_model,
    log_likelihood,
    posterior,
    save_model,
)
from .policy import (  # noqa: E402
    ItemScore,
    PolicyConfig,
    expected_posterior_linear,
    expected_posterior_mc,
    future_loss,
    future_regret,
    future_reward,
    ranked_items,
    select_item_explore_mc,
    select_item_lba,
)

__all__ = [
    "GroupModel",
    "GroupPosterior",
    "RatingHistory",
    "ItemScore",
    "PolicyConfig",
    "expected_posterior_linear",
    "expected_posterior_mc",
    "future_loss",
    "future_regret",
    "future_reward",
    "hypothetical_posterior",
    "load_model",
    "log_likelihood",
    "posterior",
    "ranked_items",
    "save_model",
    "select_item_explore_mc",
    "select_item_lba",
]
