import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentbandit.errors import DuplicateItemError, SchemaError
from latentbandit.model import (
    GroupModel,
    GroupPosterior,
    RatingHistory,
    dumps_model,
    hypothetical_posterior,
    load_model,
    log_likelihood,
    posterior,
    save_model,
)

from . import oracles
from .conftest import random_model

# 1 / (1 + exp(-0.5)), confirmed by oracles.direct_posterior
P_TWO_GROUP = (0.6224593312018546, 0.37754066879814546)


@st.composite
def model_and_history(draw, max_groups=5, max_items=8, rating_range=(-2.0, 8.0)):
    groups = draw(st.integers(1, max_groups))
    items = draw(st.integers(1, max_items))
    seed = draw(st.integers(0, 2**32 - 1))
    model = random_model(np.random.default_rng(seed), groups, items)
    chosen = draw(st.lists(st.integers(0, items - 1), unique=True, max_size=items))
    ratings = draw(st.lists(st.floats(*rating_range), min_size=len(chosen), max_size=len(chosen)))
    return model, RatingHistory(tuple(zip(chosen, ratings)))


class TestGroupModel:
    def test_variance_floor_applied(self):
        m = GroupModel(np.zeros((2, 3)), np.array([[0.0, 0.01, 1.0], [2.0, 0.05, 0.049]]))
        assert m.sigma2.min() == pytest.approx(0.05)
        assert m.sigma2[1, 0] == 2.0
        assert m.variance_floor == 0.05

    def test_custom_floor(self):
        m = GroupModel(np.zeros((1, 1)), np.zeros((1, 1)), variance_floor=1e-6)
        assert m.sigma2[0, 0] == 1e-6

    @pytest.mark.parametrize(
        "mu, s2",
        [
            (np.zeros((0, 3)), np.ones((0, 3))),
            (np.zeros((2, 0)), np.ones((2, 0))),
            (np.zeros((2, 3)), np.ones((3, 2))),
            (np.zeros(3), np.ones(3)),
        ],
    )
    def test_bad_shapes(self, mu, s2):
        with pytest.raises(ValueError):
            GroupModel(mu, s2)

    def test_immutable(self, two_group_model):
        with pytest.raises(ValueError):
            two_group_model.mu[0, 0] = 3.0

    def test_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(5)
        m = GroupModel(
            rng.normal(size=(3, 7)) * 1e3,
            rng.uniform(0.1, 3, (3, 7)),
            rating_scale=(-10, 10),
            item_labels=[f"i{k}" for k in range(7)],
            group_labels=["a", "b", "c"],
            metadata={"note": "x"},
        )
        path = tmp_path / "m.json"
        save_model(m, path)
        back = load_model(path)
        assert back.mu.tobytes() == m.mu.tobytes()
        assert back.sigma2.tobytes() == m.sigma2.tobytes()
        assert back.item_labels == m.item_labels and back.group_labels == m.group_labels
        assert back.rating_scale == (-10.0, 10.0)
        assert dumps_model(back) == dumps_model(m)

    def test_load_rejects_other_files(self, tmp_path):
        p = tmp_path / "x.json"
        p.write_text('{"format": "something"}')
        with pytest.raises(SchemaError):
            load_model(p)

    def test_shift_recorded(self, two_group_model):
        shifted = two_group_model.shifted(10.0)
        assert shifted.mu[1, 0] == 11.0
        assert shifted.metadata["rating_shift"] == 10.0
        assert np.array_equal(shifted.sigma2, two_group_model.sigma2)


class TestRatingHistory:
    def test_duplicate_item_rejected(self):
        with pytest.raises(DuplicateItemError):
            RatingHistory(((0, 1.0), (0, 2.0)))
        h = RatingHistory(((0, 1.0),))
        with pytest.raises(DuplicateItemError):
            h.append(0, 3.0)

    def test_append_does_not_mutate(self):
        h = RatingHistory(((1, 2.0),))
        h2 = h.append(3, 4.0)
        assert len(h) == 1 and len(h2) == 2
        assert h2.rated == {1, 3}


class TestLogLikelihood:
    def test_empty_history_is_zero(self, two_group_model):
        assert log_likelihood(two_group_model, RatingHistory(), 0) == 0.0
        assert log_likelihood(two_group_model, RatingHistory(), 1) == 0.0

    def test_two_group_value(self, two_group_model):
        h = RatingHistory(((0, 0.0),))
        assert log_likelihood(two_group_model, h, 1) == pytest.approx(-0.5, abs=1e-15)
        assert log_likelihood(two_group_model, h, 0) == 0.0

    def test_matches_loop(self):
        m = random_model(np.random.default_rng(2), 3, 5)
        h = RatingHistory(((4, 2.5), (0, 1.0), (2, 4.4)))
        for g in range(3):
            want = sum(
                -0.5 * math.log(m.sigma2[g, v]) - (r - m.mu[g, v]) ** 2 / (2 * m.sigma2[g, v]) for v, r in h
            )
            assert log_likelihood(m, h, g) == pytest.approx(want, rel=1e-14)

    def test_additive_single_group(self):
        m = random_model(np.random.default_rng(3), 1, 6)
        h = RatingHistory(((5, 1.0), (1, 3.0), (2, 9.0)))
        parts = sum(log_likelihood(m, RatingHistory((obs,)), 0) for obs in h)
        assert log_likelihood(m, h, 0) == pytest.approx(parts, rel=1e-14)

    def test_index_errors(self, two_group_model):
        with pytest.raises(IndexError):
            log_likelihood(two_group_model, RatingHistory(), 2)
        with pytest.raises(IndexError):
            log_likelihood(two_group_model, RatingHistory(((1, 0.0),)), 0)
        with pytest.raises(IndexError):
            posterior(two_group_model, RatingHistory(((5, 0.0),)))


class TestPosterior:
    def test_uniform_prior(self):
        m = random_model(np.random.default_rng(1), 4, 3)
        assert np.array_equal(posterior(m, RatingHistory()).probs, np.full(4, 0.25))

    def test_two_group_example(self, two_group_model):
        got = posterior(two_group_model, RatingHistory(((0, 0.0),))).probs
        want = oracles.direct_posterior([[0.0], [1.0]], [[1.0], [1.0]], [(0, 0.0)])
        assert got == pytest.approx(want, abs=1e-12)
        assert got == pytest.approx(P_TWO_GROUP, abs=1e-12)

    def test_identical_rows_symmetric(self):
        m = GroupModel(np.array([[2.0, 3.0], [2.0, 3.0]]), np.array([[0.5, 1.0], [0.5, 1.0]]))
        for h in [RatingHistory(((0, 7.0),)), RatingHistory(((1, -3.0), (0, 2.2)))]:
            assert np.array_equal(posterior(m, h).probs, [0.5, 0.5])

    def test_single_group_exactly_one(self):
        m = random_model(np.random.default_rng(4), 1, 5)
        assert posterior(m, RatingHistory(((0, 100.0), (3, -50.0)))).probs.tolist() == [1.0]

    def test_huge_likelihood_gap(self):
        # group 1 is about 1e4 nats behind group 0
        m = GroupModel(np.array([[0.0], [100.0]]), np.array([[0.5], [0.5]]))
        p = posterior(m, RatingHistory(((0, 0.0),))).probs
        assert np.all(np.isfinite(p))
        assert p[0] == 1.0 and p[1] == 0.0

    @given(model_and_history())
    @settings(max_examples=200, deadline=None)
    def test_normalized(self, mh):
        m, h = mh
        p = posterior(m, h).probs
        assert abs(p.sum() - 1.0) <= 1e-9
        assert np.all(p >= 0) and np.all(np.isfinite(p))

    @given(model_and_history(), st.randoms(use_true_random=False))
    @settings(max_examples=200, deadline=None)
    def test_order_invariant(self, mh, rnd):
        m, h = mh
        obs = list(h)
        rnd.shuffle(obs)
        a = posterior(m, h).probs
        b = posterior(m, RatingHistory(tuple(obs))).probs
        assert np.max(np.abs(a - b)) <= 1e-12

    @given(model_and_history(rating_range=(0.0, 6.0)))
    @settings(max_examples=200, deadline=None)
    def test_direct_space_equivalence(self, mh):
        m, h = mh
        mu, s2 = oracles.as_lists(m)
        L = [sum((r - mu[g][v]) ** 2 / (2 * s2[g][v]) for v, r in h) for g in range(m.num_groups)]
        if max(abs(x) for x in L) > 30:
            return
        want = oracles.direct_posterior(mu, s2, list(h))
        assert np.max(np.abs(posterior(m, h).probs - want)) <= 1e-9


class TestHypotheticalPosterior:
    def test_two_group_example(self, two_group_model):
        p = hypothetical_posterior(two_group_model, RatingHistory(), 0, 0.0).probs
        assert p == pytest.approx(P_TWO_GROUP, abs=1e-12)

    def test_identical_groups_uniform(self, identical_groups_model):
        p = hypothetical_posterior(identical_groups_model, RatingHistory(((1, 3.0),)), 4, -2.0).probs
        assert np.array_equal(p, np.full(4, 0.25))

    def test_duplicate_rejected(self, two_group_model):
        with pytest.raises(DuplicateItemError):
            hypothetical_posterior(two_group_model, RatingHistory(((0, 1.0),)), 0, 2.0)

    @given(model_and_history(max_items=6), st.floats(-3, 9), st.data())
    @settings(max_examples=150, deadline=None)
    def test_equals_extended_posterior(self, mh, rating, data):
        m, h = mh
        free = [v for v in range(m.num_items) if v not in h.rated]
        if not free:
            return
        item = data.draw(st.sampled_from(free))
        before = h.observations
        got = hypothetical_posterior(m, h, item, rating).probs
        assert h.observations == before
        want = posterior(m, h.append(item, rating)).probs
        assert np.array_equal(got, want)


class TestGroupPosterior:
    def test_argmax_ties_lowest(self):
        assert GroupPosterior(np.array([0.25, 0.375, 0.375])).argmax() == 1
        assert GroupPosterior.uniform(5).argmax() == 0

    @pytest.mark.parametrize("bad", [[0.5, 0.6], [1.5, -0.5], [np.nan, 1.0]])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            GroupPosterior(np.array(bad))
