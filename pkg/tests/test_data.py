import numpy as np
import pytest

from latentbandit.data import (
    ClusteringConfig,
    RatingsFormatError,
    RatingsTable,
    build_model,
    cluster_users,
    estimate_model,
    kmeans,
    load_ratings,
    synth_model,
    train_holdout_split,
    write_ratings,
)


def _write(tmp_path, text, name="r.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _table(users, items, ratings, scale=(1.0, 5.0)):
    uids = sorted(set(users))
    iids = sorted(set(items))
    return RatingsTable(
        uids,
        iids,
        np.array([uids.index(u) for u in users]),
        np.array([iids.index(v) for v in items]),
        np.array(ratings, dtype=float),
        scale,
    )


class TestLoadRatings:
    def test_empty_file(self, tmp_path):
        t = load_ratings(_write(tmp_path, ""))
        assert len(t) == 0 and t.num_users == 0

    def test_three_rows(self, tmp_path):
        t = load_ratings(_write(tmp_path, "user_id,item_id,rating\nu1,a,4\nu2,a,2.5\nu1,b,1\n"), scale=(1, 5))
        assert t.user_ids == ["u1", "u2"] and t.item_ids == ["a", "b"]
        assert t.users.tolist() == [0, 1, 0] and t.items.tolist() == [0, 0, 1]
        assert t.ratings.tolist() == [4.0, 2.5, 1.0]

    def test_out_of_scale_names_line(self, tmp_path):
        p = _write(tmp_path, "user_id,item_id,rating\nu1,a,4\nu1,b,6\n")
        with pytest.raises(RatingsFormatError) as err:
            load_ratings(p, scale=(1, 5))
        assert err.value.line == 3 and ":3:" in str(err.value)

    @pytest.mark.parametrize("body", ["u1,a\n", "u1,a,x\n", "u1,a,nan\n"])
    def test_bad_rows(self, tmp_path, body):
        with pytest.raises(RatingsFormatError):
            load_ratings(_write(tmp_path, "user_id,item_id,rating\n" + body))

    def test_bad_header(self, tmp_path):
        with pytest.raises(RatingsFormatError):
            load_ratings(_write(tmp_path, "a,b,c\n1,2,3\n"))

    def test_duplicates_keep_first(self, tmp_path, caplog):
        t = load_ratings(_write(tmp_path, "user_id,item_id,rating\nu,a,1\nu,a,5\n"))
        assert t.ratings.tolist() == [1.0] and t.duplicates == 1
        assert "duplicate" in caplog.text

    def test_write_round_trip(self, tmp_path):
        t = _table(["x", "y", "x"], ["p", "p", "q"], [1.25, 3.0, 4.5])
        write_ratings(t, tmp_path / "o.csv")
        back = load_ratings(tmp_path / "o.csv")
        assert back.ratings.tolist() == t.ratings.tolist()
        assert np.array_equal(back.dense(), t.dense(), equal_nan=True)

    def test_holdout_split(self):
        t = _table([f"u{k}" for k in range(10)], ["a"] * 10, np.arange(10))
        train, hold = train_holdout_split(t, 0.3, np.random.default_rng(0))
        assert train.num_users == 7 and hold.num_users == 3
        assert not set(train.user_ids) & set(hold.user_ids)


def _blobs(rng, k=3, per=40, items=6, sep=4.0):
    centers = rng.uniform(0, 1, (k, items)) * sep * 3
    rows, labels = [], []
    for j in range(k):
        rows.append(centers[j] + rng.normal(scale=0.3, size=(per, items)))
        labels += [j] * per
    return np.vstack(rows), np.array(labels)


def _dense_table(x):
    u, v = np.indices(x.shape)
    return RatingsTable(list(range(x.shape[0])), list(range(x.shape[1])), u.ravel(), v.ravel(), x.ravel(), None)


def _agreement(a, b, k):
    from itertools import permutations

    return max(np.mean(np.array(p)[a] == b) for p in permutations(range(k)))


class TestClustering:
    def test_k_one(self):
        t = _dense_table(np.random.default_rng(0).normal(size=(5, 3)))
        assert cluster_users(t, ClusteringConfig(k=1)).tolist() == [0] * 5

    def test_k_exceeds_users(self):
        t = _dense_table(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            cluster_users(t, ClusteringConfig(k=3))

    def test_recovers_blobs(self):
        x, y = _blobs(np.random.default_rng(1))
        got = cluster_users(_dense_table(x), ClusteringConfig(k=3, seed=2))
        assert _agreement(got, y, 3) >= 0.99

    def test_duplicate_users_same_label(self):
        x, _ = _blobs(np.random.default_rng(3))
        x = np.vstack([x, x[:5]])
        got = cluster_users(_dense_table(x), ClusteringConfig(k=3))
        assert np.array_equal(got[-5:], got[:5])

    def test_wcss_non_increasing(self):
        x, _ = _blobs(np.random.default_rng(4), k=5, sep=1.0)
        for s in range(5):
            h = kmeans(x, 5, np.random.default_rng(s)).history
            assert all(b <= a + 1e-9 for a, b in zip(h, h[1:]))

    def test_deterministic_and_canonical(self):
        x, _ = _blobs(np.random.default_rng(5))
        a = cluster_users(_dense_table(x), ClusteringConfig(k=3, seed=7))
        b = cluster_users(_dense_table(x), ClusteringConfig(k=3, seed=7))
        assert np.array_equal(a, b) and a[0] == 0


class TestEstimateModel:
    def test_two_ratings(self):
        t = _table(["a", "b"], ["i", "i"], [2.0, 4.0])
        m = estimate_model(t, np.array([0, 0]), min_item_support=2)
        assert m.mu[0, 0] == 3.0 and m.sigma2[0, 0] == 2.0

    def test_single_rating_gets_floor(self):
        t = _table(["a"], ["i"], [2.0])
        m = estimate_model(t, np.array([0]), min_item_support=1)
        assert m.mu[0, 0] == 2.0 and m.sigma2[0, 0] == 0.05
        assert m.metadata["single_rating_cells"] == 1

    def test_low_support_falls_back_to_item(self):
        t = _table(["a", "b", "c"], ["i", "i", "i"], [1.0, 3.0, 5.0])
        m = estimate_model(t, np.array([0, 0, 1]), min_item_support=2)
        assert m.mu[0, 0] == 2.0 and m.mu[1, 0] == 3.0 and m.sigma2[1, 0] == 4.0
        assert m.metadata["fallback_cells"] == 1

    def test_recovers_generating_model(self):
        truth = synth_model(3, 5, 2.0, np.random.default_rng(6))
        rng = np.random.default_rng(7)
        n = 4000
        labels = np.repeat(np.arange(3), n)
        x = truth.mu[labels] + rng.standard_normal((3 * n, 5)) * truth.sigma[labels]
        m = estimate_model(_dense_table(x), labels)
        se = truth.sigma / np.sqrt(n)
        assert np.all(np.abs(m.mu - truth.mu) <= 4 * se)
        assert np.all(np.abs(m.sigma2 - truth.sigma2) <= 0.1 * truth.sigma2)

    def test_build_model_metadata(self):
        x, _ = _blobs(np.random.default_rng(8))
        m = build_model(_dense_table(x), ClusteringConfig(k=3))
        assert m.num_groups == 3 and sum(m.metadata["clustering"]["group_sizes"]) == x.shape[0]


class TestSynthModel:
    def test_deterministic(self):
        a = synth_model(4, 7, 1.0, np.random.default_rng(0))
        b = synth_model(4, 7, 1.0, np.random.default_rng(0))
        assert np.array_equal(a.mu, b.mu) and np.array_equal(a.sigma2, b.sigma2)

    def test_zero_separation_identical(self):
        m = synth_model(4, 7, 0.0, np.random.default_rng(1))
        assert np.all(m.mu == m.mu[0]) and np.all(m.sigma2 == m.sigma2[0])

    def test_large_separation_spreads_groups(self):
        m = synth_model(4, 50, 5.0, np.random.default_rng(2))
        gaps = np.abs(m.mu[:, None, :] - m.mu[None, :, :]).mean(axis=2)
        off = gaps[~np.eye(4, dtype=bool)]
        assert off.min() > 1.0
        assert (m.mu.max(axis=0) - m.mu.min(axis=0)).max() <= 5.0

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            synth_model(2, 2, -1.0, np.random.default_rng(0))
