"""Ingestion, splits, bi-scaling and the synthetic generator."""

import numpy as np
import pytest

from debias_mf.data import (PropensityGroundTruth, RatingDataset, biscale,
                            generate_synthetic, inverse_biscale, load_movielens,
                            load_ratings_csv, load_synthetic, save_ratings_csv,
                            save_synthetic, split)
from debias_mf.errors import DataError

from conftest import random_dataset


class TestRatingDataset:
    def test_density_is_exact(self):
        ds = RatingDataset(num_users=4, num_items=5, users=[0, 1, 2, 3],
                           items=[0, 1, 2, 3], ratings=[1.0, 2.0, 3.0, 4.0])
        assert ds.density == 4 / 20

    def test_duplicate_pair_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            RatingDataset(num_users=2, num_items=2, users=[0, 0],
                          items=[1, 1], ratings=[1.0, 2.0])

    def test_index_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="out of range"):
            RatingDataset(num_users=2, num_items=2, users=[0, 2],
                          items=[0, 1], ratings=[1.0, 2.0])

    def test_groupings_are_consistent(self):
        ds = random_dataset(12, 9, 0.4, seed=3)
        indptr, items, ratings = ds.by_user()
        for i in range(ds.num_users):
            got = set(items[indptr[i]:indptr[i + 1]].tolist())
            expected = set(ds.items[ds.users == i].tolist())
            assert got == expected
        assert indptr[-1] == len(ds)


class TestLoadMovielens:
    def test_tiny_file_statistics(self, tiny_ml100k):
        ds = load_movielens(tiny_ml100k, format="ml100k")
        assert ds.num_users == 4
        assert ds.num_items == 3
        assert len(ds) == 9
        assert ds.density == 9 / 12

    def test_reindexing_is_dense_and_sorted(self, tiny_ml100k):
        ds = load_movielens(tiny_ml100k, format="ml100k")
        assert set(np.unique(ds.users)) == {0, 1, 2, 3}
        assert set(np.unique(ds.items)) == {0, 1, 2}
        # raw user 1 -> 0, raw item 10 -> 0; its rating was 4
        first = (ds.users == 0) & (ds.items == 0)
        assert ds.ratings[first] == pytest.approx([4.0])

    def test_ml1m_separator(self, tmp_path):
        path = tmp_path / "ratings.dat"
        path.write_text("1::5::3::978300760\n2::5::4::978302109\n")
        ds = load_movielens(path, format="ml1m")
        assert ds.num_users == 2 and ds.num_items == 1

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "u.data"
        path.write_text("1\t2\t3\t4\nbroken line\n")
        with pytest.raises(DataError, match="line 2"):
            load_movielens(path, format="ml100k")

    def test_empty_file_is_an_error(self, tmp_path):
        path = tmp_path / "u.data"
        path.write_text("")
        with pytest.raises(DataError, match="no ratings"):
            load_movielens(path, format="ml100k")

    def test_duplicates_keep_last_and_warn(self, tmp_path):
        path = tmp_path / "u.data"
        path.write_text("1\t10\t2\t0\n1\t10\t5\t1\n2\t10\t3\t2\n")
        with pytest.warns(UserWarning, match="1 duplicate"):
            ds = load_movielens(path, format="ml100k")
        assert len(ds) == 2
        assert ds.ratings[(ds.users == 0)] == pytest.approx([5.0])

    def test_keep_list_filters_before_reindex(self, tiny_ml100k):
        ds = load_movielens(tiny_ml100k, format="ml100k", keep_items={10, 30})
        assert ds.num_items == 2
        assert len(ds) == 6

    def test_unknown_format(self, tiny_ml100k):
        with pytest.raises(DataError, match="format"):
            load_movielens(tiny_ml100k, format="ml10m")


class TestSplit:
    def test_singletons_all_land_in_train(self):
        ds = RatingDataset(num_users=5, num_items=5, users=range(5),
                           items=range(5), ratings=np.ones(5))
        pair = split(ds, 0.8, seed=0)
        assert len(pair.train) == 5
        assert len(pair.test) == 0

    def test_partition_and_coverage(self):
        ds = random_dataset(60, 40, 0.08, seed=1)
        pair = split(ds, 0.8, seed=7)
        key = lambda d: set(zip(d.users.tolist(), d.items.tolist()))
        train_keys, test_keys = key(pair.train), key(pair.test)
        assert train_keys | test_keys == key(ds)
        assert not (train_keys & test_keys)
        assert (pair.train.user_counts() > 0).all()
        assert (pair.train.item_counts() > 0).all()

    def test_train_size_within_repair_bound(self):
        ds = random_dataset(50, 30, 0.1, seed=2)
        pair = split(ds, 0.8, seed=3)
        target = round(0.8 * len(ds))
        assert abs(len(pair.train) - target) <= ds.num_users + ds.num_items

    @pytest.mark.parametrize("fraction", [0.0, 1.0, 1.5, -0.1])
    def test_bad_fraction_is_an_error(self, fraction):
        ds = random_dataset(5, 5, 0.5, seed=0)
        with pytest.raises(DataError, match="train_fraction"):
            split(ds, fraction, seed=0)

    def test_uncovered_item_is_an_error(self):
        # item index 2 exists but has no ratings
        ds = RatingDataset(num_users=2, num_items=3, users=[0, 1],
                           items=[0, 1], ratings=[1.0, 2.0])
        with pytest.raises(DataError, match="item with no ratings"):
            split(ds, 0.5, seed=0)

    def test_seeded_split_is_reproducible(self):
        ds = random_dataset(40, 25, 0.15, seed=4)
        a = split(ds, 0.8, seed=11)
        b = split(ds, 0.8, seed=11)
        assert np.array_equal(a.train.users, b.train.users)
        assert np.array_equal(a.train.items, b.train.items)


class TestBiscale:
    def test_standardized_matrix_is_a_fixed_point(self):
        values = np.array([[1.0, -1.0], [-1.0, 1.0]])
        users, items = np.nonzero(np.ones((2, 2), dtype=bool))
        ds = RatingDataset(num_users=2, num_items=2, users=users, items=items,
                           ratings=values[users, items])
        scaled, record = biscale(ds, tol=1e-8, max_sweeps=10)
        assert record.converged
        assert record.num_sweeps == 1
        np.testing.assert_allclose(scaled.ratings, ds.ratings, atol=1e-8)

    def test_dense_3x3_means_go_to_zero(self):
        values = np.arange(1.0, 10.0).reshape(3, 3)
        users, items = np.nonzero(np.ones((3, 3), dtype=bool))
        ds = RatingDataset(num_users=3, num_items=3, users=users, items=items,
                           ratings=values[users, items])
        scaled, record = biscale(ds, tol=1e-8, max_sweeps=100)
        dense = np.zeros((3, 3))
        dense[users, items] = scaled.ratings
        np.testing.assert_allclose(dense.mean(axis=1), 0.0, atol=1e-7)
        np.testing.assert_allclose(dense.mean(axis=0), 0.0, atol=1e-7)

    def test_singleton_row_scale_is_clamped(self):
        ds = RatingDataset(num_users=2, num_items=2, users=[0, 1, 1],
                           items=[0, 0, 1], ratings=[7.0, 1.0, 3.0])
        scaled, record = biscale(ds, tol=1e-10, max_sweeps=5)
        assert record.sweeps[0].row_clamped[0]
        assert record.sweeps[0].row_scale[0] == 1.0
        assert record.any_clamped()

    def test_inverse_recovers_observed_entries(self):
        ds = random_dataset(15, 12, 0.4, seed=9)
        scaled, record = biscale(ds, tol=1e-10, max_sweeps=40)
        back = inverse_biscale(scaled, record)
        np.testing.assert_allclose(back.ratings, ds.ratings, atol=1e-10)

    def test_empty_column_is_an_error(self):
        ds = RatingDataset(num_users=2, num_items=2, users=[0, 1],
                           items=[0, 0], ratings=[1.0, 2.0])
        with pytest.raises(DataError, match="every row and column"):
            biscale(ds, tol=1e-8, max_sweeps=3)


class TestGenerateSynthetic:
    def test_propensity_one_is_fully_observed(self):
        p = PropensityGroundTruth(np.ones(8))
        ds, _ = generate_synthetic(10, 8, 2, p, seed=0)
        assert ds.density == 1.0

    def test_observation_counts_follow_binomial_bounds(self):
        m = 2000
        p = PropensityGroundTruth(np.full(50, 0.5))
        ds, _ = generate_synthetic(m, 50, 3, p, seed=123)
        counts = ds.item_counts()
        sigma = np.sqrt(m * 0.25)
        assert np.all(np.abs(counts - m * 0.5) <= 4 * sigma)

    def test_noiseless_entries_match_factors(self):
        p = PropensityGroundTruth(np.full(6, 0.7))
        ds, truth = generate_synthetic(9, 6, 2, p, noise_sd=0.0, seed=5)
        full = truth.full_matrix()
        np.testing.assert_array_equal(ds.ratings, full[ds.users, ds.items])

    def test_seeded_generation_is_bit_reproducible(self):
        p = PropensityGroundTruth(np.full(6, 0.4))
        a, _ = generate_synthetic(20, 6, 2, p, noise_sd=0.3, seed=42)
        b, _ = generate_synthetic(20, 6, 2, p, noise_sd=0.3, seed=42)
        assert np.array_equal(a.ratings, b.ratings)
        assert np.array_equal(a.users, b.users)

    def test_rank_larger_than_grid_is_an_error(self):
        p = PropensityGroundTruth(np.full(4, 0.5))
        with pytest.raises(DataError, match="rank"):
            generate_synthetic(3, 4, 5, p, seed=0)

    def test_hopeless_propensity_is_an_error(self):
        p = PropensityGroundTruth(np.array([0.5, 1e-15]))
        with pytest.raises(DataError, match="zero observations"):
            generate_synthetic(4, 2, 1, p, seed=0)

    def test_propensity_validation(self):
        with pytest.raises(ValueError, match=r"\(0, 1\]"):
            PropensityGroundTruth(np.array([0.5, 0.0]))
        with pytest.raises(ValueError, match=r"\(0, 1\]"):
            PropensityGroundTruth(np.array([0.5, 1.2]))


class TestSerialization:
    def test_ratings_csv_round_trip(self, tmp_path):
        ds = random_dataset(7, 5, 0.5, seed=1)
        path = tmp_path / "r.csv"
        save_ratings_csv(ds, path)
        back = load_ratings_csv(path, num_users=7, num_items=5)
        assert np.array_equal(back.users, ds.users)
        assert np.array_equal(back.ratings, ds.ratings)

    def test_synthetic_round_trip(self, tmp_path):
        p = PropensityGroundTruth(np.full(5, 0.8))
        ds, truth = generate_synthetic(6, 5, 2, p, noise_sd=0.1, seed=3)
        save_synthetic(ds, truth, tmp_path / "r.csv", tmp_path / "t.json")
        ds2, truth2 = load_synthetic(tmp_path / "r.csv", tmp_path / "t.json")
        assert np.array_equal(ds2.ratings, ds.ratings)
        np.testing.assert_array_equal(truth2.user_factors, truth.user_factors)
        np.testing.assert_array_equal(
            truth2.propensity.per_item_probability, p.per_item_probability)

    def test_csv_header_is_validated(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(DataError, match="header"):
            load_ratings_csv(path)
