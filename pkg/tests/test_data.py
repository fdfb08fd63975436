import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cvib.data import (
    FormatError,
    InteractionTable,
    SplitSpec,
    generate_synthetic_mnar,
    load_dense_matrix,
    load_matrix_format,
    load_triplet_format,
    sample_counterfactual_batch,
    split_train_validation,
    write_dense_matrix,
    write_triplet_format,
)


def write(tmp_path, text, name="data.txt"):
    path = tmp_path / name
    path.write_text(text)
    return path


def random_table(rng, num_users, num_items, n_obs):
    flat = rng.choice(num_users * num_items, size=n_obs, replace=False)
    return InteractionTable(num_users, num_items, flat // num_items, flat % num_items,
                            rng.integers(0, 2, n_obs))


class TestMatrixLoader:
    def test_toy_table(self, tmp_path):
        table = load_matrix_format(write(tmp_path, "4 0 0\n1 0 5\n"))
        assert (table.num_users, table.num_items) == (2, 3)
        assert table.n_observed == 3
        assert sorted(table.y.tolist()) == [0, 1, 1]
        assert table.positive_rate() == pytest.approx(2 / 3)
        assert table.n_unobserved == 3

    def test_all_zero(self, tmp_path):
        table = load_matrix_format(write(tmp_path, "0 0\n0 0\n"))
        assert table.n_observed == 0
        assert table.n_unobserved == 4

    def test_threshold_boundary(self, tmp_path):
        assert load_matrix_format(write(tmp_path, "3\n")).y.tolist() == [1]
        assert load_matrix_format(write(tmp_path, "2\n")).y.tolist() == [0]

    def test_ragged_rows(self, tmp_path):
        with pytest.raises(FormatError, match="line 2"):
            load_matrix_format(write(tmp_path, "1 2 3\n1 2\n"))

    def test_out_of_range_value(self, tmp_path):
        with pytest.raises(FormatError, match="line 1, column 2"):
            load_matrix_format(write(tmp_path, "1 6 3\n"))

    def test_non_integer(self, tmp_path):
        with pytest.raises(FormatError, match="column 3"):
            load_matrix_format(write(tmp_path, "1 2 x\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FormatError, match="nope.txt"):
            load_matrix_format(tmp_path / "nope.txt")

    def test_empty_file(self, tmp_path):
        with pytest.raises(FormatError, match="empty"):
            load_matrix_format(write(tmp_path, ""))


class TestTripletLoader:
    def test_basic(self, tmp_path):
        table = load_triplet_format(write(tmp_path, "1 1 5\n1 2 1\n"))
        assert table.n_observed == 2
        assert table.y.tolist() == [1, 0]
        assert (table.num_users, table.num_items) == (1, 2)

    def test_empty_with_header(self, tmp_path):
        table = load_triplet_format(write(tmp_path, "#users=2 items=2 base=1\n"))
        assert table.n_observed == 0
        assert (table.num_users, table.num_items) == (2, 2)

    def test_binarization(self, tmp_path):
        table = load_triplet_format(write(tmp_path, "1 1 2\n1 2 3\n2 1 4\n"))
        assert table.y.tolist() == [0, 1, 1]

    def test_zero_based_header(self, tmp_path):
        table = load_triplet_format(write(tmp_path, "#users=3 items=3 base=0\n0 0 5\n2 2 1\n"))
        assert table.users.tolist() == [0, 2]
        assert table.num_users == 3

    def test_duplicate_event(self, tmp_path):
        with pytest.raises(FormatError, match="duplicate"):
            load_triplet_format(write(tmp_path, "1 1 5\n1 1 4\n"))

    @pytest.mark.parametrize("rating", [0, 6])
    def test_rating_range(self, tmp_path, rating):
        with pytest.raises(FormatError, match="outside 1..5"):
            load_triplet_format(write(tmp_path, f"1 1 {rating}\n"))

    def test_index_beyond_declared_universe(self, tmp_path):
        with pytest.raises(FormatError, match="universe"):
            load_triplet_format(write(tmp_path, "#users=1 items=1 base=1\n2 1 5\n"))

    def test_comments_are_skipped(self, tmp_path):
        text = "# produced by a test\n#users=2 items=2 base=1\n# another\n1 2 4\n"
        assert load_triplet_format(write(tmp_path, text)).n_observed == 1

    def test_round_trip(self, tmp_path):
        table = InteractionTable.from_ratings(4, 5, [0, 3, 2], [4, 0, 2], [1, 5, 3])
        path = tmp_path / "t.txt"
        write_triplet_format(table, path, comments=["seed = 3"])
        back = load_triplet_format(path)
        assert (back.num_users, back.num_items) == (4, 5)
        np.testing.assert_array_equal(back.users, table.users)
        np.testing.assert_array_equal(back.ratings, table.ratings)
        np.testing.assert_array_equal(back.y, table.y)

    def test_round_trip_binary_table(self, tmp_path):
        table = InteractionTable(3, 3, [0, 1], [1, 2], [1, 0])
        path = tmp_path / "t.txt"
        write_triplet_format(table, path)
        np.testing.assert_array_equal(load_triplet_format(path).y, [1, 0])

    def test_dense_sidecar_round_trip(self, tmp_path):
        mat = np.random.default_rng(0).random((3, 4))
        write_dense_matrix(mat, tmp_path / "m.txt")
        np.testing.assert_array_equal(load_dense_matrix(tmp_path / "m.txt"), mat)


class TestInteractionTable:
    def test_rejects_duplicates(self):
        with pytest.raises(ValueError, match="duplicate"):
            InteractionTable(2, 2, [0, 0], [1, 1], [1, 0])

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            InteractionTable(2, 2, [2], [0], [1])

    def test_immutable_arrays(self):
        table = InteractionTable(2, 2, [0], [1], [1])
        with pytest.raises(ValueError):
            table.users[0] = 1


class TestSplit:
    def test_sizes(self):
        table = random_table(np.random.default_rng(0), 5, 5, 10)
        train, val = split_train_validation(table, SplitSpec(0.30, 1))
        assert (train.n_observed, val.n_observed) == (7, 3)

    def test_coat_size(self):
        # 290 users rating 24 items each
        users = np.repeat(np.arange(290), 24)
        items = np.tile(np.arange(24), 290)
        table = InteractionTable(290, 300, users, items, np.ones(len(users)))
        _, val = split_train_validation(table, SplitSpec(0.30, 0))
        assert val.n_observed == 2088

    def test_deterministic(self):
        table = random_table(np.random.default_rng(0), 6, 6, 20)
        a = split_train_validation(table, SplitSpec(0.3, 5))
        b = split_train_validation(table, SplitSpec(0.3, 5))
        np.testing.assert_array_equal(a[1].flat_index, b[1].flat_index)

    def test_too_small(self):
        with pytest.raises(ValueError):
            split_train_validation(InteractionTable(2, 2, [0], [0], [1]))

    def test_default_fraction(self):
        assert SplitSpec().validation_fraction == 0.30

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 60), st.integers(0, 10_000), st.floats(0.05, 0.95))
    def test_partition(self, n_obs, seed, frac):
        table = random_table(np.random.default_rng(seed), 8, 8, n_obs)
        train, val = split_train_validation(table, SplitSpec(frac, seed))
        a, b = set(train.flat_index.tolist()), set(val.flat_index.tolist())
        assert not a & b
        assert a | b == set(table.flat_index.tolist())


class TestCounterfactualSampling:
    def test_fully_observed(self):
        table = InteractionTable(1, 2, [0, 0], [0, 1], [1, 0])
        with pytest.raises(ValueError):
            sample_counterfactual_batch(table, 1, np.random.default_rng(0))

    def test_complement_forced(self, tmp_path):
        table = load_matrix_format(write(tmp_path, "4 0 0\n1 0 5\n"))
        u, i = sample_counterfactual_batch(table, 3, np.random.default_rng(0))
        assert sorted(zip(u.tolist(), i.tolist())) == [(0, 1), (0, 2), (1, 1)]

    def test_uniform_frequencies(self):
        rng = np.random.default_rng(0)
        table = random_table(rng, 10, 10, 50)
        counts = np.zeros(100)
        for _ in range(10_000):
            u, i = sample_counterfactual_batch(table, 1, rng)
            counts[u * 10 + i] += 1
        freq = counts / 10_000
        unobserved = ~table.observed_mask().reshape(-1)
        assert np.all(freq[~unobserved] == 0)
        assert freq[unobserved].min() >= 0.014
        assert freq[unobserved].max() <= 0.026

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 40))
    def test_never_observed_and_distinct(self, seed, n_obs):
        rng = np.random.default_rng(seed)
        table = random_table(rng, 7, 9, n_obs)
        batch = int(rng.integers(1, table.n_unobserved + 1))
        u, i = sample_counterfactual_batch(table, batch, rng)
        flat = u * 9 + i
        assert len(flat) == batch
        assert len(set(flat.tolist())) == batch
        assert not set(flat.tolist()) & set(table.flat_index.tolist())


class TestSynthetic:
    def test_mar_degenerate(self):
        _, _, truth = generate_synthetic_mnar(30, 40, 4, 0.0, 0.1, 0)
        assert np.all(truth.policy_prob == 0.1)

    def test_rescaled_mean(self):
        _, _, truth = generate_synthetic_mnar(50, 50, 4, 5.0, 0.05, 0)
        assert truth.policy_prob.mean() == pytest.approx(0.05, rel=1e-9)
        assert np.all((truth.policy_prob > 0) & (truth.policy_prob < 1))
        assert np.all((truth.true_prob > 0) & (truth.true_prob < 1))

    def test_deterministic(self):
        a = generate_synthetic_mnar(40, 30, 4, 5.0, 0.05, 7)
        b = generate_synthetic_mnar(40, 30, 4, 5.0, 0.05, 7)
        for x, y in zip(a[:2], b[:2]):
            np.testing.assert_array_equal(x.flat_index, y.flat_index)
            np.testing.assert_array_equal(x.y, y.y)
        np.testing.assert_array_equal(a[2].true_prob, b[2].true_prob)

    def test_observed_ctr_exceeds_population(self):
        gaps = []
        for seed in range(10):
            train, _, truth = generate_synthetic_mnar(100, 100, 4, 5.0, 0.05, seed)
            gaps.append(train.positive_rate() - truth.outcomes.mean())
        assert np.mean(gaps) > 0

    def test_test_set_disjoint_from_train(self):
        train, test, truth = generate_synthetic_mnar(60, 60, 4, 5.0, 0.05, 1)
        assert not set(train.flat_index.tolist()) & set(test.flat_index.tolist())
        np.testing.assert_array_equal(test.y, truth.outcomes[test.users, test.items])

    def test_infeasible_rescale(self):
        # a target near 1 forces the cap onto most cells
        with pytest.raises(ValueError):
            generate_synthetic_mnar(20, 20, 4, 50.0, 0.9, 0)

    @pytest.mark.parametrize("kwargs", [
        dict(latent_dim=0), dict(policy_strength=-1.0), dict(target_observed_fraction=1.0),
    ])
    def test_bad_arguments(self, kwargs):
        args = dict(num_users=5, num_items=5, latent_dim=2, policy_strength=1.0,
                    target_observed_fraction=0.2, rng_seed=0)
        args.update(kwargs)
        with pytest.raises(ValueError):
            generate_synthetic_mnar(**args)
