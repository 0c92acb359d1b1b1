"""Dataset indexes, candidate sets vs brute force, triplet sampling, CSV."""

import numpy as np
import numpy.testing as npt
import pytest

from agecontrast.data import (FaceSample, LabeledDataset, has_triplet_negatives,
                              iter_epoch_batches, load_dataset, negative_set,
                              positive_set, sample_triplet_batch, save_dataset)
from agecontrast.errors import DatasetError

from conftest import make_dataset


def brute_positive(ds, a):
    return {j for j in range(len(ds))
            if ds.ages[j] == ds.ages[a] and ds.identities[j] != ds.identities[a]}


def brute_negative(ds, a):
    return {j for j in range(len(ds))
            if ds.ages[j] != ds.ages[a] and ds.identities[j] != ds.identities[a]}


class TestCandidateSets:
    def test_single_sample_dataset(self):
        ds = make_dataset([5], ["A"], num_ages=9)
        assert positive_set(ds, 0) == set()
        assert negative_set(ds, 0) == set()

    def test_hand_case_positive(self):
        ds = make_dataset([5, 5, 6], ["A", "B", "A"], num_ages=9)
        assert positive_set(ds, 0) == brute_positive(ds, 0) == {1}

    def test_hand_case_negative(self):
        ds = make_dataset([5, 5, 6], ["A", "B", "C"], num_ages=9)
        assert negative_set(ds, 0) == brute_negative(ds, 0) == {2}

    def test_unique_age_has_no_positives(self):
        ds = make_dataset([1, 2, 3], ["A", "B", "C"], num_ages=5)
        assert positive_set(ds, 0) == set()

    def test_shared_identity_has_no_negatives(self):
        ds = make_dataset([1, 2, 3], ["A", "A", "A"], num_ages=5)
        for a in range(3):
            assert negative_set(ds, a) == set()
        assert not has_triplet_negatives(ds)

    def test_sets_disjoint(self, grid_dataset):
        for a in range(len(grid_dataset)):
            assert positive_set(grid_dataset, a) & negative_set(grid_dataset, a) == set()

    def test_matches_brute_force_on_random_dataset(self):
        rng = np.random.default_rng(12)
        n = 300
        ds = make_dataset(rng.integers(1, 9, n), [f"p{i}" for i in rng.integers(0, 40, n)],
                          num_ages=8, seed=1)
        for a in range(n):
            assert positive_set(ds, a) == brute_positive(ds, a)
            assert negative_set(ds, a) == brute_negative(ds, a)


class TestBatchSampling:
    def test_constraints_always_hold(self, grid_dataset):
        ds = grid_dataset
        for seed in range(50):
            for t in sample_triplet_batch(ds, len(ds), seed):
                if t.p is not None:
                    assert ds.ages[t.p] == ds.ages[t.a]
                    assert ds.identities[t.p] != ds.identities[t.a]
                if t.n is not None:
                    assert ds.ages[t.n] != ds.ages[t.a]
                    assert ds.identities[t.n] != ds.identities[t.a]

    def test_deterministic_per_seed(self, grid_dataset):
        a = sample_triplet_batch(grid_dataset, 16, seed=9)
        b = sample_triplet_batch(grid_dataset, 16, seed=9)
        assert a == b
        assert a != sample_triplet_batch(grid_dataset, 16, seed=10)

    def test_anchors_without_replacement(self, grid_dataset):
        batch = sample_triplet_batch(grid_dataset, len(grid_dataset), seed=0)
        anchors = [t.a for t in batch]
        assert sorted(anchors) == list(range(len(grid_dataset)))

    def test_null_positive_kept_in_batch(self):
        # second sample's age is unique -> no positive, but it still anchors
        ds = make_dataset([3, 4, 3], ["A", "B", "C"], num_ages=6)
        batch = sample_triplet_batch(ds, 3, seed=1)
        by_anchor = {t.a: t for t in batch}
        assert by_anchor[1].p is None
        assert by_anchor[1].n is not None

    def test_batch_size_validation(self, grid_dataset):
        with pytest.raises(ValueError, match="batch_size"):
            sample_triplet_batch(grid_dataset, 0, seed=0)

    def test_epoch_covers_every_anchor_once(self, grid_dataset):
        rng = np.random.default_rng(5)
        anchors = []
        for batch in iter_epoch_batches(grid_dataset, 7, rng):
            anchors.extend(t.a for t in batch)
        assert sorted(anchors) == list(range(len(grid_dataset)))

    def test_triplets_per_anchor(self, grid_dataset):
        rng = np.random.default_rng(6)
        batches = list(iter_epoch_batches(grid_dataset, 5, rng, triplets_per_anchor=3))
        assert all(len(b) == 3 * 5 for b in batches[:-1])
        anchors = [t.a for b in batches for t in b]
        assert all(anchors.count(a) == 3 for a in range(len(grid_dataset)))

    def test_positive_draws_uniform_chi_square(self, grid_dataset):
        # Pooled chi-square over all (anchor, positive) cells; every anchor
        # has exactly 5 positive candidates in this dataset.
        from scipy import stats

        ds = grid_dataset
        n = len(ds)
        counts = np.zeros((n, n))
        epochs = 3334  # ~1e5 (anchor, p) draws
        for seed in range(epochs):
            for t in sample_triplet_batch(ds, n, seed):
                counts[t.a, t.p] += 1
        stat = 0.0
        dof = 0
        for a in range(n):
            cand = sorted(positive_set(ds, a))
            expected = epochs / len(cand)
            stat += ((counts[a, cand] - expected) ** 2 / expected).sum()
            dof += len(cand) - 1
        assert stats.chi2.sf(stat, dof) > 0.01


class TestIndexes:
    def test_verify_indexes(self, grid_dataset):
        grid_dataset.verify_indexes()

    def test_indexes_survive_shuffles(self, grid_dataset):
        rng = np.random.default_rng(8)
        samples = grid_dataset.samples
        for _ in range(5):
            order = rng.permutation(len(samples))
            ds = LabeledDataset([samples[i] for i in order], grid_dataset.num_ages)
            ds.verify_indexes()
            for a in range(len(ds)):
                assert positive_set(ds, a) == brute_positive(ds, a)
                assert negative_set(ds, a) == brute_negative(ds, a)

    def test_subset_reindexes(self, grid_dataset):
        sub = grid_dataset.subset([0, 5, 6, 11])
        sub.verify_indexes()
        assert len(sub) == 4

    def test_validation(self):
        with pytest.raises(DatasetError, match="age"):
            LabeledDataset([FaceSample(np.ones(2), 7, "A")], num_ages=5)
        with pytest.raises(DatasetError, match="identity"):
            LabeledDataset([FaceSample(np.ones(2), 3, "")], num_ages=5)
        with pytest.raises(DatasetError, match="finite"):
            LabeledDataset([FaceSample(np.array([1.0, np.inf]), 3, "A")], num_ages=5)
        with pytest.raises(DatasetError, match="at least one"):
            LabeledDataset([], num_ages=5)


class TestCsvRoundTrip:
    def test_bitwise_round_trip(self, grid_dataset, tmp_path):
        path = tmp_path / "ds.csv"
        save_dataset(grid_dataset, path)
        loaded = load_dataset(path)
        npt.assert_array_equal(loaded.inputs, grid_dataset.inputs)
        npt.assert_array_equal(loaded.ages, grid_dataset.ages)
        assert loaded.identities == grid_dataset.identities
        assert loaded.num_ages == grid_dataset.num_ages
        save_dataset(loaded, tmp_path / "ds2.csv")
        assert (tmp_path / "ds.csv").read_bytes() == (tmp_path / "ds2.csv").read_bytes()

    def test_missing_meta_rejected(self, grid_dataset, tmp_path):
        path = tmp_path / "ds.csv"
        save_dataset(grid_dataset, path)
        (tmp_path / "ds.meta.json").unlink()
        with pytest.raises(DatasetError, match="sidecar"):
            load_dataset(path)

    def test_out_of_range_age_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("identity,age,v0\nA,9,0.5\nB,1,0.25\n")
        (tmp_path / "bad.meta.json").write_text('{"input_dim": 1, "num_ages": 5}')
        with pytest.raises(DatasetError, match="age 9 outside 1..5"):
            load_dataset(path)

    def test_malformed_row_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("identity,age,v0\nA,2\n")
        (tmp_path / "bad.meta.json").write_text('{"input_dim": 1, "num_ages": 5}')
        with pytest.raises(DatasetError, match="fields"):
            load_dataset(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(DatasetError, match="not found"):
            load_dataset(tmp_path / "absent.csv")

    def test_comma_identity_rejected_on_save(self, tmp_path):
        ds = make_dataset([1, 2], ["a,b", "c"], num_ages=3)
        with pytest.raises(DatasetError, match="CSV"):
            save_dataset(ds, tmp_path / "x.csv")
