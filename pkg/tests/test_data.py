import dataclasses

import numpy as np
import pytest

from ncdlab.data import (AugmentationConfig, Batch, NcdDataset,
                         generate_dataset, make_view, next_batch)
from ncdlab.errors import ContractError


class TestGenerateDataset:
    def test_counts(self):
        ds = generate_dataset(2, 1, 1, per_class=10, separation=10, seed=7)
        assert ds.labeled_x.shape == (10, 2)
        assert ds.unlabeled_x.shape == (10, 2)

    def test_bit_identical_regeneration(self):
        a = generate_dataset(6, 2, 3, per_class=20, separation=5, seed=123)
        b = generate_dataset(6, 2, 3, per_class=20, separation=5, seed=123)
        assert a.labeled_x.tobytes() == b.labeled_x.tobytes()
        assert a.unlabeled_x.tobytes() == b.unlabeled_x.tobytes()
        assert a.labeled_y.tobytes() == b.labeled_y.tobytes()
        assert a.unlabeled_hidden_y.tobytes() == b.unlabeled_hidden_y.tobytes()

    def test_wide_separation_nearest_centroid_accuracy(self):
        # brute-force nearest-centroid oracle on the generative means
        ds = generate_dataset(8, 3, 4, per_class=100, separation=50, seed=11)
        unlabeled_means = ds.class_means[ds.num_labeled_classes:]
        d2 = ((ds.unlabeled_x[:, None, :] - unlabeled_means[None, :, :]) ** 2).sum(-1)
        predicted = np.argmin(d2, axis=1)
        accuracy = np.mean(predicted == ds.unlabeled_hidden_y)
        assert accuracy >= 0.99

    def test_labels_cover_every_class(self):
        ds = generate_dataset(4, 3, 2, per_class=5, separation=3, seed=0)
        assert set(ds.labeled_y) == {0, 1, 2}
        assert set(ds.unlabeled_hidden_y) == {0, 1}

    def test_invalid_arguments(self):
        with pytest.raises(ContractError):
            generate_dataset(0, 1, 1, 1, 1.0, 0)
        with pytest.raises(ContractError):
            generate_dataset(2, 1, 1, 1, -1.0, 0)


class TestMakeView:
    def test_identity_when_disabled(self):
        x = np.array([1.5, -2.0, 0.25])
        out = make_view(x, AugmentationConfig(0.0, 0.0), np.random.default_rng(0))
        np.testing.assert_array_equal(out, x)

    def test_distinct_draws_differ(self):
        rng = np.random.default_rng(1)
        cfg = AugmentationConfig(noise_sigma=0.5, scale_jitter=0.1)
        x = np.ones(4)
        assert not np.array_equal(make_view(x, cfg, rng), make_view(x, cfg, rng))

    def test_noise_mean_is_centered(self):
        # Monte-Carlo check on the zero vector: mean of 1000 draws stays small
        rng = np.random.default_rng(2)
        cfg = AugmentationConfig(noise_sigma=0.1, scale_jitter=0.0)
        draws = np.stack([make_view(np.zeros(6), cfg, rng) for _ in range(1000)])
        assert np.all(np.abs(draws.mean(axis=0)) < 0.02)

    def test_config_validation(self):
        with pytest.raises(ContractError):
            AugmentationConfig(noise_sigma=-0.1)
        with pytest.raises(ContractError):
            AugmentationConfig(scale_jitter=1.0)


class TestNextBatch:
    def setup_method(self):
        self.ds = generate_dataset(3, 2, 5, per_class=40, separation=6, seed=5)
        self.cfg = AugmentationConfig(0.2, 0.05)

    def test_even_split(self):
        batch = next_batch(self.ds, 4, self.cfg, np.random.default_rng(0))
        assert batch.labeled_x.shape[0] == 2
        assert batch.unlabeled_x.shape[0] == 2
        assert batch.size == 4
        assert batch.labeled_view2.shape == batch.labeled_x.shape
        assert batch.unlabeled_view2.shape == batch.unlabeled_x.shape

    def test_same_rng_state_reproduces_batch(self):
        a = next_batch(self.ds, 8, self.cfg, np.random.default_rng(42))
        b = next_batch(self.ds, 8, self.cfg, np.random.default_rng(42))
        np.testing.assert_array_equal(a.labeled_x, b.labeled_x)
        np.testing.assert_array_equal(a.unlabeled_view2, b.unlabeled_view2)
        np.testing.assert_array_equal(a.labeled_y, b.labeled_y)

    def test_odd_batch_rejected(self):
        with pytest.raises(ContractError):
            next_batch(self.ds, 5, self.cfg, np.random.default_rng(0))

    def test_sampling_frequency_near_uniform(self):
        # 10,000 unlabeled draws over 5 balanced classes: within 3% of 20%
        lookup = {x.tobytes(): y for x, y in
                  zip(self.ds.unlabeled_x, self.ds.unlabeled_hidden_y)}
        rng = np.random.default_rng(9)
        counts = np.zeros(5)
        for _ in range(100):
            batch = next_batch(self.ds, 200, self.cfg, rng)
            for row in batch.unlabeled_x:
                counts[lookup[row.tobytes()]] += 1
        freq = counts / counts.sum()
        assert counts.sum() == 10000
        assert np.all(np.abs(freq - 0.2) <= 0.03)

    def test_batch_carries_no_hidden_labels(self):
        names = [f.name for f in dataclasses.fields(Batch)]
        assert all("hidden" not in name for name in names)


class TestJsonRoundTrip:
    def test_export_import_is_exact(self, tmp_path):
        ds = generate_dataset(5, 2, 2, per_class=7, separation=4, seed=99)
        path = tmp_path / "dataset.json"
        ds.to_json_file(path)
        back = NcdDataset.from_json_file(path)
        assert back.input_dim == ds.input_dim
        assert back.num_labeled_classes == ds.num_labeled_classes
        assert back.num_unlabeled_classes == ds.num_unlabeled_classes
        assert back.seed == ds.seed
        np.testing.assert_array_equal(back.labeled_x, ds.labeled_x)
        np.testing.assert_array_equal(back.labeled_y, ds.labeled_y)
        np.testing.assert_array_equal(back.unlabeled_x, ds.unlabeled_x)
        np.testing.assert_array_equal(back.unlabeled_hidden_y, ds.unlabeled_hidden_y)
