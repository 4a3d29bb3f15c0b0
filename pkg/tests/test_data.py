"""Synthetic task generator tests: determinism, balance, noise behavior."""

import numpy as np
import pytest

from trpts.data import Dataset, SyntheticTaskSpec, generate_split, generate_task
from trpts.errors import ConfigurationError


class TestDeterminism:
    def test_same_spec_same_bytes(self):
        spec = SyntheticTaskSpec("shape-class", num_train=40, num_val=8, num_test=8, seed=3)
        a = generate_task(spec)
        b = generate_task(spec)
        for split in ("train", "val", "test"):
            assert a[split].images.tobytes() == b[split].images.tobytes()
            assert a[split].labels.tobytes() == b[split].labels.tobytes()

    def test_different_seeds_differ(self):
        base = dict(num_train=20, num_val=4, num_test=4)
        a = generate_split(SyntheticTaskSpec("quadrant-class", seed=1, **base), "train", 20)
        b = generate_split(SyntheticTaskSpec("quadrant-class", seed=2, **base), "train", 20)
        assert a.images.tobytes() != b.images.tobytes()

    def test_splits_are_distinct(self):
        spec = SyntheticTaskSpec("count-class", num_train=16, num_val=16, num_test=16, seed=5)
        task = generate_task(spec)
        assert task["train"].images.tobytes() != task["val"].images.tobytes()
        assert task["val"].images.tobytes() != task["test"].images.tobytes()


class TestLabels:
    def test_quadrant_labels_balanced(self):
        spec = SyntheticTaskSpec("quadrant-class", num_train=4000, num_val=4, num_test=4, seed=7)
        ds = generate_split(spec, "train", 4000)
        counts = np.bincount(ds.labels, minlength=4)
        assert set(ds.labels.tolist()) <= {0, 1, 2, 3}
        # Round-robin assignment: exact balance, comfortably within +/-5%.
        assert (np.abs(counts - 1000) <= 0.05 * 1000).all()

    def test_all_classes_present(self):
        for family, k in (("shape-class", 4), ("quadrant-class", 4), ("count-class", 3)):
            spec = SyntheticTaskSpec(family, num_classes=k, num_train=3 * k,
                                     num_val=k, num_test=k, seed=1)
            ds = generate_split(spec, "train", 3 * k)
            assert set(ds.labels.tolist()) == set(range(k))


class TestRendering:
    def test_noise_zero_is_clean(self):
        spec = SyntheticTaskSpec("shape-class", num_train=10, num_val=2, num_test=2,
                                 noise=0.0, seed=2)
        ds = generate_split(spec, "train", 10)
        for img in ds.images:
            # Clean glyph rendering: background 0 plus one brightness level.
            assert len(np.unique(img)) <= 2

    def test_noise_perturbs_pixels(self):
        spec = SyntheticTaskSpec("shape-class", num_train=4, num_val=2, num_test=2,
                                 noise=0.1, seed=2)
        ds = generate_split(spec, "train", 4)
        assert len(np.unique(ds.images[0])) > 10

    def test_value_range(self):
        for family in ("shape-class", "quadrant-class", "count-class"):
            spec = SyntheticTaskSpec(family, num_train=8, num_val=2, num_test=2,
                                     noise=0.2, seed=4)
            ds = generate_split(spec, "train", 8)
            assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
            assert ds.images.dtype == np.float32

    def test_count_class_draws_right_number_of_blobs(self):
        spec = SyntheticTaskSpec("count-class", num_classes=3, num_train=30,
                                 num_val=2, num_test=2, noise=0.0, seed=6)
        ds = generate_split(spec, "train", 30)
        # Blob area grows with count; check the coarse ordering holds on average.
        areas = np.array([(img > 0).sum() for img in ds.images])
        means = [areas[ds.labels == k].mean() for k in range(3)]
        assert means[0] < means[1] < means[2]


class TestSpecValidation:
    def test_unknown_family(self):
        with pytest.raises(ConfigurationError):
            SyntheticTaskSpec("texture-class")

    def test_quadrant_requires_four_classes(self):
        with pytest.raises(ConfigurationError):
            SyntheticTaskSpec("quadrant-class", num_classes=3)

    def test_negative_noise(self):
        with pytest.raises(ConfigurationError):
            SyntheticTaskSpec("shape-class", noise=-0.1)

    def test_len(self):
        spec = SyntheticTaskSpec("shape-class", num_train=12, num_val=2, num_test=2, seed=1)
        assert len(generate_split(spec, "train", 12)) == 12
