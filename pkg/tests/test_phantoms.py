"""Tests for phantom generation and label corruption"""

import numpy as np
import pytest

from shapeprior.core.errors import ConfigError, InvalidInputError
from shapeprior.core.phantoms import OrganSpec, PhantomConfig, corrupt_labels, default_organs, generate
from shapeprior.core.targets import LabelMap


class TestGenerate:
    """Seeded phantom generation"""

    def setup_method(self):
        self.config = PhantomConfig()

    def test_deterministic(self):
        a = generate([3, 0, 1], self.config)
        b = generate([3, 0, 1], self.config)
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.labels.labels, b.labels.labels)

    def test_shapes_and_range(self):
        phantom = generate(1, self.config)
        assert phantom.image.shape == (1, 64, 64)
        assert phantom.labels.labels.shape == (64, 64)
        assert 0.0 <= phantom.image.min() and phantom.image.max() <= 1.0

    def test_noiseless_single_organ_two_intensities(self):
        config = PhantomConfig(height=32, width=32, organs=(OrganSpec("only", 50, 120, 0.6, 0.7),), noise_std=0.0)
        phantom = generate(4, config)
        assert not phantom.degraded
        assert len(np.unique(phantom.image)) == 2

    def test_organ_sizes_within_range(self):
        for index in range(200):
            phantom = generate([0, 0, index], self.config)
            for organ_id, spec in enumerate(self.config.organs, start=1):
                if organ_id in phantom.omitted:
                    continue
                count = int(phantom.labels.mask(organ_id).sum())
                assert spec.min_area <= count <= spec.max_area

    def test_impossible_packing_is_degraded(self):
        config = PhantomConfig(height=8, width=8, organs=(OrganSpec("huge", 500, 600, 0.5, 0.6),),
                               placement_retries=5)
        phantom = generate(0, config)
        assert phantom.degraded
        assert phantom.omitted == (1,)
        assert not phantom.labels.labels.any()

    def test_num_classes_counts_background(self):
        assert self.config.num_classes == len(default_organs()) + 1


class TestConfigValidation:
    """Phantom configuration errors"""

    def test_min_greater_than_max(self):
        with pytest.raises(ConfigError):
            PhantomConfig(organs=(OrganSpec("bad", 50, 10, 0.1, 0.2),)).validate()

    def test_intensity_outside_unit_interval(self):
        with pytest.raises(ConfigError):
            PhantomConfig(organs=(OrganSpec("bad", 5, 10, 0.5, 1.5),)).validate()

    def test_no_organs(self):
        with pytest.raises(ConfigError):
            PhantomConfig(organs=()).validate()


class TestCorruptLabels:
    """Outline perturbation of training labels"""

    def test_zero_severity_identity(self):
        labels = generate(2, PhantomConfig()).labels
        assert np.array_equal(corrupt_labels(labels, 0.0, seed=9).labels, labels.labels)

    def test_single_pixel_erodes_away(self):
        grid = np.zeros((5, 5), dtype=int)
        grid[2, 2] = 1
        result = corrupt_labels(LabelMap(grid, 2), 1.0, seed=0, operation="erode")
        assert not result.labels.any()

    def test_dilation_never_overwrites_organs(self):
        grid = np.zeros((10, 10), dtype=int)
        grid[2:6, 2:6] = 1
        grid[2:6, 6:9] = 2
        result = corrupt_labels(LabelMap(grid, 3), 1.0, seed=0, operation="dilate").labels
        assert np.array_equal(result[grid != 0], grid[grid != 0])
        assert (result == 1).sum() > (grid == 1).sum()

    def test_damage_grows_with_severity(self):
        config = PhantomConfig()
        severities = [0.0, 0.25, 0.5, 1.0]
        damage = np.zeros(len(severities))
        for seed in range(20):
            labels = generate([seed, 9, 0], config).labels
            for i, severity in enumerate(severities):
                corrupted = corrupt_labels(labels, severity, seed=[seed, 1])
                damage[i] += np.count_nonzero(corrupted.labels != labels.labels)
        assert np.all(np.diff(damage / 20) >= 0)
        assert damage[-1] > 0

    def test_invalid_severity(self):
        labels = LabelMap(np.zeros((3, 3), dtype=int), 2)
        with pytest.raises(InvalidInputError):
            corrupt_labels(labels, 1.5, seed=0)
