"""
Unit tests for the synthetic corpora, image directories and augmentation
"""

import numpy as np
import pytest

from src.core import ConfigError
from src.reports.pnm import write_pgm, write_ppm
from src.training import (
    IGNORE_INDEX,
    ClsSample,
    DataConfig,
    DataKind,
    augment,
    build_corpus,
    collate,
    flip,
    load_image_dir,
    synth_cls_dataset,
    synth_seg_dataset,
)
from src.training.data import pad_to, resize_mask, synth_seg_sample


class TestSyntheticSegmentation:
    """Test the shapes corpus"""

    def test_same_seed_same_corpus(self):
        a = synth_seg_dataset(3, 32, 32, 4, seed=5)
        b = synth_seg_dataset(3, 32, 32, 4, seed=5)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.image, y.image)
            np.testing.assert_array_equal(x.mask, y.mask)

    def test_sample_is_independent_of_corpus_size(self):
        """Test sample i depends only on (seed, i)"""
        corpus = synth_seg_dataset(5, 24, 24, 3, seed=1)
        np.testing.assert_array_equal(corpus[4].mask, synth_seg_sample(4, 24, 24, 3, seed=1).mask)

    def test_different_seed_differs(self):
        a = synth_seg_dataset(1, 32, 32, 4, seed=0)[0]
        b = synth_seg_dataset(1, 32, 32, 4, seed=1)[0]
        assert not np.array_equal(a.image, b.image)

    def test_image_and_mask_ranges(self):
        for sample in synth_seg_dataset(4, 20, 28, 5, seed=2):
            assert sample.image.shape == (20, 28, 3)
            assert sample.image.dtype == np.float32
            assert 0.0 <= sample.image.min() and sample.image.max() <= 1.0
            assert sample.mask.shape == (20, 28)
            assert 0 <= sample.mask.min() and sample.mask.max() < 5

    def test_guaranteed_class_is_visible(self):
        """Test class (i mod (K-1)) + 1 is drawn last and so always visible"""
        for sample in synth_seg_dataset(6, 32, 32, 4, seed=9):
            assert (sample.mask == sample.index % 3 + 1).any()

    def test_needs_two_classes(self):
        with pytest.raises(ValueError):
            synth_seg_dataset(2, 16, 16, 1, seed=0)


class TestSyntheticClassification:
    """Test the one-shape-per-image corpus"""

    def test_labels_cycle(self):
        corpus = synth_cls_dataset(7, 16, 16, 3, seed=0)
        assert [s.label for s in corpus] == [0, 1, 2, 0, 1, 2, 0]
        assert all(isinstance(s, ClsSample) for s in corpus)

    def test_collate_labels(self):
        images, labels = collate(synth_cls_dataset(4, 16, 16, 3, seed=0))
        assert images.shape == (4, 16, 16, 3)
        assert labels.tolist() == [0, 1, 2, 0]


class TestImageDirectory:
    """Test PPM / PGM corpora on disk"""

    def _write_pair(self, root, name, image, mask):
        write_ppm(root / "images" / f"{name}.ppm", image)
        write_pgm(root / "masks" / f"{name}.pgm", mask)

    def test_load_pairs(self, tmp_path):
        rng = np.random.default_rng(0)
        image = rng.integers(0, 256, size=(6, 8, 3), dtype=np.uint8)
        mask = rng.integers(0, 3, size=(6, 8), dtype=np.uint8)
        self._write_pair(tmp_path, "b", image, mask)
        self._write_pair(tmp_path, "a", image[::-1].copy(), mask)
        samples = load_image_dir(tmp_path)
        assert len(samples) == 2
        np.testing.assert_allclose(samples[1].image, image / 255.0, rtol=1e-6)
        np.testing.assert_array_equal(samples[0].mask, mask)

    def test_missing_mask(self, tmp_path):
        write_ppm(tmp_path / "images" / "x.ppm", np.zeros((4, 4, 3), dtype=np.uint8))
        (tmp_path / "masks").mkdir()
        with pytest.raises(ConfigError):
            load_image_dir(tmp_path)

    def test_missing_directories(self, tmp_path):
        with pytest.raises(ConfigError):
            load_image_dir(tmp_path)

    def test_build_corpus_needs_path(self):
        with pytest.raises(ConfigError):
            build_corpus(DataConfig(kind=DataKind.IMAGE_DIR))

    def test_build_corpus_synthetic(self, tiny_data_config):
        corpus = build_corpus(tiny_data_config)
        assert len(corpus) == 4
        assert corpus[0].image.shape == (32, 32, 3)


class TestAugmentation:
    """Test flips, padding and random crops"""

    def test_flip_mirrors_both(self):
        sample = synth_seg_dataset(1, 16, 20, 3, seed=0)[0]
        flipped = flip(sample)
        np.testing.assert_array_equal(flipped.image, sample.image[:, ::-1])
        np.testing.assert_array_equal(flipped.mask, sample.mask[:, ::-1])

    def test_pad_uses_ignore_index(self):
        sample = synth_seg_dataset(1, 10, 10, 3, seed=0)[0]
        padded = pad_to(sample, 12, 13)
        assert padded.image.shape == (12, 13, 3)
        assert (padded.mask[10:] == IGNORE_INDEX).all()
        assert (padded.mask[:, 10:] == IGNORE_INDEX).all()
        assert (padded.image[10:] == 0).all()

    def test_resize_mask_keeps_label_set(self):
        mask = np.array([[0, 1], [2, 3]])
        big = resize_mask(mask, 4, 4)
        np.testing.assert_array_equal(big[:2, :2], 0)
        np.testing.assert_array_equal(big[2:, 2:], 3)
        assert set(np.unique(resize_mask(mask, 3, 5))) <= {0, 1, 2, 3}

    def test_crop_shape_and_labels(self):
        """Test the crop size and that labels only shrink (plus ignore)"""
        sample = synth_seg_dataset(1, 32, 32, 4, seed=3)[0]
        rng = np.random.default_rng(0)
        for _ in range(5):
            out = augment(sample, rng, crop_size=(24, 24))
            assert out.image.shape == (24, 24, 3)
            assert out.mask.shape == (24, 24)
            assert set(np.unique(out.mask)) <= set(np.unique(sample.mask)) | {IGNORE_INDEX}

    def test_augment_is_seeded(self):
        sample = synth_seg_dataset(1, 32, 32, 4, seed=3)[0]
        a = augment(sample, np.random.default_rng(11), crop_size=(16, 16))
        b = augment(sample, np.random.default_rng(11), crop_size=(16, 16))
        np.testing.assert_array_equal(a.mask, b.mask)

    def test_unit_ratio_without_flip_is_identity(self):
        sample = synth_seg_dataset(1, 16, 16, 3, seed=0)[0]
        out = augment(sample, np.random.default_rng(0), ratio_range=(1.0, 1.0), flip_prob=0.0)
        np.testing.assert_array_equal(out.image, sample.image)
        np.testing.assert_array_equal(out.mask, sample.mask)

    def test_collate_masks(self):
        corpus = synth_seg_dataset(3, 8, 8, 3, seed=0)
        images, masks = collate(corpus)
        assert images.shape == (3, 8, 8, 3)
        assert masks.shape == (3, 8, 8)
