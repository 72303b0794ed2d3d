"""Synthetic scene generation: determinism, splits, box validity."""

import numpy as np
import pytest

from hilbertdet.data import (BLOB, SPECKLE, gen_dataset, hflip_scene,
                             make_scene, validate_scene)


class TestSceneGeneration:
    def test_bitwise_reproducible_from_seed_and_index(self):
        a = make_scene(42, 7, 64)
        b = make_scene(42, 7, 64)
        assert np.array_equal(a.image, b.image)
        assert [(x.x1, x.y1, x.x2, x.y2) for x in a.boxes] == \
               [(x.x1, x.y1, x.x2, x.y2) for x in b.boxes]

    def test_different_indices_differ(self):
        a = make_scene(42, 0, 64)
        b = make_scene(42, 1, 64)
        assert not np.array_equal(a.image, b.image)

    def test_image_shape_and_dtype(self):
        s = make_scene(0, 0, 64)
        assert s.image.shape == (1, 64, 64)
        assert s.image.dtype == np.float64

    def test_boxes_valid_over_many_scenes(self):
        total_boxes = 0
        kinds = set()
        for i in range(1000):
            s = make_scene(11, i, 64)
            validate_scene(s, 64)
            total_boxes += len(s.boxes)
            kinds.update(s.kinds)
            for b in s.boxes:
                assert 0 <= b.x1 < b.x2 <= 64
                assert 0 <= b.y1 < b.y2 <= 64
        assert total_boxes > 1000
        assert kinds == {BLOB, SPECKLE}

    def test_speckle_patches_vanish_under_2x2_means(self):
        # Find a speckle-only scene and check its patch has zero block means.
        for i in range(200):
            s = make_scene(5, i, 64)
            for b, kind in zip(s.boxes, s.kinds):
                if kind != SPECKLE:
                    continue
                base = make_scene(5, i, 64)
                x1, y1, x2, y2 = map(int, (b.x1, b.y1, b.x2, b.y2))
                h, w = y2 - y1, x2 - x1
                if h % 2 or w % 2:
                    continue
                patch = base.image[0, y1:y2, x1:x2]
                # Block means of the full image inside the patch match the
                # background alone only if the anomaly's block means are zero;
                # verify indirectly through the generator's pattern.
                from hilbertdet.data import _speckle_patch
                rng = np.random.default_rng(0)
                sp = _speckle_patch(h, w, 1.0, rng)
                blocks = sp.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
                assert np.abs(blocks).max() <= 1e-12
                return
        pytest.fail("no even-sized speckle patch found in 200 scenes")

    def test_classes_by_type_labels(self):
        found = set()
        for i in range(100):
            s = make_scene(9, i, 64, classes_by_type=True)
            for b, kind in zip(s.boxes, s.kinds):
                found.add((kind, b.class_id))
        assert (BLOB, 1) in found and (SPECKLE, 2) in found

    def test_boxes_tightly_bound_anomaly_support(self):
        checked = 0
        for i in range(100):
            s = make_scene(3, i, 64)
            for b, (top, left, mask) in zip(s.boxes, s.supports):
                assert (top, left) == (int(b.y1), int(b.x1))
                assert mask.shape == (int(b.y2 - b.y1), int(b.x2 - b.x1))
                # Support lives inside the box, so IoU = |support| / area.
                iou = mask.sum() / b.area
                assert iou >= 0.9
                checked += 1
        assert checked > 50


class TestDataset:
    def test_split_sizes_follow_printed_protocol(self):
        splits = gen_dataset(1, 10, 64)
        assert (len(splits["train"]), len(splits["test"]), len(splits["val"])) \
            == (7, 2, 1)
        splits = gen_dataset(1, 200, 64)
        assert (len(splits["train"]), len(splits["test"]), len(splits["val"])) \
            == (140, 40, 20)

    def test_determinism_across_calls(self):
        a = gen_dataset(5, 12, 64)
        b = gen_dataset(5, 12, 64)
        for split in ("train", "test", "val"):
            for x, y in zip(a[split], b[split]):
                assert np.array_equal(x.image, y.image)

    def test_too_few_scenes_rejected(self):
        with pytest.raises(ValueError, match="at least 10"):
            gen_dataset(0, 9, 64)

    def test_bad_image_size_rejected(self):
        with pytest.raises(ValueError, match="divisible"):
            gen_dataset(0, 10, 60)


class TestAugmentation:
    def test_hflip_involution(self):
        s = make_scene(2, 3, 64)
        back = hflip_scene(hflip_scene(s, 64), 64)
        assert np.array_equal(back.image, s.image)
        assert [(b.x1, b.x2) for b in back.boxes] == \
               [(b.x1, b.x2) for b in s.boxes]

    def test_hflip_mirrors_boxes(self):
        s = make_scene(2, 4, 64)
        f = hflip_scene(s, 64)
        for orig, flip in zip(s.boxes, f.boxes):
            assert flip.x1 == pytest.approx(64 - orig.x2)
            assert flip.x2 == pytest.approx(64 - orig.x1)
            assert flip.y1 == orig.y1 and flip.y2 == orig.y2
