import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tumorseg.metrics import dice_score, hd95, surface_voxels

from reference_impls import dice_brute, hd95_brute, surface_brute


def single_voxel(shape, index):
    mask = np.zeros(shape, bool)
    mask[index] = True
    return mask


def random_mask(rng, fill=0.4, shape=(6, 6, 6), nonempty=False):
    mask = rng.random(shape) < fill
    if nonempty and not mask.any():
        mask[tuple(rng.integers(0, s) for s in shape)] = True
    return mask


class TestDice:
    def test_half_overlap(self):
        pred = np.zeros((4, 4, 4), bool)
        truth = np.zeros((4, 4, 4), bool)
        pred[0, 0, 0] = True
        truth[0, 0, 0] = True
        truth[0, 0, 1] = True
        truth[0, 0, 2] = True
        # 2*1 / (1 + 3)
        assert dice_score(pred, truth) == pytest.approx(0.5)

    def test_identical_masks(self, rng):
        mask = random_mask(rng, nonempty=True)
        assert dice_score(mask, mask) == 1.0

    def test_both_empty_is_perfect(self):
        empty = np.zeros((3, 3, 3), bool)
        assert dice_score(empty, empty) == 1.0

    def test_one_empty_is_zero(self):
        empty = np.zeros((3, 3, 3), bool)
        assert dice_score(single_voxel((3, 3, 3), (1, 1, 1)), empty) == 0.0

    def test_symmetric(self, rng):
        a, b = random_mask(rng), random_mask(rng)
        assert dice_score(a, b) == dice_score(b, a)

    def test_agrees_with_brute_force(self, rng):
        for _ in range(50):
            a, b = random_mask(rng), random_mask(rng)
            assert dice_score(a, b) == pytest.approx(dice_brute(a, b), abs=1e-12)

    def test_integer_masks_accepted(self):
        a = np.ones((2, 2, 2), np.uint8)
        assert dice_score(a, a) == 1.0

    def test_nonbinary_rejected(self):
        with pytest.raises(ValueError, match="binary"):
            dice_score(np.full((2, 2, 2), 3), np.zeros((2, 2, 2), bool))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shapes"):
            dice_score(np.zeros((2, 2, 2), bool), np.zeros((3, 3, 3), bool))


class TestSurfaceVoxels:
    def test_solid_cube_keeps_shell(self):
        mask = np.ones((4, 4, 4), bool)
        surface = surface_voxels(mask)
        assert surface[0].all() and surface[-1].all()
        assert not surface[1:-1, 1:-1, 1:-1].any()

    def test_single_voxel_is_its_own_surface(self):
        mask = single_voxel((3, 3, 3), (1, 1, 1))
        assert np.array_equal(surface_voxels(mask), mask)

    def test_volume_boundary_counts_as_outside(self):
        mask = np.ones((2, 2, 2), bool)
        assert surface_voxels(mask).all()

    def test_agrees_with_brute_force(self, rng):
        for _ in range(30):
            mask = random_mask(rng, shape=(5, 5, 5))
            assert np.array_equal(surface_voxels(mask), surface_brute(mask))

    @given(st.integers(0, 2**30 - 1))
    @settings(max_examples=25, deadline=None)
    def test_surface_subset_of_mask(self, seed):
        mask = np.random.default_rng(seed).random((4, 4, 4)) < 0.5
        surface = surface_voxels(mask)
        assert not (surface & ~mask).any()


class TestHd95:
    def test_identical_masks_zero(self, rng):
        mask = random_mask(rng, nonempty=True)
        assert hd95(mask, mask) == 0.0

    def test_axis_offset_hand_case(self):
        a = single_voxel((4, 4, 4), (0, 0, 0))
        b = single_voxel((4, 4, 4), (0, 0, 3))
        assert hd95(a, b) == pytest.approx(3.0)

    def test_spacing_scales_distances_exactly(self, rng):
        a = random_mask(rng, nonempty=True)
        b = random_mask(rng, nonempty=True)
        base = hd95(a, b)
        scaled = hd95(a, b, spacing_mm=(2.5, 2.5, 2.5))
        assert scaled == pytest.approx(2.5 * base, rel=1e-12)

    def test_anisotropic_spacing(self):
        a = single_voxel((4, 4, 4), (0, 0, 0))
        b = single_voxel((4, 4, 4), (0, 0, 3))
        assert hd95(a, b, spacing_mm=(1.0, 1.0, 0.5)) == pytest.approx(1.5)

    def test_symmetric(self, rng):
        a = random_mask(rng, nonempty=True)
        b = random_mask(rng, nonempty=True)
        assert hd95(a, b) == hd95(b, a)

    def test_agrees_with_brute_force(self, rng):
        for _ in range(40):
            shape = tuple(rng.integers(3, 9, size=3))
            a = random_mask(rng, shape=shape, nonempty=True)
            b = random_mask(rng, shape=shape, nonempty=True)
            spacing = tuple(rng.uniform(0.5, 2.0, size=3))
            assert hd95(a, b, spacing_mm=spacing) == pytest.approx(
                hd95_brute(a, b, spacing), rel=1e-9
            )

    def test_empty_mask_rejected(self):
        full = np.ones((3, 3, 3), bool)
        empty = np.zeros((3, 3, 3), bool)
        with pytest.raises(ValueError, match="undefined for an empty mask"):
            hd95(full, empty)
        with pytest.raises(ValueError, match="undefined for an empty mask"):
            hd95(empty, full)

    def test_bad_spacing_rejected(self):
        mask = np.ones((2, 2, 2), bool)
        with pytest.raises(ValueError, match="spacing"):
            hd95(mask, mask, spacing_mm=(1.0, 0.0, 1.0))
