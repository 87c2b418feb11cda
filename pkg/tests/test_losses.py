import numpy as np
import pytest

from tumorseg.losses import (
    ScheduleConfig,
    binary_cross_entropy,
    combined_loss,
    generalized_dice_loss,
    poly_lr,
)

# high-precision constants, frozen from an independent arbitrary-precision run
LN_2 = 0.69314718055994530941
NEG_LN_0_9 = 0.10536051565782630122
LR_EPOCH_5 = 0.0084149525842608997075
LR_EPOCH_449 = 3.4795867091544875810e-05


class TestGeneralizedDice:
    def test_half_overlap_hand_case(self):
        # one class, |g|=2, |p n g|=1, |p|+|g|=3 -> 1 - 2*1/3 = 1/3
        g = np.array([[1.0, 1.0, 0.0, 0.0]])
        p = np.array([[1.0, 0.0, 0.0, 0.0]])
        assert generalized_dice_loss(p, g) == pytest.approx(1.0 / 3.0, abs=1e-3)

    def test_perfect_prediction_near_zero(self, rng):
        g = (rng.random((3, 64)) > 0.6).astype(np.float64)
        g[:, :2] = 1.0  # keep every class populated
        assert generalized_dice_loss(g, g) < 1e-4

    def test_inverted_prediction_near_one(self):
        g = np.zeros((2, 32))
        g[:, :8] = 1.0
        assert generalized_dice_loss(1.0 - g, g) == pytest.approx(1.0, abs=1e-3)

    def test_small_class_errors_weigh_more(self):
        g = np.zeros((2, 2000))
        g[0, :1000] = 1.0  # large class
        g[1, :10] = 1.0    # small class
        miss_large = g.copy()
        miss_large[0, :5] = 0.0
        miss_small = g.copy()
        miss_small[1, :5] = 0.0
        assert generalized_dice_loss(miss_small, g) > generalized_dice_loss(miss_large, g)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            generalized_dice_loss(np.zeros((2, 3)), np.zeros((2, 4)))

    def test_out_of_range_prediction_rejected(self):
        with pytest.raises(ValueError, match="0, 1"):
            generalized_dice_loss(np.full((1, 4), 1.5), np.ones((1, 4)))

    def test_soft_target_rejected(self):
        with pytest.raises(ValueError, match="binary"):
            generalized_dice_loss(np.full((1, 4), 0.5), np.full((1, 4), 0.5))


class TestBinaryCrossEntropy:
    def test_uniform_half_is_ln2(self):
        g = np.array([[1.0, 0.0, 1.0, 0.0]])
        p = np.full_like(g, 0.5)
        assert binary_cross_entropy(p, g) == pytest.approx(LN_2, abs=1e-6)

    def test_point_nine_on_positives(self):
        g = np.ones((1, 8))
        p = np.full_like(g, 0.9)
        assert binary_cross_entropy(p, g) == pytest.approx(NEG_LN_0_9, abs=1e-6)

    def test_perfect_binary_is_zero(self):
        g = np.array([[1.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
        assert binary_cross_entropy(g, g) == 0.0

    def test_nonnegative_at_boundaries(self, rng):
        # the log arguments are clamped at 1, so certainty cannot go negative
        for _ in range(20):
            g = (rng.random((2, 16)) > 0.5).astype(np.float64)
            p = rng.random((2, 16))
            p[0, 0] = 1.0
            p[0, 1] = 0.0
            assert binary_cross_entropy(p, g) >= 0.0

    def test_worse_prediction_costs_more(self):
        g = np.ones((1, 4))
        assert binary_cross_entropy(np.full((1, 4), 0.6), g) > binary_cross_entropy(
            np.full((1, 4), 0.9), g
        )


class TestCombinedLoss:
    def test_sum_of_parts(self, rng):
        g = (rng.random((3, 32)) > 0.5).astype(np.float64)
        p = rng.random((3, 32))
        assert combined_loss(p, g) == pytest.approx(
            generalized_dice_loss(p, g) + binary_cross_entropy(p, g), rel=1e-12
        )

    def test_near_zero_for_perfect_binary(self, rng):
        g = (rng.random((3, 64)) > 0.5).astype(np.float64)
        g[:, 0] = 1.0
        assert combined_loss(g, g) < 1e-4


class TestPolyLr:
    def test_warmup_values(self):
        assert poly_lr(0) == pytest.approx(0.0017, rel=1e-12)
        assert poly_lr(4) == pytest.approx(0.0085, rel=1e-12)

    def test_first_decay_epoch_frozen_value(self):
        assert abs(poly_lr(5) - LR_EPOCH_5) < 1e-9

    def test_final_epoch_frozen_value(self):
        assert poly_lr(449) == pytest.approx(LR_EPOCH_449, rel=1e-9)

    def test_warmup_ramps_up(self):
        values = [poly_lr(e) for e in range(5)]
        assert values == sorted(values)
        assert values[-1] == pytest.approx(0.0085, rel=1e-12)

    def test_decay_is_non_increasing(self):
        values = [poly_lr(e) for e in range(5, 450)]
        assert all(a >= b for a, b in zip(values, values[1:]))
        assert values[-1] > 0.0

    def test_epoch_range_enforced(self):
        with pytest.raises(ValueError, match="epoch"):
            poly_lr(-1)
        with pytest.raises(ValueError, match="epoch"):
            poly_lr(450)

    def test_custom_schedule(self):
        schedule = ScheduleConfig(base_lr=1.0, max_epochs=10, warmup_epochs=0, power=1.0)
        assert poly_lr(0, schedule) == pytest.approx(1.0)
        assert poly_lr(5, schedule) == pytest.approx(0.5)

    def test_schedule_validation(self):
        with pytest.raises(ValueError, match="base_lr"):
            ScheduleConfig(base_lr=0.0)
        with pytest.raises(ValueError, match="max_epochs"):
            ScheduleConfig(max_epochs=0)
        with pytest.raises(ValueError, match="warmup"):
            ScheduleConfig(warmup_epochs=450)
        with pytest.raises(ValueError, match="power"):
            ScheduleConfig(power=0.0)
