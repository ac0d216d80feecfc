from __future__ import annotations

import math

import numpy as np
import pytest

from angkit import nn_core as nn
from angkit.nn_core import Node, ParamRegistry
from angkit.verify import check_op, end_to_end_check, primitive_checks


class TestForwardValues:
    def test_relu_values_and_backward_mask(self):
        x = Node(np.array([-1.0, 0.0, 2.0]))
        out = nn.relu(x)
        np.testing.assert_array_equal(out.value, [0.0, 0.0, 2.0])
        loss = nn.sum_all(out)
        nn.backward(loss)
        np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])

    def test_matmul_identity(self, rng):
        x = Node(rng.normal(size=(3, 3)))
        out = nn.matmul(Node(np.eye(3)), x)
        np.testing.assert_allclose(out.value, x.value)

    def test_matmul_shape_error_names_shapes(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 2\)"):
            nn.matmul(Node(np.zeros((2, 3))), Node(np.zeros((2, 2))))

    def test_concat_slice_inverse(self, rng):
        a = Node(rng.normal(size=(2, 3, 1, 1)))
        b = Node(rng.normal(size=(3, 3, 1, 1)))
        cat = nn.concat_channels([a, b])
        np.testing.assert_array_equal(nn.slice_channels(cat, 0, 2).value, a.value)
        np.testing.assert_array_equal(nn.slice_channels(cat, 2, 5).value, b.value)

    def test_conv_1x1_identity_and_sum_kernel(self, rng):
        x = Node(rng.normal(size=(2, 3, 2, 1)))
        ident = nn.conv_1x1(x, Node(np.eye(2)), Node(np.zeros(2)))
        np.testing.assert_allclose(ident.value, x.value)
        summed = nn.conv_1x1(x, Node(np.array([[1.0, 1.0]])), Node(np.zeros(1)))
        np.testing.assert_allclose(summed.value[0], x.value.sum(axis=0))

    def test_temporal_conv_delta_kernel_is_identity(self, rng):
        x = Node(rng.normal(size=(2, 5, 2, 1)))
        w = Node(np.tile([0.0, 1.0, 0.0], (2, 1)))
        np.testing.assert_allclose(nn.temporal_conv_3x1(x, w).value, x.value)

    def test_temporal_conv_difference_kernel(self):
        x = Node(np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1, 1))
        w = Node(np.array([[-1.0, 0.0, 1.0]]))
        out = nn.temporal_conv_3x1(x, w, dilation=1)
        np.testing.assert_allclose(out.value.reshape(-1), [2.0, 2.0, -2.0])

    def test_temporal_conv_dilated_shift(self):
        x = Node(np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1, 1))
        w = Node(np.array([[1.0, 0.0, 0.0]]))
        out = nn.temporal_conv_3x1(x, w, dilation=2)
        np.testing.assert_allclose(out.value.reshape(-1), [0.0, 0.0, 1.0])

    def test_maxpool_values(self):
        x = Node(np.array([1.0, 5.0, 2.0]).reshape(1, 3, 1, 1))
        np.testing.assert_allclose(
            nn.temporal_maxpool_3x1(x).value.reshape(-1), [5.0, 5.0, 5.0]
        )

    def test_maxpool_constant_positive_input(self):
        x = Node(np.full((2, 4, 1, 1), 3.0))
        np.testing.assert_allclose(nn.temporal_maxpool_3x1(x).value, 3.0)

    def test_global_avg_pool_values(self):
        x = Node(np.full((3, 2, 2, 2), 3.0))
        np.testing.assert_allclose(nn.global_avg_pool(x).value, [3.0, 3.0, 3.0])
        one_hot = np.zeros((2, 2, 3, 1))
        one_hot[1, 0, 2, 0] = 1.0
        np.testing.assert_allclose(
            nn.global_avg_pool(Node(one_hot)).value, [0.0, 1.0 / 6.0]
        )

    def test_sample_avg_pool_matches_global(self, rng):
        batch = rng.normal(size=(3, 4, 2, 2, 2))  # B=3 samples of (4,2,2,2)
        cols = np.moveaxis(batch, 0, 3).reshape(4, 2, 2, 6)
        pooled = nn.sample_avg_pool(Node(cols), persons=2).value
        for b in range(3):
            np.testing.assert_allclose(
                pooled[:, b], nn.global_avg_pool(Node(batch[b])).value, atol=1e-12
            )


class TestSoftmaxCrossEntropy:
    def test_uniform_case(self):
        loss, probs = nn.softmax_cross_entropy(Node(np.zeros(4)), 2)
        np.testing.assert_allclose(probs, 0.25)
        assert float(loss.value) == pytest.approx(math.log(4.0))

    def test_extreme_logits_stable(self):
        loss, probs = nn.softmax_cross_entropy(Node(np.array([1000.0, 0.0])), 0)
        assert np.isfinite(loss.value)
        np.testing.assert_allclose(probs, [1.0, 0.0], atol=1e-300)

    def test_probs_sum_to_one_and_positive(self, rng):
        for _ in range(20):
            _, probs = nn.softmax_cross_entropy(Node(rng.normal(size=7) * 10), 3)
            assert probs.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(probs > 0.0)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="label"):
            nn.softmax_cross_entropy(Node(np.zeros(3)), 3)

    def test_batched_columns_match_scalar_op(self, rng):
        logits = rng.normal(size=(4, 5))
        labels = [0, 3, 1, 2, 2]
        loss, probs = nn.softmax_cross_entropy_cols(Node(logits), labels)
        total = 0.0
        for b, label in enumerate(labels):
            single, p = nn.softmax_cross_entropy(Node(logits[:, b]), label)
            total += float(single.value)
            np.testing.assert_allclose(probs[:, b], p, atol=1e-12)
        assert float(loss.value) == pytest.approx(total, abs=1e-9)


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = Node(rng.normal(size=(3, 4)))
        nn.backward(nn.sum_all(x))
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_diamond_fan_out_accumulates(self):
        x = Node(np.array([1.5]))
        y = nn.add(x, x)
        nn.backward(nn.sum_all(y))
        np.testing.assert_array_equal(x.grad, [2.0])

    def test_grads_accumulate_across_backward_calls(self):
        x = Node(np.array([1.0, 2.0]))
        nn.backward(nn.sum_all(x))
        nn.backward(nn.sum_all(x))
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ValueError, match="scalar"):
            nn.backward(Node(np.zeros(3)))

    def test_cycle_detected(self):
        x = Node(np.zeros(()))
        y = nn.mul_scalar(x, 2.0)
        x.parents = (y,)  # force a cycle
        with pytest.raises(ValueError, match="cycle"):
            nn.backward(y)

    def test_forward_determinism(self, rng):
        x = rng.normal(size=(3, 4, 2, 1))
        w = rng.normal(size=(5, 3))
        b = rng.normal(size=5)
        first = nn.conv_1x1(Node(x), Node(w), Node(b)).value
        second = nn.conv_1x1(Node(x.copy()), Node(w.copy()), Node(b.copy())).value
        assert np.array_equal(first, second)


class TestGradientChecks:
    def test_all_primitives_within_tolerance(self):
        for result in primitive_checks(seed=0):
            assert result.passed, f"{result.name}: {result.max_rel_error:.3e}"

    @pytest.mark.parametrize("seed", range(3))
    def test_twenty_random_instances_per_seedable_op(self, seed):
        rng = np.random.default_rng(seed)
        for _ in range(7):
            shape = (int(rng.integers(1, 4)), int(rng.integers(1, 6)),
                     int(rng.integers(1, 4)), int(rng.integers(1, 3)))
            result = check_op(
                "conv_1x1",
                lambda l: nn.conv_1x1(l[0], l[1], l[2]),
                [rng.normal(size=shape), rng.normal(size=(3, shape[0])), rng.normal(size=3)],
            )
            assert result.passed, f"{result.max_rel_error:.3e} on {shape}"

    def test_maxpool_gradient_away_from_ties(self, rng):
        result = check_op(
            "maxpool", lambda l: nn.temporal_maxpool_3x1(l[0]),
            [rng.normal(size=(2, 6, 2, 2))],
        )
        assert result.passed

    def test_end_to_end_tiny_network(self):
        result = end_to_end_check(seed=0, tolerance=1e-3)
        assert result.passed, f"max rel error {result.max_rel_error:.3e}"


class TestParamRegistry:
    def test_duplicate_name_rejected(self):
        reg = ParamRegistry()
        reg.register("w", np.zeros(3))
        with pytest.raises(ValueError, match="duplicate"):
            reg.register("w", np.zeros(3))

    def test_zero_grads_and_counts(self, rng):
        reg = ParamRegistry()
        a = reg.register("a", rng.normal(size=(2, 3)))
        reg.register("b", rng.normal(size=4))
        assert reg.num_values() == 10
        nn.backward(nn.sum_all(a))
        assert np.any(a.grad != 0.0)
        reg.zero_grads()
        np.testing.assert_array_equal(a.grad, np.zeros((2, 3)))
