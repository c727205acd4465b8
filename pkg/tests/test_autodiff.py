import numpy as np
import pytest

import grad_instances as gi
import naive_ops as ref
from stereoforge import GraphError, NonFiniteError, ShapeError, Tensor, no_grad
from stereoforge import autodiff as ad


class TestTensor:
    def test_leaf_rejects_nan(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0, np.nan])

    def test_leaf_rejects_inf(self):
        with pytest.raises(NonFiniteError):
            Tensor([np.inf])

    def test_data_is_f32(self):
        t = Tensor([1, 2, 3])
        assert t.data.dtype == np.float32

    def test_grad_matches_shape_after_backward(self):
        x = Tensor(np.ones((2, 3)), requires_grad=True)
        ad.sum_all(x).backward()
        assert x.grad.shape == x.data.shape

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        y = ad.mul(x, x)
        with pytest.raises(GraphError):
            y.backward()

    def test_second_backward_is_stale(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = ad.sum_all(ad.mul(x, x))
        loss.backward()
        with pytest.raises(GraphError):
            loss.backward()

    def test_consumed_node_cannot_be_reused(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = ad.mul(x, x)
        ad.sum_all(y).backward()
        with pytest.raises(GraphError):
            ad.sum_all(y)

    def test_grad_accumulates_over_shared_subexpression(self):
        x = Tensor([3.0], requires_grad=True)
        loss = ad.sum_all(ad.add(ad.mul(x, x), ad.mul(x, x)))
        loss.backward()
        assert np.allclose(x.grad, 12.0)  # d/dx 2x^2

    def test_square_gradient(self):
        x = Tensor([1.0, -2.0, 0.5], requires_grad=True)
        ad.sum_all(ad.mul(x, x)).backward()
        assert np.allclose(x.grad, 2 * x.data)

    def test_unreached_tensor_gets_no_grad(self):
        x = Tensor([1.0], requires_grad=True)
        y = Tensor([2.0], requires_grad=True)
        ad.sum_all(ad.mul(x, x)).backward()
        assert y.grad is None

    def test_no_grad_builds_no_graph(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with no_grad():
            y = ad.mul(x, x)
        assert y._backward is None
        assert y._parents == ()


class TestConv2d:
    def test_all_ones_3x3_center_is_9(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        b = Tensor(np.zeros(1))
        out = ad.conv2d(x, w, b, stride=1, pad=1)
        assert out.data[0, 0, 1, 1] == 9.0

    def test_delta_kernel_is_identity(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 5, 5)).astype(np.float32))
        w = np.zeros((3, 3, 3, 3), dtype=np.float32)
        for c in range(3):
            w[c, c, 1, 1] = 1.0
        out = ad.conv2d(x, Tensor(w), Tensor(np.zeros(3)), stride=1, pad=1)
        assert np.array_equal(out.data, x.data)

    def test_zero_input_zero_bias_gives_zero(self, rng):
        x = Tensor(np.zeros((1, 2, 4, 4)))
        w = Tensor(rng.standard_normal((3, 2, 3, 3)).astype(np.float32))
        out = ad.conv2d(x, w, Tensor(np.zeros(3)), stride=1, pad=1)
        assert np.all(out.data == 0)

    def test_matches_naive_reference(self, rng):
        for stride, pad, k in [(1, 0, 3), (1, 1, 3), (2, 1, 3), (1, 0, 1)]:
            h = 5 if (5 + 2 * pad - k) % stride == 0 else 6
            x = rng.standard_normal((2, 3, h, h)).astype(np.float32)
            w = rng.standard_normal((4, 3, k, k)).astype(np.float32)
            b = rng.standard_normal(4).astype(np.float32)
            got = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad).data
            want = ref.conv2d_ref(x, w, b, stride, pad)
            assert ref.rel_err(got, want) < 1e-5

    def test_inexact_output_size_rejected(self):
        x = Tensor(np.zeros((1, 1, 5, 5)))
        w = Tensor(np.zeros((1, 1, 2, 2)))
        with pytest.raises(ShapeError):
            ad.conv2d(x, w, Tensor(np.zeros(1)), stride=2, pad=0)

    def test_gradients(self):
        worst = max(gi.check_conv2d(np.random.default_rng(i)) for i in range(5))
        assert worst < 1e-3


class TestMaxPool2d:
    def test_window_max(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        assert ad.max_pool2d(x, 2).data[0, 0, 0, 0] == 4.0

    def test_constant_input_same_constant(self):
        x = Tensor(np.full((1, 2, 4, 4), 0.7, dtype=np.float32))
        out = ad.max_pool2d(x, 2)
        assert np.all(out.data == np.float32(0.7))

    def test_tie_routes_gradient_to_first_in_row_major(self):
        x = Tensor(np.full((1, 1, 2, 2), 1.0, dtype=np.float32), requires_grad=True)
        ad.sum_all(ad.max_pool2d(x, 2)).backward()
        assert np.array_equal(x.grad.reshape(-1), [1.0, 0.0, 0.0, 0.0])

    def test_window_exceeding_input_rejected(self):
        with pytest.raises(ShapeError):
            ad.max_pool2d(Tensor(np.zeros((1, 1, 2, 2))), 3)

    def test_matches_naive_reference(self, rng):
        x = rng.standard_normal((2, 3, 6, 4)).astype(np.float32)
        got = ad.max_pool2d(Tensor(x), 2).data
        assert np.array_equal(got, ref.max_pool2d_ref(x, 2, 2).astype(np.float32))

    def test_gradients(self):
        worst = max(gi.check_max_pool2d(np.random.default_rng(i)) for i in range(5))
        assert worst < 1e-3


class TestDeconv2d:
    def test_s1_delta_kernel_is_identity(self, rng):
        x = rng.standard_normal((1, 2, 4, 5)).astype(np.float32)
        w = np.zeros((2, 2, 2, 2), dtype=np.float32)
        for c in range(2):
            w[c, c, 0, 0] = 1.0
        out = ad.deconv2d(Tensor(x), Tensor(w), stride=1, pad=0)
        assert np.array_equal(out.data, x)

    def test_zero_input_gives_zero(self, rng):
        w = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
        out = ad.deconv2d(Tensor(np.zeros((1, 2, 3, 3))), Tensor(w), stride=2, pad=1)
        assert np.all(out.data == 0)
        assert out.shape == (1, 3, 6, 6)

    def test_matches_naive_scatter(self, rng):
        for s in (1, 2, 3, 4):
            x = rng.standard_normal((2, 2, 3, 4)).astype(np.float32)
            w = rng.standard_normal((2, 3, 2 * s, 2 * s)).astype(np.float32)
            got = ad.deconv2d(Tensor(x), Tensor(w), stride=s, pad=s // 2).data
            want = ref.deconv2d_ref(x, w, s)
            assert got.shape == want.shape == (2, 3, 3 * s, 4 * s)
            assert ref.rel_err(got, want) < 1e-5

    def test_forward_equals_conv_backward_data(self, rng):
        # transposed semantics: deconv forward == gradient of conv wrt input
        s = 2
        x = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
        w = rng.standard_normal((2, 3, 2 * s, 2 * s)).astype(np.float32)
        dec = ad.deconv2d(Tensor(x), Tensor(w), stride=s, pad=s // 2).data

        xin = Tensor(np.zeros((1, 3, 6, 6)), requires_grad=True)
        out = ad.conv2d(xin, Tensor(w), Tensor(np.zeros(2)), stride=s, pad=s // 2)
        ad.sum_all(ad.mul(out, Tensor(x))).backward()
        assert ref.rel_err(dec, xin.grad) < 1e-5

    def test_wrong_kernel_size_rejected(self):
        with pytest.raises(ShapeError):
            ad.deconv2d(Tensor(np.zeros((1, 1, 2, 2))),
                        Tensor(np.zeros((1, 1, 3, 3))), stride=2, pad=1)

    def test_wrong_pad_rejected(self):
        with pytest.raises(ShapeError):
            ad.deconv2d(Tensor(np.zeros((1, 1, 2, 2))),
                        Tensor(np.zeros((1, 1, 4, 4))), stride=2, pad=0)

    def test_gradients(self):
        worst = max(gi.check_deconv2d(np.random.default_rng(i)) for i in range(5))
        assert worst < 1e-3


class TestFullyConnected:
    def test_identity_weight(self, rng):
        x = rng.standard_normal((3, 4)).astype(np.float32)
        out = ad.fully_connected(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4)))
        assert np.array_equal(out.data, x)

    def test_zero_weight_bias_rows(self):
        b = np.array([1.0, -2.0], dtype=np.float32)
        out = ad.fully_connected(Tensor(np.ones((3, 4))), Tensor(np.zeros((4, 2))),
                                 Tensor(b))
        assert np.array_equal(out.data, np.tile(b, (3, 1)))

    def test_matches_naive_matmul(self, rng):
        x = rng.standard_normal((3, 4)).astype(np.float32)
        w = rng.standard_normal((4, 2)).astype(np.float32)
        b = rng.standard_normal(2).astype(np.float32)
        got = ad.fully_connected(Tensor(x), Tensor(w), Tensor(b)).data
        assert ref.rel_err(got, ref.fully_connected_ref(x, w, b)) < 1e-6

    def test_gradients(self):
        worst = max(gi.check_fully_connected(np.random.default_rng(i)) for i in range(5))
        assert worst < 1e-3


class TestBatchNorm:
    def test_constant_input_maps_to_beta(self):
        x = Tensor(np.full((2, 1, 3, 3), 4.0, dtype=np.float32))
        state = ad.BatchNormState.for_channels(1)
        out = ad.batch_norm(x, Tensor([1.0]), Tensor([0.0]), state, mode="train")
        assert np.allclose(out.data, 0.0, atol=1e-4)

    def test_beta_5_constant_input(self):
        x = Tensor(np.full((2, 1, 3, 3), 4.0, dtype=np.float32))
        state = ad.BatchNormState.for_channels(1)
        out = ad.batch_norm(x, Tensor([1.0]), Tensor([5.0]), state, mode="train")
        assert np.allclose(out.data, 5.0, atol=1e-4)

    def test_normalizes_mean_and_variance(self, rng):
        x = Tensor(rng.standard_normal((4, 3, 8, 8)).astype(np.float32) * 3 + 1)
        state = ad.BatchNormState.for_channels(3)
        out = ad.batch_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), state,
                            mode="train").data
        for c in range(3):
            assert abs(out[:, c].mean()) < 1e-4
            assert abs(out[:, c].var() - 1.0) < 1e-3

    def test_eval_before_train_rejected(self):
        state = ad.BatchNormState.for_channels(1)
        with pytest.raises(GraphError):
            ad.batch_norm(Tensor(np.zeros((1, 1, 2, 2))), Tensor([1.0]),
                          Tensor([0.0]), state, mode="eval")

    def test_running_stats_blend(self, rng):
        state = ad.BatchNormState.for_channels(1)
        x1 = rng.standard_normal((2, 1, 4, 4)).astype(np.float32)
        ad.batch_norm(Tensor(x1), Tensor([1.0]), Tensor([0.0]), state, mode="train")
        first_mean = state.running_mean.copy()
        assert np.allclose(first_mean, x1.mean(), atol=1e-6)
        x2 = x1 + 1
        ad.batch_norm(Tensor(x2), Tensor([1.0]), Tensor([0.0]), state, mode="train")
        want = 0.9 * first_mean + 0.1 * x2.mean()
        assert np.allclose(state.running_mean, want, atol=1e-5)
        assert state.batches_seen == 2

    def test_eval_uses_running_stats(self, rng):
        state = ad.BatchNormState.for_channels(2)
        x = rng.standard_normal((4, 2, 4, 4)).astype(np.float32)
        ad.batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), state,
                      mode="train")
        out = ad.batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                            state, mode="eval").data
        want = (x - state.running_mean.reshape(1, 2, 1, 1)) / np.sqrt(
            state.running_var.reshape(1, 2, 1, 1) + 1e-5)
        assert ref.rel_err(out, want) < 1e-5

    def test_gradients(self):
        worst = max(gi.check_batch_norm(np.random.default_rng(i)) for i in range(5))
        assert worst < 1e-3


class TestSoftmaxChannels:
    def test_equal_logits_uniform_33(self):
        out = ad.softmax_channels(Tensor(np.zeros((1, 33, 2, 2))))
        assert np.allclose(out.data, 1.0 / 33.0, atol=1e-7)

    def test_dominant_logit(self):
        # (10, 0, 0): 1 / (1 + 2 e^-10) = 0.999909
        logits = np.zeros((1, 3, 1, 1), dtype=np.float32)
        logits[0, 0] = 10.0
        out = ad.softmax_channels(Tensor(logits))
        assert out.data[0, 0, 0, 0] > 0.9999

    def test_sums_to_one(self, rng):
        x = rng.standard_normal((2, 5, 3, 4)).astype(np.float32) * 10
        out = ad.softmax_channels(Tensor(x)).data
        assert np.abs(out.sum(axis=1) - 1.0).max() < 1e-6

    def test_shift_invariance(self, rng):
        x = rng.standard_normal((1, 6, 2, 2)).astype(np.float32)
        a = ad.softmax_channels(Tensor(x)).data
        b = ad.softmax_channels(Tensor(x + 7.5)).data
        assert np.abs(a - b).max() < 1e-6

    def test_gradients(self):
        worst = max(gi.check_softmax_channels(np.random.default_rng(i))
                    for i in range(5))
        assert worst < 1e-3


class TestPointwise:
    def test_relu_values(self):
        out = ad.relu(Tensor([-1.0, 2.0]))
        assert np.array_equal(out.data, [0.0, 2.0])

    def test_dropout_rate_zero_is_identity(self, rng):
        x = Tensor(rng.standard_normal(10).astype(np.float32))
        assert ad.dropout(x, 0.0, mode="train") is x

    def test_dropout_eval_is_identity(self, rng):
        x = Tensor(rng.standard_normal(10).astype(np.float32))
        assert ad.dropout(x, 0.5, mode="eval") is x

    def test_dropout_preserves_expectation(self):
        x = Tensor(np.ones(10 ** 6, dtype=np.float32))
        out = ad.dropout(x, 0.5, rng=np.random.default_rng(0), mode="train")
        assert 0.99 < out.data.mean() < 1.01

    def test_dropout_rate_one_rejected(self):
        with pytest.raises(ValueError):
            ad.dropout(Tensor([1.0]), 1.0, rng=np.random.default_rng(0))

    def test_dropout_same_seed_same_mask(self, rng):
        x = Tensor(rng.standard_normal(100).astype(np.float32))
        a = ad.dropout(x, 0.5, rng=np.random.default_rng(3), mode="train").data
        b = ad.dropout(x, 0.5, rng=np.random.default_rng(3), mode="train").data
        assert np.array_equal(a, b)

    def test_gradients(self):
        worst = max(gi.check_relu(np.random.default_rng(i)) for i in range(5))
        assert worst < 1e-3
        worst = max(gi.check_dropout(np.random.default_rng(i)) for i in range(5))
        assert worst < 1e-3


class TestL1Loss:
    def test_identical_tensors_zero(self, rng):
        x = rng.standard_normal((3, 4)).astype(np.float32)
        assert ad.l1_loss(Tensor(x), Tensor(x.copy())).item() == 0.0

    def test_zero_vs_one_is_one(self):
        loss = ad.l1_loss(Tensor(np.zeros((2, 5))), Tensor(np.ones((2, 5))))
        assert loss.item() == 1.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            ad.l1_loss(Tensor(np.zeros(3)), Tensor(np.zeros(4)))

    def test_gradient_is_sign_over_count(self):
        o = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        y = Tensor([0.0, 0.0, 5.0])
        ad.l1_loss(o, y).backward()
        assert np.allclose(o.grad, np.array([1, -1, -1]) / 3.0)

    def test_gradients(self):
        worst = max(gi.check_l1_loss(np.random.default_rng(i)) for i in range(5))
        assert worst < 1e-3


class TestNonFinitePropagation:
    def test_nonfinite_loss_detected(self):
        x = Tensor([1e38], requires_grad=True)
        y = ad.mul(x, x)  # overflows f32 to inf
        with pytest.raises(NonFiniteError):
            ad.l1_loss(y, Tensor([0.0]))

    def test_composite_pipeline_gradients(self, rng):
        worst = max(gi.check_elementwise(np.random.default_rng(i)) for i in range(5))
        assert worst < 1e-3


def test_determinism_same_ops_same_bits(rng):
    x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    outs = []
    for _ in range(2):
        t = ad.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(4)), 1, 1)
        outs.append(ad.softmax_channels(t).data.tobytes())
    assert outs[0] == outs[1]
