import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cmem import image_models, kernels
from cmem.nn import (
    AdamState, Conv2D, Dense, Flatten, LayerSpec, MaxPool2x2, NoForwardError, ReLU, Reshape, Sequential,
    ShapeError, Sigmoid, Upsample2x2, activation, adam_step, backward, central_difference, conv2d_forward,
    dense_forward, kl_diag_gaussian, kl_diag_gaussian_grad, loss_bce, loss_bce_grad, loss_mse, loss_mse_grad,
    max_relative_error, maxpool2x2, reparameterize, reparameterize_grad, upsample2x2,
)

from gradchecks import check_layer, full_model_gradient_error, layer_instances, loss_gradient_errors
from oracles import conv_loops, matmul_loops


class TestDense:
    def test_identity_weights(self):
        out = dense_forward([[1.0, 2.0]], np.eye(2), [1.0, 1.0])
        np.testing.assert_array_equal(out, [[2.0, 3.0]])

    def test_zero_input_returns_bias(self, rng):
        out = dense_forward([[0.0, 0.0]], rng.standard_normal((2, 2)), [0.5, -0.5])
        np.testing.assert_array_equal(out, [[0.5, -0.5]])

    def test_matches_loop_matmul(self, rng):
        x, W, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 5)), rng.standard_normal(5)
        assert np.abs(dense_forward(x, W, b) - matmul_loops(x, W, b)).max() < 1e-12

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(1, 3\).*\(2, 2\)"):
            dense_forward(np.ones((1, 3)), np.ones((2, 2)), np.ones(2))


class TestConv:
    def test_ones_padding_arithmetic(self, backend):
        out = conv2d_forward(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1))
        assert out[0, 0, 1, 1] == 9
        assert out[0, 0, 0, 0] == 4

    def test_conv_pool_flatten_is_3136(self, backend):
        layer = Conv2D(1, 8, 5)
        pooled = MaxPool2x2().forward(layer.forward(np.zeros((1, 1, 28, 56), np.float32)))
        assert pooled.shape == (1, 8, 14, 28)
        assert Flatten().forward(pooled).shape == (1, 3136)

    def test_matches_loop_oracle(self, backend, rng):
        x = rng.standard_normal((2, 2, 6, 6))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        assert np.abs(conv2d_forward(x, w, b) - conv_loops(x, w, b)).max() < 1e-10

    def test_matches_loop_oracle_5x5(self, backend, rng):
        x = rng.standard_normal((1, 3, 7, 9))
        w = rng.standard_normal((2, 3, 5, 5))
        b = rng.standard_normal(2)
        assert np.abs(conv2d_forward(x, w, b) - conv_loops(x, w, b)).max() < 1e-10

    @pytest.mark.parametrize("filters", [1, 3, 4, 8])
    def test_matches_loop_oracle_any_width(self, backend, filters, rng):
        # the compiled backend switches strategy with the filter count
        x = rng.standard_normal((2, 3, 6, 10))
        w = rng.standard_normal((filters, 3, 3, 3))
        b = rng.standard_normal(filters)
        assert np.abs(conv2d_forward(x, w, b) - conv_loops(x, w, b)).max() < 1e-10

    def test_even_kernel_rejected_at_build(self):
        with pytest.raises(ValueError, match="odd"):
            LayerSpec("conv2d", (1, 8, 4))
        with pytest.raises(ValueError, match="odd"):
            Sequential([LayerSpec("conv2d", (1, 8, 2))])


class TestPoolUpsample:
    def test_pool_window_max(self, backend):
        np.testing.assert_array_equal(maxpool2x2(np.array([[1.0, 2.0], [3.0, 4.0]])), [[4.0]])

    def test_upsample_replicates(self, backend):
        np.testing.assert_array_equal(upsample2x2(np.array([[5.0]])), [[5.0, 5.0], [5.0, 5.0]])

    def test_constant_roundtrip(self, backend):
        x = np.full((2, 3, 4, 6), 1.5)
        np.testing.assert_array_equal(upsample2x2(maxpool2x2(x)), x)

    def test_odd_pool_rejected(self, backend):
        with pytest.raises(ShapeError):
            maxpool2x2(np.ones((3, 4)))
        with pytest.raises(ShapeError):
            MaxPool2x2().forward(np.ones((1, 1, 4, 5)))


class TestActivations:
    def test_relu(self):
        np.testing.assert_array_equal(activation(np.array([-1.0, 0.0, 2.0]), "relu"), [0, 0, 2])

    def test_sigmoid_zero(self):
        assert activation(np.array([0.0]), "sigmoid")[0] == 0.5

    def test_sigmoid_saturation_is_finite(self):
        out = activation(np.array([50.0, -50.0]), "sigmoid")
        assert np.all(np.isfinite(out))
        assert abs(out[0] - 1.0) < 1e-15 and abs(out[1]) < 1e-15

    def test_sigmoid_open_interval(self, rng):
        out = activation(rng.standard_normal(1000) * 10, "sigmoid")
        assert np.all((out > 0) & (out < 1))


class TestLosses:
    def test_mse(self):
        assert loss_mse([0.0, 0.0], [1.0, 1.0]) == 1.0

    def test_bce_half(self):
        assert loss_bce(np.array([0.5]), np.array([1.0])) == pytest.approx(math.log(2), abs=1e-12)

    @pytest.mark.parametrize("t", [0.0, 1.0])
    def test_bce_perfect_prediction(self, t):
        assert loss_bce(np.array([t]), np.array([t])) < 1e-6

    def test_bce_rejects_targets_outside_unit_interval(self):
        with pytest.raises(ValueError):
            loss_bce(np.array([0.5]), np.array([1.5]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            loss_mse(np.zeros(2), np.zeros(3))
        with pytest.raises(ShapeError):
            loss_bce(np.full(2, 0.5), np.zeros(3))

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0.001, 0.999), min_size=1, max_size=8),
           st.lists(st.floats(0.0, 1.0), min_size=8, max_size=8))
    def test_non_negative(self, p, t):
        p = np.array(p)
        t = np.array(t[:len(p)])
        assert loss_bce(p, t) >= 0
        assert loss_mse(p, t) >= 0


class TestKL:
    def test_standard_normal_is_zero(self):
        assert kl_diag_gaussian(np.zeros(5), np.zeros(5)) == 0.0

    def test_unit_mean_shift(self):
        assert kl_diag_gaussian(np.array([1.0]), np.array([0.0])) == pytest.approx(0.5, abs=1e-15)

    def test_non_negative_over_random_draws(self, rng):
        for _ in range(1000):
            d = rng.integers(1, 6)
            assert kl_diag_gaussian(rng.normal(0, 2, d), rng.normal(0, 2, d)) >= 0


class TestReparameterize:
    def test_zero_eps_returns_mu(self, rng):
        mu = rng.standard_normal(4)
        np.testing.assert_array_equal(reparameterize(mu, rng.standard_normal(4), np.zeros(4)), mu)

    def test_unit_sigma_adds_eps(self, rng):
        mu, e = rng.standard_normal(4), rng.standard_normal(4)
        np.testing.assert_array_equal(reparameterize(mu, np.zeros(4), e), mu + e)

    def test_monte_carlo_mean(self):
        eps = np.random.default_rng(7).standard_normal(100_000)
        z = reparameterize(np.full(100_000, 0.3), np.zeros(100_000), eps)
        assert abs(z.mean() - 0.3) < 0.02


# --- gradients ------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(20))
def test_layer_gradients_match_finite_differences(backend, seed):
    rng = np.random.default_rng(seed)
    for layer, x in layer_instances(rng):
        assert check_layer(layer, x, rng) < 1e-4, layer.spec.kind


@pytest.mark.parametrize("seed", range(20))
def test_loss_gradients_match_finite_differences(seed):
    errors = loss_gradient_errors(seed)
    assert max(errors.values()) < 1e-4, errors


def test_hand_derivative_of_scalar_mse():
    layer = Dense(1, 1, dtype=np.float64)
    layer.params["W"][...] = 1.0
    net = Sequential([])
    net.layers = [layer]
    pred = net.forward(np.array([[2.0]]))
    grads = backward(net, loss_mse_grad(pred, np.array([[0.0]])))
    assert grads["0.W"][0, 0] == 8.0


def test_exact_fit_gives_zero_gradients(rng):
    net = Sequential([LayerSpec("dense", (3, 2)), LayerSpec("relu"), LayerSpec("dense", (2, 2))], dtype=np.float64)
    x = rng.standard_normal((4, 3))
    target = net.forward(x, train=False)
    pred = net.forward(x)
    grads = backward(net, loss_mse_grad(pred, target))
    assert all(np.all(g == 0) for g in grads.values())


def test_backward_without_forward_raises():
    with pytest.raises(NoForwardError):
        Dense(2, 2).backward(np.ones((1, 2)))
    net = Sequential([LayerSpec("dense", (2, 2)), LayerSpec("sigmoid")])
    with pytest.raises(NoForwardError):
        backward(net, np.ones((1, 2)))


@pytest.mark.parametrize("kind", image_models.KINDS)
def test_full_model_gradient_against_finite_differences(backend, kind):
    worst, valid_fraction = full_model_gradient_error(kind, seed=3)
    assert worst < 1e-4
    assert valid_fraction >= 0.8


@pytest.mark.parametrize("filters", [2, 5])
def test_backends_agree_on_gradients(rng, filters):
    if len(kernels.available_backends()) < 2:
        pytest.skip("numba unavailable")
    x = rng.standard_normal((3, 4, 8, 10)).astype(np.float32)
    w = rng.standard_normal((filters, 4, 3, 3)).astype(np.float32)
    dy = rng.standard_normal((3, filters, 8, 10)).astype(np.float32)
    from cmem.kernels import _numba, _numpy
    for a, b in zip(_numba.conv2d_backward(x, w, dy), _numpy.conv2d_backward(x, w, dy)):
        assert np.abs(a - b).max() <= 1e-4 * np.abs(b).max()
    pa, ia = _numba.maxpool2x2_forward(x)
    pb, ib = _numpy.maxpool2x2_forward(x)
    np.testing.assert_array_equal(pa, pb)
    np.testing.assert_array_equal(ia, ib)


class TestAdam:
    def test_first_step_magnitude(self):
        p = {"w": np.array([1.0, -2.0, 3.0])}
        adam_step(p, {"w": np.array([0.7, 0.7, 0.7])}, AdamState())
        np.testing.assert_allclose(np.array([1.0, -2.0, 3.0]) - p["w"], 0.001, rtol=1e-6)

    def test_zero_gradient_no_update(self):
        p = {"w": np.array([1.0, 2.0])}
        adam_step(p, {"w": np.zeros(2)}, AdamState())
        np.testing.assert_array_equal(p["w"], [1.0, 2.0])

    def test_quadratic_descent(self):
        # at the default lr each step moves <= ~0.001, so 200 steps cannot reach 0.05; use lr=0.01
        p = {"t": np.array([1.0])}
        state = AdamState(lr=0.01)
        for _ in range(200):
            adam_step(p, {"t": 2 * p["t"]}, state)
        assert abs(p["t"][0]) < 0.05

    def test_default_lr_step_bound(self):
        p = {"t": np.array([1.0])}
        state = AdamState()
        for _ in range(200):
            adam_step(p, {"t": 2 * p["t"]}, state)
        assert p["t"][0] > 1 - 200 * 0.001 * 1.01

    def test_state_counts_steps(self):
        state = AdamState()
        p = {"w": np.ones(3)}
        for _ in range(3):
            adam_step(p, {"w": np.ones(3)}, state)
        assert state.t == 3
        assert state.m["w"].shape == p["w"].shape == state.v["w"].shape


def test_training_is_bitwise_deterministic(backend):
    images = np.random.default_rng(0).uniform(0, 1, (64, 28, 56)).astype(np.float32)
    runs = []
    for _ in range(2):
        m = image_models.build("conv_vae", seed=9)
        image_models.train_image_model(m, images, epochs=1, batch=32, seed=4)
        runs.append(m.params())
    for k in runs[0]:
        np.testing.assert_array_equal(runs[0][k], runs[1][k])


def test_forward_and_backward_stay_finite(rng):
    m = image_models.build("conv_vae", seed=1)
    x = rng.uniform(0, 1, (4, 1, 28, 56)).astype(np.float32)
    eps = rng.standard_normal((4, 100)).astype(np.float32)
    image_models.loss_and_grads(m, x, eps)
    assert all(np.all(np.isfinite(g)) for g in m.grads().values())
