import numpy as np
import pytest

from resgait.gradcheck import check_lstm, check_mlp, check_moe
from resgait.nets import (
    ACTIVATIONS,
    AdamState,
    DenseLayerParams,
    DimensionMismatchError,
    LstmStackParams,
    MlpParams,
    activate,
    adam_step,
    init_lstm,
    init_mlp,
    load_checkpoint,
    load_into,
    lstm_step,
    lstm_step_backward,
    mlp_backward,
    mlp_forward,
    save_checkpoint,
)
from resgait.numerics import RngStream


class TestMlpForward:
    def test_zero_weights_bias_pass_through(self):
        for act in ACTIVATIONS:
            b = np.array([0.3, -0.7])
            params = MlpParams([DenseLayerParams(np.zeros((2, 3)), b)], [act])
            y, _ = mlp_forward(params, np.ones(3))
            assert np.allclose(y, activate(act, b))

    def test_single_identity_layer_is_affine(self):
        w = np.array([[1.0, 2.0], [0.5, -1.0]])
        b = np.array([0.1, 0.2])
        params = MlpParams([DenseLayerParams(w, b)], ["identity"])
        x = np.array([0.3, -0.4])
        y, _ = mlp_forward(params, x)
        assert np.allclose(y, w @ x + b)

    def test_batched_matches_single(self):
        params = init_mlp(RngStream(0, 1), [4, 6, 3])
        xs = RngStream(0, 2).gaussian(8).reshape(2, 4)
        batched, _ = mlp_forward(params, xs)
        for i in range(2):
            single, _ = mlp_forward(params, xs[i])
            # BLAS picks different kernels per shape; equality is to the ulp.
            assert np.allclose(batched[i], single, atol=1e-13, rtol=0)

    def test_dimension_mismatch(self):
        params = init_mlp(RngStream(0, 1), [4, 3])
        with pytest.raises(DimensionMismatchError):
            mlp_forward(params, np.zeros(5))

    def test_deterministic(self):
        params = init_mlp(RngStream(3, 1), [5, 8, 2])
        x = RngStream(3, 2).gaussian(5)
        y1, _ = mlp_forward(params, x)
        y2, _ = mlp_forward(params, x)
        assert np.array_equal(y1, y2)


class TestBackward:
    def test_zero_output_gradient(self):
        params = init_mlp(RngStream(1, 1), [3, 5, 2])
        x = RngStream(1, 2).gaussian(3)
        _, tape = mlp_forward(params, x)
        grads, dx = mlp_backward(params, tape, np.zeros(2))
        assert np.allclose(dx, 0.0)
        for _, g in grads.named_tensors():
            assert np.allclose(g, 0.0)

    def test_linear_network_input_gradient(self):
        w = RngStream(2, 1).gaussian(12).reshape(3, 4)
        params = MlpParams([DenseLayerParams(w, np.zeros(3))], ["identity"])
        x = RngStream(2, 2).gaussian(4)
        _, tape = mlp_forward(params, x)
        g = np.array([1.0, -2.0, 0.5])
        _, dx = mlp_backward(params, tape, g)
        assert np.allclose(dx, w.T @ g, atol=1e-14)

    def test_mlp_finite_differences(self):
        assert max(check_mlp(s) for s in range(10)) <= 1e-4

    def test_moe_finite_differences(self):
        assert max(check_moe(s) for s in range(10)) <= 1e-4

    def test_fault_injection_detected(self):
        assert check_mlp(0, inject_fault=True) > 1e-4
        assert check_lstm(0, inject_fault=True) > 1e-4
        assert check_moe(0, inject_fault=True) > 1e-4


class TestLstm:
    def test_zero_params_zero_state_zero_output(self):
        layers = init_lstm(RngStream(0, 1), 4, 6, 2)
        for layer in layers.layers:
            layer.w_input[:] = 0.0
            layer.w_hidden[:] = 0.0
            layer.biases[:] = 0.0
        y, state, _ = lstm_step(layers, np.zeros(4), layers.zero_state(1))
        assert np.allclose(y, 0.0)

    def test_repeated_input_converges(self):
        params = init_lstm(RngStream(5, 1), 3, 8, 2)
        x = RngStream(5, 2).gaussian(3)
        state = params.zero_state(1)
        deltas = []
        prev_c = np.zeros(8)
        for _ in range(60):
            _, state, _ = lstm_step(params, x[None, :], state)
            c = state[-1][1][0]
            deltas.append(np.linalg.norm(c - prev_c))
            prev_c = c.copy()
        # After burn-in the cell updates shrink monotonically on average.
        assert np.mean(deltas[40:]) < np.mean(deltas[5:15])
        assert deltas[-1] < 1e-3

    def test_lstm_finite_differences(self):
        assert max(check_lstm(s) for s in range(10)) <= 1e-4

    def test_state_shape_mismatch(self):
        params = init_lstm(RngStream(0, 1), 3, 6, 2)
        bad_state = [(np.zeros((1, 5)), np.zeros((1, 5)))] * 2
        with pytest.raises(DimensionMismatchError):
            lstm_step(params, np.zeros((1, 3)), bad_state)

    def test_batched_matches_single(self):
        params = init_lstm(RngStream(9, 1), 4, 5, 2)
        xs = RngStream(9, 2).gaussian(8).reshape(2, 4)
        state = params.zero_state(2)
        y, _, _ = lstm_step(params, xs, state)
        for i in range(2):
            yi, _, _ = lstm_step(params, xs[i], params.zero_state(1))
            assert np.allclose(y[i], yi, atol=1e-15)


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        params = init_mlp(RngStream(0, 1), [3, 4, 2])
        before = {k: v.copy() for k, v in params.named_tensors()}
        state = AdamState.for_params(params)
        grads = {k: np.zeros_like(v) for k, v in params.named_tensors()}
        assert adam_step(state, params, grads)
        for k, v in params.named_tensors():
            assert np.array_equal(v, before[k])

    def test_first_step_magnitude(self):
        # With constant gradient, the first bias-corrected step is about
        # -lr * g / (|g| + eps) which has magnitude ~= lr.
        params = MlpParams([DenseLayerParams(np.zeros((1, 1)), np.zeros(1))], ["identity"])
        state = AdamState.for_params(params, learning_rate=0.01)
        grads = {"layer0.weights": np.array([[2.5]]), "layer0.biases": np.array([0.0])}
        adam_step(state, params, grads)
        assert abs(abs(params.layers[0].weights[0, 0]) - 0.01) < 1e-6

    def test_rejects_non_finite(self):
        params = init_mlp(RngStream(0, 1), [2, 2])
        before = {k: v.copy() for k, v in params.named_tensors()}
        state = AdamState.for_params(params)
        grads = {k: np.full_like(v, np.nan) for k, v in params.named_tensors()}
        assert not adam_step(state, params, grads)
        assert state.step == 0
        for k, v in params.named_tensors():
            assert np.array_equal(v, before[k])

    def test_quadratic_bowl_convergence(self):
        params = MlpParams(
            [DenseLayerParams(RngStream(4, 1).gaussian(4).reshape(2, 2), RngStream(4, 2).gaussian(2))],
            ["identity"],
        )
        state = AdamState.for_params(params, learning_rate=0.05)
        for _ in range(2000):
            grads = {k: 2.0 * v for k, v in params.named_tensors()}
            adam_step(state, params, grads)
        norm = np.sqrt(sum(np.sum(v**2) for _, v in params.named_tensors()))
        assert norm < 1e-3


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        params = init_mlp(RngStream(8, 1), [7, 5, 3])
        path = tmp_path / "net.ckpt"
        save_checkpoint(path, params.named_tensors("model."))
        loaded = load_checkpoint(path)
        for name, tensor in params.named_tensors("model."):
            assert np.array_equal(loaded[name], tensor)
            assert loaded[name].dtype == np.float64

    def test_magic_bytes(self, tmp_path):
        path = tmp_path / "net.ckpt"
        save_checkpoint(path, [("x", np.arange(3.0))])
        assert path.read_bytes()[:8] == b"RUNCKPT1"

    def test_rejects_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
        with pytest.raises(ValueError):
            load_checkpoint(path)

    def test_load_into_shapes(self, tmp_path):
        params = init_lstm(RngStream(2, 1), 4, 6, 2)
        path = tmp_path / "l.ckpt"
        save_checkpoint(path, params.named_tensors())
        fresh = init_lstm(RngStream(99, 1), 4, 6, 2)
        load_into(fresh, load_checkpoint(path))
        for (_, a), (_, b) in zip(fresh.named_tensors(), params.named_tensors()):
            assert np.array_equal(a, b)

    def test_load_into_missing_tensor(self, tmp_path):
        params = init_mlp(RngStream(1, 1), [2, 2])
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, [("other", np.zeros(2))])
        with pytest.raises(KeyError):
            load_into(params, load_checkpoint(path))
