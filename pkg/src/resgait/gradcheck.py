"""Finite-difference verification of every analytic gradient path.

Each check builds a small random network, evaluates a scalar loss, and
compares the recorded backward pass against central differences over all
parameters (and inputs). Relative error is measured per tensor as
||g_a - g_n|| / (||g_n|| + 1e-12).
"""

from __future__ import annotations

import numpy as np

from .cmg import init_moe, moe_backward, moe_forward
from .config import CmgConfig
from .nets import (
    init_lstm,
    init_mlp,
    lstm_step,
    lstm_step_backward,
    mlp_backward,
    mlp_forward,
)
from .numerics import RngStream

FD_STEP = 1e-5
TOLERANCE = 1e-4


def numeric_gradient(loss_fn, tensors: list[tuple[str, np.ndarray]], step: float = FD_STEP):
    """Central-difference gradient of ``loss_fn()`` w.r.t. named tensors.

    The tensors are perturbed in place, so ``loss_fn`` must read them on
    every call.
    """
    grads = {}
    for name, tensor in tensors:
        g = np.zeros_like(tensor)
        it = np.nditer(tensor, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            original = tensor[idx]
            tensor[idx] = original + step
            up = loss_fn()
            tensor[idx] = original - step
            down = loss_fn()
            tensor[idx] = original
            g[idx] = (up - down) / (2.0 * step)
            it.iternext()
        grads[name] = g
    return grads


def max_relative_error(
    analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray]
) -> float:
    worst = 0.0
    for name, num in numeric.items():
        ana = analytic[name]
        err = np.linalg.norm(ana - num) / (np.linalg.norm(num) + 1e-12)
        worst = max(worst, float(err))
    return worst


def _flip_one(grads: dict[str, np.ndarray]):
    name = sorted(grads)[0]
    grads[name] = -grads[name]


def check_mlp(seed: int, inject_fault: bool = False) -> float:
    rng = RngStream(seed, stream_id=900)
    params = init_mlp(rng, [5, 8, 7, 4], "elu")
    params.activations[1] = "tanh"
    x = rng.gaussian(5)
    weights = rng.gaussian(4)

    def loss():
        y, _ = mlp_forward(params, x)
        return float(weights @ y)

    y, tape = mlp_forward(params, x)
    grad_params, grad_x = mlp_backward(params, tape, weights)
    analytic = dict(grad_params.named_tensors())
    analytic["input"] = grad_x
    if inject_fault:
        _flip_one(analytic)
    tensors = params.named_tensors() + [("input", x)]
    numeric = numeric_gradient(loss, tensors)
    return max_relative_error(analytic, numeric)


def check_lstm(seed: int, steps: int = 3, inject_fault: bool = False) -> float:
    rng = RngStream(seed, stream_id=901)
    params = init_lstm(rng, input_size=5, hidden_size=6, num_layers=2)
    xs = [rng.gaussian(5) for _ in range(steps)]
    weights = [rng.gaussian(6) for _ in range(steps)]

    def loss():
        state = params.zero_state(1)
        total = 0.0
        for x, w in zip(xs, weights):
            y, state, _ = lstm_step(params, x[None, :], state)
            total += float(w @ y[0])
        return total

    state = params.zero_state(1)
    tapes = []
    for x in xs:
        _, state, tape = lstm_step(params, x[None, :], state)
        tapes.append(tape)
    analytic = {name: np.zeros_like(t) for name, t in params.named_tensors()}
    state_grad = None
    for t in reversed(range(steps)):
        layer_grads, _, state_grad = lstm_step_backward(
            params, tapes[t], weights[t][None, :], state_grad
        )
        for name, g in layer_grads.named_tensors():
            analytic[name] += g
    if inject_fault:
        _flip_one(analytic)
    numeric = numeric_gradient(loss, params.named_tensors())
    return max_relative_error(analytic, numeric)


def check_moe(seed: int, inject_fault: bool = False) -> float:
    rng = RngStream(seed, stream_id=902)
    cfg = CmgConfig(num_experts=3, hidden_sizes=[8, 8], gating_hidden=5)
    params = init_moe(rng, cfg, input_dim=6, output_dim=4)
    # Give gating layers nonzero biases so the softmax path is generic.
    for layer in params.gating.layers:
        layer.biases += 0.1 * rng.gaussian(layer.biases.size)
    x = rng.gaussian(6)
    weights = rng.gaussian(4)

    def loss():
        y, _ = moe_forward(params, x)
        return float(weights @ y)

    _, tape = moe_forward(params, x)
    analytic, grad_x = moe_backward(params, tape, weights)
    analytic = dict(analytic)
    analytic["input"] = grad_x
    if inject_fault:
        _flip_one(analytic)
    tensors = params.named_tensors() + [("input", x)]
    numeric = numeric_gradient(loss, tensors)
    return max_relative_error(analytic, numeric)


CHECKS = {"mlp": check_mlp, "lstm": check_lstm, "moe": check_moe}


def run_gradcheck(instances: int = 50, tolerance: float = TOLERANCE) -> dict[str, dict]:
    """The full suite: every component over seeded random instances."""
    report = {}
    for name, fn in CHECKS.items():
        worst = 0.0
        for seed in range(instances):
            worst = max(worst, fn(seed))
        report[name] = {
            "max_rel_err": worst,
            "instances": instances,
            "passed": worst <= tolerance,
        }
    return report
