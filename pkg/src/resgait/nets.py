"""Dense neural networks with explicit tapes and exact reverse-mode gradients.

Only what the rest of the package needs: batched MLP and stacked-LSTM
forward passes that record a per-call tape, matching backward passes,
Adam, and a versioned binary checkpoint format. All math is float64 and
deterministic; there is no global graph.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .numerics import RngStream

ACTIVATIONS = ("identity", "tanh", "relu", "elu")

CHECKPOINT_MAGIC = b"RUNCKPT1"


class DimensionMismatchError(ValueError):
    """Raised when an input or state shape disagrees with the parameters."""


def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "elu":
        return np.where(z > 0.0, z, np.expm1(z))
    raise ValueError(f"unknown activation {name!r}")


def activate_grad(name: str, z: np.ndarray) -> np.ndarray:
    """Derivative of the activation w.r.t. its pre-activation input."""
    if name == "identity":
        return np.ones_like(z)
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "elu":
        return np.where(z > 0.0, 1.0, np.exp(z))
    raise ValueError(f"unknown activation {name!r}")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# Parameter containers


@dataclass
class DenseLayerParams:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.ndim != 1:
            raise DimensionMismatchError("dense layer expects 2-d weights, 1-d biases")
        if self.weights.shape[0] != self.biases.shape[0]:
            raise DimensionMismatchError(
                f"weights {self.weights.shape} incompatible with biases {self.biases.shape}"
            )

    def named_tensors(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        return [(prefix + "weights", self.weights), (prefix + "biases", self.biases)]


@dataclass
class MlpParams:
    layers: list[DenseLayerParams]
    activations: list[str]

    def __post_init__(self):
        if len(self.layers) != len(self.activations):
            raise DimensionMismatchError("one activation per layer required")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        for a, b in zip(self.layers, self.layers[1:]):
            if b.weights.shape[1] != a.weights.shape[0]:
                raise DimensionMismatchError("consecutive layer dims do not chain")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[0]

    def named_tensors(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(layer.named_tensors(f"{prefix}layer{i}."))
        return out


@dataclass
class LstmLayerParams:
    # Gate blocks stacked in [input, forget, cell, output] order.
    w_input: np.ndarray  # (4H, in)
    w_hidden: np.ndarray  # (4H, H)
    biases: np.ndarray  # (4H,)

    def __post_init__(self):
        self.w_input = np.asarray(self.w_input, dtype=np.float64)
        self.w_hidden = np.asarray(self.w_hidden, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        h4 = self.w_input.shape[0]
        if h4 % 4 != 0 or self.w_hidden.shape != (h4, h4 // 4) or self.biases.shape != (h4,):
            raise DimensionMismatchError("LSTM gate blocks must be 4 * hidden")

    @property
    def hidden_size(self) -> int:
        return self.w_input.shape[0] // 4

    def named_tensors(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        return [
            (prefix + "w_input", self.w_input),
            (prefix + "w_hidden", self.w_hidden),
            (prefix + "biases", self.biases),
        ]


@dataclass
class LstmStackParams:
    layers: list[LstmLayerParams]

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def hidden_size(self) -> int:
        return self.layers[0].hidden_size

    @property
    def input_size(self) -> int:
        return self.layers[0].w_input.shape[1]

    def named_tensors(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(layer.named_tensors(f"{prefix}lstm{i}."))
        return out

    def zero_state(self, batch: int) -> list[tuple[np.ndarray, np.ndarray]]:
        h = self.hidden_size
        return [(np.zeros((batch, h)), np.zeros((batch, h))) for _ in self.layers]


# ---------------------------------------------------------------------------
# Initialisation


def init_dense(rng: RngStream, n_in: int, n_out: int, scale: float = 1.0) -> DenseLayerParams:
    w = rng.gaussian(n_out * n_in).reshape(n_out, n_in) * (scale / np.sqrt(n_in))
    return DenseLayerParams(w, np.zeros(n_out))


def init_mlp(
    rng: RngStream,
    sizes: list[int],
    hidden_activation: str = "elu",
    final_scale: float = 1.0,
) -> MlpParams:
    """MLP with identity output head, sized by the full [in, h1, ..., out] chain."""
    layers, acts = [], []
    for i in range(len(sizes) - 1):
        last = i == len(sizes) - 2
        layers.append(init_dense(rng, sizes[i], sizes[i + 1], final_scale if last else 1.0))
        acts.append("identity" if last else hidden_activation)
    return MlpParams(layers, acts)


def init_lstm(rng: RngStream, input_size: int, hidden_size: int, num_layers: int) -> LstmStackParams:
    layers = []
    for i in range(num_layers):
        n_in = input_size if i == 0 else hidden_size
        w_x = rng.gaussian(4 * hidden_size * n_in).reshape(4 * hidden_size, n_in) / np.sqrt(n_in)
        w_h = rng.gaussian(4 * hidden_size * hidden_size).reshape(4 * hidden_size, hidden_size)
        w_h /= np.sqrt(hidden_size)
        b = np.zeros(4 * hidden_size)
        b[hidden_size : 2 * hidden_size] = 1.0  # open forget gates initially
        layers.append(LstmLayerParams(w_x, w_h, b))
    return LstmStackParams(layers)


# ---------------------------------------------------------------------------
# MLP forward / backward


@dataclass
class MlpTape:
    inputs: list[np.ndarray]  # input to each layer, batched
    pre_activations: list[np.ndarray]
    squeezed: bool


def _as_batch(x: np.ndarray, dim: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    squeezed = x.ndim == 1
    if squeezed:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise DimensionMismatchError(f"{what} expects trailing dim {dim}, got shape {x.shape}")
    return x, squeezed


def mlp_forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, MlpTape]:
    x, squeezed = _as_batch(x, params.input_dim, "mlp_forward")
    inputs, pres = [], []
    h = x
    for layer, act in zip(params.layers, params.activations):
        inputs.append(h)
        z = h @ layer.weights.T + layer.biases
        pres.append(z)
        h = activate(act, z)
    tape = MlpTape(inputs, pres, squeezed)
    return (h[0] if squeezed else h), tape


def mlp_backward(
    params: MlpParams, tape: MlpTape, output_gradient: np.ndarray
) -> tuple[MlpParams, np.ndarray]:
    """Exact gradients for the recorded forward pass.

    Returns (parameter gradients shaped like ``params``, input gradient).
    """
    g = np.asarray(output_gradient, dtype=np.float64)
    if tape.squeezed:
        g = g[None, :]
    if g.shape != (tape.inputs[0].shape[0], params.output_dim):
        raise DimensionMismatchError("output_gradient does not match the taped forward call")
    grad_layers: list[DenseLayerParams] = [None] * len(params.layers)  # type: ignore[list-item]
    for i in reversed(range(len(params.layers))):
        layer = params.layers[i]
        dz = g * activate_grad(params.activations[i], tape.pre_activations[i])
        grad_layers[i] = DenseLayerParams(dz.T @ tape.inputs[i], dz.sum(axis=0))
        g = dz @ layer.weights
    dx = g[0] if tape.squeezed else g
    return MlpParams(grad_layers, list(params.activations)), dx


# ---------------------------------------------------------------------------
# LSTM forward / backward


@dataclass
class LstmStepTape:
    inputs: list[np.ndarray]  # per layer
    h_prev: list[np.ndarray]
    c_prev: list[np.ndarray]
    gates: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]  # i, f, g, o
    c_new: list[np.ndarray]
    squeezed: bool


LstmState = list[tuple[np.ndarray, np.ndarray]]


def lstm_step(
    params: LstmStackParams, x: np.ndarray, state: LstmState
) -> tuple[np.ndarray, LstmState, LstmStepTape]:
    """One time step through the stacked LSTM; output is the top layer's h."""
    x, squeezed = _as_batch(x, params.input_size, "lstm_step")
    if len(state) != params.num_layers:
        raise DimensionMismatchError("state has wrong number of layers")
    hsz = params.hidden_size
    new_state: LstmState = []
    tape = LstmStepTape([], [], [], [], [], squeezed)
    h_in = x
    for layer, (h_prev, c_prev) in zip(params.layers, state):
        h_prev = np.asarray(h_prev, dtype=np.float64)
        c_prev = np.asarray(c_prev, dtype=np.float64)
        if h_prev.ndim == 1:
            h_prev, c_prev = h_prev[None, :], c_prev[None, :]
        if h_prev.shape != (h_in.shape[0], hsz) or c_prev.shape != h_prev.shape:
            raise DimensionMismatchError("hidden state shape does not match params")
        z = h_in @ layer.w_input.T + h_prev @ layer.w_hidden.T + layer.biases
        gi = _sigmoid(z[:, :hsz])
        gf = _sigmoid(z[:, hsz : 2 * hsz])
        gg = np.tanh(z[:, 2 * hsz : 3 * hsz])
        go = _sigmoid(z[:, 3 * hsz :])
        c = gf * c_prev + gi * gg
        h = go * np.tanh(c)
        tape.inputs.append(h_in)
        tape.h_prev.append(h_prev)
        tape.c_prev.append(c_prev)
        tape.gates.append((gi, gf, gg, go))
        tape.c_new.append(c)
        new_state.append((h, c))
        h_in = h
    y = h_in[0] if squeezed else h_in
    if squeezed:
        new_state = [(h[0], c[0]) for h, c in new_state]
    return y, new_state, tape


def lstm_step_backward(
    params: LstmStackParams,
    tape: LstmStepTape,
    output_gradient: np.ndarray,
    state_gradient: list[tuple[np.ndarray, np.ndarray]] | None = None,
) -> tuple[LstmStackParams, np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Backward through one recorded step.

    ``state_gradient`` carries (dh, dc) per layer arriving from the next
    time step; the returned state gradient flows to the previous step.
    Returns (parameter gradients, input gradient, previous-state gradient).
    """
    hsz = params.hidden_size
    batch = tape.inputs[0].shape[0]
    dy = np.asarray(output_gradient, dtype=np.float64)
    if tape.squeezed:
        dy = dy[None, :]
    if state_gradient is None:
        state_gradient = [(np.zeros((batch, hsz)), np.zeros((batch, hsz)))] * params.num_layers
    grad_layers: list[LstmLayerParams] = [None] * params.num_layers  # type: ignore[list-item]
    dstate_prev: list[tuple[np.ndarray, np.ndarray]] = [None] * params.num_layers  # type: ignore[list-item]
    dh_from_above = dy
    for li in reversed(range(params.num_layers)):
        layer = params.layers[li]
        gi, gf, gg, go = tape.gates[li]
        c_new, c_prev = tape.c_new[li], tape.c_prev[li]
        dh_next, dc_next = state_gradient[li]
        dh = dh_from_above + dh_next
        t = np.tanh(c_new)
        d_go = dh * t
        dc = dc_next + dh * go * (1.0 - t * t)
        d_gf = dc * c_prev
        d_gi = dc * gg
        d_gg = dc * gi
        dc_prev = dc * gf
        dz = np.concatenate(
            [
                d_gi * gi * (1.0 - gi),
                d_gf * gf * (1.0 - gf),
                d_gg * (1.0 - gg * gg),
                d_go * go * (1.0 - go),
            ],
            axis=1,
        )
        grad_layers[li] = LstmLayerParams(
            dz.T @ tape.inputs[li], dz.T @ tape.h_prev[li], dz.sum(axis=0)
        )
        dstate_prev[li] = (dz @ layer.w_hidden, dc_prev)
        dh_from_above = dz @ layer.w_input
    dx = dh_from_above[0] if tape.squeezed else dh_from_above
    return LstmStackParams(grad_layers), dx, dstate_prev


# ---------------------------------------------------------------------------
# Generic parameter-tree helpers


def named_tensor_dict(params) -> dict[str, np.ndarray]:
    return dict(params.named_tensors())


def accumulate_grads(total: dict[str, np.ndarray] | None, grads) -> dict[str, np.ndarray]:
    """Add a params-shaped gradient structure into a name-keyed accumulator."""
    incoming = dict(grads.named_tensors()) if not isinstance(grads, dict) else grads
    if total is None:
        return {k: v.copy() for k, v in incoming.items()}
    for k, v in incoming.items():
        total[k] += v
    return total


def scale_grads(grads: dict[str, np.ndarray], factor: float) -> dict[str, np.ndarray]:
    return {k: v * factor for k, v in grads.items()}


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so their global norm is at most max_norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if np.isfinite(total) and total > max_norm:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, learning_rate: float = 1e-3, **kwargs) -> "AdamState":
        state = cls(learning_rate=learning_rate, **kwargs)
        for name, tensor in params.named_tensors():
            state.m[name] = np.zeros_like(tensor)
            state.v[name] = np.zeros_like(tensor)
        return state


def adam_step(state: AdamState, params, grads: dict[str, np.ndarray] | object) -> bool:
    """Apply one Adam update in place.

    Returns False (and leaves params and moments untouched) when any
    gradient entry is non-finite.
    """
    grad_map = dict(grads.named_tensors()) if not isinstance(grads, dict) else grads
    for g in grad_map.values():
        if not np.isfinite(g).all():
            return False
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, tensor in params.named_tensors():
        g = grad_map[name]
        if g.shape != tensor.shape:
            raise DimensionMismatchError(f"gradient shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        tensor -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return True


# ---------------------------------------------------------------------------
# Checkpoint I/O: magic bytes, then per-tensor records of
# (u32 name length, utf-8 name, u32 ndim, u32 dims..., float64 LE values).


def save_checkpoint(path, tensors: dict[str, np.ndarray] | list[tuple[str, np.ndarray]]):
    items = tensors.items() if isinstance(tensors, dict) else tensors
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for name, tensor in items:
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(tensor, dtype="<f8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    tensors: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        while True:
            head = fh.read(4)
            if not head:
                break
            (name_len,) = struct.unpack("<I", head)
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
            count = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(dims)
            tensors[name] = data.astype(np.float64).reshape(dims)
    return tensors


def load_into(params, tensors: dict[str, np.ndarray], prefix: str = ""):
    """Copy checkpoint tensors into an existing parameter structure."""
    for name, tensor in params.named_tensors(prefix):
        if name not in tensors:
            raise KeyError(f"checkpoint is missing tensor {name!r}")
        src = tensors[name]
        if src.shape != tensor.shape:
            raise DimensionMismatchError(
                f"checkpoint tensor {name!r} has shape {src.shape}, expected {tensor.shape}"
            )
        tensor[...] = src
