"""Conditional motion generator: autoregressive mixture-of-experts prior.

A gating network computes mixing coefficients from the normalized
(feature, command) input; those coefficients blend per-expert weights and
biases into a single 3-layer backbone whose output is the next motion
feature. The inference path is a deterministic function with no latent
variables and no internal state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import CmgConfig, RunConfig
from .dataset import (
    FEATURE_DIM,
    Command,
    MotionClip,
    MotionFeature,
    Normalizer,
    fit_normalizer,
    inject_noise,
    velocity_histogram,
    weighted_sampler,
)
from .nets import (
    AdamState,
    DenseLayerParams,
    DimensionMismatchError,
    MlpParams,
    activate,
    activate_grad,
    adam_step,
    clip_grad_norm,
    init_mlp,
    mlp_backward,
    mlp_forward,
)
from .numerics import NonFiniteInputError, RngStream

COMMAND_DIM = 3
INPUT_DIM = FEATURE_DIM + COMMAND_DIM


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass
class MoEParams:
    """Expert parameter banks plus the gating network.

    Expert tensors are stored stacked per layer (leading axis = expert) so
    blending is one contraction; ``expert(e)`` exposes a view-backed MLP.
    """

    expert_weights: list[np.ndarray]  # per layer (E, out, in)
    expert_biases: list[np.ndarray]  # per layer (E, out)
    gating: MlpParams
    activation: str = "elu"

    @property
    def num_experts(self) -> int:
        return self.expert_weights[0].shape[0]

    @property
    def num_layers(self) -> int:
        return len(self.expert_weights)

    @property
    def input_dim(self) -> int:
        return self.expert_weights[0].shape[2]

    @property
    def output_dim(self) -> int:
        return self.expert_weights[-1].shape[1]

    def expert(self, e: int) -> MlpParams:
        layers = [
            DenseLayerParams(w[e], b[e])
            for w, b in zip(self.expert_weights, self.expert_biases)
        ]
        acts = [self.activation] * (self.num_layers - 1) + ["identity"]
        return MlpParams(layers, acts)

    def named_tensors(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        out = []
        for l, (w, b) in enumerate(zip(self.expert_weights, self.expert_biases)):
            out.append((f"{prefix}experts.layer{l}.weights", w))
            out.append((f"{prefix}experts.layer{l}.biases", b))
        out.extend(self.gating.named_tensors(prefix + "gating."))
        return out


def init_moe(rng: RngStream, cfg: CmgConfig, input_dim: int = INPUT_DIM, output_dim: int = FEATURE_DIM) -> MoEParams:
    sizes = [input_dim, *cfg.hidden_sizes, output_dim]
    if len(sizes) != 4:
        raise ValueError("backbone must have exactly 3 layers (two hidden sizes)")
    ew, eb = [], []
    for l in range(3):
        stack_w = np.stack(
            [
                rng.gaussian(sizes[l + 1] * sizes[l]).reshape(sizes[l + 1], sizes[l])
                / np.sqrt(sizes[l])
                for _ in range(cfg.num_experts)
            ]
        )
        ew.append(stack_w)
        eb.append(np.zeros((cfg.num_experts, sizes[l + 1])))
    gating = init_mlp(rng, [input_dim, cfg.gating_hidden, cfg.num_experts], cfg.activation)
    return MoEParams(ew, eb, gating, cfg.activation)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def gate(params: MoEParams, x: np.ndarray) -> np.ndarray:
    """Mixing coefficients on the simplex for normalized inputs."""
    logits, _ = mlp_forward(params.gating, x)
    return softmax(logits)


def blend_params(alpha: np.ndarray, params: MoEParams) -> list[DenseLayerParams]:
    """Blend expert layers with one coefficient vector: W = sum_e alpha_e W_e."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (params.num_experts,):
        raise DimensionMismatchError(f"alpha must have shape ({params.num_experts},)")
    blended = []
    for w, b in zip(params.expert_weights, params.expert_biases):
        blended.append(
            DenseLayerParams(np.einsum("e,eoi->oi", alpha, w), np.einsum("e,eo->o", alpha, b))
        )
    return blended


@dataclass
class MoETape:
    x: np.ndarray  # (B, in)
    alpha: np.ndarray  # (B, E)
    gate_tape: object
    layer_inputs: list[np.ndarray]  # (B, in_l) per layer
    pre_activations: list[np.ndarray]  # (B, out_l)
    blended_weights: list[np.ndarray]  # (B, out_l, in_l)
    squeezed: bool


def moe_forward(params: MoEParams, x: np.ndarray) -> tuple[np.ndarray, MoETape]:
    """Batched forward pass in normalized space, with tape."""
    x = np.asarray(x, dtype=np.float64)
    squeezed = x.ndim == 1
    if squeezed:
        x = x[None, :]
    if x.shape[1] != params.input_dim:
        raise DimensionMismatchError(f"expected input dim {params.input_dim}, got {x.shape[1]}")
    logits, gate_tape = mlp_forward(params.gating, x)
    alpha = softmax(logits)
    h = x
    layer_inputs, pres, blended = [], [], []
    n_layers = params.num_layers
    for l in range(n_layers):
        w = np.einsum("be,eoi->boi", alpha, params.expert_weights[l])
        b = alpha @ params.expert_biases[l]
        z = np.einsum("boi,bi->bo", w, h) + b
        layer_inputs.append(h)
        pres.append(z)
        blended.append(w)
        h = z if l == n_layers - 1 else activate(params.activation, z)
    tape = MoETape(x, alpha, gate_tape, layer_inputs, pres, blended, squeezed)
    return (h[0] if squeezed else h), tape


def moe_backward(
    params: MoEParams, tape: MoETape, output_gradient: np.ndarray
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Exact gradients through backbone, blend, and gating (via softmax).

    Returns (named parameter gradients, input gradient).
    """
    g = np.asarray(output_gradient, dtype=np.float64)
    if tape.squeezed:
        g = g[None, :]
    grads: dict[str, np.ndarray] = {}
    alpha = tape.alpha
    d_alpha = np.zeros_like(alpha)
    n_layers = params.num_layers
    for l in reversed(range(n_layers)):
        z = tape.pre_activations[l]
        dz = g if l == n_layers - 1 else g * activate_grad(params.activation, z)
        h_in = tape.layer_inputs[l]
        grads[f"experts.layer{l}.weights"] = np.einsum("be,bo,bi->eoi", alpha, dz, h_in)
        grads[f"experts.layer{l}.biases"] = np.einsum("be,bo->eo", alpha, dz)
        d_alpha += np.einsum("eoi,bo,bi->be", params.expert_weights[l], dz, h_in)
        d_alpha += dz @ params.expert_biases[l].T
        g = np.einsum("boi,bo->bi", tape.blended_weights[l], dz)
    # Softmax jacobian, then the gating MLP.
    d_logits = alpha * (d_alpha - (d_alpha * alpha).sum(axis=1, keepdims=True))
    gate_grads, dx_gate = mlp_backward(params.gating, tape.gate_tape, d_logits)
    for name, tensor in gate_grads.named_tensors("gating."):
        grads[name] = tensor
    dx = g + dx_gate
    return grads, (dx[0] if tape.squeezed else dx)


def cmg_forward(
    params: MoEParams, m_t: MotionFeature, c_t: Command, normalizer: Normalizer
) -> MotionFeature:
    """Predict the next motion feature for one step (raw units in and out)."""
    raw = np.concatenate([m_t.vector, c_t.vector])
    if not np.isfinite(raw).all():
        raise NonFiniteInputError("non-finite motion feature or command")
    x = np.concatenate(
        [normalizer.normalize_feature(m_t.vector), normalizer.normalize_command(c_t.vector)]
    )
    y, _ = moe_forward(params, x)
    return MotionFeature.from_vector(normalizer.denormalize_feature(y))


def cmg_loss(predicted: np.ndarray, target: np.ndarray) -> float:
    """Squared-error objective over the normalized feature dimensions."""
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape:
        raise DimensionMismatchError("prediction/target shape mismatch")
    return float(np.sum((predicted - target) ** 2))


@dataclass
class ScheduledSamplingPlan:
    """Teacher probability: flat 1, linear decay, flat 0 across epochs."""

    total_epochs: int
    rollout_window: int = 16
    flat_start_fraction: float = 0.2
    flat_end_fraction: float = 0.2

    def p_teacher(self, epoch: int) -> float:
        last = self.total_epochs - 1
        if last <= 0:
            return 0.0
        decay_from = self.flat_start_fraction * last
        decay_to = (1.0 - self.flat_end_fraction) * last
        if epoch <= decay_from:
            return 1.0
        if epoch >= decay_to:
            return 0.0
        return float((decay_to - epoch) / (decay_to - decay_from))


@dataclass
class TrainedCmg:
    params: MoEParams
    normalizer: Normalizer
    history: list[dict] = field(default_factory=list)  # epoch rows for cmg_loss.csv
    heldout_loss: float = float("nan")


def _normalized_corpus(clips: list[MotionClip], normalizer: Normalizer) -> list[np.ndarray]:
    return [normalizer.normalize_feature(c.frames) for c in clips]


def _one_step_loss(params: MoEParams, feats: list[np.ndarray], commands: list[np.ndarray]) -> float:
    """Teacher-forced single-step loss averaged over all transitions."""
    total, count = 0.0, 0
    for f, c in zip(feats, commands):
        x = np.concatenate([f[:-1], np.broadcast_to(c, (f.shape[0] - 1, COMMAND_DIM))], axis=1)
        y, _ = moe_forward(params, x)
        total += float(np.sum((y - f[1:]) ** 2))
        count += f.shape[0] - 1
    return total / max(count, 1)


def train_cmg(
    clips: list[MotionClip],
    plan: ScheduledSamplingPlan,
    config: RunConfig,
    progress: bool = False,
) -> TrainedCmg:
    """Scheduled-sampling training over weighted-sampled clip windows.

    Model predictions fed back in student mode are treated as constants
    (no gradient flows through them), so each window step contributes an
    independent one-step gradient.
    """
    cfg = config.cmg
    if not clips:
        raise ValueError("empty dataset")
    order = RngStream(config.seed, stream_id=10_001)
    idx = np.arange(len(clips))
    perm = idx.copy()
    # Fisher-Yates with the run stream so the split is seed-reproducible.
    for i in range(len(perm) - 1, 0, -1):
        j = int(order.integers(0, i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    n_heldout = max(1, int(len(clips) * cfg.heldout_fraction))
    heldout = [clips[i] for i in perm[:n_heldout]]
    train = [clips[i] for i in perm[n_heldout:]]

    normalizer = fit_normalizer(train)
    train_feats = _normalized_corpus(train, normalizer)
    heldout_feats = _normalized_corpus(heldout, normalizer)
    train_cmds = [normalizer.normalize_command(c.command.vector) for c in train]
    heldout_cmds = [normalizer.normalize_command(c.command.vector) for c in heldout]

    hist = velocity_histogram(train, bins=config.dataset.histogram_bins)
    sampler = weighted_sampler(hist, train, RngStream(config.seed, stream_id=10_002))
    noise_rng = RngStream(config.seed, stream_id=10_003)
    sched_rng = RngStream(config.seed, stream_id=10_004)

    params = init_moe(RngStream(config.seed, stream_id=10_000), cfg)
    adam = AdamState.for_params(params, learning_rate=cfg.learning_rate)
    sigma = config.dataset.noise_sigma
    window = plan.rollout_window

    result = TrainedCmg(params, normalizer)
    for epoch in range(plan.total_epochs):
        p_teacher = plan.p_teacher(epoch)
        # Student-mode gradients are rougher; anneal the step size.
        frac = epoch / max(plan.total_epochs - 1, 1)
        adam.learning_rate = cfg.learning_rate * (cfg.learning_rate_final / cfg.learning_rate) ** frac
        epoch_loss = 0.0
        for _ in range(cfg.batches_per_epoch):
            batch_idx = [sampler.draw_index() for _ in range(cfg.batch_size)]
            starts = [
                int(sampler.rng.integers(0, train_feats[i].shape[0] - window))
                for i in batch_idx
            ]
            truth = np.stack(
                [train_feats[i][s : s + window + 1] for i, s in zip(batch_idx, starts)]
            )  # (B, W+1, F)
            cmds = np.stack([train_cmds[i] for i in batch_idx])  # (B, 3)
            grads_total: dict[str, np.ndarray] | None = None
            batch_loss = 0.0
            current = truth[:, 0]
            for step in range(window):
                use_teacher = sched_rng.uniform(0.0, 1.0, cfg.batch_size) < p_teacher
                if step == 0:
                    feed = truth[:, 0]
                else:
                    feed = np.where(use_teacher[:, None], truth[:, step], current)
                feed = inject_noise(feed, sigma, noise_rng)
                x = np.concatenate([feed, cmds], axis=1)
                y, tape = moe_forward(params, x)
                delta = y - truth[:, step + 1]
                batch_loss += float(np.mean(np.sum(delta * delta, axis=1)))
                dy = (2.0 / (cfg.batch_size * window)) * delta
                grads, _ = moe_backward(params, tape, dy)
                if grads_total is None:
                    grads_total = grads
                else:
                    for k in grads_total:
                        grads_total[k] += grads[k]
                # Fed back as a constant next step; early-training blowups
                # are kept on-manifold by a wide clip in normalized units.
                current = np.clip(y, -8.0, 8.0)
            batch_loss /= window
            if not np.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} (p_teacher={p_teacher:.3f})"
                )
            clip_grad_norm(grads_total, cfg.grad_clip)
            adam_step(adam, params, grads_total)
            epoch_loss += batch_loss
        epoch_loss /= cfg.batches_per_epoch
        heldout_loss = _one_step_loss(params, heldout_feats, heldout_cmds)
        result.history.append(
            {
                "epoch": epoch,
                "train_loss": epoch_loss,
                "heldout_loss": heldout_loss,
                "p_teacher": p_teacher,
            }
        )
        if progress:
            print(
                f"epoch {epoch:3d}  train {epoch_loss:.5f}  heldout {heldout_loss:.5f}  "
                f"p_teacher {p_teacher:.2f}"
            )
    result.heldout_loss = result.history[-1]["heldout_loss"] if result.history else float("nan")
    return result


@dataclass
class RolloutResult:
    clip: MotionClip
    truncated: bool  # True when a non-finite state cut the rollout short


def rollout(
    params: MoEParams,
    normalizer: Normalizer,
    m_0: MotionFeature,
    command_schedule,
    total_steps: int,
    v_switch: float = 1.2,
) -> RolloutResult:
    """Autoregressive generation: m_{t+1} = forward(m_t, c_t), iterated.

    ``command_schedule`` maps a step index to a Command.
    """
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    feat = normalizer.normalize_feature(m_0.vector)
    frames = np.empty((total_steps + 1, FEATURE_DIM))
    frames[0] = m_0.vector
    first_cmd = command_schedule(0)
    truncated = False
    for t in range(total_steps):
        cmd = command_schedule(t)
        x = np.concatenate([feat, normalizer.normalize_command(cmd.vector)])
        y, _ = moe_forward(params, x)
        if not np.isfinite(y).all():
            frames = frames[: t + 1]
            truncated = True
            break
        feat = y
        frames[t + 1] = normalizer.denormalize_feature(y)
    mode = "run" if first_cmd.v_x > v_switch else "walk"
    return RolloutResult(MotionClip(frames, first_cmd, mode), truncated)


def save_cmg(path, trained: TrainedCmg):
    from .nets import save_checkpoint

    tensors = trained.params.named_tensors("cmg.")
    tensors.extend(trained.normalizer.named_tensors())
    save_checkpoint(path, tensors)


def load_cmg(path, config: RunConfig) -> TrainedCmg:
    from .nets import load_checkpoint, load_into

    tensors = load_checkpoint(path)
    params = init_moe(RngStream(0, 0), config.cmg)
    load_into(params, tensors, "cmg.")
    normalizer = Normalizer(
        tensors["normalizer.feature_mean"].copy(),
        tensors["normalizer.feature_std"].copy(),
        tensors["normalizer.command_min"].copy(),
        tensors["normalizer.command_max"].copy(),
    )
    return TrainedCmg(params, normalizer)
