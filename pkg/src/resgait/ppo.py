"""Clipped-surrogate policy optimisation for the residual controller.

The actor sees only the proprioceptive observation; the critic sees the
privileged state (observation, base velocity, reference feature) unless
the symmetric-critic ablation is active. Both default to two-layer LSTMs;
an MLP variant exists for fast experimentation. Collection is vectorized
and fully seeded: identical seeds reproduce identical buffers bit for bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .cmg import TrainedCmg, moe_forward
from .config import RunConfig
from .dataset import NUM_JOINTS, MotionClip
from .env import OBSERVATION_DIM, PRIVILEGED_DIM, VecBipedEnv, privileged
from .nets import (
    AdamState,
    clip_grad_norm,
    DenseLayerParams,
    LstmStackParams,
    MlpParams,
    adam_step,
    init_dense,
    init_lstm,
    init_mlp,
    lstm_step,
    lstm_step_backward,
    mlp_backward,
    mlp_forward,
)
from .numerics import RngStream
from .rewards import REGULARIZATION_TERMS, total_reward

# Fixed feature scaling applied inside the networks (raw vectors stay the
# external contract): pitch rate, gravity, command, q, qd, prev action.
OBS_SCALE = np.concatenate(
    [[0.25], [1.0, 1.0], [0.4, 1.0, 1.0], np.ones(4), np.full(4, 0.05), np.ones(4)]
)
PRIV_EXTRA_SCALE = np.concatenate([[0.5, 0.5], np.ones(4), np.full(4, 0.05)])
PRIV_SCALE = np.concatenate([OBS_SCALE, PRIV_EXTRA_SCALE])

LOG_2PI = float(np.log(2.0 * np.pi))


def compose_action(
    q_ref: np.ndarray,
    a_res: np.ndarray,
    residual_clamp: float,
    joint_lower: np.ndarray,
    joint_upper: np.ndarray,
) -> np.ndarray:
    """PD target: reference pose plus the clamped residual, inside limits."""
    a = np.clip(a_res, -residual_clamp, residual_clamp)
    return np.clip(q_ref + a, joint_lower, joint_upper)


def gae(
    rewards: np.ndarray,
    values: np.ndarray,
    terminals: np.ndarray,
    bootstrap_value: np.ndarray | float,
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation over a (T,) or (T, N) array stack."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    not_done = 1.0 - np.asarray(terminals, dtype=np.float64)
    horizon = rewards.shape[0]
    advantages = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap_value, dtype=np.float64)
    next_advantage = np.zeros_like(next_value)
    for t in reversed(range(horizon)):
        delta = rewards[t] + gamma * next_value * not_done[t] - values[t]
        next_advantage = delta + gamma * lam * not_done[t] * next_advantage
        advantages[t] = next_advantage
        next_value = values[t]
    return advantages, advantages + values


# ---------------------------------------------------------------------------
# Policy


@dataclass
class GaussianPolicy:
    recurrent: bool
    actor_core: LstmStackParams | MlpParams
    actor_head: DenseLayerParams
    critic_core: LstmStackParams | MlpParams
    critic_head: DenseLayerParams
    log_std: np.ndarray
    obs_dim: int
    critic_input_dim: int

    def named_tensors(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        out = self.actor_core.named_tensors(prefix + "actor.")
        out.extend(self.actor_head.named_tensors(prefix + "actor_head."))
        out.extend(self.critic_core.named_tensors(prefix + "critic."))
        out.extend(self.critic_head.named_tensors(prefix + "critic_head."))
        out.append((prefix + "log_std", self.log_std))
        return out

    def zero_states(self, batch: int):
        if not self.recurrent:
            return None, None
        return (
            self.actor_core.zero_state(batch),
            self.critic_core.zero_state(batch),
        )


def init_policy(rng: RngStream, config: RunConfig) -> GaussianPolicy:
    ppo = config.ppo
    critic_input_dim = OBSERVATION_DIM if ppo.no_aac else PRIVILEGED_DIM
    if ppo.recurrent:
        actor_core = init_lstm(rng, OBSERVATION_DIM, ppo.lstm_hidden, ppo.lstm_layers)
        critic_core = init_lstm(rng, critic_input_dim, ppo.lstm_hidden, ppo.lstm_layers)
        feat = ppo.lstm_hidden
    else:
        sizes = [OBSERVATION_DIM, *ppo.mlp_hidden]
        actor_core = init_mlp(rng, sizes, "elu")
        actor_core.activations[-1] = "elu"  # core emits features, not outputs
        csizes = [critic_input_dim, *ppo.mlp_hidden]
        critic_core = init_mlp(rng, csizes, "elu")
        critic_core.activations[-1] = "elu"
        feat = ppo.mlp_hidden[-1]
    actor_head = init_dense(rng, feat, NUM_JOINTS, scale=0.01)
    critic_head = init_dense(rng, feat, 1, scale=0.01)
    if ppo.no_residual:
        # Tracking mode outputs absolute targets; start at the standing pose.
        actor_head.biases[:] = np.array(config.env.default_pose)
    log_std = np.full(NUM_JOINTS, np.log(ppo.action_std_init))
    return GaussianPolicy(
        ppo.recurrent,
        actor_core,
        actor_head,
        critic_core,
        critic_head,
        log_std,
        OBSERVATION_DIM,
        critic_input_dim,
    )


def _core_step(recurrent: bool, core, head: DenseLayerParams, x: np.ndarray, state):
    """One forward evaluation; returns (output, new_state)."""
    if recurrent:
        feat, new_state, _ = lstm_step(core, x, state)
    else:
        feat, _ = mlp_forward(core, x)
        new_state = None
    return feat @ head.weights.T + head.biases, new_state


def actor_mean(policy: GaussianPolicy, obs: np.ndarray, state):
    return _core_step(
        policy.recurrent, policy.actor_core, policy.actor_head, obs * OBS_SCALE, state
    )


def critic_value(policy: GaussianPolicy, critic_input: np.ndarray, state):
    scale = PRIV_SCALE if policy.critic_input_dim == PRIVILEGED_DIM else OBS_SCALE
    value, new_state = _core_step(
        policy.recurrent, policy.critic_core, policy.critic_head, critic_input * scale, state
    )
    return value[:, 0], new_state


def gaussian_log_prob(actions: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    z = (actions - mean) / np.exp(log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * actions.shape[-1] * LOG_2PI


# ---------------------------------------------------------------------------
# Sequence re-forward with tapes (used by the update)


@dataclass
class SequenceCache:
    xs: np.ndarray  # (T, B, D) scaled inputs
    feats: np.ndarray  # (T, B, F)
    core_tapes: list
    resets: np.ndarray  # (T, B) 1 where the state was zeroed before the step


def run_sequence(recurrent: bool, core, head: DenseLayerParams, xs: np.ndarray, init_state, resets: np.ndarray):
    horizon, batch = xs.shape[0], xs.shape[1]
    outs = np.empty((horizon, batch, head.weights.shape[0]))
    feats = np.empty((horizon, batch, head.weights.shape[1]))
    tapes = []
    if recurrent:
        state = [(h.copy(), c.copy()) for h, c in init_state]
        for t in range(horizon):
            keep = (1.0 - resets[t])[:, None]
            state = [(h * keep, c * keep) for h, c in state]
            feat, state, tape = lstm_step(core, xs[t], state)
            feats[t] = feat
            tapes.append(tape)
            outs[t] = feat @ head.weights.T + head.biases
    else:
        for t in range(horizon):
            feat, tape = mlp_forward(core, xs[t])
            feats[t] = feat
            tapes.append(tape)
            outs[t] = feat @ head.weights.T + head.biases
    return outs, SequenceCache(xs, feats, tapes, resets)


def sequence_backward(
    recurrent: bool,
    core,
    head: DenseLayerParams,
    cache: SequenceCache,
    d_outs: np.ndarray,
    grads: dict[str, np.ndarray],
    prefix: str,
):
    """Accumulate parameter gradients for a taped sequence into ``grads``."""
    horizon = d_outs.shape[0]
    head_w = grads[prefix + "_head.weights"]
    head_b = grads[prefix + "_head.biases"]
    if recurrent:
        state_grad = None
        for t in reversed(range(horizon)):
            d_out = d_outs[t]
            head_w += np.einsum("bo,bf->of", d_out, cache.feats[t])
            head_b += d_out.sum(axis=0)
            d_feat = d_out @ head.weights
            layer_grads, _, state_grad = lstm_step_backward(
                core, cache.core_tapes[t], d_feat, state_grad
            )
            for name, g in layer_grads.named_tensors(prefix + "."):
                grads[name] += g
            keep = (1.0 - cache.resets[t])[:, None]
            state_grad = [(dh * keep, dc * keep) for dh, dc in state_grad]
    else:
        for t in range(horizon):
            d_out = d_outs[t]
            head_w += np.einsum("bo,bf->of", d_out, cache.feats[t])
            head_b += d_out.sum(axis=0)
            d_feat = d_out @ head.weights
            layer_grads, _ = mlp_backward(core, cache.core_tapes[t], d_feat)
            for name, g in layer_grads.named_tensors(prefix + "."):
                grads[name] += g


# ---------------------------------------------------------------------------
# Rollout buffer


@dataclass
class RolloutBuffer:
    obs: np.ndarray  # (T, N, obs)
    critic_in: np.ndarray  # (T, N, priv or obs)
    actions: np.ndarray  # (T, N, J) raw pre-clamp samples
    log_probs: np.ndarray  # (T, N)
    values: np.ndarray  # (T, N)
    rewards: np.ndarray  # (T, N) truncation-bootstrapped
    dones: np.ndarray  # (T, N)
    valid: np.ndarray  # (T, N) 0 where the transition was discarded
    m_ref: np.ndarray  # (T, N, 2J)
    resets: np.ndarray  # (T, N) hidden-state reset mask for re-forward
    actor_init_state: object
    critic_init_state: object
    bootstrap_value: np.ndarray  # (N,)
    term_sums: dict[str, float] = field(default_factory=dict)
    raw_reward_sum: float = 0.0


# ---------------------------------------------------------------------------
# The training run


def _episode_command(rng: RngStream, ppo_cfg) -> tuple[float, float]:
    """Start and end v_x for one episode (constant unless a ramp is drawn)."""
    v0 = float(rng.uniform(0.0, 2.5))
    if rng.uniform(0.0, 1.0) < ppo_cfg.ramp_episode_prob:
        return v0, float(rng.uniform(0.0, 2.5))
    return v0, v0


class TrainingRun:
    """Vectorized rollout collection plus clipped-surrogate updates."""

    def __init__(
        self,
        config: RunConfig,
        cmg: TrainedCmg | None,
        clips: list[MotionClip],
        seed: int | None = None,
    ):
        self.config = config
        self.seed = config.seed if seed is None else seed
        ppo_cfg = config.ppo
        if cmg is None and not ppo_cfg.no_cmg:
            raise ValueError("a trained motion generator is required unless no_cmg is set")
        self.cmg = None if ppo_cfg.no_cmg else cmg
        self.clips = clips
        n = ppo_cfg.num_envs
        self.envs = VecBipedEnv(config.env, n, self.seed)
        self.policy = init_policy(RngStream(self.seed, 50_000), config)
        self.adam = AdamState.for_params(self.policy, learning_rate=ppo_cfg.learning_rate)
        self.action_rng = RngStream(self.seed, 30_000)
        self.command_rngs = [RngStream(self.seed, 40_000 + i) for i in range(n)]
        self.shuffle_rng = RngStream(self.seed, 60_000)

        self.default_feature = np.concatenate(
            [np.array(config.env.default_pose), np.zeros(NUM_JOINTS)]
        )
        self.episode_steps_limit = int(config.env.episode_length_s * config.env.control_hz)

        self.cmg_feat = np.zeros((n, 2 * NUM_JOINTS))  # normalized reference state
        self.a_prev = np.zeros((n, NUM_JOINTS))
        self.a_prev2 = np.zeros((n, NUM_JOINTS))
        self.actor_state, self.critic_state = self.policy.zero_states(n)
        self.cmd_start = np.zeros(n)
        self.cmd_end = np.zeros(n)
        self.episode_step = np.zeros(n, dtype=np.int64)
        self.episode_return = np.zeros(n)
        self.completed_returns: list[float] = []
        self.completed_lengths: list[int] = []
        self.total_env_steps = 0
        for i in range(n):
            self._reset_slot(i)

    # -- per-slot state ------------------------------------------------------

    def _reset_slot(self, i: int):
        self.envs.reset_env(i)
        v0, v1 = _episode_command(self.command_rngs[i], self.config.ppo)
        self.cmd_start[i], self.cmd_end[i] = v0, v1
        self.episode_step[i] = 0
        self.episode_return[i] = 0.0
        self.a_prev[i] = 0.0
        self.a_prev2[i] = 0.0
        self._reset_reference(i, v0)
        if self.policy.recurrent:
            for h, c in self.actor_state:
                h[i] = 0.0
                c[i] = 0.0
            for h, c in self.critic_state:
                h[i] = 0.0
                c[i] = 0.0

    def _reset_reference(self, i: int, v_x: float):
        """Reference restart from the dataset: first frame of a near-command clip."""
        if self.cmg is None:
            self.cmg_feat[i] = 0.0
            return
        rng = self.command_rngs[i]
        vxs = np.array([c.command.v_x for c in self.clips])
        near = np.flatnonzero(np.abs(vxs - v_x) <= 0.25)
        if near.size == 0:
            near = np.array([int(np.argmin(np.abs(vxs - v_x)))])
        clip = self.clips[int(near[int(rng.integers(0, near.size))])]
        self.cmg_feat[i] = self.cmg.normalizer.normalize_feature(clip.frames[0])

    def _commands(self) -> np.ndarray:
        frac = np.clip(self.episode_step / max(self.episode_steps_limit - 1, 1), 0.0, 1.0)
        vx = self.cmd_start + frac * (self.cmd_end - self.cmd_start)
        cmds = np.zeros((self.envs.num_envs, 3))
        cmds[:, 0] = vx
        return cmds

    def _reference(self) -> np.ndarray:
        """Current reference feature in raw units (default pose without a prior)."""
        if self.cmg is None:
            return np.tile(self.default_feature, (self.envs.num_envs, 1))
        return self.cmg.normalizer.denormalize_feature(self.cmg_feat)

    def _advance_reference(self, commands: np.ndarray):
        if self.cmg is None:
            return
        c_norm = self.cmg.normalizer.normalize_command(commands)
        x = np.concatenate([self.cmg_feat, c_norm], axis=1)
        y, _ = moe_forward(self.cmg.params, x)
        self.cmg_feat = y

    def _observation(self, commands: np.ndarray) -> np.ndarray:
        envs = self.envs
        pitch = envs.gq[:, 2]
        return np.concatenate(
            [
                envs.gv[:, 2:3],
                np.stack([-np.sin(pitch), -np.cos(pitch)], axis=-1),
                commands,
                envs.gq[:, 3:],
                envs.gv[:, 3:],
                self.a_prev,
            ],
            axis=1,
        )

    def _critic_input(self, obs: np.ndarray, m_ref: np.ndarray) -> np.ndarray:
        if self.config.ppo.no_aac:
            return obs
        return privileged(obs, self.envs.gv[:, :2], m_ref)

    def _force_thresholds(self) -> np.ndarray:
        masses = np.array([dr.robot_mass for dr in self.envs.dr])
        return (
            self.config.rewards.feet_force_weight_multiple * masses * self.config.env.gravity
        )

    # -- collection ----------------------------------------------------------

    def collect_rollouts(self) -> RolloutBuffer:
        cfg = self.config
        ppo_cfg = cfg.ppo
        n, horizon = ppo_cfg.num_envs, ppo_cfg.horizon
        model = self.envs.model
        buf = RolloutBuffer(
            obs=np.zeros((horizon, n, OBSERVATION_DIM)),
            critic_in=np.zeros((horizon, n, self.policy.critic_input_dim)),
            actions=np.zeros((horizon, n, NUM_JOINTS)),
            log_probs=np.zeros((horizon, n)),
            values=np.zeros((horizon, n)),
            rewards=np.zeros((horizon, n)),
            dones=np.zeros((horizon, n)),
            valid=np.ones((horizon, n)),
            m_ref=np.zeros((horizon, n, 2 * NUM_JOINTS)),
            resets=np.zeros((horizon, n)),
            actor_init_state=_copy_state(self.actor_state),
            critic_init_state=_copy_state(self.critic_state),
            bootstrap_value=np.zeros(n),
            term_sums={k: 0.0 for k in ("qpos", "qvel", "lin", "ang", *REGULARIZATION_TERMS)},
        )
        std = np.exp(self.policy.log_std)
        prev_done = np.zeros(n)
        for t in range(horizon):
            buf.resets[t] = prev_done
            commands = self._commands()
            m_ref = self._reference()
            obs = self._observation(commands)
            critic_in = self._critic_input(obs, m_ref)
            mean, self.actor_state = actor_mean(self.policy, obs, self.actor_state)
            value, self.critic_state = critic_value(self.policy, critic_in, self.critic_state)
            noise = self.action_rng.gaussian(n * NUM_JOINTS).reshape(n, NUM_JOINTS)
            raw_action = mean + std * noise
            logp = gaussian_log_prob(raw_action, mean, self.policy.log_std)

            if ppo_cfg.no_residual:
                effective = np.clip(raw_action, model.joint_lower, model.joint_upper)
                q_target = effective
            else:
                effective = np.clip(raw_action, -ppo_cfg.residual_clamp, ppo_cfg.residual_clamp)
                q_target = compose_action(
                    m_ref[:, :NUM_JOINTS],
                    raw_action,
                    ppo_cfg.residual_clamp,
                    model.joint_lower,
                    model.joint_upper,
                )
            info = self.envs.step(q_target)
            breakdown = total_reward(
                info,
                m_ref[:, :NUM_JOINTS],
                m_ref[:, NUM_JOINTS:],
                commands,
                effective,
                self.a_prev,
                self.a_prev2,
                model,
                self._force_thresholds(),
                cfg.rewards,
            )
            self._advance_reference(commands)
            self.a_prev2 = self.a_prev
            self.a_prev = effective
            self.episode_step += 1
            # A faulted instance's transition is discarded: zero reward
            # here, excluded from losses through the validity mask below.
            step_reward = np.where(info.faulted, 0.0, breakdown.total)
            self.episode_return += step_reward
            self.total_env_steps += n

            truncated = self.episode_step >= self.episode_steps_limit
            done = info.terminated | truncated
            rewards = step_reward.copy()

            ok = ~info.faulted
            buf.obs[t] = obs
            buf.critic_in[t] = critic_in
            buf.actions[t] = raw_action
            buf.log_probs[t] = logp
            buf.values[t] = value
            buf.m_ref[t] = m_ref
            buf.dones[t] = done.astype(np.float64)
            buf.valid[t] = ok.astype(np.float64)
            for key in ("qpos", "qvel", "lin", "ang"):
                buf.term_sums[key] += float(getattr(breakdown, f"r_{key}")[ok].sum())
            for key, arr in breakdown.reg.items():
                buf.term_sums[key] += float(arr[ok].sum())
            buf.raw_reward_sum += float(step_reward.sum())

            # Value bootstrap for time-limit cuts, evaluated on the
            # pre-reset successor state with a throwaway hidden copy.
            boot_idx = np.flatnonzero(truncated & ~info.terminated)
            if boot_idx.size:
                next_cmds = self._commands()
                next_obs = self._observation(next_cmds)
                next_critic_in = self._critic_input(next_obs, self._reference())
                v_next, _ = critic_value(
                    self.policy,
                    next_critic_in[boot_idx],
                    _slice_state(self.critic_state, boot_idx),
                )
                rewards[boot_idx] += ppo_cfg.gamma * v_next
            buf.rewards[t] = rewards

            for i in np.flatnonzero(done):
                self.completed_returns.append(float(self.episode_return[i]))
                self.completed_lengths.append(int(self.episode_step[i]))
                self._reset_slot(i)
            prev_done = done.astype(np.float64)

        commands = self._commands()
        obs = self._observation(commands)
        critic_in = self._critic_input(obs, self._reference())
        boot, _ = critic_value(self.policy, critic_in, _copy_state(self.critic_state))
        buf.bootstrap_value = boot * (1.0 - prev_done)
        return buf

    # -- update ---------------------------------------------------------------

    def ppo_update(self, buf: RolloutBuffer) -> dict[str, float]:
        cfg = self.config.ppo
        advantages, returns = gae(
            buf.rewards, buf.values, buf.dones, buf.bootstrap_value, cfg.gamma, cfg.gae_lambda
        )
        mask = buf.valid
        n_valid = max(mask.sum(), 1.0)
        a_mean = float((advantages * mask).sum() / n_valid)
        a_std = float(np.sqrt(((advantages - a_mean) ** 2 * mask).sum() / n_valid))
        advantages = (advantages - a_mean) / max(a_std, 1e-8)

        stats = {"surrogate": 0.0, "value_loss": 0.0, "entropy": 0.0, "clip_fraction": 0.0}
        count = 0
        horizon, n_envs = buf.rewards.shape
        env_group = max(1, cfg.minibatch_size // horizon)
        env_order = np.arange(n_envs)
        for _ in range(cfg.update_epochs):
            # Deterministic shuffle from the run stream.
            for i in range(n_envs - 1, 0, -1):
                j = int(self.shuffle_rng.integers(0, i + 1))
                env_order[i], env_order[j] = env_order[j], env_order[i]
            for g in range(0, n_envs, env_group):
                idx = env_order[g : g + env_group]
                result = self._update_minibatch(buf, advantages, returns, idx)
                if result is None:
                    continue
                for k in stats:
                    stats[k] += result[k]
                count += 1
        for k in stats:
            stats[k] /= max(count, 1)
        return stats

    def _update_minibatch(self, buf, advantages, returns, idx):
        cfg = self.config.ppo
        policy = self.policy
        obs = buf.obs[:, idx] * OBS_SCALE
        critic_scale = PRIV_SCALE if policy.critic_input_dim == PRIVILEGED_DIM else OBS_SCALE
        critic_in = buf.critic_in[:, idx] * critic_scale
        resets = buf.resets[:, idx]
        actor_init = _slice_state(buf.actor_init_state, idx)
        critic_init = _slice_state(buf.critic_init_state, idx)

        means, actor_cache = run_sequence(
            policy.recurrent, policy.actor_core, policy.actor_head, obs, actor_init, resets
        )
        values, critic_cache = run_sequence(
            policy.recurrent, policy.critic_core, policy.critic_head, critic_in, critic_init, resets
        )
        values = values[:, :, 0]

        actions = buf.actions[:, idx]
        old_logp = buf.log_probs[:, idx]
        adv = advantages[:, idx]
        ret = returns[:, idx]
        valid = buf.valid[:, idx]
        n_valid = max(valid.sum(), 1.0)

        std = np.exp(policy.log_std)
        z = (actions - means) / std
        logp = -0.5 * np.sum(z * z, axis=-1) - np.sum(policy.log_std) - 0.5 * NUM_JOINTS * LOG_2PI
        ratio = np.exp(logp - old_logp)
        unclipped = ratio * adv
        clipped = np.clip(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * adv
        objective = np.minimum(unclipped, clipped)
        surrogate = -float((objective * valid).sum() / n_valid)
        value_err = values - ret
        value_loss = float((value_err**2 * valid).sum() / n_valid)
        entropy = float(np.sum(policy.log_std) + 0.5 * NUM_JOINTS * (1.0 + LOG_2PI))
        loss = surrogate + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
        if not np.isfinite(loss):
            return None

        # dL/dlogp: gradient passes whenever the unclipped branch is the
        # minimum or the ratio is inside the clip band.
        inside = (ratio >= 1.0 - cfg.clip_epsilon) & (ratio <= 1.0 + cfg.clip_epsilon)
        active = ((unclipped <= clipped) | inside) & (valid > 0.0)
        d_logp = np.where(active, -ratio * adv, 0.0) / n_valid
        d_mean = d_logp[:, :, None] * (actions - means) / (std**2)
        d_logstd = np.sum(d_logp[:, :, None] * (z * z - 1.0), axis=(0, 1))
        d_logstd -= cfg.entropy_coef  # entropy bonus per dimension
        d_value = (2.0 * cfg.value_coef / n_valid) * value_err * valid

        grads = {name: np.zeros_like(t) for name, t in policy.named_tensors()}
        grads["log_std"][:] = d_logstd
        sequence_backward(
            policy.recurrent, policy.actor_core, policy.actor_head, actor_cache, d_mean,
            grads, "actor",
        )
        sequence_backward(
            policy.recurrent, policy.critic_core, policy.critic_head, critic_cache,
            d_value[:, :, None], grads, "critic",
        )
        clip_grad_norm(grads, cfg.max_grad_norm)
        applied = adam_step(self.adam, policy, grads)
        if applied:
            np.clip(policy.log_std, cfg.log_std_min, cfg.log_std_max, out=policy.log_std)
        clip_fraction = float(((~inside) * valid).sum() / n_valid)
        return {
            "surrogate": surrogate,
            "value_loss": value_loss,
            "entropy": entropy,
            "clip_fraction": clip_fraction,
        }


def _copy_state(state):
    if state is None:
        return None
    return [(h.copy(), c.copy()) for h, c in state]


def _slice_state(state, idx):
    if state is None:
        return None
    return [(h[idx], c[idx]) for h, c in state]


# ---------------------------------------------------------------------------
# Training driver


def train_policy(
    config: RunConfig,
    cmg: TrainedCmg | None,
    clips: list[MotionClip],
    seed: int | None = None,
    progress: bool = False,
) -> tuple[GaussianPolicy, list[dict]]:
    """Alternate collection and updates until the step budget is reached.

    Returns the trained policy and learning-curve rows (one per update)
    with env_steps, wall_seconds, mean episode reward and length, and
    per-term reward means.
    """
    run = TrainingRun(config, cmg, clips, seed=seed)
    curve: list[dict] = []
    start = time.perf_counter()
    steps_per_window = config.ppo.num_envs * config.ppo.horizon
    last_episode_marker = 0
    mean_reward = float("nan")
    mean_len = float("nan")
    while run.total_env_steps < config.ppo.total_env_steps:
        buf = run.collect_rollouts()
        stats = run.ppo_update(buf)
        if len(run.completed_returns) > last_episode_marker:
            new = run.completed_returns[last_episode_marker:]
            mean_reward = float(np.mean(new))
            mean_len = float(np.mean(run.completed_lengths[last_episode_marker:]))
            last_episode_marker = len(run.completed_returns)
        row = {
            "env_steps": run.total_env_steps,
            "wall_seconds": time.perf_counter() - start,
            "mean_episode_reward": mean_reward,
            "episode_len": mean_len,
            "mean_step_reward": buf.raw_reward_sum / steps_per_window,
            **{f"term_{k}": v / steps_per_window for k, v in buf.term_sums.items()},
            **stats,
        }
        curve.append(row)
        if progress and len(curve) % 20 == 0:
            print(
                f"steps {row['env_steps']:>9d}  reward {row['mean_episode_reward']:8.2f}  "
                f"len {row['episode_len']:6.1f}  vloss {row['value_loss']:8.3f}"
            )
    return run.policy, curve


def steps_to_fraction(curve: list[dict], fraction: float, smooth: int = 5) -> tuple[int, float]:
    """First env-step count at which the smoothed episode reward reaches
    ``fraction`` of the final (last-quarter mean) reward."""
    steps = np.array([row["env_steps"] for row in curve])
    rewards = np.array([row["mean_episode_reward"] for row in curve])
    finite = rewards[np.isfinite(rewards)]
    if finite.size == 0:
        return int(steps[-1]), float("nan")
    filled = np.where(np.isfinite(rewards), rewards, finite.min())
    kernel = np.ones(smooth) / smooth
    smoothed = np.convolve(filled, kernel, mode="same")
    final = float(np.mean(smoothed[-max(1, len(smoothed) // 4) :]))
    threshold = fraction * final
    hits = np.flatnonzero(smoothed >= threshold)
    first = int(steps[hits[0]]) if hits.size else int(steps[-1])
    return first, final


def save_policy(path, policy: GaussianPolicy):
    from .nets import save_checkpoint

    save_checkpoint(path, policy.named_tensors("policy."))


def load_policy(path, config: RunConfig) -> GaussianPolicy:
    from .nets import load_checkpoint, load_into

    tensors = load_checkpoint(path)
    policy = init_policy(RngStream(0, 0), config)
    load_into(policy, tensors, "policy.")
    return policy
