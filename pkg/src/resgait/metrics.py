"""Evaluation metrics and the scripted-profile evaluation harness.

Motion naturalness is the Fréchet distance between Gaussian fits of
normalized motion-feature distributions (rollout vs dataset); tracking
quality uses mean absolute joint and velocity errors. The harness runs a
batch of randomized episodes under a piecewise-constant command profile
and aggregates everything into one report.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cmg import TrainedCmg, moe_forward, rollout
from .config import RunConfig
from .dataset import FEATURE_DIM, NUM_JOINTS, Command, MotionClip
from .env import VecBipedEnv
from .numerics import SymMatrix, sqrtm_psd
from .ppo import GaussianPolicy, actor_mean, compose_action
from .rewards import REGULARIZATION_TERMS, total_reward

COVARIANCE_SHRINKAGE = 1e-6


@dataclass
class GaussianSummary:
    mean: np.ndarray
    covariance: SymMatrix

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass
class MetricsReport:
    fid: float
    l_rec: float
    e_qpos: float
    e_qvel: float
    e_vel: float
    survival_rate: float
    mean_episode_length: float
    valid: bool = True

    def as_row(self) -> dict:
        return {
            "fid": self.fid,
            "l_rec": self.l_rec,
            "e_qpos": self.e_qpos,
            "e_qvel": self.e_qvel,
            "e_vel": self.e_vel,
            "survival_rate": self.survival_rate,
            "mean_episode_length": self.mean_episode_length,
        }


def fit_gaussian(features: np.ndarray) -> GaussianSummary:
    """Sample mean and unbiased covariance of row-stacked feature vectors."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be a (samples, dim) array")
    n, d = x.shape
    if n < d + 1:
        raise ValueError(f"need at least dim+1={d + 1} samples, got {n}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    return GaussianSummary(mean, SymMatrix(cov))


def frechet_distance(g1: GaussianSummary, g2: GaussianSummary) -> float:
    """Squared mean gap plus the covariance mismatch trace term."""
    if g1.dim != g2.dim:
        raise ValueError("dimension mismatch")
    mu_gap = g1.mean - g2.mean
    s1, s2 = g1.covariance, g2.covariance
    root1 = sqrtm_psd(s1).entries
    inner = SymMatrix(root1 @ s2.entries @ root1)
    cross = sqrtm_psd(inner).entries
    value = float(
        mu_gap @ mu_gap + np.trace(s1.entries + s2.entries - 2.0 * cross)
    )
    return max(value, 0.0)


def frechet_from_features(f1: np.ndarray, f2: np.ndarray) -> float:
    """Distance between Gaussian fits with finite-sample shrinkage applied."""
    g1, g2 = fit_gaussian(f1), fit_gaussian(f2)
    eye = np.eye(g1.dim) * COVARIANCE_SHRINKAGE
    g1 = GaussianSummary(g1.mean, SymMatrix(g1.covariance.entries + eye))
    g2 = GaussianSummary(g2.mean, SymMatrix(g2.covariance.entries + eye))
    return frechet_distance(g1, g2)


def reconstruction_loss(
    cmg: TrainedCmg, clips: list[MotionClip], command_grid: list[float]
) -> float:
    """Mean squared feature error of autoregressive replays on a command grid.

    For each grid speed the closest-command clip is replayed from its first
    frame; the squared error against the ground-truth clip is averaged over
    time and feature dimensions, then over grid points.
    """
    vxs = np.array([c.command.v_x for c in clips])
    losses = []
    for target in command_grid:
        gaps = np.abs(vxs - target)
        best = int(np.argmin(gaps))
        if gaps[best] > 0.1:
            warnings.warn(f"no paired clip within 0.1 m/s of {target}; grid point skipped")
            continue
        clip = clips[best]
        steps = len(clip) - 1
        result = rollout(
            cmg.params,
            cmg.normalizer,
            clip.feature(0),
            lambda t, c=clip.command: c,
            steps,
        )
        generated = result.clip.frames
        losses.append(float(np.mean((generated - clip.frames[: generated.shape[0]]) ** 2)))
    if not losses:
        raise ValueError("no grid point had a paired clip")
    return float(np.mean(losses))


def imitation_errors(
    q: np.ndarray, q_ref: np.ndarray, qd: np.ndarray, qd_ref: np.ndarray
) -> tuple[float, float]:
    """Mean absolute per-joint position and velocity gaps over a trace."""
    if q.shape != q_ref.shape or qd.shape != qd_ref.shape:
        raise ValueError("trace length mismatch")
    return float(np.mean(np.abs(q - q_ref))), float(np.mean(np.abs(qd - qd_ref)))


def velocity_tracking_error(
    v: np.ndarray, commanded: np.ndarray, hz: float, settle_seconds: float = 1.0
) -> float:
    """Mean |v - c| excluding a settling window after each command change."""
    v = np.asarray(v, dtype=np.float64)
    commanded = np.asarray(commanded, dtype=np.float64)
    n = v.shape[0]
    mask = np.ones(n, dtype=bool)
    settle = int(round(settle_seconds * hz))
    changes = np.flatnonzero(np.diff(commanded) != 0.0) + 1
    for idx in np.concatenate([[0], changes]):
        mask[idx : idx + settle] = False
    if not mask.any():
        mask[:] = True
    return float(np.mean(np.abs(v[mask] - commanded[mask])))


# ---------------------------------------------------------------------------
# Evaluation harness


def ramp_profile(config: RunConfig) -> list[tuple[float, Command]]:
    ev = config.eval
    segment = ev.episode_seconds / ev.ramp_segments
    speeds = np.linspace(ev.ramp_start, ev.ramp_end, ev.ramp_segments)
    return [(segment, Command(float(v), 0.0, 0.0)) for v in speeds]


@dataclass
class EpisodeTrace:
    q: np.ndarray
    qd: np.ndarray
    q_ref: np.ndarray
    qd_ref: np.ndarray
    v_x: np.ndarray
    commanded: np.ndarray
    rows: list[dict] = field(default_factory=list)
    survived: bool = True
    length: int = 0


def evaluate(
    policy: GaussianPolicy | None,
    cmg: TrainedCmg | None,
    config: RunConfig,
    clips: list[MotionClip],
    profile: list[tuple[float, Command]] | None = None,
    seed: int | None = None,
    trace_dir=None,
) -> MetricsReport:
    """Run randomized scripted-profile episodes and aggregate all metrics.

    ``policy=None`` plays the prior open loop (zero residual). Everything
    is deterministic given the seed; episode randomness comes from each
    instance's own stream (dynamics draw and reset perturbation).
    """
    if profile is None:
        profile = ramp_profile(config)
    seed = config.seed if seed is None else seed
    ev = config.eval
    n = ev.episodes
    hz = config.env.control_hz
    envs = VecBipedEnv(config.env, n, seed, stream_base=70_000)
    model = envs.model
    ppo_cfg = config.ppo
    # A policy trained without the prior is evaluated against the standing
    # pose, but the generator's normalizer still defines the feature space.
    prior = None if ppo_cfg.no_cmg else cmg

    steps_per_segment = [int(round(d * hz)) for d, _ in profile]
    total_steps = sum(steps_per_segment)
    command_per_step = np.concatenate(
        [np.tile(cmd.vector, (k, 1)) for k, (_, cmd) in zip(steps_per_segment, profile)]
    )

    default_feature = np.concatenate([model.default_pose, np.zeros(NUM_JOINTS)])
    if prior is not None:
        feat = np.tile(prior.normalizer.normalize_feature(default_feature), (n, 1))
    else:
        feat = None
    actor_state, critic_state = (policy.zero_states(n) if policy else (None, None))
    a_prev = np.zeros((n, NUM_JOINTS))
    a_prev2 = np.zeros((n, NUM_JOINTS))
    alive = np.ones(n, dtype=bool)
    lengths = np.full(n, total_steps, dtype=np.int64)

    traces = [
        EpisodeTrace(
            q=np.zeros((total_steps, NUM_JOINTS)),
            qd=np.zeros((total_steps, NUM_JOINTS)),
            q_ref=np.zeros((total_steps, NUM_JOINTS)),
            qd_ref=np.zeros((total_steps, NUM_JOINTS)),
            v_x=np.zeros(total_steps),
            commanded=np.zeros(total_steps),
        )
        for _ in range(n)
    ]
    masses = np.array([dr.robot_mass for dr in envs.dr])
    force_thresh = config.rewards.feet_force_weight_multiple * masses * config.env.gravity

    for t in range(total_steps):
        commands = np.zeros((n, 3))
        commands[:, 0] = command_per_step[t, 0]
        if prior is not None:
            m_ref = prior.normalizer.denormalize_feature(feat)
        else:
            m_ref = np.tile(default_feature, (n, 1))
        pitch = envs.gq[:, 2]
        obs = np.concatenate(
            [
                envs.gv[:, 2:3],
                np.stack([-np.sin(pitch), -np.cos(pitch)], axis=-1),
                commands,
                envs.gq[:, 3:],
                envs.gv[:, 3:],
                a_prev,
            ],
            axis=1,
        )
        if policy is not None:
            mean, actor_state = actor_mean(policy, obs, actor_state)
            action = mean
        else:
            action = np.zeros((n, NUM_JOINTS))
        if ppo_cfg.no_residual and policy is not None:
            effective = np.clip(action, model.joint_lower, model.joint_upper)
            q_target = effective
        else:
            effective = np.clip(action, -ppo_cfg.residual_clamp, ppo_cfg.residual_clamp)
            q_target = compose_action(
                m_ref[:, :NUM_JOINTS], action, ppo_cfg.residual_clamp,
                model.joint_lower, model.joint_upper,
            )
        info = envs.step(q_target)
        breakdown = total_reward(
            info, m_ref[:, :NUM_JOINTS], m_ref[:, NUM_JOINTS:], commands,
            effective, a_prev, a_prev2, model, force_thresh, config.rewards,
        )
        if prior is not None:
            c_norm = prior.normalizer.normalize_command(commands)
            feat_next, _ = moe_forward(prior.params, np.concatenate([feat, c_norm], axis=1))
            feat = feat_next
        a_prev2, a_prev = a_prev, effective

        for i in range(n):
            if not alive[i]:
                continue
            tr = traces[i]
            tr.q[t] = info.joint_pos[i]
            tr.qd[t] = info.joint_vel[i]
            tr.q_ref[t] = m_ref[i, :NUM_JOINTS]
            tr.qd_ref[t] = m_ref[i, NUM_JOINTS:]
            tr.v_x[t] = info.lin_vel[i, 0]
            tr.commanded[t] = commands[i, 0]
            tr.length = t + 1
            if trace_dir is not None:
                tr.rows.append(
                    _trace_row(t, hz, envs, i, effective[i], breakdown, info, commands[i])
                )
            if info.terminated[i]:
                alive[i] = False
                lengths[i] = t + 1
                traces[i].survived = False
                envs.frozen[i] = True

    survived = np.array([tr.survived for tr in traces])
    survival_rate = float(survived.mean())
    usable = [tr for tr in traces if tr.length > 0]
    if not usable:
        return MetricsReport(
            float("nan"), float("nan"), float("nan"), float("nan"), float("nan"),
            0.0, 0.0, valid=False,
        )

    qs = np.concatenate([tr.q[: tr.length] for tr in usable])
    qds = np.concatenate([tr.qd[: tr.length] for tr in usable])
    qrefs = np.concatenate([tr.q_ref[: tr.length] for tr in usable])
    qdrefs = np.concatenate([tr.qd_ref[: tr.length] for tr in usable])
    e_qpos, e_qvel = imitation_errors(qs, qrefs, qds, qdrefs)
    e_vels = [
        velocity_tracking_error(
            tr.v_x[: tr.length], tr.commanded[: tr.length], hz, ev.settle_seconds
        )
        for tr in usable
    ]
    e_vel = float(np.mean(e_vels))

    fid = float("nan")
    if cmg is not None and clips:
        rollout_features = np.concatenate(
            [np.concatenate([tr.q[: tr.length], tr.qd[: tr.length]], axis=1) for tr in usable]
        )
        dataset_features = np.concatenate([c.frames for c in clips], axis=0)
        norm = cmg.normalizer
        if rollout_features.shape[0] >= FEATURE_DIM + 1:
            fid = frechet_from_features(
                norm.normalize_feature(rollout_features),
                norm.normalize_feature(dataset_features),
            )

    l_rec = float("nan")
    if cmg is not None and clips:
        l_rec = reconstruction_loss(cmg, clips, config.eval.recon_grid)

    if trace_dir is not None:
        _write_traces(traces, Path(trace_dir))

    valid = bool(np.isfinite(e_vel)) and qs.shape[0] >= FEATURE_DIM + 1
    return MetricsReport(
        fid, l_rec, e_qpos, e_qvel, e_vel, survival_rate, float(np.mean(lengths)), valid
    )


def _trace_row(t, hz, envs, i, action, breakdown, info, command):
    row = {
        "t": t / hz,
        "x": envs.gq[i, 0],
        "z": envs.gq[i, 1],
        "pitch": envs.gq[i, 2],
        "vx": envs.gv[i, 0],
        "vz": envs.gv[i, 1],
        "pitch_rate": envs.gv[i, 2],
        "command_vx": command[0],
    }
    for j in range(NUM_JOINTS):
        row[f"q{j}"] = envs.gq[i, 3 + j]
    for j in range(NUM_JOINTS):
        row[f"qd{j}"] = envs.gv[i, 3 + j]
    for j in range(NUM_JOINTS):
        row[f"a{j}"] = action[j]
    row["contact_left"] = float(info.foot_contact[i, 0])
    row["contact_right"] = float(info.foot_contact[i, 1])
    for key in ("qpos", "qvel", "lin", "ang"):
        row[f"r_{key}"] = getattr(breakdown, f"r_{key}")[i]
    for key in REGULARIZATION_TERMS:
        row[f"r_{key}"] = breakdown.reg[key][i]
    row["r_total"] = breakdown.total[i]
    return row


def _write_traces(traces: list[EpisodeTrace], out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, tr in enumerate(traces):
        if not tr.rows:
            continue
        path = out_dir / f"episode_{i:03d}.csv"
        keys = list(tr.rows[0].keys())
        with open(path, "w") as fh:
            fh.write(",".join(keys) + "\n")
            for row in tr.rows:
                fh.write(",".join(f"{row[k]:.10g}" for k in keys) + "\n")


def write_metrics_csv(path, rows: list[tuple[str, MetricsReport]], header: str):
    columns = ["label", "fid", "l_rec", "e_qpos", "e_qvel", "e_vel", "survival_rate"]
    with open(path, "w") as fh:
        fh.write(header)
        fh.write(",".join(columns) + "\n")
        for label, report in rows:
            vals = report.as_row()
            fh.write(
                label
                + ","
                + ",".join(f"{vals[c]:.10g}" for c in columns[1:])
                + "\n"
            )
