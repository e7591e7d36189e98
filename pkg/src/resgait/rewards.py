"""Reward stack: imitation and task kernels plus regularization penalties.

Every coefficient lives in the single table below; tests assert each
literal against an independent fixture. All functions are pure and
batched over environment instances. In the planar setting the roll-pitch
angular velocity reduces to the pitch rate and the lateral gravity
component to sin(pitch).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RewardsConfig
from .env import BipedModel, StepInfo

# (name -> weight); kernel scales live beside their weights below.
REWARD_WEIGHTS = {
    "qpos": 1.0,
    "qvel": 0.2,
    "lin": 2.0,
    "ang": 0.5,
    "alive": 1.0,
    "termination": -200.0,
    "orientation": -2.0,
    "rp_ang_vel": -0.05,
    "energy": -1e-5,
    "action_rate": -0.04,
    "action_smoothness": -0.06,
    "joint_accel": -5e-8,
    "joint_limits": -2.0,
    "joint_deviation": -0.2,
    "feet_slide": -1.0,
    "feet_force": -0.003,
}

KERNEL_SCALES = {
    "qpos": 0.6,
    "qvel": 0.5,
    "lin": 2.0,
    "ang": 1.0,
}

REGULARIZATION_TERMS = (
    "alive",
    "termination",
    "orientation",
    "rp_ang_vel",
    "energy",
    "action_rate",
    "action_smoothness",
    "joint_accel",
    "joint_limits",
    "joint_deviation",
    "feet_slide",
    "feet_force",
)

# Joint-deviation penalty applies to the knees only (indices 2, 3).
DEVIATION_JOINTS = np.array([2, 3])


@dataclass
class RewardBreakdown:
    """Weighted term values (batched) and their sum."""

    r_qpos: np.ndarray
    r_qvel: np.ndarray
    r_lin: np.ndarray
    r_ang: np.ndarray
    reg: dict[str, np.ndarray]
    total: np.ndarray

    def term(self, name: str) -> np.ndarray:
        if name in ("qpos", "qvel", "lin", "ang"):
            return getattr(self, f"r_{name}")
        return self.reg[name]


def imitation_reward(
    q: np.ndarray, q_ref: np.ndarray, qd: np.ndarray, qd_ref: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Exponential-kernel tracking of the reference pose and velocity."""
    pos_err = np.sum((q - q_ref) ** 2, axis=-1)
    vel_err = np.sum((qd - qd_ref) ** 2, axis=-1)
    r_qpos = REWARD_WEIGHTS["qpos"] * np.exp(-KERNEL_SCALES["qpos"] * pos_err)
    r_qvel = REWARD_WEIGHTS["qvel"] * np.exp(-KERNEL_SCALES["qvel"] * vel_err)
    return r_qpos, r_qvel


def task_reward(
    v_xy: np.ndarray, c_xy: np.ndarray, omega_z: np.ndarray, c_z: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Exponential-kernel tracking of commanded linear and yaw velocity."""
    lin_err = np.sum((v_xy - c_xy) ** 2, axis=-1)
    ang_err = (omega_z - c_z) ** 2
    r_lin = REWARD_WEIGHTS["lin"] * np.exp(-KERNEL_SCALES["lin"] * lin_err)
    r_ang = REWARD_WEIGHTS["ang"] * np.exp(-KERNEL_SCALES["ang"] * ang_err)
    return r_lin, r_ang


def regularization_reward(
    info: StepInfo,
    a_t: np.ndarray,
    a_prev: np.ndarray,
    a_prev2: np.ndarray,
    model: BipedModel,
    force_threshold: np.ndarray,
) -> dict[str, np.ndarray]:
    """All penalty rows, each already multiplied by its table weight.

    Missing action history (early in an episode) is handled by the caller
    passing zero-padded a_prev / a_prev2. ``force_threshold`` is the
    per-instance foot-force allowance in newtons.
    """
    w = REWARD_WEIGHTS
    terminated = info.terminated.astype(np.float64)
    out = {
        "alive": w["alive"] * (1.0 - terminated),
        "termination": w["termination"] * terminated,
        "orientation": w["orientation"] * info.gravity_base[:, 0] ** 2,
        "rp_ang_vel": w["rp_ang_vel"] * info.ang_vel**2,
        "energy": w["energy"] * info.energy,
        "action_rate": w["action_rate"] * np.sum((a_t - a_prev) ** 2, axis=-1),
        "action_smoothness": w["action_smoothness"]
        * np.sum((a_t - 2.0 * a_prev + a_prev2) ** 2, axis=-1),
        "joint_accel": w["joint_accel"] * np.sum(info.joint_accel**2, axis=-1),
        "joint_limits": w["joint_limits"]
        * np.sum(
            (info.joint_pos < model.joint_lower) | (info.joint_pos > model.joint_upper),
            axis=-1,
        ).astype(np.float64),
        "joint_deviation": w["joint_deviation"]
        * np.sum(
            np.abs(
                info.joint_pos[:, DEVIATION_JOINTS] - model.default_pose[DEVIATION_JOINTS]
            ),
            axis=-1,
        ),
        "feet_slide": w["feet_slide"] * np.sum(info.foot_slide, axis=-1),
        "feet_force": w["feet_force"]
        * np.sum(np.maximum(0.0, info.foot_force - force_threshold[:, None]), axis=-1),
    }
    return out


def total_reward(
    info: StepInfo,
    q_ref: np.ndarray,
    qd_ref: np.ndarray,
    command: np.ndarray,
    a_t: np.ndarray,
    a_prev: np.ndarray,
    a_prev2: np.ndarray,
    model: BipedModel,
    force_threshold: np.ndarray,
    mask: RewardsConfig | None = None,
) -> RewardBreakdown:
    """The full per-step reward with optional per-term ablation zeroing."""
    r_qpos, r_qvel = imitation_reward(info.joint_pos, q_ref, info.joint_vel, qd_ref)
    v_xy = np.stack([info.lin_vel[:, 0], np.zeros_like(info.lin_vel[:, 0])], axis=-1)
    c_xy = np.stack([command[:, 0], command[:, 1]], axis=-1)
    omega_z = np.zeros_like(info.ang_vel)  # planar: no yaw degree of freedom
    r_lin, r_ang = task_reward(v_xy, c_xy, omega_z, command[:, 2])
    if mask is not None:
        if mask.drop_qpos:
            r_qpos = np.zeros_like(r_qpos)
        if mask.drop_qvel:
            r_qvel = np.zeros_like(r_qvel)
        if mask.drop_task:
            r_lin = np.zeros_like(r_lin)
            r_ang = np.zeros_like(r_ang)
    reg = regularization_reward(info, a_t, a_prev, a_prev2, model, force_threshold)
    total = r_qpos + r_qvel + r_lin + r_ang
    for value in reg.values():
        total = total + value
    return RewardBreakdown(r_qpos, r_qvel, r_lin, r_ang, reg, total)
