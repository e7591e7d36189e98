"""Deterministic planar-biped simulator.

A 5-link biped (torso, two thighs, two shanks, point feet) moves in the
x-z plane with a floating base: generalized coordinates
[x, z, pitch, hip_left, hip_right, knee_left, knee_right]. Dynamics are
assembled from per-body Jacobians (M = sum m J^T J + I Jw^T Jw) and
integrated with semi-implicit Euler at the physics rate; ground contact
is a spring-damper normal force with clamped Coulomb friction. Joints are
servoed by a PD controller whose targets can arrive late by a randomized,
physics-step-quantized latency. The whole simulator is batched over
environment instances; a batch of one is the single-environment case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import EnvConfig
from .dataset import NUM_JOINTS
from .numerics import RngStream

NUM_GEN_COORDS = 7  # x, z, pitch, then the four joints
OBSERVATION_DIM = 1 + 2 + 3 + NUM_JOINTS + NUM_JOINTS + NUM_JOINTS  # 18
PRIVILEGED_DIM = OBSERVATION_DIM + 2 + 2 * NUM_JOINTS  # 28
OBSERVATION_LAYOUT = (
    "pitch_rate[1], gravity_dir[2], command[3], joint_pos[4], joint_vel[4], prev_action[4]"
)
PRIVILEGED_LAYOUT = "observation[18], base_lin_vel[2], reference_feature[8]"

# Physical-parameter randomization ranges (uniform draws).
STATIC_FRICTION_RANGE = (0.6, 1.0)
DYNAMIC_FRICTION_RANGE = (0.4, 0.8)
ROBOT_MASS_RANGE = (25.0, 35.0)
P_GAIN_SCALE_RANGE = (0.8, 1.2)
D_GAIN_SCALE_RANGE = (0.8, 1.2)
MOTOR_FRICTION_SCALE_RANGE = (0.7, 1.3)
CONTROL_LATENCY_RANGE_MS = (0.0, 20.0)


class EnvironmentFault(RuntimeError):
    """Raised when an episode reaches a non-finite state."""


# Velocity window for regularizing the Coulomb terms (motor friction and
# foot stick/slip): below it sign(v) ramps linearly, preventing bang-bang
# chatter at numerical zero while matching sign() exactly above it.
COULOMB_VEL_EPS = 0.05


@dataclass
class DomainRandomization:
    static_friction: float
    dynamic_friction: float
    robot_mass: float
    p_gain_scale: float
    d_gain_scale: float
    motor_friction_scale: float
    control_latency_ms: float


def sample_domain_randomization(rng: RngStream) -> DomainRandomization:
    return DomainRandomization(
        static_friction=float(rng.uniform(*STATIC_FRICTION_RANGE)),
        dynamic_friction=float(rng.uniform(*DYNAMIC_FRICTION_RANGE)),
        robot_mass=float(rng.uniform(*ROBOT_MASS_RANGE)),
        p_gain_scale=float(rng.uniform(*P_GAIN_SCALE_RANGE)),
        d_gain_scale=float(rng.uniform(*D_GAIN_SCALE_RANGE)),
        motor_friction_scale=float(rng.uniform(*MOTOR_FRICTION_SCALE_RANGE)),
        control_latency_ms=float(rng.uniform(*CONTROL_LATENCY_RANGE_MS)),
    )


def nominal_domain_randomization(config: EnvConfig) -> DomainRandomization:
    total = config.torso_mass + 2 * config.thigh_mass + 2 * config.shank_mass
    return DomainRandomization(0.8, 0.6, total, 1.0, 1.0, 1.0, 0.0)


@dataclass
class BipedState:
    """Single-environment snapshot in world coordinates."""

    base_pos: np.ndarray  # (x, z)
    base_pitch: float
    base_lin_vel: np.ndarray  # (vx, vz)
    base_ang_vel: float  # pitch rate
    q: np.ndarray  # (4,)
    qd: np.ndarray  # (4,)
    foot_contacts: np.ndarray  # (2,) bool
    foot_forces: np.ndarray  # (2,) newtons


@dataclass
class StepInfo:
    """Per-control-step quantities the reward stack consumes (batched)."""

    lin_vel: np.ndarray  # (N, 2)
    ang_vel: np.ndarray  # (N,)
    gravity_base: np.ndarray  # (N, 2)
    joint_pos: np.ndarray  # (N, 4)
    joint_vel: np.ndarray  # (N, 4)
    energy: np.ndarray  # (N,) mean over substeps of sum_i |tau_i qd_i|
    joint_accel: np.ndarray  # (N, 4)
    foot_contact: np.ndarray  # (N, 2) bool, any substep
    foot_slide: np.ndarray  # (N, 2) mean of |v_foot| * contact over substeps
    foot_force: np.ndarray  # (N, 2) mean |f| over substeps
    terminated: np.ndarray  # (N,) bool
    faulted: np.ndarray  # (N,) bool


class BipedModel:
    """Constant geometry: chain coefficients, angle maps, inertias."""

    # Segment order: torso, thigh_L, shank_L, thigh_R, shank_R. Each segment
    # direction is d(phi) = (sin phi, -cos phi); the torso uses a negative
    # length coefficient because it extends upward from the base point.
    ANGLE_MAP = np.array(
        [
            [1, 0, 0, 0, 0],  # torso
            [1, 1, 0, 0, 0],  # thigh L
            [1, 1, 0, 1, 0],  # shank L
            [1, 0, 1, 0, 0],  # thigh R
            [1, 0, 1, 0, 1],  # shank R
        ],
        dtype=np.float64,
    )

    def __init__(self, config: EnvConfig):
        self.config = config
        lt, ls = config.thigh_length, config.shank_length
        half_torso = config.torso_length / 2.0
        # Rows: CoM of torso/thighL/shankL/thighR/shankR, then foot L, foot R.
        self.chain = np.array(
            [
                [-half_torso, 0, 0, 0, 0],
                [0, lt / 2, 0, 0, 0],
                [0, lt, ls / 2, 0, 0],
                [0, 0, 0, lt / 2, 0],
                [0, 0, 0, lt, ls / 2],
                [0, lt, ls, 0, 0],
                [0, 0, 0, lt, ls],
            ],
            dtype=np.float64,
        )
        self.chain_angle = np.einsum("ks,sj->ksj", self.chain, self.ANGLE_MAP)
        self.body_masses = np.array(
            [
                config.torso_mass,
                config.thigh_mass,
                config.shank_mass,
                config.thigh_mass,
                config.shank_mass,
            ]
        )
        self.total_mass = float(self.body_masses.sum())
        lengths = np.array([config.torso_length, lt, ls, lt, ls])
        self.body_inertias = self.body_masses * lengths**2 / 12.0
        # Angular kinetic term of the mass matrix (before mass scaling).
        self.angular_mass = np.einsum(
            "b,bi,bj->ij", self.body_inertias, self.ANGLE_MAP, self.ANGLE_MAP
        )
        self.default_pose = np.array(config.default_pose, dtype=np.float64)
        self.joint_lower = np.array(
            [config.hip_limits[0], config.hip_limits[0], config.knee_limits[0], config.knee_limits[0]]
        )
        self.joint_upper = np.array(
            [config.hip_limits[1], config.hip_limits[1], config.knee_limits[1], config.knee_limits[1]]
        )
        self.standing_height = self.leg_drop(self.default_pose).max()
        self.physics_dt = 1.0 / config.physics_hz
        self.substeps = config.physics_hz // config.control_hz

    def leg_drop(self, q: np.ndarray) -> np.ndarray:
        """Vertical distance from base to each foot at zero pitch."""
        lt, ls = self.config.thigh_length, self.config.shank_length
        return np.array(
            [
                lt * np.cos(q[0]) + ls * np.cos(q[0] + q[2]),
                lt * np.cos(q[1]) + ls * np.cos(q[1] + q[3]),
            ]
        )


def pd_torque(
    q_target: np.ndarray,
    q: np.ndarray,
    qd: np.ndarray,
    kp: float,
    kd: float,
    torque_limit: float,
    motor_friction: float,
    p_scale,
    d_scale,
    friction_scale,
) -> np.ndarray:
    """Servo torque with randomized gain scales and Coulomb motor friction."""
    p_scale = np.asarray(p_scale, dtype=np.float64)
    d_scale = np.asarray(d_scale, dtype=np.float64)
    friction_scale = np.asarray(friction_scale, dtype=np.float64)
    if p_scale.ndim == 1:
        p_scale, d_scale, friction_scale = (
            p_scale[:, None],
            d_scale[:, None],
            friction_scale[:, None],
        )
    tau = (
        kp * p_scale * (q_target - q)
        - kd * d_scale * qd
        - motor_friction * friction_scale * np.clip(qd / COULOMB_VEL_EPS, -1.0, 1.0)
    )
    return np.clip(tau, -torque_limit, torque_limit)


class VecBipedEnv:
    """A batch of self-contained biped instances stepped in lockstep.

    All per-instance state lives in arrays with a leading batch axis; a
    batch of one serves as the plain single-environment case. Instances
    never interact: each has its own random stream, randomization draw,
    and latency buffer.
    """

    def __init__(self, config: EnvConfig, num_envs: int, seed: int, stream_base: int = 20_000):
        self.config = config
        self.model = BipedModel(config)
        self.num_envs = num_envs
        self.streams = [RngStream(seed, stream_base + i) for i in range(num_envs)]
        n = num_envs
        self.gq = np.zeros((n, NUM_GEN_COORDS))
        self.gv = np.zeros((n, NUM_GEN_COORDS))
        self.foot_contact = np.zeros((n, 2), dtype=bool)
        self.foot_force = np.zeros((n, 2))
        self.steps_taken = np.zeros(n, dtype=np.int64)
        self.frozen = np.zeros(n, dtype=bool)  # parked instances skip integration
        # Randomization, flattened to arrays for batched math.
        self.mass_scale = np.ones(n)
        self.static_friction = np.full(n, 0.8)
        self.dynamic_friction = np.full(n, 0.6)
        self.p_scale = np.ones(n)
        self.d_scale = np.ones(n)
        self.friction_scale = np.ones(n)
        self.latency_steps = np.zeros(n, dtype=np.int64)
        self.prev_target = np.tile(self.model.default_pose, (n, 1))
        self.dr: list[DomainRandomization] = [nominal_domain_randomization(config)] * n
        for i in range(num_envs):
            self.reset_env(i)

    # -- lifecycle ---------------------------------------------------------

    def reset_env(self, i: int, perturbation: float | None = None) -> None:
        """Fresh randomization and a perturbed standing pose for instance i."""
        rng = self.streams[i]
        if self.config.domain_randomization:
            dr = sample_domain_randomization(rng)
        else:
            dr = nominal_domain_randomization(self.config)
            rng.uniform(0.0, 1.0, 7)  # keep stream usage uniform across modes
        self.dr[i] = dr
        self.mass_scale[i] = dr.robot_mass / self.model.total_mass
        self.static_friction[i] = dr.static_friction
        self.dynamic_friction[i] = dr.dynamic_friction
        self.p_scale[i] = dr.p_gain_scale
        self.d_scale[i] = dr.d_gain_scale
        self.friction_scale[i] = dr.motor_friction_scale
        self.latency_steps[i] = int(np.ceil(dr.control_latency_ms / (1000.0 * self.model.physics_dt)))
        scale = self.config.reset_joint_perturbation if perturbation is None else perturbation
        q = self.model.default_pose + rng.uniform(-scale, scale, NUM_JOINTS)
        self.gq[i, :2] = (0.0, self.model.leg_drop(q).max())
        self.gq[i, 2] = 0.0
        self.gq[i, 3:] = q
        self.gv[i] = 0.0
        self.foot_contact[i] = False
        self.foot_force[i] = 0.0
        self.steps_taken[i] = 0
        self.frozen[i] = False
        self.prev_target[i] = q

    # -- kinematics helpers (batched) ---------------------------------------

    def _directions(self, gq: np.ndarray):
        phi = gq[:, 2:] @ self.model.ANGLE_MAP.T  # (N, 5)
        s, c = np.sin(phi), np.cos(phi)
        d = np.stack([s, -c], axis=-1)  # segment direction
        dp = np.stack([c, s], axis=-1)  # derivative w.r.t. angle
        return phi, d, dp

    def point_positions(self, gq: np.ndarray) -> np.ndarray:
        """World positions of the 5 CoMs and 2 feet: (N, 7, 2)."""
        _, d, _ = self._directions(gq)
        return gq[:, None, :2] + np.einsum("ks,nsd->nkd", self.model.chain, d)

    def point_velocities(self, gq: np.ndarray, gv: np.ndarray) -> np.ndarray:
        _, _, dp = self._directions(gq)
        phidot = gv[:, 2:] @ self.model.ANGLE_MAP.T
        return gv[:, None, :2] + np.einsum("ks,nsd,ns->nkd", self.model.chain, dp, phidot)

    def total_energy(self) -> np.ndarray:
        """Kinetic + gravitational + contact-spring energy per instance."""
        m = self.model
        masses = m.body_masses[None, :] * self.mass_scale[:, None]
        inertias = m.body_inertias[None, :] * self.mass_scale[:, None]
        pts = self.point_positions(self.gq)
        vels = self.point_velocities(self.gq, self.gv)
        phidot = self.gv[:, 2:] @ m.ANGLE_MAP.T
        kinetic = 0.5 * np.sum(masses * np.sum(vels[:, :5] ** 2, axis=-1), axis=1)
        kinetic += 0.5 * np.sum(inertias * phidot**2, axis=1)
        potential = self.config.gravity * np.sum(masses * pts[:, :5, 1], axis=1)
        pen = np.minimum(pts[:, 5:, 1], 0.0)
        spring = 0.5 * self.config.contact_stiffness * np.sum(pen**2, axis=1)
        return kinetic + potential + spring

    # -- dynamics ------------------------------------------------------------

    def _substep(self, q_target: np.ndarray):
        """One semi-implicit Euler step at the physics rate.

        Joint damping and the velocity-dependent parts of the contact
        forces are integrated implicitly (they enter through the modified
        mass matrix / a small per-contact fixed point); explicit handling
        is unstable at 200 Hz for the light leg-folding mode and for a
        grazing swing foot. Force laws are unchanged: PD servo torques,
        spring-damper normal force f_n = max(0, -k pen - d pen_rate) with
        the end-of-step penetration rate, Coulomb friction clamped at
        mu f_n (static threshold to stick, dynamic magnitude when sliding).

        Returns (tau, |v_foot| per foot, contact mask, |f| per foot) for
        reward bookkeeping; tau is the reported servo torque.
        """
        cfg, m = self.config, self.model
        dt = m.physics_dt
        gq, gv = self.gq, self.gv
        n = self.num_envs

        q = gq[:, 3:]
        qd = gv[:, 3:]
        tau = pd_torque(
            q_target,
            q,
            qd,
            cfg.kp,
            cfg.kd,
            cfg.torque_limit,
            cfg.motor_friction,
            self.p_scale,
            self.d_scale,
            self.friction_scale,
        )
        # Split for integration: stiffness and the saturated part of motor
        # friction are explicit; damping slopes go into the implicit diagonal.
        stiff = np.clip(
            cfg.kp * self.p_scale[:, None] * (q_target - q),
            -cfg.torque_limit,
            cfg.torque_limit,
        )
        fric_max = cfg.motor_friction * self.friction_scale[:, None]
        in_band = np.abs(qd) <= COULOMB_VEL_EPS
        stiff -= np.where(in_band, 0.0, fric_max * np.sign(qd))
        joint_damping = cfg.kd * self.d_scale[:, None] + np.where(
            in_band, fric_max / COULOMB_VEL_EPS, 0.0
        )

        phi, d, dp = self._directions(gq)
        phidot = gv[:, 2:] @ m.ANGLE_MAP.T
        masses = m.body_masses[None, :] * self.mass_scale[:, None]  # (N, 5)

        # Point Jacobians: translation block is identity, angular block comes
        # from the constant chain coefficients.
        j_ang = np.einsum("ksj,nsd->nkdj", m.chain_angle, dp)  # (N, 7pts, 2, 5)
        jac = np.zeros((n, 7, 2, NUM_GEN_COORDS))
        jac[:, :, 0, 0] = 1.0
        jac[:, :, 1, 1] = 1.0
        jac[:, :, :, 2:] = j_ang

        jb = jac[:, :5]  # body CoM rows
        mass_matrix = np.einsum("nb,nbdi,nbdj->nij", masses, jb, jb)
        mass_matrix[:, 2:, 2:] += self.mass_scale[:, None, None] * m.angular_mass[None]
        joint_idx = np.arange(3, NUM_GEN_COORDS)
        mass_matrix[:, joint_idx, joint_idx] += dt * joint_damping

        # Velocity-product acceleration of each point: sum_s C[k,s] (-d_s) phidot_s^2.
        bias_acc = np.einsum("ks,nsd,ns->nkd", m.chain, -d, phidot**2)

        rhs = np.zeros((n, NUM_GEN_COORDS))
        rhs[:, 3:] += stiff - joint_damping * qd
        grav = np.zeros((n, 5, 2))
        grav[:, :, 1] = -cfg.gravity
        rhs += np.einsum("nb,nbdi,nbd->ni", masses, jb, grav - bias_acc[:, :5])

        # A diverged instance must not poison the batched solve.
        bad = ~np.isfinite(mass_matrix).all(axis=(1, 2)) | ~np.isfinite(rhs).all(axis=1)
        if bad.any():
            mass_matrix[bad] = np.eye(NUM_GEN_COORDS)
            rhs[bad] = 0.0

        # Contact directions: per foot an x (friction) and z (normal) row.
        feet_pos = gq[:, None, :2] + np.einsum("ks,nsd->nkd", m.chain[5:], d)
        feet_vel = gv[:, None, :2] + np.einsum("ks,nsd,ns->nkd", m.chain[5:], dp, phidot)
        pen = feet_pos[:, :, 1]
        in_contact = pen < 0.0
        contact_jac = np.concatenate([jac[:, 5, :, :], jac[:, 6, :, :]], axis=1)  # (N,4,7)
        stacked = np.concatenate([rhs[:, :, None], contact_jac.transpose(0, 2, 1)], axis=2)
        solution = np.linalg.solve(mass_matrix, stacked)
        acc0 = solution[:, :, 0]
        unit_response = solution[:, :, 1:]  # (N, 7, 4)
        delassus = np.einsum("nci,nig->ncg", contact_jac, unit_response)  # (N, 4, 4)
        contact_bias = np.stack(
            [bias_acc[:, 5, 0], bias_acc[:, 5, 1], bias_acc[:, 6, 0], bias_acc[:, 6, 1]],
            axis=1,
        )
        v_free = (
            np.stack(
                [feet_vel[:, 0, 0], feet_vel[:, 0, 1], feet_vel[:, 1, 0], feet_vel[:, 1, 1]],
                axis=1,
            )
            + dt * (np.einsum("nci,ni->nc", contact_jac, acc0) + contact_bias)
        )
        forces = np.zeros((n, 4))  # [L_x, L_z, R_x, R_z]
        mu_s = self.static_friction
        mu_d = self.dynamic_friction
        k_c, d_c = cfg.contact_stiffness, cfg.contact_damping
        diag = np.maximum(delassus[:, (0, 1, 2, 3), (0, 1, 2, 3)], 1e-9)
        # End-of-step penetration and rate: effective damping d + k dt.
        d_eff = d_c + k_c * dt
        for _ in range(6):
            for foot, (ix, iz) in enumerate(((0, 1), (2, 3))):
                vz = v_free[:, iz] + dt * (delassus[:, iz] * forces).sum(axis=1)
                vz -= dt * delassus[:, iz, iz] * forces[:, iz]
                f_z = (-k_c * pen[:, foot] - d_eff * vz) / (
                    1.0 + d_eff * dt * delassus[:, iz, iz]
                )
                forces[:, iz] = np.where(in_contact[:, foot], np.maximum(0.0, f_z), 0.0)
                # Friction: stopping force clamped by the friction cone.
                vx = v_free[:, ix] + dt * (delassus[:, ix] * forces).sum(axis=1)
                want = forces[:, ix] - vx / (dt * diag[:, ix])
                stick = np.abs(want) <= mu_s * forces[:, iz]
                slip = mu_d * forces[:, iz] * np.sign(want)
                forces[:, ix] = np.where(in_contact[:, foot], np.where(stick, want, slip), 0.0)
        acc = acc0 + np.einsum("nig,ng->ni", unit_response, forces)

        keep = ~self.frozen
        gv[keep] += acc[keep] * dt
        gq[keep] += gv[keep] * dt

        self.foot_contact = in_contact
        self.foot_force = np.hypot(forces[:, (0, 2)], forces[:, (1, 3)])
        slide = np.hypot(feet_vel[:, :, 0], feet_vel[:, :, 1]) * in_contact
        return tau, slide, in_contact, self.foot_force

    def step(self, q_target: np.ndarray) -> StepInfo:
        """Advance one control tick (physics_hz / control_hz substeps).

        Late targets: with latency quantized to whole physics steps, the
        first ``latency`` substeps of the tick still track the previous
        tick's target.
        """
        q_target = np.asarray(q_target, dtype=np.float64)
        if q_target.shape != (self.num_envs, NUM_JOINTS):
            raise ValueError(f"q_target must be ({self.num_envs}, {NUM_JOINTS})")
        q_target = np.clip(q_target, self.model.joint_lower, self.model.joint_upper)
        qd_before = self.gv[:, 3:].copy()
        energy = np.zeros(self.num_envs)
        slide_sum = np.zeros((self.num_envs, 2))
        force_sum = np.zeros((self.num_envs, 2))
        contact_any = np.zeros((self.num_envs, 2), dtype=bool)
        substeps = self.model.substeps
        for k in range(substeps):
            effective = np.where(
                (k >= self.latency_steps)[:, None], q_target, self.prev_target
            )
            qd_now = self.gv[:, 3:]
            tau, slide, contact, force = self._substep(effective)
            energy += np.sum(np.abs(tau * qd_now), axis=1)
            slide_sum += slide
            force_sum += force
            contact_any |= contact
        self.prev_target = q_target.copy()
        self.steps_taken += 1

        dt_control = substeps * self.model.physics_dt
        pitch = self.gq[:, 2]
        faulted = ~np.isfinite(self.gq).all(axis=1) | ~np.isfinite(self.gv).all(axis=1)
        terminated = check_termination_arrays(
            pitch, self.gq[:, 1], self.config, self.model.standing_height
        )
        info = StepInfo(
            lin_vel=self.gv[:, :2].copy(),
            ang_vel=self.gv[:, 2].copy(),
            gravity_base=np.stack([-np.sin(pitch), -np.cos(pitch)], axis=-1),
            joint_pos=self.gq[:, 3:].copy(),
            joint_vel=self.gv[:, 3:].copy(),
            energy=energy / substeps,
            joint_accel=(self.gv[:, 3:] - qd_before) / dt_control,
            foot_contact=contact_any,
            foot_slide=slide_sum / substeps,
            foot_force=force_sum / substeps,
            terminated=terminated | faulted,
            faulted=faulted,
        )
        return info

    def snapshot(self, i: int) -> BipedState:
        return BipedState(
            base_pos=self.gq[i, :2].copy(),
            base_pitch=float(self.gq[i, 2]),
            base_lin_vel=self.gv[i, :2].copy(),
            base_ang_vel=float(self.gv[i, 2]),
            q=self.gq[i, 3:].copy(),
            qd=self.gv[i, 3:].copy(),
            foot_contacts=self.foot_contact[i].copy(),
            foot_forces=self.foot_force[i].copy(),
        )


def check_termination_arrays(pitch, base_height, config: EnvConfig, standing_height: float):
    return (np.abs(pitch) > config.termination_pitch) | (
        base_height < config.termination_height_frac * standing_height
    )


def check_termination(state: BipedState, config: EnvConfig) -> bool:
    model_height = BipedModel(config).standing_height
    return bool(
        check_termination_arrays(
            np.array([state.base_pitch]), np.array([state.base_pos[1]]), config, model_height
        )[0]
    )


def observe(
    pitch_rate: np.ndarray,
    pitch: np.ndarray,
    command: np.ndarray,
    joint_pos: np.ndarray,
    joint_vel: np.ndarray,
    prev_action: np.ndarray,
) -> np.ndarray:
    """Actor observation: proprioception and task only, fixed layout.

    Batched: all inputs carry a leading instance axis. The layout is
    ``OBSERVATION_LAYOUT``; base linear velocity and the reference motion
    are deliberately absent.
    """
    gravity = np.stack([-np.sin(pitch), -np.cos(pitch)], axis=-1)
    return np.concatenate(
        [pitch_rate[:, None], gravity, command, joint_pos, joint_vel, prev_action], axis=1
    )


def observe_info(info: StepInfo, command: np.ndarray, prev_action: np.ndarray) -> np.ndarray:
    return np.concatenate(
        [
            info.ang_vel[:, None],
            info.gravity_base,
            command,
            info.joint_pos,
            info.joint_vel,
            prev_action,
        ],
        axis=1,
    )


def privileged(obs: np.ndarray, lin_vel: np.ndarray, reference_feature: np.ndarray) -> np.ndarray:
    """Critic state: the observation verbatim, then v_t and the reference."""
    return np.concatenate([obs, lin_vel, reference_feature], axis=1)
