"""Run configuration: one nested structure holding every tunable default.

The file format is YAML. Parsing is strict (unknown keys are rejected),
round-trips losslessly, and the canonical serialisation is hashed so that
every output artifact can be stamped with the exact configuration that
produced it.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, fields, is_dataclass

import yaml


class ConfigError(ValueError):
    """Raised for unknown keys, bad types, or out-of-range settings."""


@dataclass
class DatasetConfig:
    num_clips: int = 400
    duration_min_s: float = 4.0
    duration_max_s: float = 8.0
    frame_hz: int = 50
    mirror: bool = True
    # Command draws concentrate in the mid range so resampling has work to do.
    common_band_low: float = 0.5
    common_band_high: float = 1.5
    common_band_prob: float = 0.7
    v_max: float = 2.5
    v_switch: float = 1.2
    # Gait shape: stride frequency f = freq_base + freq_slope * v, amplitudes
    # grow linearly with v, knees flex during swing with a speed-dependent duty.
    freq_base: float = 0.9
    freq_slope: float = 0.45
    hip_amp_slope: float = 0.22
    hip_lean_slope: float = 0.03
    knee_amp_base: float = 0.12
    knee_amp_slope: float = 0.15
    duty_walk: float = 0.62
    duty_run: float = 0.45
    ramp_time_s: float = 0.8
    smooth_eps: float = 0.25
    phase_jitter: float = 0.5
    amp_jitter: float = 0.05
    noise_sigma: float = 0.01
    histogram_bins: int = 10


@dataclass
class CmgConfig:
    num_experts: int = 4
    hidden_sizes: list[int] = field(default_factory=lambda: [64, 64])
    gating_hidden: int = 32
    activation: str = "elu"
    epochs: int = 36
    batch_size: int = 64
    batches_per_epoch: int = 45
    rollout_window: int = 16
    learning_rate: float = 1e-3
    learning_rate_final: float = 3e-5
    grad_clip: float = 0.5
    heldout_fraction: float = 0.1
    # Scheduled sampling: teacher probability 1 for the first flat fraction
    # of epochs, 0 for the last, linear in between.
    teacher_flat_start: float = 0.4
    teacher_flat_end: float = 0.1


@dataclass
class EnvConfig:
    control_hz: int = 50
    physics_hz: int = 200
    gravity: float = 9.81
    torso_mass: float = 20.0
    thigh_mass: float = 3.0
    shank_mass: float = 2.0
    torso_length: float = 0.5
    thigh_length: float = 0.4
    shank_length: float = 0.4
    # Joint order everywhere: [hip_left, hip_right, knee_left, knee_right].
    default_pose: list[float] = field(default_factory=lambda: [0.05, -0.22293, 0.18695, 0.12861])
    kp: float = 1000.0
    kd: float = 25.0
    torque_limit: float = 150.0
    motor_friction: float = 0.5
    hip_limits: list[float] = field(default_factory=lambda: [-1.2, 1.2])
    knee_limits: list[float] = field(default_factory=lambda: [-0.1, 2.2])
    contact_stiffness: float = 2.0e4
    contact_damping: float = 200.0
    termination_pitch: float = 0.8
    termination_height_frac: float = 0.4
    reset_joint_perturbation: float = 0.05
    episode_length_s: float = 10.0
    domain_randomization: bool = True


@dataclass
class RewardsConfig:
    drop_qpos: bool = False
    drop_qvel: bool = False
    drop_task: bool = False
    # Foot-force penalty kicks in above this multiple of randomized body weight.
    feet_force_weight_multiple: float = 1.5


@dataclass
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    learning_rate: float = 3e-4
    num_envs: int = 16
    horizon: int = 64
    update_epochs: int = 4
    minibatch_size: int = 512
    entropy_coef: float = 0.005
    value_coef: float = 0.5
    max_grad_norm: float = 1.0
    action_std_init: float = 0.2
    log_std_min: float = -4.0
    log_std_max: float = 1.0
    total_env_steps: int = 2_000_000
    recurrent: bool = True
    lstm_hidden: int = 64
    lstm_layers: int = 2
    mlp_hidden: list[int] = field(default_factory=lambda: [128, 128])
    ramp_episode_prob: float = 0.2
    residual_clamp: float = 0.5
    no_cmg: bool = False
    no_residual: bool = False
    no_aac: bool = False


@dataclass
class EvalConfig:
    episodes: int = 32
    episode_seconds: float = 20.0
    settle_seconds: float = 1.0
    ramp_start: float = 0.0
    ramp_end: float = 2.5
    ramp_segments: int = 5
    recon_grid: list[float] = field(default_factory=lambda: [0.0, 0.5, 1.0, 1.5, 2.0, 2.5])


@dataclass
class RunConfig:
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    cmg: CmgConfig = field(default_factory=CmgConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    rewards: RewardsConfig = field(default_factory=RewardsConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        if not 0.0 <= self.ppo.gamma < 1.0:
            raise ConfigError(f"ppo.gamma must be in [0, 1), got {self.ppo.gamma}")
        if self.ppo.clip_epsilon <= 0.0:
            raise ConfigError("ppo.clip_epsilon must be positive")
        if self.env.physics_hz % self.env.control_hz != 0:
            raise ConfigError("env.physics_hz must be divisible by env.control_hz")
        if self.dataset.duration_min_s < 1.0:
            raise ConfigError("dataset clip durations must be at least 1 s")
        if not 0.0 < self.cmg.heldout_fraction < 1.0:
            raise ConfigError("cmg.heldout_fraction must be in (0, 1)")
        if self.cmg.activation not in ("tanh", "relu", "elu"):
            raise ConfigError(f"unsupported cmg.activation {self.cmg.activation!r}")
        return self


def _from_dict(cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping for {cls.__name__}, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        ftype = known[name].type
        if is_dataclass_name(ftype):
            kwargs[name] = _from_dict(_SECTION_TYPES[name], value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


_SECTION_TYPES = {
    "dataset": DatasetConfig,
    "cmg": CmgConfig,
    "env": EnvConfig,
    "rewards": RewardsConfig,
    "ppo": PpoConfig,
    "eval": EvalConfig,
}


def is_dataclass_name(type_hint) -> bool:
    name = type_hint if isinstance(type_hint, str) else getattr(type_hint, "__name__", "")
    return name in {t.__name__ for t in _SECTION_TYPES.values()}


def config_to_dict(config: RunConfig) -> dict:
    return asdict(config)


def config_from_dict(data: dict) -> RunConfig:
    return _from_dict(RunConfig, data).validate()


def dump_config(config: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(config), sort_keys=True, default_flow_style=False)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    return config_from_dict(data)


def save_config(config: RunConfig, path):
    with open(path, "w") as fh:
        fh.write(dump_config(config))


def config_hash(config: RunConfig) -> str:
    """Content digest of the canonical serialisation (first 16 hex chars)."""
    return hashlib.sha256(dump_config(config).encode("utf-8")).hexdigest()[:16]


def provenance_header(config: RunConfig, version: str) -> str:
    """Comment lines stamped at the top of every CSV/manifest output."""
    return (
        f"# config_hash={config_hash(config)}\n"
        f"# seed={config.seed}\n"
        f"# version={version}\n"
    )
