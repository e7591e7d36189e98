"""Command-conditioned reference gait dataset for the planar biped.

Clips are synthesised procedurally: hip trajectories are anti-phase
sinusoids whose amplitude grows with commanded speed, knees flex during
the swing window, and every clip eases in from the standing pose through
a smoothstep envelope. Joint velocities are the analytic derivatives.
The corpus is mirrored, histogram-balanced, normalised, and served
through a weighted sampler.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import DatasetConfig, RunConfig, provenance_header
from .numerics import RngStream

NUM_JOINTS = 4
FEATURE_DIM = 2 * NUM_JOINTS
# Joint order: [hip_left, hip_right, knee_left, knee_right].
MIRROR_PERM = np.array([1, 0, 3, 2])

COMMAND_LOW = np.array([0.0, -0.3, -0.5])
COMMAND_HIGH = np.array([2.5, 0.3, 0.5])

CLIP_MAGIC = "RUNCLIP1"

# Canonical standing pose: level feet 0.12 m fore and aft of the CoM,
# giving a wide support segment; also the default reset pose.
DEFAULT_POSE = np.array([0.05, -0.22293, 0.18695, 0.12861])


class CommandRangeError(ValueError):
    """Raised when a command lies outside the supported envelope."""


@dataclass(frozen=True)
class Command:
    v_x: float
    v_y: float = 0.0
    omega_z: float = 0.0

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.v_x, self.v_y, self.omega_z])

    def validate(self) -> "Command":
        v = self.vector
        if np.any(v < COMMAND_LOW) or np.any(v > COMMAND_HIGH):
            raise CommandRangeError(f"command {v} outside ranges {COMMAND_LOW}..{COMMAND_HIGH}")
        return self


@dataclass(frozen=True)
class MotionFeature:
    """One reference frame: joint positions and velocities."""

    q: np.ndarray
    qdot: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.qdot])

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "MotionFeature":
        vec = np.asarray(vec, dtype=np.float64)
        return cls(vec[:NUM_JOINTS].copy(), vec[NUM_JOINTS:].copy())


@dataclass
class MotionClip:
    frames: np.ndarray  # (T, 2J) at frame_hz
    command: Command
    gait_mode: str  # "walk" | "run"

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != FEATURE_DIM:
            raise ValueError(f"frames must be (T, {FEATURE_DIM}), got {self.frames.shape}")

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def q(self) -> np.ndarray:
        return self.frames[:, :NUM_JOINTS]

    @property
    def qdot(self) -> np.ndarray:
        return self.frames[:, NUM_JOINTS:]

    def feature(self, t: int) -> MotionFeature:
        return MotionFeature.from_vector(self.frames[t])


def finite_difference_consistency(clip: MotionClip, hz: float = 50.0) -> float:
    """Relative L2 gap between stored velocities and central differences."""
    q = clip.q
    fd = (q[2:] - q[:-2]) * (hz / 2.0)
    stored = clip.qdot[1:-1]
    denom = max(np.linalg.norm(stored), 1e-9)
    return float(np.linalg.norm(fd - stored) / denom)


def _smoothstep(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s), 6.0 * s * (1.0 - s)


def _smooth_rect(u: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Smooth max(0, u) and its derivative."""
    r = np.sqrt(u * u + eps * eps)
    return 0.5 * (u + r), 0.5 * (1.0 + u / r)


def synthesize_gait(
    command: Command, duration: float, params: DatasetConfig, rng: RngStream
) -> MotionClip:
    """One reference clip for a constant command.

    Stride frequency and amplitudes follow the configured affine-in-speed
    laws; a v_x of exactly zero yields a constant standing clip. Per-clip
    phase and amplitude jitter comes from the caller's stream.
    """
    command.validate()
    if duration < 1.0:
        raise ValueError("clip duration must be at least 1 s")
    hz = params.frame_hz
    n = int(round(duration * hz))
    t = np.arange(n) / hz
    default = DEFAULT_POSE
    v = command.v_x
    gait_mode = "run" if v > params.v_switch else "walk"
    frames = np.zeros((n, FEATURE_DIM))
    frames[:, :NUM_JOINTS] = default
    # Jitter draws happen unconditionally so stream usage is uniform per clip.
    phase0 = rng.uniform(-params.phase_jitter, params.phase_jitter)
    amp_scale = 1.0 + rng.uniform(-params.amp_jitter, params.amp_jitter)
    if v == 0.0:
        return MotionClip(frames, command, gait_mode)

    freq = params.freq_base + params.freq_slope * v
    omega = 2.0 * np.pi * freq
    duty = params.duty_run if gait_mode == "run" else params.duty_walk
    hip_amp = params.hip_amp_slope * v * amp_scale
    knee_amp = (params.knee_amp_base + params.knee_amp_slope * v) * amp_scale
    lean = params.hip_lean_slope * v

    env, denv_ds = _smoothstep(t / params.ramp_time_s)
    denv = denv_ds / params.ramp_time_s

    phase = omega * t + phase0
    rect_floor = np.cos(np.pi * (1.0 - duty))
    peak, _ = _smooth_rect(np.array([1.0 - rect_floor]), params.smooth_eps)
    knee_gain = knee_amp / peak[0]

    q = np.empty((n, NUM_JOINTS))
    qd = np.empty((n, NUM_JOINTS))
    for j, side_phase in ((0, 0.0), (1, np.pi)):
        p = phase + side_phase
        center = default[j] + env * (lean - default[j])
        dcenter = denv * (lean - default[j])
        q[:, j] = center + env * hip_amp * np.sin(p)
        qd[:, j] = dcenter + denv * hip_amp * np.sin(p) + env * hip_amp * omega * np.cos(p)
        # Knee of the same leg flexes while the hip swings forward.
        u = np.cos(p) - rect_floor
        rect, drect_du = _smooth_rect(u, params.smooth_eps)
        k = 2 + j
        q[:, k] = default[k] + env * knee_gain * rect
        qd[:, k] = denv * knee_gain * rect + env * knee_gain * drect_du * (-np.sin(p)) * omega
    frames[:, :NUM_JOINTS] = q
    frames[:, NUM_JOINTS:] = qd
    return MotionClip(frames, command, gait_mode)


def mirror_clip(clip: MotionClip) -> MotionClip:
    """Swap left/right channels and negate the lateral command components."""
    frames = np.empty_like(clip.frames)
    frames[:, :NUM_JOINTS] = clip.q[:, MIRROR_PERM]
    frames[:, NUM_JOINTS:] = clip.qdot[:, MIRROR_PERM]
    cmd = Command(clip.command.v_x, -clip.command.v_y, -clip.command.omega_z)
    return MotionClip(frames, cmd, clip.gait_mode)


def velocity_histogram(clips: list[MotionClip], bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Counts of commanded v_x over uniform bins spanning [0, v_max]."""
    if not clips:
        raise ValueError("empty clip list")
    if bins < 2:
        raise ValueError("need at least 2 bins")
    vx = np.array([c.command.v_x for c in clips])
    counts, edges = np.histogram(vx, bins=bins, range=(COMMAND_LOW[0], COMMAND_HIGH[0]))
    return counts, edges


class WeightedClipSampler:
    """Draws clips with probability inversely proportional to bin crowding."""

    def __init__(self, histogram: tuple[np.ndarray, np.ndarray], clips: list[MotionClip], rng: RngStream):
        counts, edges = histogram
        vx = np.array([c.command.v_x for c in clips])
        bin_idx = np.clip(np.digitize(vx, edges[1:-1]), 0, len(counts) - 1)
        weights = 1.0 / (counts[bin_idx] + 1.0)
        self.probabilities = weights / weights.sum()
        self.clips = clips
        self.rng = rng
        self._cum = np.cumsum(self.probabilities)

    def draw_index(self) -> int:
        u = self.rng.uniform(0.0, 1.0)
        return int(np.searchsorted(self._cum, u, side="right").clip(0, len(self.clips) - 1))

    def draw(self) -> MotionClip:
        return self.clips[self.draw_index()]


def weighted_sampler(
    histogram: tuple[np.ndarray, np.ndarray], clips: list[MotionClip], rng: RngStream
) -> WeightedClipSampler:
    return WeightedClipSampler(histogram, clips, rng)


@dataclass
class Normalizer:
    feature_mean: np.ndarray
    feature_std: np.ndarray
    command_min: np.ndarray
    command_max: np.ndarray

    def normalize_feature(self, feature: np.ndarray) -> np.ndarray:
        return (np.asarray(feature) - self.feature_mean) / self.feature_std

    def denormalize_feature(self, normalized: np.ndarray) -> np.ndarray:
        return np.asarray(normalized) * self.feature_std + self.feature_mean

    def normalize_command(self, command: np.ndarray) -> np.ndarray:
        return (np.asarray(command) - self.command_min) / (self.command_max - self.command_min)

    def denormalize_command(self, normalized: np.ndarray) -> np.ndarray:
        return np.asarray(normalized) * (self.command_max - self.command_min) + self.command_min

    def named_tensors(self, prefix: str = "normalizer.") -> list[tuple[str, np.ndarray]]:
        return [
            (prefix + "feature_mean", self.feature_mean),
            (prefix + "feature_std", self.feature_std),
            (prefix + "command_min", self.command_min),
            (prefix + "command_max", self.command_max),
        ]


def fit_normalizer(clips: list[MotionClip]) -> Normalizer:
    """Z-score statistics over all frames; command bounds are the fixed envelope.

    Command channels use the canonical min-max ranges rather than corpus
    extremes so the planar corpus (v_y = omega_z = 0 throughout) still maps
    every channel into [0, 1] without degenerate spans.
    """
    if len(clips) < 2:
        raise ValueError("need at least 2 clips to fit a normalizer")
    stacked = np.concatenate([c.frames for c in clips], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    if np.any(std < 1e-6):
        warnings.warn("zero-variance feature dimension; std clamped to 1e-6")
        std = np.maximum(std, 1e-6)
    return Normalizer(mean, std, COMMAND_LOW.copy(), COMMAND_HIGH.copy())


def inject_noise(normalized_feature: np.ndarray, sigma: float, rng: RngStream) -> np.ndarray:
    """Additive Gaussian noise on normalized features (commands stay clean)."""
    if sigma < 0.0:
        raise ValueError("sigma must be non-negative")
    x = np.asarray(normalized_feature, dtype=np.float64)
    if sigma == 0.0:
        return x.copy()
    return x + sigma * rng.gaussian(x.size).reshape(x.shape)


# ---------------------------------------------------------------------------
# Corpus generation and on-disk format


def _draw_command(params: DatasetConfig, rng: RngStream) -> Command:
    if rng.uniform(0.0, 1.0) < params.common_band_prob:
        vx = rng.uniform(params.common_band_low, params.common_band_high)
    else:
        vx = rng.uniform(0.0, params.v_max)
    return Command(float(vx), 0.0, 0.0)


def generate_dataset(config: RunConfig) -> list[MotionClip]:
    """The full corpus as a pure function of (config, seed).

    Each clip owns stream id (clip_index + 1) under the run seed, so
    generation order cannot perturb the result and mirrored copies double
    the corpus without touching the v_x distribution.
    """
    params = config.dataset
    clips = []
    for i in range(params.num_clips):
        rng = RngStream(config.seed, stream_id=i + 1)
        command = _draw_command(params, rng)
        duration = rng.uniform(params.duration_min_s, params.duration_max_s)
        clips.append(synthesize_gait(command, float(duration), params, rng))
    if params.mirror:
        clips.extend(mirror_clip(c) for c in list(clips))
    return clips


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def save_clip(clip: MotionClip, path):
    with open(path, "w") as fh:
        c = clip.command
        fh.write(
            f"{CLIP_MAGIC},J={NUM_JOINTS},hz=50,"
            f"vx={_fmt(c.v_x)},vy={_fmt(c.v_y)},wz={_fmt(c.omega_z)},mode={clip.gait_mode}\n"
        )
        for row in clip.frames:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def load_clip(path) -> MotionClip:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[0] != CLIP_MAGIC:
            raise ValueError(f"{path}: not a clip file")
        kv = dict(item.split("=", 1) for item in header[1:])
        if int(kv["J"]) != NUM_JOINTS:
            raise ValueError(f"{path}: unsupported joint count {kv['J']}")
        command = Command(float(kv["vx"]), float(kv["vy"]), float(kv["wz"]))
        frames = np.array(
            [[float(x) for x in line.strip().split(",")] for line in fh if line.strip()]
        )
    return MotionClip(frames, command, kv["mode"])


def write_dataset(clips: list[MotionClip], out_dir, config: RunConfig, version: str) -> Path:
    """Write clips plus a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, clip in enumerate(clips):
        name = f"clip_{i:04d}.csv"
        save_clip(clip, out / name)
        names.append(name)
    manifest = out / "manifest.txt"
    with open(manifest, "w") as fh:
        fh.write(provenance_header(config, version))
        for name in names:
            fh.write(name + "\n")
    return manifest


def load_dataset(dataset_dir) -> list[MotionClip]:
    root = Path(dataset_dir)
    manifest = root / "manifest.txt"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest at {manifest}")
    clips = []
    for line in manifest.read_text().splitlines():
        if line.startswith("#") or not line.strip():
            continue
        clips.append(load_clip(root / line.strip()))
    return clips
