"""
Kinematics simulator producing calibration datasets with known ground truth.

The robot is commanded in body twist ``(vx, vy, omega)``, held constant over
each sensor interval. A controller converts the command into wheel rates
using the *nominal* drive model; the robot then actually moves according to
the *deformed* wheels. Encoders count integer ticks of the true wheel angle,
and the exteroceptive sensor reports its own displacement between
consecutive events with additive Gaussian noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .dataset import DisplacementSample
from .errors import DimensionError, ValidationError
from .pose import Pose2D, conjugate_arr, normalize_angle, oplus_arr, relative_pose_arr

TWO_PI = 2.0 * math.pi


class DriveKind(str, Enum):
    DIFF_DRIVE = "diff_drive"
    MECANUM = "mecanum"


class CommandProfile(str, Enum):
    RANDOM_WALK = "random_walk"
    FIGURE_EIGHT = "figure_eight"
    SCRIPTED = "scripted"


_N_WHEELS = {DriveKind.DIFF_DRIVE: 2, DriveKind.MECANUM: 4}
_N_GEOMETRY = {DriveKind.DIFF_DRIVE: 1, DriveKind.MECANUM: 2}


@dataclass(frozen=True)
class DriveModel:
    """Parametric drive.

    Wheel order is (left, right) for a differential drive and
    (front-left, front-right, rear-left, rear-right) for mecanum.
    ``geometry`` is ``(half_axle,)`` or ``(half_length, half_width)``.
    """

    kind: DriveKind
    wheel_radii: tuple
    geometry: tuple
    ticks_per_rev: tuple

    def __post_init__(self):
        kind = DriveKind(self.kind)
        object.__setattr__(self, "kind", kind)
        radii = tuple(float(r) for r in np.atleast_1d(self.wheel_radii))
        geom = tuple(float(g) for g in np.atleast_1d(self.geometry))
        tpr = np.atleast_1d(self.ticks_per_rev)
        if len(tpr) == 1:
            tpr = np.repeat(tpr, len(radii))
        tpr = tuple(int(t) for t in tpr)
        m = _N_WHEELS[kind]
        if len(radii) != m or len(tpr) != m:
            raise DimensionError(f"{kind.value} needs {m} wheels, got radii={len(radii)} ticks_per_rev={len(tpr)}")
        if len(geom) != _N_GEOMETRY[kind]:
            raise DimensionError(f"{kind.value} needs {_N_GEOMETRY[kind]} geometry values, got {len(geom)}")
        if min(radii) <= 0 or min(geom) <= 0:
            raise ValidationError("wheel radii and geometry must be positive")
        if min(tpr) < 1:
            raise ValidationError("ticks_per_rev must be >= 1")
        object.__setattr__(self, "wheel_radii", radii)
        object.__setattr__(self, "geometry", geom)
        object.__setattr__(self, "ticks_per_rev", tpr)

    @property
    def m(self) -> int:
        return len(self.wheel_radii)

    @classmethod
    def diff_drive(cls, radius=0.05, half_axle=0.165, ticks_per_rev=3840) -> "DriveModel":
        return cls(DriveKind.DIFF_DRIVE, (radius, radius), (half_axle,), (ticks_per_rev,) * 2)

    @classmethod
    def mecanum(cls, radius=0.03, half_length=0.085, half_width=0.105, ticks_per_rev=4096) -> "DriveModel":
        return cls(DriveKind.MECANUM, (radius,) * 4, (half_length, half_width), (ticks_per_rev,) * 4)


@dataclass(frozen=True)
class Deformation:
    """Per-wheel departures from the nominal radius.

    effective radius = radius * scale * cos(tilt) * (1 + ripple * sin(wheel angle))
    """

    per_wheel_scale: tuple
    tilt_deg: tuple
    ripple_amp: tuple

    def __post_init__(self):
        sc = tuple(float(v) for v in np.atleast_1d(self.per_wheel_scale))
        ti = tuple(float(v) for v in np.atleast_1d(self.tilt_deg))
        ri = tuple(float(v) for v in np.atleast_1d(self.ripple_amp))
        if not len(sc) == len(ti) == len(ri):
            raise DimensionError("deformation fields must have one entry per wheel")
        if min(sc) <= 0:
            raise ValidationError("per_wheel_scale must be > 0")
        if min(ti) < 0 or max(ti) >= 90:
            raise ValidationError("tilt_deg must lie in [0, 90)")
        if min(ri) < 0 or max(ri) >= 1:
            raise ValidationError("ripple_amp must lie in [0, 1)")
        object.__setattr__(self, "per_wheel_scale", sc)
        object.__setattr__(self, "tilt_deg", ti)
        object.__setattr__(self, "ripple_amp", ri)

    @property
    def m(self) -> int:
        return len(self.per_wheel_scale)

    @classmethod
    def none(cls, m: int) -> "Deformation":
        return cls((1.0,) * m, (0.0,) * m, (0.0,) * m)


def effective_radii(model: DriveModel, deform: Deformation, wheel_angle) -> np.ndarray:
    if deform.m != model.m:
        raise DimensionError(f"deformation has {deform.m} wheels, model has {model.m}")
    wheel_angle = np.broadcast_to(np.asarray(wheel_angle, dtype=float), (model.m,))
    return (np.asarray(model.wheel_radii)
            * np.asarray(deform.per_wheel_scale)
            * np.cos(np.radians(deform.tilt_deg))
            * (1.0 + np.asarray(deform.ripple_amp) * np.sin(wheel_angle)))


def apply_deformation(model: DriveModel, deform: Deformation, wheel_angle) -> DriveModel:
    """Return ``model`` with its radii replaced by the deformed effective radii."""
    return replace(model, wheel_radii=tuple(effective_radii(model, deform, wheel_angle)))


# -- forward kinematics ---------------------------------------------------

def twist_to_pose(vx: float, vy: float, w: float) -> np.ndarray:
    """Relative pose reached by holding body twist ``(vx, vy, w)`` for unit time."""
    if abs(w) < 1e-9:
        return np.array([vx, vy, w])
    s, c = math.sin(w), math.cos(w)
    return np.array([(vx * s - vy * (1.0 - c)) / w,
                     (vx * (1.0 - c) + vy * s) / w,
                     normalize_angle(w)])


def ticks_to_arcs(ticks, model: DriveModel) -> np.ndarray:
    ticks = np.asarray(ticks, dtype=float)
    if ticks.shape != (model.m,):
        raise DimensionError(f"{model.kind.value} expects {model.m} ticks, got shape {ticks.shape}")
    return TWO_PI * np.asarray(model.wheel_radii) * ticks / np.asarray(model.ticks_per_rev)


def _diff_from_arcs(arcs, half_axle: float) -> np.ndarray:
    s_l, s_r = float(arcs[0]), float(arcs[1])
    dth = (s_r - s_l) / (2.0 * half_axle)
    if abs(dth) < 1e-9:
        return np.array([0.5 * (s_l + s_r), 0.0, dth])
    R = (s_l + s_r) / (2.0 * dth)
    return np.array([R * math.sin(dth), R * (1.0 - math.cos(dth)), normalize_angle(dth)])


def mecanum_jacobian(half_length: float, half_width: float) -> np.ndarray:
    """Maps body twist ``(vx, vy, w)`` to wheel rim speeds (45 degree rollers)."""
    L = half_length + half_width
    return np.array([[1.0, -1.0, -L],
                     [1.0, 1.0, L],
                     [1.0, 1.0, -L],
                     [1.0, -1.0, L]])


def _mecanum_from_arcs(arcs, geometry) -> np.ndarray:
    J = mecanum_jacobian(*geometry)
    vx, vy, w = np.linalg.pinv(J) @ np.asarray(arcs, dtype=float)
    return twist_to_pose(vx, vy, w)


def _forward_arcs(arcs, model: DriveModel) -> np.ndarray:
    if model.kind is DriveKind.DIFF_DRIVE:
        return _diff_from_arcs(arcs, model.geometry[0])
    return _mecanum_from_arcs(arcs, model.geometry)


def diff_drive_forward(ticks, model: DriveModel) -> Pose2D:
    """Exact-arc differential-drive odometry for one interval."""
    if model.kind is not DriveKind.DIFF_DRIVE:
        raise ValidationError("diff_drive_forward needs a diff_drive model")
    return Pose2D.from_array(_diff_from_arcs(ticks_to_arcs(ticks, model), model.geometry[0]))


def mecanum_forward(ticks, model: DriveModel) -> Pose2D:
    """Mecanum odometry: least-squares body twist, integrated as a constant twist."""
    if model.kind is not DriveKind.MECANUM:
        raise ValidationError("mecanum_forward needs a mecanum model")
    return Pose2D.from_array(_mecanum_from_arcs(ticks_to_arcs(ticks, model), model.geometry))


def robot_forward(ticks, model: DriveModel) -> Pose2D:
    if model.kind is DriveKind.DIFF_DRIVE:
        return diff_drive_forward(ticks, model)
    return mecanum_forward(ticks, model)


def sensor_forward(ticks, model: DriveModel, sensor_pose: Pose2D) -> Pose2D:
    """Parametric sensor motion model: (-l) + f_r(ticks) + l."""
    q = robot_forward(ticks, model).as_array()
    return Pose2D.from_array(conjugate_arr(q, sensor_pose.as_array()))


def sensor_forward_batch(ticks, model: DriveModel, sensor_pose: Pose2D) -> np.ndarray:
    ticks = np.asarray(ticks, dtype=float).reshape(-1, model.m)
    q = np.array([_forward_arcs(ticks_to_arcs(t, model), model) for t in ticks]).reshape(-1, 3)
    return conjugate_arr(q, sensor_pose.as_array())


def wheel_rates(twist, model: DriveModel) -> np.ndarray:
    """Inverse kinematics: wheel angular rates (rad/s) that realise ``twist``."""
    vx, vy, w = twist
    r = np.asarray(model.wheel_radii)
    if model.kind is DriveKind.DIFF_DRIVE:
        b = model.geometry[0]
        return np.array([vx - w * b, vx + w * b]) / r
    return mecanum_jacobian(*model.geometry) @ np.array([vx, vy, w]) / r


# -- simulation ------------------------------------------------------------

_DEFAULT_T = {DriveKind.DIFF_DRIVE: 0.3, DriveKind.MECANUM: 0.6}
# Limits chosen so one interval stays within ~15 cm and ~8 degrees.
_DEFAULT_SPEED = {DriveKind.DIFF_DRIVE: 0.4, DriveKind.MECANUM: 0.22}
_DEFAULT_TURN = {DriveKind.DIFF_DRIVE: 0.45, DriveKind.MECANUM: 0.23}


@dataclass(frozen=True)
class SimConfig:
    drive: DriveModel = field(default_factory=DriveModel.diff_drive)
    deform: Optional[Deformation] = None
    sensor_pose: Pose2D = Pose2D(0.0, 0.0, 0.0)
    interval_T: Optional[float] = None
    duration: float = 60.0
    command_profile: CommandProfile = CommandProfile.RANDOM_WALK
    noise_sigma: tuple = (0.002, 0.002, math.radians(0.2))
    seed: int = 0
    substeps: int = 20
    odom_per_interval: int = 10
    max_speed: Optional[float] = None
    max_turn_rate: Optional[float] = None
    figure_eight_size: float = 2.0
    cruise_fraction: float = 0.6
    script: Optional[tuple] = None

    def __post_init__(self):
        kind = self.drive.kind
        set_ = lambda k, v: object.__setattr__(self, k, v)
        if self.deform is None:
            set_("deform", Deformation.none(self.drive.m))
        if self.interval_T is None:
            set_("interval_T", _DEFAULT_T[kind])
        if self.max_speed is None:
            set_("max_speed", _DEFAULT_SPEED[kind])
        if self.max_turn_rate is None:
            set_("max_turn_rate", _DEFAULT_TURN[kind])
        set_("command_profile", CommandProfile(self.command_profile))
        set_("noise_sigma", tuple(float(v) for v in self.noise_sigma))
        if self.deform.m != self.drive.m:
            raise DimensionError(f"deformation has {self.deform.m} wheels, drive has {self.drive.m}")
        if not self.interval_T > 0:
            raise ValidationError("interval_T must be positive")
        if self.duration < self.interval_T:
            raise ValidationError("duration shorter than interval")
        if len(self.noise_sigma) != 3 or min(self.noise_sigma) < 0:
            raise ValidationError("noise_sigma must be three non-negative values")
        if self.substeps < 20:
            raise ValidationError("substeps must be at least 20")
        if self.odom_per_interval < 1 or self.substeps % self.odom_per_interval:
            raise ValidationError("odom_per_interval must divide substeps")
        if self.command_profile is CommandProfile.SCRIPTED and not self.script:
            raise ValidationError("scripted profile needs a script of (vx, vy, w) commands")

    @property
    def n_events(self) -> int:
        return int(math.floor(self.duration / self.interval_T + 1e-9))

    @property
    def noise_cov(self) -> np.ndarray:
        return np.diag(np.square(self.noise_sigma))


@dataclass(eq=False)
class SimResult:
    """Ground truth and measurements from one simulated run.

    ``robot_poses`` and ``sensor_poses`` are sampled at ``event_times``.
    ``odom_counters`` are cumulative integer encoder counts at ``odom_times``.
    ``true_ticks`` holds the unquantized (fractional) tick increments per edge.
    """

    config: SimConfig
    event_times: np.ndarray
    robot_poses: np.ndarray
    sensor_poses: np.ndarray
    odom_times: np.ndarray
    odom_counters: np.ndarray
    true_ticks: np.ndarray
    dataset: list

    @property
    def ground_truth(self) -> list:
        return [Pose2D(*p) for p in self.robot_poses]

    def path_length(self) -> float:
        return float(np.sum(np.hypot(*np.diff(self.robot_poses[:, :2], axis=0).T)))

    def __iter__(self):
        return iter((self.ground_truth, self.dataset))


def _random_walk(rng: np.random.Generator, n: int, cfg: SimConfig) -> np.ndarray:
    vmax, wmax = cfg.max_speed, cfg.max_turn_rate
    mecanum = cfg.drive.kind is DriveKind.MECANUM
    lo = np.array([-1.0 if mecanum else 0.15, -1.0, -1.0])
    hi = np.ones(3)
    target = np.array([0.0 if mecanum else cfg.cruise_fraction, 0.0, 0.0])
    u = target.copy()
    out = np.empty((n, 3))
    for k in range(n):
        u = u + 0.1 * (target - u) + rng.normal(0.0, 0.25, 3)
        u = np.clip(u, lo, hi)
        out[k] = u
    if not mecanum:
        out[:, 1] = 0.0
    return out * np.array([vmax, vmax, wmax])


def _figure_eight(n: int, cfg: SimConfig) -> np.ndarray:
    # Gerono lemniscate (A sin p, A/2 sin 2p) followed tangentially, starting at the crossing.
    A = cfg.figure_eight_size
    w0 = min(cfg.max_speed / (A * math.sqrt(2.0)), cfg.max_turn_rate)
    t = (np.arange(n) + 0.5) * cfg.interval_T
    p = w0 * t
    dx, dy = A * w0 * np.cos(p), A * w0 * np.cos(2 * p)
    ddx, ddy = -A * w0 ** 2 * np.sin(p), -2 * A * w0 ** 2 * np.sin(2 * p)
    speed2 = dx ** 2 + dy ** 2
    omega = (dx * ddy - dy * ddx) / speed2
    return np.column_stack([np.sqrt(speed2), np.zeros(n), omega])


def _scripted(n: int, cfg: SimConfig) -> np.ndarray:
    script = np.asarray(cfg.script, dtype=float).reshape(-1, 3)
    idx = np.minimum(np.arange(n), len(script) - 1)
    return script[idx]


def command_sequence(cfg: SimConfig, rng: np.random.Generator) -> np.ndarray:
    n = max(cfg.n_events - 1, 0)
    if cfg.command_profile is CommandProfile.RANDOM_WALK:
        return _random_walk(rng, n, cfg)
    if cfg.command_profile is CommandProfile.FIGURE_EIGHT:
        return _figure_eight(n, cfg)
    return _scripted(n, cfg)


def simulate(cfg: SimConfig) -> SimResult:
    """Run the simulator; identical configs give bit-identical results."""
    drive, deform = cfg.drive, cfg.deform
    m, T, S = drive.m, cfg.interval_T, cfg.substeps
    n_events = cfg.n_events
    n_int = n_events - 1
    dt = T / S
    odom_every = S // cfg.odom_per_interval
    tpr = np.asarray(drive.ticks_per_rev, dtype=float)

    cmd_seq, noise_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    commands = command_sequence(cfg, np.random.default_rng(cmd_seq))
    noise_rng = np.random.default_rng(noise_seq)

    angle = np.zeros(m)
    pose = np.zeros(3)
    robot = np.zeros((n_events, 3))
    angles_at_event = np.zeros((n_events, m))
    n_odom = n_int * cfg.odom_per_interval + 1
    odom_angles = np.zeros((n_odom, m))
    o = 1
    for k in range(n_int):
        rates = wheel_rates(commands[k], drive)
        dphi = rates * dt
        for sub in range(S):
            radii = effective_radii(drive, deform, angle + 0.5 * dphi)
            step = _forward_arcs(radii * dphi, drive)
            pose = oplus_arr(pose, step)
            angle = angle + dphi
            if (sub + 1) % odom_every == 0:
                odom_angles[o] = angle
                o += 1
        robot[k + 1] = pose
        angles_at_event[k + 1] = angle

    # accumulate-then-floor: counters never lose fractional ticks across intervals
    odom_counters = np.floor(odom_angles * tpr / TWO_PI + 1e-9).astype(np.int64)
    event_counters = odom_counters[::cfg.odom_per_interval]
    true_ticks = np.diff(angles_at_event * tpr / TWO_PI, axis=0)
    event_times = np.arange(n_events) * T
    odom_times = np.arange(n_odom) * (T / cfg.odom_per_interval)

    sensor = np.asarray(cfg.sensor_pose.as_array())
    sensor_poses = oplus_arr(robot, sensor)
    q_rel = relative_pose_arr(robot[:-1], robot[1:])
    s_true = conjugate_arr(q_rel, sensor).reshape(-1, 3)
    noise = noise_rng.normal(0.0, 1.0, (n_int, 3)) * np.asarray(cfg.noise_sigma)
    s_meas = s_true + noise
    s_meas[:, 2] = normalize_angle(s_meas[:, 2])
    cov = cfg.noise_cov
    ticks = np.diff(event_counters, axis=0)
    dataset = [
        DisplacementSample(float(event_times[k]), float(event_times[k + 1]),
                           tuple(int(v) for v in ticks[k]), Pose2D(*s_meas[k]), cov)
        for k in range(n_int)
    ]
    return SimResult(cfg, event_times, robot, sensor_poses, odom_times,
                     odom_counters, true_ticks, dataset)


def nominal_sensor_predictions(samples: Sequence[DisplacementSample], model: DriveModel,
                               sensor_pose: Pose2D) -> np.ndarray:
    """Predict sensor displacements with the undeformed parametric model."""
    ticks = np.array([s.ticks for s in samples], dtype=float)
    return sensor_forward_batch(ticks, model, sensor_pose)
