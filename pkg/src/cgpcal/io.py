"""
File formats: dataset / odometry / trajectory CSVs, model files and INI configs.

CSV files have a header row, fixed column order and '.' decimals. Floats are
written with ``repr`` so that a read followed by a write reproduces the file
byte for byte.
"""
from __future__ import annotations

import configparser
import csv
import io as _io
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import gp
from .dataset import DisplacementSample, check_covariance
from .errors import DimensionError, ValidationError
from .linear import LinearModel
from .pipeline import CalibrationRun, ModelKind
from .pose import Pose2D
from .sim import (CommandProfile, Deformation, DriveKind, DriveModel, SimConfig, SimResult)

FORMAT_NAME = "cgpcal-model"
FORMAT_VERSION = 1


def fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_rows(path, header, rows) -> int:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    n = 0
    for r in rows:
        w.writerow([fmt(v) for v in r])
        n += 1
    Path(path).write_text(buf.getvalue())
    return n


def _read_rows(path, expected_prefix: Optional[Sequence[str]] = None):
    text = Path(path).read_text()
    rows = list(csv.reader(_io.StringIO(text)))
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header = rows[0]
    if expected_prefix and header[:len(expected_prefix)] != list(expected_prefix):
        raise ValidationError(f"{path}: unexpected header {header}")
    body = []
    for lineno, r in enumerate(rows[1:], start=2):
        if not r:
            continue
        if len(r) != len(header):
            raise ValidationError(f"{path}: row {lineno - 1} (line {lineno}) has {len(r)} fields, expected {len(header)}")
        body.append((lineno, r))
    return header, body


def _num(path, lineno, s):
    try:
        return float(s)
    except ValueError:
        raise ValidationError(f"{path}: row {lineno - 1} (line {lineno}): not a number: {s!r}") from None


def _tick(path, lineno, s):
    try:
        return int(s)
    except ValueError:
        v = _num(path, lineno, s)
        return v


# -- datasets ---------------------------------------------------------------------

def dataset_header(m: int) -> list:
    return (["t_j", "t_k"] + [f"tick_{i + 1}" for i in range(m)] + ["sx", "sy", "stheta"]
            + [f"cov_{r + 1}{c + 1}" for r in range(3) for c in range(3)])


def write_dataset(path, samples: Sequence[DisplacementSample]) -> int:
    m = samples[0].m if samples else 0
    rows = ([s.t_j, s.t_k, *s.ticks, s.s_hat.x, s.s_hat.y, s.s_hat.theta, *s.sigma.reshape(-1)]
            for s in samples)
    return _write_rows(path, dataset_header(m), rows)


def read_dataset(path) -> list:
    header, body = _read_rows(path, ["t_j", "t_k"])
    m = len(header) - 2 - 3 - 9
    if m < 1 or header != dataset_header(m):
        raise ValidationError(f"{path}: header does not match the dataset layout")
    out = []
    for lineno, r in body:
        t_j, t_k = _num(path, lineno, r[0]), _num(path, lineno, r[1])
        ticks = tuple(_tick(path, lineno, v) for v in r[2:2 + m])
        s = [_num(path, lineno, v) for v in r[2 + m:5 + m]]
        cov = np.array([_num(path, lineno, v) for v in r[5 + m:]]).reshape(3, 3)
        try:
            check_covariance(cov)
            out.append(DisplacementSample(t_j, t_k, ticks, Pose2D(*s), cov))
        except (ValidationError, ValueError) as exc:
            raise ValidationError(f"{path}: row {lineno - 1} (line {lineno}): {exc}") from None
    return out


# -- odometry and trajectories -----------------------------------------------------

def write_odometry(path, times, counters) -> int:
    counters = np.asarray(counters)
    header = ["t"] + [f"counter_{i + 1}" for i in range(counters.shape[1])]
    return _write_rows(path, header, ([t, *c] for t, c in zip(times, counters.tolist())))


def read_odometry(path):
    header, body = _read_rows(path, ["t"])
    times = np.array([_num(path, ln, r[0]) for ln, r in body])
    counters = np.array([[_tick(path, ln, v) for v in r[1:]] for ln, r in body], dtype=np.int64)
    return times, counters.reshape(len(body), len(header) - 1)


TRAJ_HEADER = ["t", "x", "y", "theta"]


def write_trajectory(path, times, poses) -> int:
    poses = np.asarray(poses, dtype=float).reshape(-1, 3)
    return _write_rows(path, TRAJ_HEADER, ([t, *p] for t, p in zip(times, poses)))


def read_trajectory(path):
    header, body = _read_rows(path, TRAJ_HEADER)
    times = np.array([_num(path, ln, r[0]) for ln, r in body])
    poses = np.array([[_num(path, ln, v) for v in r[1:4]] for ln, r in body]).reshape(-1, 3)
    return times, poses


TRUTH_HEADER = ["t", "robot_x", "robot_y", "robot_theta", "sensor_x", "sensor_y", "sensor_theta"]


def write_truth(path, times, robot, sensor) -> int:
    return _write_rows(path, TRUTH_HEADER, ([t, *r, *s] for t, r, s in zip(times, robot, sensor)))


def read_truth(path):
    header, body = _read_rows(path, TRUTH_HEADER)
    arr = np.array([[_num(path, ln, v) for v in r] for ln, r in body]).reshape(-1, 7)
    return arr[:, 0], arr[:, 1:4], arr[:, 4:7]


def write_simulation(out_dir, result: SimResult) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return {
        "truth.csv": write_truth(out / "truth.csv", result.event_times, result.robot_poses, result.sensor_poses),
        "odometry.csv": write_odometry(out / "odometry.csv", result.odom_times, result.odom_counters),
        "dataset.csv": write_dataset(out / "dataset.csv", result.dataset),
    }


# -- models --------------------------------------------------------------------------

def _floats(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def model_to_dict(run: CalibrationRun) -> dict:
    d = {"format": FORMAT_NAME, "format_version": FORMAT_VERSION, "kind": run.model_kind.value,
         "m": run.m, "train_id": run.train_id, "config": run.config}
    model = run.model
    if run.model_kind is ModelKind.LINEAR_HUBER:
        d["huber_c"] = float(model.huber_c)
        d["W"] = _floats(model.W)
        return d
    d["mean"] = {"kind": model.mean.kind.value,
                 "C": None if model.mean.C is None else _floats(model.mean.C)}
    k = model.kernel
    d["kernel"] = {"kind": k.kind.value,
                   "sigma": None if k.sigma is None else _floats(k.sigma),
                   "B_diag": None if k.B_diag is None else _floats(k.B_diag)}
    d["training_inputs"] = _floats(model.X)
    d["noise_var"] = _floats(model.noise_var)
    d["alpha"] = _floats(model.alpha)
    d["jitter"] = _floats(model.jitter)
    d["log_marginal_likelihood"] = float(model.lml)
    return d


def model_from_dict(d: dict) -> CalibrationRun:
    if d.get("format") != FORMAT_NAME:
        raise ValidationError("not a cgpcal model file")
    if d.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported model format version {d.get('format_version')}")
    kind = ModelKind(d["kind"])
    if kind is ModelKind.LINEAR_HUBER:
        model = LinearModel(np.array(d["W"]), d["huber_c"])
    else:
        mean = gp.MeanSpec(d["mean"]["kind"], None if d["mean"]["C"] is None else np.array(d["mean"]["C"]))
        kd = d["kernel"]
        kernel = gp.KernelSpec(kd["kind"], kd["sigma"], kd["B_diag"])
        X = np.array(d["training_inputs"], dtype=float).reshape(-1, d["m"])
        noise = np.array(d["noise_var"], dtype=float).reshape(-1, 3)
        alpha = np.array(d["alpha"], dtype=float).reshape(3, -1)
        jit = np.array(d["jitter"], dtype=float)
        factors = []
        for i in range(3):
            A = gp.kernel_matrix(kernel, X, X, i) + np.diag(noise[:, i]) + jit[i] * np.eye(len(X))
            factors.append(gp.factor_psd(A)[0])
        model = gp.GpModel(mean, kernel, X, noise, alpha, factors, jit, d["log_marginal_likelihood"])
    if model.m != d["m"]:
        raise DimensionError("model tick dimension does not match its header")
    return CalibrationRun(kind, model, d.get("train_id", ""), d.get("config", {}))


def dumps_model(run: CalibrationRun) -> str:
    return json.dumps(model_to_dict(run), indent=1, sort_keys=True) + "\n"


def save_model(path, run: CalibrationRun) -> None:
    Path(path).write_text(dumps_model(run))


def load_model(path) -> CalibrationRun:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from None
    return model_from_dict(d)


def write_kv(path, items: dict) -> None:
    lines = []
    for k, v in items.items():
        if isinstance(v, (list, tuple, np.ndarray)):
            v = json.dumps(_floats(v) if not isinstance(v, list) else v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{k} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")


# -- configuration ---------------------------------------------------------------

def _floats_opt(s: str):
    s = s.strip()
    if not s:
        return None
    return tuple(float(v) for v in s.replace(",", " ").split())


def _float_opt(s: str):
    s = s.strip()
    return None if not s else float(s)


def _str(s: str) -> str:
    return s.strip()


CONFIG_SCHEMA = {
    "simulation": {
        "drive": (_str, "diff_drive"),
        "wheel_radii": (_floats_opt, ""),
        "geometry": (_floats_opt, ""),
        "ticks_per_rev": (_floats_opt, ""),
        "wheel_scale": (_floats_opt, ""),
        "tilt_deg": (_floats_opt, ""),
        "ripple_amp": (_floats_opt, ""),
        "sensor_pose": (_floats_opt, "0, 0, 0"),
        "interval_T": (_float_opt, ""),
        "duration": (float, "60"),
        "command_profile": (_str, "random_walk"),
        "noise_sigma": (_floats_opt, "0.002, 0.002, 0.003490658503988659"),
        "seed": (int, "0"),
        "substeps": (int, "20"),
        "odom_per_interval": (int, "10"),
        "max_speed": (_float_opt, ""),
        "max_turn_rate": (_float_opt, ""),
        "figure_eight_size": (float, "2.0"),
        "cruise_fraction": (float, "0.6"),
    },
    "calibration": {
        "model_kind": (_str, "linear_huber"),
        "huber_c": (float, "1.345"),
        "edge_stride": (int, "1"),
        "seed": (int, "0"),
        "n_starts": (int, "8"),
        "max_iter": (int, "150"),
        "max_fit_points": (int, "300"),
    },
    "evaluation": {
        "out_dir": (_str, "out"),
        "align_tolerance": (_float_opt, ""),
    },
}


class ConfigError(ValidationError):
    pass


@dataclass
class Config:
    simulation: dict = field(default_factory=dict)
    calibration: dict = field(default_factory=dict)
    evaluation: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        return getattr(self, name)


def _line_of(lines, section, key=None) -> int:
    cur = None
    for no, line in enumerate(lines, start=1):
        s = line.strip()
        m = re.match(r"^\[(.+)\]$", s)
        if m:
            cur = m.group(1).strip()
            if key is None and cur == section:
                return no
            continue
        if key is not None and cur == section:
            km = re.match(r"^([^=:#;]+)[=:]", s)
            if km and km.group(1).strip().lower() == key.lower():
                return no
    return 0


def default_config() -> Config:
    cfg = Config()
    for sec, keys in CONFIG_SCHEMA.items():
        for k, (conv, default) in keys.items():
            cfg.section(sec)[k] = conv(default)
    return cfg


def parse_config(text: str, source: str = "<config>") -> Config:
    """Parse INI text; unknown sections/keys and bad values raise ConfigError with the line."""
    lines = text.splitlines()
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    cfg = default_config()
    lower = {sec: {k.lower(): k for k in keys} for sec, keys in CONFIG_SCHEMA.items()}
    for sec in cp.sections():
        if sec not in CONFIG_SCHEMA:
            raise ConfigError(f"{source}:{_line_of(lines, sec)}: unknown section [{sec}]")
        for key, raw in cp.items(sec):
            canon = lower[sec].get(key.lower())
            if canon is None:
                raise ConfigError(f"{source}:{_line_of(lines, sec, key)}: unknown key '{key}' in [{sec}]")
            conv = CONFIG_SCHEMA[sec][canon][0]
            try:
                cfg.section(sec)[canon] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{source}:{_line_of(lines, sec, key)}: bad value for '{key}': {exc}") from None
    return cfg


def load_config(path) -> Config:
    return parse_config(Path(path).read_text(), str(path))


def dumps_config(cfg: Config) -> str:
    out = []
    for sec, keys in CONFIG_SCHEMA.items():
        out.append(f"[{sec}]")
        for k in keys:
            v = cfg.section(sec)[k]
            if v is None:
                v = ""
            elif isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            out.append(f"{k} = {v}".rstrip())
        out.append("")
    return "\n".join(out)


def sim_config_from(cfg: Config, source: str = "<config>") -> SimConfig:
    """Build a SimConfig from the [simulation] section."""
    s = cfg.simulation
    try:
        kind = DriveKind(s["drive"])
        base = DriveModel.diff_drive() if kind is DriveKind.DIFF_DRIVE else DriveModel.mecanum()
        drive = DriveModel(kind,
                           s["wheel_radii"] or base.wheel_radii,
                           s["geometry"] or base.geometry,
                           tuple(int(v) for v in s["ticks_per_rev"]) if s["ticks_per_rev"] else base.ticks_per_rev)
        m = drive.m
        none = Deformation.none(m)
        deform = Deformation(s["wheel_scale"] or none.per_wheel_scale,
                             s["tilt_deg"] or none.tilt_deg,
                             s["ripple_amp"] or none.ripple_amp)
        sensor = s["sensor_pose"] or (0.0, 0.0, 0.0)
        if len(sensor) != 3:
            raise ValidationError("sensor_pose needs three values")
        return SimConfig(drive=drive, deform=deform, sensor_pose=Pose2D(*sensor),
                         interval_T=s["interval_T"], duration=s["duration"],
                         command_profile=CommandProfile(s["command_profile"]),
                         noise_sigma=s["noise_sigma"], seed=s["seed"], substeps=s["substeps"],
                         odom_per_interval=s["odom_per_interval"], max_speed=s["max_speed"],
                         max_turn_rate=s["max_turn_rate"], figure_eight_size=s["figure_eight_size"],
                         cruise_fraction=s["cruise_fraction"])
    except ValueError as exc:
        raise ConfigError(f"{source}: [simulation]: {exc}") from None
