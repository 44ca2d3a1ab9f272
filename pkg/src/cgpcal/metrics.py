"""Relative pose error and absolute trajectory error for planar trajectories."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, InsufficientDataError
from .pose import Pose2D, ominus_arr, oplus_arr, poses_to_array, relative_pose_arr


def _as_traj(poses) -> np.ndarray:
    if len(poses) and isinstance(poses[0], Pose2D):
        return poses_to_array(poses)
    return np.asarray(poses, dtype=float).reshape(-1, 3)


@dataclass
class TrajectoryPair:
    """Time-aligned estimated and reference poses, both shape (n, 3)."""

    estimated: np.ndarray
    reference: np.ndarray
    times: Optional[np.ndarray] = None

    def __post_init__(self):
        self.estimated = _as_traj(self.estimated)
        self.reference = _as_traj(self.reference)
        if self.estimated.shape != self.reference.shape:
            raise DimensionError(
                f"trajectory lengths differ: {len(self.estimated)} vs {len(self.reference)}")

    def __len__(self):
        return len(self.estimated)


def align_by_time(est_times, estimated, ref_times, reference, tol: float) -> TrajectoryPair:
    """Match each estimated pose to the nearest reference timestamp within ``tol``.

    Unmatched estimated poses are dropped; a reference pose is used at most once.
    """
    est_times = np.asarray(est_times, dtype=float)
    ref_times = np.asarray(ref_times, dtype=float)
    est, ref = _as_traj(estimated), _as_traj(reference)
    if len(est_times) != len(est) or len(ref_times) != len(ref):
        raise DimensionError("timestamps and poses differ in length")
    keep_e, keep_r, used = [], [], set()
    for k, t in enumerate(est_times):
        i = int(np.searchsorted(ref_times, t))
        cands = [j for j in (i - 1, i) if 0 <= j < len(ref_times)]
        if not cands:
            continue
        j = min(cands, key=lambda j: (abs(ref_times[j] - t), j))
        if abs(ref_times[j] - t) <= tol and j not in used:
            used.add(j)
            keep_e.append(k)
            keep_r.append(j)
    return TrajectoryPair(est[keep_e], ref[keep_r], est_times[keep_e])


def rpe_terms(pair: TrajectoryPair) -> np.ndarray:
    """Per-step relative errors ``-(-est_k + est_k+1) + (-ref_k + ref_k+1)``, shape (n-1, 3)."""
    d_est = relative_pose_arr(pair.estimated[:-1], pair.estimated[1:])
    d_ref = relative_pose_arr(pair.reference[:-1], pair.reference[1:])
    return oplus_arr(ominus_arr(d_est), d_ref)


def ate_terms(pair: TrajectoryPair) -> np.ndarray:
    return oplus_arr(ominus_arr(pair.estimated), pair.reference)


def rpe(pair: TrajectoryPair) -> float:
    """Root mean square translational relative pose error (meters)."""
    if len(pair) < 2:
        raise InsufficientDataError("RPE needs at least two poses")
    e = rpe_terms(pair)
    return float(np.sqrt(np.mean(np.sum(e[:, :2] ** 2, axis=1))))


def ate(pair: TrajectoryPair) -> float:
    """Root mean square translational absolute trajectory error (meters)."""
    if len(pair) < 1:
        raise InsufficientDataError("ATE needs at least one pose")
    e = ate_terms(pair)
    return float(np.sqrt(np.mean(np.sum(e[:, :2] ** 2, axis=1))))


def rotational_errors(pair: TrajectoryPair) -> dict:
    """Diagnostic RMS heading errors (radians); not part of RPE/ATE."""
    out = {"ate_rot": float(np.sqrt(np.mean(ate_terms(pair)[:, 2] ** 2)))}
    if len(pair) >= 2:
        out["rpe_rot"] = float(np.sqrt(np.mean(rpe_terms(pair)[:, 2] ** 2)))
    return out


def evaluate(pair: TrajectoryPair) -> dict:
    """ATE in meters, RPE in millimeters, plus rotational diagnostics."""
    out = {"n_poses": len(pair), "ate_m": ate(pair), "rpe_mm": rpe(pair) * 1e3}
    out.update(rotational_errors(pair))
    return out
