"""Edge samples: wheel-tick increments paired with a measured sensor displacement."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError, InsufficientDataError, ValidationError
from .pose import Pose2D, normalize_angle


@dataclass(frozen=True, eq=False)
class DisplacementSample:
    """One edge ``(t_j, t_k)``.

    ``ticks`` are the encoder increments over ``[t_j, t_k)``, ``s_hat`` the
    measured sensor displacement and ``sigma`` its 3x3 noise covariance.
    """

    t_j: float
    t_k: float
    ticks: tuple
    s_hat: Pose2D
    sigma: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        if not self.t_k > self.t_j:
            raise ValidationError(f"edge times must satisfy t_k > t_j, got ({self.t_j}, {self.t_k})")
        sig = np.asarray(self.sigma, dtype=float)
        if sig.shape != (3, 3):
            raise DimensionError(f"covariance must be 3x3, got shape {sig.shape}")
        check_covariance(sig)
        sig = sig.copy()
        sig.setflags(write=False)
        object.__setattr__(self, "sigma", sig)
        object.__setattr__(self, "ticks", tuple(self.ticks))

    @property
    def m(self) -> int:
        return len(self.ticks)


def check_covariance(sig: np.ndarray, tol: float = 1e-12) -> None:
    if not np.all(np.isfinite(sig)):
        raise ValidationError("covariance has non-finite entries")
    if np.any(np.diag(sig) < 0):
        raise ValidationError("covariance has a negative variance")
    if not np.allclose(sig, sig.T, rtol=0, atol=tol * max(1.0, np.abs(sig).max())):
        raise ValidationError("covariance is not symmetric")
    lam = np.linalg.eigvalsh(sig)
    if lam.min() < -tol * max(1.0, lam.max()):
        raise ValidationError("covariance is not positive semidefinite")


def stack_samples(samples: Sequence[DisplacementSample]):
    """Stack samples into ``(ticks (n, m), targets (n, 3), covs (n, 3, 3))``.

    Angle targets are normalized to (-pi, pi].
    """
    if len(samples) == 0:
        raise InsufficientDataError("dataset is empty")
    m = samples[0].m
    for i, s in enumerate(samples):
        if s.m != m:
            raise DimensionError(f"sample {i} has {s.m} ticks, expected {m}")
    D = np.array([s.ticks for s in samples], dtype=float).reshape(len(samples), m)
    S = np.array([[s.s_hat.x, s.s_hat.y, s.s_hat.theta] for s in samples])
    S[:, 2] = normalize_angle(S[:, 2])
    covs = np.stack([s.sigma for s in samples])
    return D, S, covs


def tick_dim(samples: Sequence[DisplacementSample]) -> int:
    if len(samples) == 0:
        raise InsufficientDataError("dataset is empty")
    return samples[0].m
