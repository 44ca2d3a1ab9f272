"""
Approximate linear sensor motion model ``s = W d`` fitted by Huber regression.

Residuals are standardized per sample and axis by the square root of the
matching diagonal entry of the sample covariance. Each output row is an
independent convex problem solved by iteratively reweighted least squares.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import stack_samples
from .errors import DimensionError, InsufficientDataError, RankDeficientError, ValidationError

DEFAULT_HUBER_C = 1.345


def huber_loss(r, c: float = DEFAULT_HUBER_C):
    """Huber loss; works elementwise on arrays."""
    if not c > 0:
        raise ValidationError("Huber threshold must be positive")
    a = np.abs(r)
    out = np.where(a <= c, 0.5 * np.square(r), c * (a - 0.5 * c))
    return float(out) if np.ndim(out) == 0 else out


def huber_psi(r, c: float):
    return np.clip(r, -c, c)


@dataclass
class RowReport:
    iterations: int
    objective: float
    objective_trace: list
    outliers: int
    grad_norm: float
    converged: bool


@dataclass(frozen=True, eq=False)
class LinearModel:
    W: np.ndarray
    huber_c: float = DEFAULT_HUBER_C
    reports: tuple = field(default=(), compare=False)

    def __post_init__(self):
        W = np.atleast_2d(np.array(self.W, dtype=float))
        if W.shape[0] != 3:
            raise DimensionError(f"W must be 3 x m, got {W.shape}")
        if not np.all(np.isfinite(W)):
            raise ValidationError("W has non-finite entries")
        if not self.huber_c > 0:
            raise ValidationError("huber_c must be positive")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)

    @property
    def m(self) -> int:
        return self.W.shape[1]

    @property
    def iterations(self) -> int:
        return max((r.iterations for r in self.reports), default=0)

    @property
    def objective(self) -> float:
        return float(sum(r.objective for r in self.reports))

    @property
    def outliers(self) -> int:
        return int(sum(r.outliers for r in self.reports))


def predict_linear(model: LinearModel, d_e) -> np.ndarray:
    d_e = np.asarray(d_e, dtype=float)
    if d_e.shape[-1] != model.m:
        raise DimensionError(f"model expects {model.m} ticks, got {d_e.shape[-1]}")
    return d_e @ model.W.T


def _check_design(A: np.ndarray) -> None:
    n, m = A.shape
    if n < m:
        raise InsufficientDataError(f"need at least {m} samples to fit a 3 x {m} model, got {n}")
    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s[-1] <= max(n, m) * np.finfo(float).eps * s[0]:
        v = Vt[-1]
        raise RankDeficientError(
            "tick vectors do not span R^%d; null direction %s" % (m, np.array2string(v, precision=4)),
            null_direction=v)


def _newton_step(An, b, w, c):
    """Exact minimizer for the quadratic/linear partition induced by ``w``."""
    u = b - An @ w
    quad = np.abs(u) <= c
    Aq = An[quad]
    if Aq.shape[0] < An.shape[1]:
        return None
    rhs = Aq.T @ b[quad] + c * (An[~quad].T @ np.sign(u[~quad]))
    try:
        return np.linalg.solve(Aq.T @ Aq, rhs)
    except np.linalg.LinAlgError:
        return None


def _line_search(An, b, w, d, c):
    """Exact minimizer over t in [0, 1] of the convex objective along ``w + t d``.

    The directional derivative is monotone in t, so bisection on its sign is
    exact up to machine precision and needs no objective comparisons.
    """
    u, v = b - An @ w, An @ d
    dphi = lambda t: -float(v @ huber_psi(u - t * v, c))
    if dphi(1.0) <= 0.0:
        return w + d
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if dphi(mid) <= 0.0:
            lo = mid
        else:
            hi = mid
    return w + lo * d


def irls_row(X, y, sigma, c: float = DEFAULT_HUBER_C, max_iter: int = 100, tol: float = 1e-10):
    """Huber regression of one output row.

    Minimizes ``sum rho_c((y - X w) / sigma)``. Convergence is declared when the
    gradient, taken with respect to column-normalized coefficients, has
    infinity norm below ``tol``.
    """
    A = X / sigma[:, None]
    b = y / sigma
    _check_design(A)
    colnorm = np.linalg.norm(A, axis=0)
    An = A / colnorm
    w, *_ = np.linalg.lstsq(An, b, rcond=None)
    trace = [float(np.sum(huber_loss(b - An @ w, c)))]
    it = 0
    at_precision = False
    while True:
        u = b - An @ w
        grad = -(An.T @ huber_psi(u, c))
        g = float(np.max(np.abs(grad)))
        if g < tol or it >= max_iter:
            break
        a = np.abs(u)
        sw = np.sqrt(np.where(a <= c, 1.0, c / np.maximum(a, 1e-300)))
        w_new, *_ = np.linalg.lstsq(An * sw[:, None], b * sw, rcond=None)
        obj = float(np.sum(huber_loss(b - An @ w_new, c)))
        for base in (w_new, w):
            w_nt = _newton_step(An, b, base, c)
            if w_nt is None:
                continue
            w_nt = _line_search(An, b, base, w_nt - base, c)
            obj_nt = float(np.sum(huber_loss(b - An @ w_nt, c)))
            if obj_nt <= obj:
                w_new, obj = w_nt, obj_nt
        # the reweighted step majorizes the objective, so an increase is round-off;
        # stop, and call it converged when the first-order decrease still on
        # offer is below the resolution of the objective itself
        if obj > trace[-1]:
            at_precision = abs(float(grad @ (w_new - w))) <= 16 * np.finfo(float).eps * max(1.0, trace[-1])
            break
        w = w_new
        trace.append(obj)
        it += 1
    u = b - An @ w
    rep = RowReport(iterations=it, objective=trace[-1], objective_trace=trace,
                    outliers=int(np.sum(np.abs(u) > c)), grad_norm=g,
                    converged=g < tol or at_precision)
    return w / colnorm, rep


def fit_linear_arrays(D, S, sig, c: float = DEFAULT_HUBER_C, max_iter: int = 100,
                      tol: float = 1e-10) -> LinearModel:
    """Fit from ticks (n, m), targets (n, 3) and per-axis stds (n, 3).

    An axis whose std is zero for every sample (noiseless data) is weighted
    uniformly; a mix of zero and positive stds on one axis is rejected.
    """
    D = np.asarray(D, dtype=float)
    S = np.asarray(S, dtype=float)
    sig = np.array(sig, dtype=float)
    if not c > 0:
        raise ValidationError("Huber threshold must be positive")
    exact = np.all(sig == 0.0, axis=0)
    sig[:, exact] = 1.0
    if np.any(~(sig > 0)):
        raise ValidationError("per-axis noise std must be positive for every sample")
    rows, reports = [], []
    for i in range(3):
        w, rep = irls_row(D, S[:, i], sig[:, i], c, max_iter, tol)
        rows.append(w)
        reports.append(rep)
    return LinearModel(np.array(rows), c, tuple(reports))


def fit_linear(dataset, c: float = DEFAULT_HUBER_C, max_iter: int = 100, tol: float = 1e-10) -> LinearModel:
    """Robust fit of ``W`` from a sequence of DisplacementSample."""
    D, S, covs = stack_samples(dataset)
    sig = np.sqrt(np.diagonal(covs, axis1=1, axis2=2))
    return fit_linear_arrays(D, S, sig, c, max_iter, tol)


def huber_objective(model: LinearModel, D, S, sig) -> float:
    R = (np.asarray(S) - predict_linear(model, D)) / np.asarray(sig)
    return float(np.sum(huber_loss(R, model.huber_c)))
