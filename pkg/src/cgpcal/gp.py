"""
Multi-output Gaussian-process regression from wheel ticks to sensor displacement.

The kernel is diagonal across the three outputs (x, y, theta), so the model
is three scalar GPs sharing the tick inputs. Each output uses the matching
diagonal entry of every sample's noise covariance; off-diagonal noise terms
are ignored.

Hyperparameters are optimized in log space. For a linear mean the matrix ``C``
is not searched by gradient steps: for fixed kernel hyperparameters the
marginal likelihood is quadratic in ``C`` and its maximizer is the
generalized least-squares solution, which is substituted at every step.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .dataset import DisplacementSample, stack_samples
from .errors import (DimensionError, HyperparameterWarning, InsufficientDataError,
                     SingularMatrixError, ValidationError)

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
N_OUT = 3


class MeanKind(str, Enum):
    ZERO = "zero"
    LINEAR = "linear"


class KernelKind(str, Enum):
    RBF = "rbf"
    LINEAR = "linear"
    SUM = "rbf+linear"

    @property
    def has_rbf(self) -> bool:
        return self is not KernelKind.LINEAR

    @property
    def has_linear(self) -> bool:
        return self is not KernelKind.RBF


def _frozen_array(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MeanSpec:
    kind: MeanKind = MeanKind.ZERO
    C: Optional[np.ndarray] = None

    def __post_init__(self):
        kind = MeanKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is MeanKind.LINEAR:
            if self.C is None:
                raise ValidationError("linear mean needs a 3 x m matrix C")
            C = np.atleast_2d(np.asarray(self.C, dtype=float))
            if C.shape[0] != N_OUT:
                raise DimensionError(f"C must have 3 rows, got shape {C.shape}")
            if not np.all(np.isfinite(C)):
                raise ValidationError("C has non-finite entries")
            object.__setattr__(self, "C", _frozen_array(C))
        else:
            object.__setattr__(self, "C", None)

    @classmethod
    def zero(cls) -> "MeanSpec":
        return cls(MeanKind.ZERO)

    @classmethod
    def linear(cls, C) -> "MeanSpec":
        return cls(MeanKind.LINEAR, C)

    @property
    def m(self) -> Optional[int]:
        return None if self.C is None else self.C.shape[1]


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Per-output kernel hyperparameters.

    ``sigma[i]`` is the RBF signal std of output i and ``B_diag[i]`` the
    diagonal of its length-scale matrix (squared length scales, tick units).
    Both are ignored by a pure linear kernel.
    """

    kind: KernelKind = KernelKind.RBF
    sigma: Optional[np.ndarray] = None
    B_diag: Optional[np.ndarray] = None

    def __post_init__(self):
        kind = KernelKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if not kind.has_rbf:
            object.__setattr__(self, "sigma", None)
            object.__setattr__(self, "B_diag", None)
            return
        if self.sigma is None or self.B_diag is None:
            raise ValidationError("RBF kernel needs sigma and B_diag")
        sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), (N_OUT,))
        B = np.atleast_2d(np.asarray(self.B_diag, dtype=float))
        if B.shape[0] == 1:
            B = np.repeat(B, N_OUT, axis=0)
        if B.shape[0] != N_OUT:
            raise DimensionError(f"B_diag must be 3 x m, got shape {B.shape}")
        if not (np.all(np.isfinite(sigma)) and np.all(sigma > 0)):
            raise ValidationError("RBF sigma must be positive and finite")
        if not (np.all(np.isfinite(B)) and np.all(B > 0)):
            raise ValidationError("RBF length-scale matrix entries must be positive and finite")
        object.__setattr__(self, "sigma", _frozen_array(sigma))
        object.__setattr__(self, "B_diag", _frozen_array(B))

    @classmethod
    def rbf(cls, sigma, B_diag) -> "KernelSpec":
        return cls(KernelKind.RBF, sigma, B_diag)

    @classmethod
    def linear(cls) -> "KernelSpec":
        return cls(KernelKind.LINEAR)

    @classmethod
    def sum(cls, sigma, B_diag) -> "KernelSpec":
        return cls(KernelKind.SUM, sigma, B_diag)

    @property
    def m(self) -> Optional[int]:
        return None if self.B_diag is None else self.B_diag.shape[1]


def _check_dims(m: int, mean: MeanSpec, kernel: KernelSpec) -> None:
    if mean.m is not None and mean.m != m:
        raise DimensionError(f"mean expects {mean.m} ticks, data has {m}")
    if kernel.m is not None and kernel.m != m:
        raise DimensionError(f"kernel expects {kernel.m} ticks, data has {m}")


# -- mean and kernel -------------------------------------------------------

def mean_eval(spec: MeanSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if spec.kind is MeanKind.ZERO:
        return np.zeros(N_OUT)
    if x.shape != (spec.m,):
        raise DimensionError(f"mean expects {spec.m} ticks, got shape {x.shape}")
    return spec.C @ x


def mean_matrix(spec: MeanSpec, X) -> np.ndarray:
    """Mean at each row of ``X``; shape (n, 3)."""
    X = np.asarray(X, dtype=float)
    if spec.kind is MeanKind.ZERO:
        return np.zeros((X.shape[0], N_OUT))
    if X.shape[1] != spec.m:
        raise DimensionError(f"mean expects {spec.m} ticks, got {X.shape[1]}")
    return X @ spec.C.T


def _rbf_block(X, X2, sigma_i: float, b_i) -> np.ndarray:
    Z = X / np.sqrt(b_i)
    Z2 = X2 / np.sqrt(b_i)
    d2 = (np.sum(Z ** 2, 1)[:, None] + np.sum(Z2 ** 2, 1)[None, :] - 2.0 * Z @ Z2.T)
    np.maximum(d2, 0.0, out=d2)
    return sigma_i ** 2 * np.exp(-0.5 * d2)


def kernel_matrix(spec: KernelSpec, X, X2, i: int) -> np.ndarray:
    """Scalar kernel of output ``i`` between the rows of ``X`` and ``X2``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    K = np.zeros((X.shape[0], X2.shape[0]))
    if spec.kind.has_rbf:
        K += _rbf_block(X, X2, spec.sigma[i], spec.B_diag[i])
    if spec.kind.has_linear:
        K += X @ X2.T
    return K


def kernel_diag(spec: KernelSpec, X, i: int) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.zeros(X.shape[0])
    if spec.kind.has_rbf:
        out += spec.sigma[i] ** 2
    if spec.kind.has_linear:
        out += np.sum(X * X, axis=1)
    return out


def kernel_eval(spec: KernelSpec, x, x2) -> np.ndarray:
    """3x3 diagonal kernel matrix between two tick vectors."""
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x.ndim != 1 or x.shape != x2.shape:
        raise DimensionError(f"tick vectors differ in shape: {x.shape} vs {x2.shape}")
    if spec.m is not None and x.shape[0] != spec.m:
        raise DimensionError(f"kernel expects {spec.m} ticks, got {x.shape[0]}")
    diag = [kernel_matrix(spec, x[None], x2[None], i)[0, 0] for i in range(N_OUT)]
    return np.diag(diag)


# -- factorization -----------------------------------------------------------

JITTER_START = 1e-10
JITTER_MAX = 1e-6


def factor_psd(A: np.ndarray, jitter: bool = True):
    """Cholesky of ``A`` with escalating relative diagonal jitter.

    Returns ``(cho_factor, added_jitter)``. Raises SingularMatrixError when the
    matrix stays non-positive-definite after the largest jitter.
    """
    try:
        return linalg.cho_factor(A, lower=True, check_finite=False), 0.0
    except linalg.LinAlgError:
        pass
    if jitter:
        scale = float(np.mean(np.diag(A)))
        if not scale > 0:
            scale = 1.0
        rel = JITTER_START
        while rel <= JITTER_MAX * (1 + 1e-9):
            eps = rel * scale
            try:
                cf = linalg.cho_factor(A + eps * np.eye(len(A)), lower=True, check_finite=False)
                log.debug("cholesky needed jitter %.3g", eps)
                return cf, eps
            except linalg.LinAlgError:
                rel *= 10.0
    raise SingularMatrixError(
        "kernel-plus-noise matrix is not positive definite"
        + (" even after jitter up to 1e-6 * mean(diag)" if jitter else "; enable jitter")
        + " (duplicate inputs with zero noise?)")


def _logdet(cf) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(cf[0]))))


# -- model -----------------------------------------------------------------------

@dataclass(eq=False)
class GpModel:
    """Trained CGP model.

    ``alpha[i]`` is ``(K_i + Sigma_i)^{-1} (s_i - mu_i)`` for output i, and
    ``factors[i]`` the Cholesky factor of ``K_i + Sigma_i`` (plus ``jitter[i]``).
    """

    mean: MeanSpec
    kernel: KernelSpec
    X: np.ndarray
    noise_var: np.ndarray
    alpha: np.ndarray
    factors: list = field(repr=False)
    jitter: np.ndarray
    lml: float = float("nan")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]

    @property
    def alpha_stacked(self) -> np.ndarray:
        """``alpha`` in the sample-major 3n layout (x, y, theta of sample 1, ...)."""
        return self.alpha.T.reshape(-1)

    def predict(self, X, want_variance: bool = True):
        return gp_predict_batch(self, X, want_variance)


def _as_arrays(dataset):
    if isinstance(dataset, tuple) and len(dataset) == 3:
        X, S, covs = (np.asarray(a, dtype=float) for a in dataset)
        if X.ndim != 2 or S.shape != (X.shape[0], N_OUT):
            raise DimensionError("expected ticks (n, m) and targets (n, 3)")
        noise = covs if covs.ndim == 2 else np.diagonal(covs, axis1=1, axis2=2)
        return X, S, np.asarray(noise, dtype=float)
    D, S, covs = stack_samples(dataset)
    return D, S, np.diagonal(covs, axis1=1, axis2=2).copy()


def _residuals(mean: MeanSpec, X, S) -> np.ndarray:
    return S - mean_matrix(mean, X)


def gp_train(dataset, mean: MeanSpec, kernel: KernelSpec, jitter: bool = True) -> GpModel:
    """Precompute factorizations and ``alpha`` for the three outputs.

    ``dataset`` is a sequence of DisplacementSample or a tuple
    ``(ticks (n, m), targets (n, 3), noise variances (n, 3) or covs (n, 3, 3))``.
    """
    X, S, noise = _as_arrays(dataset)
    n, m = X.shape
    if n < 1:
        raise InsufficientDataError("need at least one training sample")
    _check_dims(m, mean, kernel)
    R = _residuals(mean, X, S)
    alpha = np.empty((N_OUT, n))
    factors, jit = [], np.zeros(N_OUT)
    lml = 0.0
    for i in range(N_OUT):
        A = kernel_matrix(kernel, X, X, i) + np.diag(noise[:, i])
        cf, jit[i] = factor_psd(A, jitter)
        factors.append(cf)
        alpha[i] = linalg.cho_solve(cf, R[:, i], check_finite=False)
        lml += -0.5 * R[:, i] @ alpha[i] - 0.5 * _logdet(cf) - 0.5 * n * LOG_2PI
    if not np.all(np.isfinite(alpha)):
        raise SingularMatrixError("alpha is not finite; the kernel matrix is ill-conditioned")
    return GpModel(mean, kernel, X.copy(), noise.copy(), alpha, factors, jit, lml)


def gp_predict_batch(model: GpModel, Xe, want_variance: bool = True):
    """Posterior means (k, 3) and, if requested, posterior variances (k, 3)."""
    Xe = np.atleast_2d(np.asarray(Xe, dtype=float))
    if Xe.shape[1] != model.m:
        raise DimensionError(f"model expects {model.m} ticks, got {Xe.shape[1]}")
    mu = mean_matrix(model.mean, Xe)
    var = np.zeros_like(mu) if want_variance else None
    for i in range(N_OUT):
        Ke = kernel_matrix(model.kernel, model.X, Xe, i)
        mu[:, i] += Ke.T @ model.alpha[i]
        if want_variance:
            V = linalg.solve_triangular(model.factors[i][0], Ke, lower=True, check_finite=False)
            var[:, i] = np.maximum(kernel_diag(model.kernel, Xe, i) - np.sum(V * V, axis=0), 0.0)
    return mu, var


def gp_predict(model: GpModel, d_e, want_variance: bool = True):
    """Posterior mean (3,) and covariance (3, 3) at one tick vector."""
    d_e = np.asarray(d_e, dtype=float)
    if d_e.shape != (model.m,):
        raise DimensionError(f"model expects {model.m} ticks, got shape {d_e.shape}")
    mu, var = gp_predict_batch(model, d_e[None], want_variance)
    cov = np.diag(var[0]) if want_variance else None
    return mu[0], cov


# -- marginal likelihood ---------------------------------------------------------

def log_marginal_likelihood(dataset, mean: MeanSpec, kernel: KernelSpec, jitter: bool = True) -> float:
    X, S, noise = _as_arrays(dataset)
    _check_dims(X.shape[1], mean, kernel)
    R = _residuals(mean, X, S)
    return sum(_lml_output(kernel, X, R[:, i], noise[:, i], i, jitter)[0] for i in range(N_OUT))


def _lml_output(kernel: KernelSpec, X, r, noise_i, i, jitter=True):
    n = len(r)
    A = kernel_matrix(kernel, X, X, i) + np.diag(noise_i)
    cf, _ = factor_psd(A, jitter)
    a = linalg.cho_solve(cf, r, check_finite=False)
    return -0.5 * r @ a - 0.5 * _logdet(cf) - 0.5 * n * LOG_2PI, cf, a


def kernel_log_params(kernel: KernelSpec, i: int) -> np.ndarray:
    """Log-space kernel parameters of output i: ``[log sigma, log B_1 .. log B_m]``."""
    if not kernel.kind.has_rbf:
        return np.zeros(0)
    return np.concatenate([[math.log(kernel.sigma[i])], np.log(kernel.B_diag[i])])


def _with_log_params(kernel: KernelSpec, i: int, theta) -> KernelSpec:
    sigma = np.array(kernel.sigma)
    B = np.array(kernel.B_diag)
    sigma[i] = math.exp(theta[0])
    B[i] = np.exp(theta[1:])
    return replace(kernel, sigma=sigma, B_diag=B)


def lml_output_grad(kernel: KernelSpec, X, r, noise_i, i: int, jitter: bool = True):
    """Log marginal likelihood of output i and its gradient.

    Returns ``(value, d/dtheta, d/dc)`` where theta are the log kernel
    parameters of :func:`kernel_log_params` and ``d/dc`` the gradient with
    respect to row i of a linear mean (the residual is ``r = y - X c``).
    """
    value, cf, a = _lml_output(kernel, X, r, noise_i, i, jitter)
    grad_c = X.T @ a
    if not kernel.kind.has_rbf:
        return value, np.zeros(0), grad_c
    n, m = X.shape
    Ainv = linalg.cho_solve(cf, np.eye(n), check_finite=False)
    W = np.outer(a, a) - Ainv
    Kr = _rbf_block(X, X, kernel.sigma[i], kernel.B_diag[i])
    M = W * Kr
    grad = np.empty(1 + m)
    grad[0] = np.sum(M)  # dK/dlog(sigma) = 2 K_rbf; the 1/2 of the trace formula cancels
    for d in range(m):
        diff2 = (X[:, d, None] - X[None, :, d]) ** 2
        grad[1 + d] = 0.25 * np.sum(M * diff2) / kernel.B_diag[i, d]
    return value, grad, grad_c


def gls_mean_row(kernel: KernelSpec, X, y, noise_i, i: int, jitter: bool = True) -> np.ndarray:
    """Row of ``C`` maximizing the likelihood of output i for fixed kernel."""
    A = kernel_matrix(kernel, X, X, i) + np.diag(noise_i)
    cf, _ = factor_psd(A, jitter)
    AiX = linalg.cho_solve(cf, X, check_finite=False)
    Aiy = linalg.cho_solve(cf, y, check_finite=False)
    c, *_ = np.linalg.lstsq(X.T @ AiX, X.T @ Aiy, rcond=None)
    return c


# -- hyperparameter search ---------------------------------------------------------

@dataclass
class FitSettings:
    n_starts: int = 8
    max_iter: int = 150
    seed: int = 0
    max_points: Optional[int] = 300
    grad_tol: float = 1e-6
    f_tol: float = 1e-9


def _bounds(X, y):
    ys = float(np.std(y)) or 1.0
    xs = np.std(X, axis=0)
    xs = np.where(xs > 0, xs, 1.0)
    lo = np.concatenate([[math.log(1e-6 * ys)], 2 * np.log(1e-2 * xs)])
    hi = np.concatenate([[math.log(1e2 * ys)], 2 * np.log(1e3 * xs)])
    return lo, hi


def _objective(kernel, X, y, noise_i, i, mean_kind, theta):
    """Profile likelihood of output i at log params ``theta``; returns (value, grad, c)."""
    k = _with_log_params(kernel, i, theta)
    c = None
    r = y
    if mean_kind is MeanKind.LINEAR:
        c = gls_mean_row(k, X, y, noise_i, i)
        r = y - X @ c
    value, grad, _ = lml_output_grad(k, X, r, noise_i, i)
    return value, grad, c


def _ascend(f, theta0, lo, hi, settings: FitSettings):
    """Projected gradient ascent with Armijo backtracking and BB step guesses."""
    theta = np.clip(theta0, lo, hi)
    try:
        val, g, _ = f(theta)
    except SingularMatrixError:
        return theta, -np.inf
    step = 1.0 / max(1.0, float(np.linalg.norm(g)))
    prev_theta = prev_g = None
    for _ in range(settings.max_iter):
        if prev_theta is not None:
            s, yv = theta - prev_theta, g - prev_g
            sy = float(s @ yv)
            if sy < 0:
                step = float(s @ s) / -sy
        step = min(max(step, 1e-12), 10.0)
        improved = False
        t = step
        for _ in range(40):
            cand = np.clip(theta + t * g, lo, hi)
            try:
                cv, cg, _ = f(cand)
            except SingularMatrixError:
                t *= 0.5
                continue
            if cv >= val + 1e-4 * float(g @ (cand - theta)):
                improved = True
                break
            t *= 0.5
        if not improved:
            break
        prev_theta, prev_g = theta, g
        gain = cv - val
        theta, val, g = cand, cv, cg
        step = t
        proj = np.clip(theta + g, lo, hi) - theta
        if np.max(np.abs(proj)) < settings.grad_tol or gain < settings.f_tol * max(1.0, abs(val)):
            break
    return theta, val


def fit_hyperparameters(dataset, mean_kind, kernel_kind, settings: Optional[FitSettings] = None):
    """Maximize the log marginal likelihood; returns ``(MeanSpec, KernelSpec)``.

    Each output is fitted independently from a data-driven initialization and
    ``settings.n_starts`` log-uniform random starts. When the search cannot
    improve on the initialization a HyperparameterWarning is issued and the
    initialization is returned.
    """
    settings = settings or FitSettings()
    mean_kind, kernel_kind = MeanKind(mean_kind), KernelKind(kernel_kind)
    X_all, S_all, noise_all = _as_arrays(dataset)
    n, m = X_all.shape
    if n < 2:
        raise InsufficientDataError("hyperparameter fitting needs at least two samples")

    rng = np.random.default_rng(settings.seed)
    X, S, noise = X_all, S_all, noise_all
    if settings.max_points and n > settings.max_points:
        idx = np.sort(rng.choice(n, settings.max_points, replace=False))
        X, S, noise = X_all[idx], S_all[idx], noise_all[idx]

    def gls_all(kernel):
        return np.array([gls_mean_row(kernel, X_all, S_all[:, i], noise_all[:, i], i)
                         for i in range(N_OUT)])

    if not kernel_kind.has_rbf:
        if mean_kind is MeanKind.ZERO:
            return MeanSpec.zero(), KernelSpec.linear()
        kernel = KernelSpec.linear()
        return MeanSpec.linear(gls_all(kernel)), kernel

    xs = np.std(X, axis=0)
    xs = np.where(xs > 0, xs, 1.0)
    sigma0, B0 = np.empty(N_OUT), np.empty((N_OUT, m))
    for i in range(N_OUT):
        y = S[:, i]
        if mean_kind is MeanKind.LINEAR:
            c, *_ = np.linalg.lstsq(X, y, rcond=None)
            y = y - X @ c
        sigma0[i] = float(np.std(y)) or 1.0
        B0[i] = xs ** 2
    init = KernelSpec(kernel_kind, sigma0, B0)
    kernel = init
    any_improved = False
    for i in range(N_OUT):
        y = S[:, i]
        lo, hi = _bounds(X, y)
        f = lambda th, i=i: _objective(kernel, X, y, noise[:, i], i, mean_kind, th)
        theta0 = np.clip(kernel_log_params(init, i), lo, hi)
        try:
            best_val = f(theta0)[0]
        except SingularMatrixError:
            best_val = -np.inf
        init_val, best_theta = best_val, theta0
        starts = [theta0]
        for _ in range(settings.n_starts):
            starts.append(np.concatenate([
                [theta0[0] + rng.uniform(-math.log(10), math.log(10))],
                theta0[1:] + rng.uniform(-2 * math.log(10), 2 * math.log(10), m)]))
        for th in starts:
            th_fit, val = _ascend(f, th, lo, hi, settings)
            if val > best_val:
                best_val, best_theta = val, th_fit
        if best_val > init_val:
            any_improved = True
        kernel = _with_log_params(kernel, i, best_theta)
        log.info("output %d: lml %.6g -> %.6g", i, init_val, best_val)

    if not any_improved:
        warnings.warn("hyperparameter search did not improve on the initialization",
                      HyperparameterWarning, stacklevel=2)
    mean = MeanSpec.zero() if mean_kind is MeanKind.ZERO else MeanSpec.linear(gls_all(kernel))
    return mean, kernel
