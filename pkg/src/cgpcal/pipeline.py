"""
Calibration orchestration: edge selection, training dispatch, prediction and
trajectory reconstruction.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from . import gp, linear
from .dataset import DisplacementSample, stack_samples
from .errors import DimensionError, InsufficientDataError, ValidationError
from .pose import Pose2D, chain_arr, poses_to_array

log = logging.getLogger(__name__)


class ModelKind(str, Enum):
    CGP_ZERO_RBF = "cgp_zero_rbf"
    CGP_LIN_RBF = "cgp_lin_rbf"
    CGP_ZERO_LIN = "cgp_zero_lin"
    CGP_ZERO_SUM = "cgp_zero_sum"
    CGP_LIN_SUM = "cgp_lin_sum"
    LINEAR_HUBER = "linear_huber"

    @property
    def is_gp(self) -> bool:
        return self is not ModelKind.LINEAR_HUBER

    @property
    def gp_kinds(self):
        return _GP_KINDS[self]


_GP_KINDS = {
    ModelKind.CGP_ZERO_RBF: (gp.MeanKind.ZERO, gp.KernelKind.RBF),
    ModelKind.CGP_LIN_RBF: (gp.MeanKind.LINEAR, gp.KernelKind.RBF),
    ModelKind.CGP_ZERO_LIN: (gp.MeanKind.ZERO, gp.KernelKind.LINEAR),
    ModelKind.CGP_ZERO_SUM: (gp.MeanKind.ZERO, gp.KernelKind.SUM),
    ModelKind.CGP_LIN_SUM: (gp.MeanKind.LINEAR, gp.KernelKind.SUM),
    ModelKind.LINEAR_HUBER: (None, None),
}


# -- edge selection ------------------------------------------------------------

@dataclass(frozen=True)
class Edge:
    t_j: float
    t_k: float
    ticks: tuple


@dataclass
class EdgeSelection:
    edges: list
    dropped_spacing: int = 0
    dropped_odometry: int = 0

    def __len__(self):
        return len(self.edges)

    def __iter__(self):
        return iter(self.edges)


class EdgeSelector:
    """Incremental edge selection over odometry and sensor-event streams.

    Feed odometry readings (time, cumulative counters) and sensor event times
    in any chunking; :meth:`poll` returns edges whose endpoints can no longer
    be affected by future odometry, :meth:`close` flushes the rest. The result
    does not depend on how the streams were chunked.

    An edge joins consecutive events whose spacing lies within
    ``[lo * T, hi * T]``. Its ticks are the counter difference between the
    odometry readings closest in time to each endpoint (ties go to the earlier
    reading); an endpoint without a reading within ``T / 2`` drops the edge.
    ``stride`` keeps every stride-th consecutive pair.
    """

    def __init__(self, T: float, stride: int = 1, tolerance: float = 0.1):
        if not T > 0:
            raise ValidationError("interval T must be positive")
        if stride < 1:
            raise ValidationError("stride must be >= 1")
        self.T = float(T)
        self.stride = int(stride)
        self.lo, self.hi = (1.0 - tolerance) * self.T, (1.0 + tolerance) * self.T
        self._odom_t: list = []
        self._odom_c: list = []
        self._events: list = []
        self._pair_index = 0
        self._next_event = 0
        self._closed = False
        self.selection = EdgeSelection([])

    def add_odometry(self, times, counters) -> None:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if times.size == 0:
            return
        counters = np.asarray(counters)
        counters = counters.reshape(len(times), -1)
        for t, c in zip(times, counters):
            if self._odom_t and not t > self._odom_t[-1]:
                raise ValidationError(f"odometry timestamps not increasing at t={t}")
            if self._odom_c and len(c) != len(self._odom_c[-1]):
                raise DimensionError("odometry counter width changed")
            self._odom_t.append(float(t))
            self._odom_c.append(tuple(c.tolist()))

    def add_events(self, times) -> None:
        for t in np.atleast_1d(np.asarray(times, dtype=float)):
            if self._events and not t > self._events[-1]:
                raise ValidationError(f"sensor event timestamps not increasing at t={t}")
            self._events.append(float(t))

    def _nearest(self, t: float):
        ts = self._odom_t
        i = int(np.searchsorted(ts, t))
        best = None
        for j in (i - 1, i):
            if 0 <= j < len(ts):
                if best is None or abs(ts[j] - t) < abs(ts[best] - t):
                    best = j
        return best

    def _settled(self, t: float) -> bool:
        # no future reading can be closer than the nearest one already seen
        if self._closed:
            return True
        return bool(self._odom_t) and self._odom_t[-1] >= t + 0.5 * self.T

    def poll(self) -> list:
        out = []
        ev = self._events
        while self._next_event + 1 < len(ev):
            k = self._next_event
            t_j, t_k = ev[k], ev[k + 1]
            if not (self._settled(t_j) and self._settled(t_k)):
                break
            self._next_event += 1
            keep = self._pair_index % self.stride == 0
            self._pair_index += 1
            if not keep:
                continue
            if not (self.lo <= t_k - t_j <= self.hi):
                self.selection.dropped_spacing += 1
                continue
            a, b = self._nearest(t_j), self._nearest(t_k)
            if (a is None or b is None or abs(self._odom_t[a] - t_j) > 0.5 * self.T
                    or abs(self._odom_t[b] - t_k) > 0.5 * self.T):
                self.selection.dropped_odometry += 1
                continue
            ticks = tuple(cb - ca for ca, cb in zip(self._odom_c[a], self._odom_c[b]))
            edge = Edge(t_j, t_k, ticks)
            out.append(edge)
            self.selection.edges.append(edge)
        return out

    def close(self) -> EdgeSelection:
        self._closed = True
        self.poll()
        return self.selection


def select_edges(odom_times, odom_counters, event_times, T: float, stride: int = 1,
                 tolerance: float = 0.1) -> EdgeSelection:
    """Whole-log edge selection; see :class:`EdgeSelector`."""
    odom_times = np.asarray(odom_times, dtype=float)
    event_times = np.asarray(event_times, dtype=float)
    if odom_times.size == 0 or event_times.size == 0:
        raise InsufficientDataError("odometry log and sensor events must be non-empty")
    sel = EdgeSelector(T, stride, tolerance)
    sel.add_odometry(odom_times, odom_counters)
    sel.add_events(event_times)
    return sel.close()


def assemble_dataset(edges: Sequence[Edge], displacements, covariances) -> list:
    """Pair edges with measured sensor displacements (Pose2D or 3-vectors)."""
    if len(edges) != len(displacements) or len(edges) != len(covariances):
        raise DimensionError("edges, displacements and covariances differ in length")
    out = []
    for e, s, cov in zip(edges, displacements, covariances):
        s = s if isinstance(s, Pose2D) else Pose2D.from_array(s)
        out.append(DisplacementSample(e.t_j, e.t_k, e.ticks, s, cov))
    return out


# -- training / prediction --------------------------------------------------------

@dataclass
class TrainSettings:
    huber_c: float = linear.DEFAULT_HUBER_C
    fit: gp.FitSettings = field(default_factory=gp.FitSettings)
    mean: Optional[gp.MeanSpec] = None
    kernel: Optional[gp.KernelSpec] = None


@dataclass(eq=False)
class CalibrationRun:
    model_kind: ModelKind
    model: object
    train_id: str = ""
    config: dict = field(default_factory=dict)
    wall_time: float = 0.0
    report: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.model.m


def _gp_report(model: gp.GpModel) -> dict:
    rep = {"log_marginal_likelihood": model.lml, "n_train": model.n,
           "jitter": [float(j) for j in model.jitter]}
    if model.kernel.kind.has_rbf:
        for i, name in enumerate("xyt"):
            rep[f"sigma_{name}"] = float(model.kernel.sigma[i])
            rep[f"B_diag_{name}"] = [float(v) for v in model.kernel.B_diag[i]]
    if model.mean.C is not None:
        rep["C"] = model.mean.C.tolist()
    return rep


def train(dataset: Sequence[DisplacementSample], model_kind, settings: Optional[TrainSettings] = None,
          train_id: str = "", config: Optional[dict] = None) -> CalibrationRun:
    """Fit the requested model kind to ``dataset``."""
    kind = ModelKind(model_kind)
    settings = settings or TrainSettings()
    if len(dataset) == 0:
        raise InsufficientDataError("training dataset is empty")
    t0 = time.perf_counter()
    if kind is ModelKind.LINEAR_HUBER:
        model = linear.fit_linear(dataset, settings.huber_c)
        report = {"huber_objective": model.objective, "iterations": model.iterations,
                  "outliers": model.outliers, "W": model.W.tolist()}
    else:
        mean_kind, kernel_kind = kind.gp_kinds
        if settings.mean is not None and settings.kernel is not None:
            mean, kernel = settings.mean, settings.kernel
        else:
            mean, kernel = gp.fit_hyperparameters(dataset, mean_kind, kernel_kind, settings.fit)
        model = gp.gp_train(dataset, mean, kernel)
        report = _gp_report(model)
    wall = time.perf_counter() - t0
    report["wall_time_s"] = wall
    log.info("trained %s on %d samples in %.3f s", kind.value, len(dataset), wall)
    return CalibrationRun(kind, model, train_id, dict(config or {}), wall, report)


def predict_arrays(run: CalibrationRun, ticks):
    """Means (k, 3) and covariances (k, 3, 3) for a batch of tick vectors."""
    ticks = np.atleast_2d(np.asarray(ticks, dtype=float))
    if ticks.shape[1] != run.m:
        raise DimensionError(f"model expects {run.m} ticks, got {ticks.shape[1]}")
    covs = np.zeros((ticks.shape[0], 3, 3))
    if run.model_kind is ModelKind.LINEAR_HUBER:
        return linear.predict_linear(run.model, ticks), covs
    mu, var = gp.gp_predict_batch(run.model, ticks, True)
    idx = np.arange(3)
    covs[:, idx, idx] = var
    return mu, covs


def predict_displacements(run: CalibrationRun, edges) -> list:
    """Per-edge ``(Pose2D mean, 3x3 covariance)``; zero covariance for the linear model."""
    ticks = [e.ticks for e in edges]
    if len(ticks) == 0:
        return []
    mu, covs = predict_arrays(run, np.array(ticks, dtype=float))
    return [(Pose2D.from_array(m), c) for m, c in zip(mu, covs)]


def integrate_trajectory(start: Pose2D, displacements: Sequence[Pose2D]) -> list:
    """Chain displacements onto ``start``; returns ``len(displacements) + 1`` poses."""
    steps = poses_to_array(displacements) if len(displacements) else np.zeros((0, 3))
    return [Pose2D(*p) for p in chain_arr(start.as_array(), steps)]
