"""Train-on-one-run, test-on-another calibration experiments against simulator truth."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np

from .dataset import stack_samples
from .metrics import TrajectoryPair, evaluate
from .pipeline import CalibrationRun, ModelKind, TrainSettings, predict_arrays, train
from .pose import chain_arr
from .sim import SimConfig, SimResult, nominal_sensor_predictions, simulate


def chained_sensor_trajectory(result: SimResult, steps) -> np.ndarray:
    """Sensor trajectory from the true start pose by chaining per-edge displacements."""
    return chain_arr(result.sensor_poses[0], np.asarray(steps).reshape(-1, 3))


def score(result: SimResult, steps) -> dict:
    est = chained_sensor_trajectory(result, steps)
    return evaluate(TrajectoryPair(est, result.sensor_poses))


def predict_run(run: CalibrationRun, result: SimResult) -> np.ndarray:
    D, _, _ = stack_samples(result.dataset)
    return predict_arrays(run, D)[0]


@dataclass
class ExperimentResult:
    train_sim: SimResult
    test_sim: SimResult
    runs: dict = field(default_factory=dict)
    scores: dict = field(default_factory=dict)

    @property
    def test_path_length(self) -> float:
        return self.test_sim.path_length()


def run_experiment(train_cfg: SimConfig, test_cfg: SimConfig, kinds: Iterable,
                   settings: Optional[TrainSettings] = None) -> ExperimentResult:
    """Simulate, train each model kind, and score it on the test run.

    The nominal (undeformed, known sensor pose) parametric model is scored
    under the key ``"nominal"``.
    """
    tr = simulate(train_cfg)
    te = simulate(test_cfg)
    out = ExperimentResult(tr, te)
    for kind in kinds:
        kind = ModelKind(kind)
        run = train(tr.dataset, kind, settings, train_id=f"sim-seed-{train_cfg.seed}")
        out.runs[kind.value] = run
        out.scores[kind.value] = score(te, predict_run(run, te))
    nominal = nominal_sensor_predictions(te.dataset, test_cfg.drive, test_cfg.sensor_pose)
    out.scores["nominal"] = score(te, nominal)
    return out
