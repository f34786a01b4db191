"""Localization metrics: per-frame errors, post-convergence RMSE, success rule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import wrap_angle

SUCCESS_RADIUS = 5.0  # meters
CHECK_EVERY = 100  # frames


@dataclass(frozen=True)
class EvalReport:
    location_error: np.ndarray  # meters, per frame
    yaw_error: np.ndarray  # radians, per frame, absolute
    location_rmse: float  # nan when the run never converged
    yaw_rmse: float
    success: bool
    convergence_frame: Optional[int]
    checked_frames: tuple


def checked_frames(n: int, convergence_frame: Optional[int]) -> tuple:
    """Every 100th frame after convergence; the final frame if none fits."""
    if convergence_frame is None or convergence_frame >= n:
        return ()
    frames = tuple(range(convergence_frame + CHECK_EVERY, n, CHECK_EVERY))
    return frames or (n - 1,)


def evaluate(estimates, ground_truth, convergence_frame: Optional[int]) -> EvalReport:
    """Score (n, 3) planar estimates against ground truth.

    RMSEs cover frames from ``convergence_frame`` on.  A run succeeds when
    it converged and the location error is below 5 m at every checked frame.
    """
    est = np.asarray(estimates, dtype=float).reshape(-1, 3)
    gt = np.asarray(ground_truth, dtype=float).reshape(-1, 3)
    if est.shape != gt.shape:
        raise ValueError(f"{len(est)} estimates but {len(gt)} ground-truth poses")
    loc = np.hypot(est[:, 0] - gt[:, 0], est[:, 1] - gt[:, 1])
    yaw = np.abs(wrap_angle(est[:, 2] - gt[:, 2]))
    checks = checked_frames(len(est), convergence_frame)
    if checks:
        tail = slice(convergence_frame, None)
        loc_rmse = float(np.sqrt(np.mean(loc[tail] ** 2)))
        yaw_rmse = float(np.sqrt(np.mean(yaw[tail] ** 2)))
        success = bool(all(loc[k] < SUCCESS_RADIUS for k in checks))
    else:
        loc_rmse = yaw_rmse = math.nan
        success = False
    return EvalReport(loc, yaw, loc_rmse, yaw_rmse, success, convergence_frame, checks)


def format_report(report: EvalReport) -> str:
    conv = "none" if report.convergence_frame is None else str(report.convergence_frame)
    lines = [
        f"frames: {len(report.location_error)}",
        f"convergence_frame: {conv}",
        f"location_rmse_m: {report.location_rmse:.4f}",
        f"yaw_rmse_deg: {math.degrees(report.yaw_rmse):.4f}",
        f"success: {str(report.success).lower()}",
        f"checked_frames: {' '.join(map(str, report.checked_frames)) or 'none'}",
    ]
    return "\n".join(lines) + "\n"
