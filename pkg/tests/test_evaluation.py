import math

import numpy as np
import pytest

from meshmcl.evaluation import checked_frames, evaluate, format_report


def path(n):
    t = np.arange(n, dtype=float)
    return np.c_[t, np.sin(t / 10.0) * 5.0, np.full(n, 0.3)]


def test_perfect_estimates():
    gt = path(250)
    r = evaluate(gt, gt, 10)
    assert r.location_rmse == 0.0 and r.yaw_rmse == 0.0 and r.success


def test_constant_six_meter_offset_fails():
    gt = path(250)
    est = gt.copy()
    est[:, 0] += 6.0
    assert not evaluate(est, gt, 10).success


@pytest.mark.parametrize("err, ok", [(5.1, False), (4.9, True)])
def test_single_error_at_checked_frame(err, ok):
    gt = path(350)
    est = gt.copy()
    conv = 20
    assert 220 in checked_frames(350, conv)
    est[220, 1] += err
    assert evaluate(est, gt, conv).success is ok


def test_errors_between_checks_do_not_fail():
    gt = path(350)
    est = gt.copy()
    est[150, 0] += 50.0
    assert evaluate(est, gt, 20).success


def test_checked_frames_rule():
    assert checked_frames(300, 47) == (147, 247)
    assert checked_frames(100, 47) == (99,)  # too short for one full period: last frame
    assert checked_frames(100, None) == ()


def test_never_converged():
    gt = path(50)
    r = evaluate(gt, gt, None)
    assert not r.success and math.isnan(r.location_rmse)


def test_rmse_matches_direct_computation():
    rng = np.random.default_rng(0)
    gt = path(200)
    est = gt + np.c_[rng.normal(0, 1, (200, 2)), rng.normal(0, 0.1, 200)]
    conv = 37
    r = evaluate(est, gt, conv)
    s_loc = s_yaw = 0.0
    for k in range(conv, 200):
        s_loc += (est[k, 0] - gt[k, 0]) ** 2 + (est[k, 1] - gt[k, 1]) ** 2
        dy = (est[k, 2] - gt[k, 2] + math.pi) % (2 * math.pi) - math.pi
        s_yaw += dy * dy
    n = 200 - conv
    assert r.location_rmse == pytest.approx(math.sqrt(s_loc / n), rel=1e-12)
    assert r.yaw_rmse == pytest.approx(math.sqrt(s_yaw / n), rel=1e-12)


def test_yaw_error_wraps():
    gt = np.array([[0.0, 0.0, math.pi - 0.01]] * 5)
    est = np.array([[0.0, 0.0, -math.pi + 0.01]] * 5)
    assert evaluate(est, gt, 0).yaw_rmse == pytest.approx(0.02, abs=1e-12)


def test_invariant_under_global_rigid_transform():
    rng = np.random.default_rng(1)
    gt = path(150)
    est = gt + np.c_[rng.normal(0, 1, (150, 2)), rng.normal(0, 0.1, 150)]
    a, t = 0.8, np.array([30.0, -12.0])
    R = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])

    def move(p):
        return np.c_[p[:, :2] @ R.T + t, p[:, 2] + a]

    r0, r1 = evaluate(est, gt, 5), evaluate(move(est), move(gt), 5)
    assert r1.location_rmse == pytest.approx(r0.location_rmse, rel=1e-9)
    assert r1.yaw_rmse == pytest.approx(r0.yaw_rmse, rel=1e-9)
    assert r1.success == r0.success


def test_length_mismatch():
    with pytest.raises(ValueError, match="3 estimates but 4"):
        evaluate(np.zeros((3, 3)), np.zeros((4, 3)), 0)


def test_report_text():
    gt = path(120)
    text = format_report(evaluate(gt, gt, 3))
    assert "convergence_frame: 3\n" in text and "success: true\n" in text
    assert "checked_frames: 103\n" in text
