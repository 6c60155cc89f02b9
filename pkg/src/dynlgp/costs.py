"""Finite-difference smoothness cost shared by ranking, optimization and prediction.

Convention, for waypoints x_0 (fixed start) .. x_N sampled every ``dt`` seconds::

    v_t = (x_t - x_{t-1}) / dt                      t = 1..N
    a_t = (x_{t+1} - 2 x_t + x_{t-1}) / dt**2       t = 1..N-1
    cost = dt * sum_t (w_v |v_t|^2) + dt * sum_t (w_a |a_t|^2)

i.e. a Riemann sum of the integrated squared velocity and acceleration.  For a
uniform straight line of N steps of length ``d`` the cost is ``w_v * N * d**2 / dt``.
"""
from __future__ import annotations

import numpy as np

DT = 0.1  # 10 Hz
W_VEL = 1.0
W_ACC = 10.0


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def differences(points: np.ndarray, angle_dims: tuple[int, ...] = ()) -> np.ndarray:
    d = np.diff(points, axis=0)
    for k in angle_dims:
        d[:, k] = wrap_angle(d[:, k])
    return d


def smoothness_cost(points: np.ndarray, dt: float = DT, w_vel: float = W_VEL, w_acc: float = W_ACC,
                    angle_dims: tuple[int, ...] = ()) -> float:
    """Cost of a path given as an array whose first row is the fixed start."""
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return 0.0
    d = differences(points, angle_dims)
    vel = dt * w_vel * np.sum(d ** 2) / dt ** 2
    acc = dt * w_acc * np.sum(np.diff(d, axis=0) ** 2) / dt ** 4
    return float(vel + acc)


def interpolation_cost(start, keyframes, durations, dt: float = DT, w_vel: float = W_VEL,
                       w_acc: float = W_ACC) -> np.ndarray:
    """Closed-form cost of piecewise-linear paths through keyframes.

    ``keyframes`` has shape (..., K, D) and ``durations`` (..., K) (steps per
    phase, all positive); ``start`` broadcasts to (..., D).  Equals
    :func:`smoothness_cost` evaluated on the sampled interpolation.
    """
    keyframes = np.asarray(keyframes, dtype=float)
    durations = np.asarray(durations, dtype=float)
    start = np.broadcast_to(np.asarray(start, dtype=float), keyframes[..., :1, :].shape)
    pts = np.concatenate([start, keyframes], axis=-2)
    disp = np.diff(pts, axis=-2)                      # (..., K, D)
    step = disp / durations[..., None]
    vel = w_vel * np.sum(np.sum(disp ** 2, axis=-1) / (durations * dt), axis=-1)
    jumps = np.diff(step, axis=-2)
    acc = w_acc * np.sum(jumps ** 2, axis=(-1, -2)) / dt ** 3
    return vel + acc


def interpolate(start, keyframes, durations) -> np.ndarray:
    """Sample the piecewise-linear path; returns (sum(durations), D) without the start row."""
    start = np.asarray(start, dtype=float)
    out = []
    prev = start
    for key, n in zip(keyframes, durations):
        key = np.asarray(key, dtype=float)
        s = np.arange(1, n + 1)[:, None] / n
        out.append(prev + s * (key - prev))
        prev = key
    if not out:
        return np.zeros((0, start.shape[0]))
    return np.vstack(out)
