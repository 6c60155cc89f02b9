"""Goal-conditioned low-level human motion generator.

Stands in for a learned sequence model behind the same interface: given the
current human configuration and a goal point it returns the next ``duration``
samples, ending exactly at the goal.  The samples minimize the planner's
finite-difference objective ``dt * sum(w_v |v|^2 + w_a |a|^2)`` with both
endpoints pinned, whose minimizer is the constant-velocity ramp (zero
acceleration, and equal steps minimize the velocity term).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

V_MAX = 2.0                 # m/s
HAND_REST_HEIGHT = 1.0      # m, hand height while walking
KINDS = ("pelvis", "hand")


@dataclass(frozen=True)
class HumanConfig:
    pelvis: np.ndarray      # (2,)
    hand: np.ndarray        # (3,)

    @classmethod
    def at(cls, pelvis, hand=None) -> "HumanConfig":
        pelvis = np.asarray(pelvis, dtype=float)[:2]
        hand = rest_hand(pelvis) if hand is None else np.asarray(hand, dtype=float)[:3]
        return cls(pelvis, hand)


def rest_hand(pelvis) -> np.ndarray:
    p = np.asarray(pelvis, dtype=float)
    return np.array([p[0], p[1], HAND_REST_HEIGHT])


def ramp(start, goal, duration: int) -> np.ndarray:
    """Rows 1..duration of the constant-velocity path from ``start`` to ``goal``."""
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    s = np.arange(1, duration + 1)[:, None] / duration
    out = start + s * (goal - start)
    out[-1] = goal
    return out


def generate_lowlevel(h_now: HumanConfig, goal, kind: str, duration: int) -> tuple[np.ndarray, np.ndarray]:
    """Next ``duration`` (pelvis, hand) samples toward ``goal``.

    ``kind="pelvis"``: the base walks to ``goal[:2]`` while the hand returns to
    its rest pose over the new base.  ``kind="hand"``: the base stays put and the
    hand moves to the 3D ``goal``.  The last sample hits the goal exactly.
    """
    if duration < 1:
        raise ValueError("duration must be positive")
    goal = np.asarray(goal, dtype=float)
    if kind == "pelvis":
        pelvis = ramp(h_now.pelvis, goal[:2], duration)
        hand = ramp(h_now.hand, rest_hand(goal[:2]), duration)
    elif kind == "hand":
        if goal.shape[0] != 3:
            raise ValueError("hand goals are 3D points")
        pelvis = np.repeat(h_now.pelvis[None, :], duration, axis=0)
        hand = ramp(h_now.hand, goal, duration)
    else:
        raise ValueError(f"kind must be one of {KINDS}")
    return pelvis, hand


def max_step(points: np.ndarray) -> float:
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return 0.0
    return float(np.max(np.linalg.norm(np.diff(points, axis=0), axis=1)))
