"""Human trajectories consumed by the planner, and the three ways to obtain them."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..kinematics import GeometricState, Workspace
from .goals import Snapshot, class_of, extract_goal, nearest_surface, pick_target
from .irl import IrlModel, rollout_policy
from .lowlevel import HumanConfig, generate_lowlevel, ramp
from .mdp import Action, SetTableMdp

HUMAN_DURATIONS = {"go-to": 30, "pick-up": 5, "place": 5}
PACE_JITTER = 0.2           # sampled walks last (1 +- PACE_JITTER) * nominal steps
MODES = ("ground-truth", "degraded", "hierarchical")
CSV_COLUMNS = ("t", "pelvis_x", "pelvis_y", "hand_x", "hand_y", "hand_z", "carried")


@dataclass(frozen=True)
class HumanEvent:
    t: int
    kind: str          # "pick" | "place"
    obj: str


@dataclass(frozen=True)
class HumanTrajectory:
    """Samples h_0..h_{T-1} at 10 Hz; ``carried[t]`` is the object in hand at step t."""
    pelvis: np.ndarray
    hand: np.ndarray
    carried: tuple[str | None, ...]

    def __post_init__(self):
        n = len(self.pelvis)
        if self.hand.shape != (n, 3) or self.pelvis.shape != (n, 2) or len(self.carried) != n:
            raise ValueError("pelvis (T,2), hand (T,3) and carried (T,) must agree")
        if n == 0:
            raise ValueError("a trajectory needs at least the initial sample")

    def __len__(self) -> int:
        return len(self.pelvis)

    @classmethod
    def stationary(cls, config: HumanConfig, length: int = 1, carried: str | None = None) -> "HumanTrajectory":
        return cls(np.repeat(config.pelvis[None], length, 0), np.repeat(config.hand[None], length, 0),
                   (carried,) * length)

    def config(self, t: int) -> HumanConfig:
        t = min(max(t, 0), len(self) - 1)
        return HumanConfig(self.pelvis[t].copy(), self.hand[t].copy())

    def carried_at(self, t: int) -> str | None:
        return self.carried[min(max(t, 0), len(self) - 1)]

    def window(self, t: int, n: int) -> np.ndarray:
        """Pelvis rows t..t+n-1, holding the last sample past the end."""
        idx = np.clip(np.arange(t, t + n), 0, len(self) - 1)
        return self.pelvis[idx]

    def events(self) -> list[HumanEvent]:
        out = []
        for t in range(1, len(self)):
            a, b = self.carried[t - 1], self.carried[t]
            if a == b:
                continue
            if a is not None:
                out.append(HumanEvent(t, "place", a))
            if b is not None:
                out.append(HumanEvent(t, "pick", b))
        return out

    def max_step(self) -> float:
        if len(self) < 2:
            return 0.0
        dp = np.linalg.norm(np.diff(self.pelvis, axis=0), axis=1)
        dh = np.linalg.norm(np.diff(self.hand, axis=0), axis=1)
        return float(max(dp.max(), dh.max()))

    def extended(self, pelvis, hand, carried) -> "HumanTrajectory":
        return HumanTrajectory(np.vstack([self.pelvis, pelvis]), np.vstack([self.hand, hand]),
                               self.carried + tuple(carried))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for t in range(len(self)):
                w.writerow([t, *(f"{v:.6f}" for v in self.pelvis[t]), *(f"{v:.6f}" for v in self.hand[t]),
                            self.carried[t] if self.carried[t] is not None else -1])

    @classmethod
    def from_csv(cls, path) -> "HumanTrajectory":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: empty trajectory")
        missing = set(CSV_COLUMNS) - set(rows[0])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows.sort(key=lambda r: int(r["t"]))
        if [int(r["t"]) for r in rows] != list(range(len(rows))):
            raise ValueError(f"{path}: time column must be 0..T-1 without gaps")
        pelvis = np.array([[float(r["pelvis_x"]), float(r["pelvis_y"])] for r in rows])
        hand = np.array([[float(r["hand_x"]), float(r["hand_y"]), float(r["hand_z"])] for r in rows])
        carried = tuple(None if r["carried"].strip() in ("-1", "") else r["carried"].strip() for r in rows)
        return cls(pelvis, hand, carried)


@dataclass(frozen=True)
class HumanSource:
    """The motion the human actually performs and the forecast handed to the planner."""
    mode: str
    actual: HumanTrajectory
    predicted: HumanTrajectory
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    @classmethod
    def ground_truth(cls, traj: HumanTrajectory) -> "HumanSource":
        return cls("ground-truth", traj, traj)

    def __len__(self) -> int:
        return len(self.actual)

    def forecast(self, t: int, n: int) -> np.ndarray:
        """Pelvis forecast for steps t..t+n-1, anchored at the observed pose at t."""
        out = self.predicted.window(t, n).copy()
        if n:
            out[0] = self.actual.config(t).pelvis
        return out

    def events(self) -> list[HumanEvent]:
        return self.predicted.events()


# ---------------------------------------------------------------------------
# degradation
# ---------------------------------------------------------------------------

def degrade_ground_truth(traj: HumanTrajectory, fraction: float, seed: int | None = 0) -> HumanSource:
    """Replace one seeded contiguous window of ``floor(fraction * T)`` samples by a bridge.

    The bridge interpolates pelvis and hand from the sample before the window
    to the sample after it, so the output keeps its length and continuity.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must lie in [0, 1)")
    T = len(traj)
    w = min(int(math.floor(fraction * T)), max(T - 2, 0))
    if w == 0:
        return HumanSource("degraded", traj, traj, dict(fraction=fraction, seed=seed, window_start=None,
                                                        window_length=0))
    rng = np.random.default_rng(seed)
    start = int(rng.integers(1, T - w))          # rows start .. start+w-1, neighbors inside
    before, after = start - 1, start + w
    pelvis = traj.pelvis.copy()
    hand = traj.hand.copy()
    pelvis[start:after] = ramp(traj.pelvis[before], traj.pelvis[after], w + 1)[:-1]
    hand[start:after] = ramp(traj.hand[before], traj.hand[after], w + 1)[:-1]
    pred = HumanTrajectory(pelvis, hand, traj.carried)
    return HumanSource("degraded", traj, pred, dict(fraction=fraction, seed=seed, window_start=start,
                                                    window_length=w))


# ---------------------------------------------------------------------------
# hierarchical prediction
# ---------------------------------------------------------------------------

def mdp_for_workspace(workspace: Workspace, objects: Sequence[str], goal_location: str = "table",
                      goal: dict | None = None) -> SetTableMdp:
    """Counting MDP over the workspace surfaces; by default every object ends on ``goal_location``."""
    classes = tuple(sorted({class_of(workspace, o) for o in objects}))
    locations = tuple(workspace.surfaces)
    totals = {c: sum(1 for o in objects if class_of(workspace, o) == c) for c in classes}
    slots = tuple((c, l) for c in classes for l in locations)
    return SetTableMdp(classes, locations, slots, totals, dict(totals) if goal is None else goal, goal_location)


def mdp_state(mdp: SetTableMdp, snap: Snapshot) -> tuple[int, ...]:
    counts = [0] * len(mdp.slots)
    for o, (surf, _) in snap.objects.items():
        if surf is None:
            continue
        i = mdp.slot_index(class_of(snap.workspace, o), surf)
        if i is None:
            raise ValueError(f"{o} on {surf} has no slot in the MDP")
        counts[i] += 1
    pos = mdp.locations.index(snap.location().name)
    carry = 0 if snap.carried is None else mdp.classes.index(class_of(snap.workspace, snap.carried)) + 1
    return tuple(counts) + (pos, carry)


@dataclass(frozen=True)
class Composition:
    source: HumanSource
    actions: tuple[Action, ...]
    goals: tuple[np.ndarray, ...]
    segment_ends: tuple[int, ...]       # row index of each action's last sample
    events: tuple[HumanEvent, ...]
    final: Snapshot


def compose_actions(actions: Sequence[Action], snap: Snapshot,
                    durations: dict[str, int] | None = None,
                    rng: np.random.Generator | None = None) -> Composition:
    """Ground a high-level action sequence into a continuous trajectory.

    With ``rng`` every walk gets a sampled pace, standing in for the sample
    variation of a stochastic sequence model; without it the motion is fixed.
    """
    durations = HUMAN_DURATIONS if durations is None else durations
    traj = HumanTrajectory.stationary(snap.human, 1, snap.carried)
    goals, ends, events = [], [], []
    for k, a in enumerate(actions):
        nxt = actions[k + 1] if k + 1 < len(actions) else None
        g = extract_goal(a, snap, nxt)
        n = int(durations[a[0]])
        if rng is not None and a[0] == "go-to":
            n = max(1, int(round(n * rng.uniform(1 - PACE_JITTER, 1 + PACE_JITTER))))
        kind = "pelvis" if a[0] == "go-to" else "hand"
        pelvis, hand = generate_lowlevel(snap.human, g if kind == "hand" else g[:2], kind, n)
        carried = [snap.carried] * n
        if a[0] == "pick-up":
            obj = pick_target(snap, a[1], snap.location().name, snap.human.pelvis)
        snap = snap.with_human(HumanConfig(pelvis[-1].copy(), hand[-1].copy()))
        if a[0] == "pick-up":
            snap = snap.picked(obj)
            carried[-1] = obj
        elif a[0] == "place":
            carried[-1] = None
        traj = traj.extended(pelvis, hand, carried)
        if a[0] == "place":
            obj = snap.carried
            snap = snap.placed(nearest_surface(snap.workspace, snap.human.pelvis).name, g)
        if a[0] in ("pick-up", "place"):
            events.append(HumanEvent(len(traj) - 1, "pick" if a[0] == "pick-up" else "place", obj))
        goals.append(g)
        ends.append(len(traj) - 1)
    src = HumanSource("hierarchical", traj, traj, dict(actions=[":".join(a) for a in actions]))
    return Composition(src, tuple(actions), tuple(goals), tuple(ends), tuple(events), snap)


def compose_prediction(model: IrlModel, snap: Snapshot, seed: int | None = 0, s0: tuple | None = None,
                       goal: Callable[[tuple], bool] | None = None, max_steps: int = 100) -> Composition:
    """Roll out the high-level policy and ground every action into motion."""
    s0 = mdp_state(model.mdp, snap) if s0 is None else tuple(s0)
    actions = rollout_policy(model, s0, goal, seed, max_steps=max_steps)
    # the pace stream is separate so the sampled actions do not depend on it
    rng = None if seed is None else np.random.default_rng([seed, 1])
    comp = compose_actions(actions, snap, rng=rng)
    comp.source.info.update(seed=seed)
    return comp


def snapshot_of(x: GeometricState, workspace: Workspace) -> Snapshot:
    return Snapshot.from_state(x, workspace)
