"""Heuristics turning high-level human actions into 3D goal points."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from ..kinematics import (HAND, PLACE_CLEARANCE, GeometricState, Surface, SurfaceFull, Workspace,
                          closest_free_point)
from .lowlevel import HumanConfig
from .mdp import Action

STANDOFF = 0.35        # m between a standing human's pelvis and the surface edge
PLACE_MARGIN = 0.05    # keep placed objects this far inside the surface edge


class GoalExtractionError(ValueError):
    pass


@dataclass(frozen=True)
class Snapshot:
    """What the predictor knows about the world: object positions and the human."""
    workspace: Workspace
    objects: Mapping[str, tuple[str | None, tuple[float, float, float]]]  # name -> (surface|None, xyz)
    human: HumanConfig
    carried: str | None = None

    @classmethod
    def from_state(cls, x: GeometricState, workspace: Workspace) -> "Snapshot":
        objects, carried = {}, None
        for o in x.objects:
            p = x.object_pose(o)
            parent = x.tree.parent(o)
            surf = parent if parent in workspace.surfaces else None
            if parent == HAND:
                carried = o
            objects[o] = (surf, (p.x, p.y, p.z))
        return cls(workspace, objects, HumanConfig.at(x.pelvis, x.hand), carried)

    def on(self, surface: str) -> list[str]:
        return sorted(o for o, (s, _) in self.objects.items() if s == surface)

    def occupied(self, surface: str) -> list[np.ndarray]:
        return [np.asarray(self.objects[o][1][:2]) for o in self.on(surface)]

    def location(self) -> Surface:
        """Surface the human stands at (closest rectangle to the pelvis)."""
        return nearest_surface(self.workspace, self.human.pelvis)

    def with_human(self, human: HumanConfig) -> "Snapshot":
        return replace(self, human=human)

    def picked(self, obj: str) -> "Snapshot":
        objects = dict(self.objects)
        objects[obj] = (None, tuple(self.human.hand))
        return replace(self, objects=objects, carried=obj)

    def placed(self, surface: str, xyz) -> "Snapshot":
        objects = dict(self.objects)
        objects[self.carried] = (surface, tuple(float(v) for v in xyz))
        return replace(self, objects=objects, carried=None)


def nearest_surface(workspace: Workspace, xy) -> Surface:
    xy = np.asarray(xy, dtype=float)[:2]
    return min(workspace.surfaces.values(), key=lambda s: float(np.linalg.norm(xy - s.clamp(xy))))


def approach_point(surface: Surface, target_xy, from_xy, offset: float = STANDOFF) -> np.ndarray:
    """Standing point ``offset`` outside an edge, nearest to ``target_xy``; ties go to the side facing ``from_xy``."""
    t = np.asarray(target_xy, dtype=float)[:2]
    f = np.asarray(from_xy, dtype=float)[:2]
    lo, hi = surface.lo, surface.hi
    cx, cy = np.clip(t, lo, hi)
    cands = [np.array([lo[0] - offset, cy]), np.array([hi[0] + offset, cy]),
             np.array([cx, lo[1] - offset]), np.array([cx, hi[1] + offset])]
    return min(cands, key=lambda p: (round(float(np.linalg.norm(p - t)), 9), float(np.linalg.norm(p - f))))


def class_of(workspace: Workspace, obj: str) -> str:
    return workspace.object_class.get(obj, obj)


def pick_target(snap: Snapshot, cls: str, surface: str, near) -> str:
    """Nearest object of class ``cls`` on ``surface``; ``cls`` may also name one object directly."""
    if snap.objects.get(cls, (None,))[0] == surface:
        return cls
    cands = [o for o in snap.on(surface) if class_of(snap.workspace, o) == cls]
    if not cands:
        raise GoalExtractionError(f"no {cls} on {surface}")
    near = np.asarray(near, dtype=float)[:2]
    return min(cands, key=lambda o: (float(np.linalg.norm(np.asarray(snap.objects[o][1][:2]) - near)), o))


def place_point(snap: Snapshot, surface: Surface, clearance: float = PLACE_CLEARANCE,
                margin: float = PLACE_MARGIN) -> np.ndarray:
    discs = [(c, clearance) for c in snap.occupied(surface.name)]
    xy = closest_free_point(surface, snap.human.pelvis, discs, margin=margin)
    return np.array([xy[0], xy[1], surface.height])


def extract_goal(action: Action, snap: Snapshot, next_action: Action | None = None, *,
                 standoff: float = STANDOFF, clearance: float = PLACE_CLEARANCE,
                 margin: float = PLACE_MARGIN) -> np.ndarray:
    """3D goal for ``action`` given the current snapshot.

    place: closest free point on the human's surface to the pelvis, at least
    ``clearance`` from every object there and ``margin`` inside the edge
    (raises ``SurfaceFull``).
    pick-up: position of the nearest object of that class at the human's surface.
    go-to: standing point ``standoff`` outside the surface edge, chosen next to
    the object the following pick-up will target (or the nearest edge point).
    """
    kind = action[0]
    if kind == "place":
        if snap.carried is None:
            raise GoalExtractionError("place with empty hands")
        return place_point(snap, snap.location(), clearance, margin)
    if kind == "pick-up":
        obj = pick_target(snap, action[1], snap.location().name, snap.human.pelvis)
        return np.asarray(snap.objects[obj][1], dtype=float)
    if kind == "go-to":
        surface = snap.workspace.surface(action[1])
        target = surface.clamp(snap.human.pelvis)
        if next_action is not None and next_action[0] == "pick-up":
            try:
                obj = pick_target(snap, next_action[1], surface.name, snap.human.pelvis)
                target = np.asarray(snap.objects[obj][1][:2])
            except GoalExtractionError:
                pass
        p = approach_point(surface, target, snap.human.pelvis, standoff)
        return np.array([p[0], p[1], 0.0])
    raise GoalExtractionError(f"unknown action {action}")


__all__ = ["Snapshot", "extract_goal", "approach_point", "nearest_surface", "GoalExtractionError",
           "SurfaceFull", "STANDOFF", "class_of", "pick_target"]
