"""Planar kinematic tree for robot, human and movable objects.

Frames carry a planar pose (x, y, phi) plus a z offset.  Objects hang either
under a surface frame through a stable planar joint or under a carrier (robot
gripper, human hand) through a stable free joint; pick/place swap one for the
other.  Symbolic propositions are read off the tree: an object's joint decides
``on`` / ``agent-carry`` / ``human-carry`` and distances decide ``agent-at``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import numpy as np

from .pddl import Domain, GroundedAction

WORLD = "world"
ROBOT = "robot"
GRIPPER = "robot_gripper"
HUMAN = "human"
HAND = "human_hand"

AT_RADIUS = 0.6
GRASP_TOLERANCE = 0.05
PLACE_CLEARANCE = 0.15


class KinematicsError(ValueError):
    pass


class UnknownFrame(KinematicsError, KeyError):
    pass


class GraspToleranceViolated(KinematicsError):
    pass


class ObjectNotAttached(KinematicsError):
    """The object is not attached to the parent the action expects."""


class PlacementOffSurface(KinematicsError):
    pass


class SurfaceFull(KinematicsError):
    pass


class JointKind(enum.Enum):
    FIXED = "fixed"
    PLANAR = "planar-xyphi"
    FREE = "free-6d"


@dataclass(frozen=True)
class Pose:
    x: float = 0.0
    y: float = 0.0
    phi: float = 0.0
    z: float = 0.0

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def compose(self, local: "Pose") -> "Pose":
        c, s = math.cos(self.phi), math.sin(self.phi)
        return Pose(self.x + c * local.x - s * local.y,
                    self.y + s * local.x + c * local.y,
                    self.phi + local.phi,
                    self.z + local.z)

    def inverse(self) -> "Pose":
        c, s = math.cos(self.phi), math.sin(self.phi)
        return Pose(-(c * self.x + s * self.y), -(-s * self.x + c * self.y), -self.phi, -self.z)

    def relative_to(self, parent: "Pose") -> "Pose":
        """Local pose that places ``self`` when composed under ``parent``."""
        return parent.inverse().compose(self)


@dataclass(frozen=True)
class Frame:
    name: str
    parent: str
    joint: JointKind
    local: Pose = Pose()
    stable: bool = False

    def __post_init__(self):
        if self.stable and self.joint is JointKind.FIXED:
            raise KinematicsError(f"frame {self.name}: only planar and free joints can be stable")


class KinematicTree:
    """Value-like frame tree; every edit returns a new tree."""

    def __init__(self, frames: Iterable[Frame] = ()):
        self._frames: dict[str, Frame] = {}
        for f in frames:
            self._insert(f)

    def _insert(self, frame: Frame):
        if frame.name == WORLD or frame.name in self._frames:
            raise KinematicsError(f"duplicate frame {frame.name}")
        if frame.parent != WORLD and frame.parent not in self._frames:
            raise UnknownFrame(f"parent {frame.parent} of {frame.name} not declared")
        self._frames[frame.name] = frame

    def copy(self) -> "KinematicTree":
        t = KinematicTree()
        t._frames = dict(self._frames)
        return t

    def __contains__(self, name) -> bool:
        return name == WORLD or name in self._frames

    def __iter__(self):
        return iter(self._frames.values())

    def __eq__(self, other) -> bool:
        return isinstance(other, KinematicTree) and self._frames == other._frames

    def frame(self, name: str) -> Frame:
        try:
            return self._frames[name]
        except KeyError:
            raise UnknownFrame(name) from None

    def parent(self, name: str) -> str:
        return self.frame(name).parent

    def children(self, name: str) -> list[str]:
        return [f.name for f in self._frames.values() if f.parent == name]

    def with_frame(self, frame: Frame) -> "KinematicTree":
        t = self.copy()
        t._frames.pop(frame.name, None)
        if frame.parent != WORLD and frame.parent not in t._frames:
            raise UnknownFrame(frame.parent)
        # walking up from the new parent must not reach the frame itself
        p = frame.parent
        while p != WORLD:
            if p == frame.name:
                raise KinematicsError(f"reparenting {frame.name} under {frame.parent} creates a cycle")
            p = t._frames[p].parent
        t._frames[frame.name] = frame
        return t

    def with_local(self, name: str, local: Pose) -> "KinematicTree":
        return self.with_frame(replace(self.frame(name), local=local))

    def reparent(self, name: str, parent: str, joint: JointKind, stable: bool) -> "KinematicTree":
        """Move ``name`` under ``parent`` keeping its world pose."""
        world = forward_kinematics(self, name)
        local = world.relative_to(forward_kinematics(self, parent))
        return self.with_frame(Frame(name, parent, joint, local, stable))


def forward_kinematics(tree: KinematicTree, name: str) -> Pose:
    if name == WORLD:
        return Pose()
    chain = []
    f = tree.frame(name)
    while True:
        chain.append(f.local)
        if f.parent == WORLD:
            break
        f = tree.frame(f.parent)
    pose = Pose()
    for local in reversed(chain):
        pose = pose.compose(local)
    return pose


# ---------------------------------------------------------------------------
# workspace geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Surface:
    """Axis-aligned rectangular support surface that is also a symbolic location."""
    name: str
    center: tuple[float, float]
    size: tuple[float, float]
    height: float = 0.75
    at_radius: float = AT_RADIUS
    dock: tuple[float, float] | None = None

    @property
    def dock_xy(self) -> np.ndarray:
        return np.asarray(self.dock if self.dock is not None else self.center, dtype=float)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center) - np.asarray(self.size) / 2

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center) + np.asarray(self.size) / 2

    def contains(self, xy, margin: float = 0.0) -> bool:
        xy = np.asarray(xy, dtype=float)[:2]
        return bool(np.all(xy >= self.lo + margin - 1e-12) and np.all(xy <= self.hi - margin + 1e-12))

    def clamp(self, xy, margin: float = 0.0) -> np.ndarray:
        return np.clip(np.asarray(xy, dtype=float)[:2], self.lo + margin, self.hi - margin)

    def standing_point(self, xy, offset: float) -> np.ndarray:
        """Closest point at distance ``offset`` outside the rectangle boundary."""
        xy = np.asarray(xy, dtype=float)[:2]
        lo, hi = self.lo - offset, self.hi + offset
        inside = np.all(xy > lo) and np.all(xy < hi)
        if not inside:
            return np.clip(xy, lo, hi)
        # push out through the nearest side of the enlarged rectangle
        gaps = [xy[0] - lo[0], hi[0] - xy[0], xy[1] - lo[1], hi[1] - xy[1]]
        side = int(np.argmin(gaps))
        p = xy.copy()
        p[side // 2] = (lo, hi)[side % 2][side // 2]
        return p


@dataclass
class Workspace:
    surfaces: dict[str, Surface]
    object_class: dict[str, str] = field(default_factory=dict)
    gripper_offset: Pose = Pose(0.0, 0.0, 0.0, 0.8)
    grasp_tolerance: float = GRASP_TOLERANCE
    human_grasp_tolerance: float = 0.3
    place_clearance: float = PLACE_CLEARANCE

    def surface(self, name: str) -> Surface:
        try:
            return self.surfaces[name]
        except KeyError:
            raise UnknownFrame(name) from None

    def surface_at(self, xy) -> Surface | None:
        for s in self.surfaces.values():
            if s.contains(xy):
                return s
        return None

    def location_xy(self) -> dict[str, tuple[float, float]]:
        return {n: tuple(s.dock_xy) for n, s in self.surfaces.items()}

    def base_tree(self) -> KinematicTree:
        frames = [Frame(n, WORLD, JointKind.FIXED, Pose(s.center[0], s.center[1], 0.0, s.height))
                  for n, s in self.surfaces.items()]
        frames += [Frame(ROBOT, WORLD, JointKind.PLANAR), Frame(GRIPPER, ROBOT, JointKind.FIXED, self.gripper_offset),
                   Frame(HUMAN, WORLD, JointKind.PLANAR), Frame(HAND, WORLD, JointKind.FREE)]
        return KinematicTree(frames)


@dataclass(frozen=True)
class GeometricState:
    """x_t = (q_t, h_t, o_t): robot pose, human pelvis/hand and object frames at step t."""
    tree: KinematicTree
    t: int = 0

    @classmethod
    def build(cls, workspace: Workspace, robot=(0.0, 0.0, 0.0), pelvis=(0.0, 0.0), hand=None,
              placements: Mapping[str, tuple] = (), t: int = 0) -> "GeometricState":
        tree = workspace.base_tree()
        tree = tree.with_local(ROBOT, Pose(*robot[:3]))
        tree = tree.with_local(HUMAN, Pose(pelvis[0], pelvis[1]))
        hand = (pelvis[0], pelvis[1], 1.0) if hand is None else hand
        tree = tree.with_local(HAND, Pose(hand[0], hand[1], 0.0, hand[2]))
        for obj, where in dict(placements).items():
            surf = workspace.surface(where[0])
            xy = np.asarray(where[1:3], dtype=float)
            tree = tree.with_frame(Frame(obj, surf.name, JointKind.PLANAR,
                                         Pose(*(xy - np.asarray(surf.center)), 0.0, 0.0), stable=True))
        return cls(tree, t)

    @property
    def q(self) -> np.ndarray:
        p = self.tree.frame(ROBOT).local
        return np.array([p.x, p.y, p.phi])

    @property
    def pelvis(self) -> np.ndarray:
        return self.tree.frame(HUMAN).local.xy

    @property
    def hand(self) -> np.ndarray:
        p = forward_kinematics(self.tree, HAND)
        return np.array([p.x, p.y, p.z])

    @property
    def objects(self) -> list[str]:
        fixed = {ROBOT, GRIPPER, HUMAN, HAND}
        return sorted(f.name for f in self.tree
                      if f.name not in fixed and f.joint is not JointKind.FIXED)

    def object_pose(self, name: str) -> Pose:
        return forward_kinematics(self.tree, name)

    def attachments(self) -> dict[str, str]:
        return {o: self.tree.parent(o) for o in self.objects}

    def with_robot(self, q) -> "GeometricState":
        return replace(self, tree=self.tree.with_local(ROBOT, Pose(float(q[0]), float(q[1]), float(q[2]))))

    def with_human(self, pelvis, hand) -> "GeometricState":
        tree = self.tree.with_local(HUMAN, Pose(float(pelvis[0]), float(pelvis[1])))
        tree = tree.with_local(HAND, Pose(float(hand[0]), float(hand[1]), 0.0, float(hand[2])))
        return replace(self, tree=tree)

    def with_tree(self, tree: KinematicTree) -> "GeometricState":
        return replace(self, tree=tree)

    def at_time(self, t: int) -> "GeometricState":
        return replace(self, t=t)

    def occupied(self, surface: str) -> list[np.ndarray]:
        return [self.object_pose(o).xy for o in self.objects if self.tree.parent(o) == surface]


def deduce_state(x: GeometricState, domain: Domain, workspace: Workspace) -> frozenset:
    """Read the symbolic state off the kinematic tree."""
    props = set()
    robot_xy = x.q[:2]
    pelvis = x.pelvis
    has = domain.has_predicate
    for name, surf in workspace.surfaces.items():
        center = np.asarray(surf.center, dtype=float)
        if has("agent-at") and np.linalg.norm(robot_xy - center) <= surf.at_radius:
            props.add(("agent-at", name))
        if has("human-at") and np.linalg.norm(pelvis - center) <= surf.at_radius:
            props.add(("human-at", name))
    carrying = False
    for obj in x.objects:
        f = x.tree.frame(obj)
        if not f.stable:
            continue
        if f.joint is JointKind.PLANAR and f.parent in workspace.surfaces:
            if has("on"):
                props.add(("on", obj, f.parent))
        elif f.joint is JointKind.FREE and f.parent == GRIPPER:
            carrying = True
            if has("agent-carry"):
                props.add(("agent-carry", obj))
        elif f.joint is JointKind.FREE and f.parent == HAND:
            if has("human-carry"):
                props.add(("human-carry", obj))
    if has("agent-free") and not carrying:
        props.add(("agent-free",))
    return frozenset(props)


def attach_to_carrier(tree: KinematicTree, obj: str, carrier: str) -> KinematicTree:
    return tree.reparent(obj, carrier, JointKind.FREE, stable=True)


def attach_to_surface(tree: KinematicTree, obj: str, surface: Surface) -> KinematicTree:
    world = forward_kinematics(tree, obj)
    if not surface.contains(world.xy):
        raise PlacementOffSurface(f"{obj} released at {world.xy.round(3)} outside {surface.name}")
    local = Pose(world.x - surface.center[0], world.y - surface.center[1], world.phi, 0.0)
    return tree.with_frame(Frame(obj, surface.name, JointKind.PLANAR, local, stable=True))


def apply_switch(tree: KinematicTree, action: GroundedAction, workspace: Workspace) -> KinematicTree:
    """Kinematic switch realizing a pick or place at the end of its phase."""
    if action.name == "pick":
        obj, loc = action.args
        if obj not in tree:
            raise UnknownFrame(obj)
        if tree.parent(obj) != loc:
            raise ObjectNotAttached(f"{obj} is attached to {tree.parent(obj)}, expected {loc}")
        gap = np.linalg.norm(forward_kinematics(tree, GRIPPER).xy - forward_kinematics(tree, obj).xy)
        if gap > workspace.grasp_tolerance:
            raise GraspToleranceViolated(f"gripper {gap:.3f} m from {obj}")
        return attach_to_carrier(tree, obj, GRIPPER)
    if action.name == "place":
        obj, loc = action.args
        if obj not in tree:
            raise UnknownFrame(obj)
        if tree.parent(obj) != GRIPPER:
            raise ObjectNotAttached(f"{obj} is attached to {tree.parent(obj)}, expected {GRIPPER}")
        return attach_to_surface(tree, obj, workspace.surface(loc))
    raise KinematicsError(f"no kinematic switch for {action.name}")


def human_pick(tree: KinematicTree, obj: str, workspace: Workspace) -> KinematicTree:
    parent = tree.parent(obj)
    if parent not in workspace.surfaces:
        raise ObjectNotAttached(f"{obj} is attached to {parent}, not a surface")
    gap = np.linalg.norm(forward_kinematics(tree, HAND).xy - forward_kinematics(tree, obj).xy)
    if gap > workspace.human_grasp_tolerance:
        raise GraspToleranceViolated(f"hand {gap:.3f} m from {obj}")
    return attach_to_carrier(tree, obj, HAND)


def human_place(tree: KinematicTree, obj: str, workspace: Workspace) -> KinematicTree:
    if tree.parent(obj) != HAND:
        raise ObjectNotAttached(f"{obj} is not in the human hand")
    xy = forward_kinematics(tree, obj).xy
    surface = workspace.surface_at(xy)
    if surface is None:
        raise PlacementOffSurface(f"{obj} released at {xy.round(3)} away from any surface")
    return attach_to_surface(tree, obj, surface)


def closest_free_point(surface: Surface, ref, discs: Sequence[tuple[Sequence[float], float]],
                       margin: float = 0.0) -> np.ndarray:
    """Closest point to ``ref`` inside ``surface`` (shrunk by ``margin``) outside every disc.

    ``discs`` are (center, radius) pairs.  The minimizer lies at the clamped
    reference, on a disc boundary, at a disc/disc or disc/edge intersection, on
    an edge, or at a corner; all such candidates are enumerated.
    """
    ref = np.asarray(ref, dtype=float)[:2]
    lo, hi = surface.lo + margin, surface.hi - margin
    if np.any(lo > hi):
        raise SurfaceFull(f"{surface.name} is smaller than the margin")
    centers = [np.asarray(c, dtype=float)[:2] for c, _ in discs]
    radii = [float(r) for _, r in discs]

    cands = [np.clip(ref, lo, hi)]
    cands += [np.array([x, y]) for x in (lo[0], hi[0]) for y in (lo[1], hi[1])]
    # projections of ref on each edge
    cands += [np.array([x, np.clip(ref[1], lo[1], hi[1])]) for x in (lo[0], hi[0])]
    cands += [np.array([np.clip(ref[0], lo[0], hi[0]), y]) for y in (lo[1], hi[1])]
    for c, r in zip(centers, radii):
        d = ref - c
        n = np.linalg.norm(d)
        u = d / n if n > 1e-12 else np.array([1.0, 0.0])
        cands.append(c + r * u)
        for axis, values in ((0, (lo[0], hi[0])), (1, (lo[1], hi[1]))):
            for v in values:
                off = v - c[axis]
                if abs(off) <= r:
                    w = math.sqrt(r * r - off * off)
                    for sgn in (-1.0, 1.0):
                        p = c.copy()
                        p[axis] = v
                        p[1 - axis] = c[1 - axis] + sgn * w
                        cands.append(p)
    for (c1, r1), (c2, r2) in combinations(zip(centers, radii), 2):
        d = np.linalg.norm(c2 - c1)
        if d < 1e-12 or d > r1 + r2 or d < abs(r1 - r2):
            continue
        a = (r1 * r1 - r2 * r2 + d * d) / (2 * d)
        hgt = math.sqrt(max(r1 * r1 - a * a, 0.0))
        base = c1 + a * (c2 - c1) / d
        perp = np.array([-(c2 - c1)[1], (c2 - c1)[0]]) / d
        cands += [base + hgt * perp, base - hgt * perp]

    best, best_d = None, math.inf
    tol = 1e-9
    for p in cands:
        if np.any(p < lo - tol) or np.any(p > hi + tol):
            continue
        if any(np.linalg.norm(p - c) < r - tol for c, r in zip(centers, radii)):
            continue
        d = float(np.linalg.norm(p - ref))
        if d < best_d - 1e-12:
            best, best_d = p, d
    if best is None:
        raise SurfaceFull(f"no free point on {surface.name}")
    return np.clip(best, lo, hi)
