"""Symbolic state semantics and tie-shortest skeleton search."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .costs import DT, W_ACC, W_VEL, interpolation_cost
from .pddl import GroundedAction

SymbolicState = frozenset

# fixed phase lengths in steps at 10 Hz
DEFAULT_DURATIONS = {"move": 30, "pick": 5, "place": 5}


class ActionNotApplicable(ValueError):
    pass


class NoSkeletonFound(RuntimeError):
    pass


class DepthBoundExceeded(NoSkeletonFound):
    """Search stopped at the depth bound before proving the goal unreachable."""


class GoalUnreachable(NoSkeletonFound):
    """The reachable state space was exhausted without meeting the goal."""


@dataclass(frozen=True)
class Skeleton:
    actions: tuple[GroundedAction, ...]
    phase_durations: tuple[int, ...]
    cost: float = 0.0
    origin_time: int = 0

    def __post_init__(self):
        if len(self.actions) != len(self.phase_durations):
            raise ValueError("one duration per action required")
        if self.phase_durations and min(self.phase_durations) <= 0:
            raise ValueError("phase durations must be positive")

    def __len__(self):
        return len(self.actions)

    @property
    def is_empty(self) -> bool:
        return not self.actions

    @property
    def total_duration(self) -> int:
        return int(sum(self.phase_durations))

    def labels(self) -> tuple[str, ...]:
        return tuple(a.label for a in self.actions)

    def suffix(self, start: int) -> "Skeleton":
        return replace(self, actions=self.actions[start:], phase_durations=self.phase_durations[start:])


def applicable(s: Iterable, a: GroundedAction) -> bool:
    s = s if isinstance(s, (set, frozenset)) else frozenset(s)
    return a.pre_pos <= s and a.pre_neg.isdisjoint(s)


def exec_action(s: Iterable, a: GroundedAction) -> SymbolicState:
    s = frozenset(s)
    if not applicable(s, a):
        raise ActionNotApplicable(f"{a.label} is not applicable")
    return (s - a.delete) | a.add


def heuristic(s: Iterable, goal: Iterable) -> int:
    """Number of goal propositions missing from ``s``."""
    return len(frozenset(goal) - frozenset(s))


def run_skeleton(s: Iterable, actions: Sequence[GroundedAction]) -> SymbolicState:
    s = frozenset(s)
    for a in actions:
        s = exec_action(s, a)
    return s


def durations_for(actions: Sequence[GroundedAction], durations: Mapping[str, int] | None = None) -> tuple[int, ...]:
    durations = DEFAULT_DURATIONS if durations is None else durations
    return tuple(int(durations[a.name]) for a in actions)


def default_depth_bound(goal) -> int:
    # each pick-and-place goal needs up to 4 actions (move, pick, move, place)
    return 4 * len(goal) + 2


class _Compiled:
    """Bitmask form of a grounded action set for fast successor generation."""

    def __init__(self, actions: Sequence[GroundedAction], extra_props: Iterable):
        props = set(extra_props)
        for a in actions:
            props |= a.pre_pos | a.pre_neg | a.add | a.delete
        self.props = sorted(props)
        self.index = {p: i for i, p in enumerate(self.props)}
        # sorted so that index tuples order like action-name tuples
        actions = sorted(actions, key=GroundedAction.sort_key)
        self.actions = actions
        self.pre_pos = [self.mask(a.pre_pos) for a in actions]
        self.pre_neg = [self.mask(a.pre_neg) for a in actions]
        self.add = [self.mask(a.add) for a in actions]
        self.keep = [~self.mask(a.delete) for a in actions]
        self.unconditional = []
        self.triggered: dict[int, list[int]] = {}
        for i, a in enumerate(actions):
            if a.pre_pos:
                trigger = self.index[min(a.pre_pos)]
                self.triggered.setdefault(trigger, []).append(i)
            else:
                self.unconditional.append(i)
        self.trigger_bits = sorted(self.triggered)

    def mask(self, props) -> int:
        m = 0
        for p in props:
            m |= 1 << self.index[p]
        return m


def search_skeletons(s0: Iterable, goal: Iterable, actions: Sequence[GroundedAction], *,
                     depth_bound: int | None = None, guided: bool = True,
                     durations: Mapping[str, int] | None = None, origin_time: int = 0) -> list[Skeleton]:
    """All minimal-length action sequences reaching ``goal`` from ``s0``.

    Unit-cost best-first search ordered by g + h, with h the missing-goal count
    scaled down by the largest number of goal propositions one action can add
    (so it never overestimates).  All equal-cost predecessors are kept and the
    ties are enumerated afterwards, sorted lexicographically by action names.

    Returns ``[Skeleton(())]`` when ``s0`` already satisfies the goal.  Raises
    :class:`DepthBoundExceeded` or :class:`GoalUnreachable` when nothing is found.
    """
    s0 = frozenset(s0)
    goal = frozenset(goal)
    if goal <= s0:
        return [Skeleton((), (), 0.0, origin_time)]
    if not actions:
        raise GoalUnreachable("no grounded actions")
    bound = default_depth_bound(goal) if depth_bound is None else depth_bound
    comp = _Compiled(actions, s0 | goal)
    goal_mask = comp.mask(goal)
    max_gain = max(1, max(len(a.add & goal) for a in actions))

    def h(s: int) -> int:
        if not guided:
            return 0
        return -(-(goal_mask & ~s).bit_count() // max_gain)

    unconditional, trigger_bits, triggered = comp.unconditional, comp.trigger_bits, comp.triggered
    pre_pos, pre_neg, keep, add = comp.pre_pos, comp.pre_neg, comp.keep, comp.add
    start = comp.mask(s0)
    g = {start: 0}
    preds: dict[int, list[tuple[int, int]]] = {start: []}
    counter = 0
    heap = [(h(start), 0, counter, start)]
    best = math.inf
    goals: list[int] = []
    bound_hit = False
    while heap:
        f, gs, _, s = heapq.heappop(heap)
        if gs > g[s]:
            continue
        if f > best:
            break
        if s & goal_mask == goal_mask:
            if gs < best:
                best, goals = gs, []
            goals.append(s)
            continue
        if gs >= bound:
            bound_hit = True
            continue
        g2 = gs + 1
        cands = list(unconditional)
        for bit in trigger_bits:
            if s >> bit & 1:
                cands.extend(triggered[bit])
        for ai in cands:
            pp = pre_pos[ai]
            if s & pp != pp or s & pre_neg[ai]:
                continue
            s2 = (s & keep[ai]) | add[ai]
            old = g.get(s2)
            if old is None or g2 < old:
                hs2 = h(s2)
                if g2 + hs2 > bound:
                    bound_hit = True
                    continue
                g[s2] = g2
                preds[s2] = [(s, ai)]
                counter += 1
                heapq.heappush(heap, (g2 + hs2, g2, counter, s2))
            elif g2 == old:
                preds[s2].append((s, ai))
    if not goals:
        if bound_hit:
            raise DepthBoundExceeded(f"no plan within depth bound {bound}")
        raise GoalUnreachable("goal unreachable from initial state")

    sequences: list[tuple[int, ...]] = []

    def walk(s: int, tail: tuple[int, ...]):
        if s == start and g[s] == 0:
            sequences.append(tail)
            return
        for p, ai in preds[s]:
            if g[p] + 1 == g[s]:
                walk(p, (ai,) + tail)

    for s in set(goals):
        walk(s, ())
    durations = DEFAULT_DURATIONS if durations is None else durations
    dur = [int(durations[a.name]) for a in comp.actions]
    skeletons = []
    for seq in sorted(set(sequences)):
        skeletons.append(Skeleton(tuple(comp.actions[i] for i in seq), tuple(dur[i] for i in seq),
                                  0.0, origin_time))
    return skeletons


@dataclass(frozen=True)
class RankingGeometry:
    """Keyframe lookup used to ground skeletons with straight-line paths."""
    start: tuple[float, float]
    location_xy: Mapping[str, tuple[float, float]]
    object_xy: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    dt: float = DT
    w_vel: float = W_VEL
    w_acc: float = W_ACC

    def keyframe(self, a: GroundedAction) -> tuple[float, float]:
        if a.name == "pick" and a.args[0] in self.object_xy:
            return self.object_xy[a.args[0]]
        # move(L) and place(X, L) target the location; L is the last argument
        return self.location_xy[a.args[-1]]


def rank_skeletons(skeletons: Sequence[Skeleton], geometry: RankingGeometry) -> list[Skeleton]:
    """Attach interpolation costs and sort ascending (stable)."""
    skeletons = list(skeletons)
    if len(skeletons) <= 1 and (not skeletons or skeletons[0].is_empty):
        return skeletons
    slot: dict[int, int] = {}
    table: list = []
    by_len: dict[int, list[int]] = {}
    for i, sk in enumerate(skeletons):
        by_len.setdefault(len(sk), []).append(i)
        for a in sk.actions:
            if id(a) not in slot:
                slot[id(a)] = len(table)
                table.append(geometry.keyframe(a))
    table = np.asarray(table, dtype=float).reshape(-1, 2)
    costs = np.zeros(len(skeletons))
    for k, idx in by_len.items():
        if k == 0:
            continue
        rows = np.array([[slot[id(a)] for a in skeletons[i].actions] for i in idx])
        durs = np.array([skeletons[i].phase_durations for i in idx], dtype=float)
        costs[idx] = interpolation_cost(geometry.start, table[rows], durs, geometry.dt, geometry.w_vel,
                                        geometry.w_acc)
    order = np.argsort(costs, kind="stable")
    return [Skeleton(skeletons[i].actions, skeletons[i].phase_durations, float(costs[i]), skeletons[i].origin_time)
            for i in order]
