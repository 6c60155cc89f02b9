"""Counting MDP over object classes and locations for the high-level human policy.

A state is the tuple ``(count per (class, location) slot ..., humanPos, carry)``
where ``carry`` is 0 for empty hands or ``1 + class index``.  Actions are
``("go-to", location)``, ``("pick-up", class)`` and ``("place",)``; transitions
are deterministic and illegal actions are masked out.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

Action = tuple  # ("go-to", "shelf1") | ("pick-up", "cup") | ("place",)


class MdpError(ValueError):
    pass


class IllegalTransition(MdpError):
    pass


def action_label(a: Action) -> str:
    return ":".join(a)


def parse_action(label: str) -> Action:
    return tuple(label.split(":"))


@dataclass(frozen=True)
class SetTableMdp:
    classes: tuple[str, ...]
    locations: tuple[str, ...]
    slots: tuple[tuple[str, str], ...]          # (class, location) per count component
    totals: Mapping[str, int]
    goal: Mapping[str, int]                     # class -> required count at goal_location
    goal_location: str = "table"
    max_states: int = 100_000

    def __post_init__(self):
        for c, loc in self.slots:
            if c not in self.classes or loc not in self.locations:
                raise MdpError(f"slot ({c}, {loc}) uses an undeclared class or location")
        for c in self.classes:
            if (c, self.goal_location) not in self.slots and self.goal.get(c, 0):
                raise MdpError(f"goal asks for {c} on {self.goal_location} but no such slot")
            if self.goal.get(c, 0) > self.totals.get(c, 0):
                raise MdpError(f"goal needs more {c} than exist")

    # --- tuple layout -------------------------------------------------------

    @property
    def n_components(self) -> int:
        return len(self.slots) + 2

    @property
    def pos_index(self) -> int:
        return len(self.slots)

    @property
    def carry_index(self) -> int:
        return len(self.slots) + 1

    def slot_index(self, cls: str, loc: str) -> int | None:
        try:
            return self.slots.index((cls, loc))
        except ValueError:
            return None

    @cached_property
    def actions(self) -> tuple[Action, ...]:
        return (tuple(("go-to", l) for l in self.locations) + tuple(("pick-up", c) for c in self.classes)
                + (("place",),))

    def component_ranges(self) -> list[int]:
        """Number of distinct values each tuple component can take."""
        out = [self.totals[c] + 1 for c, _ in self.slots]
        return out + [len(self.locations), len(self.classes) + 1]

    # --- enumeration ---------------------------------------------------------

    @cached_property
    def states(self) -> tuple[tuple[int, ...], ...]:
        per_class_slots = {c: [i for i, (cc, _) in enumerate(self.slots) if cc == c] for c in self.classes}
        size_hint = 1
        for c in self.classes:
            k = len(per_class_slots[c])
            n = self.totals[c]
            size_hint *= max(1, int(math.comb(n + k - 1, max(k - 1, 0)))) if k else 1
        if size_hint * len(self.locations) * (len(self.classes) + 1) > self.max_states:
            raise MdpError("state space is too large to enumerate")
        out = []
        for carry in range(len(self.classes) + 1):
            carried = self.classes[carry - 1] if carry else None
            options = []
            for c in self.classes:
                n = self.totals[c] - (1 if c == carried else 0)
                if n < 0:
                    options = None
                    break
                options.append([(per_class_slots[c], split) for split in _compositions(n, len(per_class_slots[c]))])
            if options is None:
                continue
            for combo in itertools.product(*options):
                counts = [0] * len(self.slots)
                for idxs, split in combo:
                    for i, v in zip(idxs, split):
                        counts[i] = v
                for pos in range(len(self.locations)):
                    out.append(tuple(counts) + (pos, carry))
        return tuple(sorted(out))

    @cached_property
    def index(self) -> dict[tuple[int, ...], int]:
        return {s: i for i, s in enumerate(self.states)}

    @cached_property
    def next_state(self) -> np.ndarray:
        """(S, A) successor indices, -1 where the action is illegal."""
        nxt = np.full((len(self.states), len(self.actions)), -1, dtype=np.int64)
        for i, s in enumerate(self.states):
            for j, a in enumerate(self.actions):
                t = self.step(s, a)
                if t is not None:
                    nxt[i, j] = self.index[t]
        return nxt

    @cached_property
    def terminal(self) -> np.ndarray:
        return np.array([self.is_goal(s) for s in self.states])

    def step(self, s: Sequence[int], a: Action) -> tuple[int, ...] | None:
        s = list(s)
        pos, carry = s[self.pos_index], s[self.carry_index]
        here = self.locations[pos]
        if a[0] == "go-to":
            if a[1] == here:
                return None
            s[self.pos_index] = self.locations.index(a[1])
        elif a[0] == "pick-up":
            i = self.slot_index(a[1], here)
            if carry or i is None or s[i] == 0:
                return None
            s[i] -= 1
            s[self.carry_index] = self.classes.index(a[1]) + 1
        elif a[0] == "place":
            if not carry:
                return None
            i = self.slot_index(self.classes[carry - 1], here)
            if i is None:
                return None
            s[i] += 1
            s[self.carry_index] = 0
        else:
            raise MdpError(f"unknown action {a}")
        return tuple(s)

    def legal(self, s, a) -> bool:
        return self.step(s, a) is not None

    def is_goal(self, s: Sequence[int]) -> bool:
        if s[self.carry_index]:
            return False
        for c, need in self.goal.items():
            i = self.slot_index(c, self.goal_location)
            if need and (i is None or s[i] < need):
                return False
        return True

    # --- features -------------------------------------------------------------

    @cached_property
    def feature_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.component_ranges())[:-1]])

    @property
    def n_features(self) -> int:
        return int(sum(self.component_ranges()))

    @cached_property
    def features(self) -> np.ndarray:
        """One-hot indicator per (component, value); shape (S, F)."""
        phi = np.zeros((len(self.states), self.n_features))
        offs = self.feature_offsets
        for i, s in enumerate(self.states):
            phi[i, offs + np.asarray(s)] = 1.0
        return phi

    # --- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return dict(classes=list(self.classes), locations=list(self.locations),
                    slots=[list(s) for s in self.slots], totals=dict(self.totals), goal=dict(self.goal),
                    goal_location=self.goal_location)

    @classmethod
    def from_dict(cls, d: Mapping) -> "SetTableMdp":
        try:
            return cls(tuple(d["classes"]), tuple(d["locations"]), tuple(tuple(s) for s in d["slots"]),
                       dict(d["totals"]), dict(d["goal"]), d.get("goal_location", "table"))
        except KeyError as e:
            raise MdpError(f"missing MDP field {e}") from None


def _compositions(n: int, k: int):
    if k == 0:
        if n == 0:
            yield ()
        return
    if k == 1:
        yield (n,)
        return
    for first in range(n, -1, -1):
        for rest in _compositions(n - first, k - 1):
            yield (first,) + rest


@dataclass
class Demonstration:
    states: list[tuple[int, ...]]
    actions: list[Action]

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1:
            raise MdpError("a demonstration has one more state than actions")

    def to_dict(self) -> dict:
        return dict(states=[list(s) for s in self.states], actions=[action_label(a) for a in self.actions])

    @classmethod
    def from_dict(cls, d: Mapping) -> "Demonstration":
        return cls([tuple(s) for s in d["states"]], [parse_action(a) for a in d["actions"]])


def check_demonstration(mdp: SetTableMdp, demo: Demonstration) -> None:
    for k, (s, a, t) in enumerate(zip(demo.states, demo.actions, demo.states[1:])):
        if tuple(s) not in mdp.index:
            raise IllegalTransition(f"step {k}: state {s} is not in the MDP")
        if mdp.step(s, a) != tuple(t):
            raise IllegalTransition(f"step {k}: {action_label(a)} does not lead from {s} to {t}")
    if not mdp.is_goal(demo.states[-1]):
        raise MdpError("demonstration does not end in a goal state")


def scripted_expert(mdp: SetTableMdp, s0: Sequence[int], rng: np.random.Generator | None = None,
                    max_steps: int = 200) -> Demonstration:
    """Fetch-and-place expert: pick a missing class, fetch one from a shelf, carry it to the goal location."""
    s = tuple(s0)
    states, actions = [s], []

    def do(a):
        nonlocal s
        t = mdp.step(s, a)
        if t is None:
            raise MdpError(f"expert chose illegal {action_label(a)} in {s}")
        s = t
        states.append(s)
        actions.append(a)

    goal_i = {c: mdp.slot_index(c, mdp.goal_location) for c in mdp.classes}
    while not mdp.is_goal(s):
        if len(actions) > max_steps:
            raise MdpError("expert exceeded its step budget")
        carry = s[mdp.carry_index]
        if carry:
            if mdp.locations[s[mdp.pos_index]] != mdp.goal_location:
                do(("go-to", mdp.goal_location))
            do(("place",))
            continue
        missing = [c for c in mdp.classes if mdp.goal.get(c, 0) > (s[goal_i[c]] if goal_i[c] is not None else 0)]
        c = missing[0] if rng is None else missing[int(rng.integers(len(missing)))]
        sources = [loc for loc in mdp.locations
                   if loc != mdp.goal_location and mdp.slot_index(c, loc) is not None
                   and s[mdp.slot_index(c, loc)] > 0]
        here = mdp.locations[s[mdp.pos_index]]
        loc = here if here in sources else (sources[0] if rng is None else sources[int(rng.integers(len(sources)))])
        if loc != here:
            do(("go-to", loc))
        do(("pick-up", c))
    return Demonstration(states, actions)


def load_demonstrations(path) -> list[Demonstration]:
    with open(path) as fh:
        data = json.load(fh)
    items = data["demonstrations"] if isinstance(data, dict) else data
    return [Demonstration.from_dict(d) for d in items]


def save_demonstrations(demos: Iterable[Demonstration], path) -> None:
    with open(path, "w") as fh:
        json.dump({"demonstrations": [d.to_dict() for d in demos]}, fh, indent=1)


def load_mdp(path) -> SetTableMdp:
    with open(path) as fh:
        data = json.load(fh)
    return SetTableMdp.from_dict(data.get("mdp", data))
