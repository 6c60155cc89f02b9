"""Scenario files: JSON description of one planning experiment.

Schema (version 1)::

    {
      "schema_version": 1,
      "name": "set_table_3obj",
      "domain": "set_table.pddl",            # relative to the file, else bundled data
      "problem": "set_table_3obj.pddl",      # :init is checked against the geometry
      "geometry": {
        "surfaces": [{"name": "table", "center": [0, 0], "size": [1.6, 0.9],
                      "height": 0.75, "at_radius": 0.9}],
        "objects": {"cup_red": {"surface": "big_shelf", "xy": [-2.0, 2.2], "class": "cup"}}
      },
      "robot_start": [0.0, 1.2, 0.0],
      "human_start": [0.0, -0.8],
      "human": {"mode": "degraded", "script": [["go-to", "big_shelf"], ...],
                "trajectory": null, "model": null, "fraction": 0.3, "seed": 0, "delay": 0},
      "mode": "dynamic",
      "trigger_period": 10,
      "timeout": null
    }

``human.mode`` is ``ground-truth``, ``degraded`` or ``hierarchical``.  The
first two take the actual motion from ``trajectory`` (CSV) or synthesize it
from ``script`` (high-level actions grounded by the low-level generator);
``hierarchical`` composes it from the IRL ``model``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from ..kinematics import GeometricState, Surface, Workspace
from ..lgp import LgpInstance
from ..pddl import Domain, PddlError, parse_domain, parse_problem
from ..prediction.goals import Snapshot
from ..prediction.irl import IrlModel
from ..prediction.lowlevel import HumanConfig
from ..prediction.sources import (HumanSource, HumanTrajectory, compose_actions, compose_prediction,
                                  degrade_ground_truth)

SCHEMA_VERSION = 1
MODES = ("single", "dynamic")
HUMAN_MODES = ("ground-truth", "degraded", "hierarchical")


class ScenarioError(ValueError):
    """Schema violation; ``path`` names the offending field."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


class DanglingReference(ScenarioError):
    pass


def data_path(*parts: str) -> Path:
    return Path(str(resources.files("dynlgp") / "data")).joinpath(*parts)


@dataclass(frozen=True)
class HumanSpec:
    mode: str
    script: tuple[tuple[str, ...], ...] | None = None
    trajectory: Path | None = None
    model: Path | None = None
    fraction: float = 0.0
    seed: int = 0
    delay: int = 0


@dataclass
class Scenario:
    name: str
    path: Path | None
    domain: Domain
    domain_path: Path
    problem_path: Path
    init: frozenset
    goal: frozenset
    workspace: Workspace
    placements: dict[str, tuple[str, float, float]]
    robot_start: tuple[float, float, float]
    human_start: tuple[float, float]
    human: HumanSpec
    mode: str = "dynamic"
    trigger_period: int = 10
    timeout: int | None = None
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def objects(self) -> list[str]:
        return sorted(self.placements)

    @property
    def goal_objects(self) -> list[str]:
        return sorted({p[1] for p in self.goal if p[0] == "on"})

    def instance(self, **overrides) -> LgpInstance:
        kw = dict(trigger_period=self.trigger_period, timeout=self.timeout)
        kw.update(overrides)
        return LgpInstance.create(self.domain, self.goal, self.workspace, **kw)

    def initial_state(self) -> GeometricState:
        return GeometricState.build(self.workspace, robot=self.robot_start, pelvis=self.human_start,
                                    placements=self.placements)

    def snapshot(self) -> Snapshot:
        return Snapshot.from_state(self.initial_state(), self.workspace)

    def human_source(self, seed: int | None = None) -> HumanSource:
        """Actual and predicted human motion; ``seed`` overrides the file's seed."""
        spec = self.human
        seed = spec.seed if seed is None else seed
        if spec.mode == "hierarchical":
            model = IrlModel.load(spec.model)
            return compose_prediction(model, self.snapshot(), seed).source
        traj = self.ground_truth()
        if spec.mode == "ground-truth":
            return HumanSource.ground_truth(traj)
        return degrade_ground_truth(traj, spec.fraction, seed)

    def ground_truth(self) -> HumanTrajectory:
        spec = self.human
        if spec.trajectory is not None:
            return HumanTrajectory.from_csv(spec.trajectory)
        return self.scripted(spec.script or (), spec.delay)

    def scripted(self, script, delay: int = 0) -> HumanTrajectory:
        snap = self.snapshot()
        comp = compose_actions([tuple(a) for a in script], snap)
        traj = comp.source.actual
        if delay:
            idle = HumanTrajectory.stationary(snap.human, delay, snap.carried)
            traj = idle.extended(traj.pelvis[1:], traj.hand[1:], traj.carried[1:])
        return traj

    def human_alone_steps(self) -> int:
        """Steps a human working alone needs to deliver every goal object (closest first)."""
        snap = self.snapshot()
        here = np.asarray(self.human_start, dtype=float)
        script = []
        todo = [o for o in self.goal_objects if snap.objects[o][0] != "table"]
        while todo:
            o = min(todo, key=lambda n: (float(np.linalg.norm(np.asarray(snap.objects[n][1][:2]) - here)), n))
            todo.remove(o)
            script += [("go-to", snap.objects[o][0]), ("pick-up", o), ("go-to", "table"), ("place",)]
            here = np.asarray(self.workspace.surface("table").center, dtype=float)
        return len(compose_actions(script, snap).source.actual) - 1


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def _get(d: dict, key: str, path: str, kind=None, default: Any = ...):
    if key not in d:
        if default is ...:
            raise ScenarioError(f"{path}.{key}" if path else key, "required field missing")
        return default
    v = d[key]
    if kind is not None and v is not None and not isinstance(v, kind):
        names = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        raise ScenarioError(f"{path}.{key}" if path else key, f"expected {names}, got {type(v).__name__}")
    return v


def _vec(v, n: int, path: str) -> tuple[float, ...]:
    if not isinstance(v, (list, tuple)) or len(v) != n or not all(isinstance(x, (int, float)) for x in v):
        raise ScenarioError(path, f"expected a list of {n} numbers")
    return tuple(float(x) for x in v)


def _resolve(name: str, base: Path | None, path: str) -> Path:
    p = Path(name)
    cands = [p] if p.is_absolute() else ([base / p] if base else []) + [data_path(name), data_path("scenarios", name)]
    for c in cands:
        if c.exists():
            return c
    raise DanglingReference(path, f"file {name!r} not found")


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise DanglingReference("<file>", f"{path} does not exist") from None
    except json.JSONDecodeError as e:
        raise ScenarioError("<file>", f"invalid JSON: {e}") from None
    return scenario_from_dict(raw, path.parent, path)


def scenario_from_dict(raw: dict, base: Path | None = None, path: Path | None = None) -> Scenario:
    if not isinstance(raw, dict):
        raise ScenarioError("<root>", "expected an object")
    version = _get(raw, "schema_version", "", int, SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioError("schema_version", f"unsupported version {version}")
    name = _get(raw, "name", "", str, path.stem if path else "scenario")

    domain_path = _resolve(_get(raw, "domain", "", str), base, "domain")
    try:
        domain = parse_domain(domain_path.read_text())
    except PddlError as e:
        raise ScenarioError("domain", str(e)) from None
    problem_path = _resolve(_get(raw, "problem", "", str), base, "problem")
    try:
        init, goal = parse_problem(problem_path.read_text(), domain)
    except PddlError as e:
        raise ScenarioError("problem", str(e)) from None

    locations = set(domain.constants_of("location"))
    objects_declared = set(domain.constants_of("object"))
    geo = _get(raw, "geometry", "", dict)
    surfaces = {}
    for i, s in enumerate(_get(geo, "surfaces", "geometry", list)):
        p = f"geometry.surfaces[{i}]"
        if not isinstance(s, dict):
            raise ScenarioError(p, "expected an object")
        sname = _get(s, "name", p, str)
        if sname not in locations:
            raise DanglingReference(f"{p}.name", f"{sname!r} is not a location of the domain")
        surfaces[sname] = Surface(sname, _vec(_get(s, "center", p), 2, f"{p}.center"),
                                  _vec(_get(s, "size", p), 2, f"{p}.size"),
                                  float(_get(s, "height", p, (int, float), 0.75)),
                                  float(_get(s, "at_radius", p, (int, float), 0.6)),
                                  _vec(s["dock"], 2, f"{p}.dock") if s.get("dock") is not None else None)
    placements, classes = {}, {}
    for oname, o in _get(geo, "objects", "geometry", dict).items():
        p = f"geometry.objects.{oname}"
        if oname not in objects_declared:
            raise DanglingReference(p, f"{oname!r} is not an object of the domain")
        if not isinstance(o, dict):
            raise ScenarioError(p, "expected an object")
        surf = _get(o, "surface", p, str)
        if surf not in surfaces:
            raise DanglingReference(f"{p}.surface", f"unknown surface {surf!r}")
        xy = _vec(_get(o, "xy", p), 2, f"{p}.xy")
        if not surfaces[surf].contains(xy):
            raise ScenarioError(f"{p}.xy", f"{xy} is not on {surf}")
        placements[oname] = (surf, *xy)
        classes[oname] = _get(o, "class", p, str, oname)
    workspace = Workspace(surfaces, classes)

    for prop in sorted(init):
        if prop[0] == "on" and placements.get(prop[1], (None,))[0] != prop[2]:
            raise ScenarioError("problem", f"init (on {prop[1]} {prop[2]}) disagrees with the geometry")
    for prop in sorted(goal):
        if prop[0] == "on" and (prop[1] not in placements or prop[2] not in surfaces):
            raise DanglingReference("problem", f"goal (on {prop[1]} {prop[2]}) refers to missing geometry")

    h = _get(raw, "human", "", dict)
    mode = _get(h, "mode", "human", str)
    if mode not in HUMAN_MODES:
        raise ScenarioError("human.mode", f"must be one of {HUMAN_MODES}")
    traj = h.get("trajectory")
    model = h.get("model")
    script = h.get("script")
    if mode == "hierarchical":
        if not isinstance(model, str):
            raise ScenarioError("human.model", "hierarchical mode needs an IRL model file")
        model = _resolve(model, base, "human.model")
    elif traj is None and script is None:
        raise ScenarioError("human", "needs a trajectory file or a script")
    if traj is not None:
        traj = _resolve(_get(h, "trajectory", "human", str), base, "human.trajectory")
    if script is not None:
        if not isinstance(script, list) or not all(isinstance(a, list) and a and all(isinstance(x, str) for x in a)
                                                   for a in script):
            raise ScenarioError("human.script", "expected a list of action lists like [\"go-to\", \"table\"]")
        for i, a in enumerate(script):
            if a[0] == "go-to" and (len(a) != 2 or a[1] not in surfaces):
                raise DanglingReference(f"human.script[{i}]", f"unknown location in {a}")
            if a[0] == "pick-up" and (len(a) != 2 or (a[1] not in placements and a[1] not in classes.values())):
                raise DanglingReference(f"human.script[{i}]", f"unknown object or class in {a}")
            if a[0] not in ("go-to", "pick-up", "place"):
                raise ScenarioError(f"human.script[{i}]", f"unknown action {a[0]!r}")
        script = tuple(tuple(a) for a in script)
    fraction = float(_get(h, "fraction", "human", (int, float), 0.0))
    if not 0.0 <= fraction < 1.0:
        raise ScenarioError("human.fraction", "must lie in [0, 1)")
    spec = HumanSpec(mode, script, traj, model if mode == "hierarchical" else None, fraction,
                     int(_get(h, "seed", "human", int, 0)), int(_get(h, "delay", "human", int, 0)))

    run_mode = _get(raw, "mode", "", str, "dynamic")
    if run_mode not in MODES:
        raise ScenarioError("mode", f"must be one of {MODES}")
    trigger = _get(raw, "trigger_period", "", int, 10)
    if trigger < 1:
        raise ScenarioError("trigger_period", "must be at least 1")
    timeout = _get(raw, "timeout", "", int, None)
    return Scenario(name, path, domain, domain_path, problem_path, init, goal, workspace, placements,
                    _vec(_get(raw, "robot_start", ""), 3, "robot_start"),
                    _vec(_get(raw, "human_start", ""), 2, "human_start"), spec, run_mode, trigger, timeout, raw)


def bundled_scenario(name: str) -> Scenario:
    if not name.endswith(".json"):
        name += ".json"
    return load_scenario(data_path("scenarios", name))
