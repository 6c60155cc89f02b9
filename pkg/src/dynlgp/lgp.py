"""Single planning and the dynamic replanning loop."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .kinematics import (HAND, GeometricState, KinematicsError, Workspace, apply_switch, deduce_state,
                         human_pick, human_place)
from .pddl import Domain, GroundedAction, ground_actions
from .prediction.sources import HumanSource
from .symbolic import (DEFAULT_DURATIONS, NoSkeletonFound, RankingGeometry, Skeleton, applicable, exec_action,
                       rank_skeletons, search_skeletons)
from .trajopt import (R_SAFE, NlpBuildError, NlpProblem, SolverConfig, TrajectorySolution, build_nlp, solve)

log = logging.getLogger(__name__)

TRIGGER_PERIOD = 10
MAX_NLP_ATTEMPTS = 8
MIN_TIMEOUT_BASE = 100     # steps; floor on the human length used for the default timeout
REASONS = ("initial", "symbolic-invalid", "geometric-infeasible")


class PlanningFailed(RuntimeError):
    def __init__(self, reason: str, msg: str = ""):
        super().__init__(msg or reason)
        self.reason = reason          # "no-skeleton-found" | "all-nlps-infeasible"


@dataclass
class LgpInstance:
    domain: Domain
    actions: list[GroundedAction]
    goal: frozenset
    workspace: Workspace
    solver: SolverConfig = field(default_factory=SolverConfig)
    trigger_period: int = TRIGGER_PERIOD
    timeout: int | None = None
    durations: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_DURATIONS))
    r_safe: float = R_SAFE
    max_nlp_attempts: int = MAX_NLP_ATTEMPTS
    depth_bound: int | None = None

    def __post_init__(self):
        if self.trigger_period < 1:
            raise ValueError("trigger period must be at least 1")
        names = {c for c, _ in self.domain.constants}
        for p in self.goal:
            if not self.domain.has_predicate(p[0]):
                raise ValueError(f"goal uses undeclared predicate {p[0]}")
            for c in p[1:]:
                if c not in names:
                    raise ValueError(f"goal uses undeclared constant {c}")

    @classmethod
    def create(cls, domain: Domain, goal, workspace: Workspace, **kw) -> "LgpInstance":
        return cls(domain, ground_actions(domain), frozenset(goal), workspace, **kw)

    def default_timeout(self, human_length: int) -> int:
        if self.timeout is not None:
            return self.timeout
        return 4 * max(human_length, MIN_TIMEOUT_BASE)


@dataclass
class Plan:
    skeleton: Skeleton
    solution: TrajectorySolution | None
    problem: NlpProblem | None
    symbolic_time: float = 0.0
    nlp_time: float = 0.0
    n_solved: int = 0
    n_candidates: int = 0


def effective_goal(goal: frozenset, s: frozenset) -> frozenset:
    """Drop placement goals for objects the human is currently carrying (the human is delivering them)."""
    carried = {p[1] for p in s if p[0] == "human-carry"}
    return frozenset(p for p in goal if not (p[0] == "on" and p[1] in carried))


def ranking_geometry(x: GeometricState, workspace: Workspace) -> RankingGeometry:
    objects = {o: tuple(x.object_pose(o).xy) for o in x.objects}
    return RankingGeometry(tuple(x.q[:2]), workspace.location_xy(), objects)


def plan_single(instance: LgpInstance, x0: GeometricState, human, *, goal: frozenset | None = None,
                s0: frozenset | None = None) -> Plan:
    """Search, rank and solve skeletons in cost order; return the first converged pair.

    ``human`` holds pelvis forecasts with row 0 at the time of ``x0``.  An
    already satisfied goal yields an empty skeleton without trajectory.
    """
    goal = instance.goal if goal is None else goal
    s0 = deduce_state(x0, instance.domain, instance.workspace) if s0 is None else s0
    t0 = time.perf_counter()
    try:
        skeletons = search_skeletons(s0, goal, instance.actions, depth_bound=instance.depth_bound,
                                     durations=instance.durations, origin_time=x0.t)
    except NoSkeletonFound as e:
        raise PlanningFailed("no-skeleton-found", str(e)) from e
    if skeletons[0].is_empty:
        return Plan(skeletons[0], None, None, time.perf_counter() - t0)
    ranked = rank_skeletons(skeletons, ranking_geometry(x0, instance.workspace))
    t_sym = time.perf_counter() - t0
    t1 = time.perf_counter()
    solved = 0
    for sk in ranked[:instance.max_nlp_attempts]:
        try:
            problem = build_nlp(sk, x0, human, 0, instance.workspace, r_safe=instance.r_safe)
        except (NlpBuildError, KinematicsError) as e:
            log.debug("skip %s: %s", sk.labels(), e)
            continue
        sol = solve(problem, instance.solver)
        solved += 1
        if sol.converged:
            return Plan(sk, sol, problem, t_sym, time.perf_counter() - t1, solved, len(ranked))
    raise PlanningFailed("all-nlps-infeasible", f"{solved} NLPs solved without convergence")


@dataclass
class Feasibility:
    feasible: bool
    reason: str | None = None
    solution: TrajectorySolution | None = None
    problem: NlpProblem | None = None

    def __int__(self):
        return int(self.feasible)

    def __bool__(self):
        return self.feasible


def check_feasibility(skeleton: Skeleton, x_t: GeometricState, s_t: frozenset, instance: LgpInstance, human,
                      *, tau: int = 0, goal: frozenset | None = None, warm_start=None) -> Feasibility:
    """Whether ``skeleton`` (its remaining actions, ``tau`` steps into the first) is still feasible.

    Symbolic part: every action applies in turn from ``s_t`` and the result
    meets the goal.  Geometric part: the truncated NLP from ``x_t`` converges;
    that solution is returned for reuse.
    """
    goal = instance.goal if goal is None else goal
    if skeleton.is_empty:
        raise ValueError("feasibility of an empty skeleton is undefined")
    s = frozenset(s_t)
    for a in skeleton.actions:
        if not applicable(s, a):
            return Feasibility(False, "symbolic-invalid")
        s = exec_action(s, a)
    if not goal <= s:
        return Feasibility(False, "symbolic-invalid")
    try:
        problem = build_nlp(skeleton, x_t, human, tau, instance.workspace, r_safe=instance.r_safe)
    except (NlpBuildError, KinematicsError):
        return Feasibility(False, "geometric-infeasible")
    sol = solve(problem, instance.solver, warm_start=warm_start)
    if not sol.converged:
        return Feasibility(False, "geometric-infeasible", sol, problem)
    return Feasibility(True, None, sol, problem)


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------

@dataclass
class ExecutionState:
    skeleton: Skeleton | None = None
    solution: TrajectorySolution | None = None
    index: int = 0              # current action within the skeleton
    tau: int = 0                # steps executed in the current phase
    k: int = 0                  # waypoints consumed from the current solution
    executed: int = 0           # steps executed since the skeleton was adopted
    total: int = 0              # duration of the adopted skeleton

    @property
    def active(self) -> bool:
        return self.skeleton is not None and self.index < len(self.skeleton)

    def remaining(self) -> Skeleton:
        return self.skeleton.suffix(self.index)

    def adopt(self, skeleton: Skeleton, solution: TrajectorySolution | None):
        self.skeleton, self.solution, self.index, self.tau, self.k = skeleton, solution, 0, 0, 0
        self.executed, self.total = 0, skeleton.total_duration

    def clear(self):
        self.skeleton, self.solution, self.index, self.tau, self.k = None, None, 0, 0, 0
        self.executed, self.total = 0, 0


@dataclass
class RunReport:
    mode: str
    success: bool
    failure: str | None
    steps: int
    robot: np.ndarray                 # (T+1, 3)
    human: np.ndarray                 # (T+1, 2)
    carried: list[str]                # per step: robot/human carried objects as "r:obj" / "h:obj" / ""
    triggers: list[dict]
    robot_moved: list[str]
    human_moved: list[str]
    initial_skeleton: list[str]
    planned_path_length: float        # path length of the initial plan's trajectory
    goal_objects: list[str]
    timeout: int

    @property
    def path_length(self) -> float:
        if len(self.robot) < 2:
            return 0.0
        return float(np.sum(np.linalg.norm(np.diff(self.robot[:, :2], axis=0), axis=1)))

    @property
    def min_clearance(self) -> float:
        return float(np.min(np.linalg.norm(self.robot[:, :2] - self.human, axis=1)))

    @property
    def replans(self) -> list[dict]:
        return [e for e in self.triggers if e.get("replan")]

    @property
    def replan_count(self) -> int:
        """Successful replans after the initial plan."""
        return sum(1 for e in self.replans if e["reason"] != "initial" and e["ok"])

    @property
    def replan_failures(self) -> int:
        return sum(1 for e in self.replans if not e["ok"])

    def skeleton_lengths(self) -> list[int]:
        return [e["skeleton_length"] for e in self.replans if e.get("skeleton_length") is not None]

    def to_dict(self) -> dict:
        return dict(mode=self.mode, success=self.success, failure=self.failure, steps=self.steps,
                    path_length=self.path_length, planned_path_length=self.planned_path_length,
                    min_clearance=self.min_clearance, replan_count=self.replan_count,
                    replan_failures=self.replan_failures,
                    initial_skeleton=self.initial_skeleton, robot_moved=self.robot_moved,
                    human_moved=self.human_moved, goal_objects=self.goal_objects, timeout=self.timeout,
                    triggers=self.triggers)

    def write(self, out_dir, stem: str = "run") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        jpath, cpath = out / f"{stem}.json", out / f"{stem}_trajectory.csv"
        with open(jpath, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
        with open(cpath, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "robot_x", "robot_y", "robot_phi", "human_x", "human_y", "carried"])
            for t in range(len(self.robot)):
                w.writerow([t, *(f"{v:.6f}" for v in self.robot[t]), *(f"{v:.6f}" for v in self.human[t]),
                            self.carried[t]])
        return jpath, cpath


def _project_out(q: np.ndarray, human_xy: np.ndarray, r_safe: float) -> np.ndarray:
    d = q[:2] - human_xy
    n = float(np.linalg.norm(d))
    if n >= r_safe:
        return q
    u = d / n if n > 1e-9 else np.array([1.0, 0.0])
    out = q.copy()
    out[:2] = human_xy + r_safe * u
    return out


def _solution_path_length(x0: GeometricState, sol: TrajectorySolution | None) -> float:
    if sol is None:
        return 0.0
    pts = np.vstack([x0.q[:2], sol.waypoints[:, :2]])
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


class _Simulation:
    """Shared stepping machinery for both planning modes."""

    def __init__(self, instance: LgpInstance, x0: GeometricState, source: HumanSource, mode: str):
        self.inst, self.source, self.mode = instance, source, mode
        human0 = source.actual.config(0)
        self.x = x0.with_human(human0.pelvis, human0.hand).at_time(0)
        self.ex = ExecutionState()
        self.timeout = instance.default_timeout(len(source.actual))
        self.robot = [self.x.q.copy()]
        self.human = [self.x.pelvis.copy()]
        self.carried = [self._carry_label()]
        self.triggers: list[dict] = []
        self.robot_moved: list[str] = []
        self.human_moved: list[str] = []
        self.planned_length = 0.0
        self.initial: list[str] = []
        self.human_events = {}
        for ev in source.actual.events():
            self.human_events.setdefault(ev.t, []).append(ev)
        self.goal_objects = sorted({p[1] for p in instance.goal if p[0] == "on"})

    # -- helpers -------------------------------------------------------------

    def _carry_label(self) -> str:
        out = []
        for o in self.x.objects:
            parent = self.x.tree.parent(o)
            if parent == HAND:
                out.append(f"h:{o}")
            elif parent not in self.inst.workspace.surfaces:
                out.append(f"r:{o}")
        return ";".join(out)

    def state(self) -> frozenset:
        return deduce_state(self.x, self.inst.domain, self.inst.workspace)

    def forecast(self, n: int) -> np.ndarray:
        return self.source.forecast(self.x.t, n)

    def progress(self, s: frozenset) -> float:
        """Fraction of goal propositions already holding."""
        goal = self.inst.goal
        return len(goal & s) / len(goal) if goal else 1.0

    def done(self) -> bool:
        return self.inst.goal <= self.state()

    def replan(self, reason: str) -> bool:
        s = self.state()
        goal = effective_goal(self.inst.goal, s)
        entry = dict(t=self.x.t, reason=reason, replan=True, skeleton=None, skeleton_length=None,
                     symbolic_time=0.0, nlp_time=0.0, n_solved=0, ok=False, progress=self.progress(s))
        try:
            horizon = max(len(self.source.predicted) - self.x.t, 1) + 1
            plan = plan_single(self.inst, self.x, self.forecast(horizon), goal=goal, s0=s)
        except PlanningFailed as e:
            entry["failure"] = e.reason
            self.triggers.append(entry)
            self.ex.clear()
            log.info("t=%d replan failed: %s", self.x.t, e.reason)
            return False
        entry.update(skeleton=list(plan.skeleton.labels()), skeleton_length=len(plan.skeleton),
                     symbolic_time=plan.symbolic_time, nlp_time=plan.nlp_time, n_solved=plan.n_solved, ok=True)
        self.triggers.append(entry)
        if plan.skeleton.is_empty:
            self.ex.clear()
        else:
            self.ex.adopt(plan.skeleton, plan.solution)
        return True

    def refine(self) -> str | None:
        """Check the executing skeleton at a trigger; returns a replan reason or None."""
        ex = self.ex
        s = self.state()
        goal = effective_goal(self.inst.goal, s)
        if not ex.active:
            return None if goal <= s else "symbolic-invalid"
        rest = ex.remaining()
        n = rest.total_duration - ex.tau
        warm = ex.solution.waypoints[ex.k:] if ex.solution is not None else None
        if warm is not None and len(warm) != n:
            warm = None
        t0 = time.perf_counter()
        feas = check_feasibility(rest, self.x, s, self.inst, self.forecast(n + 1), tau=ex.tau, goal=goal,
                                 warm_start=warm)
        self.triggers.append(dict(t=self.x.t, reason=feas.reason or "refine", replan=False,
                                  skeleton=list(rest.labels()), skeleton_length=len(rest), symbolic_time=0.0,
                                  nlp_time=time.perf_counter() - t0, n_solved=1 if feas.solution else 0,
                                  ok=feas.feasible, executed=ex.executed, remaining=n, total=ex.total, progress=self.progress(s)))
        if not feas:
            return feas.reason
        ex.skeleton = rest
        ex.index = 0
        ex.solution = feas.solution
        ex.k = 0
        return None

    def step(self) -> str | None:
        """Advance the world by one step; returns a failure reason for a failed switch."""
        ex = self.ex
        q = self.x.q
        if ex.active and ex.solution is not None and ex.k < len(ex.solution.waypoints):
            q = ex.solution.waypoints[ex.k].copy()
            ex.k += 1
            ex.tau += 1
            ex.executed += 1
        t1 = self.x.t + 1
        h = self.source.actual.config(t1)
        q = _project_out(np.asarray(q, dtype=float), h.pelvis, self.inst.r_safe)
        self.x = self.x.with_robot(q).with_human(h.pelvis, h.hand).at_time(t1)
        failure = None
        if ex.active and ex.tau >= ex.skeleton.phase_durations[ex.index]:
            a = ex.skeleton.actions[ex.index]
            if a.name in ("pick", "place"):
                s = self.state()
                try:
                    if not applicable(s, a):
                        raise KinematicsError(f"{a.label} not applicable at t={t1}")
                    self.x = self.x.with_tree(apply_switch(self.x.tree, a, self.inst.workspace))
                    if a.name == "place":
                        self.robot_moved.append(a.args[0])
                except KinematicsError as e:
                    log.info("switch failed: %s", e)
                    failure = "symbolic-invalid" if not applicable(s, a) else "geometric-infeasible"
            if failure is None:
                ex.index += 1
                ex.tau = 0
        for ev in self.human_events.get(t1, ()):
            tree = self.x.tree
            try:
                if ev.kind == "pick":
                    tree = human_pick(tree, ev.obj, self.inst.workspace)
                elif self.x.tree.parent(ev.obj) == HAND:
                    tree = human_place(tree, ev.obj, self.inst.workspace)
                    self.human_moved.append(ev.obj)
            except KinematicsError:
                continue                      # the object was not where the human expected it
            self.x = self.x.with_tree(tree)
        self.robot.append(self.x.q.copy())
        self.human.append(self.x.pelvis.copy())
        self.carried.append(self._carry_label())
        return failure

    def report(self, success: bool, failure: str | None) -> RunReport:
        return RunReport(self.mode, success, failure, self.x.t, np.array(self.robot), np.array(self.human),
                         self.carried, self.triggers, self.robot_moved, self.human_moved, self.initial,
                         self.planned_length, self.goal_objects, self.timeout)


def run_dynamic(instance: LgpInstance, x0: GeometricState, source: HumanSource) -> RunReport:
    """Execute with a trigger every ``instance.trigger_period`` steps, replanning when the skeleton breaks."""
    sim = _Simulation(instance, x0, source, "dynamic")
    sim.replan("initial")
    if sim.ex.skeleton is not None:
        sim.initial = list(sim.ex.skeleton.labels())
        sim.planned_length = _solution_path_length(sim.x, sim.ex.solution)
    pending = None
    while True:
        if sim.done():
            return sim.report(True, None)
        if sim.x.t >= sim.timeout:
            return sim.report(False, "timeout")
        if sim.x.t > 0 and (sim.x.t % instance.trigger_period == 0 or pending):
            reason = pending or sim.refine()
            pending = None
            if reason is not None:
                sim.replan(reason)
        pending = sim.step()


def run_single(instance: LgpInstance, x0: GeometricState, source: HumanSource) -> RunReport:
    """Plan once at t=0 and execute open loop."""
    sim = _Simulation(instance, x0, source, "single")
    if not sim.replan("initial"):
        return sim.report(False, sim.triggers[-1].get("failure", "no-skeleton-found"))
    if sim.ex.skeleton is not None:
        sim.initial = list(sim.ex.skeleton.labels())
        sim.planned_length = _solution_path_length(sim.x, sim.ex.solution)
    last_human = len(source.actual) - 1
    while True:
        if sim.done():
            return sim.report(True, None)
        if sim.x.t >= sim.timeout:
            return sim.report(False, "timeout")
        if not sim.ex.active and sim.x.t >= last_human:
            return sim.report(False, "goal-not-reached")
        if sim.step() is not None:
            return sim.report(False, "execution-failure")


def run(instance: LgpInstance, x0: GeometricState, source: HumanSource, mode: str) -> RunReport:
    if mode == "dynamic":
        return run_dynamic(instance, x0, source)
    if mode == "single":
        return run_single(instance, x0, source)
    raise ValueError(f"mode must be single or dynamic, not {mode!r}")
