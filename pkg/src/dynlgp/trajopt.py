"""Phase-structured trajectory optimization for a skeleton.

Decision variables are the robot configurations x_1..x_N (x, y, phi) at 10 Hz;
x_0 is the fixed start.  The objective is the smoothness cost of
:mod:`dynlgp.costs`.  Phase-end targets (dock at move end, object at pick end,
placement at place end) are equalities on the planar position, handled by an
escalating quadratic penalty.  Human clearance at every step and surface bounds
at placements are inequalities g(x) <= 0, handled by a log barrier.  Each
barrier stage is minimized by Gauss-Newton with a backtracking line search that
keeps every inequality strictly satisfied.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .costs import DT, W_ACC, W_VEL, interpolate, wrap_angle
from .kinematics import GeometricState, KinematicsError, SurfaceFull, Workspace, closest_free_point

log = logging.getLogger(__name__)

R_SAFE = 0.5
PLACE_MARGIN = 0.05
HUMAN_PLACE_BUFFER = 0.1
NDOF = 3


class NlpBuildError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    mu0: float = 1.0
    mu_factor: float = 0.2
    rho0: float = 1e3
    rho_factor: float = 10.0
    rho_escalations: int = 3          # 4 penalty stages: rho0 .. rho0 * 10**3
    max_outer: int = 6
    max_inner: int = 40
    tol: float = 1e-6                 # step norm (max abs, meters/radians)
    eq_tol: float = 1e-3
    backtrack: float = 0.5
    armijo: float = 1e-4
    max_backtracks: int = 40
    damping: float = 1e-9
    repair_margin: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.mu_factor < 1 or not 0 < self.backtrack < 1:
            raise ValueError("decrease factors must lie in (0, 1)")
        if min(self.mu0, self.rho0, self.rho_factor, self.tol, self.eq_tol) <= 0:
            raise ValueError("solver parameters must be positive")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration budgets must be positive")

    def stage(self, k: int) -> tuple[float, float]:
        mu = self.mu0 * self.mu_factor ** k
        rho = self.rho0 * self.rho_factor ** min(k, self.rho_escalations)
        return mu, rho


@dataclass
class NlpProblem:
    x_start: np.ndarray
    n_steps: int
    pin_steps: np.ndarray                  # 1-based waypoint index per equality
    pin_targets: np.ndarray                # (P, 2)
    pin_kinds: tuple[str, ...] = ()
    human: np.ndarray | None = None        # (N, 2) pelvis position at steps 1..N
    r_safe: float = R_SAFE
    bound_steps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    bound_lo: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    bound_hi: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    phase_ends: tuple[int, ...] = ()
    actions: tuple = ()
    dt: float = DT
    w_vel: float = W_VEL
    w_acc: float = W_ACC

    def __post_init__(self):
        self.x_start = np.asarray(self.x_start, dtype=float)
        self.pin_steps = np.asarray(self.pin_steps, dtype=int)
        self.pin_targets = np.asarray(self.pin_targets, dtype=float).reshape(-1, 2)
        self.bound_steps = np.asarray(self.bound_steps, dtype=int)
        self.bound_lo = np.asarray(self.bound_lo, dtype=float).reshape(-1, 2)
        self.bound_hi = np.asarray(self.bound_hi, dtype=float).reshape(-1, 2)
        if self.human is not None:
            self.human = np.asarray(self.human, dtype=float).reshape(self.n_steps, 2)
        if self.n_steps < 1:
            raise NlpBuildError("problem needs at least one waypoint")
        if np.any(self.pin_steps < 1) or np.any(self.pin_steps > self.n_steps):
            raise NlpBuildError("equality time index outside the horizon")
        if np.any(self.bound_steps < 1) or np.any(self.bound_steps > self.n_steps):
            raise NlpBuildError("inequality time index outside the horizon")
        if not self.pin_kinds:
            self.pin_kinds = ("terminal",) * len(self.pin_steps)
        self._cost_jac = None
        self._cost_hess_band = None

    @property
    def n_vars(self) -> int:
        return NDOF * self.n_steps

    @property
    def n_ineq(self) -> int:
        return (self.n_steps if self.human is not None else 0) + 4 * len(self.bound_steps)

    def keyframes(self) -> tuple[np.ndarray, np.ndarray]:
        """Phase-end planar targets and per-phase step counts for the warm start."""
        ends = np.asarray(self.phase_ends if self.phase_ends else [self.n_steps])
        durations = np.diff(np.concatenate([[0], ends]))
        targets = []
        last = self.x_start[:2]
        for e in ends:
            hit = np.nonzero(self.pin_steps == e)[0]
            last = self.pin_targets[hit[0]] if len(hit) else last
            targets.append(last)
        return np.asarray(targets), durations

    def initial_guess(self) -> np.ndarray:
        targets, durations = self.keyframes()
        xy = interpolate(self.x_start[:2], targets, durations)
        return np.column_stack([xy, np.full(len(xy), self.x_start[2])])

    # cost structure ---------------------------------------------------------

    def cost_jacobian(self) -> sp.csr_matrix:
        if self._cost_jac is None:
            n = self.n_steps
            cv = math.sqrt(self.dt * self.w_vel) / self.dt
            ca = math.sqrt(self.dt * self.w_acc) / self.dt ** 2
            d1 = sp.eye(n, format="csr") - sp.eye(n, k=-1, format="csr")
            if n > 1:
                d2 = (sp.eye(n - 1, n, k=1) - 2 * sp.eye(n - 1, n) + sp.eye(n - 1, n, k=-1)).tocsr()
            else:
                d2 = sp.csr_matrix((0, n))
            eye = sp.eye(NDOF, format="csr")
            self._cost_jac = sp.vstack([cv * sp.kron(d1, eye), ca * sp.kron(d2, eye)]).tocsr()
        return self._cost_jac

    def cost_residuals(self, X: np.ndarray) -> np.ndarray:
        cv = math.sqrt(self.dt * self.w_vel) / self.dt
        ca = math.sqrt(self.dt * self.w_acc) / self.dt ** 2
        d = np.diff(np.vstack([self.x_start, X]), axis=0)
        d[:, 2] = wrap_angle(d[:, 2])
        return np.concatenate([cv * d.ravel(), ca * np.diff(d, axis=0).ravel()])

    def cost_hessian_band(self) -> np.ndarray:
        """Upper banded storage of 2 J^T J for the smoothness cost (bandwidth 2 steps)."""
        if self._cost_hess_band is None:
            h = (2 * (self.cost_jacobian().T @ self.cost_jacobian())).tocsr()
            u = 2 * NDOF
            ab = np.zeros((u + 1, self.n_vars))
            for k in range(u + 1):
                diag = h.diagonal(k)
                ab[u - k, k:] = diag
            self._cost_hess_band = ab
        return self._cost_hess_band


@dataclass
class Evaluation:
    objective: float
    gradient: np.ndarray
    eq: np.ndarray
    eq_jac: sp.csr_matrix
    ineq: np.ndarray
    ineq_jac: sp.csr_matrix


def _check_shape(problem: NlpProblem, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape != (problem.n_steps, NDOF):
        raise ValueError(f"expected waypoints of shape {(problem.n_steps, NDOF)}, got {X.shape}")
    return X


def _clearance(problem: NlpProblem, X: np.ndarray):
    diff = X[:, :2] - problem.human
    dist = np.linalg.norm(diff, axis=1)
    unit = diff / np.maximum(dist, 1e-12)[:, None]
    return problem.r_safe - dist, unit


def _bounds(problem: NlpProblem, X: np.ndarray) -> np.ndarray:
    p = X[problem.bound_steps - 1, :2]
    return np.column_stack([problem.bound_lo[:, 0] - p[:, 0], p[:, 0] - problem.bound_hi[:, 0],
                            problem.bound_lo[:, 1] - p[:, 1], p[:, 1] - problem.bound_hi[:, 1]]).ravel()


def equality_residuals(problem: NlpProblem, X: np.ndarray) -> np.ndarray:
    return (X[problem.pin_steps - 1, :2] - problem.pin_targets).ravel()


def inequality_residuals(problem: NlpProblem, X: np.ndarray) -> np.ndarray:
    parts = []
    if problem.human is not None:
        parts.append(_clearance(problem, X)[0])
    parts.append(_bounds(problem, X))
    return np.concatenate(parts)


def evaluate(problem: NlpProblem, waypoints) -> Evaluation:
    """Objective, constraint residuals and their analytic Jacobians (g <= 0 convention)."""
    X = _check_shape(problem, waypoints)
    r = problem.cost_residuals(X)
    J = problem.cost_jacobian()
    grad = 2 * (J.T @ r)

    n = problem.n_vars
    eq = equality_residuals(problem, X)
    rows = np.arange(len(eq))
    cols = ((problem.pin_steps - 1)[:, None] * NDOF + np.arange(2)).ravel()
    eq_jac = sp.csr_matrix((np.ones(len(eq)), (rows, cols)), shape=(len(eq), n))

    ineq = inequality_residuals(problem, X)
    jr, jc, jv = [], [], []
    row = 0
    if problem.human is not None:
        _, unit = _clearance(problem, X)
        t = np.arange(problem.n_steps)
        for k in range(2):
            jr.append(t)
            jc.append(t * NDOF + k)
            jv.append(-unit[:, k])
        row = problem.n_steps
    nb = len(problem.bound_steps)
    if nb:
        base = (problem.bound_steps - 1) * NDOF
        b = np.arange(nb) * 4 + row
        for off, k, sgn in ((0, 0, -1.0), (1, 0, 1.0), (2, 1, -1.0), (3, 1, 1.0)):
            jr.append(b + off)
            jc.append(base + k)
            jv.append(np.full(nb, sgn))
    if jr:
        ineq_jac = sp.csr_matrix((np.concatenate(jv), (np.concatenate(jr), np.concatenate(jc))),
                                 shape=(len(ineq), n))
    else:
        ineq_jac = sp.csr_matrix((0, n))
    return Evaluation(float(r @ r), grad, eq, eq_jac, ineq, ineq_jac)


def objective(problem: NlpProblem, waypoints) -> float:
    r = problem.cost_residuals(_check_shape(problem, waypoints))
    return float(r @ r)


@dataclass
class TrajectorySolution:
    waypoints: np.ndarray
    converged: bool
    objective: float
    max_eq_residual: float
    max_ineq_violation: float
    iterations: int
    trace: list[dict] = field(default_factory=list, repr=False)

    @property
    def n_steps(self) -> int:
        return len(self.waypoints)


def _merit(problem: NlpProblem, X: np.ndarray, mu: float, rho: float) -> float:
    r = problem.cost_residuals(X)
    h = equality_residuals(problem, X)
    g = inequality_residuals(problem, X)
    if np.any(g >= 0):
        return math.inf
    return float(r @ r + rho * (h @ h) - mu * np.sum(np.log(-g)))


def _newton_system(problem: NlpProblem, X: np.ndarray, mu: float, rho: float, damping: float):
    """Gradient of the merit and its Gauss-Newton Hessian in upper banded form."""
    r = problem.cost_residuals(X)
    grad = 2 * (problem.cost_jacobian().T @ r)
    ab = problem.cost_hessian_band().copy()
    u = 2 * NDOF
    ab[u] += damping

    h = equality_residuals(problem, X).reshape(-1, 2)
    idx = (problem.pin_steps - 1)[:, None] * NDOF + np.arange(2)
    np.add.at(grad, idx.ravel(), 2 * rho * h.ravel())
    np.add.at(ab[u], idx.ravel(), 2 * rho)

    if problem.human is not None:
        g, unit = _clearance(problem, X)
        w = mu / g ** 2
        base = np.arange(problem.n_steps) * NDOF
        # d(-mu log(-g)) = mu * dg / (-g), dg = -unit
        grad[base] += mu * (-unit[:, 0]) / (-g)
        grad[base + 1] += mu * (-unit[:, 1]) / (-g)
        ab[u, base] += w * unit[:, 0] ** 2
        ab[u, base + 1] += w * unit[:, 1] ** 2
        ab[u - 1, base + 1] += w * unit[:, 0] * unit[:, 1]
    if len(problem.bound_steps):
        g = _bounds(problem, X).reshape(-1, 4)
        base = (problem.bound_steps - 1) * NDOF
        for col, k, sgn in ((0, 0, -1.0), (1, 0, 1.0), (2, 1, -1.0), (3, 1, 1.0)):
            np.add.at(grad, base + k, mu * sgn / (-g[:, col]))
            np.add.at(ab[u], base + k, mu / g[:, col] ** 2)
    return grad, ab


def _repair(problem: NlpProblem, X: np.ndarray, config: SolverConfig) -> np.ndarray:
    """Push waypoints strictly inside the inequality set before the first barrier stage."""
    X = X.copy()
    rng = np.random.default_rng(config.seed)
    if len(problem.bound_steps):
        i = problem.bound_steps - 1
        X[i, :2] = np.clip(X[i, :2], problem.bound_lo + config.repair_margin,
                           problem.bound_hi - config.repair_margin)
    if problem.human is not None:
        g, unit = _clearance(problem, X)
        bad = np.nonzero(g > -config.repair_margin)[0]
        for t in bad:
            u = unit[t]
            if np.linalg.norm(X[t, :2] - problem.human[t]) < 1e-9:
                a = rng.uniform(0, 2 * np.pi)
                u = np.array([math.cos(a), math.sin(a)])
            X[t, :2] = problem.human[t] + (problem.r_safe + 2 * config.repair_margin) * u
    return X


def _summarize(problem: NlpProblem, X: np.ndarray) -> tuple[float, float, float]:
    eq = equality_residuals(problem, X)
    g = inequality_residuals(problem, X)
    max_eq = float(np.max(np.abs(eq))) if len(eq) else 0.0
    max_viol = float(max(np.max(g), 0.0)) if len(g) else 0.0
    return objective(problem, X), max_eq, max_viol


def _run_stages(problem: NlpProblem, X: np.ndarray, config: SolverConfig, stages: Sequence[int],
                trace: list[dict]) -> tuple[np.ndarray, int, float]:
    u = 2 * NDOF
    iters = 0
    last_step = math.inf
    for k in stages:
        mu, rho = config.stage(k)
        merit = _merit(problem, X, mu, rho)
        for _ in range(config.max_inner):
            grad, ab = _newton_system(problem, X, mu, rho, config.damping)
            try:
                dx = -scipy.linalg.solveh_banded(ab, grad, lower=False, check_finite=False)
            except np.linalg.LinAlgError:
                ab[u] += 1e-6
                dx = -scipy.linalg.solveh_banded(ab, grad, lower=False, check_finite=False)
            dX = dx.reshape(X.shape)
            slope = float(grad @ dx)
            alpha = 1.0
            accepted = False
            for _ in range(config.max_backtracks):
                cand = X + alpha * dX
                m = _merit(problem, cand, mu, rho)
                if m <= merit + config.armijo * alpha * slope:
                    accepted = True
                    break
                alpha *= config.backtrack
            iters += 1
            if not accepted:
                last_step = 0.0
                trace.append(dict(iteration=iters, stage=k, mu=mu, rho=rho, merit=merit, step=0.0, alpha=0.0))
                break
            last_step = float(np.max(np.abs(alpha * dX)))
            X, merit = cand, m
            _, max_eq, max_viol = _summarize(problem, X)
            trace.append(dict(iteration=iters, stage=k, mu=mu, rho=rho, merit=merit, step=last_step,
                              alpha=alpha, max_eq=max_eq, max_ineq=max_viol))
            if last_step < config.tol:
                break
    return X, iters, last_step


def solve(problem: NlpProblem, config: SolverConfig | None = None, warm_start=None) -> TrajectorySolution:
    """Interior-point Gauss-Newton solve; never raises on non-convergence."""
    config = config or SolverConfig()
    trace: list[dict] = []
    X0 = problem.initial_guess() if warm_start is None else _check_shape(problem, warm_start).copy()
    X = X0
    if np.any(inequality_residuals(problem, X) >= -1e-12):
        X = _repair(problem, X, config)
    iters = 0
    converged = False
    if np.all(inequality_residuals(problem, X) < 0):
        schedules = [range(config.max_outer)]
        if warm_start is not None:
            schedules.insert(0, [config.max_outer - 1])
        for stages in schedules:
            X_try, n, last_step = _run_stages(problem, X, config, stages, trace)
            iters += n
            _, max_eq, max_viol = _summarize(problem, X_try)
            ok = last_step < config.tol and max_eq < config.eq_tol and max_viol <= 0.0
            if ok or stages is schedules[-1]:
                X, converged = X_try, ok
                break
    obj, max_eq, max_viol = _summarize(problem, X)
    converged = converged and max_eq < config.eq_tol and max_viol <= 0.0
    return TrajectorySolution(X, converged, obj, max_eq, max_viol, iters, trace)


def write_trace(solution: TrajectorySolution, path) -> None:
    fields = ["iteration", "stage", "mu", "rho", "merit", "step", "alpha", "max_eq", "max_ineq"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        for row in solution.trace:
            w.writerow(row)


# ---------------------------------------------------------------------------
# skeleton -> NLP
# ---------------------------------------------------------------------------

def pad_human(human, n: int) -> np.ndarray | None:
    """First ``n`` pelvis positions, holding the last one beyond the forecast."""
    if human is None:
        return None
    human = np.asarray(human, dtype=float).reshape(-1, 2)
    if len(human) == 0:
        raise NlpBuildError("empty human trajectory")
    if len(human) >= n:
        return human[:n]
    return np.vstack([human, np.repeat(human[-1:], n - len(human), axis=0)])


def build_nlp(skeleton, x_start: GeometricState, human, tau: int, workspace: Workspace, *,
              r_safe: float = R_SAFE, dt: float = DT, w_vel: float = W_VEL, w_acc: float = W_ACC,
              placements: Mapping[int, np.ndarray] | None = None) -> NlpProblem:
    """NLP for ``skeleton`` starting ``tau`` steps into its first phase.

    ``human`` holds pelvis positions indexed from the start state's time
    (row 0 is the current pose, row k is k steps ahead).  Placement points for
    place phases are chosen as the closest free point to the location dock,
    clear of objects, earlier placements in this skeleton and the forecast
    human at that step; ``placements`` overrides them by action index.
    """
    if skeleton is None or len(skeleton.actions) == 0:
        raise NlpBuildError("empty skeleton")
    first = skeleton.phase_durations[0]
    if tau < 0 or tau > first:
        raise NlpBuildError(f"tau={tau} exceeds first phase duration {first}")
    durations = [first - tau] + list(skeleton.phase_durations[1:])
    actions = list(skeleton.actions)
    if durations[0] == 0:
        durations, actions = durations[1:], actions[1:]
        if not actions:
            raise NlpBuildError("nothing left to optimize")
    ends = np.cumsum(durations)
    n = int(ends[-1])
    forecast = None if human is None else pad_human(human, n + 1)
    human_steps = None if forecast is None else forecast[1:]

    occupied: dict[str, list] = {name: list(x_start.occupied(name)) for name in workspace.surfaces}
    planned: dict[str, np.ndarray] = {}
    pins, kinds, b_steps, b_lo, b_hi = [], [], [], [], []
    for k, (a, end) in enumerate(zip(actions, ends)):
        end = int(end)
        if a.name == "move":
            target = workspace.surface(a.args[-1]).dock_xy
            kind = "terminal"
        elif a.name == "pick":
            obj, loc = a.args
            if obj in planned:
                target = planned[obj]
            elif obj in x_start.tree and x_start.tree.parent(obj) == loc:
                target = x_start.object_pose(obj).xy
            else:
                raise NlpBuildError(f"{obj} is not on {loc}")
            occupied.setdefault(loc, [])
            occupied[loc] = [p for p in occupied[loc] if np.linalg.norm(p - target) > 1e-9]
            kind = "switch"
        elif a.name == "place":
            obj, loc = a.args
            surf = workspace.surface(loc)
            if placements and k in placements:
                target = np.asarray(placements[k], dtype=float)
            else:
                discs = [(p, workspace.place_clearance) for p in occupied.get(loc, [])]
                if human_steps is not None:
                    discs.append((human_steps[end - 1], r_safe + HUMAN_PLACE_BUFFER))
                try:
                    target = closest_free_point(surf, surf.dock_xy, discs, margin=PLACE_MARGIN)
                except SurfaceFull:
                    discs = [(p, workspace.place_clearance) for p in occupied.get(loc, [])]
                    target = closest_free_point(surf, surf.dock_xy, discs, margin=PLACE_MARGIN)
            occupied.setdefault(loc, []).append(np.asarray(target))
            planned[obj] = np.asarray(target)
            b_steps.append(end)
            b_lo.append(surf.lo)
            b_hi.append(surf.hi)
            kind = "switch"
        else:
            raise NlpBuildError(f"no geometric model for action {a.name}")
        pins.append((end, target))
        kinds.append(kind)
    if kinds:
        kinds[-1] = "goal"
    return NlpProblem(
        x_start=x_start.q, n_steps=n,
        pin_steps=np.array([p[0] for p in pins]), pin_targets=np.array([p[1] for p in pins]),
        pin_kinds=tuple(kinds), human=human_steps, r_safe=r_safe,
        bound_steps=np.array(b_steps, dtype=int), bound_lo=np.array(b_lo).reshape(-1, 2),
        bound_hi=np.array(b_hi).reshape(-1, 2), phase_ends=tuple(int(e) for e in ends),
        actions=tuple(actions), dt=dt, w_vel=w_vel, w_acc=w_acc)
