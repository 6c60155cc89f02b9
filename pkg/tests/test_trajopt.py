import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynlgp.kinematics import GeometricState
from dynlgp.symbolic import Skeleton
from dynlgp.trajopt import (NlpBuildError, NlpProblem, SolverConfig, build_nlp, evaluate, inequality_residuals,
                            objective, solve)

from oracles import central_jacobian, relative_error

ONE_OBJECT = ["move(big_shelf)", "pick(cup_green,big_shelf)", "move(table)", "place(cup_green,table)"]


def skeleton(actions_by_label, labels, durations=None):
    acts = tuple(actions_by_label[l] for l in labels)
    durations = durations or tuple(30 if a.name == "move" else 5 for a in acts)
    return Skeleton(acts, tuple(durations))


@pytest.fixture
def start(workspace):
    return GeometricState.build(workspace, robot=(0.0, 1.2, 0.0), pelvis=(0.0, -0.8),
                                placements={"cup_green": ("big_shelf", -1.75, 2.2)})


def test_build_horizon(actions_by_label, start, workspace):
    sk = skeleton(actions_by_label, ONE_OBJECT)
    assert build_nlp(sk, start, None, 0, workspace).n_steps == 70
    p = build_nlp(sk, start, None, 10, workspace)
    assert p.n_steps == 60 and p.phase_ends[0] == 20
    with pytest.raises(NlpBuildError):
        build_nlp(sk, start, None, 35, workspace)


def test_build_pins_pick_at_object(actions_by_label, start, workspace):
    p = build_nlp(skeleton(actions_by_label, ONE_OBJECT), start, None, 0, workspace)
    assert list(p.pin_steps) == [30, 35, 65, 70]
    assert p.pin_targets[1] == pytest.approx([-1.75, 2.2])
    assert workspace.surface("table").contains(p.pin_targets[3], margin=0.05)
    assert p.pin_kinds == ("terminal", "switch", "terminal", "goal")


def test_stationary_objective_zero():
    p = NlpProblem(x_start=[1.0, 2.0, 0.3], n_steps=15, pin_steps=[15], pin_targets=[[1.0, 2.0]])
    ev = evaluate(p, np.tile([1.0, 2.0, 0.3], (15, 1)))
    assert ev.objective == 0.0 and np.all(ev.gradient == 0)


def test_uniform_line_objective_closed_form():
    n, step = 30, 0.04
    p = NlpProblem(x_start=[0, 0, 0], n_steps=n, pin_steps=[n], pin_targets=[[n * step, 0.0]])
    X = np.column_stack([np.arange(1, n + 1) * step, np.zeros(n), np.zeros(n)])
    # only the velocity term survives: dt * w_vel * n * (step / dt)^2
    assert objective(p, X) == pytest.approx(0.1 * n * (step / 0.1) ** 2, rel=1e-12)


@st.composite
def random_problems(draw):
    seed = draw(st.integers(0, 2 ** 31 - 1))
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 25))
    pins = np.unique(rng.integers(1, n + 1, size=int(rng.integers(1, 4))))
    bounds = np.unique(rng.integers(1, n + 1, size=int(rng.integers(0, 3))))
    human = rng.normal(size=(n, 2)) * 2 if rng.random() < 0.8 else None
    lo = rng.normal(size=(len(bounds), 2)) - 2
    p = NlpProblem(x_start=rng.normal(size=3) * 0.5, n_steps=n, pin_steps=pins,
                   pin_targets=rng.normal(size=(len(pins), 2)), human=human,
                   bound_steps=bounds, bound_lo=lo, bound_hi=lo + 4)
    X = rng.normal(size=(n, 3))
    X[:, 2] = rng.uniform(-1, 1, size=n) * 0.5
    return p, X


@settings(max_examples=100)
@given(random_problems())
def test_jacobians_match_finite_differences(case):
    p, X = case
    ev = evaluate(p, X)
    shape = X.shape
    g_fd = central_jacobian(lambda x: objective(p, x.reshape(shape)), X)[0]
    assert relative_error(ev.gradient, g_fd) <= 1e-4
    eq_fd = central_jacobian(lambda x: evaluate(p, x.reshape(shape)).eq, X)
    assert relative_error(ev.eq_jac.toarray(), eq_fd) <= 1e-4
    if len(ev.ineq):
        in_fd = central_jacobian(lambda x: evaluate(p, x.reshape(shape)).ineq, X)
        assert relative_error(ev.ineq_jac.toarray(), in_fd) <= 1e-4


def _segment_problem(human=None, n=30):
    return NlpProblem(x_start=[-1.5, 0.0, 0.0], n_steps=n, pin_steps=[n], pin_targets=[[1.5, 0.0]], human=human)


def test_obstacle_free_solution_is_collinear():
    sol = solve(_segment_problem())
    assert sol.converged
    assert np.max(np.abs(sol.waypoints[:, 1])) < 1e-6
    assert sol.waypoints[-1, :2] == pytest.approx([1.5, 0.0], abs=1e-3)


def test_human_on_segment_is_avoided():
    free = solve(_segment_problem())
    p = _segment_problem(human=np.tile([0.0, 0.0], (30, 1)))
    sol = solve(p)
    assert sol.converged
    dist = np.linalg.norm(sol.waypoints[:, :2], axis=1)
    assert dist.min() >= 0.5 - 1e-3
    assert sol.objective > free.objective


def test_converged_certificate_is_honest(actions_by_label, start, workspace):
    human = np.tile([-1.0, 1.0], (80, 1))
    p = build_nlp(skeleton(actions_by_label, ONE_OBJECT), start, human, 0, workspace)
    sol = solve(p)
    assert sol.converged
    ev = evaluate(p, sol.waypoints)
    assert np.max(np.abs(ev.eq)) < 1e-3
    assert np.all(inequality_residuals(p, sol.waypoints) <= 0)


def test_merit_nonincreasing_within_stage(actions_by_label, start, workspace):
    human = np.tile([-1.0, 1.0], (80, 1))
    sol = solve(build_nlp(skeleton(actions_by_label, ONE_OBJECT), start, human, 0, workspace))
    by_stage = {}
    for row in sol.trace:
        by_stage.setdefault(row["stage"], []).append(row["merit"])
    for merits in by_stage.values():
        assert all(b <= a + 1e-9 * max(1.0, abs(a)) for a, b in zip(merits, merits[1:]))


def test_warm_start_resolve_is_quick(actions_by_label, start, workspace):
    p = build_nlp(skeleton(actions_by_label, ONE_OBJECT), start, np.tile([-1.0, 1.0], (80, 1)), 0, workspace)
    sol = solve(p)
    again = solve(p, warm_start=sol.waypoints)
    assert again.converged and again.iterations <= 2


def test_deterministic(actions_by_label, start, workspace):
    human = np.tile([-0.5, 1.5], (80, 1))
    p = build_nlp(skeleton(actions_by_label, ONE_OBJECT), start, human, 0, workspace)
    a, b = solve(p, SolverConfig()), solve(p, SolverConfig())
    assert np.array_equal(a.waypoints, b.waypoints)


def test_infeasible_reports_not_converged():
    # the target itself lies inside the human's safety disc
    p = NlpProblem(x_start=[-1.5, 0.0, 0.0], n_steps=20, pin_steps=[20], pin_targets=[[0.0, 0.0]],
                   human=np.zeros((20, 2)))
    sol = solve(p)
    assert not sol.converged


def test_bad_config_rejected():
    with pytest.raises(ValueError):
        SolverConfig(mu_factor=1.5)
