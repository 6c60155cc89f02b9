import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynlgp.harness import synth
from dynlgp.harness.scenario import bundled_scenario
from dynlgp.kinematics import GeometricState, Surface, SurfaceFull
from dynlgp.prediction.goals import STANDOFF, Snapshot, approach_point, extract_goal
from dynlgp.prediction.irl import IrlModel, irl_fit
from dynlgp.prediction.lowlevel import V_MAX, HumanConfig, generate_lowlevel, max_step
from dynlgp.prediction.sources import (HumanSource, HumanTrajectory, compose_actions, compose_prediction,
                                       degrade_ground_truth, mdp_for_workspace, mdp_state)

from oracles import grid_closest_free

STEP_LIMIT = V_MAX / 10


# low-level generator ------------------------------------------------------------

def test_at_goal_is_constant():
    h = HumanConfig.at((1.0, 2.0))
    pelvis, hand = generate_lowlevel(h, (1.0, 2.0), "pelvis", 12)
    assert np.all(pelvis == [1.0, 2.0]) and np.all(hand == h.hand)


def test_walk_profile():
    pelvis, _ = generate_lowlevel(HumanConfig.at((0.0, 0.0)), (3.0, 0.0), "pelvis", 30)
    assert np.all(np.diff(pelvis[:, 0]) > 0)
    assert tuple(pelvis[-1]) == (3.0, 0.0)
    assert max_step(np.vstack([[0.0, 0.0], pelvis])) <= STEP_LIMIT + 1e-12


def test_reach_keeps_pelvis():
    h = HumanConfig.at((0.0, 0.0))
    pelvis, hand = generate_lowlevel(h, (0.3, 0.2, 0.75), "hand", 5)
    assert np.all(pelvis == 0.0)
    assert tuple(hand[-1]) == (0.3, 0.2, 0.75)


def test_bad_generator_inputs():
    h = HumanConfig.at((0.0, 0.0))
    with pytest.raises(ValueError):
        generate_lowlevel(h, (1.0, 1.0), "hand", 5)
    with pytest.raises(ValueError):
        generate_lowlevel(h, (1.0, 1.0), "pelvis", 0)


# goal extraction ---------------------------------------------------------------

def _snap(workspace, pelvis, placements=(), carried=None):
    x = GeometricState.build(workspace, pelvis=pelvis, placements=dict(placements))
    snap = Snapshot.from_state(x, workspace)
    if carried:
        objects = dict(snap.objects)
        objects[carried] = (None, tuple(snap.human.hand))
        snap = Snapshot(workspace, objects, snap.human, carried)
    return snap


def test_place_on_empty_table_south_edge(workspace):
    snap = _snap(workspace, (0.0, -0.8), carried="cup_red")
    g = extract_goal(("place",), snap)
    assert g == pytest.approx([0.0, -0.45 + 0.05, 0.75])


def test_place_avoids_object_matches_grid_oracle(workspace):
    blocker = (0.0, -0.40)
    snap = _snap(workspace, (0.0, -0.8), {"bowl": ("table", *blocker)}, carried="cup_red")
    g = extract_goal(("place",), snap)
    assert np.linalg.norm(g[:2] - blocker) >= 0.15 - 1e-9
    table = workspace.surface("table")
    _, best = grid_closest_free(table.lo + 0.05, table.hi - 0.05, (0.0, -0.8), [(blocker, 0.15)])
    # exact minimizer is no farther than the best 1 cm grid point
    assert np.linalg.norm(g[:2] - [0.0, -0.8]) <= best + 1e-9
    assert np.linalg.norm(g[:2] - [0.0, -0.8]) >= best - 0.01


@settings(max_examples=40)
@given(st.lists(st.tuples(st.floats(-0.75, 0.75), st.floats(-0.4, 0.4)), max_size=4),
       st.tuples(st.floats(-2.5, 2.5), st.floats(-2.0, 2.0)))
def test_place_point_property(workspace, blockers, pelvis):
    names = ["bowl", "jug", "plate_red", "cup_blue"]
    snap = _snap(workspace, pelvis, {n: ("table", *b) for n, b in zip(names, blockers)}, carried="cup_red")
    if snap.location().name != "table":
        return
    table = workspace.surface("table")
    discs = [(b, 0.15) for b in blockers]
    try:
        _, best = grid_closest_free(table.lo + 0.05, table.hi - 0.05, pelvis, discs)
    except LookupError:
        return
    g = extract_goal(("place",), snap)
    assert table.contains(g[:2], margin=0.05 - 1e-9)
    assert all(np.linalg.norm(g[:2] - np.asarray(b)) >= 0.15 - 1e-9 for b in blockers)
    assert np.linalg.norm(g[:2] - np.asarray(pelvis)) <= best + 1e-9


def test_full_surface(workspace):
    xs = np.arange(-0.75, 0.76, 0.1)
    ys = np.arange(-0.4, 0.41, 0.1)
    objs = [f"o{i}" for i in range(len(xs) * len(ys))]
    snap = _snap(workspace, (0.0, -0.8), carried="cup_red")
    objects = dict(snap.objects)
    for name, (x, y) in zip(objs, [(x, y) for x in xs for y in ys]):
        objects[name] = ("table", (x, y, 0.75))
    with pytest.raises(SurfaceFull):
        extract_goal(("place",), Snapshot(workspace, objects, snap.human, "cup_red"))


def test_pick_targets_nearest_of_class(workspace):
    snap = _snap(workspace, (-1.6, 1.65), {"cup_red": ("big_shelf", -2.0, 2.2), "cup_green": ("big_shelf", -1.5, 2.2)})
    assert extract_goal(("pick-up", "cup"), snap) == pytest.approx([-1.5, 2.2, 1.0])


def test_goto_stands_next_to_next_pick(workspace):
    snap = _snap(workspace, (0.0, -0.8), {"cup_red": ("big_shelf", -2.0, 2.2)})
    g = extract_goal(("go-to", "big_shelf"), snap, ("pick-up", "cup"))
    shelf = workspace.surface("big_shelf")
    assert g[:2] == pytest.approx([-2.0, shelf.lo[1] - STANDOFF])


def test_approach_tie_faces_human():
    square = Surface("sq", (0.0, 0.0), (1.0, 1.0))
    # the center is equally near all four edges; the side facing the human wins
    assert approach_point(square, (0.0, 0.0), (0.0, -3.0), 0.35) == pytest.approx([0.0, -0.85])
    assert approach_point(square, (0.0, 0.0), (3.0, 0.2), 0.35) == pytest.approx([0.85, 0.0])


# composition -------------------------------------------------------------------

@pytest.fixture(scope="module")
def one_person_model():
    mdp, demos = synth.mdp_fixtures()["one_person"]
    return irl_fit(demos, mdp)


def _three_object_snapshot():
    return bundled_scenario("set_table_3obj").snapshot()


def test_compose_one_object(workspace):
    snap = _snap(workspace, (0.0, -0.8), {"cup_red": ("big_shelf", -1.6, 2.2)})
    script = [("go-to", "big_shelf"), ("pick-up", "cup"), ("go-to", "table"), ("place",)]
    comp = compose_actions(script, snap)
    assert len(comp.source.actual) == 1 + 30 + 5 + 30 + 5
    assert comp.final.objects["cup_red"][0] == "table"
    assert [(e.kind, e.obj) for e in comp.events] == [("pick", "cup_red"), ("place", "cup_red")]


def test_compose_empty_task(workspace):
    comp = compose_actions([], _snap(workspace, (0.0, -0.8)))
    assert len(comp.source.actual) == 1 and comp.events == ()


def _check_composition(comp):
    traj = comp.source.actual
    assert traj.max_step() <= STEP_LIMIT + 1e-12
    for a, g, end in zip(comp.actions, comp.goals, comp.segment_ends):
        if a[0] in ("pick-up", "place"):
            assert np.array_equal(traj.hand[end], g)
        else:
            assert np.array_equal(traj.pelvis[end], g[:2])
    assert [(e.t, e.kind, e.obj) for e in traj.events()] == [(e.t, e.kind, e.obj) for e in comp.events]


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_hierarchical_prediction_properties(one_person_model, seed):
    snap = _three_object_snapshot()
    mdp = one_person_model.mdp
    comp = compose_prediction(one_person_model, snap, seed)
    _check_composition(comp)
    # class counts are conserved: every object sits on one surface or in the hand
    before = mdp_state(mdp, snap)
    after = mdp_state(mdp, comp.final)
    for c in mdp.classes:
        idx = [i for i, (cc, _) in enumerate(mdp.slots) if cc == c]
        held = lambda s: int(s[mdp.carry_index] == mdp.classes.index(c) + 1)
        assert sum(before[i] for i in idx) + held(before) == sum(after[i] for i in idx) + held(after)
    assert mdp.is_goal(after)


def test_three_object_event_schedule(workspace):
    snap = _snap(workspace, (0.0, -0.8), {"cup_red": ("big_shelf", -2.05, 2.2), "bowl": ("big_shelf", -1.15, 2.2),
                                          "plate_blue": ("small_shelf", 1.95, 2.2)})
    script = []
    for loc, cls in (("big_shelf", "cup"), ("small_shelf", "plate"), ("big_shelf", "jugbowl")):
        script += [("go-to", loc), ("pick-up", cls), ("go-to", "table"), ("place",)]
    comp = compose_actions(script, snap)
    _check_composition(comp)
    kinds = [(e.kind, e.obj) for e in comp.events]
    assert kinds == [("pick", "cup_red"), ("place", "cup_red"), ("pick", "plate_blue"), ("place", "plate_blue"),
                     ("pick", "bowl"), ("place", "bowl")]


def test_mdp_for_workspace(workspace):
    m = mdp_for_workspace(workspace, ["cup_red", "cup_green", "bowl"])
    assert m.totals == {"cup": 2, "jugbowl": 1}
    assert set(m.locations) == {"table", "big_shelf", "small_shelf"}


# degradation -------------------------------------------------------------------

def _walk(T=100):
    t = np.linspace(0, 1, T)
    pelvis = np.column_stack([2 * t, np.sin(3 * t)])
    hand = np.column_stack([pelvis, np.ones(T)])
    return HumanTrajectory(pelvis, hand, (None,) * T)


def test_zero_fraction_identity():
    traj = _walk()
    src = degrade_ground_truth(traj, 0.0, 5)
    assert np.array_equal(src.predicted.pelvis, traj.pelvis)


@given(st.integers(5, 200), st.floats(0.01, 0.95), st.integers(0, 2 ** 32 - 1))
def test_degradation_window_arithmetic(T, fraction, seed):
    traj = _walk(T)
    src = degrade_ground_truth(traj, fraction, seed)
    w = min(int(np.floor(fraction * T)), T - 2)
    assert src.info["window_length"] == w
    changed = np.nonzero(np.any(src.predicted.pelvis != traj.pelvis, axis=1))[0]
    if w == 0:
        assert len(changed) == 0
        return
    start = src.info["window_start"]
    assert 1 <= start and start + w <= T - 1
    assert set(changed) <= set(range(start, start + w))
    p = src.predicted.pelvis
    # the bridge is a straight line between the untouched neighbors
    line = traj.pelvis[start - 1] + np.outer(np.arange(0, w + 2) / (w + 1), traj.pelvis[start + w] - traj.pelvis[start - 1])
    assert p[start - 1:start + w + 1] == pytest.approx(line, abs=1e-12)
    assert len(src.predicted) == T and np.array_equal(src.actual.pelvis, traj.pelvis)


def test_degradation_seeds_differ():
    traj = _walk(200)
    starts = {degrade_ground_truth(traj, 0.3, s).info["window_start"] for s in range(10)}
    assert len(starts) > 1


def test_degradation_rejects_bad_fraction():
    with pytest.raises(ValueError):
        degrade_ground_truth(_walk(), 1.0)


def test_forecast_anchored_and_padded():
    traj = _walk(20)
    src = degrade_ground_truth(traj, 0.5, 1)
    f = src.forecast(15, 10)
    assert np.array_equal(f[0], traj.pelvis[15])
    assert np.array_equal(f[-1], src.predicted.pelvis[-1])


def test_trajectory_csv_round_trip(tmp_path):
    T = 12
    traj = _walk(T)
    traj = HumanTrajectory(traj.pelvis, traj.hand, (None,) * 4 + ("cup_red",) * 5 + (None,) * 3)
    traj.to_csv(tmp_path / "h.csv")
    back = HumanTrajectory.from_csv(tmp_path / "h.csv")
    assert back.carried == traj.carried
    assert back.pelvis == pytest.approx(traj.pelvis, abs=1e-6)
    assert [(e.t, e.kind) for e in back.events()] == [(4, "pick"), (9, "place")]


def test_trajectory_csv_missing_column(tmp_path):
    (tmp_path / "bad.csv").write_text("t,pelvis_x\n0,1.0\n")
    with pytest.raises(ValueError, match="missing"):
        HumanTrajectory.from_csv(tmp_path / "bad.csv")


def test_source_mode_validated():
    with pytest.raises(ValueError):
        HumanSource("telepathic", _walk(3), _walk(3))


def test_bundled_model_loads():
    model = IrlModel.load(synth.data_path("mdp", "one_person.model.json"))
    assert model.converged


def test_sampled_pace_is_seeded_and_bounded():
    from dynlgp.prediction.sources import HUMAN_DURATIONS, PACE_JITTER
    snap = bundled_scenario("set_table_3obj").snapshot()
    script = [("go-to", "big_shelf"), ("pick-up", "cup"), ("go-to", "table"), ("place",)]
    a = compose_actions(script, snap, rng=np.random.default_rng(4))
    b = compose_actions(script, snap, rng=np.random.default_rng(4))
    assert a.segment_ends == b.segment_ends
    walks = np.diff((0,) + a.segment_ends)[[0, 2]]
    nominal = HUMAN_DURATIONS["go-to"]
    assert np.all(np.abs(walks - nominal) <= PACE_JITTER * nominal + 0.5)
    assert np.allclose(a.source.actual.pelvis[a.segment_ends[0]], a.goals[0][:2])
