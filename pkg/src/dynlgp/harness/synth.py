"""Synthetic desk-scale scenarios and IRL fixtures.

Everything here is deterministic given its seed; the bundled files under
``dynlgp/data`` were produced by :func:`write_bundled_data`.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from ..kinematics import GeometricState, Surface, Workspace, deduce_state
from ..pddl import format_problem, parse_domain
from ..prediction.irl import irl_fit
from ..prediction.mdp import Demonstration, SetTableMdp, save_demonstrations, scripted_expert
from .scenario import data_path

SURFACES = (
    dict(name="table", center=[0.0, 0.0], size=[1.6, 0.9], height=0.75, at_radius=0.9),
    dict(name="big_shelf", center=[-1.6, 2.2], size=[1.2, 0.4], height=1.0, at_radius=0.7),
    dict(name="small_shelf", center=[1.6, 2.2], size=[1.0, 0.4], height=1.0, at_radius=0.7),
)
# object slots along the shelves' center lines
SLOTS = tuple([("big_shelf", -1.6 + dx, 2.2) for dx in (-0.45, -0.15, 0.15, 0.45)]
              + [("small_shelf", 1.6 + dx, 2.2) for dx in (-0.35, 0.0, 0.35)])
OBJECTS = ("cup_red", "cup_green", "cup_blue", "cup_pink", "plate_pink", "plate_red", "plate_green",
           "plate_blue", "jug", "bowl")
ROBOT_START = [0.0, 1.2, 0.0]
HUMAN_START = [0.0, -0.8]


def object_class(name: str) -> str:
    if name.startswith("cup"):
        return "cup"
    if name.startswith("plate"):
        return "plate"
    return "jugbowl"


def workspace() -> Workspace:
    return Workspace({s["name"]: Surface(s["name"], tuple(s["center"]), tuple(s["size"]), s["height"],
                                         s["at_radius"]) for s in SURFACES},
                     {o: object_class(o) for o in OBJECTS})


def delivery_script(objects: Sequence[str], placements: dict) -> list[list[str]]:
    script = []
    for o in objects:
        script += [["go-to", placements[o][0]], ["pick-up", o], ["go-to", "table"], ["place"]]
    return script


def scenario_dict(name: str, placements: dict, *, human: dict, goal_objects: Sequence[str] | None = None,
                  mode: str = "dynamic", timeout: int | None = None) -> tuple[dict, str]:
    """Scenario JSON and the matching PDDL problem text."""
    domain = parse_domain(data_path("set_table.pddl").read_text())
    ws = workspace()
    x0 = GeometricState.build(ws, robot=ROBOT_START, pelvis=HUMAN_START, placements=placements)
    init = deduce_state(x0, domain, ws) | {("agent-avoid-human",)}
    goal_objects = sorted(placements) if goal_objects is None else goal_objects
    goal = {("on", o, "table") for o in goal_objects}
    problem = format_problem(name, domain, sorted(init), sorted(goal))
    raw = dict(
        schema_version=1, name=name, domain="set_table.pddl", problem=f"{name}.pddl",
        geometry=dict(surfaces=[dict(s) for s in SURFACES],
                      objects={o: dict(surface=p[0], xy=[round(p[1], 6), round(p[2], 6)], **{"class": object_class(o)})
                               for o, p in sorted(placements.items())}),
        robot_start=ROBOT_START, human_start=HUMAN_START, human=human, mode=mode, trigger_period=10,
        timeout=timeout)
    return raw, problem


def write_scenario(out_dir, raw: dict, problem: str) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / raw["problem"]).write_text(problem)
    path = out / f"{raw['name']}.json"
    path.write_text(json.dumps(raw, indent=1) + "\n")
    return path


def random_scenario(rng: np.random.Generator, name: str, *, n_objects: int | None = None,
                    fraction: float = 0.3, seed: int = 0) -> tuple[dict, str]:
    n = int(rng.integers(3, 6)) if n_objects is None else n_objects
    objs = sorted(rng.choice(OBJECTS, size=n, replace=False).tolist())
    slots = rng.choice(len(SLOTS), size=n, replace=False)
    placements = {o: SLOTS[int(i)] for o, i in zip(objs, slots)}
    k = int(rng.integers(1, n))
    mine = [objs[int(i)] for i in rng.permutation(n)[:k]]
    human = dict(mode="degraded", script=delivery_script(mine, placements), fraction=fraction, seed=seed,
                 delay=int(rng.integers(0, 21)))
    return scenario_dict(name, placements, human=human)


def make_suite(out_dir, n: int = 20, seed: int = 0, fraction: float = 0.3) -> list[Path]:
    rng = np.random.default_rng(seed)
    return [write_scenario(out_dir, *random_scenario(rng, f"synth_{i:02d}", fraction=fraction)) for i in range(n)]


# ---------------------------------------------------------------------------
# IRL fixtures
# ---------------------------------------------------------------------------

def _tuple_mdp(classes, locations, totals, goal, slots=None) -> SetTableMdp:
    slots = tuple((c, l) for c in classes for l in locations) if slots is None else slots
    return SetTableMdp(tuple(classes), tuple(locations), tuple(slots), dict(totals), dict(goal))


def cup_fetch_mdp() -> SetTableMdp:
    """Nine count and position components plus a carry flag; humanPos 1 is the table."""
    slots = (("cup", "table"), ("cup", "shelf1"), ("cup", "shelf2"), ("plate", "table"), ("plate", "shelf1"),
             ("jugbowl", "table"), ("jugbowl", "shelf1"), ("jugbowl", "shelf2"))
    return SetTableMdp(("cup", "plate", "jugbowl"), ("shelf1", "table", "shelf2"), slots,
                       {"cup": 4, "plate": 1, "jugbowl": 4}, {"cup": 1})


CUP_FETCH_START = (0, 4, 0, 1, 0, 3, 1, 0, 1, 0)


def _random_start(mdp: SetTableMdp, rng: np.random.Generator, pos: int | None = None) -> tuple:
    """Every object on a random non-goal slot of its class, empty hands."""
    s = [0] * len(mdp.slots)
    for c in mdp.classes:
        choices = [i for i, (cc, l) in enumerate(mdp.slots) if cc == c and l != mdp.goal_location]
        for _ in range(mdp.totals[c]):
            s[choices[int(rng.integers(len(choices)))]] += 1
    p = mdp.locations.index(mdp.goal_location) if pos is None else pos
    return tuple(s) + (p, 0)


SYMMETRIC_START = (0, 1, 1, 0, 0)


def _demo(mdp: SetTableMdp, s0, actions) -> Demonstration:
    states = [tuple(s0)]
    for a in actions:
        states.append(mdp.step(states[-1], a))
    return Demonstration(states, list(actions))


def mdp_fixtures(seed: int = 0) -> dict[str, tuple[SetTableMdp, list[Demonstration]]]:
    rng = np.random.default_rng(seed)
    out = {}
    tiny = _tuple_mdp(["cup"], ["table", "shelf"], {"cup": 1}, {"cup": 1})
    out["tiny"] = (tiny, [scripted_expert(tiny, (0, 1, 0, 0))])

    # one cup on each shelf, either delivers the goal: demonstrations split evenly
    sym = _tuple_mdp(["cup"], ["table", "shelf1", "shelf2"], {"cup": 2}, {"cup": 1})
    demos = []
    for i in range(20):
        shelf = "shelf1" if i % 2 == 0 else "shelf2"
        demos.append(_demo(sym, SYMMETRIC_START, [("go-to", shelf), ("pick-up", "cup"), ("go-to", "table"),
                                                  ("place",)]))
    out["symmetric"] = (sym, demos)

    locs = ["table", "big_shelf", "small_shelf"]
    four = _tuple_mdp(["cup", "plate", "jugbowl"], locs, {"cup": 2, "plate": 1, "jugbowl": 1},
                      {"cup": 2, "plate": 1, "jugbowl": 1})
    out["four_object"] = (four, [scripted_expert(four, _random_start(four, rng), rng) for _ in range(20)])

    one = _tuple_mdp(["cup", "plate", "jugbowl"], locs, {"cup": 1, "plate": 1, "jugbowl": 1},
                     {"cup": 1, "plate": 1})
    out["one_person"] = (one, [scripted_expert(one, _random_start(one, rng), rng) for _ in range(20)])

    t2 = cup_fetch_mdp()
    out["cup_fetch"] = (t2, [scripted_expert(t2, CUP_FETCH_START, rng) for _ in range(5)])
    return out


def write_mdp_fixtures(out_dir, seed: int = 0, train: Sequence[str] = ("one_person",)) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, (mdp, demos) in mdp_fixtures(seed).items():
        (out / f"{name}.mdp.json").write_text(json.dumps(mdp.to_dict(), indent=1) + "\n")
        save_demonstrations(demos, out / f"{name}.demos.json")
        paths[name] = out / f"{name}.mdp.json"
        if name in train:
            irl_fit(demos, mdp).save(out / f"{name}.model.json")
    return paths


# ---------------------------------------------------------------------------
# bundled scenarios
# ---------------------------------------------------------------------------

def bundled_fixtures() -> list[tuple[dict, str]]:
    S = dict(zip(("b0", "b1", "b2", "b3", "s0", "s1", "s2"), SLOTS))
    out = []
    one = {"cup_green": S["b1"]}
    out.append(scenario_dict("set_table_1obj", one, human=dict(mode="ground-truth", script=[])))
    three = {"cup_red": S["b0"], "plate_blue": S["s2"], "bowl": S["b3"]}
    out.append(scenario_dict("set_table_3obj", three, human=dict(
        mode="degraded", script=delivery_script(["plate_blue"], three), fraction=0.3, seed=0)))
    out.append(scenario_dict("set_table_3obj_hier", three, human=dict(
        mode="hierarchical", model="../mdp/one_person.model.json", seed=0)))
    seven = {"cup_red": S["b0"], "cup_green": S["b1"], "plate_blue": S["b2"], "jug": S["b3"],
             "cup_blue": S["s0"], "plate_pink": S["s1"], "bowl": S["s2"]}
    out.append(scenario_dict("set_table_7obj", seven, human=dict(
        mode="degraded", script=delivery_script(["plate_pink", "cup_blue", "bowl"], seven), fraction=0.3, seed=0)))
    return out


def write_bundled_data(root=None) -> None:
    root = data_path() if root is None else Path(root)
    write_mdp_fixtures(root / "mdp")
    for raw, problem in bundled_fixtures():
        write_scenario(root / "scenarios", raw, problem)
    make_suite(root / "scenarios" / "suite")
