"""Batch experiments over scenario suites and the per-run metrics."""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..costs import DT
from ..lgp import RunReport, run
from .scenario import Scenario, load_scenario

log = logging.getLogger(__name__)

# columns of runs.csv; all deterministic given scenario and seed
RUN_COLUMNS = ("scenario", "mode", "seed", "success", "failure", "steps", "path_length", "baseline_path_length",
               "path_ratio", "replan_count", "replan_failures", "solved_nlps", "initial_skeleton_length",
               "human_alone_steps", "task_time_reduction", "iou", "min_clearance", "robot_moved", "human_moved")
TIMING_COLUMNS = ("scenario", "mode", "seed", "symbolic_plan_time", "nlp_time", "total_solution_time",
                  "task_time_reduction_with_pauses")


@dataclass
class RunRecord:
    scenario: str
    mode: str
    seed: int
    success: bool
    failure: str
    steps: int
    path_length: float
    baseline_path_length: float
    path_ratio: float
    replan_count: int
    replan_failures: int
    solved_nlps: int
    initial_skeleton_length: int
    human_alone_steps: int
    task_time_reduction: float
    iou: float
    min_clearance: float
    robot_moved: str
    human_moved: str
    # wall-clock measurements, kept out of runs.csv
    symbolic_plan_time: float = math.nan
    nlp_time: float = math.nan
    total_solution_time: float = math.nan
    task_time_reduction_with_pauses: float = math.nan
    replans: list = field(default_factory=list, repr=False)
    report: RunReport | None = field(default=None, repr=False, compare=False)

    def row(self) -> dict:
        d = asdict(self) if self.report is None else {k: getattr(self, k) for k in RUN_COLUMNS}
        return {k: d[k] for k in RUN_COLUMNS}

    def timing_row(self) -> dict:
        return {k: getattr(self, k) for k in TIMING_COLUMNS}


@dataclass
class MetricsTable:
    records: list[RunRecord]

    def __len__(self) -> int:
        return len(self.records)

    def by_mode(self, mode: str) -> list[RunRecord]:
        return [r for r in self.records if r.mode == mode]


def task_iou(human_moved: Iterable[str], robot_assigned: Iterable[str]) -> float:
    """Intersection over union of the objects the human moved and the robot's goal objects."""
    h, r = set(human_moved), set(robot_assigned)
    union = h | r
    return len(h & r) / len(union) if union else 0.0


def record_from_report(scenario: Scenario, seed: int, rep: RunReport, baseline: float | None,
                       human_alone: int) -> RunRecord:
    replans = [e for e in rep.triggers if e.get("replan") and e["ok"]]
    sym = [e["symbolic_time"] for e in replans]
    nlp = sum(e["nlp_time"] for e in rep.triggers)
    total = sum(e["symbolic_time"] + e["nlp_time"] for e in rep.triggers)
    if rep.mode == "single":
        ratio = 1.0 if rep.planned_path_length > 0 else math.nan
    else:
        ratio = rep.path_length / baseline if baseline else math.nan
    ttr = human_alone / rep.steps if rep.success and rep.steps > 0 else math.nan
    ttr_p = human_alone * DT / (rep.steps * DT + total) if rep.success and rep.steps > 0 else math.nan
    return RunRecord(
        scenario=scenario.name, mode=rep.mode, seed=seed, success=rep.success, failure=rep.failure or "",
        steps=rep.steps, path_length=rep.path_length,
        baseline_path_length=baseline if baseline is not None else math.nan, path_ratio=ratio,
        replan_count=rep.replan_count, replan_failures=rep.replan_failures,
        solved_nlps=int(sum(e["n_solved"] for e in replans)),
        initial_skeleton_length=len(rep.initial_skeleton), human_alone_steps=human_alone,
        task_time_reduction=ttr, iou=task_iou(rep.human_moved, rep.goal_objects), min_clearance=rep.min_clearance,
        robot_moved=";".join(rep.robot_moved), human_moved=";".join(rep.human_moved),
        symbolic_plan_time=float(np.mean(sym)) if sym else math.nan, nlp_time=nlp, total_solution_time=total,
        task_time_reduction_with_pauses=ttr_p,
        replans=[dict(t=e["t"], reason=e["reason"], skeleton_length=e["skeleton_length"],
                      progress=e.get("progress", math.nan), time=e["symbolic_time"] + e["nlp_time"],
                      n_solved=e["n_solved"]) for e in replans],
        report=rep)


def run_scenario(scenario: Scenario, seed: int, modes: Sequence[str] = ("single", "dynamic")) -> list[RunRecord]:
    """Run one scenario with one seed in each mode; the single run supplies the path baseline."""
    source = scenario.human_source(seed)
    human_alone = scenario.human_alone_steps()
    reports = {}
    for mode in ("single", "dynamic"):
        if mode in modes or (mode == "single" and "dynamic" in modes):
            try:
                reports[mode] = run(scenario.instance(), scenario.initial_state(), source, mode)
            except Exception as e:  # a crashed run is recorded, the batch goes on
                log.exception("%s seed %d %s crashed", scenario.name, seed, mode)
                reports[mode] = e
    single = reports.get("single")
    baseline = single.planned_path_length if isinstance(single, RunReport) and single.planned_path_length > 0 else None
    out = []
    for mode in modes:
        rep = reports[mode]
        if isinstance(rep, Exception):
            out.append(_crashed(scenario, mode, seed, rep, human_alone))
        else:
            out.append(record_from_report(scenario, seed, rep, baseline, human_alone))
    return out


def _crashed(scenario: Scenario, mode: str, seed: int, err: Exception, human_alone: int) -> RunRecord:
    nan = math.nan
    return RunRecord(scenario.name, mode, seed, False, f"error:{type(err).__name__}", 0, nan, nan, nan, 0, 0, 0, 0,
                     human_alone, nan, nan, nan, "", "")


def _job(args):
    path, seed, modes = args
    recs = run_scenario(load_scenario(path), seed, modes)
    for r in recs:
        r.report = None          # keep worker results small
    return recs


def run_batch(scenarios: Sequence, repeats: int = 1, seeds: Sequence[int] | None = None, *,
              modes: Sequence[str] = ("single", "dynamic"), workers: int = 1) -> MetricsTable:
    """Run every scenario ``repeats`` times (one seed each) in both modes.

    ``scenarios`` are paths or loaded :class:`Scenario` objects.  Results are
    ordered by (scenario, seed, mode) regardless of ``workers``.
    """
    seeds = list(range(repeats)) if seeds is None else list(seeds)[:repeats]
    if len(seeds) < repeats:
        raise ValueError(f"{repeats} repeats need {repeats} seeds, got {len(seeds)}")
    records: list[RunRecord] = []
    if workers > 1:
        paths = [s.path if isinstance(s, Scenario) else Path(s) for s in scenarios]
        jobs = [(p, sd, tuple(modes)) for p in paths for sd in seeds]
        with ProcessPoolExecutor(workers) as pool:
            for recs in pool.map(_job, jobs):
                records.extend(recs)
    else:
        for s in scenarios:
            sc = s if isinstance(s, Scenario) else load_scenario(s)
            for sd in seeds:
                t0 = time.perf_counter()
                records.extend(run_scenario(sc, sd, modes))
                log.info("%s seed %d done in %.2fs", sc.name, sd, time.perf_counter() - t0)
    return MetricsTable(records)


def suite_paths(directory) -> list[Path]:
    paths = sorted(Path(directory).glob("*.json"))
    if not paths:
        raise FileNotFoundError(f"no scenario files in {directory}")
    return paths


def read_seeds(path) -> list[int]:
    text = Path(path).read_text().replace(",", " ").replace("[", " ").replace("]", " ")
    return [int(tok) for tok in text.split()]
