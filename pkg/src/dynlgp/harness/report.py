"""Report files: run table, summary statistics and the data behind the performance plots."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .batch import RUN_COLUMNS, TIMING_COLUMNS, MetricsTable

SUMMARY_METRICS = ("success", "path_ratio", "replan_count", "task_time_reduction", "iou", "solved_nlps",
                   "min_clearance", "path_length")
TIMING_METRICS = ("symbolic_plan_time", "total_solution_time", "task_time_reduction_with_pauses")
PROGRESS_BINS = np.linspace(0.0, 1.0, 11)


class EmptyTable(ValueError):
    pass


def fmt(v) -> str:
    """Stable text form: repr for floats (round-trips exactly), empty for NaN."""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    if isinstance(v, np.floating):
        return fmt(float(v))
    return str(v)


def mean_std(values) -> dict:
    """Mean and population standard deviation over the finite values."""
    x = np.array([float(v) for v in values], dtype=float)
    x = x[np.isfinite(x)]
    if len(x) == 0:
        return dict(mean=None, std=None, n=0)
    return dict(mean=float(np.mean(x)), std=float(np.std(x)), n=int(len(x)))


def summarize(table: MetricsTable) -> dict:
    out = {"runs": len(table), "modes": {}}
    for mode in sorted({r.mode for r in table.records}):
        recs = table.by_mode(mode)
        m = {k: mean_std([getattr(r, k) for r in recs]) for k in SUMMARY_METRICS + TIMING_METRICS}
        m["success_rate"] = float(np.mean([r.success for r in recs]))
        m["runs"] = len(recs)
        out["modes"][mode] = m
    return out


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row[c]) for c in columns])


def _bucket_rows(pairs, key_name: str, value_name: str, keys=None) -> list[dict]:
    groups: dict = {}
    for k, v in pairs:
        groups.setdefault(k, []).append(v)
    rows = []
    for k in sorted(groups) if keys is None else keys:
        vals = np.asarray(groups.get(k, []), dtype=float)
        rows.append({key_name: k, "count": len(vals),
                     f"median_{value_name}": float(np.median(vals)) if len(vals) else math.nan,
                     f"mean_{value_name}": float(np.mean(vals)) if len(vals) else math.nan,
                     f"min_{value_name}": float(np.min(vals)) if len(vals) else math.nan,
                     f"max_{value_name}": float(np.max(vals)) if len(vals) else math.nan})
    return rows


def _progress_bin(p: float) -> float:
    i = min(int(np.floor(p * 10 + 1e-9)), 9)
    return round(i / 10, 1)


def performance_tables(table: MetricsTable) -> dict[str, list[dict]]:
    events = [(r, e) for r in table.records if r.mode == "dynamic" for e in r.replans
              if e["skeleton_length"]]
    by_len = _bucket_rows([(e["skeleton_length"], e["time"]) for _, e in events], "skeleton_length", "time")
    solved = {}
    for _, e in events:
        solved.setdefault(e["skeleton_length"], []).append(e["n_solved"])
    for row in by_len:
        row["mean_solved_nlps"] = float(np.mean(solved[row["skeleton_length"]]))
    bins = [round(b, 1) for b in PROGRESS_BINS[:-1]]
    by_prog = _bucket_rows([(_progress_bin(e["progress"]), e["time"]) for _, e in events], "progress", "time", bins)
    len_prog = _bucket_rows([(_progress_bin(e["progress"]), e["skeleton_length"]) for _, e in events], "progress",
                            "skeleton_length", bins)
    return {"time_over_skeleton_length": by_len, "time_over_task_progress": by_prog,
            "skeleton_length_over_progress": len_prog}


def _plot(out: Path, tables: dict, table: MetricsTable) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    specs = [("time_over_skeleton_length", "skeleton_length", "median_time", "skeleton length",
              "total solution time [s]"),
             ("time_over_task_progress", "progress", "median_time", "task progress", "total solution time [s]"),
             ("skeleton_length_over_progress", "progress", "median_skeleton_length", "task progress",
              "skeleton length")]
    for name, xk, yk, xl, yl in specs:
        rows = [r for r in tables[name] if r["count"]]
        fig, ax = plt.subplots(figsize=(5, 3.5))
        if rows:
            ax.plot([r[xk] for r in rows], [r[yk] for r in rows], "o-", label="median")
            ax.fill_between([r[xk] for r in rows], [r[yk.replace("median", "min")] for r in rows],
                            [r[yk.replace("median", "max")] for r in rows], alpha=0.2, label="range")
            ax.legend()
        ax.set_xlabel(xl)
        ax.set_ylabel(yl)
        fig.tight_layout()
        p = out / f"{name}.png"
        fig.savefig(p, dpi=100)
        plt.close(fig)
        paths.append(p)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    modes = sorted({r.mode for r in table.records})
    rates = [np.mean([r.success for r in table.by_mode(m)]) for m in modes]
    ax.bar(modes, rates)
    ax.set_ylim(0, 1)
    ax.set_ylabel("success rate")
    fig.tight_layout()
    p = out / "success_rate.png"
    fig.savefig(p, dpi=100)
    plt.close(fig)
    paths.append(p)
    return paths


def emit_report(table: MetricsTable, out_dir, *, figures: bool = True) -> dict[str, Path]:
    """Write summary.json, runs.csv, timings.csv, the three performance tables and their plots."""
    if len(table) == 0:
        raise EmptyTable("nonempty metrics table required")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise OSError(f"output directory {out} is not writable: {e}") from e
    paths = {}
    summary = summarize(table)
    paths["summary"] = out / "summary.json"
    paths["summary"].write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    paths["runs"] = out / "runs.csv"
    _write_csv(paths["runs"], RUN_COLUMNS, [r.row() for r in table.records])
    paths["timings"] = out / "timings.csv"
    _write_csv(paths["timings"], TIMING_COLUMNS, [r.timing_row() for r in table.records])
    tables = performance_tables(table)
    for name, rows in tables.items():
        cols = list(rows[0]) if rows else [name.split("_over_")[-1], "count"]
        paths[name] = out / f"{name}.csv"
        _write_csv(paths[name], cols, rows)
    if figures:
        for p in _plot(out, tables, table):
            paths[p.stem + "_png"] = p
    return paths


def read_runs(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
