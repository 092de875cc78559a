"""Artifact writers: columnar solution files, convergence traces, and JSON
reports. All floats use shortest round-trip decimal form (repr), so files are
byte-stable across runs and worker counts."""

from __future__ import annotations

import json
import os

import numpy as np

from .problems import SolutionTriple


def _fmt(v) -> str:
    return repr(float(v))


def write_solution_csv(path: str, sol, grid, header_meta: dict) -> None:
    """Columns (path, time_index, Y, Z_1..Z_d, K).

    On the tree backend the "path" column is the node index within the level
    and K is the collapsed mean path.
    """
    if isinstance(sol, SolutionTriple):
        d = sol.Z.shape[2]
    else:
        d = 1
    meta = " ".join(f"{k}={v}" for k, v in header_meta.items())
    cols = ["path", "time_index", "Y"] + [f"Z_{j + 1}" for j in range(d)] + ["K"]
    lines = ["# rabsde-solution v1", f"# {meta}", ",".join(cols)]
    L = grid.n_points
    if isinstance(sol, SolutionTriple):
        for p in range(sol.Y.shape[0]):
            for i in range(L):
                z = [_fmt(sol.Z[p, i, j]) for j in range(d)] if i < L - 1 else [""] * d
                lines.append(",".join([str(p), str(i), _fmt(sol.Y[p, i])] + z + [_fmt(sol.K[p, i])]))
    else:
        for i in range(L):
            y_level = sol.Y[i]
            for node in range(len(y_level)):
                has_z = i < L - 1 and node < len(sol.Z[i])
                z = [_fmt(sol.Z[i][node])] if has_z else [""]
                lines.append(",".join([str(node), str(i), _fmt(y_level[node])] + z + [_fmt(sol.K_mean[i])]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_trace_csv(path: str, report) -> None:
    lines = ["iteration,distance,ratio,margin"]
    for row in report.trace_rows():
        ratio = _fmt(row["ratio"]) if row["ratio"] != "" else ""
        lines.append(f"{row['iteration']},{_fmt(row['distance'])},{ratio},{_fmt(row['margin'])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


def write_report_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, sort_keys=True, indent=1)
        fh.write("\n")


def ensure_dir(path: str) -> None:
    os.makedirs(path, exist_ok=True)
