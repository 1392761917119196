"""Run outputs: per-step CSV, legacy VTK snapshots, JSON diagnostics."""

from __future__ import annotations

import csv
import json
import resource
import sys
from pathlib import Path

import numpy as np

from .mesh import VolumeMesh

RUN_COLUMNS = ("step", "time_s", "min_T", "max_T", "mean_T", "newton_iters", "krylov_iters_total",
               "build_F_s", "build_LU_s", "apply_LU_s", "other_s")
COMPARE_COLUMNS = ("eps_rel", "e_T", "F_rel_error", "bytes", "max_rank", "wall_s")
_INT_COLUMNS = {"step", "newton_iters", "krylov_iters_total", "bytes", "max_rank"}


def write_csv(rows, path, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: int(v) if k in _INT_COLUMNS else float(v) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def write_run_csv(series, path) -> None:
    write_csv(series.rows(), path, RUN_COLUMNS)


def write_vtk(mesh: VolumeMesh, temperature: np.ndarray, path, title: str = "temperature") -> None:
    """Legacy ASCII unstructured grid with point scalars ``temperature``."""
    T = np.asarray(temperature, dtype=float)
    if len(T) != mesh.n_nodes:
        raise ValueError("one temperature per mesh node is required")
    nt, nh = len(mesh.tets), len(mesh.hexes)
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_nodes} double"]
    lines += [f"{x:.10g} {y:.10g} {z:.10g}" for x, y, z in mesh.nodes]
    lines.append(f"CELLS {nt + nh} {5 * nt + 9 * nh}")
    lines += ["4 " + " ".join(map(str, c)) for c in mesh.tets]
    lines += ["8 " + " ".join(map(str, c)) for c in mesh.hexes]
    lines.append(f"CELL_TYPES {nt + nh}")
    lines += ["10"] * nt + ["12"] * nh
    lines += [f"POINT_DATA {mesh.n_nodes}", "SCALARS temperature double 1", "LOOKUP_TABLE default"]
    lines += [f"{v:.12g}" for v in T]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk_scalars(path, name: str = "temperature") -> np.ndarray:
    tokens = Path(path).read_text().split()
    i = tokens.index("SCALARS")
    while tokens[i + 1] != name:
        i = tokens.index("SCALARS", i + 1)
    n = int(tokens[tokens.index("POINT_DATA") + 1])
    start = tokens.index("LOOKUP_TABLE", i) + 2
    return np.array(tokens[start:start + n], dtype=float)


def peak_rss_bytes() -> int | None:
    """Peak resident set size of this process, if the platform reports it."""
    try:
        kb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    except (AttributeError, ValueError):
        return None
    return int(kb if sys.platform == "darwin" else kb * 1024)


def write_json(data: dict, path) -> None:
    def default(o):
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(f"not JSON serializable: {type(o)}")

    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=default) + "\n")
