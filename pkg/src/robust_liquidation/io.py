"""Columnar CSV files with JSON sidecars.

Floats are written with ``%.17g`` so they round-trip exactly.  Sidecars are
written with sorted keys and carry no timestamps, so identical runs produce
identical bytes.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pandas as pd

from .grid import SpaceTimeGrid
from .model import FactorModel, RobustParams
from .pde_solver import ValueSolution

SCHEMA_VERSION = 1
FLOAT_FORMAT = "%.17g"


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, (frozenset, set)):
        return sorted(to_jsonable(v) for v in obj)
    return obj


def write_json(path, data) -> None:
    Path(path).write_text(json.dumps(to_jsonable(data), indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def write_table(path, columns: dict) -> None:
    """Write equally long 1-d arrays as CSV columns in the given order."""
    names = list(columns)
    data = np.column_stack([np.asarray(columns[n], dtype=float).ravel() for n in names])
    np.savetxt(path, data, fmt=FLOAT_FORMAT, delimiter=",", header=",".join(names), comments="")


def read_table(path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def _node_columns(grid: SpaceTimeGrid, n_t_rows: np.ndarray) -> dict:
    pts = grid.points()
    n_t = n_t_rows.size
    cols = {"t": np.repeat(n_t_rows, pts.shape[0])}
    for k in range(grid.dim):
        cols[f"y{k + 1}"] = np.tile(pts[:, k], n_t)
    return cols


SOLUTION_META_SKIP = {"elapsed_s", "lte"}


def write_solution(sol: ValueSolution, out_dir, extra_meta: dict | None = None) -> None:
    """Write ``w.csv`` (t, y..., w, v, Dw..., Dv...) and ``meta.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    g = sol.grid
    cols = _node_columns(g, g.t_nodes)
    cols["w"] = sol.w.reshape(-1)
    cols["v"] = sol.v_nodes().reshape(-1)
    Dv = sol.Dv_nodes()
    for k in range(g.dim):
        cols[f"Dw{k + 1}"] = sol.Dw[:, k].reshape(-1)
    for k in range(g.dim):
        cols[f"Dv{k + 1}"] = Dv[:, k].reshape(-1)
    write_table(out / "w.csv", cols)
    meta = {k: v for k, v in sol.meta.items() if k not in SOLUTION_META_SKIP}
    sidecar = {
        "schema_version": SCHEMA_VERSION,
        "kind": "value_solution",
        "columns": list(cols),
        "grid": {"t_nodes": g.t_nodes, "y_nodes": [y for y in g.y_nodes], "tau_min": g.tau_min, "T": g.T},
        "meta": meta,
        "lte": sol.meta.get("lte"),
    }
    sidecar.update(extra_meta or {})
    write_json(out / "meta.json", sidecar)


def read_solution(sol_dir, model: FactorModel, params: RobustParams) -> tuple[ValueSolution, dict]:
    """Rebuild a :class:`ValueSolution` from ``w.csv`` and ``meta.json``.

    Raises:
        ValueError: if the files are missing or inconsistent.
    """
    d = Path(sol_dir)
    if not (d / "meta.json").exists() or not (d / "w.csv").exists():
        raise ValueError(f"no solution files in {d}")
    meta = read_json(d / "meta.json")
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {meta.get('schema_version')!r}")
    gm = meta["grid"]
    grid = SpaceTimeGrid(np.asarray(gm["t_nodes"], dtype=float),
                         tuple(np.asarray(y, dtype=float) for y in gm["y_nodes"]),
                         float(gm["tau_min"]), float(gm["T"]))
    df = read_table(d / "w.csv")
    shape = (grid.t_nodes.size,) + grid.shape
    if len(df) != int(np.prod(shape)):
        raise ValueError(f"w.csv has {len(df)} rows, expected {int(np.prod(shape))}")
    missing = [f"Dw{k + 1}" for k in range(grid.dim) if f"Dw{k + 1}" not in df.columns]
    if missing or "w" not in df.columns:
        raise ValueError(f"w.csv lacks columns {missing or ['w']}")
    w = df["w"].to_numpy().reshape(shape)
    Dw = np.stack([df[f"Dw{k + 1}"].to_numpy().reshape(shape) for k in range(grid.dim)], axis=1)
    sol_meta = dict(meta.get("meta", {}))
    if meta.get("lte") is not None:
        sol_meta["lte"] = np.asarray(meta["lte"], dtype=float)
    if "lte_cumulative" in sol_meta:
        sol_meta["lte_cumulative"] = np.asarray(sol_meta["lte_cumulative"], dtype=float)
    return ValueSolution(grid, w, Dw, params, model, sol_meta), meta
