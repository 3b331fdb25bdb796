"""Serialization of trajectory records and run directories.

Trajectory time series go to CSV (one row per sample); everything needed
to reproduce or audit a run (parameters, seeds, code version) goes to JSON
sidecars.  Floats are written with %.17g so every value round-trips
exactly; JSON is emitted with sorted keys so identical runs produce
byte-identical files.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict

import numpy as np

from . import __version__
from .engine import TrajectoryRecord
from .model import GridSpec, ModelParams

__all__ = [
    "CSV_COLUMNS",
    "params_to_dict",
    "params_from_dict",
    "grid_to_dict",
    "grid_from_dict",
    "write_trajectory",
    "read_trajectory_csv",
    "read_meta",
    "dump_json",
    "load_json",
]

CSV_COLUMNS = ["t", "X", "mean_q", "mean_p", "c_qq", "c_pp", "c_qp", "S"]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def params_to_dict(params: ModelParams) -> dict:
    return asdict(params)


def params_from_dict(d: dict) -> ModelParams:
    return ModelParams(**d)


def grid_to_dict(grid: GridSpec) -> dict:
    return asdict(grid)


def grid_from_dict(d: dict) -> GridSpec:
    return GridSpec(**d)


def dump_json(path, payload: dict):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def write_trajectory(csv_path, meta_path, record: TrajectoryRecord, seed_info: dict):
    """CSV time series plus JSON sidecar; atomic via rename."""
    ms = record.moments_series
    n = record.times.size
    x_col = record.record_X if record.record_X is not None else np.full(n, np.nan)
    tmp = f"{csv_path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for i in range(n):
            row = (
                record.times[i], x_col[i], ms.mean_q[i], ms.mean_p[i],
                ms.c_qq[i], ms.c_pp[i], ms.c_qp[i], record.entropy_series[i],
            )
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    os.replace(tmp, csv_path)

    meta = {
        "code_version": __version__,
        "params": params_to_dict(record.params),
        "grid": grid_to_dict(record.grid),
        "dt": record.dt,
        "sample_every": record.sample_every,
        "seed": seed_info,
        "record_present": record.record_X is not None,
        "initial": record.initial_info,
        "final_populations": (
            None if record.final_populations is None
            else [float(v) for v in record.final_populations]
        ),
    }
    dump_json(meta_path, meta)


def read_trajectory_csv(csv_path) -> dict:
    """Columns as float arrays keyed by name (X may contain NaN for k=0)."""
    with open(csv_path) as fh:
        header = fh.readline().strip().split(",")
        if header != CSV_COLUMNS:
            raise ValueError(f"unexpected trajectory CSV header in {csv_path}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != len(CSV_COLUMNS):
        raise ValueError(f"malformed trajectory CSV {csv_path}")
    return {name: data[:, i] for i, name in enumerate(CSV_COLUMNS)}


def read_meta(meta_path) -> dict:
    return load_json(meta_path)
