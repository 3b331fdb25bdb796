"""Seeded ensembles of trajectories, sweeps and their summary statistics.

Each trajectory is an independent unit of work: its noise and (when the
energy-shell rule is active) its initial condition derive from
SeedSequence([base_seed, index]), so results are bit-reproducible no
matter how many workers run them or in which order.  With an output
directory the runner persists every trajectory (CSV + meta) plus a
checkpoint file, and the summary is always rebuilt from the persisted
records, which makes interrupted runs resumable with byte-identical
output.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .classical import sample_energy_shell
from .engine import TrajectoryAbort, propagate, trajectory_rng
from .metrics import steady_state_mean
from .model import (
    GridSpec,
    ModelParams,
    default_grid,
    derived_scales,
    scale_for_classical_limit,
    suggested_extent,
)
from .recordio import (
    dump_json,
    grid_to_dict,
    load_json,
    params_to_dict,
    read_meta,
    read_trajectory_csv,
    write_trajectory,
)
from .states import make_gaussian, make_product_state, make_spin_coherent

__all__ = [
    "EnsembleSpec",
    "EnsembleSummary",
    "energy_shell_initials",
    "initial_state_for",
    "run_ensemble",
    "recompute_summary",
    "sweep",
    "fit_power_law",
    "spec_to_dict",
    "spec_from_dict",
]

STEADY_WINDOW = 0.25
MIN_COMPLETION = 0.9


@dataclass(frozen=True)
class EnsembleSpec:
    params: ModelParams
    n_trajectories: int
    base_seed: int
    dt: float
    t_final: float
    sample_every: int
    initial_rule: tuple          # ("fixed", theta, phi, z0, p0) | ("energy_shell", e_over_e0)
    grid_extent: float | None = None   # half-width in delta_z units; None = suggested_extent
    grid_n: int | None = None
    paired_zero: bool = False

    def __post_init__(self):
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be >= 1")
        if self.initial_rule[0] not in ("fixed", "energy_shell"):
            raise ValueError(f"unknown initial-condition rule {self.initial_rule[0]!r}")

    def grid(self) -> GridSpec:
        extent = self.grid_extent if self.grid_extent is not None else suggested_extent(self.params)
        return default_grid(self.params, extent=extent, n_points=self.grid_n)


@dataclass
class EnsembleSummary:
    times: np.ndarray
    mean_entropy_norm: np.ndarray        # <S_k(t)> / s_max over completed trajectories
    stderr_entropy_norm: np.ndarray
    steady_state_entropy: float          # normalized, trailing-window mean
    steady_state_stderr: float
    delta_sk_upper_steady: list          # per-trajectory trailing-window 1 - S/s_max
    delta_sk_upper_sup: list             # per-trajectory sup_t 1 - S/s_max
    completed: list
    failed: dict
    valid: bool
    provenance: dict = field(default_factory=dict)

    @property
    def delta_sk_mean(self) -> float:
        return float(np.mean(self.delta_sk_upper_steady))

    @property
    def delta_sk_stderr(self) -> float:
        vals = np.asarray(self.delta_sk_upper_steady)
        return float(np.std(vals, ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0


def spec_to_dict(spec: EnsembleSpec) -> dict:
    return {
        "params": params_to_dict(spec.params),
        "n_trajectories": spec.n_trajectories,
        "base_seed": spec.base_seed,
        "dt": spec.dt,
        "t_final": spec.t_final,
        "sample_every": spec.sample_every,
        "initial_rule": list(spec.initial_rule),
        "grid_extent": spec.grid_extent,
        "grid_n": spec.grid_n,
        "paired_zero": spec.paired_zero,
    }


def spec_from_dict(d: dict) -> EnsembleSpec:
    d = dict(d)
    d["params"] = ModelParams(**d["params"])
    d["initial_rule"] = tuple(d["initial_rule"])
    return EnsembleSpec(**d)


def energy_shell_initials(params: ModelParams, e_over_e0: float, seed) -> tuple:
    """Sampled (theta, phi, z0, p0) whose classical centroid energy is e_over_e0 E_0."""
    rng = np.random.default_rng(seed)
    return sample_energy_shell(params, e_over_e0, rng)


def initial_state_for(spec: EnsembleSpec, index: int, grid: GridSpec | None = None):
    """Initial product state and its (theta, phi, z0, p0) for trajectory `index`."""
    params = spec.params
    if grid is None:
        grid = spec.grid()
    rule = spec.initial_rule
    if rule[0] == "fixed":
        theta, phi, z0, p0 = (float(v) for v in rule[1:])
    else:
        ss = np.random.SeedSequence([spec.base_seed, index, 0xA5])
        theta, phi, z0, p0 = sample_energy_shell(params, float(rule[1]), np.random.default_rng(ss))
    spin = make_spin_coherent(params.j, theta, phi)
    packet = make_gaussian(grid, z0, p0, params.z_g, params.hbar)
    state = make_product_state(spin, packet, grid, params.j)
    info = {"theta": theta, "phi": phi, "z0": z0, "p0": p0}
    return state, info


def _traj_seed(spec: EnsembleSpec, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([spec.base_seed, index])


def _run_single(args):
    """Worker: run trajectory `index`, optionally writing its record files."""
    spec, index, out_dir = args
    grid = spec.grid()
    state, info = initial_state_for(spec, index, grid)
    seed_info = {"base_seed": spec.base_seed, "index": index}
    try:
        rec = propagate(
            state, spec.params, spec.dt, spec.t_final, _traj_seed(spec, index),
            sample_every=spec.sample_every, initial_info=info,
        )
    except TrajectoryAbort as err:
        return index, False, str(err), None
    payload = {
        "times": rec.times,
        "entropy": rec.entropy_series,
        "initial": info,
    }
    if spec.paired_zero:
        rec0 = propagate(
            state, replace(spec.params, k=0.0), spec.dt, spec.t_final, _traj_seed(spec, index),
            sample_every=spec.sample_every, initial_info=info,
        )
        payload["entropy_zero"] = rec0.entropy_series
    if out_dir is not None:
        write_trajectory(
            os.path.join(out_dir, f"traj_{index}.csv"),
            os.path.join(out_dir, f"traj_{index}.meta.json"),
            rec, seed_info,
        )
        if spec.paired_zero:
            np.savetxt(
                os.path.join(out_dir, f"traj_{index}.zero.csv"),
                np.column_stack([rec0.times, rec0.entropy_series]),
                delimiter=",", header="t,S", comments="", fmt="%.17g",
            )
    return index, True, None, payload


def _checkpoint_path(out_dir):
    return os.path.join(out_dir, "checkpoint.state")


def _summarize(spec: EnsembleSpec, results: dict, failures: dict) -> EnsembleSummary:
    """Build the summary from per-trajectory series, in index order."""
    s_max = derived_scales(spec.params).s_max
    completed = sorted(results)
    if not completed:
        raise RuntimeError("every trajectory failed; nothing to summarize")
    times = results[completed[0]]["times"]
    series = np.vstack([results[i]["entropy"] for i in completed]) / s_max
    n = series.shape[0]
    mean = series.mean(axis=0)
    stderr = series.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)

    steady_per_traj = [steady_state_mean(times, row, STEADY_WINDOW) for row in series]
    steady_mean = float(np.mean(steady_per_traj))
    steady_err = (
        float(np.std(steady_per_traj, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    )
    delta_steady = [float(1.0 - v) for v in steady_per_traj]
    delta_sup = [float(np.max(1.0 - row)) for row in series]

    provenance = {
        "code_version": __version__,
        "spec": spec_to_dict(spec),
        "grid": grid_to_dict(spec.grid()),
        "seeds": [{"base_seed": spec.base_seed, "index": i} for i in completed],
        "initial_conditions": [results[i]["initial"] for i in completed],
    }
    return EnsembleSummary(
        times=times,
        mean_entropy_norm=mean,
        stderr_entropy_norm=stderr,
        steady_state_entropy=steady_mean,
        steady_state_stderr=steady_err,
        delta_sk_upper_steady=delta_steady,
        delta_sk_upper_sup=delta_sup,
        completed=completed,
        failed=failures,
        valid=len(completed) >= MIN_COMPLETION * spec.n_trajectories,
        provenance=provenance,
    )


def _summary_payload(summary: EnsembleSummary) -> dict:
    return {
        "code_version": __version__,
        "times": [float(v) for v in summary.times],
        "mean_entropy_norm": [float(v) for v in summary.mean_entropy_norm],
        "stderr_entropy_norm": [float(v) for v in summary.stderr_entropy_norm],
        "steady_state_entropy": summary.steady_state_entropy,
        "steady_state_stderr": summary.steady_state_stderr,
        "delta_sk_upper_steady": summary.delta_sk_upper_steady,
        "delta_sk_upper_sup": summary.delta_sk_upper_sup,
        "completed": summary.completed,
        "failed": summary.failed,
        "valid": summary.valid,
        "provenance": summary.provenance,
    }


def _load_payload_from_files(out_dir, index, paired):
    csv = read_trajectory_csv(os.path.join(out_dir, f"traj_{index}.csv"))
    meta = read_meta(os.path.join(out_dir, f"traj_{index}.meta.json"))
    payload = {"times": csv["t"], "entropy": csv["S"], "initial": meta["initial"]}
    if paired:
        zero = np.loadtxt(os.path.join(out_dir, f"traj_{index}.zero.csv"),
                          delimiter=",", skiprows=1, ndmin=2)
        payload["entropy_zero"] = zero[:, 1]
    return payload


def run_ensemble(spec: EnsembleSpec, out_dir: str | None = None, workers: int = 1,
                 resume: bool = False) -> EnsembleSummary:
    """Run all trajectories and summarize.

    Aborted trajectories are recorded (never silently dropped); the
    summary is flagged invalid when fewer than 90% complete.  With an
    output directory the summary is rebuilt from the persisted records so
    that interrupted-and-resumed runs give byte-identical artifacts.
    """
    indices = list(range(spec.n_trajectories))
    failures: dict = {}
    done: list = []

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        dump_json(os.path.join(out_dir, "spec.json"), spec_to_dict(spec))
        if resume and os.path.exists(_checkpoint_path(out_dir)):
            ck = load_json(_checkpoint_path(out_dir))
            done = [i for i in ck.get("completed", [])
                    if os.path.exists(os.path.join(out_dir, f"traj_{i}.csv"))]
            failures = {int(k): v for k, v in ck.get("failed", {}).items()}
            indices = [i for i in indices if i not in set(done) and i not in failures]

    results: dict = {}
    tasks = [(spec, i, out_dir) for i in indices]

    def handle(outcome):
        index, ok, err, payload = outcome
        if ok:
            results[index] = payload
            done.append(index)
        else:
            failures[index] = err
        if out_dir is not None:
            dump_json(_checkpoint_path(out_dir), {
                "n_total": spec.n_trajectories,
                "completed": sorted(done),
                "failed": {str(k): v for k, v in sorted(failures.items())},
            })

    if workers > 1 and len(tasks) > 1:
        import multiprocessing as mp

        ctx = mp.get_context("fork")
        with ctx.Pool(workers) as pool:
            for outcome in pool.imap_unordered(_run_single, tasks):
                handle(outcome)
    else:
        for task in tasks:
            handle(_run_single(task))

    if out_dir is not None:
        # audit path: summary always derives from the persisted records
        results = {
            i: _load_payload_from_files(out_dir, i, spec.paired_zero)
            for i in sorted(done)
        }
    summary = _summarize(spec, results, {int(k): v for k, v in failures.items()})
    if out_dir is not None:
        dump_json(os.path.join(out_dir, "summary.json"), _summary_payload(summary))
    return summary


def recompute_summary(out_dir: str) -> EnsembleSummary:
    """Rebuild the summary of a completed run purely from its files."""
    spec = spec_from_dict(load_json(os.path.join(out_dir, "spec.json")))
    ck = load_json(_checkpoint_path(out_dir))
    results = {
        i: _load_payload_from_files(out_dir, i, spec.paired_zero)
        for i in ck.get("completed", [])
    }
    failures = {int(k): v for k, v in ck.get("failed", {}).items()}
    return _summarize(spec, results, failures)


def sweep(axis: str, values, base_spec: EnsembleSpec, out_dir: str | None = None,
          workers: int = 1, resume: bool = False):
    """One ensemble per value of j or k; j sweeps hold i0/j and k fixed.

    Returns [(value, summary-or-None), ...]; per-cell failures are
    isolated and leave a gap in the table rather than aborting the sweep.
    """
    if axis not in ("j", "k"):
        raise ValueError("sweep axis must be 'j' or 'k'")
    values = list(values)
    if not values:
        raise ValueError("sweep values must be non-empty")
    rows = []
    for v in values:
        if axis == "j":
            factor = float(v) / base_spec.params.j
            params_v = scale_for_classical_limit(base_spec.params, factor)
        else:
            params_v = replace(base_spec.params, k=float(v))
        spec_v = replace(base_spec, params=params_v)
        cell_dir = None
        if out_dir is not None:
            cell_dir = os.path.join(out_dir, f"{axis}_{v:g}")
        try:
            summary = run_ensemble(spec_v, out_dir=cell_dir, workers=workers, resume=resume)
            rows.append((float(v), summary))
        except Exception as err:  # cell isolation: record the gap and move on
            rows.append((float(v), None))
            if out_dir is not None:
                dump_json(os.path.join(out_dir, f"{axis}_{v:g}_error.json"),
                          {"value": float(v), "error": str(err)})
    if out_dir is not None:
        table = {
            "axis": axis,
            "values": [v for v, _ in rows],
            "steady_state_entropy": [
                None if s is None else s.steady_state_entropy for _, s in rows
            ],
            "steady_state_stderr": [
                None if s is None else s.steady_state_stderr for _, s in rows
            ],
            "delta_sk_upper_mean": [
                None if s is None else s.delta_sk_mean for _, s in rows
            ],
            "delta_sk_upper_stderr": [
                None if s is None else s.delta_sk_stderr for _, s in rows
            ],
            "valid": [None if s is None else s.valid for _, s in rows],
        }
        dump_json(os.path.join(out_dir, "sweep.json"), table)
    return rows


def fit_power_law(xs, ys):
    """Least-squares slope of log y vs log x; returns (slope, stderr)."""
    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.asarray(ys, dtype=float))
    if lx.size < 3:
        raise ValueError("need at least three points for a slope uncertainty")
    coeffs, cov = np.polyfit(lx, ly, 1, cov=True)
    return float(coeffs[0]), float(math.sqrt(cov[0, 0]))
