"""Entanglement measures for the monitored spin-oscillator state.

Linear entropy S = 1 - Tr(rho_S^2) = 1 - Tr(rho_A^2) is computed through
two independent routes (spin Gram matrix and Schmidt spectrum) that must
agree; a Gaussian covariance estimator and the predicted per-step entropy
increment give the remaining cross-checks.  Motional-side operator
products are always evaluated through the (2j+1)-dimensional overlap
matrices, never by materializing the grid-sized reduced density matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ModelParams
from .states import JointState, Moments, grid_points, reduce_spin, schmidt_values

__all__ = [
    "EntropyPoint",
    "DeltaSkReport",
    "linear_entropy",
    "linear_entropy_schmidt",
    "gaussian_entropy",
    "predicted_entropy_increment",
    "delta_s_k",
    "steady_state_mean",
]

DET_SLACK = 1e-9


@dataclass(frozen=True)
class EntropyPoint:
    t: float
    s: float
    s_normalized: float


def _entropy_point(s: float, j: float, t: float) -> EntropyPoint:
    s = float(min(max(s, 0.0), 1.0))
    s_max = 1.0 - 1.0 / (int(round(2 * j)) + 1)
    return EntropyPoint(t=t, s=s, s_normalized=s / s_max)


def linear_entropy(state: JointState, t: float = 0.0) -> EntropyPoint:
    """S = 1 - sum_{m,n} |G[m,n]|^2 with G the spinor-component Gram matrix."""
    g = reduce_spin(state).entries
    return _entropy_point(1.0 - float(np.sum(np.abs(g) ** 2)), state.j, t)


def linear_entropy_schmidt(state: JointState, t: float = 0.0) -> EntropyPoint:
    """S = 1 - sum_i sigma_i^4 from the Schmidt spectrum (dual route)."""
    sig = schmidt_values(state)
    return _entropy_point(1.0 - float(np.sum(sig**4)), state.j, t)


def gaussian_entropy(mom: Moments, hbar: float = 1.0, j: float | None = None,
                     t: float = 0.0) -> EntropyPoint:
    """Covariance estimator S = 1 - (hbar/2)/sqrt(det C).

    Valid once the motional marginal is near-Gaussian; exactly zero for a
    minimum-uncertainty packet.
    """
    det = mom.det_c()
    floor = (0.5 * hbar) ** 2
    if det < floor * (1.0 - DET_SLACK):
        raise ValueError(f"covariance determinant {det} below (hbar/2)^2 (unphysical input)")
    s = 1.0 - (0.5 * hbar) / math.sqrt(max(det, floor))
    s = max(s, 0.0)
    if j is None:
        return EntropyPoint(t=t, s=s, s_normalized=s)
    return _entropy_point(s, j, t)


def _overlap_matrices(state: JointState):
    """Gram matrix G and position-weighted overlaps Q, both Hermitian."""
    a = state.amplitudes
    z = grid_points(state.grid)
    g = (a.conj() @ a.T) * state.dz
    q = (a.conj() @ (a * z[None, :]).T) * state.dz
    return g, q


def predicted_entropy_increment(state: JointState, params: ModelParams, dt: float,
                                dW: float, propagator=None) -> float:
    """Expected dS over one step for the noise value the engine will consume.

    The measurement contribution is

        -8k [ Tr(rho_A q rho_A q) - 2 <q> Tr(rho_A^2 q) + <q>^2 Tr(rho_A^2) ] dt
        -4 sqrt(2k) [ Tr(rho_A^2 q) - <q> Tr(rho_A^2) ] dW

    with every trace evaluated through the spinor-component overlap
    matrices.  The measurement-free part dS_0 comes from a paired
    Hamiltonian-only substep.
    """
    from .engine import SplitStepPropagator  # local import, avoids module cycle

    k = params.k
    s_now = linear_entropy(state).s
    prop = propagator or SplitStepPropagator(params, state.grid, dt)
    psi_unitary = prop.unitary_step(state.amplitudes.copy())
    s_unitary = linear_entropy(JointState(psi_unitary, state.grid, state.j)).s
    ds0 = s_unitary - s_now
    if k == 0.0:
        return ds0

    g, q = _overlap_matrices(state)
    mean_q = float(np.real(np.trace(q)))
    purity = float(np.real(np.sum(g * g.conj())))          # Tr(rho_A^2)
    tr_qq = float(np.real(np.sum(q * q.conj())))           # Tr(rho_A q rho_A q)
    tr_gq = float(np.real(np.sum(g * q.conj())))           # Tr(rho_A^2 q)
    drift = -8.0 * k * (tr_qq - 2.0 * mean_q * tr_gq + mean_q**2 * purity)
    noise = -4.0 * math.sqrt(2.0 * k) * (tr_gq - mean_q * purity)
    return ds0 + drift * dt + noise * dW


@dataclass(frozen=True)
class DeltaSkReport:
    """Back-action measure: supremum over sampled times of 1 - S_k/S_0.

    delta_s_k needs a paired measurement-free run; the upper-bound variant
    replaces S_0 by the rank bound s_max and is always available.
    """

    delta_s_k: float | None
    delta_s_k_upper: float
    t_at_sup: float


def delta_s_k(times: np.ndarray, series_k: np.ndarray,
              series_0: np.ndarray | None = None,
              s_max: float | None = None,
              s0_floor: float = 1e-6) -> DeltaSkReport:
    """Supremum over the sampled grid; series must share that grid."""
    times = np.asarray(times, dtype=float)
    series_k = np.asarray(series_k, dtype=float)
    if times.size == 0 or series_k.size == 0:
        raise ValueError("empty entropy series")
    if series_k.shape != times.shape:
        raise ValueError("series_k misaligned with times")
    if series_0 is None and s_max is None:
        raise ValueError("need a paired k=0 series or s_max")

    paired = None
    t_sup = float(times[0])
    if series_0 is not None:
        series_0 = np.asarray(series_0, dtype=float)
        if series_0.shape != times.shape:
            raise ValueError("paired series misaligned with the sampling grid")
        valid = series_0 >= s0_floor
        if not np.any(valid):
            raise ValueError("paired series never exceeds the S_0 floor")
        ratios = 1.0 - series_k[valid] / series_0[valid]
        i = int(np.argmax(ratios))
        paired = float(ratios[i])
        t_sup = float(times[valid][i])

    upper = None
    if s_max is not None:
        vals = 1.0 - series_k / s_max
        i = int(np.argmax(vals))
        upper = float(vals[i])
        if paired is None:
            t_sup = float(times[i])
    else:
        upper = paired  # paired variant only; keep report total

    return DeltaSkReport(delta_s_k=paired, delta_s_k_upper=upper, t_at_sup=t_sup)


def steady_state_mean(times: np.ndarray, values: np.ndarray, window_fraction: float = 0.25) -> float:
    """Mean over the trailing window (default: last quarter of the run)."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.size == 0:
        raise ValueError("empty series")
    t_cut = times[-1] - window_fraction * (times[-1] - times[0])
    mask = times >= t_cut
    return float(np.mean(values[mask]))
