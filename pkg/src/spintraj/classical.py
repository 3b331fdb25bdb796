"""Classical counterpart: point particle plus magnetic moment on a sphere.

The Hamiltonian has the same form as the quantum one with (z, p) numbers
and the spin a classical vector of fixed length j.  Time stepping composes
exact sub-flows (harmonic phase-space rotation + precession about x, and
the z-diagonal coupling kick + precession about z), so |J| is conserved
exactly; Strang (order 2) and a triple-jump order-4 composition are
available.  The module also hosts the chaotic-regime selector (largest
Lyapunov exponent on an energy shell) and the record-vs-classical
agreement metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .model import ModelParams, derived_scales

__all__ = [
    "ClassicalState",
    "classical_step",
    "classical_energy",
    "classical_series",
    "state_from_angles",
    "min_potential_z_range",
    "sample_energy_shell",
    "lyapunov_exponent",
    "find_chaotic_c",
    "qct_distance",
    "DEFAULT_CLASSICAL_SUBSTEP",
]

# fraction of a period used as the internal step of classical_series
DEFAULT_CLASSICAL_SUBSTEP = 2.5e-4


@dataclass(frozen=True)
class ClassicalState:
    z: float
    p: float
    jx: float
    jy: float
    jz: float

    def spin_norm(self) -> float:
        return math.sqrt(self.jx**2 + self.jy**2 + self.jz**2)


def _pack(state: ClassicalState) -> np.ndarray:
    return np.array([state.z, state.p, state.jx, state.jy, state.jz], dtype=float)


def _unpack(arr: np.ndarray) -> ClassicalState:
    z, p, jx, jy, jz = (float(v) for v in arr)
    return ClassicalState(z=z, p=p, jx=jx, jy=jy, jz=jz)


def _flow_osc_spin(arr, params: ModelParams, tau):
    """Exact flow of p^2/2m + (1/2) m w^2 z^2 + c Jx over tau."""
    z, p, jx, jy, jz = arr
    w = params.omega
    cw, sw = math.cos(w * tau), math.sin(w * tau)
    z_new = z * cw + (p / (params.mass * w)) * sw
    p_new = p * cw - params.mass * w * z * sw
    ang = params.c * tau
    ca, sa = math.cos(ang), math.sin(ang)
    # dJ/dt = (c,0,0) x J : rotation about +x
    jy_new = jy * ca - jz * sa
    jz_new = jz * ca + jy * sa
    return np.array([z_new, p_new, jx, jy_new, jz_new])


def _flow_coupling(arr, params: ModelParams, tau):
    """Exact flow of b z Jz over tau: momentum kick + precession about z."""
    z, p, jx, jy, jz = arr
    p_new = p - params.b * jz * tau
    ang = params.b * z * tau
    ca, sa = math.cos(ang), math.sin(ang)
    jx_new = jx * ca - jy * sa
    jy_new = jy * ca + jx * sa
    return np.array([z, p_new, jx_new, jy_new, jz])


def _strang(arr, params, tau):
    arr = _flow_coupling(arr, params, 0.5 * tau)
    arr = _flow_osc_spin(arr, params, tau)
    return _flow_coupling(arr, params, 0.5 * tau)


_W1 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
_W0 = 1.0 - 2.0 * _W1


def _step_arrays(arr, params, tau, order=4):
    if order == 2:
        return _strang(arr, params, tau)
    if order == 4:
        arr = _strang(arr, params, _W1 * tau)
        arr = _strang(arr, params, _W0 * tau)
        return _strang(arr, params, _W1 * tau)
    raise ValueError("order must be 2 or 4")


def classical_step(state: ClassicalState, params: ModelParams, dt: float,
                   order: int = 4) -> ClassicalState:
    """Advance one step; the rotation-based spin update preserves |J| exactly."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return _unpack(_step_arrays(_pack(state), params, dt, order))


def classical_energy(state: ClassicalState, params: ModelParams) -> float:
    return (
        state.p**2 / (2.0 * params.mass)
        + 0.5 * params.mass * params.omega**2 * state.z**2
        + params.b * state.z * state.jz
        + params.c * state.jx
    )


def state_from_angles(params: ModelParams, theta: float, phi: float,
                      z0: float, p0: float) -> ClassicalState:
    """Phase-space point with the spin vector at (theta, phi), |J| = j."""
    j = params.j
    return ClassicalState(
        z=z0, p=p0,
        jx=j * math.sin(theta) * math.cos(phi),
        jy=j * math.sin(theta) * math.sin(phi),
        jz=j * math.cos(theta),
    )


def classical_series(initial: ClassicalState, params: ModelParams, times: np.ndarray,
                     substep: float | None = None, order: int = 4):
    """Integrate and emit (z, p, jx, jy, jz, E) exactly at the requested times."""
    times = np.asarray(times, dtype=float)
    if times.size == 0 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be non-empty and strictly increasing")
    if substep is None:
        substep = DEFAULT_CLASSICAL_SUBSTEP * params.period
    arr = _pack(initial)
    out = np.empty((times.size, 6))

    def record(i, a):
        e = (a[1] ** 2 / (2 * params.mass)
             + 0.5 * params.mass * params.omega**2 * a[0] ** 2
             + params.b * a[0] * a[4] + params.c * a[2])
        out[i, :5] = a
        out[i, 5] = e

    t = float(times[0])
    record(0, arr)
    for i in range(1, times.size):
        span = float(times[i]) - t
        n_sub = max(1, int(math.ceil(span / substep)))
        tau = span / n_sub
        for _ in range(n_sub):
            arr = _step_arrays(arr, params, tau, order)
        t = float(times[i])
        record(i, arr)
    return out


# -- energy-shell sampling ----------------------------------------------


def min_potential_z_range(params: ModelParams, e_target: float) -> float:
    """Half-width of the z interval where the shell can be populated.

    Uses the lower potential envelope (spin components bounded separately),
    so the interval is slightly generous; per-sample feasibility is checked
    exactly by the p0 solve.
    """
    j = params.j
    mw2 = params.mass * params.omega**2
    bj = abs(params.b) * j
    disc = bj**2 + 2.0 * mw2 * (e_target + abs(params.c) * j)
    if disc < 0:
        raise ValueError("energy below the reachable range for these parameters")
    return (bj + math.sqrt(disc)) / mw2


def sample_energy_shell(params: ModelParams, e_over_e0: float, rng: np.random.Generator,
                        max_tries: int = 1000):
    """Draw (theta, phi, z0, p0) with classical energy e_over_e0 * E_0.

    (theta, phi) is uniform on the sphere, z0 uniform over the reachable
    interval; |p0| solves the energy constraint and its sign is random.
    Samples with no real p0 are rejected and redrawn.
    """
    scales = derived_scales(params)
    if scales.e0 <= 0:
        raise ValueError("E_0 vanishes (coupling off); energy shell undefined")
    if e_over_e0 <= 0:
        raise ValueError("e_over_e0 must be positive")
    e_target = e_over_e0 * scales.e0
    z_lim = min_potential_z_range(params, e_target)
    j = params.j
    for _ in range(max_tries):
        cos_t = rng.uniform(-1.0, 1.0)
        theta = math.acos(cos_t)
        phi = rng.uniform(0.0, 2.0 * math.pi)
        z0 = rng.uniform(-z_lim, z_lim)
        v = (0.5 * params.mass * params.omega**2 * z0**2
             + params.b * z0 * j * cos_t
             + params.c * j * math.sin(theta) * math.cos(phi))
        p0_sq = 2.0 * params.mass * (e_target - v)
        if p0_sq >= 0.0:
            p0 = math.sqrt(p0_sq) * (1.0 if rng.uniform() < 0.5 else -1.0)
            return theta, phi, z0, p0
    raise ValueError(
        f"energy shell E = {e_over_e0} E_0 unreachable after {max_tries} draws"
    )


# -- Lyapunov-based chaos selection ---------------------------------------


def lyapunov_exponent(initial: ClassicalState, params: ModelParams,
                      t_total: float | None = None, dt: float | None = None,
                      renorm_every: int = 20, d0: float = 1e-8,
                      seed: int = 0, order: int = 2) -> float:
    """Largest Lyapunov exponent via two-trajectory divergence (Benettin).

    The companion starts displaced by d0 along a random direction (spin
    part projected back onto the |J| = j sphere) and is rescaled toward
    the reference at fixed intervals.
    """
    if t_total is None:
        t_total = 30.0 * params.period
    if dt is None:
        dt = params.period / 400.0
    rng = np.random.default_rng(seed)
    ref = _pack(initial)
    direction = rng.normal(size=5)
    direction /= np.linalg.norm(direction)
    pert = ref + d0 * direction
    # keep the companion on its spin sphere
    jn = np.linalg.norm(pert[2:])
    pert[2:] *= params.j / jn

    n_steps = int(round(t_total / dt))
    log_sum = 0.0
    for i in range(1, n_steps + 1):
        ref = _step_arrays(ref, params, dt, order)
        pert = _step_arrays(pert, params, dt, order)
        if i % renorm_every == 0:
            diff = pert - ref
            d = np.linalg.norm(diff)
            if d == 0.0:
                continue
            log_sum += math.log(d / d0)
            pert = ref + diff * (d0 / d)
            jn = np.linalg.norm(pert[2:])
            if jn > 0:
                pert[2:] *= params.j / jn
    return log_sum / (n_steps * dt)


def find_chaotic_c(params: ModelParams, e_over_e0: float, c_candidates,
                   n_initials: int = 10, seed: int = 1234,
                   threshold_factor: float = 0.05,
                   t_total: float | None = None) -> tuple[float, dict]:
    """Smallest candidate c whose shell-averaged Lyapunov exponent is positive.

    Averages over n_initials energy-shell initial conditions; the bar is
    threshold_factor * omega.  Raises if no candidate qualifies, attaching
    the measured exponents for all of them.
    """
    if len(c_candidates) == 0:
        raise ValueError("candidate list is empty")
    threshold = threshold_factor * params.omega
    exponents: dict = {}
    chosen = None
    for c in sorted(c_candidates):
        trial = replace(params, c=float(c))
        rng = np.random.default_rng(seed)
        lams = []
        for i in range(n_initials):
            theta, phi, z0, p0 = sample_energy_shell(trial, e_over_e0, rng)
            st = state_from_angles(trial, theta, phi, z0, p0)
            lams.append(lyapunov_exponent(st, trial, t_total=t_total, seed=seed + i))
        exponents[float(c)] = float(np.mean(lams))
        if chosen is None and exponents[float(c)] > threshold:
            chosen = float(c)
    if chosen is None:
        raise ValueError(f"no chaotic candidate found; exponents: {exponents}")
    return chosen, exponents


# -- record vs classical agreement ----------------------------------------


def qct_distance(times: np.ndarray, record_x: np.ndarray | None,
                 classical_z: np.ndarray, smoothing_window: float) -> float:
    """Normalized deviation of the smoothed record slope from classical z(t).

    The position estimate at t is (X(t + W/2) - X(t - W/2)) / W; the RMS
    difference to the classical trajectory is divided by the classical
    orbit extent.  Series must share the time grid.
    """
    if record_x is None:
        raise ValueError("no measurement record (k = 0 run)")
    times = np.asarray(times, dtype=float)
    record_x = np.asarray(record_x, dtype=float)
    classical_z = np.asarray(classical_z, dtype=float)
    if not (times.shape == record_x.shape == classical_z.shape):
        raise ValueError("record and classical series misaligned")
    if times.size < 3:
        raise ValueError("series too short")
    dt_s = float(times[1] - times[0])
    half = max(1, int(round(0.5 * smoothing_window / dt_s)))
    if 2 * half >= times.size:
        raise ValueError("smoothing window longer than the series")
    idx = np.arange(half, times.size - half)
    z_est = (record_x[idx + half] - record_x[idx - half]) / (times[idx + half] - times[idx - half])
    z_ref = classical_z[idx]
    extent = float(np.max(classical_z) - np.min(classical_z))
    if extent <= 0:
        raise ValueError("degenerate (zero-extent) classical orbit")
    rms = float(np.sqrt(np.mean((z_est - z_ref) ** 2)))
    return rms / extent
