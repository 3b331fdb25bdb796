"""Stochastic split-step propagation of the monitored joint state.

One step applies, in time order,

    R(dt/2) V(dt/2) T(dt) V(dt/2) R(dt/2) M(dW)

where V is the diagonal phase of the trap + spin-position coupling, T the
spectral kinetic step, R the transverse-field spin rotation and M the
position-measurement update.  The palindromic unitary part is second order
in dt; the measurement update is the Gaussian Kraus factor

    M(dW) = exp(sqrt(2k) (z - <q>) dW - 2k (z - <q>)^2 dt) / norm,

whose O(dt) expansion reproduces the norm-preserving unravelling of the
conditioned master equation (the record-centered form; see the moment
validator below, which checks the resulting increments for <q> and <p>).
The measurement record accumulates dX = <q> dt + dW / sqrt(8k).

Noise is drawn from a counter-based generator (Philox) keyed by the
trajectory seed, so every trajectory replays bit-identically and can be
scheduled on any worker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .model import GridSpec, ModelParams, derived_scales
from .states import JointState, Moments, grid_points, jx_matrix, jz_diagonal, m_values, moments

__all__ = [
    "EngineError",
    "NormCollapseError",
    "GridBoundaryError",
    "TrajectoryAbort",
    "StepResult",
    "PerStepSeries",
    "MomentsSeries",
    "TrajectoryRecord",
    "SplitStepPropagator",
    "step",
    "propagate",
    "validate_moment_equations",
    "MomentResidualReport",
    "trajectory_rng",
    "default_dt",
    "default_sample_every",
]

NORM_COLLAPSE = 1e-6      # pre-renormalization norm floor
EDGE_CELLS = 4
EDGE_MASS = 1e-6


class EngineError(RuntimeError):
    pass


class NormCollapseError(EngineError):
    pass


class GridBoundaryError(EngineError):
    pass


class TrajectoryAbort(EngineError):
    """Raised by propagate; carries the abort time and the partial record."""

    def __init__(self, message, time, partial=None):
        super().__init__(message)
        self.time = time
        self.partial = partial


def default_dt(params: ModelParams) -> float:
    return 1e-3 * params.period


def default_sample_every(params: ModelParams, dt: float) -> int:
    """Largest cadence keeping the sample interval below 1/(20 omega)."""
    return max(1, int(math.floor(1.0 / (20.0 * params.omega) / dt)))


def trajectory_rng(seed) -> np.random.Generator:
    """Counter-based generator for one trajectory.

    seed may be an int or a sequence (base_seed, index); either way the
    noise stream is a pure function of it.
    """
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
    else:
        ss = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class StepResult:
    state: JointState
    dX: float | None
    dW: float


@dataclass
class MomentsSeries:
    mean_q: np.ndarray
    mean_p: np.ndarray
    c_qq: np.ndarray
    c_pp: np.ndarray
    c_qp: np.ndarray


@dataclass
class PerStepSeries:
    """Step-resolution data for the residual validators.

    Moment arrays have n_steps+1 entries (value at the start of each step
    plus the final state); dW has n_steps.
    """

    dW: np.ndarray
    mean_q: np.ndarray
    mean_p: np.ndarray
    c_qq: np.ndarray
    c_qp: np.ndarray
    jz: np.ndarray


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    record_X: np.ndarray | None            # None when k = 0 (no record exists)
    moments_series: MomentsSeries
    entropy_series: np.ndarray
    noise_seed: object
    dt: float
    params: ModelParams
    grid: GridSpec
    sample_every: int
    final_populations: np.ndarray | None = None
    per_step: PerStepSeries | None = None
    initial_info: dict = field(default_factory=dict)


class SplitStepPropagator:
    """Precomputed phases and rotations for a fixed (params, grid, dt)."""

    def __init__(self, params: ModelParams, grid: GridSpec, dt: float):
        if dt <= 0:
            raise ValueError("dt must be positive")
        scales = derived_scales(params)
        if scales.delta_z > 0 and not (grid.z_max - grid.z_min) > 4.0 * scales.delta_z:
            raise ValueError("grid narrower than 4 delta_z; enlarge the grid")
        self.params = params
        self.grid = grid
        self.dt = dt
        hbar = params.hbar
        self.z = grid_points(grid)
        self.dz = grid.dz
        m = m_values(params.j)
        v = 0.5 * params.mass * params.omega**2 * self.z[None, :] ** 2 \
            + params.b * self.z[None, :] * m[:, None]
        self._v_half = np.exp(-1j * v * (0.5 * dt) / hbar)
        p = hbar * 2.0 * math.pi * np.fft.fftfreq(grid.n_points, d=grid.dz)
        self._kin = np.exp(-1j * (p**2 / (2.0 * params.mass)) * dt / hbar)
        if params.c != 0.0:
            jx = jx_matrix(params.j, hbar)
            evals, evecs = np.linalg.eigh(jx)
            def rot(tau):
                phase = np.exp(-1j * params.c * evals * tau / hbar)
                return (evecs * phase[None, :]) @ evecs.conj().T
            self._rot_half = rot(0.5 * dt)
            self._rot_full = rot(dt)
        else:
            self._rot_half = None
            self._rot_full = None
        self._root2k = math.sqrt(2.0 * params.k)
        self._edge = EDGE_CELLS

    # -- unitary pieces -------------------------------------------------

    def apply_rot_half(self, psi):
        return psi if self._rot_half is None else self._rot_half @ psi

    def apply_rot_full(self, psi, out=None):
        if self._rot_full is None:
            return psi
        if out is None:
            return self._rot_full @ psi
        np.matmul(self._rot_full, psi, out=out)
        return out

    def apply_v_t_v(self, psi):
        buf = self._v_half * psi
        np.fft.fft(buf, axis=1, out=buf)
        buf *= self._kin
        np.fft.ifft(buf, axis=1, out=buf)
        buf *= self._v_half
        return buf

    def unitary_step(self, psi):
        """Hamiltonian-only step (used for the k=0 entropy baseline)."""
        psi = self.apply_rot_half(psi)
        psi = self.apply_v_t_v(psi)
        return self.apply_rot_half(psi)

    # -- diagnostics ----------------------------------------------------

    def position_weights(self, psi):
        r = psi.view(np.float64)
        return np.einsum("mz,mz->z", r[:, ::2], r[:, ::2]) \
            + np.einsum("mz,mz->z", r[:, 1::2], r[:, 1::2])

    def check_boundary(self, weights, t):
        e = self._edge
        mass = (np.sum(weights[:e]) + np.sum(weights[-e:])) * self.dz
        if mass > EDGE_MASS:
            raise GridBoundaryError(
                f"wavepacket reached grid boundary at t={t:.6g} (edge mass {mass:.2e})"
            )

    # -- measurement -----------------------------------------------------

    def measure(self, psi, weights, dW, t):
        """Apply the record-centered Kraus factor and renormalize in place.

        weights must be the position weights of psi (pre-measurement); the
        post-measurement norm is evaluated through them, so the update is a
        single pass over the amplitudes.  Returns (psi, center).
        """
        k = self.params.k
        q_bar = float(weights @ self.z) * self.dz
        x = self.z - q_bar
        factor = np.exp(self._root2k * dW * x - 2.0 * k * x**2 * self.dt)
        norm = math.sqrt(float(weights @ (factor * factor)) * self.dz)
        if norm < NORM_COLLAPSE:
            raise NormCollapseError(
                f"norm collapsed to {norm:.2e} at t={t:.6g}; dt too large for k={k}"
            )
        psi *= (factor / norm)[None, :]
        return psi, q_bar


@lru_cache(maxsize=8)
def _cached_propagator(params: ModelParams, grid: GridSpec, dt: float) -> SplitStepPropagator:
    return SplitStepPropagator(params, grid, dt)


def step(state: JointState, params: ModelParams, dt: float, dW: float,
         propagator: SplitStepPropagator | None = None) -> StepResult:
    """One full stochastic step; dW is drawn externally from Normal(0, dt)."""
    prop = propagator or _cached_propagator(params, state.grid, dt)
    psi = state.amplitudes
    weights0 = prop.position_weights(psi)
    prop.check_boundary(weights0, 0.0)
    mean_q_pre = float(weights0 @ prop.z) * prop.dz

    psi = prop.apply_rot_half(psi)
    psi = prop.apply_v_t_v(psi)
    psi = prop.apply_rot_half(psi)

    if params.k > 0:
        weights = prop.position_weights(psi)
        psi, _ = prop.measure(psi, weights, dW, 0.0)
        dX = mean_q_pre * dt + dW / math.sqrt(8.0 * params.k)
    else:
        dX = None
    return StepResult(state=JointState(psi, state.grid, state.j), dX=dX, dW=dW)


def propagate(initial: JointState, params: ModelParams, dt: float, t_final: float,
              seed, sample_every: int | None = None, store_noise: bool = False,
              initial_info: dict | None = None) -> TrajectoryRecord:
    """Run one trajectory; deterministic given (seed, dt).

    Samples moments and linear entropy every sample_every steps (the final
    step is always sampled).  With store_noise=True the full step-resolution
    moment series and the consumed noise are kept for the residual checks.
    When k = 0 the run is deterministic and no measurement record is
    emitted.
    """
    from .metrics import linear_entropy  # local import, avoids module cycle

    if t_final <= 0:
        raise ValueError("t_final must be positive")
    if sample_every is None:
        sample_every = default_sample_every(params, dt)
    n_steps = max(1, int(round(t_final / dt)))
    prop = SplitStepPropagator(params, initial.grid, dt)
    measured = params.k > 0

    rng = trajectory_rng(seed)
    dW = rng.normal(0.0, math.sqrt(dt), n_steps) if measured else np.zeros(n_steps)

    psi = initial.amplitudes.copy()
    times, xs, entropies = [], [], []
    mq, mp, cqq, cpp, cqp = [], [], [], [], []
    ps = None
    if store_noise:
        ps = PerStepSeries(
            dW=dW,
            mean_q=np.empty(n_steps + 1), mean_p=np.empty(n_steps + 1),
            c_qq=np.empty(n_steps + 1), c_qp=np.empty(n_steps + 1),
            jz=np.empty(n_steps + 1),
        )
    jz_diag = jz_diagonal(params.j)

    def sample(t, x_val, state):
        mom = moments(state, params.hbar)
        times.append(t)
        xs.append(x_val)
        entropies.append(linear_entropy(state).s)
        mq.append(mom.mean_q)
        mp.append(mom.mean_p)
        cqq.append(mom.c_qq)
        cpp.append(mom.c_pp)
        cqp.append(mom.c_qp)
        return mom

    def per_step_entry(i, state):
        mom = moments(state, params.hbar)
        pops = np.sum(np.abs(state.amplitudes) ** 2, axis=1) * prop.dz
        ps.mean_q[i] = mom.mean_q
        ps.mean_p[i] = mom.mean_p
        ps.c_qq[i] = mom.c_qq
        ps.c_qp[i] = mom.c_qp
        ps.jz[i] = float(pops @ jz_diag)

    x_cum = 0.0
    root8k = math.sqrt(8.0 * params.k) if measured else 0.0

    def finish(i_aborted=None, abort_time=None):
        rec = TrajectoryRecord(
            times=np.asarray(times), record_X=np.asarray(xs) if measured else None,
            moments_series=MomentsSeries(
                mean_q=np.asarray(mq), mean_p=np.asarray(mp),
                c_qq=np.asarray(cqq), c_pp=np.asarray(cpp), c_qp=np.asarray(cqp),
            ),
            entropy_series=np.asarray(entropies),
            noise_seed=seed, dt=dt, params=params, grid=initial.grid,
            sample_every=sample_every, per_step=ps,
            initial_info=dict(initial_info or {}),
        )
        return rec

    if store_noise:
        # reference path: one canonical step at a time, full moments per step
        state = initial.copy()
        try:
            for i in range(n_steps):
                per_step_entry(i, state)
                if i % sample_every == 0:
                    sample(i * dt, x_cum, state)
                res = step(state, params, dt, float(dW[i]), propagator=prop)
                state = res.state
                if measured:
                    x_cum += res.dX
        except EngineError as err:
            raise TrajectoryAbort(str(err), time=i * dt, partial=finish()) from err
        per_step_entry(n_steps, state)
        sample(n_steps * dt, x_cum, state)
        rec = finish()
        rec.final_populations = np.sum(np.abs(state.amplitudes) ** 2, axis=1) * prop.dz
        return rec

    # fast path: the half spin rotations of adjacent steps are merged
    # (the measurement factor commutes with the spin rotation, so the
    # composition is operator-identical to repeated canonical steps; all
    # sampled quantities are invariant under the factored-out half
    # rotation because they only involve position, momentum and the
    # spin-basis-independent entropy)
    psi = prop.apply_rot_half(psi)
    try:
        for i in range(n_steps):
            weights = prop.position_weights(psi)
            prop.check_boundary(weights, i * dt)
            if i % sample_every == 0:
                sample(i * dt, x_cum, JointState(psi, initial.grid, initial.j))
            mean_q_pre = float(weights @ prop.z) * prop.dz
            prev = psi
            psi = prop.apply_v_t_v(psi)
            if measured:
                w2 = prop.position_weights(psi)
                psi, _ = prop.measure(psi, w2, float(dW[i]), i * dt)
                x_cum += mean_q_pre * dt + float(dW[i]) / root8k
            if i < n_steps - 1:
                # recycle the pre-step buffer as the rotation output
                if prop._rot_full is not None and prev is not initial.amplitudes \
                        and prev.shape == psi.shape:
                    psi = prop.apply_rot_full(psi, out=prev)
                else:
                    psi = prop.apply_rot_full(psi)
            else:
                psi = prop.apply_rot_half(psi)
    except EngineError as err:
        raise TrajectoryAbort(str(err), time=i * dt, partial=finish()) from err

    final_state = JointState(psi, initial.grid, initial.j)
    sample(n_steps * dt, x_cum, final_state)
    rec = finish()
    rec.final_populations = np.sum(np.abs(psi) ** 2, axis=1) * prop.dz
    return rec


@dataclass
class MomentResidualReport:
    rms_q: float
    max_q: float
    rms_p: float
    max_p: float
    n_steps: int
    dt: float
    passed: bool | None = None


def validate_moment_equations(record: TrajectoryRecord, tolerance: float | None = None,
                              include_spin_force: bool = True) -> MomentResidualReport:
    """Per-step residuals of the centroid equations of motion.

    Compares the realized increments of <q> and <p> against

        d<q> = (<p>/m) dt + sqrt(8k) C_qq dW
        d<p> = -(m w^2 <q> + b <Jz>) dt + sqrt(8k) C_qp dW

    using the stored noise.  The noise prefactor sqrt(8k) is the one
    induced by the conditioned master equation for a unit-efficiency
    position measurement.  include_spin_force=False drops the b <Jz> term
    (regression knob: with b on, that omission must inflate the p
    residual).
    """
    ps = record.per_step
    if ps is None:
        raise ValueError("record lacks stored per-step noise; rerun with store_noise=True")
    p = record.params
    dt = record.dt
    root8k = math.sqrt(8.0 * p.k)
    q, mom_p = ps.mean_q, ps.mean_p
    res_q = (q[1:] - q[:-1]) - (mom_p[:-1] / p.mass) * dt - root8k * ps.c_qq[:-1] * ps.dW
    force = p.mass * p.omega**2 * q[:-1]
    if include_spin_force:
        force = force + p.b * ps.jz[:-1]
    res_p = (mom_p[1:] - mom_p[:-1]) + force * dt - root8k * ps.c_qp[:-1] * ps.dW
    report = MomentResidualReport(
        rms_q=float(np.sqrt(np.mean(res_q**2))),
        max_q=float(np.max(np.abs(res_q))),
        rms_p=float(np.sqrt(np.mean(res_p**2))),
        max_p=float(np.max(np.abs(res_p))),
        n_steps=ps.dW.size,
        dt=dt,
    )
    if tolerance is not None:
        report.passed = report.rms_q <= tolerance and report.rms_p <= tolerance
    return report
