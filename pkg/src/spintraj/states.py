"""Pure joint states of the spin + motion system on a (2j+1) x grid basis.

The amplitude array is spin-major: row m holds the (unnormalized) motional
wavefunction attached to spin projection m, with rows ordered m = +j ... -j.
Position acts diagonally on columns; momentum is evaluated spectrally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import GridSpec, spin_dimension

__all__ = [
    "JointState",
    "Moments",
    "SpinDensityMatrix",
    "m_values",
    "jx_matrix",
    "jz_diagonal",
    "make_spin_coherent",
    "make_gaussian",
    "make_product_state",
    "moments",
    "reduce_spin",
    "schmidt_values",
    "spin_populations",
    "mean_jz",
    "save_state",
    "load_state",
]

NORM_TOL = 1e-10
SNAPSHOT_MAGIC = "spintraj-state-v1"


def m_values(j: float) -> np.ndarray:
    """Spin projections ordered +j, j-1, ..., -j (matches amplitude rows)."""
    dim = spin_dimension(j)
    return j - np.arange(dim)


def jz_diagonal(j: float) -> np.ndarray:
    return m_values(j)


def jx_matrix(j: float, hbar: float = 1.0) -> np.ndarray:
    """Jx = (J+ + J-)/2 in the m basis (+j first)."""
    m = m_values(j)
    dim = m.size
    jx = np.zeros((dim, dim))
    # raising m by one moves one row up in the +j-first ordering
    amp = 0.5 * np.sqrt(j * (j + 1.0) - m[1:] * (m[1:] + 1.0))
    idx = np.arange(1, dim)
    jx[idx - 1, idx] = amp
    jx[idx, idx - 1] = amp
    return hbar * jx


@dataclass
class JointState:
    """Normalized pure state; amplitudes[m_row, i] = psi_m(z_i)."""

    amplitudes: np.ndarray
    grid: GridSpec
    j: float

    def __post_init__(self):
        dim = spin_dimension(self.j)
        if self.amplitudes.shape != (dim, self.grid.n_points):
            raise ValueError(
                f"amplitude shape {self.amplitudes.shape} inconsistent with "
                f"(2j+1, n_points) = ({dim}, {self.grid.n_points})"
            )

    @property
    def dz(self) -> float:
        return self.grid.dz

    def norm(self) -> float:
        return math.sqrt(float(np.sum(np.abs(self.amplitudes) ** 2)) * self.dz)

    def check_norm(self, tol: float = NORM_TOL):
        n = self.norm()
        if abs(n - 1.0) > tol:
            raise ValueError(f"state norm {n} deviates from 1 beyond {tol}")

    def copy(self) -> "JointState":
        return JointState(self.amplitudes.copy(), self.grid, self.j)


@dataclass(frozen=True)
class Moments:
    mean_q: float
    mean_p: float
    c_qq: float
    c_pp: float
    c_qp: float

    def det_c(self) -> float:
        return self.c_qq * self.c_pp - self.c_qp**2


@dataclass(frozen=True)
class SpinDensityMatrix:
    """Reduced spin state rho_S, Hermitian with unit trace."""

    entries: np.ndarray

    def purity(self) -> float:
        return float(np.sum(np.abs(self.entries) ** 2))


def grid_points(grid: GridSpec) -> np.ndarray:
    return grid.z_min + grid.dz * np.arange(grid.n_points)


def momentum_points(grid: GridSpec, hbar: float = 1.0) -> np.ndarray:
    return hbar * 2.0 * math.pi * np.fft.fftfreq(grid.n_points, d=grid.dz)


def make_spin_coherent(j: float, theta: float, phi: float) -> np.ndarray:
    """Spin coherent state |theta, phi> as a length-(2j+1) vector.

    Component on |m>:  binom(2j, j+m)^(1/2) cos^(j+m)(t/2) sin^(j-m)(t/2)
    e^(-i (j-m) phi).  Phases are relative to the m = +j component.
    """
    if not 0.0 <= theta <= math.pi:
        raise ValueError("theta must lie in [0, pi]")
    dim = spin_dimension(j)
    m = m_values(j)
    # log-binomials keep large j stable
    log_binom = np.array(
        [math.lgamma(2 * j + 1) - math.lgamma(j + mm + 1) - math.lgamma(j - mm + 1) for mm in m]
    )
    half = 0.5 * theta
    with np.errstate(divide="ignore"):
        log_c = np.where(j + m > 0, (j + m) * np.log(max(math.cos(half), 1e-300)), 0.0)
        log_s = np.where(j - m > 0, (j - m) * np.log(max(math.sin(half), 1e-300)), 0.0)
    amp = np.exp(0.5 * log_binom + log_c + log_s)
    vec = amp * np.exp(-1j * (j - m) * phi)
    vec /= np.linalg.norm(vec)
    assert vec.size == dim
    return vec


def make_gaussian(grid: GridSpec, z0: float, p0: float, width: float, hbar: float = 1.0) -> np.ndarray:
    """Normalized Gaussian packet exp(-(z-z0)^2/4w^2 + i p0 z / hbar).

    width is the position standard deviation; width = z_g gives the
    oscillator coherent state.  Rejects packets clipped by the grid edge.
    """
    if not grid.z_min < z0 < grid.z_max:
        raise ValueError(f"z0={z0} outside grid interior")
    if width <= 2.0 * grid.dz:
        raise ValueError("width must exceed 2 grid spacings")
    # analytic mass beyond either edge; |psi|^2 has std = width
    loss = 0.5 * (
        math.erfc((grid.z_max - z0) / (math.sqrt(2.0) * width))
        + math.erfc((z0 - grid.z_min) / (math.sqrt(2.0) * width))
    )
    if loss > 1e-8:
        raise ValueError(f"packet truncated by grid edge (norm loss {loss:.2e})")
    z = grid_points(grid)
    psi = np.exp(-((z - z0) ** 2) / (4.0 * width**2) + 1j * p0 * z / hbar)
    psi /= math.sqrt(float(np.sum(np.abs(psi) ** 2)) * grid.dz)
    return psi


def make_product_state(spin_vec: np.ndarray, motional: np.ndarray, grid: GridSpec, j: float) -> JointState:
    amps = np.outer(spin_vec, motional).astype(complex)
    state = JointState(amps, grid, j)
    state.amplitudes /= state.norm()
    return state


def moments(state: JointState, hbar: float = 1.0) -> Moments:
    """Centroid and covariances of the motional marginal.

    q is a grid quadrature over |psi|^2; p comes from the Fourier transform;
    the cross term is the symmetrized covariance (<qp+pq>/2 - <q><p>).
    """
    psi = state.amplitudes
    dz = state.dz
    z = grid_points(state.grid)
    weights = np.sum(np.abs(psi) ** 2, axis=0) * dz
    mean_q = float(weights @ z)
    mean_q2 = float(weights @ z**2)

    p = momentum_points(state.grid, hbar)
    phi = np.fft.fft(psi, axis=1)
    pw = np.sum(np.abs(phi) ** 2, axis=0) * (dz / state.grid.n_points)
    mean_p = float(pw @ p)
    mean_p2 = float(pw @ p**2)

    p_psi = np.fft.ifft(phi * p[None, :], axis=1)
    mean_qp = float(np.real(np.sum(np.conj(psi) * z[None, :] * p_psi)) * dz)

    return Moments(
        mean_q=mean_q,
        mean_p=mean_p,
        c_qq=mean_q2 - mean_q**2,
        c_pp=mean_p2 - mean_p**2,
        c_qp=mean_qp - mean_q * mean_p,
    )


def reduce_spin(state: JointState) -> SpinDensityMatrix:
    """Partial trace over motion: rho_S[m, n] = sum_i psi_m(z_i) psi_n(z_i)* dz."""
    a = state.amplitudes
    rho = (a @ a.conj().T) * state.dz
    return SpinDensityMatrix(entries=rho)


def schmidt_values(state: JointState) -> np.ndarray:
    """Singular values of the scaled amplitude matrix; squares sum to 1."""
    return np.linalg.svd(state.amplitudes * math.sqrt(state.dz), compute_uv=False)


def spin_populations(state: JointState) -> np.ndarray:
    return np.sum(np.abs(state.amplitudes) ** 2, axis=1) * state.dz


def mean_jz(state: JointState) -> float:
    return float(spin_populations(state) @ m_values(state.j))


def save_state(path, state: JointState, time: float = 0.0, seed: int | None = None):
    """Versioned binary snapshot (npz) with grid and provenance header."""
    np.savez(
        path,
        magic=SNAPSHOT_MAGIC,
        j=state.j,
        n_points=state.grid.n_points,
        z_min=state.grid.z_min,
        z_max=state.grid.z_max,
        time=time,
        seed=-1 if seed is None else seed,
        amplitudes=state.amplitudes,
    )


def load_state(path) -> tuple[JointState, float, int | None]:
    with np.load(path, allow_pickle=False) as data:
        if str(data["magic"]) != SNAPSHOT_MAGIC:
            raise ValueError("not a spintraj state snapshot")
        grid = GridSpec(
            n_points=int(data["n_points"]),
            z_min=float(data["z_min"]),
            z_max=float(data["z_max"]),
        )
        state = JointState(np.array(data["amplitudes"]), grid, float(data["j"]))
        seed = int(data["seed"])
        return state, float(data["time"]), None if seed < 0 else seed
