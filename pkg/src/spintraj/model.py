"""Physical parameters, unit conventions and derived scales.

Default units: hbar = m = omega = 1, so the oscillator ground-state width
is z_g = 1/sqrt(2) and the reference measurement strength omega/(8 z_g^2)
evaluates to 1/4.  All other modules receive a ModelParams and never touch
raw unit choices themselves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "ModelParams",
    "DerivedScales",
    "GridSpec",
    "make_params",
    "derived_scales",
    "scale_for_classical_limit",
    "default_grid",
    "spin_dimension",
]


def _is_half_integer(j: float) -> bool:
    """True if 2j is a non-negative integer (within float tolerance)."""
    twice = 2.0 * j
    return j > 0 and abs(twice - round(twice)) < 1e-9


def spin_dimension(j: float) -> int:
    """Hilbert-space dimension 2j+1 of a spin of magnitude j."""
    if not _is_half_integer(j):
        raise ValueError(f"j={j} is not a positive half-integer")
    return int(round(2.0 * j)) + 1


@dataclass(frozen=True)
class ModelParams:
    """All couplings of the spin-oscillator Hamiltonian plus the monitor strength.

    H = p^2/2m + (1/2) m omega^2 z^2 + b z Jz + c Jx, with a continuous
    position measurement of strength k acting on the motional coordinate.
    """

    j: float            # spin magnitude, half-integer, in units of hbar
    mass: float = 1.0
    omega: float = 1.0
    b: float = 0.0      # linear spin-position coupling
    c: float = 0.0      # transverse field strength
    k: float = 0.0      # measurement strength (omega / length^2)
    hbar: float = 1.0

    def __post_init__(self):
        if not _is_half_integer(self.j):
            raise ValueError(f"j={self.j} is not a positive half-integer")
        if self.mass <= 0 or self.omega <= 0 or self.hbar <= 0:
            raise ValueError("mass, omega and hbar must be positive")
        if self.k < 0:
            raise ValueError("measurement strength k must be >= 0")

    @property
    def z_g(self) -> float:
        """Oscillator ground-state width sqrt(hbar / 2 m omega)."""
        return math.sqrt(self.hbar / (2.0 * self.mass * self.omega))

    @property
    def dim(self) -> int:
        return spin_dimension(self.j)

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.omega


@dataclass(frozen=True)
class DerivedScales:
    z_g: float      # ground-state width
    delta_z: float  # characteristic displacement of the spin coupling
    i0: float       # characteristic external action m omega delta_z^2
    e0: float       # characteristic energy m omega^2 delta_z^2
    s_max: float    # maximal linear entropy 1 - 1/(2j+1)


def derived_scales(params: ModelParams) -> DerivedScales:
    """Recompute the characteristic scales from the raw couplings.

    delta_z is recovered from b through b = m omega^2 delta_z / j, so the
    round trip make_params -> derived_scales is exact.
    """
    delta_z = params.b * params.j / (params.mass * params.omega**2)
    i0 = params.mass * params.omega * delta_z**2
    e0 = params.mass * params.omega**2 * delta_z**2
    s_max = 1.0 - 1.0 / spin_dimension(params.j)
    return DerivedScales(z_g=params.z_g, delta_z=delta_z, i0=i0, e0=e0, s_max=s_max)


def make_params(j, coupling_scale, c, k_factor, mass=1.0, omega=1.0, hbar=1.0) -> ModelParams:
    """Build ModelParams from the dimensionless knobs used throughout.

    coupling_scale = delta_z / z_g fixes the spin-position coupling through
    b = m omega^2 delta_z / j; k_factor multiplies the reference strength
    omega / (8 z_g^2).  coupling_scale = 0 switches the coupling off.
    """
    if not _is_half_integer(j):
        raise ValueError(f"j={j} is not a positive half-integer")
    if coupling_scale < 0:
        raise ValueError("coupling_scale must be >= 0")
    if k_factor < 0:
        raise ValueError("k_factor must be >= 0")
    z_g = math.sqrt(hbar / (2.0 * mass * omega))
    delta_z = coupling_scale * z_g
    b = mass * omega**2 * delta_z / j
    k = k_factor * omega / (8.0 * z_g**2)
    return ModelParams(j=j, mass=mass, omega=omega, b=b, c=c, k=k, hbar=hbar)


def scale_for_classical_limit(base: ModelParams, factor: float) -> ModelParams:
    """Scale j by `factor` while keeping i0/j and k fixed.

    delta_z grows as sqrt(factor) so the external action tracks the spin
    action; the measurement strength is untouched.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    j_new = factor * base.j
    if not _is_half_integer(j_new):
        raise ValueError(f"factor*j = {j_new} is not a valid half-integer spin")
    scales = derived_scales(base)
    delta_z_new = scales.delta_z * math.sqrt(factor)
    b_new = base.mass * base.omega**2 * delta_z_new / j_new
    return ModelParams(
        j=j_new, mass=base.mass, omega=base.omega,
        b=b_new, c=base.c, k=base.k, hbar=base.hbar,
    )


@dataclass(frozen=True)
class GridSpec:
    """Uniform position grid; n_points a power of two for the FFT."""

    n_points: int
    z_min: float
    z_max: float

    def __post_init__(self):
        n = self.n_points
        if n < 16 or (n & (n - 1)) != 0:
            raise ValueError("n_points must be a power of two >= 16")
        if not self.z_max > self.z_min:
            raise ValueError("z_max must exceed z_min")

    @property
    def dz(self) -> float:
        return (self.z_max - self.z_min) / self.n_points


def suggested_extent(params: ModelParams) -> float:
    """Grid half-width, in units of delta_z, covering the explored region.

    The orbit plus the displaced wells stay within ~2.1 delta_z at the
    energies used here; the additive term keeps room for the packet width
    and measurement tails, which matter when delta_z is only a few z_g.
    """
    scales = derived_scales(params)
    if scales.delta_z <= 0:
        return 4.0
    return 2.5 + 8.0 * params.z_g / scales.delta_z


def default_grid(params: ModelParams, extent: float = 4.0, n_points: int | None = None) -> GridSpec:
    """Grid covering +-extent reference lengths with spacing below z_g/4.

    The reference length is delta_z when the coupling is on, z_g otherwise
    (free oscillator).  Both the extent and n_points can be overridden.
    """
    scales = derived_scales(params)
    ref = scales.delta_z if scales.delta_z > 0 else params.z_g
    half = extent * ref
    if n_points is None:
        target_dz = params.z_g / 4.0
        n = 16
        while (2.0 * half) / n > target_dz:
            n *= 2
        n_points = n
    grid = GridSpec(n_points=n_points, z_min=-half, z_max=half)
    if scales.delta_z > 0 and not (grid.z_max - grid.z_min) > 4.0 * scales.delta_z:
        raise ValueError("grid extent must exceed 4 delta_z; increase `extent`")
    return grid
