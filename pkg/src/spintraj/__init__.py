"""Quantum-trajectory simulator for a continuously watched spin-oscillator.

A pure joint state of a spin j and a harmonically trapped particle is
propagated under Hamiltonian dynamics plus a continuous position
measurement of the particle, emitting the measurement record alongside
moment, entanglement and classical-comparison diagnostics, with seeded
ensemble and sweep drivers on top.
"""

__version__ = "0.1.0"

from .model import (
    DerivedScales,
    GridSpec,
    ModelParams,
    default_grid,
    derived_scales,
    make_params,
    scale_for_classical_limit,
)
from .states import (
    JointState,
    Moments,
    SpinDensityMatrix,
    make_gaussian,
    make_product_state,
    make_spin_coherent,
    moments,
    reduce_spin,
)
from .engine import (
    SplitStepPropagator,
    StepResult,
    TrajectoryRecord,
    propagate,
    step,
    validate_moment_equations,
)
from .metrics import (
    DeltaSkReport,
    EntropyPoint,
    delta_s_k,
    gaussian_entropy,
    linear_entropy,
    linear_entropy_schmidt,
    predicted_entropy_increment,
)
from .classical import (
    ClassicalState,
    classical_energy,
    classical_step,
    find_chaotic_c,
    qct_distance,
)
