"""Excitation of few-level quantum targets by single free electrons.

This package simulates what a single swift electron, prepared in a pure
momentum state and flying past a localized target, does to the target's
level populations.  Unlike a classical field pulse, whose action on a
two-level system can never exceed the perturbative exchange it mediates,
a single electron carries quantized momentum channels: once the full
self-consistent scattering between electron and target is kept, the
excitation probability can reach 100 percent at a finite coupling
strength.

Three regimes are covered:

* closed forms for point-like targets (``closed_forms``),
* amplitude evolution along a classical trajectory when recoil is
  negligible (``nonrecoil``), including coherent driving of a bosonic
  mode and energy-loss spectra,
* the fully recoil-aware scattering problem on a discretized momentum
  grid (``recoil``), for two-level and bosonic ladder targets.

``sweep`` regenerates the standard figure datasets and locates coupling
maxima; ``cli`` exposes everything as an ``ekick`` command.  Natural
units hbar = m_e = 1 throughout.
"""

__version__ = "0.1.0"

from .kinematics import (
    Dispersion,
    DispersionKind,
    Channel,
    ChannelKind,
    NONRELATIVISTIC,
    relativistic,
    energy,
    group_velocity,
    scattered_wavevector,
    threshold_wavevector,
)
from .coupling import (
    bessel_k,
    TransitionSymmetry,
    SYMMETRIES,
    symmetry,
    CouplingModel,
    momentum_coupling,
    zero_transfer_limit,
    realspace_coupling,
    multipole_coupling,
    normalize_amplitude,
    normalize_amplitude_nonrecoil,
    boson_ladder_coupling,
)
from .closed_forms import (
    pointlike_with_backscatter,
    pointlike_no_backscatter,
    poisson_occupations,
)
from .nonrecoil import (
    LevelSystem,
    TrajectoryResult,
    SuperpositionResult,
    InitialState,
    CoherentTrajectory,
    SpectralLine,
    two_level_system,
    boson_ladder_system,
    integrate,
    integrate_superposition,
    linear_probability,
    boson_coherent,
    eels_spectrum,
)
from .recoil import (
    GridMode,
    MomentumGrid,
    RecoilSolution,
    SpectralProfile,
    build_grid,
    solve_two_level,
    solve_boson_ladder,
    weighted_probability,
)
from .sweep import (
    Axis,
    SweepSpec,
    SweepResult,
    MaximumSearchResult,
    run_sweep,
    find_maximum,
    fock_decomposition_sweep,
    fig1_dataset,
    fig2_dataset,
    fig3a_dataset,
    fig3b_dataset,
)
