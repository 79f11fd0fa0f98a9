import math

import mpmath as mp
import numpy as np
import pytest
from scipy import integrate

from ekick.coupling import (
    CouplingModel,
    SYMMETRIES,
    TransitionSymmetry,
    bessel_k,
    boson_ladder_coupling,
    momentum_coupling,
    multipole_coupling,
    normalize_amplitude,
    normalize_amplitude_nonrecoil,
    realspace_coupling,
    symmetry,
    zero_transfer_limit,
)
from ekick.kinematics import NONRELATIVISTIC, group_velocity, scattered_wavevector

mp.mp.dps = 30

ALL_NAMES = sorted(SYMMETRIES)


# ----------------------------------------------------------------------
# Modified Bessel kernels, checked against an arbitrary-precision oracle.
# ----------------------------------------------------------------------

@pytest.mark.parametrize("order", [0, 1, 2])
def test_bessel_k_accuracy_over_full_domain(order):
    xs = np.geomspace(1e-8, 700.0, 300)
    for x in xs:
        ref = float(mp.besselk(order, mp.mpf(float(x))))
        assert bessel_k(order, float(x)) == pytest.approx(ref, rel=1e-10)


def test_bessel_k_spot_values():
    assert bessel_k(0, 1.0) == pytest.approx(
        float(mp.besselk(0, 1)), rel=1e-14
    )
    assert bessel_k(1, 1.0) == pytest.approx(
        float(mp.besselk(1, 1)), rel=1e-14
    )
    assert bessel_k(2, 1.0) == pytest.approx(
        float(mp.besselk(2, 1)), rel=1e-14
    )


def test_bessel_k_across_series_cutoff():
    # The two evaluation branches must agree where they meet.
    for x in (1.999999, 2.0, 2.000001):
        ref = float(mp.besselk(1, mp.mpf(x)))
        assert bessel_k(1, x) == pytest.approx(ref, rel=1e-13)


def test_bessel_k_rejects_bad_input():
    with pytest.raises(ValueError):
        bessel_k(3, 1.0)
    with pytest.raises(ValueError):
        bessel_k(0, 0.0)
    with pytest.raises(ValueError):
        bessel_k(0, -1.0)


# ----------------------------------------------------------------------
# Symmetry table.
# ----------------------------------------------------------------------

def test_symmetry_table():
    expected = {
        "p_x": (1, 1, 0),
        "p_z": (1, 0, 1),
        "d_z2": (2, 0, 0),
        "d_xz": (2, 1, 1),
        "d_x2y2": (2, 2, 0),
    }
    for name, (l, m, s) in expected.items():
        sym = symmetry(name)
        assert (sym.angular_order, sym.azimuthal_order, sym.sign_power) == (l, m, s)


def test_symmetry_validation():
    with pytest.raises(ValueError):
        TransitionSymmetry("bad", 0, 0, 0)
    with pytest.raises(ValueError):
        TransitionSymmetry("bad", 1, 2, 1)
    with pytest.raises(ValueError):
        # Parity must match (l + m) mod 2.
        TransitionSymmetry("bad", 1, 1, 1)
    with pytest.raises(ValueError):
        symmetry("f_xyz")


# ----------------------------------------------------------------------
# Momentum kernels.
# ----------------------------------------------------------------------

@pytest.mark.parametrize("name", ALL_NAMES)
def test_momentum_kernel_parity(name):
    model = CouplingModel(symmetry(name), impact_parameter=0.8)
    sign = -1.0 if symmetry(name).is_odd else 1.0
    for q in (0.3, 1.7, 4.2):
        assert momentum_coupling(model, -q) == pytest.approx(
            sign * momentum_coupling(model, q), rel=1e-15
        )


def test_momentum_kernel_spot_values():
    # Unit amplitude, R = 1, q = 1: the kernel reduces to K_m(1).
    assert momentum_coupling(
        CouplingModel(symmetry("p_x"), 1.0), 1.0
    ) == pytest.approx(float(mp.besselk(1, 1)), rel=1e-14)
    assert momentum_coupling(
        CouplingModel(symmetry("d_x2y2"), 0.5), 2.0
    ) == pytest.approx(4.0 * float(mp.besselk(2, 1)), rel=1e-14)
    # Odd kernel: negative transfer flips the sign.
    assert momentum_coupling(
        CouplingModel(symmetry("p_z"), 2.0), -0.5
    ) == pytest.approx(-0.5 * float(mp.besselk(0, 1)), rel=1e-14)


def test_momentum_kernel_rejects_zero_transfer():
    model = CouplingModel(symmetry("p_x"), 1.0)
    with pytest.raises(ValueError):
        momentum_coupling(model, 0.0)


@pytest.mark.parametrize("name,expected", [
    ("p_x", 1.0),       # x K_1(x) -> 1, divided by R
    ("p_z", 0.0),
    ("d_z2", 0.0),
    ("d_xz", 0.0),
    ("d_x2y2", 2.0),    # x^2 K_2(x) -> 2, divided by R^2
])
def test_zero_transfer_limit(name, expected):
    r = 0.7
    model = CouplingModel(symmetry(name), r)
    m = symmetry(name).azimuthal_order
    assert zero_transfer_limit(model) == pytest.approx(
        expected / r**m if expected else 0.0, rel=1e-15
    )
    # The limit must be approached by the kernel itself.
    assert momentum_coupling(model, 1e-7) == pytest.approx(
        zero_transfer_limit(model), abs=1e-5
    )


# ----------------------------------------------------------------------
# Trajectory profiles and their Fourier consistency with the kernels.
# ----------------------------------------------------------------------

def test_realspace_profile_spot_values():
    r = 1.3
    px = CouplingModel(symmetry("p_x"), r)
    assert realspace_coupling(px, 0.0) == pytest.approx(math.pi / r**2, rel=1e-15)
    pz = CouplingModel(symmetry("p_z"), r)
    assert realspace_coupling(pz, 0.0) == 0.0
    assert realspace_coupling(pz, r).real == 0.0
    dz2 = CouplingModel(symmetry("d_z2"), r)
    assert realspace_coupling(dz2, 0.0) == pytest.approx(math.pi / r**3, rel=1e-15)


@pytest.mark.parametrize("name", ALL_NAMES)
def test_realspace_profile_is_hermitian_under_reflection(name):
    # Even symmetries give real even profiles, odd ones imaginary odd
    # profiles; both satisfy G(-z) = conj(G(z)).
    model = CouplingModel(symmetry(name), 0.9)
    for z in (0.2, 1.1, 3.7):
        assert realspace_coupling(model, -z) == pytest.approx(
            realspace_coupling(model, z).conjugate(), rel=1e-14
        )


def _kernel_or_limit(model: CouplingModel, q: float) -> float:
    # Quadrature nodes can land exactly on q = 0, where the kernel is
    # defined only as a limit.
    if q == 0.0:
        return zero_transfer_limit(model)
    return momentum_coupling(model, q)


def _fourier_transform_of_kernel(model: CouplingModel, z: float) -> complex:
    """Oracle: integral dq kernel(q) exp(iqz) by adaptive quadrature."""
    if model.symmetry.is_odd:
        # Odd kernel: 2i * integral_0^inf kernel(q) sin(qz) dq.
        if z == 0.0:
            return 0.0j
        val, _ = integrate.quad(
            lambda q: _kernel_or_limit(model, q),
            0.0,
            np.inf,
            weight="sin",
            wvar=abs(z),
            epsabs=1e-11,
            limlst=200,
        )
        return 2j * math.copysign(1.0, z) * val
    if z == 0.0:
        val, _ = integrate.quad(
            lambda q: _kernel_or_limit(model, q), 0.0, np.inf, epsabs=1e-11
        )
        return complex(2.0 * val)
    val, _ = integrate.quad(
        lambda q: _kernel_or_limit(model, q),
        0.0,
        np.inf,
        weight="cos",
        wvar=abs(z),
        epsabs=1e-11,
        limlst=200,
    )
    return complex(2.0 * val)


@pytest.mark.parametrize("name", ALL_NAMES)
@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_momentum_and_realspace_profiles_are_fourier_pairs(name, r):
    model = CouplingModel(symmetry(name), r)
    for z in np.linspace(-4.0, 4.0, 20):
        expected = _fourier_transform_of_kernel(model, float(z))
        got = realspace_coupling(model, float(z))
        assert got == pytest.approx(expected, abs=1e-6)


# ----------------------------------------------------------------------
# Multipole components reduce to the tabulated kernels.
# ----------------------------------------------------------------------

# Real target orbitals as combinations of azimuthal components (m, coeff),
# and the resulting proportionality constant with respect to the
# tabulated kernel, derived once from the component algebra.
_REDUCTIONS = {
    "p_x": ([(-1, 1.0), (1, -1.0)], math.sqrt(2.0)),
    "p_z": ([(0, 1.0)], -1.0j),
    "d_z2": ([(0, 1.0)], -0.5),
    "d_xz": ([(-1, 1.0), (1, -1.0)], -2.0j / math.sqrt(6.0)),
    "d_x2y2": ([(-2, 1.0), (2, 1.0)], 2.0 / math.sqrt(24.0)),
}

_NULL_AT_ZERO_AZIMUTH = {
    # Orbitals built from the imaginary azimuthal combinations couple to
    # nothing when the trajectory passes at azimuth zero.
    "d_xy": (2, [(-2, 1.0j), (2, -1.0j)]),
    "d_yz": (2, [(-1, 1.0j), (1, 1.0j)]),
}


@pytest.mark.parametrize("name", ALL_NAMES)
def test_multipole_combination_reduces_to_tabulated_kernel(name):
    sym = symmetry(name)
    combo, expected_ratio = _REDUCTIONS[name]
    for r in (0.7, 1.3):
        model = CouplingModel(sym, r)
        for q in (-2.4, -0.3, 0.3, 1.1, 2.4):
            total = sum(
                coeff * multipole_coupling(sym.angular_order, m, q, r)
                for m, coeff in combo
            )
            ratio = total / momentum_coupling(model, q)
            assert ratio == pytest.approx(expected_ratio, rel=1e-12)


@pytest.mark.parametrize("orbital", sorted(_NULL_AT_ZERO_AZIMUTH))
def test_orthogonal_orbitals_do_not_couple_at_zero_azimuth(orbital):
    order, combo = _NULL_AT_ZERO_AZIMUTH[orbital]
    for q in (0.4, 1.9):
        total = sum(
            coeff * multipole_coupling(order, m, q, 1.0) for m, coeff in combo
        )
        assert abs(total) < 1e-14
        # Rotating the impact point by a quarter turn restores coupling.
        rotated = sum(
            coeff * multipole_coupling(order, m, q, 1.0, azimuth=math.pi / 4.0)
            for m, coeff in combo
        )
        assert abs(rotated) > 1e-3


def test_multipole_coupling_validation():
    with pytest.raises(ValueError):
        multipole_coupling(0, 0, 1.0, 1.0)
    with pytest.raises(ValueError):
        multipole_coupling(1, 2, 1.0, 1.0)
    with pytest.raises(ValueError):
        multipole_coupling(1, 1, 0.0, 1.0)


# ----------------------------------------------------------------------
# Amplitude normalization.
# ----------------------------------------------------------------------

def _linear_probability_recoil(model: CouplingModel, q0, excitation, backscatter):
    q1 = scattered_wavevector(NONRELATIVISTIC, q0, excitation).wavevector
    v0 = group_velocity(NONRELATIVISTIC, q0)
    v1 = group_velocity(NONRELATIVISTIC, q1)
    weight = momentum_coupling(model, q1 - q0) ** 2
    if backscatter:
        weight += momentum_coupling(model, -q1 - q0) ** 2
    return 4.0 * math.pi**2 / (v0 * v1) * weight


@pytest.mark.parametrize("name", ALL_NAMES)
@pytest.mark.parametrize("backscatter", [False, True])
def test_normalize_amplitude_roundtrip(name, backscatter):
    q0, excitation, target = 2.0, 1.0, 0.37
    model = normalize_amplitude(
        symmetry(name), 0.8, q0, excitation, target, backscatter
    )
    assert model.backscatter_in_normalization is backscatter
    assert _linear_probability_recoil(
        model, q0, excitation, backscatter
    ) == pytest.approx(target, rel=1e-12)


def test_backscatter_normalization_lowers_amplitude():
    base = dict(q0=1.6, excitation=1.0, target_linear=1.0)
    with_b = normalize_amplitude(symmetry("p_x"), 0.5, include_backscatter=True, **base)
    without = normalize_amplitude(symmetry("p_x"), 0.5, include_backscatter=False, **base)
    assert with_b.amplitude < without.amplitude


@pytest.mark.parametrize("name", ALL_NAMES)
def test_normalize_amplitude_nonrecoil_roundtrip(name):
    speed, excitation, target = 1.0, 1.0, 1.7
    model = normalize_amplitude_nonrecoil(symmetry(name), 0.6, speed, excitation, target)
    plin = (
        4.0
        * math.pi**2
        / speed**2
        * momentum_coupling(model, excitation / speed) ** 2
    )
    assert plin == pytest.approx(target, rel=1e-12)


def test_normalize_amplitude_approaches_nonrecoil_limit():
    # Far above threshold the recoil normalization converges to the
    # nonrecoil one evaluated at transfer excitation/speed.
    q0 = 200.0
    recoil = normalize_amplitude(symmetry("p_x"), 0.3, q0, 1.0, 1.0, False)
    nonrecoil = normalize_amplitude_nonrecoil(symmetry("p_x"), 0.3, q0, 1.0, 1.0)
    assert recoil.amplitude == pytest.approx(nonrecoil.amplitude, rel=1e-4)


def test_normalize_amplitude_requires_open_channel():
    with pytest.raises(ValueError):
        normalize_amplitude(symmetry("p_x"), 1.0, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        normalize_amplitude(symmetry("p_x"), 1.0, 2.0, 1.0, 0.0)


def test_coupling_model_validation():
    with pytest.raises(ValueError):
        CouplingModel(symmetry("p_x"), 0.0)
    with pytest.raises(ValueError):
        CouplingModel(symmetry("p_x"), 1.0, amplitude=0.0)


# ----------------------------------------------------------------------
# Bosonic ladder matrix elements.
# ----------------------------------------------------------------------

def test_boson_ladder_coupling_rules():
    base = 0.3 + 0.4j
    assert boson_ladder_coupling(1, 0, base) == base
    assert boson_ladder_coupling(3, 2, base) == pytest.approx(
        math.sqrt(3.0) * base, rel=1e-15
    )
    assert boson_ladder_coupling(2, 3, base) == pytest.approx(
        math.sqrt(3.0) * base.conjugate(), rel=1e-15
    )
    assert boson_ladder_coupling(2, 0, base) == 0.0j
    assert boson_ladder_coupling(2, 2, base) == 0.0j
    with pytest.raises(ValueError):
        boson_ladder_coupling(-1, 0, base)
