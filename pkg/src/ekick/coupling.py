"""Electron-target transition couplings.

A beam electron passing a localized target at impact parameter R probes
the target's transition charge density through its evanescent Coulomb
field.  For a straight trajectory the matrix element between beam states
depends only on the longitudinal momentum transfer q, and for a
transition of given multipolar character it factorizes into a real
amplitude times a universal kernel

    kernel(q) = sign(q)^sigma * |q|^l * K_m(|q| R),

where K_m is a modified Bessel function of the second kind, l is set by
the multipole order, m by the azimuthal symmetry about the beam axis,
and sigma = (l + m) mod 2 fixes the parity.  The five tabulated
symmetries cover the dipolar and quadrupolar transitions that survive at
zero azimuth; their real-space profiles along the trajectory are
algebraic and are used by the amplitude-evolution solver.

Conventions: the coupling amplitude is kept real and positive.  Constant
unimodular prefactors of the matrix elements are dropped, since every
observable produced by this package is invariant under a global phase of
the coupling (the solvers accept an explicit phase argument so the
invariance can be exercised).  Natural units hbar = m_e = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .kinematics import (
    Dispersion,
    NONRELATIVISTIC,
    group_velocity,
    scattered_wavevector,
)

__all__ = [
    "bessel_k",
    "TransitionSymmetry",
    "SYMMETRIES",
    "symmetry",
    "CouplingModel",
    "momentum_coupling",
    "zero_transfer_limit",
    "realspace_coupling",
    "multipole_coupling",
    "normalize_amplitude",
    "normalize_amplitude_nonrecoil",
    "boson_ladder_coupling",
]

_EULER_GAMMA = 0.5772156649015328606

# Crossover between the ascending series and the continued-fraction
# evaluation.  Both branches hold ~1e-15 relative accuracy at x = 2.
_SERIES_CUTOFF = 2.0


def _k01_series(x: float) -> tuple[float, float]:
    """K_0(x) and K_1(x) for 0 < x < 2 from the ascending series."""
    u = 0.25 * x * x
    log_half_x = math.log(0.5 * x)
    # I_0 pieces: t_k = u^k / (k!)^2, and the same terms weighted by the
    # harmonic numbers H_k.
    t = 1.0
    i0 = 1.0
    h = 0.0
    s0 = 0.0
    # I_1 pieces: s_k = u^k / (k! (k+1)!), weighted by H_k + H_{k+1}.
    r = 1.0
    i1 = 1.0
    s1 = 1.0  # k = 0 term carries H_0 + H_1 = 1
    for k in range(1, 60):
        t *= u / (k * k)
        h += 1.0 / k
        i0 += t
        s0 += t * h
        r *= u / (k * (k + 1))
        i1 += r
        s1 += r * (2.0 * h + 1.0 / (k + 1))
        if t < 1e-18 * i0 and r < 1e-18 * i1:
            break
    i1 *= 0.5 * x
    k0 = -(log_half_x + _EULER_GAMMA) * i0 + s0
    k1 = 1.0 / x + log_half_x * i1 - 0.25 * x * (s1 - 2.0 * _EULER_GAMMA * (i1 / (0.5 * x)))
    return k0, k1


def _k01_continued_fraction(x: float) -> tuple[float, float]:
    """K_0(x) and K_1(x) for x >= 2 via Steed's continued fraction."""
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = delh = d
    q1 = 0.0
    q2 = 1.0
    a1 = 0.25
    qq = cc = a1
    a = -a1
    s = 1.0 + qq * delh
    for i in range(2, 1000):
        a -= 2.0 * (i - 1)
        cc = -a * cc / i
        qnew = (q1 - b * q2) / a
        q1 = q2
        q2 = qnew
        qq += cc * qnew
        b += 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h += delh
        dels = qq * delh
        s += dels
        if abs(dels / s) < 1e-16:
            break
    h = a1 * h
    k0 = math.sqrt(math.pi / (2.0 * x)) * math.exp(-x) / s
    k1 = k0 * (x + 0.5 - h) / x
    return k0, k1


def bessel_k(order: int, x: float) -> float:
    """Modified Bessel function of the second kind, orders 0, 1, 2.

    Accurate to better than 1e-10 relative over x in [1e-8, 700]; the
    result underflows smoothly to zero for x beyond roughly 745.
    """
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2, got {order}")
    if not (x > 0.0):
        raise ValueError(f"argument must be positive, got {x}")
    if x < _SERIES_CUTOFF:
        k0, k1 = _k01_series(x)
    else:
        k0, k1 = _k01_continued_fraction(x)
    if order == 0:
        return k0
    if order == 1:
        return k1
    # Upward recurrence is stable for this family.
    return k0 + 2.0 * k1 / x


@dataclass(frozen=True)
class TransitionSymmetry:
    """Multipolar character of a target transition.

    ``angular_order`` is the power of the momentum transfer in the
    kernel, ``azimuthal_order`` the Bessel order, and ``sign_power``
    (0 or 1) the parity of the kernel under q -> -q.  The parity is not
    free: it must equal (l + m) mod 2.
    """

    name: str
    angular_order: int
    azimuthal_order: int
    sign_power: int

    def __post_init__(self) -> None:
        l, m, s = self.angular_order, self.azimuthal_order, self.sign_power
        if l < 1:
            raise ValueError(f"angular_order must be >= 1, got {l}")
        if not (0 <= m <= l):
            raise ValueError(f"azimuthal_order must lie in [0, {l}], got {m}")
        if s != (l + m) % 2:
            raise ValueError(
                f"sign_power must equal (l + m) mod 2 = {(l + m) % 2}, got {s}"
            )
        if m > 2:
            raise ValueError("kernels are implemented for azimuthal order <= 2")

    @property
    def is_odd(self) -> bool:
        return self.sign_power == 1


P_X = TransitionSymmetry("p_x", 1, 1, 0)
P_Z = TransitionSymmetry("p_z", 1, 0, 1)
D_Z2 = TransitionSymmetry("d_z2", 2, 0, 0)
D_XZ = TransitionSymmetry("d_xz", 2, 1, 1)
D_X2Y2 = TransitionSymmetry("d_x2y2", 2, 2, 0)

SYMMETRIES: dict[str, TransitionSymmetry] = {
    s.name: s for s in (P_X, P_Z, D_Z2, D_XZ, D_X2Y2)
}


def symmetry(name: str) -> TransitionSymmetry:
    try:
        return SYMMETRIES[name]
    except KeyError:
        raise ValueError(
            f"unknown symmetry {name!r}; expected one of {sorted(SYMMETRIES)}"
        ) from None


@dataclass(frozen=True)
class CouplingModel:
    """A transition symmetry with its geometry and overall strength.

    ``backscatter_in_normalization`` records whether the amplitude was
    fixed from a target linear excitation probability that counted the
    backward-scattered wave; it is metadata and does not change any
    kernel value.
    """

    symmetry: TransitionSymmetry
    impact_parameter: float
    amplitude: float = 1.0
    backscatter_in_normalization: bool = False

    def __post_init__(self) -> None:
        if not (self.impact_parameter > 0.0):
            raise ValueError(
                f"impact_parameter must be positive, got {self.impact_parameter}"
            )
        if not (self.amplitude > 0.0):
            raise ValueError(f"amplitude must be positive, got {self.amplitude}")


def momentum_coupling(model: CouplingModel, q: float) -> float:
    """Coupling kernel at longitudinal momentum transfer q (real).

    The kernel is undefined at q = 0 in general; use
    ``zero_transfer_limit`` for the limiting diagonal value needed on a
    discretized momentum grid.
    """
    if q == 0.0:
        raise ValueError("momentum transfer must be nonzero")
    sym = model.symmetry
    sign = -1.0 if (q < 0.0 and sym.is_odd) else 1.0
    aq = abs(q)
    return (
        model.amplitude
        * sign
        * aq**sym.angular_order
        * bessel_k(sym.azimuthal_order, aq * model.impact_parameter)
    )


def zero_transfer_limit(model: CouplingModel) -> float:
    """Limit of the kernel as the momentum transfer goes to zero.

    Finite only when the transfer power matches the Bessel order, since
    x^m K_m(x) -> 2^(m-1) (m-1)! for m >= 1; otherwise the limit is 0.
    """
    sym = model.symmetry
    l, m = sym.angular_order, sym.azimuthal_order
    if l > m:
        return 0.0
    return (
        model.amplitude
        * 2.0 ** (m - 1)
        * math.factorial(m - 1)
        / model.impact_parameter**m
    )


def realspace_coupling(model: CouplingModel, z: float) -> complex:
    """Coupling profile along the trajectory coordinate z (complex).

    This is the Fourier transform of the momentum kernel,
    integral dq kernel(q) exp(i q z); odd kernels give purely imaginary
    odd profiles, even kernels real even ones.
    """
    r = model.impact_parameter
    r2z2 = r * r + z * z
    name = model.symmetry.name
    if name == "p_x":
        value: complex = math.pi * r / r2z2**1.5
    elif name == "p_z":
        value = 1j * math.pi * z / r2z2**1.5
    elif name == "d_z2":
        value = math.pi * (r * r - 2.0 * z * z) / r2z2**2.5
    elif name == "d_xz":
        value = 3j * math.pi * z * r / r2z2**2.5
    elif name == "d_x2y2":
        value = 3.0 * math.pi * r * r / r2z2**2.5
    else:
        raise ValueError(
            f"no closed-form trajectory profile for symmetry {name!r}"
        )
    return model.amplitude * value


_QUARTER_TURNS = (1.0 + 0.0j, -1.0j, -1.0 + 0.0j, 1.0j)


def multipole_coupling(
    angular_order: int,
    azimuthal_order: int,
    transfer: float,
    impact_parameter: float,
    azimuth: float = 0.0,
) -> complex:
    """Kernel contribution of one multipole component, per unit moment.

    ``azimuthal_order`` may be negative here (components m and -m are
    distinct before they are combined into real target orbitals).  The
    value carries the (-i)^(l+m) factor, the inverse square root of
    (l-m)! (l+m)!, the azimuth phase of the impact point, and the sign
    factor (-1)^m applied for negative transfer.
    """
    l, m = angular_order, azimuthal_order
    if l < 1:
        raise ValueError(f"angular_order must be >= 1, got {l}")
    if abs(m) > l:
        raise ValueError(f"|azimuthal_order| must not exceed {l}, got {m}")
    if transfer == 0.0:
        raise ValueError("momentum transfer must be nonzero")
    if not (impact_parameter > 0.0):
        raise ValueError(f"impact_parameter must be positive, got {impact_parameter}")
    phase = _QUARTER_TURNS[(l + m) % 4] * complex(
        math.cos(m * azimuth), math.sin(m * azimuth)
    )
    norm = 1.0 / math.sqrt(math.factorial(l - m) * math.factorial(l + m))
    radial = transfer**l * bessel_k(abs(m), abs(transfer) * impact_parameter)
    sign = 1.0 if transfer > 0.0 else (-1.0) ** m
    return phase * norm * radial * sign


def normalize_amplitude(
    transition: TransitionSymmetry,
    impact_parameter: float,
    q0: float,
    excitation: float,
    target_linear: float,
    include_backscatter: bool = False,
    dispersion: Dispersion = NONRELATIVISTIC,
) -> CouplingModel:
    """Coupling model whose linear excitation probability is prescribed.

    The linear probability of the first excitation,

        P_lin = (4 pi^2 / (v0 v1)) * (kernel(q1 - q0)^2 [+ kernel(-q1 - q0)^2]),

    is inverted for the amplitude.  The backward-wave term in brackets is
    included only on request; it is exponentially small except close to
    threshold.  The incident energy must lie above the excitation
    threshold, otherwise no linear probability exists.
    """
    if not (target_linear > 0.0):
        raise ValueError(f"target_linear must be positive, got {target_linear}")
    if not (excitation > 0.0):
        raise ValueError(f"excitation must be positive, got {excitation}")
    channel = scattered_wavevector(dispersion, q0, excitation)
    if not channel.is_open:
        raise ValueError(
            f"incident wavevector {q0} is below the excitation threshold; "
            "no linear probability is defined"
        )
    q1 = channel.wavevector
    v0 = group_velocity(dispersion, q0)
    v1 = group_velocity(dispersion, q1)
    probe = CouplingModel(transition, impact_parameter, 1.0)
    forward = momentum_coupling(probe, q1 - q0)
    weight = forward * forward
    if include_backscatter:
        backward = momentum_coupling(probe, -q1 - q0)
        weight += backward * backward
    amplitude = math.sqrt(target_linear * v0 * v1 / (4.0 * math.pi**2 * weight))
    return CouplingModel(
        transition, impact_parameter, amplitude, include_backscatter
    )


def normalize_amplitude_nonrecoil(
    transition: TransitionSymmetry,
    impact_parameter: float,
    speed: float,
    excitation: float,
    target_linear: float,
) -> CouplingModel:
    """Amplitude fixed in the nonrecoil limit, transfer = excitation/speed.

    Equivalent to ``normalize_amplitude`` without backscatter when the
    incident energy is far above threshold.
    """
    if not (target_linear > 0.0):
        raise ValueError(f"target_linear must be positive, got {target_linear}")
    if not (speed > 0.0):
        raise ValueError(f"speed must be positive, got {speed}")
    if not (excitation > 0.0):
        raise ValueError(f"excitation must be positive, got {excitation}")
    probe = CouplingModel(transition, impact_parameter, 1.0)
    kernel = momentum_coupling(probe, excitation / speed)
    amplitude = speed * math.sqrt(target_linear) / (2.0 * math.pi * abs(kernel))
    return CouplingModel(transition, impact_parameter, amplitude, False)


def with_amplitude(model: CouplingModel, amplitude: float) -> CouplingModel:
    return replace(model, amplitude=amplitude)


def boson_ladder_coupling(level_to: int, level_from: int, base: complex) -> complex:
    """Matrix element between harmonic ladder levels for a 0->1 coupling.

    Raising steps scale as sqrt(level_to) times the base element,
    lowering steps as sqrt(level_from) times its conjugate, and all
    other pairs vanish.
    """
    if level_to < 0 or level_from < 0:
        raise ValueError("ladder levels must be nonnegative integers")
    if level_from == level_to - 1:
        return math.sqrt(level_to) * base
    if level_from == level_to + 1:
        return math.sqrt(level_from) * complex(base).conjugate()
    return 0.0j
