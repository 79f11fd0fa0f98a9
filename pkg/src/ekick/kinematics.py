"""Electron kinematics along the beam axis.

The beam electron moves in one dimension and is described by a single
wavevector q > 0.  Natural units hbar = m_e = 1 are used everywhere in
this package, so wavevectors, velocities and energies are all expressed
in terms of the target excitation frequency once a unit of length is
fixed.  Two dispersion relations are supported:

* nonrelativistic, energy(q) = q^2 / 2, the regime in which the
  discretized self-consistent solver operates;
* relativistic, energy(q) = c * sqrt(c^2 + q^2) - c^2, measured from the
  rest energy so that both variants vanish at q = 0.  This variant is a
  helper for unit conversions and sanity checks only; the solvers assume
  the quadratic dispersion.

Energy exchange with the target opens or closes scattering channels.
A channel at excitation energy dw is open when energy(q) > dw, in which
case the scattered electron leaves with the real wavevector q_out fixed
by energy conservation.  Below threshold the channel only supports an
evanescent component whose decay constant plays the role of q_out in the
closed-channel propagator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

__all__ = [
    "Dispersion",
    "DispersionKind",
    "Channel",
    "ChannelKind",
    "NONRELATIVISTIC",
    "relativistic",
    "energy",
    "group_velocity",
    "scattered_wavevector",
    "threshold_wavevector",
]

# Fine-structure constant inverse, the dimensionless light speed when
# lengths are measured in Bohr radii and energies in Hartree.
DEFAULT_LIGHT_SPEED = 137.035999084

# Relative slack used to classify a channel as exactly at threshold.
_THRESHOLD_REL_TOL = 1e-13


class DispersionKind(Enum):
    NONRELATIVISTIC = "nonrelativistic"
    RELATIVISTIC = "relativistic"


@dataclass(frozen=True)
class Dispersion:
    """Dispersion relation of the beam electron."""

    kind: DispersionKind = DispersionKind.NONRELATIVISTIC
    light_speed: float = DEFAULT_LIGHT_SPEED

    def __post_init__(self) -> None:
        if not isinstance(self.kind, DispersionKind):
            raise ValueError(f"kind must be a DispersionKind, got {self.kind!r}")
        if not (self.light_speed > 0.0):
            raise ValueError(f"light_speed must be positive, got {self.light_speed}")

    @property
    def is_relativistic(self) -> bool:
        return self.kind is DispersionKind.RELATIVISTIC


NONRELATIVISTIC = Dispersion()


def relativistic(light_speed: float = DEFAULT_LIGHT_SPEED) -> Dispersion:
    return Dispersion(DispersionKind.RELATIVISTIC, light_speed)


class ChannelKind(Enum):
    OPEN = "open"
    CLOSED = "closed"
    AT_THRESHOLD = "at_threshold"


@dataclass(frozen=True)
class Channel:
    """Outcome of energy conservation for one scattering channel.

    ``wavevector`` holds the outgoing wavevector for an open channel,
    the evanescent decay constant for a closed one, and zero exactly at
    threshold.
    """

    kind: ChannelKind
    wavevector: float

    @property
    def is_open(self) -> bool:
        return self.kind is ChannelKind.OPEN


def energy(model: Dispersion, q: float) -> float:
    """Kinetic energy at wavevector q, measured from q = 0."""
    if model.is_relativistic:
        c = model.light_speed
        # c * (sqrt(c^2 + q^2) - c) written without cancellation.
        return c * q * q / (math.hypot(c, q) + c)
    return 0.5 * q * q


def group_velocity(model: Dispersion, q: float) -> float:
    """d(energy)/dq; equals q itself in the nonrelativistic variant."""
    if model.is_relativistic:
        c = model.light_speed
        return c * q / math.hypot(c, q)
    return q


def threshold_wavevector(model: Dispersion, excitation: float) -> float:
    """Smallest incident wavevector able to deposit ``excitation``."""
    if excitation < 0.0:
        raise ValueError(f"excitation must be nonnegative, got {excitation}")
    if model.is_relativistic:
        c = model.light_speed
        # Solve energy(q) = excitation for q.
        return math.sqrt(excitation * (2.0 + excitation / (c * c)))
    return math.sqrt(2.0 * excitation)


def scattered_wavevector(model: Dispersion, q: float, excitation: float) -> Channel:
    """Channel data for an incident wavevector q losing ``excitation``.

    Negative ``excitation`` describes energy gain (scattering off an
    excited target) and always yields an open channel.
    """
    if not (q > 0.0):
        raise ValueError(f"incident wavevector must be positive, got {q}")
    if model.is_relativistic:
        c = model.light_speed
        # s = q_out^2, via w = sqrt(c^2 + q_out^2) = sqrt(c^2 + q^2) - dw/c.
        # The difference w - c is assembled from pieces that avoid
        # subtracting nearly equal large numbers.
        w_minus_c = q * q / (math.hypot(c, q) + c) - excitation / c
        if w_minus_c + c < 0.0:
            # Kinetic energy cannot drop below -c^2 even on the
            # evanescent branch, so no channel of either kind exists.
            raise ValueError(
                "excitation exceeds the relativistic evanescent branch "
                f"for q={q}, excitation={excitation}"
            )
        s = w_minus_c * (w_minus_c + 2.0 * c)
        scale = max(q * q, 2.0 * abs(excitation))
    else:
        s = q * q - 2.0 * excitation
        scale = max(q * q, 2.0 * abs(excitation))
    if abs(s) <= _THRESHOLD_REL_TOL * scale:
        return Channel(ChannelKind.AT_THRESHOLD, 0.0)
    if s > 0.0:
        return Channel(ChannelKind.OPEN, math.sqrt(s))
    return Channel(ChannelKind.CLOSED, math.sqrt(-s))
