"""Closed-form excitation probabilities for point-like targets.

When the target is much smaller than every other length in the problem,
the self-consistent scattering series sums analytically and the final
level populations depend on a single number: the linear (first-order)
excitation probability p.  Two variants exist for a two-level target,
with and without the backward-scattered wave, and a harmonic target
driven in this limit ends in a coherent state with Poissonian level
occupations of mean p.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "pointlike_with_backscatter",
    "pointlike_no_backscatter",
    "poisson_occupations",
]


def pointlike_with_backscatter(p_linear: float) -> tuple[float, float]:
    """(P_0, P_1) for a point-like two-level target, backward wave kept.

    P_1 = p / (1 + p/2)^2 saturates at 1/2 when p = 2: the forward and
    backward outgoing waves share the excitation evenly at the point of
    maximal conversion.  The pair sums to one exactly.
    """
    if p_linear < 0.0:
        raise ValueError(f"linear probability must be nonnegative, got {p_linear}")
    denom = (1.0 + 0.5 * p_linear) ** 2
    p1 = p_linear / denom
    p0 = (1.0 + 0.25 * p_linear * p_linear) / denom
    return p0, p1


def pointlike_no_backscatter(p_linear: float) -> tuple[float, float]:
    """(P_0, P_1) for a point-like two-level target, forward wave only.

    P_1 = p / (1 + p/4)^2 reaches exactly 1 at p = 4; with a single
    outgoing channel the electron can deposit its quantum with unit
    probability.  The pair sums to one exactly.
    """
    if p_linear < 0.0:
        raise ValueError(f"linear probability must be nonnegative, got {p_linear}")
    denom = (1.0 + 0.25 * p_linear) ** 2
    p1 = p_linear / denom
    p0 = (1.0 - 0.25 * p_linear) ** 2 / denom
    return p0, p1


def poisson_occupations(mean: float, count: int) -> np.ndarray:
    """First ``count`` Poissonian occupations with the given mean.

    Evaluated in log space so that large means and deep tail entries do
    not overflow or underflow prematurely.
    """
    if mean < 0.0:
        raise ValueError(f"mean must be nonnegative, got {mean}")
    if count < 1:
        raise ValueError(f"count must be at least 1, got {count}")
    if mean == 0.0:
        out = np.zeros(count)
        out[0] = 1.0
        return out
    levels = np.arange(count)
    log_pmf = -mean + levels * math.log(mean) - np.array(
        [math.lgamma(j + 1.0) for j in range(count)]
    )
    return np.exp(log_pmf)
