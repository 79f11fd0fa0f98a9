import math

import mpmath as mp
import numpy as np
import pytest

from ekick.kinematics import (
    Channel,
    ChannelKind,
    NONRELATIVISTIC,
    relativistic,
    energy,
    group_velocity,
    scattered_wavevector,
    threshold_wavevector,
)

mp.mp.dps = 40


def test_nonrelativistic_energy_and_velocity():
    assert energy(NONRELATIVISTIC, 2.0) == 2.0
    assert group_velocity(NONRELATIVISTIC, 2.0) == 2.0
    assert energy(NONRELATIVISTIC, 0.0) == 0.0


def test_scattered_wavevector_open():
    ch = scattered_wavevector(NONRELATIVISTIC, 2.0, 1.5)
    assert ch.kind is ChannelKind.OPEN
    assert ch.is_open
    assert ch.wavevector == pytest.approx(1.0, abs=1e-15)


def test_scattered_wavevector_closed():
    ch = scattered_wavevector(NONRELATIVISTIC, 1.0, 1.0)
    assert ch.kind is ChannelKind.CLOSED
    assert not ch.is_open
    # Evanescent decay constant sqrt(2*dw - q^2).
    assert ch.wavevector == pytest.approx(1.0, abs=1e-15)


def test_scattered_wavevector_at_threshold():
    ch = scattered_wavevector(NONRELATIVISTIC, 2.0, 2.0)
    assert ch.kind is ChannelKind.AT_THRESHOLD
    assert ch.wavevector == 0.0


def test_energy_gain_channel_always_open():
    ch = scattered_wavevector(NONRELATIVISTIC, 1.0, -1.5)
    assert ch.is_open
    assert ch.wavevector == pytest.approx(2.0, abs=1e-15)


def test_threshold_wavevector_nonrelativistic():
    assert threshold_wavevector(NONRELATIVISTIC, 2.0) == 2.0
    assert energy(NONRELATIVISTIC, threshold_wavevector(NONRELATIVISTIC, 0.73)) == (
        pytest.approx(0.73, rel=1e-15)
    )


def _mp_rel_energy(c, q):
    c, q = mp.mpf(c), mp.mpf(q)
    return c * mp.sqrt(c * c + q * q) - c * c


@pytest.mark.parametrize("q", [1e-6, 0.5, 50.0, 137.0, 5000.0])
def test_relativistic_energy_against_high_precision(q):
    model = relativistic(137.035999084)
    ref = float(_mp_rel_energy(model.light_speed, q))
    assert energy(model, q) == pytest.approx(ref, rel=1e-14)


@pytest.mark.parametrize("q", [1e-3, 1.0, 80.0, 400.0])
def test_relativistic_velocity_against_high_precision(q):
    model = relativistic(137.035999084)
    c = mp.mpf(model.light_speed)
    ref = float(c * q / mp.sqrt(c * c + mp.mpf(q) ** 2))
    assert group_velocity(model, q) == pytest.approx(ref, rel=1e-14)
    assert group_velocity(model, q) < model.light_speed


def test_relativistic_threshold_roundtrip():
    model = relativistic(137.035999084)
    for excitation in (1e-4, 1.0, 1e3):
        q_min = threshold_wavevector(model, excitation)
        assert energy(model, q_min) == pytest.approx(excitation, rel=1e-13)


@pytest.mark.parametrize("model", [NONRELATIVISTIC, relativistic(137.035999084)])
def test_energy_conservation_property(model):
    # Open-channel arithmetic must conserve energy to near roundoff for
    # a broad grid of kinematics, including barely-open channels.
    for q in np.geomspace(0.05, 200.0, 17):
        for frac in (1e-6, 0.1, 0.5, 0.999):
            dw = frac * energy(model, q)
            ch = scattered_wavevector(model, float(q), dw)
            assert ch.is_open
            total = energy(model, ch.wavevector) + dw
            assert total == pytest.approx(energy(model, q), rel=1e-12)


def test_relativistic_reduces_to_nonrelativistic():
    # At fixed q the deviation between the variants scales as (q/c)^2.
    q = 1.3
    for c in (1e2, 1e3, 1e4):
        model = relativistic(c)
        rel_dev = abs(energy(model, q) / energy(NONRELATIVISTIC, q) - 1.0)
        assert rel_dev < (q / c) ** 2


def test_invalid_inputs_rejected():
    with pytest.raises(ValueError):
        scattered_wavevector(NONRELATIVISTIC, 0.0, 0.5)
    with pytest.raises(ValueError):
        scattered_wavevector(NONRELATIVISTIC, -1.0, 0.5)
    with pytest.raises(ValueError):
        threshold_wavevector(NONRELATIVISTIC, -0.1)
    with pytest.raises(ValueError):
        relativistic(0.0)


def test_channel_kind_is_explicit():
    ch = Channel(ChannelKind.CLOSED, 0.7)
    assert not ch.is_open
