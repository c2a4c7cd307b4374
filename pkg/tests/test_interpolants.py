import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowscreen.interpolants import Interpolant, Kind, SingularityError, interpolate, target_velocity

KINDS = [Interpolant(Kind.LINEAR), Interpolant(Kind.VP), Interpolant(Kind.BROWNIAN_BRIDGE, 0.5),
         Interpolant(Kind.BROWNIAN_BRIDGE, 1.0)]


@pytest.mark.parametrize("ip", KINDS, ids=lambda ip: ip.label())
def test_endpoints(ip):
    rng = np.random.default_rng(0)
    x0, x1, eps = rng.standard_normal((3, 5, 2))
    np.testing.assert_array_equal(interpolate(ip, x0, x1, 0.0, eps), x0)
    np.testing.assert_array_equal(interpolate(ip, x0, x1, 1.0, eps), x1)


def test_hand_values():
    assert interpolate(Interpolant(), np.zeros(1), 2 * np.ones(1), 0.25)[0] == 0.5
    np.testing.assert_allclose(interpolate(Interpolant(Kind.VP), np.ones(1), np.ones(1), 0.5), math.sqrt(2))
    np.testing.assert_array_equal(target_velocity(Interpolant(), np.ones(3), 3 * np.ones(3), np.array([0.1, 0.5, 0.9])), 2.0)
    np.testing.assert_allclose(target_velocity(Interpolant(Kind.VP), np.zeros(1), np.ones(1), 0.0), math.pi / 2)
    bb = Interpolant(Kind.BROWNIAN_BRIDGE, 0.5)
    x0, x1, eps = np.array([1.0]), np.array([4.0]), np.array([123.0])
    assert target_velocity(bb, x0, x1, 0.5, eps)[0] == 3.0


def test_time_domain():
    with pytest.raises(ValueError):
        interpolate(Interpolant(), np.zeros(2), np.zeros(2), 1.5)
    with pytest.raises(ValueError):
        target_velocity(Interpolant(), np.zeros(2), np.zeros(2), -0.1)


@pytest.mark.parametrize("t", [0.0, 1.0])
def test_bridge_velocity_singular_at_ends(t):
    with pytest.raises(SingularityError):
        target_velocity(Interpolant(Kind.BROWNIAN_BRIDGE, 1.0), np.zeros(2), np.ones(2), t, np.ones(2))


def test_bridge_needs_positive_k():
    with pytest.raises(ValueError):
        Interpolant(Kind.BROWNIAN_BRIDGE, 0.0)


def test_bridge_time_sampling_avoids_ends():
    t = Interpolant(Kind.BROWNIAN_BRIDGE, 1.0).sample_t(10_000, np.random.default_rng(0))
    assert t.min() >= 1e-3 and t.max() <= 1 - 1e-3


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(KINDS), st.floats(0.01, 0.99), st.integers(0, 2**31))
def test_velocity_matches_central_difference(ip, t, seed):
    rng = np.random.default_rng(seed)
    x0, x1, eps = rng.standard_normal((3, 4))
    h = 1e-5
    num = (interpolate(ip, x0, x1, t + h, eps) - interpolate(ip, x0, x1, t - h, eps)) / (2 * h)
    ana = target_velocity(ip, x0, x1, t, eps)
    err = np.max(np.abs(num - ana) / (np.abs(ana) + 1e-8))
    assert err < 1e-5


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_per_sample_times_broadcast(seed):
    rng = np.random.default_rng(seed)
    x0, x1 = rng.standard_normal((2, 6, 2, 3))
    t = rng.uniform(size=6)
    out = interpolate(Interpolant(), x0, x1, t)
    for i in range(6):
        np.testing.assert_allclose(out[i], t[i] * x1[i] + (1 - t[i]) * x0[i])
