from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ftcoherent.flow import (
    FlowSpec,
    FrameTransform,
    IntegrationError,
    flow_map,
    inverse_transform_point,
    streamfunction,
    transform_point,
    transformed_flow,
    velocity,
)

from oracles import fd_gradient, fd_jacobian_det

SPEC = FlowSpec()


def _psi(spec):
    return lambda x, y, t: streamfunction(spec, np.stack([x, y], axis=-1), t)


def test_derived_frequencies():
    s2 = SPEC.k2 * (SPEC.c2 - SPEC.c3)
    assert SPEC.s2 == pytest.approx(s2, abs=1e-15)
    assert SPEC.s1 == pytest.approx(s2 * (1 + math.sqrt(5)) / 2, abs=1e-15)


def test_inconsistent_frequency_rejected():
    with pytest.raises(ValueError):
        FlowSpec(s2=SPEC.s2 + 1e-9)
    FlowSpec(s2=SPEC.s2, s1=SPEC.s1)


@pytest.mark.parametrize("kw", [dict(h=0.0), dict(h=-1.0), dict(t0=20.0, t1=10.0), dict(a3_wavenumber="k2")])
def test_invalid_spec(kw):
    with pytest.raises(ValueError):
        FlowSpec(**kw)


def test_velocity_on_axis():
    x = np.linspace(0, 20, 11)
    for t in (0.0, 3.3, 17.0):
        v = velocity(SPEC, np.stack([x, np.zeros_like(x)], axis=1), t)
        np.testing.assert_allclose(v[:, 0], 5.41 * (1 - 0.7), atol=1e-12)
    assert velocity(SPEC, (0.0, 0.0), 0.0)[1] == 0.0


def test_velocity_matches_fd_at_reference_point():
    vx, vy = velocity(SPEC, (3.7, 1.2), 12.5)
    gx, gy = fd_gradient(_psi(SPEC), 3.7, 1.2, 12.5)
    assert vx == pytest.approx(-gy, rel=1e-6)
    assert vy == pytest.approx(gx, rel=1e-6)


@pytest.mark.parametrize("a3", ["k1", "k3"])
def test_velocity_matches_fd_random(a3):
    spec = FlowSpec(a3_wavenumber=a3)
    rng = np.random.default_rng(1)
    n = 10_000
    x = rng.uniform(0, 20, n)
    y = rng.uniform(-3, 3, n)
    t = rng.uniform(0, 30, n)
    v = velocity(spec, np.stack([x, y], axis=1), t)
    gx, gy = fd_gradient(_psi(spec), x, y, t)
    scale = np.maximum(np.abs(v), 1.0)
    assert np.max(np.abs(v[:, 0] + gy) / scale[:, 0]) < 1e-6
    assert np.max(np.abs(v[:, 1] - gx) / scale[:, 1]) < 1e-6


def test_zero_duration_is_identity():
    p = np.array([[1.5, 0.3], [19.9, -2.0]])
    np.testing.assert_array_equal(flow_map(SPEC, p, 12.0, 12.0), p)


def test_reversed_interval_rejected():
    with pytest.raises(ValueError):
        flow_map(SPEC, (1.0, 0.0), 12.0, 11.0)


def test_periodic_wrap_and_unbounded_y():
    rng = np.random.default_rng(2)
    p = np.stack([rng.uniform(0, 20, 200), rng.uniform(-2.5, 2.5, 200)], axis=1)
    out = flow_map(SPEC, p)
    assert np.all((out[:, 0] >= 0) & (out[:, 0] < SPEC.x_period))
    open_ = flow_map(SPEC.with_(periodic_x=False), p)
    np.testing.assert_allclose(np.mod(open_[:, 0], SPEC.x_period), out[:, 0], atol=1e-9)
    np.testing.assert_allclose(open_[:, 1], out[:, 1], atol=1e-9)


def test_fast_and_exact_kernels_agree():
    rng = np.random.default_rng(3)
    p = np.stack([rng.uniform(0, 20, 500), rng.uniform(-3, 3, 500)], axis=1)
    for a3 in ("k1", "k3"):
        spec = FlowSpec(a3_wavenumber=a3)
        a = flow_map(spec, p, kernel="fast")
        b = flow_map(spec, p, kernel="exact")
        np.testing.assert_allclose(a, b, atol=1e-10)


def test_single_step_matches_scalar_rk4():
    spec = FlowSpec(h=0.05)
    p0 = np.array([4.2, -0.7])
    t, h = spec.t0, 0.05

    def f(z, s):
        return velocity(spec, z, s)

    k1 = f(p0, t)
    k2 = f(p0 + h / 2 * k1, t + h / 2)
    k3 = f(p0 + h / 2 * k2, t + h / 2)
    k4 = f(p0 + h * k3, t + h)
    ref = p0 + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    got = flow_map(spec.with_(periodic_x=False), p0, t, t + h)
    np.testing.assert_allclose(got, ref, atol=1e-13)


def test_volume_preservation():
    rng = np.random.default_rng(4)
    p = np.stack([rng.uniform(0, 20, 100), rng.uniform(-2.5, 2.5, 100)], axis=1)
    spec = SPEC.with_(periodic_x=False, h=0.01)
    det = fd_jacobian_det(lambda q: flow_map(spec, q), p)
    assert np.max(np.abs(det - 1)) <= 1e-4


def convergence_order(spec, p, hs):
    ref = flow_map(spec.with_(h=hs[-1] / 4, periodic_x=False), p, kernel="exact")
    errs = [np.max(np.abs(flow_map(spec.with_(h=h, periodic_x=False), p, kernel="exact") - ref)) for h in hs]
    return np.log2(np.array(errs[:-1]) / np.array(errs[1:])), errs


def test_rk4_order():
    rng = np.random.default_rng(5)
    p = np.stack([rng.uniform(0, 20, 20), rng.uniform(-2.5, 2.5, 20)], axis=1)
    orders, _ = convergence_order(SPEC, p, [0.2, 0.1, 0.05, 0.025])
    assert np.min(orders) >= 3.8


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_integration_failure_names_point():
    spec = FlowSpec(c3=1e308, h=0.5)
    with pytest.raises(IntegrationError) as info:
        flow_map(spec, np.array([[0.0, 0.1], [1.0, 0.2]]), kernel="exact")
    assert info.value.index in (0, 1)
    assert len(info.value.point) == 2


def test_identity_transform_bitwise():
    rng = np.random.default_rng(6)
    p = np.stack([rng.uniform(0, 20, 50), rng.uniform(-2.5, 2.5, 50)], axis=1)
    np.testing.assert_array_equal(transformed_flow(SPEC, FrameTransform())(p), flow_map(SPEC, p))


def test_translation_unrolled():
    ft = FrameTransform(b0=(1.25, -0.5), b1=(-3.0, 2.0))
    p = np.array([[5.0, 0.2], [12.0, -1.0]])
    want = flow_map(SPEC, p - np.array([1.25, -0.5])) + np.array([-3.0, 2.0])
    np.testing.assert_allclose(transformed_flow(SPEC, ft)(p), want, atol=1e-14)


def test_rotation_round_trip():
    ft = FrameTransform(theta0=math.pi / 2, theta1=math.pi / 2, b0=(0.3, 0.1), b1=(0.0, 0.0))
    rng = np.random.default_rng(7)
    p = rng.uniform(-1, 1, size=(1000, 2))
    for which in ("t0", "t1"):
        back = inverse_transform_point(ft, transform_point(ft, p, which), which)
        np.testing.assert_allclose(back, p, rtol=0, atol=1e-14)
    q = ft.rotation("t0")
    np.testing.assert_allclose(q.T @ q, np.eye(2), atol=1e-12)
    assert np.linalg.det(q) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(th=st.floats(-10, 10), bx=st.floats(-50, 50), by=st.floats(-50, 50),
       x=st.floats(-100, 100), y=st.floats(-100, 100))
def test_transform_inverse_property(th, bx, by, x, y):
    ft = FrameTransform(theta0=th, theta1=-th, b0=(bx, by), b1=(by, bx))
    for which in ("t0", "t1"):
        z = transform_point(ft, np.array([x, y]), which)
        np.testing.assert_allclose(inverse_transform_point(ft, z, which), [x, y], atol=1e-11)
        # rigid motion keeps distances
        z0 = transform_point(ft, np.array([0.0, 0.0]), which)
        assert np.linalg.norm(z - z0) == pytest.approx(math.hypot(x, y), abs=1e-10)
