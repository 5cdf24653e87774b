import math

import numpy as np
import pytest

from sotif_sentinel.dynamics import (
    IU,
    IX,
    IY,
    VehicleParams,
    euler_step,
    integrate_step,
    jacobians,
    linearize_discretize,
    state_derivative,
)

P = VehicleParams()
DT = 0.033


def test_straight_coast_equilibrium():
    d = state_derivative([15, 0, 0, 0, 0, 0], [0, 0], P)
    assert d.tolist() == [0, 0, 0, 0, 15, 0]


def test_pure_heading():
    d = state_derivative([10, 0, 0, math.pi / 2, 0, 0], [0, 0], P)
    assert d[IX] == pytest.approx(0.0, abs=1e-12)
    assert d[IY] == pytest.approx(10.0)


def test_speed_floor():
    with pytest.raises(ValueError):
        state_derivative([0.5, 0, 0, 0, 0, 0], [0, 0], P)


def steady_state(u, delta):
    # linear 2x2 solve of vdot = rdot = 0 for the lateral subsystem
    m, Iz, lf, lr, Cf, Cr = P.m, P.I_z, P.l_f, P.l_r, P.C_af, P.C_ar
    A = np.array(
        [
            [-(Cf + Cr) / (m * u), (-Cf * lf + Cr * lr) / (m * u) - u],
            [(-lf * Cf + lr * Cr) / (Iz * u), -(lf * lf * Cf + lr * lr * Cr) / (Iz * u)],
        ]
    )
    b = -np.array([Cf / m, lf * Cf / Iz]) * delta
    return np.linalg.solve(A, b)


def test_steady_state_cornering():
    v, r = steady_state(15.0, 0.02)
    assert v == pytest.approx(-0.006958762886597938, rel=1e-12)
    assert r == pytest.approx(0.07731958762886598, rel=1e-12)
    d = state_derivative([15.0, v, r, 0, 0, 0], [0.0, 0.02], P)
    assert abs(d[1]) < 1e-9 and abs(d[2]) < 1e-9


def test_jacobians_vs_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(100):
        x = np.array([rng.uniform(3, 30), rng.uniform(-1, 1), rng.uniform(-0.5, 0.5), rng.uniform(-3, 3), 0, 0])
        u = np.array([rng.uniform(-5000, 3000), rng.uniform(-0.3, 0.3)])
        A, B = jacobians(x, u, P)
        for i in range(6):
            h = 1e-6 * max(1.0, abs(x[i]))
            e = np.zeros(6)
            e[i] = h
            fd = (state_derivative(x + e, u, P) - state_derivative(x - e, u, P)) / (2 * h)
            assert np.max(np.abs(fd - A[:, i])) <= 1e-5 * max(1.0, np.max(np.abs(A[:, i])))
        for j, h in enumerate((1.0, 1e-6)):
            e = np.zeros(2)
            e[j] = h
            fd = (state_derivative(x, u + e, P) - state_derivative(x, u - e, P)) / (2 * h)
            assert np.max(np.abs(fd - B[:, j])) <= 1e-5 * max(1.0, np.max(np.abs(B[:, j])))


def _rk4_error(dt):
    x0 = np.array([15.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    u = np.array([500.0, 0.05])
    ref = x0.copy()
    for _ in range(256):
        ref = integrate_step(ref, u, P, 0.4 / 256)
    x = x0.copy()
    for _ in range(int(round(0.4 / dt))):
        x = integrate_step(x, u, P, dt)
    return np.linalg.norm(x - ref)


def test_rk4_fourth_order():
    ratio = _rk4_error(0.04) / _rk4_error(0.02)
    assert 13.0 < ratio < 19.0


def test_heading_not_wrapped():
    x = np.array([10.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    for _ in range(1000):
        x_next = integrate_step(x, [0.0, 0.4], P, 0.01)
        assert np.linalg.norm(x_next[IX:] - x[IX:]) < 0.2
        x = x_next
    assert x[3] > 2 * math.pi


def test_discrete_model_entries():
    lm = linearize_discretize([15, 0, 0, 0, 0, 0], [0, 0], P, DT)
    assert lm.A_d[IX, IU] == pytest.approx(DT)
    assert lm.B_d[IU, 0] == pytest.approx(DT / P.m)
    assert lm.C_d[0, IY] == 1.0 and lm.C_d[1, IU] == 1.0
    # exact at the operating point
    assert np.allclose(lm.predict(lm.x0, lm.u0), euler_step(lm.x0, lm.u0, P, DT))


def test_linearization_remainder_second_order():
    x0 = np.array([15.0, 0.1, 0.05, 0.1, 0.0, 0.0])
    u0 = np.array([300.0, 0.02])
    lm = linearize_discretize(x0, u0, P, DT)
    rng = np.random.default_rng(4)
    dx = rng.normal(size=6) * np.array([1.0, 0.2, 0.1, 0.1, 1.0, 1.0])
    du = rng.normal(size=2) * np.array([500.0, 0.05])
    errs = []
    for s in (1.0, 0.5, 0.25):
        exact = euler_step(x0 + s * dx, u0 + s * du, P, DT)
        errs.append(np.linalg.norm(exact - lm.predict(x0 + s * dx, u0 + s * du)))
    for a, b in zip(errs, errs[1:]):
        assert a / b == pytest.approx(4.0, rel=0.15)
