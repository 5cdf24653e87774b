"""3-DOF single-track vehicle model with linear tires.

State ``x = [u, v, r, phi, X, Y]`` and input ``[F_xT, delta_f]``. The plant is
propagated with RK4; the planner uses a forward-Euler linearization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

U_FLOOR = 1.0  # m/s, slip angles are singular at u=0

STATE_NAMES = ("u", "v", "r", "phi", "X", "Y")
INPUT_NAMES = ("F_xT", "delta_f")
NX, NU = 6, 2
IU, IV, IR, IPHI, IX, IY = range(6)


@dataclass(frozen=True)
class VehicleParams:
    m: float = 1860.0
    I_z: float = 3438.5
    l_f: float = 1.18
    l_r: float = 1.77
    C_af: float = 90000.0
    C_ar: float = 90000.0

    def __post_init__(self):
        if min(self.m, self.I_z, self.l_f, self.l_r, self.C_af, self.C_ar) <= 0:
            raise ValueError("vehicle parameters must be positive")


@dataclass(frozen=True)
class VehicleState:
    u: float
    v: float = 0.0
    r: float = 0.0
    phi: float = 0.0
    X: float = 0.0
    Y: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v, self.r, self.phi, self.X, self.Y], dtype=float)

    @classmethod
    def from_array(cls, x) -> "VehicleState":
        return cls(*(float(v) for v in x))


@dataclass(frozen=True)
class ControlInput:
    F_xT: float = 0.0
    delta_f: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.F_xT, self.delta_f], dtype=float)


@dataclass(frozen=True)
class DiscreteLinearModel:
    """``x+ = A_d x + B_d u + c_d`` about the operating point; ``y = C_d x``."""

    A_d: np.ndarray
    B_d: np.ndarray
    C_d: np.ndarray
    c_d: np.ndarray
    x0: np.ndarray
    u0: np.ndarray
    dt: float

    def predict(self, x, u) -> np.ndarray:
        return self.A_d @ np.asarray(x, float) + self.B_d @ np.asarray(u, float) + self.c_d


OUTPUT_SELECTOR = np.zeros((2, NX))
OUTPUT_SELECTOR[0, IY] = 1.0
OUTPUT_SELECTOR[1, IU] = 1.0


def _check_speed(u: float) -> None:
    if not u > U_FLOOR:
        raise ValueError(f"longitudinal speed {u} m/s at or below model floor {U_FLOOR}")


def tire_forces(x, inp, p: VehicleParams) -> tuple[float, float]:
    u, v, r = x[IU], x[IV], x[IR]
    alpha_f = inp[1] - (v + p.l_f * r) / u
    alpha_r = -(v - p.l_r * r) / u
    return p.C_af * alpha_f, p.C_ar * alpha_r


def state_derivative(x, inp, p: VehicleParams) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    inp = np.asarray(inp, dtype=float)
    u, v, r, phi = x[IU], x[IV], x[IR], x[IPHI]
    _check_speed(u)
    F_yf, F_yr = tire_forces(x, inp, p)
    c, s = math.cos(phi), math.sin(phi)
    return np.array(
        [
            inp[0] / p.m + v * r,
            (F_yf + F_yr) / p.m - u * r,
            (F_yf * p.l_f - F_yr * p.l_r) / p.I_z,
            r,
            u * c - v * s,
            u * s + v * c,
        ]
    )


def integrate_step(x, inp, p: VehicleParams, dt: float) -> np.ndarray:
    """One classical RK4 step. Heading is left unwrapped."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    k1 = state_derivative(x, inp, p)
    k2 = state_derivative(x + 0.5 * dt * k1, inp, p)
    k3 = state_derivative(x + 0.5 * dt * k2, inp, p)
    k4 = state_derivative(x + dt * k3, inp, p)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def jacobians(x, inp, p: VehicleParams) -> tuple[np.ndarray, np.ndarray]:
    """Continuous-time ``df/dx`` and ``df/du``."""
    u, v, r, phi = float(x[IU]), float(x[IV]), float(x[IR]), float(x[IPHI])
    _check_speed(u)
    m, Iz, lf, lr, Cf, Cr = p.m, p.I_z, p.l_f, p.l_r, p.C_af, p.C_ar
    u2 = u * u
    # partials of the lateral tire forces
    dFf_du = Cf * (v + lf * r) / u2
    dFf_dv = -Cf / u
    dFf_dr = -Cf * lf / u
    dFr_du = Cr * (v - lr * r) / u2
    dFr_dv = -Cr / u
    dFr_dr = Cr * lr / u
    c, s = math.cos(phi), math.sin(phi)

    A = np.zeros((NX, NX))
    A[IU, IV] = r
    A[IU, IR] = v
    A[IV, IU] = (dFf_du + dFr_du) / m - r
    A[IV, IV] = (dFf_dv + dFr_dv) / m
    A[IV, IR] = (dFf_dr + dFr_dr) / m - u
    A[IR, IU] = (lf * dFf_du - lr * dFr_du) / Iz
    A[IR, IV] = (lf * dFf_dv - lr * dFr_dv) / Iz
    A[IR, IR] = (lf * dFf_dr - lr * dFr_dr) / Iz
    A[IPHI, IR] = 1.0
    A[IX, IU] = c
    A[IX, IV] = -s
    A[IX, IPHI] = -u * s - v * c
    A[IY, IU] = s
    A[IY, IV] = c
    A[IY, IPHI] = u * c - v * s

    B = np.zeros((NX, NU))
    B[IU, 0] = 1.0 / m
    B[IV, 1] = Cf / m
    B[IR, 1] = lf * Cf / Iz
    return A, B


def euler_step(x, inp, p: VehicleParams, dt: float) -> np.ndarray:
    """Forward-Euler step; the exact map the planner's linear model describes."""
    x = np.asarray(x, dtype=float)
    return x + dt * state_derivative(x, inp, p)


def linearize_discretize(x, inp, p: VehicleParams, dt: float) -> DiscreteLinearModel:
    x = np.asarray(x, dtype=float)
    inp = np.asarray(inp, dtype=float)
    A, B = jacobians(x, inp, p)
    A_d = np.eye(NX) + dt * A
    B_d = dt * B
    # affine remainder keeps the model exact at the operating point
    c_d = euler_step(x, inp, p, dt) - A_d @ x - B_d @ inp
    return DiscreteLinearModel(A_d, B_d, OUTPUT_SELECTOR.copy(), c_d, x.copy(), inp.copy(), dt)
