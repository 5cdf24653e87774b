"""Receding-horizon planner over the potential field.

The optimal control problem tracks lane center and cruise speed, pays the
potential field along the predicted path, and penalizes input effort and input
rate, subject to input box bounds, rate bounds, and a held tail beyond the
control horizon. It is solved by a short sequential-QP loop: roll out, linearize,
quadraticize the field with a convexified diagonal curvature, solve the QP over
the control moves, step.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import quadprog

from .dynamics import IPHI, IR, IU, IV, IX, IY, NU, NX, U_FLOOR, VehicleParams, VehicleState
from .entropy import EntropyReport
from .field import FieldParams, PerceivedObjectState, RoadModel, characteristic_lengths, field_value_grad_hess

CURVATURE_FLOOR = 1e-6


class Policy(str, enum.Enum):
    BASELINE = "mpc-yolo"
    PUADM = "puadm"

    @classmethod
    def parse(cls, value: "str | Policy") -> "Policy":
        if isinstance(value, Policy):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for p in cls:
            if key in (p.value, p.name.lower()):
                return p
        raise ValueError(f"unknown policy {value!r}")


@dataclass(frozen=True)
class PlannerConfig:
    N_p: int = 30
    N_c: int = 10
    dt: float = 0.033
    Q: tuple[float, float] = (2.0, 0.5)  # (Y, u)
    R: tuple[float, float] = (1e-7, 500.0)  # (F_xT, delta_f)
    S: tuple[float, float] = (1e-6, 5000.0)
    u_min: tuple[float, float] = (-7000.0, -0.4)
    u_max: tuple[float, float] = (4000.0, 0.4)
    du_min: tuple[float, float] = (-2000.0, -0.02)
    du_max: tuple[float, float] = (2000.0, 0.02)
    max_iter: int = 3
    tol: float = 1e-4
    max_backtracks: int = 4

    def __post_init__(self):
        if not (1 <= self.N_c <= self.N_p):
            raise ValueError("need 1 <= N_c <= N_p")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if min(self.Q) < 0 or min(self.R) < 0 or min(self.S) < 0:
            raise ValueError("weights must be positive semidefinite")
        if min(r + s for r, s in zip(self.R, self.S)) <= 0:
            raise ValueError("R + S must be positive definite")
        for lo, hi in (zip(self.u_min, self.u_max)):
            if lo > hi:
                raise ValueError("input bounds out of order")
        for lo, hi in (zip(self.du_min, self.du_max)):
            if lo > 0 or hi < 0:
                raise ValueError("rate bounds must bracket zero")

    @property
    def input_scale(self) -> np.ndarray:
        return np.maximum(np.abs(self.u_min), np.abs(self.u_max))


@dataclass(frozen=True)
class Reference:
    Y_ref: float = 0.0
    u_ref: float = 15.0


@dataclass
class PlanResult:
    controls: np.ndarray  # (N_c, 2)
    states: np.ndarray  # (N_p, 6), x(t+1) .. x(t+N_p)
    outputs: np.ndarray  # (N_p, 2), [Y, u]
    cost: float
    breakdown: dict
    solve_ms: float
    iterations: int
    converged: bool
    cost_history: list = field(default_factory=list)

    @property
    def first_input(self) -> np.ndarray:
        return self.controls[0].copy()

    def full_inputs(self, N_p: int) -> np.ndarray:
        return expand_controls(self.controls, N_p)


def effective_object_state(
    report: EntropyReport,
    pose: tuple[float, float, float],
    policy: Policy,
    object_id: int = 0,
) -> PerceivedObjectState:
    """Object handed to the planner. The baseline only sees the category; the
    uncertainty-aware policy also receives the entropy level."""
    level = report.level if Policy.parse(policy) is Policy.PUADM else 0
    x, y, heading = pose
    return PerceivedObjectState(object_id, report.winning_label, x, y, heading, level)


def effective_lengths(obj: PerceivedObjectState, params: FieldParams) -> tuple[float, float]:
    return characteristic_lengths(obj.category, obj.level, params)


def shift_warm_start(prev: "PlanResult | np.ndarray | None", N_c: int | None = None) -> np.ndarray:
    """Drop the first move and repeat the last. With no previous plan the cold
    start is all zeros (``N_c`` required)."""
    if prev is None:
        if N_c is None:
            raise ValueError("N_c is required for a cold start")
        return np.zeros((N_c, NU))
    seq = prev.controls if isinstance(prev, PlanResult) else np.asarray(prev, dtype=float)
    seq = np.asarray(seq, dtype=float)
    if len(seq) <= 1:
        return seq.copy()
    return np.vstack([seq[1:], seq[-1:]])


def expand_controls(U: np.ndarray, N_p: int) -> np.ndarray:
    N_c = len(U)
    idx = np.minimum(np.arange(N_p), N_c - 1)
    return U[idx]


def project_feasible(U: np.ndarray, u_prev, cfg: PlannerConfig) -> np.ndarray:
    """Sequential clip onto the box and rate bounds. Exact when ``u_prev`` is
    inside the box."""
    U = np.array(U, dtype=float, copy=True)
    lo_b, hi_b = np.asarray(cfg.u_min), np.asarray(cfg.u_max)
    lo_r, hi_r = np.asarray(cfg.du_min), np.asarray(cfg.du_max)
    prev = np.asarray(u_prev, dtype=float)
    for j in range(len(U)):
        lo = np.maximum(lo_b, prev + lo_r)
        hi = np.minimum(hi_b, prev + hi_r)
        U[j] = np.minimum(np.maximum(U[j], lo), hi)
        prev = U[j]
    return U


class MPCPlanner:
    """Single-threaded SQP planner. One instance per simulation loop."""

    def __init__(
        self,
        cfg: PlannerConfig,
        vehicle: VehicleParams,
        field_params: FieldParams,
        road: RoadModel | None,
    ):
        self.cfg = cfg
        self.vehicle = vehicle
        self.field_params = field_params
        self.road = road
        N_c = cfg.N_c
        n = N_c * NU
        # first-difference operator on the stacked control moves
        D = np.eye(n)
        D[NU:, :-NU] -= np.eye(n - NU)
        self._D = D
        self._Rbig = np.diag(np.tile(cfg.R, N_c))
        self._Sbig = np.diag(np.tile(cfg.S, N_c))
        self._scale = np.tile(cfg.input_scale, N_c)
        # selector: step k uses move min(k, N_c-1)
        self._move_of_step = np.minimum(np.arange(cfg.N_p), N_c - 1)
        C = np.vstack([np.eye(n), -np.eye(n), D, -D])
        self._C_scaled = (C * self._scale[None, :]).T.copy()

    # -- evaluation ---------------------------------------------------------

    def rollout(self, x0, U: np.ndarray) -> np.ndarray:
        """Forward-Euler rollout; returns states x(t+1) .. x(t+N_p)."""
        p, dt = self.vehicle, self.cfg.dt
        m, Iz, lf, lr, Cf, Cr = p.m, p.I_z, p.l_f, p.l_r, p.C_af, p.C_ar
        u, v, r, phi, X, Y = (float(s) for s in x0)
        out = np.empty((self.cfg.N_p, NX))
        for k, j in enumerate(self._move_of_step):
            F, delta = U[j, 0], U[j, 1]
            if u <= U_FLOOR:
                raise ValueError(f"rollout speed {u} m/s below model floor")
            Fyf = Cf * (delta - (v + lf * r) / u)
            Fyr = -Cr * (v - lr * r) / u
            c, s = math.cos(phi), math.sin(phi)
            du = F / m + v * r
            dv = (Fyf + Fyr) / m - u * r
            dr = (Fyf * lf - Fyr * lr) / Iz
            dX = u * c - v * s
            dY = u * s + v * c
            u, v, r, phi, X, Y = u + dt * du, v + dt * dv, r + dt * dr, phi + dt * r, X + dt * dX, Y + dt * dY
            out[k] = (u, v, r, phi, X, Y)
        return out

    def cost(self, states, U, u_prev, objects, ref: Reference) -> tuple[float, dict]:
        cfg = self.cfg
        eY = states[:, IY] - ref.Y_ref
        eu = states[:, IU] - ref.u_ref
        tracking = float(cfg.Q[0] * eY @ eY + cfg.Q[1] * eu @ eu)
        pf = 0.0
        for X, Y in states[:, (IX, IY)]:
            pf += field_value_grad_hess(X, Y, objects, self.road, self.field_params)[0]
        flat = U.ravel()
        effort = float(flat @ self._Rbig @ flat)
        dU = np.diff(np.vstack([np.asarray(u_prev, float)[None, :], U]), axis=0).ravel()
        rate = float(dU @ self._Sbig @ dU)
        total = tracking + pf + effort + rate
        return total, {"tracking": tracking, "field": pf, "effort": effort, "rate": rate}

    def _sensitivities(self, x0, states, U) -> np.ndarray:
        """d x(t+k) / dU for k=1..N_p, shape (N_p, NX, N_c*NU)."""
        cfg, p = self.cfg, self.vehicle
        dt = cfg.dt
        n = cfg.N_c * NU
        sens = np.empty((cfg.N_p, NX, n))
        M = np.zeros((NX, n))
        m, Iz, lf, lr, Cf, Cr = p.m, p.I_z, p.l_f, p.l_r, p.C_af, p.C_ar
        prev = np.asarray(x0, dtype=float)
        for k, j in enumerate(self._move_of_step):
            u, v, r, phi = prev[IU], prev[IV], prev[IR], prev[IPHI]
            u2 = u * u
            dFf_du = Cf * (v + lf * r) / u2
            dFr_du = Cr * (v - lr * r) / u2
            c, s = math.cos(phi), math.sin(phi)
            A = np.eye(NX)
            A[IU, IV] += dt * r
            A[IU, IR] += dt * v
            A[IV, IU] += dt * ((dFf_du + dFr_du) / m - r)
            A[IV, IV] += dt * (-(Cf + Cr) / (u * m))
            A[IV, IR] += dt * ((-Cf * lf + Cr * lr) / (u * m) - u)
            A[IR, IU] += dt * (lf * dFf_du - lr * dFr_du) / Iz
            A[IR, IV] += dt * (-lf * Cf + lr * Cr) / (u * Iz)
            A[IR, IR] += dt * (-(lf * lf * Cf + lr * lr * Cr)) / (u * Iz)
            A[IPHI, IR] += dt
            A[IX, IU] += dt * c
            A[IX, IV] += -dt * s
            A[IX, IPHI] += dt * (-u * s - v * c)
            A[IY, IU] += dt * s
            A[IY, IV] += dt * c
            A[IY, IPHI] += dt * (u * c - v * s)
            M = A @ M
            col = j * NU
            M[IU, col] += dt / m
            M[IV, col + 1] += dt * Cf / m
            M[IR, col + 1] += dt * lf * Cf / Iz
            sens[k] = M
            prev = states[k]
        return sens

    def _qp(self, x0, states, U, u_prev, objects, ref: Reference):
        cfg = self.cfg
        sens = self._sensitivities(x0, states, U)
        n = cfg.N_c * NU
        H = np.zeros((n, n))
        g = np.zeros(n)
        qY, qu = cfg.Q
        for k in range(cfg.N_p):
            X, Y, u = states[k, IX], states[k, IY], states[k, IU]
            _, gX, gY, hXX, hYY = field_value_grad_hess(X, Y, objects, self.road, self.field_params)
            Mk = sens[k]
            mY, mU, mX = Mk[IY], Mk[IU], Mk[IX]
            g += (2.0 * qY * (Y - ref.Y_ref) + gY) * mY + 2.0 * qu * (u - ref.u_ref) * mU + gX * mX
            H += (
                (2.0 * qY + max(hYY, CURVATURE_FLOOR)) * np.outer(mY, mY)
                + 2.0 * qu * np.outer(mU, mU)
                + max(hXX, CURVATURE_FLOOR) * np.outer(mX, mX)
            )
        flat = U.ravel()
        e = np.zeros(n)
        e[:NU] = u_prev
        D = self._D
        H += 2.0 * self._Rbig + 2.0 * D.T @ self._Sbig @ D
        g += 2.0 * self._Rbig @ flat + 2.0 * D.T @ self._Sbig @ (D @ flat - e)
        return H, g

    def _solve_qp(self, H, g, U, u_prev) -> np.ndarray:
        cfg = self.cfg
        n = cfg.N_c * NU
        sc = self._scale
        Hs = H * np.outer(sc, sc)
        Hs = 0.5 * (Hs + Hs.T)
        gs = g * sc
        flat = U.ravel()
        lo = np.tile(cfg.u_min, cfg.N_c) - flat
        hi = np.tile(cfg.u_max, cfg.N_c) - flat
        e = np.zeros(n)
        e[:NU] = u_prev
        DU = self._D @ flat - e
        rlo = np.tile(cfg.du_min, cfg.N_c) - DU
        rhi = np.tile(cfg.du_max, cfg.N_c) - DU
        # C^T z >= b; clamp so a marginally infeasible incumbent stays solvable
        b = np.concatenate([np.minimum(lo, 0.0), -np.maximum(hi, 0.0), np.minimum(rlo, 0.0), -np.maximum(rhi, 0.0)])
        z = quadprog.solve_qp(Hs, -gs, self._C_scaled, b, 0)[0]
        return (z * sc).reshape(cfg.N_c, NU)

    def _sqp(self, x0, U, u_prev, objects, ref: Reference):
        cfg = self.cfg
        states = self.rollout(x0, U)
        J, parts = self.cost(states, U, u_prev, objects, ref)
        history = [J]
        converged = False
        iterations = 0
        for _ in range(cfg.max_iter):
            iterations += 1
            H, g = self._qp(x0, states, U, u_prev, objects, ref)
            step = self._solve_qp(H, g, U, u_prev)
            accepted = False
            alpha = 1.0
            for _ in range(cfg.max_backtracks + 1):
                U_try = project_feasible(U + alpha * step, u_prev, cfg)
                states_try = self.rollout(x0, U_try)
                J_try, parts_try = self.cost(states_try, U_try, u_prev, objects, ref)
                if J_try <= J:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                break
            change = float(np.max(np.abs((U_try - U).ravel() / self._scale)))
            U, states, J, parts = U_try, states_try, J_try, parts_try
            history.append(J)
            if change < cfg.tol:
                converged = True
                break
        return U, states, J, parts, iterations, converged, history

    def solve(
        self,
        current: VehicleState | np.ndarray,
        objects: Sequence[PerceivedObjectState],
        ref: Reference,
        u_prev=None,
        warm_start: np.ndarray | None = None,
    ) -> PlanResult:
        """Plan from ``current``. ``u_prev`` is the input applied on the previous
        step (rate bounds are measured from it); ``warm_start`` an initial
        control sequence, usually :func:`shift_warm_start` of the last plan."""
        t0 = time.perf_counter()
        cfg = self.cfg
        x0 = current.as_array() if isinstance(current, VehicleState) else np.asarray(current, dtype=float)
        u_prev = np.zeros(NU) if u_prev is None else np.asarray(u_prev, dtype=float)
        U = shift_warm_start(None, cfg.N_c) if warm_start is None else np.asarray(warm_start, dtype=float)
        if U.shape != (cfg.N_c, NU):
            raise ValueError(f"warm start shape {U.shape}, expected {(cfg.N_c, NU)}")
        U = project_feasible(U, u_prev, cfg)
        objects = list(objects)

        U, states, J, parts, iterations, converged, history = self._sqp(x0, U, u_prev, objects, ref)
        if objects and parts["field"] > 0.0 and not np.any(U[:, 1]):
            # exactly symmetric about an object: a saddle for the local step.
            # Retry once from a steering ramp toward the side with more road.
            side = 1.0
            if self.road is not None and self.road.Y_left - x0[IY] < x0[IY] - self.road.Y_right:
                side = -1.0
            nudged = U.copy()
            nudged[:, 1] = side * cfg.u_max[1]
            alt = self._sqp(x0, project_feasible(nudged, u_prev, cfg), u_prev, objects, ref)
            if alt[2] < J:
                U, states, J, parts, it2, converged, h2 = alt
                iterations += it2
                history = h2

        return PlanResult(
            controls=U,
            states=states,
            outputs=states[:, (IY, IU)].copy(),
            cost=J,
            breakdown=parts,
            solve_ms=(time.perf_counter() - t0) * 1e3,
            iterations=iterations,
            converged=converged,
            cost_history=history,
        )
