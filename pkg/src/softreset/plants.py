"""Passive plants: TORA, planar two-link manipulator, gradient-flow optimizer.

Every PlantSpec built here has its equilibrium at the origin of its own
state coordinates; ``plant.meta["offset"]`` converts back to physical
coordinates (physical = state + offset).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .di_core import ConfigurationError, PlantSpec

# ---------------------------------------------------------------- TORA


@dataclass(frozen=True)
class ToraParams:
    sigma: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.sigma < 1.0:
            raise ValueError("TORA coupling sigma must lie in (0, 1)")


def tora_inertia(p: ToraParams, theta: float) -> np.ndarray:
    sc = p.sigma * math.cos(theta)
    return np.array([[1.0, sc], [sc, 1.0]])


def tora_dynamics(p: ToraParams, state, w) -> np.ndarray:
    """State (theta, dtheta, x, dx) under the preliminary feedback u = -theta + w."""
    th, dth, x, dx = (float(v) for v in state)
    u = -th + float(np.asarray(w).reshape(-1)[0])
    sc = p.sigma * math.cos(th)
    r2 = -x + p.sigma * dth * dth * math.sin(th)
    det = 1.0 - sc * sc
    return np.array([dth, (u - sc * r2) / det, dx, (r2 - sc * u) / det])


def tora_storage(p: ToraParams, state) -> float:
    th, dth, x, dx = (float(v) for v in state)
    sc = p.sigma * math.cos(th)
    return 0.5 * (x * x + th * th) + 0.5 * (dth * dth + 2.0 * sc * dth * dx + dx * dx)


def tora_storage_grad(p: ToraParams, state) -> np.ndarray:
    th, dth, x, dx = (float(v) for v in state)
    sc = p.sigma * math.cos(th)
    return np.array(
        [th - p.sigma * math.sin(th) * dth * dx, dth + sc * dx, x, sc * dth + dx]
    )


def tora_plant(p: ToraParams = ToraParams()) -> PlantSpec:
    return PlantSpec(
        n_p=4,
        m_p=1,
        f_p=lambda s, w: tora_dynamics(p, s, w),
        h_p=lambda s: np.array([s[1]]),
        V_p=lambda s: tora_storage(p, s),
        grad_V_p=lambda s: tora_storage_grad(p, s),
        name="tora",
        meta={"offset": np.zeros(4), "state_names": ("theta", "dtheta", "x", "dx")},
    )


# --------------------------------------------------------- manipulator


@dataclass(frozen=True)
class ManipulatorParams:
    """Planar two-link arm, M(q) = [[t1 + 2 t2 cos q2, t3 + t2 cos q2], [., t3]].

    Default inertia constants correspond to link masses 60 and 50 with unit
    lengths and centres of mass at mid-link, which reproduces the gravity
    constants 784.8 = (60*0.5 + 50*1)*9.81 and 245.25 = 50*0.5*9.81.
    """

    theta1: float = 260.0 / 3.0
    theta2: float = 25.0
    theta3: float = 50.0 / 3.0
    g1: float = 784.8
    g2: float = 245.25
    varrho: float = 1e-2
    q_star: tuple[float, float] = (-math.pi / 2.0, 0.0)

    def __post_init__(self):
        t1, t2, t3 = self.theta1, self.theta2, self.theta3
        # det M(q) = t1 t3 - t3^2 - t2^2 cos^2 q2, minimised at cos^2 q2 = 1
        if not (t3 > 0 and t1 * t3 > t3 * t3 + t2 * t2):
            raise ValueError("inertia constants do not give a positive definite M(q)")
        if not self.varrho > 0:
            raise ValueError("varrho must be positive")


def manipulator_inertia(p: ManipulatorParams, q) -> np.ndarray:
    c2 = math.cos(q[1])
    m12 = p.theta3 + p.theta2 * c2
    return np.array([[p.theta1 + 2.0 * p.theta2 * c2, m12], [m12, p.theta3]])


def manipulator_coriolis(p: ManipulatorParams, q, dq) -> np.ndarray:
    h = p.theta2 * math.sin(q[1])
    return h * np.array([[-dq[1], -(dq[0] + dq[1])], [dq[0], 0.0]])


def manipulator_potential(p: ManipulatorParams, q) -> float:
    e1, e2 = q[0] - p.q_star[0], q[1] - p.q_star[1]
    return (
        p.g1 * math.sin(q[0])
        + p.g2 * math.sin(q[0] + q[1])
        + 0.5 * p.varrho * (e1 * e1 + e2 * e2)
    )


def manipulator_gravity(p: ManipulatorParams, q) -> np.ndarray:
    c12 = p.g2 * math.cos(q[0] + q[1])
    return np.array(
        [
            p.g1 * math.cos(q[0]) + c12 + p.varrho * (q[0] - p.q_star[0]),
            c12 + p.varrho * (q[1] - p.q_star[1]),
        ]
    )


def manipulator_dynamics(p: ManipulatorParams, state, u) -> np.ndarray:
    """State (q1, q2, dq1, dq2) in physical coordinates."""
    state = np.asarray(state, dtype=float)
    q, dq = state[:2], state[2:]
    rhs = np.asarray(u, dtype=float) - manipulator_coriolis(p, q, dq) @ dq - manipulator_gravity(p, q)
    return np.concatenate([dq, np.linalg.solve(manipulator_inertia(p, q), rhs)])


def manipulator_storage(p: ManipulatorParams, state) -> float:
    state = np.asarray(state, dtype=float)
    q, dq = state[:2], state[2:]
    kinetic = 0.5 * dq @ manipulator_inertia(p, q) @ dq
    return float(kinetic + manipulator_potential(p, q) - manipulator_potential(p, p.q_star))


def manipulator_storage_grad(p: ManipulatorParams, state) -> np.ndarray:
    state = np.asarray(state, dtype=float)
    q, dq = state[:2], state[2:]
    dM2 = -p.theta2 * math.sin(q[1]) * np.array([[2.0, 1.0], [1.0, 0.0]])
    gq = manipulator_gravity(p, q) + np.array([0.0, 0.5 * dq @ dM2 @ dq])
    return np.concatenate([gq, manipulator_inertia(p, q) @ dq])


def manipulator_plant(p: ManipulatorParams = ManipulatorParams()) -> PlantSpec:
    """Plant in translated coordinates (q - q_star, dq)."""
    offset = np.array([p.q_star[0], p.q_star[1], 0.0, 0.0])
    return PlantSpec(
        n_p=4,
        m_p=2,
        f_p=lambda s, u: manipulator_dynamics(p, s + offset, u),
        h_p=lambda s: np.asarray(s[2:], dtype=float),
        V_p=lambda s: manipulator_storage(p, s + offset),
        grad_V_p=lambda s: manipulator_storage_grad(p, s + offset),
        name="manipulator",
        meta={"offset": offset, "state_names": ("q1", "q2", "dq1", "dq2")},
    )


# ------------------------------------------------ strongly convex objective


@dataclass(frozen=True)
class ScObjective:
    """sum_i phi_hat(a_i^T x - b_i) + |x|^2 / 2 with phi_hat(a) = a^2 exp(-r/a) / 2 for a > 0."""

    A: np.ndarray
    b: np.ndarray
    r: float = 1e-6
    L: float = 1e4

    @property
    def n(self) -> int:
        return self.A.shape[1]


_TINY = 1e-300


def phi_hat(alpha, r: float):
    a = np.asarray(alpha, dtype=float)
    pos = a > _TINY
    safe = np.where(pos, a, 1.0)
    return np.where(pos, 0.5 * safe * safe * np.exp(-r / safe), 0.0)


def phi_hat_prime(alpha, r: float):
    a = np.asarray(alpha, dtype=float)
    pos = a > _TINY
    safe = np.where(pos, a, 1.0)
    return np.where(pos, np.exp(-r / safe) * (safe + 0.5 * r), 0.0)


def phi_hat_second(alpha, r: float):
    a = np.asarray(alpha, dtype=float)
    pos = a > _TINY
    safe = np.where(pos, a, 1.0)
    t = r / safe
    return np.where(pos, np.exp(-t) * (1.0 + t + 0.5 * t * t), 0.0)


def sc_objective_value(obj: ScObjective, x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sum(phi_hat(obj.A @ x - obj.b, obj.r)) + 0.5 * x @ x)


def sc_objective_grad(obj: ScObjective, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return obj.A.T @ phi_hat_prime(obj.A @ x - obj.b, obj.r) + x


def sc_objective_hess(obj: ScObjective, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    w = phi_hat_second(obj.A @ x - obj.b, obj.r)
    return (obj.A.T * w) @ obj.A + np.eye(obj.n)


def sc_generate(n_p: int, p: int, L: float = 1e4, r: float = 1e-6, seed: int = 0) -> ScObjective:
    """Standard-normal A and b, with A rescaled to spectral norm sqrt(L - 1)."""
    if n_p < 1 or p < 1:
        raise ValueError("n_p and p must be positive")
    if not L > 1:
        raise ValueError("Lipschitz constant L must exceed 1")
    while True:
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((p, n_p))
        b = rng.standard_normal(p)
        norm = np.linalg.norm(A, 2)
        if norm > 0.0:
            break
        seed += 1
    A *= math.sqrt(L - 1.0) / norm
    return ScObjective(A=A, b=b, r=r, L=L)


def sc_minimizer(obj: ScObjective, gtol: float = 1e-10) -> np.ndarray:
    res = optimize.minimize(
        lambda x: sc_objective_value(obj, x),
        np.zeros(obj.n),
        jac=lambda x: sc_objective_grad(obj, x),
        hess=lambda x: sc_objective_hess(obj, x),
        method="trust-exact",
        options={"gtol": gtol * 1e-2, "maxiter": 1000},
    )
    x = res.x
    for _ in range(5):
        g = sc_objective_grad(obj, x)
        if np.linalg.norm(g) < gtol:
            return x
        x = x - np.linalg.solve(sc_objective_hess(obj, x), g)
    if np.linalg.norm(sc_objective_grad(obj, x)) >= gtol:
        raise ConfigurationError(f"minimizer search did not converge: {res.message}")
    return x


def gradient_flow_plant(obj: ScObjective) -> PlantSpec:
    """dx/dt = u, y = grad phi(x); translated so the minimizer sits at the origin."""
    x_star = sc_minimizer(obj)
    f_star = sc_objective_value(obj, x_star)
    n = obj.n
    return PlantSpec(
        n_p=n,
        m_p=n,
        f_p=lambda s, u: np.array(u, dtype=float),
        h_p=lambda s: sc_objective_grad(obj, s + x_star),
        V_p=lambda s: sc_objective_value(obj, s + x_star) - f_star,
        grad_V_p=lambda s: sc_objective_grad(obj, s + x_star),
        name="sc_opt",
        meta={"offset": x_star, "x_star": x_star, "f_star": f_star,
              "state_names": tuple(f"x{i + 1}" for i in range(n))},
    )
