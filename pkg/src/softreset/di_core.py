"""Set-valued sign, controller/plant data, hard and soft resets, interconnection.

All controller and plant maps act on the trailing axis, so ``x_c`` of shape
``(..., n_c)`` and ``u_c`` of shape ``(..., m_c)`` are evaluated in batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

Map2 = Callable[[np.ndarray, np.ndarray], np.ndarray]
Map1 = Callable[[np.ndarray], np.ndarray]


class DimensionError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class SignInterval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (-1.0 <= self.lo <= self.hi <= 1.0):
            raise ValueError(f"invalid sign interval [{self.lo}, {self.hi}]")

    def __contains__(self, s) -> bool:
        return self.lo <= s <= self.hi

    @property
    def extremes(self) -> tuple[float, ...]:
        return (self.lo,) if self.lo == self.hi else (self.lo, self.hi)


def sgn_set(s: float) -> SignInterval:
    """SGN(s): {sign(s)} away from zero, the whole interval [-1, 1] at zero."""
    s = float(s)
    if not math.isfinite(s):
        raise ValueError(f"SGN undefined for non-finite argument {s!r}")
    if s > 0.0:
        return SignInterval(1.0, 1.0)
    if s < 0.0:
        return SignInterval(-1.0, -1.0)
    return SignInterval(-1.0, 1.0)


def _as_vec(v, n: int, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1)
    if a.shape[-1] != n:
        raise DimensionError(f"{name} has trailing dimension {a.shape[-1]}, expected {n}")
    return a


@dataclass(frozen=True)
class ControllerSpec:
    """Hard-reset controller data (f_c, g_c, h_c, M).

    Flow set is ``phi <= 0`` and jump set ``phi >= 0`` with
    ``phi(x_c, u_c) = z^T M z``, ``z = (x_c, u_c)``.
    """

    n_c: int
    m_c: int
    f_c: Map2
    g_c: Map2
    h_c: Map2
    M: np.ndarray
    name: str = "controller"

    def __post_init__(self):
        M = np.array(self.M, dtype=float)
        size = self.n_c + self.m_c
        if M.shape != (size, size):
            raise DimensionError(f"M must be {size}x{size}, got {M.shape}")
        M = 0.5 * (M + M.T)
        M.setflags(write=False)
        object.__setattr__(self, "M", M)

    def check_origin(self, atol: float = 1e-12) -> bool:
        x0, u0 = np.zeros(self.n_c), np.zeros(self.m_c)
        return all(
            np.allclose(m(x0, u0), 0.0, atol=atol) for m in (self.f_c, self.g_c, self.h_c)
        )

    def z(self, x_c, u_c) -> np.ndarray:
        x_c = _as_vec(x_c, self.n_c, "x_c")
        u_c = _as_vec(u_c, self.m_c, "u_c")
        batch = np.broadcast_shapes(x_c.shape[:-1], u_c.shape[:-1])
        return np.concatenate(
            [np.broadcast_to(x_c, batch + (self.n_c,)), np.broadcast_to(u_c, batch + (self.m_c,))],
            axis=-1,
        )


@dataclass(frozen=True)
class QuadraticEnergy:
    """V(x) = x^T P x with strong-convexity modulus mu = lambda_min(P)."""

    P: np.ndarray

    def __post_init__(self):
        P = np.atleast_2d(np.array(self.P, dtype=float))
        P = 0.5 * (P + P.T)
        if np.linalg.eigvalsh(P)[0] <= 0.0:
            raise ValueError("energy matrix P must be positive definite")
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    @classmethod
    def scalar(cls, kappa: float, n: int) -> "QuadraticEnergy":
        return cls(kappa * np.eye(n))

    @property
    def mu(self) -> float:
        return float(np.linalg.eigvalsh(self.P)[0])

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, self.P, x)

    def grad(self, x) -> np.ndarray:
        return 2.0 * np.asarray(x, dtype=float) @ self.P


@dataclass(frozen=True)
class PlantSpec:
    """Plant dx_p/dt = f_p(x_p, u_p), y_p = h_p(x_p) with storage V_p.

    The output is state-only, so closing the loop around a feedthrough
    controller never creates an algebraic loop.
    """

    n_p: int
    m_p: int
    f_p: Map2
    h_p: Map1
    V_p: Map1
    grad_V_p: Map1
    name: str = "plant"
    meta: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class ClosedLoopState:
    x_p: np.ndarray
    x_c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x_p", np.atleast_1d(np.asarray(self.x_p, dtype=float)))
        object.__setattr__(self, "x_c", np.atleast_1d(np.asarray(self.x_c, dtype=float)))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.x_p, self.x_c])


def phi(ctrl: ControllerSpec, x_c, u_c) -> np.ndarray | float:
    z = ctrl.z(x_c, u_c)
    val = np.einsum("...i,ij,...j->...", z, ctrl.M, z)
    return float(val) if val.ndim == 0 else val


def _gamma_value(gamma, x_c, u_c):
    g = gamma(x_c, u_c) if callable(gamma) else gamma
    g = np.asarray(g, dtype=float)
    if not np.all(g > 0.0):
        raise ConfigurationError("soft-reset gain gamma must be strictly positive")
    return g


def soft_reset_rhs(ctrl: ControllerSpec, gamma, x_c, u_c, s) -> np.ndarray:
    """f_c - gamma * (s + 1) * (x_c - g_c), for a selection s of SGN(phi).

    ``gamma`` is a positive float or a callable ``gamma(x_c, u_c)``.  The
    selection is not validated here; see ``check_selection``.
    """
    x_c = _as_vec(x_c, ctrl.n_c, "x_c")
    u_c = _as_vec(u_c, ctrl.m_c, "u_c")
    g = _gamma_value(gamma, x_c, u_c)
    w = g * (np.asarray(s, dtype=float) + 1.0)
    return ctrl.f_c(x_c, u_c) - np.expand_dims(w, -1) * (x_c - ctrl.g_c(x_c, u_c))


def check_selection(ctrl: ControllerSpec, x_c, u_c, s) -> bool:
    return float(s) in sgn_set(phi(ctrl, x_c, u_c))


@dataclass(frozen=True)
class JumpDecision:
    jumped: bool
    x_c: np.ndarray
    phi: float


def hard_reset_step(ctrl: ControllerSpec, x_c, u_c) -> JumpDecision:
    x_c = _as_vec(x_c, ctrl.n_c, "x_c")
    u_c = _as_vec(u_c, ctrl.m_c, "u_c")
    ph = phi(ctrl, x_c, u_c)
    if ph >= 0.0:
        return JumpDecision(True, np.asarray(ctrl.g_c(x_c, u_c), dtype=float), ph)
    return JumpDecision(False, x_c, ph)


@dataclass(frozen=True)
class Exogenous:
    """Closed-loop inputs: u_c = u1(t) - y_p, u_p = u2(t) + y_c."""

    u1: Optional[Callable[[float], np.ndarray]] = None
    u2: Optional[Callable[[float], np.ndarray]] = None


@dataclass(frozen=True)
class LoopSignals:
    x_p: np.ndarray
    x_c: np.ndarray
    u_p: np.ndarray
    y_p: np.ndarray
    u_c: np.ndarray
    y_c: np.ndarray
    phi: float


@dataclass(frozen=True)
class ClosedLoop:
    """Negative-feedback interconnection of a plant with a (soft-)reset controller.

    The closed-loop inclusion is written as
    ``F(x) = drift(x) + (SGN(phi(x)) + 1) * reset_direction(x)``.
    With ``gamma=None`` the reset term is absent (pure flow of f_c everywhere).
    """

    plant: PlantSpec
    ctrl: ControllerSpec
    gamma: object = None
    energy: Optional[QuadraticEnergy] = None
    exogenous: Exogenous = field(default_factory=Exogenous)

    @property
    def n(self) -> int:
        return self.plant.n_p + self.ctrl.n_c

    def split(self, x) -> ClosedLoopState:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise DimensionError(f"closed-loop state must have shape ({self.n},), got {x.shape}")
        return ClosedLoopState(x[: self.plant.n_p], x[self.plant.n_p :])

    def signals(self, x, t: float = 0.0) -> LoopSignals:
        st = self.split(x)
        y_p = np.atleast_1d(self.plant.h_p(st.x_p))
        u_c = -y_p
        if self.exogenous.u1 is not None:
            u_c = u_c + np.atleast_1d(self.exogenous.u1(t))
        y_c = np.atleast_1d(self.ctrl.h_c(st.x_c, u_c))
        u_p = y_c
        if self.exogenous.u2 is not None:
            u_p = u_p + np.atleast_1d(self.exogenous.u2(t))
        return LoopSignals(st.x_p, st.x_c, u_p, y_p, u_c, y_c, phi(self.ctrl, st.x_c, u_c))

    def drift(self, x, t: float = 0.0, sig: LoopSignals | None = None) -> np.ndarray:
        sig = sig or self.signals(x, t)
        dx_p = self.plant.f_p(sig.x_p, sig.u_p)
        dx_c = self.ctrl.f_c(sig.x_c, sig.u_c)
        return np.concatenate([np.atleast_1d(dx_p), np.atleast_1d(dx_c)])

    def reset_direction(self, x, t: float = 0.0, sig: LoopSignals | None = None) -> np.ndarray:
        sig = sig or self.signals(x, t)
        out = np.zeros(self.n)
        if self.gamma is not None:
            g = _gamma_value(self.gamma, sig.x_c, sig.u_c)
            out[self.plant.n_p :] = -g * (sig.x_c - self.ctrl.g_c(sig.x_c, sig.u_c))
        return out

    def field(self, x, s: float, t: float = 0.0) -> np.ndarray:
        """One element of F(x) for the selection ``s`` (not validated)."""
        sig = self.signals(x, t)
        return self.drift(x, t, sig) + (s + 1.0) * self.reset_direction(x, t, sig)

    def field_extremes(self, x, t: float = 0.0) -> list[np.ndarray]:
        """Vectors spanning F(x): F is affine in s, so it is their convex hull."""
        sig = self.signals(x, t)
        d = self.drift(x, t, sig)
        r = self.reset_direction(x, t, sig)
        return [d + (s + 1.0) * r for s in sgn_set(sig.phi).extremes]

    def V(self, x) -> tuple[float, float, float]:
        st = self.split(x)
        vp = float(self.plant.V_p(st.x_p))
        vc = float(self.energy.value(st.x_c)) if self.energy is not None else 0.0
        return vp, vc, vp + vc

    def grad_V(self, x) -> np.ndarray:
        st = self.split(x)
        gc = self.energy.grad(st.x_c) if self.energy is not None else np.zeros(self.ctrl.n_c)
        return np.concatenate([np.atleast_1d(self.plant.grad_V_p(st.x_p)), gc])


def interconnect(
    plant: PlantSpec,
    ctrl: ControllerSpec,
    gamma=None,
    exogenous: Exogenous | None = None,
    energy: QuadraticEnergy | None = None,
) -> ClosedLoop:
    if plant.m_p != ctrl.m_c:
        raise DimensionError(f"plant has {plant.m_p} ports, controller has {ctrl.m_c}")
    if gamma is not None and not callable(gamma) and not float(gamma) > 0.0:
        raise ConfigurationError("constant gamma must be strictly positive; use gamma=None for no resets")
    return ClosedLoop(plant, ctrl, gamma, energy, exogenous or Exogenous())
