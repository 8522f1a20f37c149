"""Certificates and soft-reset gain synthesis.

Covers the S-procedure certificate for scalar FOREs, the majorants
sigma1/sigma2 and the pointwise lower bound on gamma that makes the
soft-reset controller strictly passive.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .di_core import ConfigurationError, ControllerSpec, QuadraticEnergy, phi, soft_reset_rhs


class SingularityError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class ForeParams:
    """Scalar first-order reset element: flow a x + b u, jump r x + p u, output c x + d u.

    Defaults are the TORA experiment values.
    """

    a_c: float = 1.0
    b_c: float = 1.0
    c_c: float = 1.0
    d_c: float = 0.01
    r_c: float = 0.0
    p_c: float = 0.0
    kappa: float = 0.25
    rho0: float = 1e-3
    eps: float = 1e-2

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.rho0 < 0:
            raise ValueError("rho0 must be nonnegative")


def m0_matrix(p: ForeParams) -> np.ndarray:
    k, a, b, c, d, rho = p.kappa, p.a_c, p.b_c, p.c_c, p.d_c, p.rho0
    off = k * b + rho * c * d - 0.5 * c
    return np.array([[2 * k * a + rho * c * c, off], [off, -d + rho * d * d]])


def minimum_phase_fore(p: ForeParams) -> bool:
    """Sufficient detectability test for the scalar FORE: d_c > 0 and b_c c_c > a_c d_c."""
    return p.d_c > 0 and p.b_c * p.c_c > p.a_c * p.d_c


def psd_tolerance(A: np.ndarray) -> float:
    return 1e-10 * (1.0 + np.linalg.norm(A, 2))


def is_psd(A, tol: float | None = None) -> bool:
    A = np.asarray(A, dtype=float)
    A = 0.5 * (A + A.T)
    if tol is None:
        tol = psd_tolerance(A)
    return bool(np.linalg.eigvalsh(A)[0] >= -tol)


def s_procedure_check(M, M0, eps: float, lam: float, tol: float | None = None) -> bool:
    """lam (M - eps I) - M0 >= 0 and the flow set {z^T M z <= 0} is nontrivial."""
    M = np.asarray(M, dtype=float)
    M0 = np.asarray(M0, dtype=float)
    if M.shape != M0.shape:
        raise ValueError("M and M0 must have the same shape")
    if lam < 0:
        raise ValueError("S-procedure multiplier must be nonnegative")
    if tol is not None and tol < 0:
        raise ValueError("tolerance must be nonnegative")
    S = lam * (M - eps * np.eye(M.shape[0])) - M0
    nontrivial_flow = np.linalg.eigvalsh(0.5 * (M + M.T))[0] <= 0.0
    return is_psd(S, tol) and bool(nontrivial_flow)


def jump_lands_in_flow_set(ctrl: ControllerSpec, z_samples, tol: float = 0.0) -> bool:
    """Sampled check that (g_c(x_c, u_c), u_c) lies in C for every sample in D."""
    z = np.atleast_2d(np.asarray(z_samples, dtype=float))
    x_c, u_c = z[:, : ctrl.n_c], z[:, ctrl.n_c :]
    in_d = phi(ctrl, x_c, u_c) >= 0.0
    if not np.any(in_d):
        return True
    post = phi(ctrl, ctrl.g_c(x_c[in_d], u_c[in_d]), u_c[in_d])
    return bool(np.all(post <= tol))


def _split(ctrl: ControllerSpec, z):
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != ctrl.n_c + ctrl.m_c:
        raise ValueError(f"z has trailing dimension {z.shape[-1]}, expected {ctrl.n_c + ctrl.m_c}")
    return z, z[..., : ctrl.n_c], z[..., ctrl.n_c :]


def sigma1(ctrl: ControllerSpec, z) -> np.ndarray | float:
    """|M (g_hat(z) + z)| with g_hat(z) = (g_c(x_c, u_c), u_c)."""
    z, x_c, u_c = _split(ctrl, z)
    g_hat = np.concatenate([ctrl.g_c(x_c, u_c), u_c], axis=-1)
    val = np.linalg.norm((g_hat + z) @ ctrl.M, axis=-1)
    return float(val) if val.ndim == 0 else val


def in_c_eps(ctrl: ControllerSpec, eps: float, z) -> np.ndarray | bool:
    z, x_c, u_c = _split(ctrl, z)
    out = phi(ctrl, x_c, u_c) <= eps * np.einsum("...i,...i->...", z, z)
    return bool(out) if np.ndim(out) == 0 else out


def flow_supply_gap(ctrl: ControllerSpec, energy: QuadraticEnergy, rho0: float, x_c, u_c):
    """<grad V_c, f_c> - y_c^T u_c + rho(y_c) with rho(y) = rho0 |y|^2."""
    y = ctrl.h_c(x_c, u_c)
    dv = np.einsum("...i,...i->...", energy.grad(x_c), ctrl.f_c(x_c, u_c))
    return dv - np.einsum("...i,...i->...", y, u_c) + rho0 * np.einsum("...i,...i->...", y, y)


def sigma2(ctrl: ControllerSpec, energy: QuadraticEnergy, rho0: float, eps: float, z):
    z, x_c, u_c = _split(ctrl, z)
    gap = np.maximum(0.0, flow_supply_gap(ctrl, energy, rho0, x_c, u_c))
    val = np.where(in_c_eps(ctrl, eps, z), 0.0, gap)
    return float(val) if val.ndim == 0 else val


Sigma = Union[float, Callable[[np.ndarray], float]]


def gamma_bound(gamma0: float, mu: float, eps: float, sigma1: Sigma, sigma2: Sigma, z):
    """(1 / 2 mu) * (gamma0 + sigma1^2 sigma2 / (eps^2 |z|^4)).

    ``sigma1`` and ``sigma2`` are either values at ``z`` or callables of ``z``.
    """
    if not (gamma0 > 0 and mu > 0 and eps > 0):
        raise ValueError("gamma0, mu and eps must be positive")
    z = np.asarray(z, dtype=float)
    s1 = np.asarray(sigma1(z) if callable(sigma1) else sigma1, dtype=float)
    s2 = np.asarray(sigma2(z) if callable(sigma2) else sigma2, dtype=float)
    nz2 = np.einsum("...i,...i->...", z, z)
    active = s2 > 0.0
    if np.any(active & (nz2 == 0.0)):
        raise SingularityError("sigma2 must vanish at z = 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        extra = np.where(active, s1 * s1 * s2 / (eps * eps * nz2 * nz2), 0.0)
    val = (gamma0 + extra) / (2.0 * mu)
    return float(val) if val.ndim == 0 else val


@dataclass(frozen=True)
class ConstantGamma:
    value: float

    def __post_init__(self):
        if not self.value > 0:
            raise ConfigurationError("constant gamma must be strictly positive")

    def __call__(self, x_c, u_c):
        return self.value


@dataclass(frozen=True)
class SynthesizedGamma:
    """gamma(z) = max(bound(z), floor), the floor defaulting to gamma0 / (2 mu)."""

    ctrl: ControllerSpec
    energy: QuadraticEnergy
    gamma0: float
    eps: float
    rho0: float
    floor: float | None = None

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ConfigurationError("gamma0 must be strictly positive")
        if self.floor is None:
            object.__setattr__(self, "floor", self.gamma0 / (2.0 * self.energy.mu))
        if not self.floor > 0:
            raise ConfigurationError("gamma floor must be strictly positive")

    def bound(self, z):
        return gamma_bound(
            self.gamma0,
            self.energy.mu,
            self.eps,
            lambda w: sigma1(self.ctrl, w),
            lambda w: sigma2(self.ctrl, self.energy, self.rho0, self.eps, w),
            z,
        )

    def __call__(self, x_c, u_c):
        val = np.maximum(self.bound(self.ctrl.z(x_c, u_c)), self.floor)
        return float(val) if np.ndim(val) == 0 else val


def passivity_residual(
    ctrl: ControllerSpec,
    energy: QuadraticEnergy,
    gamma,
    rho0: float,
    gamma0: float,
    x_c,
    u_c,
    s,
):
    """LHS minus RHS of the soft-reset strict-passivity inequality.

    Nonpositive means the inequality holds at (x_c, u_c) for selection s.
    """
    x_c = np.asarray(x_c, dtype=float)
    u_c = np.asarray(u_c, dtype=float)
    rhs_vec = soft_reset_rhs(ctrl, gamma, x_c, u_c, s)
    lhs = np.einsum("...i,...i->...", energy.grad(x_c), rhs_vec)
    y = ctrl.h_c(x_c, u_c)
    ph = phi(ctrl, x_c, u_c)
    s1 = sigma1(ctrl, ctrl.z(x_c, u_c))
    supply = np.einsum("...i,...i->...", y, u_c) - rho0 * np.einsum("...i,...i->...", y, y)
    extra = gamma0 * np.maximum(0.0, ph) * ph / np.maximum(1.0, np.square(s1))
    return lhs - (supply - extra)
