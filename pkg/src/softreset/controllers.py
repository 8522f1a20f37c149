"""Concrete first-order reset elements packaged as ControllerSpec + energy."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .di_core import ControllerSpec, QuadraticEnergy
from .gamma_synth import ForeParams, m0_matrix, s_procedure_check


class CertificateWarning(UserWarning):
    pass


def clegg_sector_matrix(n: int) -> np.ndarray:
    """[[0, -I/2], [-I/2, 0]]: phi(x_c, u_c) = -x_c^T u_c."""
    half = 0.5 * np.eye(n)
    z = np.zeros((n, n))
    return np.block([[z, -half], [-half, z]])


def make_example1_fore(p: ForeParams = ForeParams()) -> tuple[ControllerSpec, QuadraticEnergy]:
    """Scalar FORE with M = M0 + eps I and V_c(x) = kappa x^2.

    Emits a CertificateWarning when the S-procedure with multiplier 1 fails;
    the controller is returned regardless.
    """
    M0 = m0_matrix(p)
    M = M0 + p.eps * np.eye(2)
    if not s_procedure_check(M, M0, p.eps, 1.0):
        warnings.warn(
            f"S-procedure certificate with lambda=1 fails for {p}", CertificateWarning, stacklevel=2
        )
    a, b, c, d, r, q = p.a_c, p.b_c, p.c_c, p.d_c, p.r_c, p.p_c
    ctrl = ControllerSpec(
        n_c=1,
        m_c=1,
        f_c=lambda x, u: a * x + b * u,
        g_c=lambda x, u: r * x + q * u,
        h_c=lambda x, u: c * x + d * u,
        M=M,
        name="fore1",
    )
    return ctrl, QuadraticEnergy.scalar(p.kappa, 1)


@dataclass(frozen=True)
class MimoForeParams:
    A_c: np.ndarray
    B_c: np.ndarray
    C_c: np.ndarray
    kappa_energy: float
    M: np.ndarray | None = None

    def __post_init__(self):
        n = np.shape(self.A_c)[0]
        for name in ("A_c", "B_c", "C_c"):
            if np.shape(getattr(self, name)) != (n, n):
                raise ValueError(f"{name} must be {n}x{n}")
        if not self.kappa_energy > 0:
            raise ValueError("kappa_energy must be positive")

    @property
    def n_c(self) -> int:
        return np.shape(self.A_c)[0]


def make_mimo_fore(p: MimoForeParams) -> tuple[ControllerSpec, QuadraticEnergy]:
    """f_c = A_c x + B_c u, g_c = 0, h_c = C_c x; M defaults to the Clegg sector."""
    A, B, C = (np.array(m, dtype=float) for m in (p.A_c, p.B_c, p.C_c))
    At, Bt, Ct = A.T.copy(), B.T.copy(), C.T.copy()
    M = clegg_sector_matrix(p.n_c) if p.M is None else p.M
    ctrl = ControllerSpec(
        n_c=p.n_c,
        m_c=p.n_c,
        f_c=lambda x, u: x @ At + u @ Bt,
        g_c=lambda x, u: np.zeros(np.broadcast_shapes(np.shape(x), np.shape(u))),
        h_c=lambda x, u: x @ Ct,
        M=M,
        name="mimo_fore",
    )
    return ctrl, QuadraticEnergy.scalar(p.kappa_energy, p.n_c)


def manipulator_fore(n_c: int = 2) -> tuple[ControllerSpec, QuadraticEnergy]:
    eye = np.eye(n_c)
    return make_mimo_fore(MimoForeParams(-eye, 100.0 * eye, eye, kappa_energy=0.005))


def optimization_fore(n_c: int, K: float) -> tuple[ControllerSpec, QuadraticEnergy]:
    # B_c = I so V_c = |x_c|^2 / 2 makes the storage supply exactly y_c^T u_c
    eye = np.eye(n_c)
    return make_mimo_fore(MimoForeParams(-K * eye, eye, eye, kappa_energy=0.5))
