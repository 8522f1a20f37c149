"""Time integration of soft-reset closed loops and execution of hard-reset ones."""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import LSODA, Radau

from .di_core import ClosedLoop, ControllerSpec, Exogenous, PlantSpec, QuadraticEnergy, interconnect

METHODS = ("lsoda", "radau", "rk45", "rk4")


@dataclass(frozen=True)
class IntegratorConfig:
    """Integration settings.

    ``lsoda`` and ``radau`` are scipy's stiff-capable solvers; ``rk45`` is a
    Dormand-Prince 5(4) pair and ``rk4`` the classical fixed-step scheme.
    ``boundary_layer`` is the base width delta0 of the sign regularization.
    A run whose state norm exceeds ``max_norm`` stops with status "blowup".
    """

    method: str = "lsoda"
    h: float = 1e-3  # fixed step for rk4, initial step otherwise
    h_min: float = 1e-13
    h_max: float = 0.05
    rtol: float = 1e-8
    atol: float = 1e-8
    boundary_layer: float = 1e-6
    t_end: float = 10.0
    record_stride: int = 1
    gamma_max: float = 0.0
    max_steps: int = 5_000_000
    max_norm: float = 1e6

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.boundary_layer > 0:
            raise ValueError("boundary_layer must be positive")
        if not (self.h > 0 and self.t_end >= 0 and self.record_stride >= 1):
            raise ValueError("h must be positive, t_end nonnegative, record_stride >= 1")
        if self.method == "rk4" and self.h * self.gamma_max > 0.5:
            raise ValueError(
                f"fixed step h={self.h} too large for gamma_max={self.gamma_max} (need h*gamma <= 0.5)"
            )
        if self.method != "rk4" and not (0 < self.h_min <= self.h_max and self.rtol > 0 and self.atol > 0):
            raise ValueError("adaptive settings need 0 < h_min <= h_max and positive tolerances")
        if not self.max_norm > 0:
            raise ValueError("max_norm must be positive")


@dataclass(frozen=True)
class HybridConfig:
    max_jumps: int = 1000
    jump_dwell: float = 0.0
    event_tol: float = 1e-10
    jump_tol: float = 1e-12

    def __post_init__(self):
        if self.max_jumps < 1:
            raise ValueError("max_jumps must be at least 1")
        if self.jump_dwell < 0 or not self.event_tol > 0:
            raise ValueError("jump_dwell must be >= 0 and event_tol > 0")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    n_p: int
    y_p: np.ndarray
    y_c: np.ndarray
    phi: np.ndarray
    V_p: np.ndarray
    V_c: np.ndarray
    V: np.ndarray
    jump_count: int = 0
    jump_times: list = field(default_factory=list)
    status: str = "ok"
    message: str = ""

    @property
    def x_p(self) -> np.ndarray:
        return self.states[:, : self.n_p]

    @property
    def x_c(self) -> np.ndarray:
        return self.states[:, self.n_p :]

    @property
    def zeno(self) -> bool:
        return self.status == "zeno"

    def __len__(self) -> int:
        return len(self.times)


class IntegrationError(RuntimeError):
    def __init__(self, message: str, trajectory: Trajectory):
        super().__init__(message)
        self.trajectory = trajectory


class _Recorder:
    def __init__(self, loop: ClosedLoop):
        self.loop = loop
        self.rows: list = []

    def add(self, t: float, x: np.ndarray) -> None:
        sig = self.loop.signals(x, t)
        vp, vc, v = self.loop.V(x)
        self.rows.append((t, x.copy(), sig.y_p, sig.y_c, sig.phi, vp, vc, v))

    def build(self, **extra) -> Trajectory:
        if self.rows:
            cols = list(zip(*self.rows))
            arr = [np.array(c, dtype=float) for c in cols]
        else:
            n, m = self.loop.n, self.loop.ctrl.m_c
            arr = [np.zeros(0), np.zeros((0, n)), np.zeros((0, m)), np.zeros((0, m))] + [np.zeros(0)] * 4
        t, xs, yp, yc, ph, vp, vc, v = arr
        return Trajectory(t, xs, self.loop.plant.n_p, yp, yc, ph, vp, vc, v, **extra)


# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


def dp45_step(f, t: float, x: np.ndarray, h: float, k1: np.ndarray | None = None):
    """One Dormand-Prince step; returns (x_new, error_vector, f(t+h, x_new))."""
    k = [f(t, x) if k1 is None else k1]
    for i in range(1, 7):
        acc = x.copy()
        for aij, kj in zip(_A[i], k):
            if aij:
                acc += (h * aij) * kj
        k.append(f(t + _C[i] * h, acc))
        if i == 6:
            x_new = acc
    err = h * sum(e * kj for e, kj in zip(_E, k) if e)
    return x_new, err, k[6]


def rk4_step(f, t: float, x: np.ndarray, h: float) -> np.ndarray:
    k1 = f(t, x)
    k2 = f(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = f(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def regularized_field(loop: ClosedLoop, delta0: float):
    """Single-valued field with SGN(phi) replaced by clamp(phi / delta, -1, 1).

    delta = delta0 * (1 + |z_c|^2) scales the layer with the controller signal.
    """
    plant, ctrl = loop.plant, loop.ctrl
    n_p, n = plant.n_p, loop.n
    f_p, h_p, f_c, g_c, h_c = plant.f_p, plant.h_p, ctrl.f_c, ctrl.g_c, ctrl.h_c
    M = np.array(ctrl.M)
    u1, u2 = loop.exogenous.u1, loop.exogenous.u2
    gamma = loop.gamma
    gamma_const = getattr(gamma, "value", None) if callable(gamma) else gamma

    def f(t, x):
        x_p, x_c = x[:n_p], x[n_p:]
        u_c = -h_p(x_p)
        if u1 is not None:
            u_c = u_c + u1(t)
        y_c = h_c(x_c, u_c)
        dx = np.empty(n)
        dx[:n_p] = f_p(x_p, y_c if u2 is None else y_c + u2(t))
        dx[n_p:] = f_c(x_c, u_c)
        if gamma is not None:
            z = np.concatenate((x_c, u_c))
            s = (z @ M @ z) / (delta0 * (1.0 + z @ z))
            if s > -1.0:
                g = gamma_const if gamma_const is not None else gamma(x_c, u_c)
                dx[n_p:] -= (g * (min(s, 1.0) + 1.0)) * (x_c - g_c(x_c, u_c))
        return dx

    return f


class _Underflow(Exception):
    def __init__(self, t, h):
        super().__init__(f"step size {h:.3e} below h_min at t={t:.6g}")


class _Stepper:
    """Own explicit schemes: adaptive Dormand-Prince or fixed-step RK4."""

    def __init__(self, f, cfg: IntegratorConfig, method: str):
        self.f = f
        self.cfg = cfg
        self.method = method
        self.h = min(cfg.h, cfg.h_max) if method == "rk45" else cfg.h
        self.k1 = None

    def trial(self, t, x, h):
        """Propagate exactly h without error control (used for event location)."""
        if self.method == "rk4":
            return rk4_step(self.f, t, x, h)
        return dp45_step(self.f, t, x, h)[0]

    def advance(self, t, x, t_stop):
        """Take one accepted step not beyond t_stop; returns (t_new, x_new)."""
        cfg = self.cfg
        if self.method == "rk4":
            h = min(cfg.h, t_stop - t)
            return (t_stop if h < cfg.h else t + h), rk4_step(self.f, t, x, h)
        if self.k1 is None:
            self.k1 = self.f(t, x)
        while True:
            h = min(self.h, t_stop - t)
            x_new, err, k7 = dp45_step(self.f, t, x, h, self.k1)
            scale = cfg.atol + cfg.rtol * np.maximum(np.abs(x), np.abs(x_new))
            en = math.sqrt(float(np.mean((err / scale) ** 2)))
            if not math.isfinite(en):
                en = 1e10
            if en <= 1.0:
                fac = 5.0 if en == 0.0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
                if h == self.h:
                    self.h = min(cfg.h_max, h * fac)
                self.k1 = k7
                return (t_stop if h == t_stop - t else t + h), x_new
            self.h = h * max(0.2, 0.9 * en ** -0.2)
            if self.h < cfg.h_min:
                raise _Underflow(t, self.h)

    def invalidate(self):
        self.k1 = None


class _ScipyStepper:
    """scipy LSODA/Radau stepping.

    LSODA can lock into its nonstiff mode inside a thin boundary layer and
    crawl at tiny steps; after ``stall_steps`` consecutive steps below
    ``stall_h`` (or an outright LSODA failure) the run continues with Radau
    from the last accepted state.
    """

    stall_h = 1e-8
    stall_steps = 1000

    def __init__(self, f, cfg: IntegratorConfig, x0):
        self.f, self.cfg = f, cfg
        self.fallbacks = 0
        self.small = 0
        self.solver = self._make(cfg.method, 0.0, x0, min(cfg.h, cfg.h_max))

    def _make(self, method, t0, x0, first_step):
        cfg = self.cfg
        opts = dict(rtol=cfg.rtol, atol=cfg.atol, max_step=cfg.h_max, first_step=first_step)
        if method == "lsoda":
            return LSODA(self.f, t0, x0, cfg.t_end, min_step=cfg.h_min, **opts)
        return Radau(self.f, t0, x0, cfg.t_end, **opts)

    def _fall_back(self, t, x):
        self.fallbacks += 1
        self.solver = self._make("radau", t, x, max(self.cfg.h_min, 1e-8))

    def advance(self, t, x, t_stop):
        sv = self.solver
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            msg = sv.step()
        if sv.status == "failed":
            if isinstance(sv, LSODA):
                self._fall_back(t, x)
                return self.advance(t, x, t_stop)
            raise _SolverFailure(sv.t, msg)
        if isinstance(sv, LSODA):
            self.small = self.small + 1 if sv.t - t < self.stall_h else 0
            if self.small >= self.stall_steps:
                self._fall_back(sv.t, sv.y.copy())
        return sv.t, sv.y.copy()


class _SolverFailure(_Underflow):
    def __init__(self, t, msg):
        Exception.__init__(self, f"solver failed at t={t:.6g}: {msg}")


def _check_x0(loop: ClosedLoop, x0) -> np.ndarray:
    x = np.array(x0, dtype=float).reshape(-1)
    loop.split(x)
    if not np.all(np.isfinite(x)):
        raise ValueError("initial state must be finite")
    return x


def integrate_soft(loop: ClosedLoop, cfg: IntegratorConfig, x0) -> Trajectory:
    """Integrate the boundary-layer regularization of the soft-reset closed loop.

    Raises IntegrationError (with the partial trajectory attached) on step
    underflow or a non-finite state. Exceeding ``cfg.max_norm`` ends the run
    early with status "blowup".
    """
    x = _check_x0(loop, x0)
    f = regularized_field(loop, cfg.boundary_layer)
    if cfg.method in ("lsoda", "radau"):
        stepper = _ScipyStepper(f, cfg, x)
    else:
        stepper = _Stepper(f, cfg, cfg.method)
    rec = _Recorder(loop)
    t = 0.0
    rec.add(t, x)
    k = 0
    while t < cfg.t_end:
        try:
            t_new, x_new = stepper.advance(t, x, cfg.t_end)
        except _Underflow as exc:
            status = "solver_failure" if isinstance(exc, _SolverFailure) else "step_underflow"
            raise IntegrationError(str(exc), rec.build(status=status, message=str(exc))) from None
        k += 1
        if not np.all(np.isfinite(x_new)):
            msg = f"non-finite state at t={t_new:.6g}"
            raise IntegrationError(msg, rec.build(status="diverged", message=msg))
        t, x = t_new, x_new
        blowup = np.max(np.abs(x)) > cfg.max_norm
        if k % cfg.record_stride == 0 or t >= cfg.t_end or blowup:
            rec.add(t, x)
        if blowup:
            return rec.build(status="blowup", message=f"|x| exceeded {cfg.max_norm:g} at t={t:.6g}")
        if k >= cfg.max_steps:
            msg = f"max_steps={cfg.max_steps} exhausted at t={t:.6g}"
            raise IntegrationError(msg, rec.build(status="step_underflow", message=msg))
    fallbacks = getattr(stepper, "fallbacks", 0)
    return rec.build(message=f"radau fallback after {fallbacks} lsoda failure(s)" if fallbacks else "")


def integrate_hard(
    plant: PlantSpec,
    ctrl: ControllerSpec,
    cfg: IntegratorConfig,
    hcfg: HybridConfig,
    x0,
    energy: QuadraticEnergy | None = None,
    exogenous: Exogenous | None = None,
) -> Trajectory:
    """Execute the hard-reset hybrid closed loop.

    Flows along f_c, and jumps x_c -> g_c(x_c, u_c) whenever phi >= 0 and the
    jump actually moves the state (a jump onto a fixed point of g_c is a
    no-op and is skipped). Crossings are located by bisection in time. After
    each jump, further jumps are suppressed for ``jump_dwell``. More than
    ``max_jumps`` jumps within a unit time window stops the run with status
    "zeno".
    """
    loop = interconnect(plant, ctrl, None, exogenous, energy)
    x = _check_x0(loop, x0)
    f = regularized_field(loop, cfg.boundary_layer)
    stepper = _Stepper(f, cfg, "rk4" if cfg.method == "rk4" else "rk45")
    rec = _Recorder(loop)
    n_p = plant.n_p
    recent: deque = deque()
    jump_times: list = []

    def wants_jump(t, xx) -> bool:
        sig = loop.signals(xx, t)
        if sig.phi < 0.0:
            return False
        moved = np.linalg.norm(sig.x_c - ctrl.g_c(sig.x_c, sig.u_c))
        return moved > hcfg.jump_tol * (1.0 + np.linalg.norm(sig.x_c))

    def jump(t, xx) -> np.ndarray:
        sig = loop.signals(xx, t)
        out = xx.copy()
        out[n_p:] = ctrl.g_c(sig.x_c, sig.u_c)
        return out

    def finish(status="ok", message=""):
        return rec.build(jump_count=len(jump_times), jump_times=jump_times, status=status, message=message)

    t = 0.0
    dwell_until = -math.inf
    rec.add(t, x)
    k = 0
    while True:
        # jumps at the current instant
        while t >= dwell_until and wants_jump(t, x):
            x = jump(t, x)
            jump_times.append(t)
            recent.append(t)
            while recent and recent[0] <= t - 1.0:
                recent.popleft()
            rec.add(t, x)
            stepper.invalidate()
            if len(recent) > hcfg.max_jumps:
                return finish("zeno", f"Zeno guard tripped at t={t:.6g}")
            dwell_until = t + hcfg.jump_dwell if hcfg.jump_dwell > 0 else -math.inf
        if t >= cfg.t_end:
            break
        t_stop = cfg.t_end if t >= dwell_until else min(cfg.t_end, dwell_until)
        t0, x_old = t, x
        try:
            t, x = stepper.advance(t0, x_old, t_stop)
        except _Underflow as exc:
            raise IntegrationError(str(exc), finish("step_underflow", str(exc))) from None
        k += 1
        if not np.all(np.isfinite(x)):
            msg = f"non-finite state at t={t:.6g}"
            raise IntegrationError(msg, finish("diverged", msg))
        if t0 >= dwell_until and wants_jump(t, x):
            lo, hi = 0.0, t - t0
            while hi - lo > hcfg.event_tol:
                mid = 0.5 * (lo + hi)
                if wants_jump(t0 + mid, stepper.trial(t0, x_old, mid)):
                    hi = mid
                else:
                    lo = mid
            t, x = t0 + hi, stepper.trial(t0, x_old, hi)
            stepper.invalidate()
            rec.add(t, x)
            continue
        if k % cfg.record_stride == 0 or t >= cfg.t_end:
            rec.add(t, x)
        if k >= cfg.max_steps:
            msg = f"max_steps={cfg.max_steps} exhausted at t={t:.6g}"
            raise IntegrationError(msg, finish("step_underflow", msg))
    return finish()


@dataclass(frozen=True)
class MonitorReport:
    max_violation: float
    threshold: float
    flagged: bool
    decrements: np.ndarray


def lyapunov_monitor(traj: Trajectory, tol_abs: float = 0.0, tol_rel: float = 1e-6) -> MonitorReport:
    """Largest upward step of the sampled V, flagged above tol_abs + tol_rel * V(0)."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    dv = np.diff(traj.V)
    worst = max(0.0, float(dv.max())) if dv.size else 0.0
    thr = tol_abs + tol_rel * float(traj.V[0])
    return MonitorReport(worst, thr, worst > thr, dv)
