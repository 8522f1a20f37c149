"""Experiment runner: config parsing, single runs, parameter sweeps.

Configs are TOML files::

    experiment = "tora"          # tora | manipulator | sc_opt | custom
    mode = "soft"                # soft | hard | none
    gamma = 10.0                 # number or "synth(<gamma0>)"
    seed = 0
    out = "runs/tora"

    [params]                     # experiment parameters (see PARAM_DEFAULTS)
    [integrator]                 # IntegratorConfig fields
    [hybrid]                     # HybridConfig fields (mode = "hard")
    [monitor]                    # tol_abs, tol_rel
    [initial]                    # state = [...] in physical coordinates

Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import importlib
import io
import json
import math
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .controllers import make_example1_fore, manipulator_fore, optimization_fore
from .di_core import ConfigurationError, ControllerSpec, PlantSpec, QuadraticEnergy, interconnect
from .gamma_synth import ForeParams, SynthesizedGamma
from .integrate import (
    HybridConfig,
    IntegrationError,
    IntegratorConfig,
    Trajectory,
    integrate_hard,
    integrate_soft,
    lyapunov_monitor,
)
from .plants import (
    ManipulatorParams,
    ToraParams,
    gradient_flow_plant,
    manipulator_plant,
    sc_generate,
    tora_plant,
)

EXIT_OK, EXIT_CONFIG, EXIT_INTEGRATION = 0, 2, 3

EXPERIMENTS = ("tora", "manipulator", "sc_opt", "custom")
MODES = ("soft", "hard", "none")

# Illustrative initial conditions (physical coordinates, plant state then controller state).
PARAM_DEFAULTS: dict[str, dict[str, Any]] = {
    "tora": {
        "sigma": 0.1,
        **{k: v for k, v in dataclasses.asdict(ForeParams()).items()},
    },
    "manipulator": {
        "theta1": ManipulatorParams.theta1,
        "theta2": ManipulatorParams.theta2,
        "theta3": ManipulatorParams.theta3,
        "g1": ManipulatorParams.g1,
        "g2": ManipulatorParams.g2,
        "varrho": ManipulatorParams.varrho,
        "q_star": list(ManipulatorParams.q_star),
        "synth_eps": 1e-2,
        "synth_rho0": 0.0,
    },
    "sc_opt": {
        "n_p": 5,
        "p": 10,
        "L": 1e4,
        "r": 1e-6,
        "K": 1.0,
        "synth_eps": 1e-2,
        "synth_rho0": 0.0,
    },
    "custom": {"factory": None},
}

DEFAULT_STATE = {
    "tora": [0.0, 1.0, 0.0, 0.0, 1.0],
    # q - q* = (pi/2, -pi/4), strictly inside the box where P(q) - P(q*) > 0
    "manipulator": [0.0, -math.pi / 4, 0.0, 0.0, 0.0, 0.0],
}


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending key."""


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "tora"
    mode: str = "soft"
    gamma: Any = 10.0
    seed: int = 0
    out: str = "runs/out"
    params: dict = field(default_factory=dict)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    hybrid: HybridConfig = field(default_factory=HybridConfig)
    tol_abs: float = 0.0
    tol_rel: float = 1e-6
    state: tuple | None = None
    sweep_points: int = 501

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment: must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode: must be one of {MODES}, got {self.mode!r}")
        if self.mode == "soft":
            parse_gamma(self.gamma)
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed: must be a nonnegative integer, got {self.seed!r}")
        if self.sweep_points < 2:
            raise ConfigError("sweep_points: must be at least 2")
        unknown = set(self.params) - set(PARAM_DEFAULTS[self.experiment])
        if unknown:
            raise ConfigError(f"params.{sorted(unknown)[0]}: unknown parameter for {self.experiment}")

    def param(self, name: str):
        return self.params.get(name, PARAM_DEFAULTS[self.experiment][name])


_SYNTH = re.compile(r"^\s*synth\(\s*([^)]+)\)\s*$")


def parse_gamma(gamma) -> tuple[str, float]:
    """Return ("const", value) or ("synth", gamma0)."""
    if isinstance(gamma, str):
        m = _SYNTH.match(gamma)
        if not m:
            raise ConfigError(f"gamma: expected a number or 'synth(<gamma0>)', got {gamma!r}")
        try:
            g0 = float(m.group(1))
        except ValueError:
            raise ConfigError(f"gamma: bad gamma0 in {gamma!r}") from None
        kind, val = "synth", g0
    elif isinstance(gamma, (int, float)) and not isinstance(gamma, bool):
        kind, val = "const", float(gamma)
    else:
        raise ConfigError(f"gamma: expected a number or 'synth(<gamma0>)', got {gamma!r}")
    if not (math.isfinite(val) and val > 0):
        raise ConfigError(f"gamma: must be strictly positive in soft mode, got {gamma!r}")
    return kind, val


def _build_section(cls, table: dict, section: str):
    names = {f.name for f in dataclasses.fields(cls)}
    for key in table:
        if key not in names:
            raise ConfigError(f"{section}.{key}: unknown key")
    try:
        return cls(**table)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


_TOP_KEYS = {"experiment", "mode", "gamma", "seed", "out", "sweep_points"}
_SECTIONS = {"params", "integrator", "hybrid", "monitor", "initial"}


def config_from_dict(data: dict) -> ExperimentConfig:
    for key, val in data.items():
        if key in _SECTIONS:
            if not isinstance(val, dict):
                raise ConfigError(f"{key}: must be a table")
        elif key not in _TOP_KEYS:
            raise ConfigError(f"{key}: unknown key")
    kw = {k: data[k] for k in _TOP_KEYS if k in data}
    kw["integrator"] = _build_section(IntegratorConfig, data.get("integrator", {}), "integrator")
    kw["hybrid"] = _build_section(HybridConfig, data.get("hybrid", {}), "hybrid")
    mon = dict(data.get("monitor", {}))
    for key in mon:
        if key not in ("tol_abs", "tol_rel"):
            raise ConfigError(f"monitor.{key}: unknown key")
    kw.update({k: float(v) for k, v in mon.items()})
    init = dict(data.get("initial", {}))
    for key in init:
        if key != "state":
            raise ConfigError(f"initial.{key}: unknown key")
    if "state" in init:
        try:
            kw["state"] = tuple(float(v) for v in init["state"])
        except (TypeError, ValueError):
            raise ConfigError("initial.state: must be a list of numbers") from None
    kw["params"] = dict(data.get("params", {}))
    return ExperimentConfig(**kw)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config: TOML syntax error: {exc}") from None
    return config_from_dict(data)


# ------------------------------------------------------------------ builders


@dataclass
class Experiment:
    plant: PlantSpec
    ctrl: ControllerSpec
    energy: QuadraticEnergy
    x0: np.ndarray  # closed-loop state in plant coordinates
    synth_eps: float
    synth_rho0: float


def _physical_to_state(plant: PlantSpec, state) -> np.ndarray:
    x = np.array(state, dtype=float)
    x[: plant.n_p] -= plant.meta.get("offset", np.zeros(plant.n_p))
    return x


def build_experiment(cfg: ExperimentConfig) -> Experiment:
    exp = cfg.experiment
    try:
        if exp == "tora":
            fp = ForeParams(**{k: cfg.param(k) for k in dataclasses.asdict(ForeParams())})
            plant = tora_plant(ToraParams(cfg.param("sigma")))
            ctrl, energy = make_example1_fore(fp)
            eps, rho0 = fp.eps, fp.rho0
        elif exp == "manipulator":
            mp = ManipulatorParams(
                **{k: cfg.param(k) for k in ("theta1", "theta2", "theta3", "g1", "g2", "varrho")},
                q_star=tuple(float(v) for v in cfg.param("q_star")),
            )
            plant = manipulator_plant(mp)
            ctrl, energy = manipulator_fore(2)
            eps, rho0 = cfg.param("synth_eps"), cfg.param("synth_rho0")
        elif exp == "sc_opt":
            obj = sc_generate(int(cfg.param("n_p")), int(cfg.param("p")), cfg.param("L"), cfg.param("r"), cfg.seed)
            plant = gradient_flow_plant(obj)
            ctrl, energy = optimization_fore(obj.n, cfg.param("K"))
            eps, rho0 = cfg.param("synth_eps"), cfg.param("synth_rho0")
        else:
            return _build_custom(cfg)
    except ConfigurationError as exc:
        raise ConfigError(f"params: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"params: {exc}") from None

    n = plant.n_p + ctrl.n_c
    if cfg.state is not None:
        state = cfg.state
    elif exp == "sc_opt":
        rng = np.random.default_rng(cfg.seed)
        state = np.concatenate([rng.standard_normal(plant.n_p), np.zeros(ctrl.n_c)])
    else:
        state = DEFAULT_STATE[exp]
    if len(state) != n:
        raise ConfigError(f"initial.state: expected {n} values, got {len(state)}")
    return Experiment(plant, ctrl, energy, _physical_to_state(plant, state), eps, rho0)


def _build_custom(cfg: ExperimentConfig) -> Experiment:
    """``params.factory = "module:callable"``; the callable takes the config and
    returns (plant, ctrl, energy, x0) with x0 in plant coordinates."""
    spec = cfg.param("factory")
    if not isinstance(spec, str) or ":" not in spec:
        raise ConfigError("params.factory: expected 'module:callable'")
    mod_name, attr = spec.split(":", 1)
    try:
        factory = getattr(importlib.import_module(mod_name), attr)
    except (ImportError, AttributeError) as exc:
        raise ConfigError(f"params.factory: cannot load {spec!r}: {exc}") from None
    plant, ctrl, energy, x0 = factory(cfg)
    x0 = np.asarray(cfg.state if cfg.state is not None else x0, dtype=float)
    return Experiment(plant, ctrl, energy, x0, 1e-2, 0.0)


def build_gamma(cfg: ExperimentConfig, ex: Experiment):
    if cfg.mode != "soft":
        return None
    kind, val = parse_gamma(cfg.gamma)
    if kind == "const":
        return val
    return SynthesizedGamma(ex.ctrl, ex.energy, val, ex.synth_eps, ex.synth_rho0)


# ------------------------------------------------------------------- outputs


def _fmt(v: float) -> str:
    return repr(float(v))


def trajectory_header(ex: Experiment) -> list[str]:
    names = list(ex.plant.meta.get("state_names", [f"xp{i + 1}" for i in range(ex.plant.n_p)]))
    names += [f"xc{i + 1}" for i in range(ex.ctrl.n_c)]
    outs = [f"y_p{i + 1}" for i in range(ex.plant.m_p)] + [f"y_c{i + 1}" for i in range(ex.ctrl.m_c)]
    return ["t"] + names + ["V_p", "V_c", "V", "phi"] + outs


def _write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8", newline="")


def write_outputs(out: Path, ex: Experiment, traj: Trajectory, summary: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    offset = np.zeros(traj.states.shape[1])
    offset[: ex.plant.n_p] = ex.plant.meta.get("offset", 0.0)
    phys = traj.states + offset
    cols = np.column_stack(
        [traj.times, phys, traj.V_p, traj.V_c, traj.V, traj.phi, traj.y_p, traj.y_c]
    ) if len(traj) else np.zeros((0, len(trajectory_header(ex))))
    _write_csv(out / "trajectory.csv", trajectory_header(ex), cols)
    dv = np.concatenate([[0.0], np.diff(traj.V)]) if len(traj) else np.zeros(0)
    _write_csv(
        out / "energy.csv",
        ["t", "V_p", "V_c", "V", "dV"],
        np.column_stack([traj.times, traj.V_p, traj.V_c, traj.V, dv]) if len(traj) else [],
    )
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _summarize(cfg: ExperimentConfig, ex: Experiment, traj: Trajectory) -> dict:
    summary: dict[str, Any] = {
        "experiment": cfg.experiment,
        "mode": cfg.mode,
        "gamma": cfg.gamma if cfg.mode == "soft" else None,
        "seed": cfg.seed,
        "status": traj.status,
        "message": traj.message,
        "samples": len(traj),
        "jump_count": traj.jump_count,
    }
    if len(traj):
        report = lyapunov_monitor(traj, cfg.tol_abs, cfg.tol_rel)
        summary.update(
            t_final=float(traj.times[-1]),
            final_state_norm=float(np.linalg.norm(traj.states[-1])),
            V_initial=float(traj.V[0]),
            V_final=float(traj.V[-1]),
            monitor={
                "max_violation": report.max_violation,
                "threshold": report.threshold,
                "flagged": report.flagged,
            },
        )
        if cfg.experiment == "sc_opt":
            g0, g1 = (np.linalg.norm(ex.plant.h_p(traj.x_p[i])) for i in (0, -1))
            summary.update(grad_norm_initial=float(g0), grad_norm_final=float(g1))
    return summary


@dataclass
class RunResult:
    exit_code: int
    traj: Trajectory | None
    summary: dict


def simulate(cfg: ExperimentConfig) -> tuple[Experiment, Trajectory, bool]:
    """Build and integrate; returns (experiment, trajectory, failed)."""
    ex = build_experiment(cfg)
    gamma = build_gamma(cfg, ex)
    try:
        if cfg.mode == "hard":
            traj = integrate_hard(ex.plant, ex.ctrl, cfg.integrator, cfg.hybrid, ex.x0, ex.energy)
        else:
            loop = interconnect(ex.plant, ex.ctrl, gamma, energy=ex.energy)
            traj = integrate_soft(loop, cfg.integrator, ex.x0)
    except IntegrationError as exc:
        return ex, exc.trajectory, True
    return ex, traj, False


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None) -> RunResult:
    """Run one experiment and write trajectory.csv, energy.csv and summary.json.

    Monitor flags never change the exit status; only integration failures do.
    Raises ConfigError for invalid configurations.
    """
    ex, traj, failed = simulate(cfg)
    summary = _summarize(cfg, ex, traj)
    write_outputs(Path(out if out is not None else cfg.out), ex, traj, summary)
    return RunResult(EXIT_INTEGRATION if failed else EXIT_OK, traj, summary)


# --------------------------------------------------------------------- sweep


def _parse_value(text: str):
    text = text.strip()
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def _check_param_name(cfg: ExperimentConfig, name: str) -> None:
    head, _, rest = name.partition(".")
    if not rest:
        ok = head in _TOP_KEYS - {"out"}
    elif head == "params":
        ok = rest in PARAM_DEFAULTS[cfg.experiment]
    elif head in ("integrator", "hybrid"):
        ok = rest in {f.name for f in dataclasses.fields(getattr(cfg, head))}
    else:
        ok = False
    if not ok:
        raise ConfigError(f"{name}: not a sweepable parameter")


def with_param(cfg: ExperimentConfig, name: str, value) -> ExperimentConfig:
    """Copy of ``cfg`` with a dotted parameter replaced, e.g. ``gamma``,
    ``params.sigma`` or ``integrator.boundary_layer``."""
    _check_param_name(cfg, name)
    head, _, rest = name.partition(".")
    if not rest:
        return dataclasses.replace(cfg, **{head: value})
    if head == "params":
        return dataclasses.replace(cfg, params={**cfg.params, rest: value})
    sub = getattr(cfg, head)
    try:
        return dataclasses.replace(cfg, **{head: dataclasses.replace(sub, **{rest: value})})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def _sweep_worker(args):
    cfg, parameter, value, out = args
    try:
        res = run_experiment(with_param(cfg, parameter, value), out)
    except ConfigError as exc:
        return None, {"status": "config_error", "message": str(exc)}
    t = res.traj
    return (t.times, t.V), res.summary | {"exit_code": res.exit_code}


def sweep(cfg: ExperimentConfig, parameter: str, values: list, out: str | Path | None = None, jobs: int = 1) -> dict:
    """One run per value (each in its own subdirectory) plus ``sweep.csv``:
    total energy V on a uniform time grid, one column per value.

    Failed runs keep their column (filled with nan where no data exists) and
    are listed in ``sweep.json``; the remaining runs proceed.
    """
    out = Path(out if out is not None else cfg.out)
    _check_param_name(cfg, parameter)
    tasks = [(cfg, parameter, v, out / f"{parameter}={v}") for v in values]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_worker, tasks))
    else:
        results = [_sweep_worker(a) for a in tasks]
    grid = np.linspace(0.0, cfg.integrator.t_end, cfg.sweep_points)
    cols, report = [grid], {}
    for v, (data, summary) in zip(values, results):
        col = np.full(grid.shape, np.nan)
        if data is not None and len(data[0]):
            times, V = data
            # jumps repeat a time stamp; keep the post-jump sample
            keep = np.append(np.diff(times) > 0, True)
            times, V = times[keep], V[keep]
            inside = grid <= times[-1]
            col[inside] = np.interp(grid[inside], times, V)
        cols.append(col)
        report[f"{parameter}={v}"] = summary
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "sweep.csv", ["t"] + [f"V[{parameter}={v}]" for v in values], np.column_stack(cols))
    (out / "sweep.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return report


# ----------------------------------------------------------------------- CLI


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="softreset", description="Soft-reset control experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="TOML experiment config")
    common.add_argument("--out", help="output directory (overrides config 'out')")
    common.add_argument("--seed", type=int, help="random seed (overrides config 'seed')")
    common.add_argument("--quiet", action="store_true", help="suppress the summary printout")
    sub.add_parser("run", parents=[common], help="run one experiment")
    sp = sub.add_parser("sweep", parents=[common], help="sweep one parameter")
    sp.add_argument("--param", required=True, help="dotted parameter name, e.g. gamma or params.sigma")
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = with_param(cfg, "seed", args.seed)
        out = args.out or cfg.out
        if args.command == "run":
            res = run_experiment(cfg, out)
            if not args.quiet:
                print(json.dumps(res.summary, indent=2, sort_keys=True))
            if res.exit_code:
                print(f"integration failed: {res.summary['message']}", file=sys.stderr)
            return res.exit_code
        values = [_parse_value(v) for v in args.values.split(",") if v.strip()]
        if not values:
            raise ConfigError("--values: no values given")
        report = sweep(cfg, args.param, values, out, args.jobs)
        if not args.quiet:
            for key, s in report.items():
                print(f"{key}: status={s.get('status')} V_final={s.get('V_final')}")
        failed = any(s.get("exit_code", EXIT_CONFIG) != EXIT_OK for s in report.values())
        return EXIT_INTEGRATION if failed else EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
