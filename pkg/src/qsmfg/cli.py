"""Config-driven experiment runner: run, validate, and sweep subcommands.

Configs are single JSON files; outputs are data-only (CSV, compact binary,
summary JSON) for external plotting.  Exit codes: 0 success, 2 config error,
3 solver non-convergence (logs are still written).
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from .coupling import (
    CouplingConfig,
    TrajectorySolution,
    regularity_report,
    solve_system,
)
from .fp import FpTrajectory, trajectory_to_binary, trajectory_to_csv
from .grid import Grid, field_to_csv
from .measure import (
    DensityField,
    set_transport_limits,
    two_bump_density,
    uniform_density,
    von_mises_density,
)
from .model import MODEL_BUILDERS, build_model, check_model

__all__ = ["RunConfig", "ConfigError", "load_config", "run", "validate", "sweep", "main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_CONVERGENCE = 3


class ConfigError(ValueError):
    def __init__(self, field_name: str, reason: str):
        super().__init__(f"config field {field_name!r}: {reason}")
        self.field_name = field_name
        self.reason = reason


@dataclass(frozen=True)
class RunConfig:
    """Validated run description, deserialized from a JSON config file."""

    model_name: str
    model_params: dict
    d: int
    n: int
    T: float
    dt: float
    mode: str  # "discounted" | "ergodic"
    strategy: str  # "gamma" | "psi"
    rho: float = 1.0
    rho_sequence: tuple[float, ...] = ()
    outer_tol: float = 1e-8
    inner_tol: float = 1e-9
    hjb_tol: float = 1e-11
    ergodic_tol: float = 1e-4
    damping: float = 0.5
    max_outer: int = 40
    full_sequence: bool = False
    m0_kind: str = "uniform"
    m0_params: dict = field(default_factory=dict)
    output_dir: str = "out"
    diagnostics: bool = False
    seed: int = 0
    ot_atom_cap: int | None = None
    ot_lp_maxiter: int | None = None

    def coupling_config(self) -> CouplingConfig:
        return CouplingConfig(
            T=self.T,
            dt=self.dt,
            rho=self.rho,
            outer_tol=self.outer_tol,
            max_outer=self.max_outer,
            damping=self.damping,
            inner_tol=self.inner_tol,
            hjb_tol=self.hjb_tol,
            strategy=self.strategy,
            rho_sequence=self.rho_sequence,
            ergodic_tol=self.ergodic_tol,
            full_sequence=self.full_sequence,
        )


def _require(payload: dict, key: str, kind, where: str):
    if key not in payload:
        raise ConfigError(f"{where}.{key}" if where else key, "missing")
    value = payload[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(f"{where}.{key}" if where else key, f"expected {kind.__name__}")
    return value


def parse_config(payload: dict) -> RunConfig:
    model = _require(payload, "model", dict, "")
    name = _require(model, "name", str, "model")
    if name not in MODEL_BUILDERS:
        raise ConfigError("model.name", f"unknown model {name!r}; choose from {sorted(MODEL_BUILDERS)}")
    params = dict(model.get("params", {}))
    if "d" in params:
        raise ConfigError("model.params.d", "the dimension is set through grid.d")

    grid_cfg = _require(payload, "grid", dict, "")
    d = _require(grid_cfg, "d", int, "grid")
    n = _require(grid_cfg, "n", int, "grid")
    if d not in (1, 2):
        raise ConfigError("grid.d", "must be 1 or 2")
    if n < 8:
        raise ConfigError("grid.n", "must be at least 8")

    time_cfg = _require(payload, "time", dict, "")
    T = _require(time_cfg, "T", float, "time")
    dt = _require(time_cfg, "dt", float, "time")
    if T <= 0:
        raise ConfigError("time.T", "must be positive")
    if dt <= 0:
        raise ConfigError("time.dt", "must be positive")
    if abs(round(T / dt) * dt - T) > 1e-9 * max(1.0, T):
        raise ConfigError("time.dt", "T must be an integer multiple of dt")

    mode = payload.get("mode", "discounted")
    if mode not in ("discounted", "ergodic"):
        raise ConfigError("mode", "must be 'discounted' or 'ergodic'")
    strategy = payload.get("strategy", "gamma")
    if strategy not in ("gamma", "psi"):
        raise ConfigError("strategy", "must be 'gamma' or 'psi'")
    if name == "example2" and strategy != "psi":
        raise ConfigError("strategy", "history models require strategy 'psi'")

    rho = float(payload.get("rho", 1.0))
    if mode == "discounted" and rho <= 0:
        raise ConfigError("rho", "discounted mode requires rho > 0")

    rho_sequence: tuple[float, ...] = ()
    if mode == "ergodic":
        seq_cfg = payload.get("rho_sequence")
        if seq_cfg is None:
            raise ConfigError("rho_sequence", "required in ergodic mode")
        if isinstance(seq_cfg, list):
            rho_sequence = tuple(float(r) for r in seq_cfg)
        elif isinstance(seq_cfg, dict):
            rho0 = float(seq_cfg.get("rho0", 1.0))
            factor = float(seq_cfg.get("factor", 0.5))
            count = int(seq_cfg.get("count", 10))
            if not (0 < factor < 1):
                raise ConfigError("rho_sequence.factor", "must lie in (0, 1)")
            if count < 2:
                raise ConfigError("rho_sequence.count", "must be at least 2")
            rho_sequence = tuple(rho0 * factor**k for k in range(count))
        else:
            raise ConfigError("rho_sequence", "must be a list or a {rho0, factor, count} object")
        if any(r <= 0 for r in rho_sequence):
            raise ConfigError("rho_sequence", "all discounts must be positive")

    tols = payload.get("tolerances", {})
    for key in tols:
        if key not in ("outer", "inner", "hjb", "ergodic"):
            raise ConfigError(f"tolerances.{key}", "unknown tolerance")
        if float(tols[key]) <= 0:
            raise ConfigError(f"tolerances.{key}", "must be positive")
    damping = float(payload.get("damping", 0.5))
    if not (0 < damping <= 1):
        raise ConfigError("damping", "must lie in (0, 1]")
    max_outer = int(payload.get("max_outer", 40))
    if max_outer < 1:
        raise ConfigError("max_outer", "must be at least 1")

    m0_cfg = payload.get("m0", {"kind": "uniform"})
    m0_kind = m0_cfg.get("kind", "uniform")
    if m0_kind not in ("uniform", "vonmises", "twobump"):
        raise ConfigError("m0.kind", "must be 'uniform', 'vonmises', or 'twobump'")

    ot_cfg = payload.get("ot", {})
    for key in ot_cfg:
        if key not in ("atom_cap", "lp_maxiter"):
            raise ConfigError(f"ot.{key}", "unknown transport limit")
        if int(ot_cfg[key]) < 1:
            raise ConfigError(f"ot.{key}", "must be a positive integer")

    return RunConfig(
        model_name=name,
        model_params=params,
        d=d,
        n=n,
        T=T,
        dt=dt,
        mode=mode,
        strategy=strategy,
        rho=rho,
        rho_sequence=rho_sequence,
        outer_tol=float(tols.get("outer", 1e-8)),
        inner_tol=float(tols.get("inner", 1e-9)),
        hjb_tol=float(tols.get("hjb", 1e-11)),
        ergodic_tol=float(tols.get("ergodic", 1e-4)),
        damping=damping,
        max_outer=max_outer,
        full_sequence=bool(payload.get("full_sequence", False)),
        m0_kind=m0_kind,
        m0_params={k: v for k, v in m0_cfg.items() if k != "kind"},
        output_dir=str(payload.get("output_dir", "out")),
        diagnostics=bool(payload.get("diagnostics", False)),
        seed=int(payload.get("seed", 0)),
        ot_atom_cap=int(ot_cfg["atom_cap"]) if "atom_cap" in ot_cfg else None,
        ot_lp_maxiter=int(ot_cfg["lp_maxiter"]) if "lp_maxiter" in ot_cfg else None,
    )


def load_config(path: str) -> RunConfig:
    try:
        payload = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError("path", f"config file {path!r} not found")
    except json.JSONDecodeError as exc:
        raise ConfigError("json", f"config is not valid JSON: {exc}")
    return parse_config(payload)


def build_initial_density(cfg: RunConfig, grid: Grid) -> DensityField:
    if cfg.m0_kind == "uniform":
        return uniform_density(grid)
    if cfg.m0_kind == "vonmises":
        return von_mises_density(
            grid,
            center=cfg.m0_params.get("center", 0.5),
            concentration=cfg.m0_params.get("concentration", 4.0),
        )
    return two_bump_density(
        grid,
        centers=tuple(cfg.m0_params.get("centers", (0.25, 0.75))),
        concentration=cfg.m0_params.get("concentration", 6.0),
    )


def _write_outputs(cfg: RunConfig, sol: TrajectorySolution, out: Path, elapsed: float) -> None:
    out.mkdir(parents=True, exist_ok=True)
    grid = sol.m[0].grid
    traj = FpTrajectory(
        grid=grid,
        dt=cfg.dt,
        times=sol.times,
        densities=sol.m,
        drifts=sol.drifts,
    )
    trajectory_to_csv(traj, str(out / "trajectory_m.csv"))
    trajectory_to_binary(traj, str(out / "trajectory_m.bin"))
    with open(out / "trajectory_u.csv", "w", encoding="ascii") as fh:
        fh.write("t,node,value\n")
        for j, u in enumerate(sol.u):
            for node, v in enumerate(u.flat()):
                fh.write(f"{format(sol.times[j], '.17g')},{node},{format(v, '.17g')}\n")
    with open(out / "convergence.csv", "w", encoding="ascii") as fh:
        fh.write("iteration,outer_error,component_errors\n")
        for row in sol.outer_errors:
            comps = ";".join(format(v, ".17g") for v in row[2:])
            fh.write(f"{row[0]},{format(row[1], '.17g')},{comps}\n")
    with open(out / "mu.csv", "w", encoding="ascii") as fh:
        d = sol.mu[0].x.shape[1]
        k = sol.mu[0].a.shape[1]
        cols = ["t"] + [f"x{i}" for i in range(d)] + [f"a{i}" for i in range(k)] + ["w"]
        fh.write(",".join(cols) + "\n")
        for j, nu in enumerate(sol.mu):
            t = format(sol.times[j], ".17g")
            for i in range(nu.n_atoms):
                row = [t]
                row += [format(v, ".17g") for v in nu.x[i]]
                row += [format(v, ".17g") for v in nu.a[i]]
                row.append(format(nu.w[i], ".17g"))
                fh.write(",".join(row) + "\n")
    if sol.lam is not None:
        with open(out / "lambda.csv", "w", encoding="ascii") as fh:
            fh.write("t,lambda\n")
            for t, lam in zip(sol.times, sol.lam):
                fh.write(f"{format(t, '.17g')},{format(lam, '.17g')}\n")
    if cfg.diagnostics:
        field_to_csv(sol.u[-1], str(out / "u_final.csv"))
        histories = sol.diagnostics.get("hjb_residual_histories", ())
        with open(out / "hjb_residuals.csv", "w", encoding="ascii") as fh:
            fh.write("t,iteration,residual\n")
            for j, hist in enumerate(histories):
                for it, res in enumerate(hist, start=1):
                    fh.write(f"{format(sol.times[j], '.17g')},{it},{format(res, '.17g')}\n")

    spec = build_model(cfg.model_name, d=cfg.d, **cfg.model_params)
    kset = regularity_report(sol, spec=spec, rho=cfg.rho if cfg.mode == "discounted" else None, seed=cfg.seed)
    summary = {
        "model": cfg.model_name,
        "mode": cfg.mode,
        "strategy": cfg.strategy,
        "converged": bool(sol.converged),
        "outer_iterations": int(sol.diagnostics.get("outer_iterations", 0)),
        "final_outer_error": sol.diagnostics.get("final_outer_error"),
        "hjb_residual_max": float(sol.hjb_residuals.max()) if sol.hjb_residuals.size else None,
        "mu_residual_max": float(sol.mu_residuals.max()) if sol.mu_residuals.size else None,
        "mass_error_max": max(abs(m.mass() - 1.0) for m in sol.m),
        "empirical_constants": kset,
        "ergodic": {
            key: sol.diagnostics.get(key)
            for key in ("rho_sequence", "increments", "direct_gap_max", "achieved_increment")
            if key in sol.diagnostics
        },
        "timing_seconds": elapsed,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))


def run(config_path: str) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    started = time.perf_counter()
    set_transport_limits(cfg.ot_atom_cap, cfg.ot_lp_maxiter)
    grid = Grid(cfg.d, cfg.n)
    spec = build_model(cfg.model_name, d=cfg.d, **cfg.model_params)
    m0 = build_initial_density(cfg, grid)
    sol = solve_system(spec, m0, cfg.coupling_config(), mode=cfg.mode)
    elapsed = time.perf_counter() - started
    _write_outputs(cfg, sol, Path(cfg.output_dir), elapsed)
    if not sol.converged:
        print("warning: solver did not reach the outer tolerance; logs written", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    print(f"ok: {cfg.mode}/{cfg.strategy} run converged; outputs in {cfg.output_dir}")
    return EXIT_OK


def validate(config_path: str) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    grid = Grid(cfg.d, cfg.n)
    spec = build_model(cfg.model_name, d=cfg.d, **cfg.model_params)
    report = check_model(spec, grid, seed=cfg.seed)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def _set_path(payload: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = payload
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def sweep(config_path: str) -> int:
    """Cartesian sweep: the config carries a "sweep" object mapping dotted
    parameter paths to value lists; one summary row is emitted per point."""
    try:
        payload = json.loads(Path(config_path).read_text())
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    sweep_spec = payload.pop("sweep", None)
    if not sweep_spec:
        print("error: config field 'sweep': missing or empty", file=sys.stderr)
        return EXIT_CONFIG
    keys = sorted(sweep_spec)
    base_out = Path(payload.get("output_dir", "out"))
    rows = []
    any_failed = False
    for combo in itertools.product(*(sweep_spec[k] for k in keys)):
        point = json.loads(json.dumps(payload))  # deep copy
        tag = "_".join(f"{k.split('.')[-1]}={v}" for k, v in zip(keys, combo))
        for k, v in zip(keys, combo):
            _set_path(point, k, v)
        point["output_dir"] = str(base_out / tag)
        try:
            cfg = parse_config(point)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        started = time.perf_counter()
        grid = Grid(cfg.d, cfg.n)
        spec = build_model(cfg.model_name, d=cfg.d, **cfg.model_params)
        m0 = build_initial_density(cfg, grid)
        sol = solve_system(spec, m0, cfg.coupling_config(), mode=cfg.mode)
        elapsed = time.perf_counter() - started
        _write_outputs(cfg, sol, Path(cfg.output_dir), elapsed)
        any_failed |= not sol.converged
        rows.append(
            {
                "point": tag,
                "converged": bool(sol.converged),
                "outer_iterations": int(sol.diagnostics.get("outer_iterations", 0)),
                "final_outer_error": sol.diagnostics.get("final_outer_error"),
            }
        )
    base_out.mkdir(parents=True, exist_ok=True)
    with open(base_out / "sweep_summary.csv", "w", encoding="ascii") as fh:
        fh.write("point,converged,outer_iterations,final_outer_error\n")
        for r in rows:
            fh.write(
                f"{r['point']},{int(r['converged'])},{r['outer_iterations']},"
                f"{format(r['final_outer_error'], '.17g')}\n"
            )
    print(f"sweep finished: {len(rows)} points, summary in {base_out / 'sweep_summary.csv'}")
    return EXIT_NO_CONVERGENCE if any_failed else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="qsmfg",
        description="Quasi-stationary mean field games of controls: solvers and diagnostics",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "execute the solve described by a JSON config"),
        ("validate", "run the model spot-checks without solving"),
        ("sweep", "Cartesian parameter sweep over a base config"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="path to the JSON config file")
    args = parser.parse_args(argv)
    if args.command == "run":
        return run(args.config)
    if args.command == "validate":
        return validate(args.config)
    return sweep(args.config)


if __name__ == "__main__":
    sys.exit(main())
