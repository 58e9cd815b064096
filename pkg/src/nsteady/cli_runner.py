"""Command-line entry point.

``nsteady <solve|evolve|analyze|norms|experiment NAME> --config PATH
[--output DIR] [--seed U64]``

The whole configuration is parsed and validated before anything is written,
so a bad config leaves no files behind.  Each run writes ``manifest.json``
(config echo, versions, norms, artifact digests), CSV series, NSF1 snapshots
and a separate ``timings.json``; everything except the timings is a
deterministic function of the config and seed.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import asymptotics as asy
from .evolution import EvolutionConfig, EvolutionError, evolve
from .forcing import KINDS, ForceSpec, PreconditionError, compute_U0, force_spectrum
from .lorentz_norms import NormReport, lebesgue_norm, lorentz_norm
from .snapshot import SnapshotError, write_snapshot
from .spectral_core import Grid, SpectralVectorField
from .steady_solver import NonConvergenceError, PicardConfig, lp_norm_sweep, picard_solve, steady_residual

__all__ = ["EXIT_CODES", "ConfigError", "RunConfig", "load_config", "main", "run"]

FORMAT_VERSION = 1
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_PRECONDITION = 4
EXIT_NONCONVERGENCE = 5
EXIT_GUARD = 6
EXIT_EVOLUTION = 7
EXIT_EXPERIMENT_FAILED = 8
EXIT_CODES = {
    "ok": EXIT_OK,
    "usage": EXIT_USAGE,
    "config": EXIT_CONFIG,
    "precondition": EXIT_PRECONDITION,
    "nonconvergence": EXIT_NONCONVERGENCE,
    "analysis_guard": EXIT_GUARD,
    "evolution_abort": EXIT_EVOLUTION,
    "experiment_failed": EXIT_EXPERIMENT_FAILED,
}
U64_MAX = 2**64 - 1


class ConfigError(ValueError):
    """The configuration file cannot be parsed or is inconsistent."""


_SCHEMA = {
    "run": {"name": str, "seed": int, "output_dir": str},
    "grid": {"n": int, "L": float},
    "force": {
        "kind": str, "amplitude": float, "direction": "vec3", "width": float, "k_inner": float,
        "k_outer": float, "seed": int, "blobs": int, "path": str,
    },
    "solver": {"max_iters": int, "tol_rel": float, "norm_for_contraction": str, "safeguard": bool, "growth_slack": float},
    "analysis": {
        "norm_p": "floats", "shell_window": "floats", "n_shells": int, "shell_stat": str, "profile": bool,
        "directional_floor": bool, "save_fields": bool,
    },
    "evolution": {
        "dt": float, "t_final": float, "scheme": str, "snapshot_times": "floats", "cfl_safety": float,
        "q_norms": "floats", "initial": str, "perturbation": str, "perturbation_amplitude": float,
        "perturbation_width": float, "save_snapshots": bool,
    },
}
_REQUIRED = {"grid": ("n", "L"), "force": ("kind",)}
_INITIAL = ("steady", "zero", "u0")
_PERTURBATIONS = ("none", "gaussian_bump", "degree_minus_one", "l32_bump")


def _convert(section, key, raw, kind):
    try:
        if kind is str:
            return raw.strip()
        if kind is int:
            return int(raw, 0)
        if kind is float:
            v = float(raw)
            if not np.isfinite(v):
                raise ValueError("not finite")
            return v
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError("expected a boolean")
        items = [float(x) for x in raw.replace(";", ",").split(",") if x.strip()]
        if kind == "vec3" and len(items) != 3:
            raise ValueError("expected three comma-separated numbers")
        return tuple(items)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None


@dataclass
class RunConfig:
    """Validated configuration; ``echo`` is the canonical dict stored in the manifest."""

    grid: Grid
    force: ForceSpec
    solver: PicardConfig
    analysis: dict
    evolution: dict | None
    run: dict
    echo: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return int(self.run["seed"])


def load_config(path, seed: int | None = None) -> RunConfig:
    """Parse and validate a config file.

    Raises
    ------
    ConfigError
        On syntax errors, unknown sections or keys, malformed values or
        missing required keys.
    PreconditionError
        When well-formed settings are inconsistent with one another, e.g. an
        annulus outside the dealiasing sphere of the configured grid.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from None
    data: dict[str, dict] = {}
    for sec in cp.sections():
        if sec not in _SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        data[sec] = {}
        for key, raw in cp.items(sec):
            if key not in _SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            data[sec][key] = _convert(sec, key, raw, _SCHEMA[sec][key])
    for sec, keys in _REQUIRED.items():
        for k in keys:
            if k not in data.get(sec, {}):
                raise ConfigError(f"missing required key [{sec}] {k}")
    run = {"name": Path(path).stem, "seed": 0, **data.get("run", {})}
    if seed is not None:
        run["seed"] = seed
    if not 0 <= int(run["seed"]) <= U64_MAX:
        raise ConfigError(f"seed {run['seed']} is not an unsigned 64-bit integer")
    try:
        grid = Grid(data["grid"]["n"], data["grid"]["L"])
    except ValueError as exc:
        raise ConfigError(f"[grid] {exc}") from None
    fd = dict(data["force"])
    if fd["kind"] not in KINDS:
        raise ConfigError(f"[force] kind must be one of {KINDS}, got {fd['kind']!r}")
    if seed is not None or "seed" not in fd:
        fd["seed"] = int(run["seed"])
    try:
        force = ForceSpec(**fd)
        solver = PicardConfig(**data.get("solver", {}))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{exc}") from None
    # cross-section consistency: a precondition, but still checked before any output exists
    force.check(grid)
    if force.kind == "custom_snapshot" and not Path(force.path).is_file():
        raise PreconditionError(f"force snapshot {force.path!r} does not exist")
    an = {
        "norm_p": (2.0, 2.5, 3.0, 4.0, 6.0),
        "shell_window": (min(5.0, grid.L / 8), grid.L / 4),
        "n_shells": 8,
        "shell_stat": "max",
        "profile": True,
        "directional_floor": True,
        "save_fields": True,
        **data.get("analysis", {}),
    }
    if len(an["shell_window"]) != 2:
        raise ConfigError("[analysis] shell_window needs two radii")
    if an["shell_stat"] not in ("max", "l2_mean"):
        raise ConfigError("[analysis] shell_stat must be max or l2_mean")
    bad_p = [p for p in an["norm_p"] if not p > 1.5]
    if bad_p:
        raise PreconditionError(f"norm exponents {bad_p} are not admissible; steady solutions need p > 3/2")
    r0, r1 = an["shell_window"]
    if not 0 < r0 < r1 <= grid.L / 4 * (1 + 1e-12):
        raise PreconditionError(f"shell window ({r0}, {r1}) must satisfy 0 < r_min < r_max <= L/4 = {grid.L / 4:g}")
    evo = None
    if "evolution" in data:
        evo = {
            "scheme": "etdrk2", "snapshot_times": (), "cfl_safety": 0.9, "q_norms": (), "initial": "steady",
            "perturbation": "none", "perturbation_amplitude": 1.0, "perturbation_width": 1.0,
            "save_snapshots": True, **data["evolution"],
        }
        for k in ("dt", "t_final"):
            if k not in evo:
                raise ConfigError(f"missing required key [evolution] {k}")
        if evo["initial"] not in _INITIAL:
            raise ConfigError(f"[evolution] initial must be one of {_INITIAL}")
        if evo["perturbation"] not in _PERTURBATIONS:
            raise ConfigError(f"[evolution] perturbation must be one of {_PERTURBATIONS}")
        try:
            _evolution_config(evo)
        except ValueError as exc:
            raise ConfigError(f"[evolution] {exc}") from None
    echo = {
        "run": run,
        "grid": {"n": grid.n, "L": grid.L},
        "force": {k: (list(v) if isinstance(v, tuple) else v) for k, v in force.__dict__.items()},
        "solver": dict(solver.__dict__),
        "analysis": {k: (list(v) if isinstance(v, tuple) else v) for k, v in an.items()},
        "evolution": None if evo is None else {k: (list(v) if isinstance(v, tuple) else v) for k, v in evo.items()},
    }
    return RunConfig(grid, force, solver, an, evo, run, echo)


def _evolution_config(evo: dict) -> EvolutionConfig:
    return EvolutionConfig(
        dt=evo["dt"], t_final=evo["t_final"], scheme=evo["scheme"], snapshot_times=tuple(evo["snapshot_times"]),
        cfl_safety=evo["cfl_safety"], q_norms=tuple(evo["q_norms"]), keep_fields=False,
    )


class _Run:
    """Artifact bookkeeping for one invocation."""

    def __init__(self, out: Path, command: str, cfg: RunConfig | None):
        self.out = out
        self.command = command
        self.cfg = cfg
        self.norms: list[dict] = []
        self.results: dict = {}
        self.artifacts: list[str] = []
        self.timings: dict[str, float] = {}
        self._t = time.perf_counter()

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        if name not in self.artifacts:
            self.artifacts.append(name)
        return self.out / name

    def stage(self, name: str):
        now = time.perf_counter()
        self.timings[name] = now - self._t
        self._t = now

    def add_norms(self, reports, **tags):
        for r in reports:
            if isinstance(r, NormReport):
                d = r.to_dict()
                d.update({k: v for k, v in r.notes.items() if isinstance(v, (str, int, float, bool))})
            else:
                d = dict(r)
            d.update(tags)
            self.norms.append(d)

    def write_manifest(self, status: str, error: dict | None = None):
        self.out.mkdir(parents=True, exist_ok=True)
        digests = {}
        for name in sorted(self.artifacts):
            p = self.out / name
            if p.exists():
                digests[name] = hashlib.sha256(p.read_bytes()).hexdigest()
        versions = {
            "nsteady": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        }
        config = None if self.cfg is None else self.cfg.echo
        ident = json.dumps({"command": self.command, "config": config, "versions": versions}, sort_keys=True)
        manifest = {
            "format_version": FORMAT_VERSION,
            "status": status,
            "command": self.command,
            "run_hash": hashlib.sha1(ident.encode()).hexdigest(),
            "config": config,
            "versions": versions,
            "norms": self.norms,
            "results": self.results,
            "artifacts": digests,
        }
        if error is not None:
            manifest["error"] = error
        _atomic_json(self.out / "manifest.json", manifest)
        _atomic_json(self.out / "timings.json", {"stages": self.timings, "unit": "seconds"})


def _atomic_json(path: Path, obj) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n")
    os.replace(tmp, path)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _force(cfg: RunConfig) -> SpectralVectorField:
    try:
        return force_spectrum(cfg.force, cfg.grid)
    except OSError as exc:
        raise PreconditionError(f"cannot read force snapshot: {exc}") from None


def _solve(rec: _Run, cfg: RunConfig):
    F = _force(cfg)
    U0 = compute_U0(F)
    rec.stage("force")
    try:
        U, trace = picard_solve(U0, cfg.solver)
    except NonConvergenceError as exc:
        exc.trace.to_csv(rec.path("picard_trace.csv"))
        rec.results["picard"] = _trace_summary(exc.trace)
        raise
    rec.stage("picard")
    trace.to_csv(rec.path("picard_trace.csv"))
    rec.results["picard"] = _trace_summary(trace)
    rec.add_norms(steady_residual(U, U0), field="residual")
    for name, fld in (("U", U), ("U0", U0), ("force", F)):
        rec.add_norms([lorentz_norm(fld, 3.0), lebesgue_norm(fld, 2.0)], field=name)
    if cfg.analysis.get("save_fields", True):
        write_snapshot(U, rec.path("U.nsf1"))
        write_snapshot(U0, rec.path("U0.nsf1"))
        write_snapshot(F, rec.path("force.nsf1"))
    return F, U0, U


def _trace_summary(tr) -> dict:
    return {
        "converged": tr.converged,
        "reason": tr.reason,
        "iterations": tr.iterations,
        "u0_weak3": tr.u0_weak3,
        "max_growth": tr.max_growth(),
        "contraction_rate": tr.contraction_rate(1),
        "final_increment": tr.increments[-1] if tr.increments else None,
    }


def _norms(rec: _Run, cfg: RunConfig, U, U0):
    reps = lp_norm_sweep(U, cfg.analysis["norm_p"], U0)
    rec.add_norms(reps, stage="norm_sweep")
    with open(rec.path("norms.csv"), "w") as fh:
        fh.write("field,space,p,q,value\n")
        for r in reps:
            q = "" if r.q_or_theta is None else repr(r.q_or_theta)
            fh.write(f"{r.notes.get('field', '')},{r.space},{r.p!r},{q},{r.value!r}\n")
    rec.stage("norms")


def _analyze(rec: _Run, cfg: RunConfig, U, U0):
    an = cfg.analysis
    r0, r1 = an["shell_window"]
    res = {}
    for name, fld in (("U", U), ("U0", U0)):
        fit = asy.shell_decay_fit(fld, r0, r1, an["n_shells"], an["shell_stat"])
        fit.write_profile(rec.path(f"shell_{name}.csv"))
        res[f"shell_fit_{name}"] = fit.to_dict()
    M = asy.momentum_matrix(U)
    res["momentum_matrix"] = M.tolist()
    if np.linalg.norm(M.entries) > 0:
        res["anisotropy_deviation"] = asy.anisotropy_deviation(M)
    if an["profile"]:
        _, fit = asy.profile_residual(U, U0, M, r0, r1, an["n_shells"], an["shell_stat"])
        fit.write_profile(rec.path("shell_residual.csv"))
        res["profile_residual_fit"] = fit.to_dict()
    if an["directional_floor"]:
        frac, floor = asy.directional_floor_fraction(U, r0, r1)
        res["directional_floor"] = {"fraction": frac, "floor": floor}
    rec.results["analysis"] = res
    rec.stage("analysis")


def _evolve(rec: _Run, cfg: RunConfig, F, U0, U):
    from . import perturbations as pert

    evo = cfg.evolution
    if evo is None:
        raise PreconditionError("the evolve command needs an [evolution] section")
    g = cfg.grid
    base = {"steady": U, "zero": SpectralVectorField.zeros(g), "u0": U0}[evo["initial"]]
    kind, amp, width = evo["perturbation"], evo["perturbation_amplitude"], evo["perturbation_width"]
    if kind == "gaussian_bump":
        base = base + pert.gaussian_bump(g, amp, width)
    elif kind == "degree_minus_one":
        base = base + pert.degree_minus_one(g, amp)
    elif kind == "l32_bump":
        base = base + pert.l32_bump(g, amp)
    ecfg = _evolution_config(evo)
    ecfg = EvolutionConfig(**{**ecfg.__dict__, "keep_fields": bool(evo["save_snapshots"])})
    try:
        traj = evolve(base, F, ecfg, reference=U)
    except EvolutionError as exc:
        exc.trajectory.to_csv(rec.path("trajectory.csv"))
        raise
    traj.to_csv(rec.path("trajectory.csv"))
    for i, (t, fld) in enumerate(traj.snapshots):
        write_snapshot(fld, rec.path(f"snapshot_{i:04d}.nsf1"))
    rec.results["evolution"] = {
        "steps": traj.steps, "max_cfl": traj.max_cfl, "times": traj.times,
        "final": {k: v[-1] for k, v in traj.series.items()},
    }
    rec.stage("evolution")


def _experiment(rec: _Run, name: str):
    from .experiments import run_experiment

    res = run_experiment(name)
    d = res.to_dict()
    _atomic_json(rec.path("experiment.json"), d)
    rec.results["experiment"] = d
    rec.stage(f"experiment:{name}")
    return res


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nsteady", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("solve", "evolve", "analyze", "norms", "experiment"):
        sp = sub.add_parser(name)
        if name == "experiment":
            sp.add_argument("name")
        sp.add_argument("--config", required=name != "experiment")
        sp.add_argument("--output")
        sp.add_argument("--seed", type=_u64)
    return p


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError(f"{text} is outside the unsigned 64-bit range")
    return v


def run(argv=None) -> int:
    """Execute one command; returns the process exit status."""
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    cfg = None
    if args.config is not None:
        try:
            cfg = load_config(args.config, args.seed)
        except ConfigError as exc:
            print(f"nsteady: config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except PreconditionError as exc:
            print(f"nsteady: precondition violated: {exc}", file=sys.stderr)
            return EXIT_PRECONDITION
    if args.command == "experiment":
        from .experiments import EXPERIMENTS

        if args.name not in EXPERIMENTS:
            print(f"nsteady: unknown experiment {args.name!r}; available: {', '.join(sorted(EXPERIMENTS))}", file=sys.stderr)
            return EXIT_USAGE
    if args.output:
        out = Path(args.output)
    elif cfg is not None and "output_dir" in cfg.run:
        out = Path(cfg.run["output_dir"])
    else:
        label = args.name if args.command == "experiment" else cfg.run["name"]
        out = Path("nsteady_out") / label
    rec = _Run(out, args.command if args.command != "experiment" else f"experiment {args.name}", cfg)
    code, err = EXIT_OK, None
    try:
        if args.command == "experiment":
            res = _experiment(rec, args.name)
            print(f"{args.name}: {res.summary()}")
            if not res.passed:
                code = EXIT_EXPERIMENT_FAILED
        else:
            F, U0, U = _solve(rec, cfg)
            if args.command in ("norms", "analyze"):
                _norms(rec, cfg, U, U0)
            if args.command == "analyze":
                _analyze(rec, cfg, U, U0)
            if args.command == "evolve":
                _evolve(rec, cfg, F, U0, U)
    except (PreconditionError, SnapshotError) as exc:
        code, err = EXIT_PRECONDITION, exc
    except NonConvergenceError as exc:
        code, err = EXIT_NONCONVERGENCE, exc
    except asy.AnalysisGuardError as exc:
        code, err = EXIT_GUARD, exc
    except EvolutionError as exc:
        code, err = EXIT_EVOLUTION, exc
    status = "ok" if code == EXIT_OK else ("failed" if err is None else "error")
    error = None if err is None else {"type": type(err).__name__, "message": str(err), "exit_code": code}
    rec.write_manifest(status, error)
    if err is not None:
        print(f"nsteady: {type(err).__name__}: {err}", file=sys.stderr)
    return code


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
