"""Command-line front end.

Every subcommand that writes files also writes ``manifest.json`` next to
them.  ``epild replay manifest.json --out DIR`` reruns the recorded
command into ``DIR``; stochastic outputs depend only on the recorded
settings, so the CSV files come out byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import __version__
from .config import MODEL_KINDS, build_model, model_params, parse_vector, read_config, resolve_x0
from .errors import EpildError
from .fluid import integrate_ode, lln_distance, write_ode_csv
from .model import JumpModel, SirsParams
from .quasipotential import (
    DEFAULT_J,
    DEFAULT_T_GRID,
    _InfectedAbove,
    fit_exit_scaling,
    v_fixed_horizon,
    v_free_horizon,
    vbar_eta_extrapolation,
)
from .ratefn import PLPath, local_rate_dual, local_rate_primal, path_rate
from .rng import SEED_ENV, resolve_seed
from .simulate import (
    SimConfig,
    estimate_direct,
    estimate_tilted,
    exit_time,
    fmt,
    run_replicas,
    simulate_exact,
    write_trajectory_csv,
)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

DEFAULTS = {
    "model": "sirs",
    "t": 5.0,
    "replicas": 1,
    "threads": 1,
    "max_jumps": 10**7,
    "x0": "endemic",
    "out": "epild-out",
    "quad_order": 16,
    "j": DEFAULT_J,
    "boundary_samples": 5,
    "eta": "0.02,0.01,0.005",
    "exit_eta": 0.0,
    "t_grid": ",".join(format(t, "g") for t in DEFAULT_T_GRID),
    "method": "dual",
    "gradient": "envelope",
    "min_jumps": 1,
    "replicas_direct": 10**4,
    "replicas_tilted": 10**3,
}


class UsageError(Exception):
    pass


class Settings:
    """Resolved values with CLI > config file > defaults precedence."""

    def __init__(self, args: argparse.Namespace):
        self._args = vars(args)
        self._file = read_config(args.config) if getattr(args, "config", None) else {}
        self.echo: dict[str, object] = {}

    def get(self, key: str, cast=str, required: bool = False):
        v = self._args.get(key)
        if v is None:
            v = self._file.get(key)
        if v is None:
            v = DEFAULTS.get(key)
        if v is None:
            if required:
                raise UsageError(f"--{key.replace('_', '-')} is required")
            self.echo[key] = None
            return None
        try:
            out = cast(v)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value for --{key.replace('_', '-')}: {v!r}") from exc
        self.echo[key] = out.tolist() if isinstance(out, np.ndarray) else out
        return out


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    return str(v).strip().lower() in ("1", "true", "yes", "on")


def _floats(v) -> list[float]:
    return [float(x) for x in parse_vector(v)]


def _ints(v) -> list[int]:
    vals = parse_vector(v)
    if np.any(vals != np.round(vals)):
        raise ValueError("expected integers")
    return [int(x) for x in vals]


# model handling


def _model_from(s: Settings) -> tuple[str, dict, JumpModel]:
    kind = "linear" if s.get("oned", _bool) else s.get("model")
    s.echo["model"] = kind
    if kind not in MODEL_KINDS:
        raise UsageError(f"unknown model {kind!r}; choose from {', '.join(sorted(MODEL_KINDS))}")
    raw = {key: s.get(key, float) for key in MODEL_KINDS[kind]}
    params = model_params(kind, raw)
    s.echo.update(params)
    return kind, params, build_model(kind, params)


def _model_info(model: JumpModel) -> dict:
    return {"name": model.name, "params": dict(model.params), "hash": model.model_hash()}


def _seed(s: Settings) -> int:
    seed = resolve_seed(s.get("seed", int))
    s.echo["seed"] = seed
    return seed


class _Run:
    """Collects output files and writes the manifest."""

    def __init__(self, command: str, argv: list[str], out: Optional[str]):
        self.command = command
        self.argv = list(argv)
        self.out = out
        self.outputs: list[str] = []
        self.start = time.perf_counter()
        if out is not None:
            os.makedirs(out, exist_ok=True)

    def path(self, name: str) -> str:
        self.outputs.append(name)
        return os.path.join(self.out, name)

    def finish(self, s: Settings, seed: Optional[int], model: Optional[JumpModel], extra=None) -> None:
        if self.out is None:
            return
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "config": s.echo,
            "seed": seed,
            "model": _model_info(model) if model is not None else None,
            "version": __version__,
            "wall_clock_seconds": time.perf_counter() - self.start,
            "outputs": self.outputs,
        }
        if extra:
            manifest.update(extra)
        with open(os.path.join(self.out, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _csv_writer(fh):
    return csv.writer(fh, lineterminator="\n")


# simulate


@dataclass(frozen=True)
class _SimWork:
    model: JumpModel
    N: int
    x0: tuple
    cfg: SimConfig

    def __call__(self, i):
        return simulate_exact(self.model, self.N, self.x0, self.cfg, i)


def cmd_simulate(args, argv) -> int:
    s = Settings(args)
    kind, params, model = _model_from(s)
    N = s.get("n", int, required=True)
    x0 = resolve_x0(s.get("x0"), kind, params, N, model)
    s.echo["x0_resolved"] = x0.tolist()
    seed = _seed(s)
    cfg = SimConfig(s.get("t", float), s.get("max_jumps", int), seed, s.get("replicas", int))
    threads = s.get("threads", int)
    with_ode = s.get("ode", _bool)
    run = _Run("simulate", argv, s.get("out"))

    trajs = run_replicas(_SimWork(model, N, tuple(x0), cfg), cfg.replicas, threads)
    ode = integrate_ode(model, x0, cfg.t_max) if with_ode else None
    if ode is not None:
        write_ode_csv(ode, run.path("ode.csv"))
    width = max(5, len(str(cfg.replicas - 1)))
    for i, tr in enumerate(trajs):
        write_trajectory_csv(tr, run.path(f"traj_{i:0{width}d}.csv"))
    with open(run.path("summary.csv"), "w", newline="") as fh:
        w = _csv_writer(fh)
        header = ["replica", "jumps", "end_time", "censored"] + [f"x_{i + 1}" for i in range(model.d)]
        if ode is not None:
            header.append("sup_dist")
        w.writerow(header)
        for i, tr in enumerate(trajs):
            final = tr.states()[-1]
            row = [i, tr.n_jumps, fmt(tr.end_time), int(tr.censored)] + [fmt(v) for v in final]
            if ode is not None:
                row.append(fmt(lln_distance(tr, ode)) if not tr.censored and tr.end_time == ode.horizon else "")
            w.writerow(row)
    run.finish(s, seed, model)
    print(f"wrote {len(trajs)} trajectories to {run.out}")
    return EXIT_OK


# rate and path-rate


def _rate_rows(s: Settings, d: int):
    table = s.get("input")
    if table is not None:
        with open(table, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                if row:
                    vals = [float(v) for v in row]
                    if len(vals) != 2 * d:
                        raise UsageError(f"rate table rows need {2 * d} columns")
                    yield np.asarray(vals[:d]), np.asarray(vals[d:])
        return
    x = s.get("x", parse_vector, required=True)
    y = s.get("y", parse_vector, required=True)
    if len(x) != d or len(y) != d:
        raise UsageError(f"--x and --y need {d} components for this model")
    yield x, y


def cmd_rate(args, argv) -> int:
    s = Settings(args)
    _, _, model = _model_from(s)
    method = s.get("method")
    if method not in ("dual", "primal"):
        raise UsageError("--method must be dual or primal")
    solver = local_rate_dual if method == "dual" else local_rate_primal
    d, k = model.d, model.k
    buf = io.StringIO()
    w = _csv_writer(buf)
    w.writerow(
        [f"x_{i + 1}" for i in range(d)]
        + [f"y_{i + 1}" for i in range(d)]
        + ["value", "status", "dual_gap"]
        + [f"theta_{i + 1}" for i in range(d)]
        + [f"mu_{j + 1}" for j in range(k)]
    )
    for x, y in _rate_rows(s, d):
        r = solver(model, x, y)
        theta = [fmt(v) for v in r.theta_star] if r.theta_star is not None else [""] * d
        mu = [fmt(v) for v in r.mu_star] if r.mu_star is not None else [""] * k
        w.writerow(
            [fmt(v) for v in x] + [fmt(v) for v in y] + [fmt(r.value), r.status, fmt(r.dual_gap)] + theta + mu
        )
    _emit(s, buf.getvalue())
    return EXIT_OK


def cmd_path_rate(args, argv) -> int:
    s = Settings(args)
    _, _, model = _model_from(s)
    path = PLPath.from_csv(s.get("path", required=True))
    q = s.get("quad_order", int)
    value = path_rate(model, path, q)
    _emit(s, f"value\n{fmt(value)}\n")
    return EXIT_OK


def _emit(s: Settings, text: str) -> None:
    out = s.get("output")
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# quasipotential


def cmd_quasipotential(args, argv) -> int:
    s = Settings(args)
    kind, params, model = _model_from(s)
    seed = _seed(s)
    J = s.get("j", int)
    opts = {"quad_order": s.get("quad_order", int), "gradient": s.get("gradient")}
    T_grid = s.get("t_grid", _floats)
    run = _Run("quasipotential", argv, s.get("out"))
    start, end = s.get("start", parse_vector), s.get("end", parse_vector)
    summary: dict = {"J": J}
    if start is not None or end is not None:
        if start is None or end is None:
            raise UsageError("--start and --end go together")
        horizon = s.get("horizon", float)
        if horizon is not None:
            res = v_fixed_horizon(model, start, end, horizon, J, seed, **opts)
        else:
            res = v_free_horizon(model, start, end, J, T_grid, seed, **opts)
        res.path.to_csv(run.path("path.csv"))
        summary.update(value=res.value, horizon=res.horizon, result=res.to_dict())
    else:
        if kind != "sirs":
            raise UsageError("the exit-boundary search needs --model sirs (or give --start/--end)")
        etas = s.get("eta", _floats)
        ex = vbar_eta_extrapolation(
            SirsParams(params["beta"], params["gamma"], params["nu"]),
            etas,
            J=J,
            T_grid=T_grid,
            boundary_samples=s.get("boundary_samples", int),
            seed=seed,
            **opts,
        )
        with open(run.path("vbar.csv"), "w", newline="") as fh:
            w = _csv_writer(fh)
            w.writerow(["eta", "value", "horizon", "z_1", "z_2"])
            for eta, r in zip(ex.etas, ex.results):
                z = r.path.knot_points[-1]
                w.writerow([fmt(eta), fmt(r.value), fmt(r.horizon), fmt(z[0]), fmt(z[1])])
        for i, r in enumerate(ex.results):
            r.path.to_csv(run.path(f"path_eta_{i}.csv"))
        summary.update(
            etas=list(ex.etas),
            values=list(ex.values),
            extrapolated=ex.extrapolated,
            results=[r.to_dict() for r in ex.results],
        )
        print(f"vbar extrapolated to eta=0: {fmt(ex.extrapolated)}")
    with open(run.path("quasipotential.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    run.finish(s, seed, model)
    if "value" in summary:
        print(f"value: {fmt(summary['value'])}")
    return EXIT_OK


# exit times


@dataclass(frozen=True)
class _ExitWork:
    model: JumpModel
    N: int
    x0: tuple
    pred: _InfectedAbove
    cfg: SimConfig

    def __call__(self, i):
        return exit_time(self.model, self.N, self.x0, self.pred, self.cfg, i)


def cmd_exit_times(args, argv) -> int:
    s = Settings(args)
    kind, params, model = _model_from(s)
    Ns = s.get("n", _ints, required=True)
    seed = _seed(s)
    replicas = s.get("replicas", int)
    threads = s.get("threads", int)
    pred = _InfectedAbove(s.get("exit_eta", float))
    t_max = s.get("t_max", float)
    cfg = SimConfig(math.inf if t_max is None else t_max, s.get("max_jumps", int), seed, replicas)
    x0_text = s.get("x0")
    run = _Run("exit-times", argv, s.get("out"))
    samples = []
    with open(run.path("exit_times.csv"), "w", newline="") as fh:
        w = _csv_writer(fh)
        w.writerow(["replica", "N", "tau", "censored"])
        for N in Ns:
            x0 = resolve_x0(x0_text, kind, params, N, model)
            # seeds differ per N so the samples at different N are independent
            cfg_n = SimConfig(cfg.t_max, cfg.max_jumps, seed * 1_000_003 + N, replicas)
            res = run_replicas(_ExitWork(model, N, tuple(x0), pred, cfg_n), replicas, threads)
            for i, r in enumerate(res):
                w.writerow([i, N, fmt(r.tau), int(r.censored)])
            taus = np.asarray([r.tau for r in res if not r.censored])
            if len(taus) > 1:
                samples.append((N, float(taus.mean()), float(taus.std(ddof=1) / math.sqrt(len(taus)))))
    with open(run.path("exit_means.csv"), "w", newline="") as fh:
        w = _csv_writer(fh)
        w.writerow(["N", "mean_tau", "se"])
        for N, m, se in samples:
            w.writerow([N, fmt(m), fmt(se)])
    extra = {}
    if len(samples) >= 3:
        fit = fit_exit_scaling(samples)
        extra["fit"] = fit._asdict()
        with open(run.path("exit_fit.csv"), "w", newline="") as fh:
            w = _csv_writer(fh)
            w.writerow(["slope", "intercept", "r2"])
            w.writerow([fmt(fit.slope), fmt(fit.intercept), fmt(fit.r2)])
        print(f"slope: {fmt(fit.slope)}  r2: {fmt(fit.r2)}")
    run.finish(s, seed, model, extra)
    return EXIT_OK


# importance sampling


@dataclass(frozen=True)
class _JumpsAtLeast:
    k: int

    def __call__(self, traj) -> float:
        return 1.0 if traj.n_jumps >= self.k else 0.0


def _parse_tilt(text: str) -> dict[str, float]:
    out = {}
    for part in str(text).split(","):
        if not part.strip():
            continue
        key, sep, value = part.partition("=")
        if not sep:
            raise ValueError(f"expected key=value, got {part!r}")
        out[key.strip()] = float(value)
    return out


def cmd_importance(args, argv) -> int:
    s = Settings(args)
    kind, params, model = _model_from(s)
    tilt = s.get("tilt", _parse_tilt, required=True)
    unknown = set(tilt) - set(MODEL_KINDS[kind])
    if unknown:
        raise UsageError(f"--tilt keys {sorted(unknown)} are not parameters of model {kind}")
    tilted = build_model(kind, {**params, **tilt})
    N = s.get("n", int, required=True)
    x0 = resolve_x0(s.get("x0"), kind, params, N, model)
    seed = _seed(s)
    threads = s.get("threads", int)
    functional = _JumpsAtLeast(s.get("min_jumps", int))
    t = s.get("t", float)
    max_jumps = s.get("max_jumps", int)
    run = _Run("importance", argv, s.get("out"))
    direct = estimate_direct(
        model, N, tuple(x0), SimConfig(t, max_jumps, seed, s.get("replicas_direct", int)), functional, threads
    )
    tilted_est = estimate_tilted(
        model,
        tilted,
        N,
        tuple(x0),
        SimConfig(t, max_jumps, seed + 1, s.get("replicas_tilted", int)),
        functional,
        threads,
    )
    with open(run.path("importance.csv"), "w", newline="") as fh:
        w = _csv_writer(fh)
        w.writerow(["estimator", "replicas", "mean", "se"])
        w.writerow(["direct", direct.n, fmt(direct.mean), fmt(direct.se)])
        w.writerow(["tilted", tilted_est.n, fmt(tilted_est.mean), fmt(tilted_est.se)])
    run.finish(s, seed, model, {"tilted_model": _model_info(tilted)})
    print(f"direct {fmt(direct.mean)} +- {fmt(direct.se)}; tilted {fmt(tilted_est.mean)} +- {fmt(tilted_est.se)}")
    return EXIT_OK


# replay


def cmd_replay(args, argv) -> int:
    with open(args.manifest) as fh:
        manifest = json.load(fh)
    old = list(manifest["argv"])
    new: list[str] = []
    skip = False
    for tok in old:
        if skip:
            skip = False
            continue
        if tok == "--out":
            skip = True
            continue
        if tok.startswith("--out="):
            continue
        new.append(tok)
    # pin the seed that was actually used, in case it came from the environment
    if manifest.get("seed") is not None and "--seed" not in new:
        new += ["--seed", str(manifest["seed"])]
    if args.out is not None:
        new += ["--out", args.out]
    return main(new)


# parser


def _add_model_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--model", choices=sorted(MODEL_KINDS), default=None, help="model kind (default sirs)")
    g.add_argument("--oned", action="store_const", const=True, default=None,
                   help="1-D linear growth model: rate x, jump +1")
    for key in ("beta", "gamma", "nu", "coef", "rate", "birth", "death"):
        g.add_argument(f"--{key}", type=float, default=None)
    p.add_argument("--config", default=None, help="INI config file")


def _add_run_args(p: argparse.ArgumentParser, out: bool = True) -> None:
    p.add_argument("--seed", type=int, default=None, help=f"master seed (falls back to ${SEED_ENV}, then 0)")
    p.add_argument("--threads", type=int, default=None, help="worker processes for replicas")
    if out:
        p.add_argument("--out", default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epild", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"epild {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="exact trajectories")
    _add_model_args(p)
    _add_run_args(p)
    p.add_argument("--n", type=int, default=None, help="population size N")
    p.add_argument("--x0", default=None, help="start state (comma list) or 'endemic'")
    p.add_argument("--t", type=float, default=None, help="horizon")
    p.add_argument("--replicas", type=int, default=None)
    p.add_argument("--max-jumps", type=int, default=None)
    p.add_argument("--ode", action="store_const", const=True, default=None,
                   help="also write the fluid ODE path and sup distances")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("rate", help="local rate L(x, y)")
    _add_model_args(p)
    p.add_argument("--x", default=None, help="state, comma list")
    p.add_argument("--y", default=None, help="velocity, comma list")
    p.add_argument("--input", default=None, help="CSV with columns x_1..x_d,y_1..y_d")
    p.add_argument("--method", choices=("dual", "primal"), default=None)
    p.add_argument("--output", default=None, help="write the table here instead of stdout")
    p.set_defaults(func=cmd_rate)

    p = sub.add_parser("path-rate", help="action of a piecewise-linear path")
    _add_model_args(p)
    p.add_argument("--path", default=None, help="CSV with columns t,x_1..x_d")
    p.add_argument("--quad-order", type=int, default=None)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_path_rate)

    p = sub.add_parser("quasipotential", help="least-action search")
    _add_model_args(p)
    _add_run_args(p)
    p.add_argument("--start", default=None, help="start point (with --end)")
    p.add_argument("--end", default=None, help="end point (with --start)")
    p.add_argument("--horizon", type=float, default=None, help="fixed horizon T; omit to optimise over T")
    p.add_argument("--eta", default=None, help="exit levels, comma list")
    p.add_argument("--j", "--J", dest="j", type=int, default=None, help="path segments")
    p.add_argument("--t-grid", default=None, help="horizons scanned before refinement")
    p.add_argument("--boundary-samples", type=int, default=None)
    p.add_argument("--quad-order", type=int, default=None)
    p.add_argument("--gradient", choices=("envelope", "fd"), default=None)
    p.set_defaults(func=cmd_quasipotential)

    p = sub.add_parser("exit-times", help="Monte Carlo exit times and scaling fit")
    _add_model_args(p)
    _add_run_args(p)
    p.add_argument("--n", default=None, help="population sizes, comma list")
    p.add_argument("--x0", default=None)
    p.add_argument("--replicas", type=int, default=None)
    p.add_argument("--exit-eta", type=float, default=None, help="exit when x_1 <= this level (default 0)")
    p.add_argument("--t-max", type=float, default=None, help="censoring horizon (default none)")
    p.add_argument("--max-jumps", type=int, default=None)
    p.set_defaults(func=cmd_exit_times)

    p = sub.add_parser("importance", help="direct vs tilted estimate of P[jumps >= k]")
    _add_model_args(p)
    _add_run_args(p)
    p.add_argument("--tilt", default=None, help="tilted parameters, e.g. rate=2")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--x0", default=None)
    p.add_argument("--t", type=float, default=None)
    p.add_argument("--min-jumps", type=int, default=None)
    p.add_argument("--replicas-direct", type=int, default=None)
    p.add_argument("--replicas-tilted", type=int, default=None)
    p.add_argument("--max-jumps", type=int, default=None)
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        return args.func(args, argv)
    except UsageError as exc:
        sub.print_usage(sys.stderr)
        print(f"epild {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EpildError, ValueError) as exc:
        print(f"epild {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, ValueError) else EXIT_RUNTIME
    except (RuntimeError, OSError) as exc:
        print(f"epild {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
