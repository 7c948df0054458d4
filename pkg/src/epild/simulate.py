"""Exact (Gillespie direct-method) simulation of density-dependent jump processes.

States are tracked as integer counts ``N * x`` so every visited state lies
exactly on the grid.  Randomness comes from per-replica Philox streams, see
:mod:`epild.rng`.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import InvalidParameterError, ModelError, PreconditionError
from .model import JumpModel
from .rng import UniformStream, replica_generator

DEFAULT_MAX_JUMPS = 10**7


@dataclass(frozen=True)
class SimConfig:
    t_max: float
    max_jumps: int = DEFAULT_MAX_JUMPS
    seed: int = 0
    replicas: int = 1

    def __post_init__(self):
        if not self.t_max > 0:
            raise InvalidParameterError("t_max must be positive")
        if self.max_jumps < 1:
            raise InvalidParameterError("max_jumps must be >= 1")
        if self.replicas < 1:
            raise InvalidParameterError("replicas must be >= 1")


@dataclass
class Trajectory:
    """One sample path: initial grid state plus the list of jumps.

    ``reaction_ids`` are 0-based indices into ``jump_dirs``.
    """

    N: int
    x0: np.ndarray
    jump_times: np.ndarray
    reaction_ids: np.ndarray
    end_time: float
    censored: bool = False
    jump_dirs: np.ndarray = field(repr=False, default=None)

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times)

    def counts(self) -> np.ndarray:
        """Integer population counts before the first jump and after each jump."""
        c0 = np.rint(self.N * np.asarray(self.x0)).astype(np.int64)
        steps = self.jump_dirs[self.reaction_ids] if self.n_jumps else np.zeros((0, len(c0)), np.int64)
        return np.vstack([c0, c0 + np.cumsum(steps, axis=0)])

    def states(self) -> np.ndarray:
        return self.counts() / self.N

    def state_at(self, t) -> np.ndarray:
        """Right-continuous state at time(s) ``t``."""
        idx = np.searchsorted(self.jump_times, t, side="right")
        return self.states()[idx]

    def state_before(self, t) -> np.ndarray:
        """Left limit ``Z(t-)``."""
        idx = np.searchsorted(self.jump_times, t, side="left")
        return self.states()[idx]


def check_grid_start(model: JumpModel, N: int, x0) -> np.ndarray:
    if N < 1:
        raise PreconditionError("N must be >= 1")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.d,):
        raise PreconditionError(f"x0 must have shape ({model.d},)")
    scaled = N * x0
    if np.max(np.abs(scaled - np.rint(scaled))) > 1e-9:
        raise PreconditionError(f"x0={x0.tolist()} is not on the 1/{N} grid")
    if not model.contains(x0):
        raise PreconditionError(f"x0={x0.tolist()} is outside the model domain")
    return np.rint(scaled) / N


def _scalar_rates(model: JumpModel):
    if model.scalar_rates is not None:
        return model.scalar_rates
    rates = model.rates
    return lambda x: tuple(np.asarray(rates(np.asarray(x, dtype=float)), dtype=float).tolist())


class _RunResult(NamedTuple):
    times: list
    ids: list
    end_time: float
    censored: bool
    stopped: bool
    jumps: int


def _run(
    model: JumpModel,
    N: int,
    x0: np.ndarray,
    t_max: float,
    max_jumps: int,
    stream: UniformStream,
    stop: Optional[Callable[[tuple], bool]] = None,
    record: bool = True,
) -> _RunResult:
    rate_fn = _scalar_rates(model)
    dirs = [tuple(int(v) for v in row) for row in model.jump_dirs]
    k = len(dirs)
    d = model.d
    c = [int(round(v)) for v in N * x0]
    inv_n = 1.0 / N
    log = math.log
    u = stream.next
    times = []
    ids = []
    t = 0.0
    t_last = 0.0
    n = 0
    censored = False
    stopped = False
    absorbed = False
    while True:
        x = tuple(ci * inv_n for ci in c)
        r = rate_fn(x)
        total = 0.0
        for v in r:
            if not v >= 0.0:
                raise ModelError(f"rate evaluator returned {r} at state {x}")
            total += v
        if total == 0.0:
            absorbed = True
            break
        if not math.isfinite(total):
            raise ModelError(f"non-finite total rate at state {x}")
        t -= log(u()) / (N * total)
        if t > t_max:
            break
        if n >= max_jumps:
            censored = True
            break
        target = u() * total
        acc = 0.0
        j = k - 1
        for i in range(k):
            acc += r[i]
            if target <= acc and r[i] > 0.0:
                j = i
                break
        else:
            while r[j] <= 0.0:
                j -= 1
        h = dirs[j]
        for i in range(d):
            c[i] += h[i]
        n += 1
        t_last = t
        if record:
            times.append(t)
            ids.append(j)
        if stop is not None and stop(tuple(ci * inv_n for ci in c)):
            stopped = True
            break
    if stopped or censored:
        end = t_last
    elif absorbed and not math.isfinite(t_max):
        end = t_last
    else:
        end = t_max
    return _RunResult(times, ids, end, censored, stopped, n)


def simulate_exact(model: JumpModel, N: int, x0, cfg: SimConfig, replica: int = 0) -> Trajectory:
    """Sample one path of the scaled jump process on ``[0, cfg.t_max]``.

    Stops at the horizon, at absorption (total rate 0), or after
    ``cfg.max_jumps`` jumps, in which case the trajectory is flagged
    ``censored`` and ends at its last jump.
    """
    x0 = check_grid_start(model, N, x0)
    stream = UniformStream(replica_generator(cfg.seed, replica))
    res = _run(model, N, x0, cfg.t_max, cfg.max_jumps, stream)
    return Trajectory(
        N=N,
        x0=x0,
        jump_times=np.asarray(res.times, dtype=float),
        reaction_ids=np.asarray(res.ids, dtype=np.int64),
        end_time=float(res.end_time),
        censored=res.censored,
        jump_dirs=np.asarray(model.jump_dirs),
    )


class ExitTime(NamedTuple):
    tau: float
    censored: bool
    jumps: int


def exit_time(
    model: JumpModel,
    N: int,
    x0,
    domain_pred: Callable,
    cfg: SimConfig,
    replica: int = 0,
) -> ExitTime:
    """First jump time at which the post-jump state fails ``domain_pred``.

    Returns ``tau = 0`` when ``x0`` is already outside the domain.  If the
    horizon or the jump cap is reached first (or the process is absorbed
    inside the domain) the result is censored with ``tau`` set to the
    time simulated so far.
    """
    x0 = check_grid_start(model, N, x0)
    if not domain_pred(tuple(x0.tolist())):
        return ExitTime(0.0, False, 0)
    stream = UniformStream(replica_generator(cfg.seed, replica))
    outside = lambda x: not domain_pred(x)  # noqa: E731
    res = _run(model, N, x0, cfg.t_max, cfg.max_jumps, stream, stop=outside, record=False)
    return ExitTime(float(res.end_time), not res.stopped, res.jumps)


class RadonNikodym(NamedTuple):
    log_xi: float
    degenerate: bool


def log_radon_nikodym(traj: Trajectory, model_p: JumpModel, model_q: JumpModel) -> RadonNikodym:
    """Log density of the path law under ``model_q`` relative to ``model_p``.

    Returns ``degenerate=True`` with ``log_xi = -inf`` when some fired jump
    has zero rate under ``model_q``.  The time integral of the rate
    difference is computed exactly over the piecewise-constant path.
    """
    if model_p.d != model_q.d or not np.array_equal(model_p.jump_dirs, model_q.jump_dirs):
        raise PreconditionError("models must share state dimension and jump directions")
    states = traj.states()
    beta = np.asarray(model_p.rates(states), dtype=float)
    beta_q = np.asarray(model_q.rates(states), dtype=float)
    knots = np.concatenate([[0.0], traj.jump_times, [traj.end_time]])
    dt = np.diff(knots)
    integral = float(np.sum((beta_q.sum(axis=1) - beta.sum(axis=1)) * dt))
    m = traj.n_jumps
    pre = np.arange(m)
    fired_p = beta[pre, traj.reaction_ids]
    fired_q = beta_q[pre, traj.reaction_ids]
    if np.any((fired_p <= 0) & (fired_q > 0)):
        raise PreconditionError("a fired jump has zero rate under model_p but positive under model_q")
    if np.any(fired_q <= 0):
        return RadonNikodym(-math.inf, True)
    jump_term = float(np.sum(np.log(fired_q) - np.log(fired_p)))
    return RadonNikodym(jump_term - traj.N * integral, False)


def simulate_tilted(
    model_p: JumpModel, model_q: JumpModel, N: int, x0, cfg: SimConfig, replica: int = 0
) -> tuple[Trajectory, float]:
    """Simulate under ``model_q`` and return the log importance weight.

    The weight ``exp(log_weight)`` is the reciprocal likelihood ratio, so
    ``mean(X * exp(log_weight))`` over tilted samples estimates ``E_p[X]``.
    """
    traj = simulate_exact(model_q, N, x0, cfg, replica)
    rn = log_radon_nikodym(traj, model_p, model_q)
    if rn.degenerate:
        raise ModelError("tilted path fired a jump with zero tilted rate")
    return traj, -rn.log_xi


# replica fan-out


def _chunks(n: int, parts: int) -> list[range]:
    parts = max(1, min(parts, n))
    bounds = np.linspace(0, n, parts + 1).astype(int)
    return [range(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def run_replicas(fn: Callable[[int], object], replicas: int, threads: int = 1) -> list:
    """Evaluate ``fn(i)`` for ``i in range(replicas)``, optionally in worker processes.

    Results are returned in replica order regardless of scheduling.
    """
    if threads <= 1 or replicas < 2:
        return [fn(i) for i in range(replicas)]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        parts = pool.map(_apply_range, [(fn, r) for r in _chunks(replicas, threads * 4)])
        return [res for part in parts for res in part]


def _apply_range(args):
    fn, rng_range = args
    return [fn(i) for i in rng_range]


class Estimate(NamedTuple):
    mean: float
    se: float
    n: int


def _estimate(values: Sequence[float]) -> Estimate:
    v = np.asarray(values, dtype=float)
    n = len(v)
    se = float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return Estimate(float(v.mean()), se, n)


def estimate_direct(model, N, x0, cfg: SimConfig, functional, threads: int = 1) -> Estimate:
    """Plain Monte Carlo estimate of ``E[functional(trajectory)]``."""
    work = _DirectWork(model, N, x0, cfg, functional)
    return _estimate(run_replicas(work, cfg.replicas, threads))


def estimate_tilted(model_p, model_q, N, x0, cfg: SimConfig, functional, threads: int = 1) -> Estimate:
    """Importance-sampling estimate of ``E_p[functional]`` from ``model_q`` paths."""
    work = _TiltedWork(model_p, model_q, N, x0, cfg, functional)
    return _estimate(run_replicas(work, cfg.replicas, threads))


@dataclass(frozen=True)
class _DirectWork:
    model: JumpModel
    N: int
    x0: tuple
    cfg: SimConfig
    functional: Callable

    def __call__(self, i):
        return float(self.functional(simulate_exact(self.model, self.N, self.x0, self.cfg, i)))


@dataclass(frozen=True)
class _TiltedWork:
    model_p: JumpModel
    model_q: JumpModel
    N: int
    x0: tuple
    cfg: SimConfig
    functional: Callable

    def __call__(self, i):
        traj, logw = simulate_tilted(self.model_p, self.model_q, self.N, self.x0, self.cfg, i)
        x = float(self.functional(traj))
        return x * math.exp(logw) if x != 0.0 else 0.0


# export


def fmt(v: float) -> str:
    """Round-trip decimal formatting used for all CSV numbers."""
    return format(float(v), ".17g")


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """One row per jump: time, 1-based reaction index, post-jump state."""
    d = len(traj.x0)
    states = traj.states()[1:]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "reaction"] + [f"x_{i + 1}" for i in range(d)])
        for t, j, s in zip(traj.jump_times, traj.reaction_ids, states):
            w.writerow([fmt(t), int(j) + 1] + [fmt(v) for v in s])


def read_trajectory_csv(path, N: int, x0, jump_dirs, end_time: float) -> Trajectory:
    times, ids = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            times.append(float(row["t"]))
            ids.append(int(row["reaction"]) - 1)
    return Trajectory(
        N=N,
        x0=np.asarray(x0, dtype=float),
        jump_times=np.asarray(times),
        reaction_ids=np.asarray(ids, dtype=np.int64),
        end_time=end_time,
        jump_dirs=np.asarray(jump_dirs),
    )
