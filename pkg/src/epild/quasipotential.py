"""Minimum-action paths, quasipotentials and exit-time scaling.

Actions are minimised over piecewise-linear paths with uniform knot times.
Results are upper bounds on the true infima: the optimiser only sees a
finite-dimensional family of paths and returns local minima.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import InfeasiblePathError, PreconditionError
from .model import JumpModel, SirsParams, drift_many, endemic_equilibrium, sirs_model
from .ratefn import ZERO_RATE, PLPath, _batch_values, gauss_legendre_unit

DEFAULT_J = 16
DEFAULT_T_GRID = tuple(2.0**p for p in range(-2, 7))
FD_STEP = 1e-6
PENALTY = 1e6
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class QPResult:
    value: float
    path: PLPath
    horizon: float
    iterations: int = 0
    converged: bool = True
    eta: float = 0.0
    endpoint: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "eta": self.eta,
            "horizon": self.horizon,
            "iterations": self.iterations,
            "converged": self.converged,
            "knot_times": self.path.knot_times.tolist(),
            "knot_points": self.path.knot_points.tolist(),
            "diagnostics": self.diagnostics,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _segment_values(model: JumpModel, a: np.ndarray, b: np.ndarray, dt: np.ndarray, quad_order: int) -> np.ndarray:
    """Actions of independent straight segments ``a[i] -> b[i]`` of duration ``dt[i]``."""
    s, d = a.shape
    u, w = gauss_legendre_unit(quad_order)
    slopes = (b - a) / dt[:, None]
    xs = a[:, None, :] + (u[None, :, None] * dt[:, None, None]) * slopes[:, None, :]
    ys = np.repeat(slopes[:, None, :], quad_order, axis=1)
    vals = _batch_values(model, xs.reshape(-1, d), ys.reshape(-1, d)).reshape(s, quad_order)
    out = (vals * w[None, :]).sum(axis=1) * dt
    out[~np.isfinite(out)] = math.inf
    return out


def _rate_jacobian(model: JumpModel, xs: np.ndarray, step: float = 1e-7) -> np.ndarray:
    """Central-difference Jacobian of the rates, shape ``(n, k, d)``."""
    n, d = xs.shape
    jac = np.empty((n, model.k, d))
    for c in range(d):
        e = np.zeros(d)
        e[c] = step
        jac[:, :, c] = (np.asarray(model.rates(xs + e)) - np.asarray(model.rates(xs - e))) / (2 * step)
    return jac


def _segment_values_grad(
    model: JumpModel, a: np.ndarray, b: np.ndarray, dt: float, quad_order: int, with_dt: bool = False
):
    """Segment actions and their gradients in both endpoints.

    Uses ``dL/dy = theta*`` and ``dL/dx = -sum_j grad beta_j (exp(<theta*, h_j>) - 1)``
    at every quadrature node.  Returns ``None`` for the gradients when some
    node needs the boundary solver (no finite maximiser to differentiate).
    With ``with_dt`` a fourth array holds the derivative of each segment
    action in its duration, ``sum_q w_q (L - <theta*, y>)``.
    """
    s, d = a.shape
    u, w = gauss_legendre_unit(quad_order)
    slope = (b - a) / dt
    xs = (a[:, None, :] + (u[None, :, None] * dt) * slope[:, None, :]).reshape(-1, d)
    ys = np.repeat(slope[:, None, :], quad_order, axis=1).reshape(-1, d)
    vals, thetas = _batch_values(model, xs, ys, return_theta=True)
    out = (vals.reshape(s, quad_order) * w[None, :]).sum(axis=1) * dt
    out[~np.isfinite(out)] = math.inf
    fail = (out, None, None, None) if with_dt else (out, None, None)
    if not np.all(np.isfinite(out)) or np.isnan(thetas).any():
        return fail
    h = np.asarray(model.jump_dirs, dtype=float)
    beta = np.asarray(model.rates(xs), dtype=float)
    if np.any(beta <= ZERO_RATE):
        return fail
    jac = _rate_jacobian(model, xs)
    grad_x = -np.einsum("nk,nkd->nd", np.expm1(thetas @ h.T), jac).reshape(s, quad_order, d)
    th = thetas.reshape(s, quad_order, d)
    ga = dt * np.einsum("q,sqd->sd", w * (1.0 - u), grad_x) - np.einsum("q,sqd->sd", w, th)
    gb = dt * np.einsum("q,sqd->sd", w * u, grad_x) + np.einsum("q,sqd->sd", w, th)
    if with_dt:
        ham = (vals - np.einsum("nd,nd->n", thetas, ys)).reshape(s, quad_order)
        return out, ga, gb, ham @ w
    return out, ga, gb


class _Action:
    """Action of a uniform-knot PL path as a function of its interior knots."""

    def __init__(self, model, x, z, T, J, quad_order, gradient="envelope"):
        self.model = model
        self.x = np.asarray(x, dtype=float)
        self.z = np.asarray(z, dtype=float)
        self.d = model.d
        self.J = J
        self.dt = T / J
        self.quad_order = quad_order
        self.gradient = gradient
        self.evals = 0

    def points(self, flat):
        inner = np.asarray(flat, dtype=float).reshape(self.J - 1, self.d)
        return np.vstack([self.x, inner, self.z])

    def segments(self, pts):
        n = len(pts) - 1
        return _segment_values(self.model, pts[:-1], pts[1:], np.full(n, self.dt), self.quad_order)

    def value(self, flat) -> float:
        self.evals += 1
        pts = self.points(flat)
        if not np.all(self.model.contains_many(pts)):
            return math.inf
        return float(self.segments(pts).sum())

    def value_and_grad(self, flat):
        pts = self.points(flat)
        if not np.all(self.model.contains_many(pts)):
            return PENALTY, np.zeros_like(flat)
        self.evals += 1
        if self.gradient == "envelope":
            seg, ga, gb = _segment_values_grad(self.model, pts[:-1], pts[1:], self.dt, self.quad_order)
            total = float(seg.sum())
            if not np.isfinite(total):
                return PENALTY, np.zeros_like(flat)
            if ga is not None:
                return total, (gb[:-1] + ga[1:]).ravel()
            return total, self._fd_grad(pts, seg)
        seg = self.segments(pts)
        total = float(seg.sum())
        if not np.isfinite(total):
            return PENALTY, np.zeros_like(flat)
        return total, self._fd_grad(pts, seg)

    def _fd_grad(self, pts, base):
        """Central finite differences in the interior knots.

        Moving knot ``i`` only changes the two segments touching it, so all
        perturbed segments are evaluated in one batch.
        """
        n_in = self.J - 1
        d = self.d
        a_list, b_list = [], []
        for i in range(1, n_in + 1):
            for c in range(d):
                for sign in (1.0, -1.0):
                    p = pts[i].copy()
                    p[c] += sign * FD_STEP
                    a_list += [pts[i - 1], p]
                    b_list += [p, pts[i + 1]]
        a = np.asarray(a_list)
        b = np.asarray(b_list)
        vals = _segment_values(self.model, a, b, np.full(len(a), self.dt), self.quad_order)
        vals = vals.reshape(n_in, d, 2, 2).sum(axis=3)
        local = base[:-1] + base[1:]
        grad = (vals[:, :, 0] - vals[:, :, 1]) / (2 * FD_STEP)
        # a perturbation leaving the domain: fall back to the one-sided difference
        plus_bad = ~np.isfinite(vals[:, :, 0])
        minus_bad = ~np.isfinite(vals[:, :, 1])
        one_minus = plus_bad & ~minus_bad
        one_plus = minus_bad & ~plus_bad
        grad = np.where(one_minus, (local[:, None] - vals[:, :, 1]) / FD_STEP, grad)
        grad = np.where(one_plus, (vals[:, :, 0] - local[:, None]) / FD_STEP, grad)
        grad = np.where(plus_bad & minus_bad, 0.0, grad)
        return grad.ravel()


def _reverse_flow_start(model, x, z, T, J):
    """Time-reversed fluid flow from ``z``, bent linearly to start at ``x``."""
    n_sub = 20
    h = T / (J * n_sub)
    y = np.asarray(z, dtype=float)
    back = [y.copy()]
    for _ in range(J):
        for _ in range(n_sub):
            k1 = -drift_many(model, y)
            k2 = -drift_many(model, y + 0.5 * h * k1)
            k3 = -drift_many(model, y + 0.5 * h * k2)
            k4 = -drift_many(model, y + h * k3)
            y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            if model.violation(y) > 0:
                y = model.project(y)
        back.append(y.copy())
    fwd = np.asarray(back[::-1])
    s = np.linspace(0.0, 1.0, J + 1)[:, None]
    pts = fwd + (1.0 - s) * (np.asarray(x) - fwd[0]) + s * (np.asarray(z) - fwd[-1])
    return np.array([model.project(p) if model.violation(p) > 0 else p for p in pts])


def _straight_start(x, z, J):
    s = np.linspace(0.0, 1.0, J + 1)[:, None]
    return (1.0 - s) * np.asarray(x, dtype=float) + s * np.asarray(z, dtype=float)


def _refine_points(pts: np.ndarray) -> np.ndarray:
    """Insert segment midpoints: the same path with twice as many segments."""
    mid = 0.5 * (pts[:-1] + pts[1:])
    out = np.empty((2 * len(pts) - 1, pts.shape[1]))
    out[0::2] = pts
    out[1::2] = mid
    return out


def _optimise(action: _Action, start: np.ndarray, maxiter: int):
    flat0 = start[1:-1].ravel()
    f0 = action.value(flat0)
    if action.J == 1 or flat0.size == 0:
        return start, f0, 0, True
    if not np.isfinite(f0):
        return start, math.inf, 0, False
    res = minimize(
        action.value_and_grad,
        flat0,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": maxiter, "ftol": 1e-15, "gtol": 1e-10, "maxcor": 20},
    )
    f = action.value(res.x)
    if not np.isfinite(f) or f > f0:
        return start, f0, int(res.nit), False
    return action.points(res.x), f, int(res.nit), bool(res.success)


def v_fixed_horizon(
    model: JumpModel,
    x,
    z,
    T: float,
    J: int = DEFAULT_J,
    seed: int = 0,
    quad_order: int = 16,
    maxiter: int = 500,
    init: Optional[np.ndarray] = None,
    perturbed_start: bool = True,
    gradient: str = "envelope",
) -> QPResult:
    """Least action from ``x`` to ``z`` in time ``T`` over ``J``-segment PL paths.

    Starts: the straight line, the reversed-flow path, a randomly perturbed
    straight line, ``init`` if given, and (for even ``J``) the solution for
    ``J // 2`` segments with midpoints inserted.  The last start makes the
    result nonincreasing under ``J -> 2J``.

    ``gradient="envelope"`` differentiates the action through the dual
    optimiser at each quadrature node; ``"fd"`` uses central differences.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if not (model.contains(x) and model.contains(z)):
        raise PreconditionError("endpoints must lie in the model domain")
    if not T > 0:
        raise PreconditionError("T must be positive")
    if J < 1:
        raise PreconditionError("J must be >= 1")
    if gradient not in ("envelope", "fd"):
        raise PreconditionError("gradient must be 'envelope' or 'fd'")
    action = _Action(model, x, z, T, J, quad_order, gradient)
    starts = [("straight", _straight_start(x, z, J))]
    if J > 1:
        starts.append(("reverse-flow", _reverse_flow_start(model, x, z, T, J)))
        if perturbed_start:
            rng = np.random.default_rng([int(seed), J])
            base = _straight_start(x, z, J)
            scale = 0.1 * max(np.linalg.norm(z - x), 1e-3)
            noisy = base + scale * rng.standard_normal(base.shape) * np.sin(
                np.linspace(0.0, np.pi, J + 1)
            )[:, None]
            starts.append(("perturbed", np.array([model.project(p) for p in noisy])))
    if init is not None:
        init = np.asarray(init, dtype=float)
        if len(init) == J + 1:
            starts.append(("init", init))
    if J % 2 == 0 and J >= 2:
        coarse = v_fixed_horizon(
            model, x, z, T, J // 2, seed, quad_order, maxiter, None, perturbed_start, gradient
        )
        if np.isfinite(coarse.value):
            starts.append(("coarse", _refine_points(coarse.path.knot_points)))

    best = None
    total_iters = 0
    tried = {}
    for name, pts in starts:
        pts = pts.copy()
        pts[0], pts[-1] = x, z
        out_pts, f, nit, ok = _optimise(action, pts, maxiter)
        total_iters += nit
        tried[name] = f
        if best is None or f < best[1]:
            best = (out_pts, f, ok, name)
    if best is None or not np.isfinite(best[1]):
        raise InfeasiblePathError(f"no start produced a finite action from {x.tolist()} to {z.tolist()}")
    out_pts, f, ok, name = best
    path = PLPath(np.linspace(0.0, T, J + 1), out_pts)
    return QPResult(
        value=max(f, 0.0),
        path=path,
        horizon=T,
        iterations=total_iters,
        converged=ok,
        endpoint=z,
        diagnostics={"best_start": name, "starts": tried, "J": J, "evaluations": action.evals},
    )


def _golden_min(f: Callable[[float], float], a: float, b: float, iters: int):
    """Golden-section search for a minimum of ``f`` on ``[a, b]``."""
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def v_free_horizon(
    model: JumpModel,
    x,
    z,
    J: int = DEFAULT_J,
    T_grid: Sequence[float] = DEFAULT_T_GRID,
    seed: int = 0,
    golden_iters: int = 4,
    **kwargs,
) -> QPResult:
    """``inf_T V(x, z, T)``: scan ``T_grid``, then golden-section in ``log T``."""
    grid = sorted(float(t) for t in T_grid)
    if not grid or grid[0] <= 0:
        raise PreconditionError("T_grid must be a nonempty set of positive times")
    cache: dict[float, QPResult] = {}

    def run(T):
        if T not in cache:
            cache[T] = v_fixed_horizon(model, x, z, T, J, seed, **kwargs)
        return cache[T]

    results = [run(T) for T in grid]
    i = int(np.argmin([r.value for r in results]))
    best = results[i]
    if len(grid) > 1 and golden_iters > 0 and best.value > 0:
        lo = math.log(grid[max(i - 1, 0)])
        hi = math.log(grid[min(i + 1, len(grid) - 1)])
        s, _ = _golden_min(lambda s: run(math.exp(s)).value, lo, hi, golden_iters)
        cand = run(math.exp(s))
        if cand.value < best.value:
            best = cand
    best.diagnostics["T_scan"] = {f"{T:.17g}": cache[T].value for T in sorted(cache)}
    return best


# exit problems


@dataclass(frozen=True)
class ExitProblem:
    """Domain ``O`` around a stable equilibrium with a parameterised exit boundary.

    ``boundary(s)`` maps ``s in [0, 1]`` onto the boundary part that exits
    must cross.
    """

    model: JumpModel
    domain_pred: Callable[[Sequence[float]], bool]
    boundary: Callable[[float], np.ndarray]
    equilibrium: np.ndarray
    eta: float = 0.0

    def boundary_sampler(self, n: int) -> list[np.ndarray]:
        if n < 1:
            raise PreconditionError("need at least one boundary sample")
        if n == 1:
            return [self.boundary(0.5)]
        return [self.boundary(s) for s in np.linspace(0.0, 1.0, n)]


@dataclass(frozen=True)
class _InfectedAbove:
    eta: float

    def __call__(self, z) -> bool:
        return z[0] > self.eta


@dataclass(frozen=True)
class _EtaLine:
    eta: float

    def __call__(self, s: float) -> np.ndarray:
        s = min(max(float(s), 0.0), 1.0)
        return np.array([self.eta, s * (1.0 - self.eta)])


def eta_boundary_problem(params: SirsParams, eta: float) -> ExitProblem:
    """SIRS exit problem from ``O_eta = {z_1 > eta}`` through the line ``z_1 = eta``."""
    xs = endemic_equilibrium(params)
    if not (0.0 < eta < xs[0]):
        raise PreconditionError(f"eta must lie in (0, {xs[0]:g})")
    return ExitProblem(
        model=sirs_model(params),
        domain_pred=_InfectedAbove(float(eta)),
        boundary=_EtaLine(float(eta)),
        equilibrium=xs,
        eta=float(eta),
    )


def extinction_problem(params: SirsParams) -> ExitProblem:
    """The characteristic boundary ``z_1 = 0``; for simulation only."""
    return ExitProblem(
        model=sirs_model(params),
        domain_pred=_InfectedAbove(0.0),
        boundary=_EtaLine(0.0),
        equilibrium=endemic_equilibrium(params),
        eta=0.0,
    )


class _ExitAction:
    """Action of a path from ``x`` to ``boundary(s)`` in time ``T``.

    The variables are the interior knots, the boundary parameter ``s`` and
    ``log T``, so one bounded quasi-Newton run moves all three.
    """

    def __init__(self, model, x, boundary, J, quad_order, gradient="envelope"):
        self.model = model
        self.x = np.asarray(x, dtype=float)
        self.boundary = boundary
        self.d = model.d
        self.J = J
        self.quad_order = quad_order
        self.gradient = gradient
        self.evals = 0

    def pack(self, pts, s, T):
        return np.concatenate([np.asarray(pts[1:-1], dtype=float).ravel(), [s, math.log(T)]])

    def unpack(self, flat):
        flat = np.asarray(flat, dtype=float)
        s, log_t = float(flat[-2]), float(flat[-1])
        inner = flat[:-2].reshape(self.J - 1, self.d)
        pts = np.vstack([self.x, inner, self.boundary(s)])
        return pts, s, math.exp(log_t)

    def value(self, flat) -> float:
        self.evals += 1
        pts, _, T = self.unpack(flat)
        if not np.all(self.model.contains_many(pts)):
            return math.inf
        dt = T / self.J
        n = len(pts) - 1
        return float(_segment_values(self.model, pts[:-1], pts[1:], np.full(n, dt), self.quad_order).sum())

    def value_and_grad(self, flat):
        pts, s, T = self.unpack(flat)
        if not np.all(self.model.contains_many(pts)):
            return PENALTY, np.zeros_like(flat)
        if self.gradient == "envelope":
            self.evals += 1
            dt = T / self.J
            seg, ga, gb, gdt = _segment_values_grad(
                self.model, pts[:-1], pts[1:], dt, self.quad_order, with_dt=True
            )
            total = float(seg.sum())
            if not np.isfinite(total):
                return PENALTY, np.zeros_like(flat)
            if ga is not None:
                g_inner = (gb[:-1] + ga[1:]).ravel()
                g_s = float(gb[-1] @ self._boundary_slope(s))
                g_logt = dt * float(gdt.sum())
                return total, np.concatenate([g_inner, [g_s, g_logt]])
        total = self.value(flat)
        if not np.isfinite(total):
            return PENALTY, np.zeros_like(flat)
        return total, self._fd_grad(flat)

    def _boundary_slope(self, s, h=1e-7):
        lo, hi = max(s - h, 0.0), min(s + h, 1.0)
        return (self.boundary(hi) - self.boundary(lo)) / (hi - lo)

    def _fd_grad(self, flat):
        grad = np.zeros_like(flat)
        for i in range(len(flat)):
            e = np.zeros_like(flat)
            e[i] = FD_STEP
            fp, fm = self.value(flat + e), self.value(flat - e)
            if np.isfinite(fp) and np.isfinite(fm):
                grad[i] = (fp - fm) / (2 * FD_STEP)
        return grad


def _optimise_exit(action: _ExitAction, flat0, bounds, maxiter):
    f0 = action.value(flat0)
    if not np.isfinite(f0):
        return flat0, math.inf, 0, False
    res = minimize(
        action.value_and_grad,
        flat0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": maxiter, "ftol": 1e-15, "gtol": 1e-10, "maxcor": 20},
    )
    f = action.value(res.x)
    if not np.isfinite(f) or f > f0:
        return flat0, f0, int(res.nit), False
    return res.x, f, int(res.nit), bool(res.success)


def vbar(
    problem: ExitProblem,
    J: int = DEFAULT_J,
    T_grid: Sequence[float] = DEFAULT_T_GRID,
    boundary_samples: int = 5,
    seed: int = 0,
    quad_order: int = 16,
    maxiter: int = 500,
    gradient: str = "envelope",
    keep: int = 2,
) -> QPResult:
    """Smallest quasipotential from the equilibrium to the exit boundary.

    Interior knots, the boundary point and ``log T`` are optimised jointly.
    Starts (straight and reversed-flow paths to each boundary sample, the
    cheapest horizon in ``T_grid`` for each) are first optimised with a
    coarse path; the ``keep`` best are then refined by repeated midpoint
    insertion up to ``J`` segments.  ``T`` stays within the range of
    ``T_grid``.
    """
    if boundary_samples < 1:
        raise PreconditionError("boundary_samples must be >= 1")
    if gradient not in ("envelope", "fd"):
        raise PreconditionError("gradient must be 'envelope' or 'fd'")
    grid = sorted(float(t) for t in T_grid)
    if not grid or grid[0] <= 0:
        raise PreconditionError("T_grid must be a nonempty set of positive times")
    model, xs = problem.model, problem.equilibrium
    levels = [J]
    while levels[0] % 2 == 0 and levels[0] > 4:
        levels.insert(0, levels[0] // 2)
    bounds_t = (math.log(grid[0]), math.log(grid[-1]))
    svals = np.linspace(0.0, 1.0, boundary_samples) if boundary_samples > 1 else np.array([0.5])

    coarse = _ExitAction(model, xs, problem.boundary, levels[0], quad_order, gradient)
    starts = []
    for s in svals:
        z = problem.boundary(s)
        best = None
        for T in grid:
            for kind, pts in (
                ("straight", _straight_start(xs, z, levels[0])),
                ("reverse-flow", _reverse_flow_start(model, xs, z, T, levels[0])),
            ):
                pts[0], pts[-1] = xs, z
                flat = coarse.pack(pts, float(s), T)
                f = coarse.value(flat)
                if np.isfinite(f) and (best is None or f < best[0]):
                    best = (f, flat, kind)
        if best is not None:
            starts.append(best)
    if not starts:
        raise InfeasiblePathError("no start path to the exit boundary has finite action")

    def bounds(n_inner):
        return [(None, None)] * n_inner + [(0.0, 1.0), bounds_t]

    found = []
    for _, flat, kind in starts:
        x_opt, f, nit, ok = _optimise_exit(coarse, flat, bounds(len(flat) - 2), maxiter)
        found.append((f, x_opt, nit, ok, kind))
    found.sort(key=lambda r: r[0])
    found = found[: max(1, keep)]
    evals = coarse.evals
    for Jl in levels[1:]:
        act = _ExitAction(model, xs, problem.boundary, Jl, quad_order, gradient)
        prev = _ExitAction(model, xs, problem.boundary, Jl // 2, quad_order, gradient)
        refined = []
        for f_prev, flat, nit_prev, _, kind in found:
            pts, s, T = prev.unpack(flat)
            start = act.pack(_refine_points(pts), s, T)
            x_opt, f, nit, ok = _optimise_exit(act, start, bounds(len(start) - 2), maxiter)
            refined.append((f, x_opt, nit_prev + nit, ok, kind))
        found = sorted(refined, key=lambda r: r[0])
        evals += act.evals
    f, flat, nit, ok, kind = found[0]
    final = _ExitAction(model, xs, problem.boundary, levels[-1], quad_order, gradient)
    pts, s, T = final.unpack(flat)
    return QPResult(
        value=max(f, 0.0),
        path=PLPath(np.linspace(0.0, T, levels[-1] + 1), pts),
        horizon=T,
        iterations=nit,
        converged=ok,
        eta=problem.eta,
        endpoint=pts[-1],
        diagnostics={
            "boundary_param": s,
            "best_start": kind,
            "J": levels[-1],
            "levels": levels,
            "evaluations": evals,
            "candidates": [r[0] for r in found],
        },
    )


class VbarExtrapolation(NamedTuple):
    etas: tuple
    values: tuple
    extrapolated: float
    results: tuple


def vbar_eta_extrapolation(
    params: SirsParams, etas: Iterable[float] = (0.02, 0.01, 0.005), **kwargs
) -> VbarExtrapolation:
    """``V̄_eta`` for several ``eta`` and its linear extrapolation to ``eta = 0``."""
    etas = tuple(float(e) for e in etas)
    results = tuple(vbar(eta_boundary_problem(params, e), **kwargs) for e in etas)
    values = tuple(r.value for r in results)
    if len(etas) >= 2:
        slope, intercept = np.polyfit(np.asarray(etas), np.asarray(values), 1)
    else:
        intercept = values[0]
    return VbarExtrapolation(etas, values, float(intercept), results)


# exit-time scaling


class ExitScalingFit(NamedTuple):
    slope: float
    intercept: float
    r2: float


def fit_exit_scaling(samples: Sequence[tuple]) -> ExitScalingFit:
    """OLS fit of ``log(mean exit time)`` against ``N``.

    ``samples`` holds ``(N, mean_tau, se)`` triples; the standard errors are
    carried along but not used as weights.
    """
    arr = np.asarray([(float(s[0]), float(s[1])) for s in samples])
    if len(arr) < 3 or len(np.unique(arr[:, 0])) < 3:
        raise PreconditionError("need at least three distinct N values")
    if np.any(arr[:, 1] <= 0):
        raise PreconditionError("mean exit times must be positive")
    n = arr[:, 0]
    ly = np.log(arr[:, 1])
    slope, intercept = np.polyfit(n, ly, 1)
    resid = ly - (slope * n + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return ExitScalingFit(float(slope), float(intercept), r2)


def branching_extinction_prob(beta: float, gamma: float, n0: int, t: float) -> float:
    """Probability that a linear birth-death process started from ``n0`` dies out by ``t``.

    Per-individual extinction probability
    ``q(t) = gamma (e^{(beta-gamma)t} - 1) / (beta e^{(beta-gamma)t} - gamma)``,
    with the critical limit ``beta t / (1 + beta t)``.  ``t = inf`` gives
    ``min(1, gamma/beta)``.
    """
    if beta <= 0 or gamma <= 0:
        raise PreconditionError("beta and gamma must be positive")
    if n0 < 0:
        raise PreconditionError("n0 must be nonnegative")
    if not t > 0:
        raise PreconditionError("t must be positive")
    if n0 == 0:
        return 1.0
    return branching_q(beta, gamma, t) ** n0


def branching_q(beta: float, gamma: float, t: float) -> float:
    if math.isinf(t):
        return min(1.0, gamma / beta)
    r = beta - gamma
    if abs(r) * t < 1e-8:
        bt = beta * t
        # first-order correction in r around the critical case
        return bt / (1.0 + bt) - r * t * (1.0 + 0.5 * bt) / (1.0 + bt) ** 2
    if r > 0:
        e = math.expm1(r * t)
        return gamma * e / (beta * e + r)
    # subcritical: rewrite with e^{rt} < 1 to avoid overflow
    e = math.expm1(-r * t)  # e^{|r|t} - 1
    return gamma * e / (gamma * e - r)
