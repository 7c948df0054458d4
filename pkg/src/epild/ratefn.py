"""Local rate function ``L(x, y)`` and the path action.

``L(x, y)`` is computed as the concave maximisation

    sup_theta  <theta, y> - sum_j beta_j(x) (exp(<theta, h_j>) - 1)

by damped Newton.  The optimal jump intensities are recovered as
``mu_j = beta_j(x) exp(<theta*, h_j>)`` and the entropy cost ``ell(x, mu)`` of
those intensities gives the primal value.

When ``y`` sits on the relative boundary of the cone spanned by the active
jump directions the supremum is not attained: it is approached along a
recession direction on which the reactions outside the minimal face are
switched off (their intensity tends to 0).  That face is identified with a
linear program and the Newton iteration is restricted to its span.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.optimize import linprog
from scipy.special import rel_entr

from .errors import DomainError, NumericalFailureError, PreconditionError
from .model import JumpModel

ZERO_RATE = 1e-12
DIVERGENCE_NORM = 1e3
MAX_NEWTON = 200
_LP_TOL = 1e-9

FINITE = "finite"
INFINITE_OUTSIDE_CONE = "infinite_outside_cone"
INFINITE_ZERO_RATE = "infinite_zero_rate"


@dataclass(frozen=True)
class LocalRate:
    """Value of ``L(x, y)`` with its optimisers.

    ``theta_star`` is a finite maximiser restricted to the span of the jump
    directions that carry intensity.  If the supremum is only approached,
    ``recession`` is a direction with ``theta_star + s * recession``
    maximising as ``s -> inf``; otherwise it is ``None``.
    """

    value: float
    theta_star: Optional[np.ndarray]
    mu_star: Optional[np.ndarray]
    status: str
    dual_gap: float = 0.0
    recession: Optional[np.ndarray] = None
    iterations: int = 0

    @property
    def finite(self) -> bool:
        return self.status == FINITE


def ell(beta_x, mu) -> float:
    """Relative-entropy cost of running the reactions at intensities ``mu``.

    ``sum_j beta_j - mu_j + mu_j log(mu_j / beta_j)`` with ``0 log 0 = 0``;
    ``+inf`` if some ``mu_j > 0`` has ``beta_j = 0``.
    """
    beta_x = np.asarray(beta_x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if np.any(beta_x < 0) or np.any(mu < 0):
        raise PreconditionError("rates and intensities must be nonnegative")
    return float(np.sum(beta_x - mu + rel_entr(mu, beta_x)))


def ell_tilde(beta_x, jump_dirs, y, theta, return_overflow: bool = False):
    """Dual objective ``<theta, y> - sum_j beta_j (exp(<theta, h_j>) - 1)``.

    Exponential overflow gives ``-inf``; with ``return_overflow=True`` the
    result is ``(value, overflowed)``.
    """
    beta_x = np.asarray(beta_x, dtype=float)
    h = np.atleast_2d(np.asarray(jump_dirs, dtype=float))
    theta = np.asarray(theta, dtype=float)
    a = h @ theta
    with np.errstate(over="ignore", invalid="ignore"):
        e = np.expm1(a)
        terms = np.where(beta_x > 0, beta_x * e, 0.0)
        value = float(theta @ np.asarray(y, dtype=float) - terms.sum())
    overflowed = bool(np.any((beta_x > 0) & ~np.isfinite(e)))
    if overflowed:
        value = -math.inf
    elif math.isnan(value):
        value = -math.inf
        overflowed = True
    return (value, overflowed) if return_overflow else value


# cone geometry


def _span_basis(vectors: np.ndarray, d: int) -> np.ndarray:
    """Orthonormal basis (columns) of the span of the rows of ``vectors``."""
    if len(vectors) == 0:
        return np.zeros((d, 0))
    u, s, vt = np.linalg.svd(np.asarray(vectors, dtype=float), full_matrices=False)
    rank = int(np.sum(s > 1e-10 * max(1.0, s[0])))
    return vt[:rank].T


def _lp_feasible_support(h: np.ndarray, y: np.ndarray):
    """Indices ``j`` that can be positive in some ``mu >= 0`` with ``mu @ h = y``.

    Returns ``None`` if no such ``mu`` exists.  Repeated LPs: each round
    maximises ``sum min(mu_j, 1)`` over the indices not yet known to be
    positive; a round that finds none of them positive ends the search.
    """
    m, d = h.shape
    if m == 0:
        return None if np.linalg.norm(y) > _LP_TOL else np.zeros(0, dtype=bool)
    positive = np.zeros(m, dtype=bool)
    scale = 1.0 + np.abs(y).max()
    while True:
        unknown = np.flatnonzero(~positive)
        nu = len(unknown)
        # variables: mu (m), s (nu); maximise sum s
        c = np.concatenate([np.zeros(m), -np.ones(nu)])
        a_eq = np.hstack([h.T, np.zeros((d, nu))])
        a_ub = np.zeros((nu, m + nu))
        a_ub[np.arange(nu), unknown] = -1.0
        a_ub[np.arange(nu), m + np.arange(nu)] = 1.0
        bounds = [(0, None)] * m + [(0, 1)] * nu
        res = linprog(
            c,
            A_ub=a_ub if nu else None,
            b_ub=np.zeros(nu) if nu else None,
            A_eq=a_eq,
            b_eq=y / scale,
            bounds=bounds,
            method="highs",
        )
        if res.status == 2:
            return None
        if res.status != 0:
            raise NumericalFailureError(f"cone LP failed: {res.message}")
        found = res.x[m:] > _LP_TOL
        if nu == 0 or not found.any():
            return positive
        positive[unknown[found]] = True
        if positive.all():
            return positive


def in_cone(h, y) -> bool:
    """Whether ``y`` is a nonnegative combination of the rows of ``h``."""
    h = np.atleast_2d(np.asarray(h, dtype=float))
    return _lp_feasible_support(h, np.asarray(y, dtype=float)) is not None


def _recession_direction(h_pos: np.ndarray, h_off: np.ndarray, d: int) -> Optional[np.ndarray]:
    """``w`` with ``<w, h> = 0`` on the face and ``<w, h> <= -1`` off it."""
    if len(h_off) == 0:
        return None
    res = linprog(
        np.zeros(d),
        A_ub=h_off,
        b_ub=-np.ones(len(h_off)),
        A_eq=h_pos if len(h_pos) else None,
        b_eq=np.zeros(len(h_pos)) if len(h_pos) else None,
        bounds=[(None, None)] * d,
        method="highs",
    )
    if res.status != 0:
        return None
    w = res.x
    return w / np.linalg.norm(w)


# Newton on the dual


def _newton(beta: np.ndarray, m: np.ndarray, y_r: np.ndarray, detect_divergence: bool):
    """Maximise ``phi.y_r - sum beta (exp(m phi) - 1)`` over ``phi``.

    Returns ``(phi, value, iterations, status)`` with status one of
    ``"ok"``, ``"diverged"``, ``"stalled"``.
    """
    r = m.shape[1]
    phi = np.zeros(r)

    def obj(p):
        with np.errstate(over="ignore", invalid="ignore"):
            v = p @ y_r - np.sum(beta * np.expm1(m @ p))
        return v if np.isfinite(v) else -np.inf

    val = obj(phi)
    best_g = math.inf
    flat = 0
    for it in range(1, MAX_NEWTON + 1):
        w = beta * np.exp(m @ phi)
        grad = y_r - m.T @ w
        gnorm = np.linalg.norm(grad)
        if gnorm <= 1e-12 * (1.0 + np.abs(y_r).sum() + w.sum()):
            return phi, val, it, "ok"
        hess = (m.T * w) @ m
        try:
            step = np.linalg.solve(hess, grad)
            dec = grad @ step
            if not np.isfinite(dec) or dec <= 0:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            # near-singular curvature: plain gradient ascent step
            step = grad / max(1.0, gnorm)
            dec = grad @ step
        if dec < 1e-8 * max(1.0, abs(val)):
            # quadratic regime: full step, objective differences are below float resolution
            if gnorm >= best_g:
                flat += 1
                if flat >= 3:
                    ok = gnorm <= 1e-9 * (1.0 + np.abs(y_r).sum() + w.sum())
                    return phi, val, it, "ok" if ok else "stalled"
            best_g = min(best_g, gnorm)
            phi = phi + step
            val = obj(phi)
            continue
        t = 1.0
        while True:
            cand = phi + t * step
            cval = obj(cand)
            if cval >= val + 1e-4 * t * dec:
                break
            t *= 0.5
            if t < 1e-16:
                return phi, val, it, "stalled"
        phi, val = cand, cval
        if detect_divergence and np.linalg.norm(phi) > DIVERGENCE_NORM:
            return phi, val, it, "diverged"
    return phi, val, MAX_NEWTON, "stalled"


def _solve_face(beta, h, y, face):
    """Newton restricted to the span of the reactions in ``face``."""
    d = h.shape[1]
    basis = _span_basis(h[face], d)
    m = h[face] @ basis
    phi, val, it, status = _newton(beta[face], m, basis.T @ y, detect_divergence=False)
    theta = basis @ phi
    return theta, val, it, status


def local_rate_dual(model: JumpModel, x, y) -> LocalRate:
    """``L(x, y)`` as the supremum of the dual objective over ``theta``.

    Finite iff ``y`` lies in the cone of directions whose rates are positive
    at ``x`` (rates below 1e-12 count as zero).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not model.contains(x):
        raise DomainError(f"state {x.tolist()} is outside the model domain")
    beta = np.asarray(model.rates(x), dtype=float)
    return _local_rate(beta, np.asarray(model.jump_dirs, dtype=float), y)


def _infinite(h, active, y) -> LocalRate:
    status = INFINITE_ZERO_RATE if in_cone(h, y) else INFINITE_OUTSIDE_CONE
    return LocalRate(math.inf, None, None, status)


def _local_rate(beta: np.ndarray, h: np.ndarray, y: np.ndarray) -> LocalRate:
    k, d = h.shape
    active = beta > ZERO_RATE
    h_act = h[active]
    basis = _span_basis(h_act, d)
    if np.linalg.norm(y - basis @ (basis.T @ y)) > 1e-10 * (1.0 + np.linalg.norm(y)):
        return _infinite(h, active, y)
    if not active.any():
        if np.linalg.norm(y) > 0:
            return _infinite(h, active, y)
        return LocalRate(0.0, np.zeros(d), np.zeros(k), FINITE)

    beta_act = beta[active]
    m = h_act @ basis
    phi, val, iters, status = _newton(beta_act, m, basis.T @ y, detect_divergence=True)
    face = np.ones(len(beta_act), dtype=bool)
    # a maximiser drifting to -inf along some <theta, h_j> means y is on a face of the cone
    drifting = status == "ok" and np.min(m @ phi) < -20.0
    if status == "ok" and not drifting:
        theta = basis @ phi
        recession = None
    else:
        support = _lp_feasible_support(h_act, y)
        if support is None:
            return _infinite(h, active, y)
        if support.all():
            if status == "stalled":
                raise NumericalFailureError(
                    "dual Newton did not converge", last_iterate=basis @ phi
                )
            # diverged although y is interior: keep going without the cap
            theta, val, more, status = _solve_face(beta_act, h_act, y, face)
            iters += more
        else:
            face = support
            theta, val, more, status = _solve_face(beta_act, h_act, y, face)
            iters += more
            val += float(beta_act[~face].sum())
        if status != "ok":
            raise NumericalFailureError("dual Newton did not converge on the face", last_iterate=theta)
        recession = _recession_direction(h_act[face], h_act[~face], d)

    mu = np.zeros(k)
    idx = np.flatnonzero(active)
    mu[idx[face]] = beta_act[face] * np.exp(h_act[face] @ theta)
    primal = ell(np.where(active, beta, 0.0), mu)
    return LocalRate(
        value=max(val, 0.0),
        theta_star=theta,
        mu_star=mu,
        status=FINITE,
        dual_gap=abs(primal - val),
        recession=recession,
        iterations=iters,
    )


def local_rate_primal(model: JumpModel, x, y) -> LocalRate:
    """``L(x, y)`` as the minimal entropy cost over feasible intensities.

    The minimiser is recovered from the dual optimum and its feasibility
    ``sum_j mu_j h_j = y`` is checked.
    """
    dual = local_rate_dual(model, x, y)
    if not dual.finite:
        return dual
    beta = np.asarray(model.rates(np.asarray(x, dtype=float)), dtype=float)
    beta = np.where(beta > ZERO_RATE, beta, 0.0)
    mu = dual.mu_star
    residual = np.linalg.norm(mu @ model.jump_dirs - np.asarray(y, dtype=float))
    if residual > 1e-8 * (1.0 + np.linalg.norm(y)):
        raise NumericalFailureError(
            f"recovered intensities miss the velocity by {residual:.3g}", last_iterate=dual.theta_star
        )
    value = ell(beta, mu)
    return LocalRate(
        value=value,
        theta_star=dual.theta_star,
        mu_star=mu,
        status=FINITE,
        dual_gap=abs(value - dual.value),
        recession=dual.recession,
        iterations=dual.iterations,
    )


def local_rate(model: JumpModel, x, y) -> float:
    return local_rate_dual(model, x, y).value


# batched evaluation for path actions


def _batch_values(model: JumpModel, xs: np.ndarray, ys: np.ndarray, return_theta: bool = False):
    """``L`` at many points; vectorised Newton with a scalar fallback.

    Points with every rate positive are solved together in ``R^d``; the
    rest, and any point that fails to converge quickly, go through
    :func:`_local_rate`.
    """
    h = np.asarray(model.jump_dirs, dtype=float)
    n, d = xs.shape
    values = np.full(n, math.inf)
    thetas = np.full((n, d), np.nan)
    inside = model.contains_many(xs)
    beta = np.zeros((n, h.shape[0]))
    if inside.any():
        beta[inside] = np.asarray(model.rates(xs[inside]), dtype=float)
    easy = inside & np.all(beta > ZERO_RATE, axis=1) & (np.linalg.matrix_rank(h) == d)
    done = np.zeros(n, dtype=bool)
    if easy.any():
        idx = np.flatnonzero(easy)
        th, val, ok = _batch_newton(beta[idx], h, ys[idx])
        values[idx[ok]] = np.maximum(val[ok], 0.0)
        thetas[idx[ok]] = th[ok]
        done[idx[ok]] = True
    for i in np.flatnonzero(inside & ~done):
        lr = _local_rate(beta[i], h, ys[i])
        values[i] = lr.value
        if lr.theta_star is not None:
            thetas[i] = lr.theta_star
    return (values, thetas) if return_theta else values


def _batch_newton(beta, h, y, iters: int = 60):
    """Newton on many independent duals at once, all in ``R^d``.

    Returns ``(theta, value, converged)``; unconverged points are left for
    the scalar solver.
    """
    n, d = y.shape
    theta = np.zeros((n, d))
    val = np.zeros(n)
    converged = np.zeros(n, dtype=bool)
    live = np.arange(n)
    for _ in range(iters):
        if len(live) == 0:
            break
        th = theta[live]
        b = beta[live]
        yy = y[live]
        w = b * np.exp(th @ h.T)
        grad = yy - w @ h
        gnorm = np.sqrt(np.einsum("nd,nd->n", grad, grad))
        done = gnorm <= 1e-12 * (1.0 + np.abs(yy).sum(1) + w.sum(1))
        converged[live[done]] = True
        keep = ~done
        live, th, b, yy, w, grad = live[keep], th[keep], b[keep], yy[keep], w[keep], grad[keep]
        if len(live) == 0:
            break
        hess = np.einsum("nk,ki,kj->nij", w, h, h)
        try:
            step = np.linalg.solve(hess, grad[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        dec = np.einsum("nd,nd->n", grad, step)
        good = np.isfinite(dec) & (dec > 0)
        live, th, b, yy, step, dec = live[good], th[good], b[good], yy[good], step[good], dec[good]
        cur = val[live]
        # quadratic regime: take the full step
        quad = dec < 1e-8 * np.maximum(1.0, np.abs(cur))
        t = np.ones(len(live))
        pending = ~quad
        for _ in range(50):
            if not pending.any():
                break
            p = np.flatnonzero(pending)
            cand = th[p] + t[p, None] * step[p]
            cv = _dual_obj(cand, b[p], yy[p], h)
            acc = cv >= cur[p] + 1e-4 * t[p] * dec[p]
            pending[p[acc]] = False
            t[p[~acc]] *= 0.5
        live_ok = ~pending
        new_th = th + t[:, None] * step
        theta[live[live_ok]] = new_th[live_ok]
        val[live[live_ok]] = _dual_obj(new_th[live_ok], b[live_ok], yy[live_ok], h)
        live = live[live_ok]
    val = _dual_obj(theta, beta, y, h)
    return theta, val, converged


def _dual_obj(th, b, yy, h):
    with np.errstate(over="ignore", invalid="ignore"):
        v = np.einsum("nd,nd->n", th, yy) - np.sum(b * np.expm1(th @ h.T), axis=1)
    return np.where(np.isfinite(v), v, -np.inf)


# piecewise-linear paths


@dataclass(frozen=True)
class PLPath:
    knot_times: np.ndarray
    knot_points: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.knot_times, dtype=float)
        z = np.atleast_2d(np.asarray(self.knot_points, dtype=float))
        if z.shape[0] != t.shape[0]:
            z = z.T if z.shape[1] == t.shape[0] else z
        if t.ndim != 1 or len(t) < 2 or z.shape[0] != len(t):
            raise PreconditionError("a path needs at least two knots with matching times and points")
        if np.any(np.diff(t) <= 0):
            raise PreconditionError("knot times must be strictly increasing")
        object.__setattr__(self, "knot_times", t)
        object.__setattr__(self, "knot_points", z)

    @classmethod
    def uniform(cls, points, T: float) -> "PLPath":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(np.linspace(0.0, T, len(points)), points)

    @property
    def horizon(self) -> float:
        return float(self.knot_times[-1] - self.knot_times[0])

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.knot_points, axis=0) / np.diff(self.knot_times)[:, None]

    def at(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.stack(
            [np.interp(t, self.knot_times, self.knot_points[:, i]) for i in range(self.knot_points.shape[1])],
            axis=-1,
        )

    def to_csv(self, path) -> None:
        from .simulate import fmt

        d = self.knot_points.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"x_{i + 1}" for i in range(d)])
            for t, z in zip(self.knot_times, self.knot_points):
                w.writerow([fmt(t)] + [fmt(v) for v in z])

    @classmethod
    def from_csv(cls, path) -> "PLPath":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                if row:
                    rows.append([float(v) for v in row])
        arr = np.asarray(rows)
        return cls(arr[:, 0], arr[:, 1:])


@lru_cache(maxsize=None)
def gauss_legendre_unit(quad_order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on ``[0, 1]``."""
    u, w = np.polynomial.legendre.leggauss(quad_order)
    u = 0.5 * (u + 1.0)
    w = 0.5 * w
    u.setflags(write=False)
    w.setflags(write=False)
    return u, w


def _segment_nodes(times: np.ndarray, points: np.ndarray, quad_order: int):
    """Gauss-Legendre nodes and weights on every segment of a PL path."""
    u, w = gauss_legendre_unit(quad_order)
    dt = np.diff(times)
    slopes = np.diff(points, axis=0) / dt[:, None]
    xs = points[:-1, None, :] + (u[None, :, None] * dt[:, None, None]) * slopes[:, None, :]
    ys = np.broadcast_to(slopes[:, None, :], xs.shape)
    weights = w[None, :] * dt[:, None]
    return xs, ys, weights


def segment_actions(model: JumpModel, times, points, quad_order: int = 16) -> np.ndarray:
    """Action of each segment of the PL path through ``points`` at ``times``."""
    times = np.asarray(times, dtype=float)
    points = np.asarray(points, dtype=float)
    xs, ys, weights = _segment_nodes(times, points, quad_order)
    s, q, d = xs.shape
    vals = _batch_values(model, xs.reshape(-1, d), np.ascontiguousarray(ys).reshape(-1, d)).reshape(s, q)
    with np.errstate(invalid="ignore"):
        out = np.sum(weights * vals, axis=1)
    out[np.any(np.isinf(vals), axis=1)] = math.inf
    return out


def path_rate(model: JumpModel, path: PLPath, quad_order: int = 16) -> float:
    """Action of a piecewise-linear path.

    Each segment is integrated with ``quad_order``-point Gauss-Legendre,
    whose nodes avoid the segment endpoints.  ``+inf`` if any node has
    infinite local rate or the path leaves the domain.
    """
    if path.knot_points.shape[1] != model.d:
        raise PreconditionError("path dimension does not match the model")
    if not np.all(model.contains_many(path.knot_points)):
        raise DomainError("path knots leave the model domain")
    acts = segment_actions(model, path.knot_times, path.knot_points, quad_order)
    return float(acts.sum())
