"""Fluid-limit ODE ``y' = b(y)`` and the sup-distance between a jump path and it."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import IntegrationEscapeError, PreconditionError
from .model import JumpModel, drift_many
from .simulate import Trajectory, fmt

PROJECT_TOL = 1e-9


@dataclass(frozen=True)
class OdePath:
    times: np.ndarray
    states: np.ndarray

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def at(self, t) -> np.ndarray:
        """Linear interpolation between grid points."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((len(t), self.states.shape[1]))
        for i in range(self.states.shape[1]):
            out[:, i] = np.interp(t, self.times, self.states[:, i])
        return out


def integrate_ode(model: JumpModel, x0, T: float, dt: float = 1e-3) -> OdePath:
    """Classical fixed-step RK4 for the fluid limit.

    The last step is shortened so the grid ends exactly at ``T``.  States
    leaving the domain by at most 1e-9 are projected back; larger
    excursions raise :class:`IntegrationEscapeError`.
    """
    if not dt > 0:
        raise PreconditionError("dt must be positive")
    if T < 0:
        raise PreconditionError("T must be nonnegative")
    x = np.asarray(x0, dtype=float)
    if not model.contains(x):
        raise PreconditionError(f"x0={x.tolist()} is outside the model domain")
    n = int(np.ceil(T / dt - 1e-9))
    times = np.minimum(np.arange(n + 1) * dt, T)
    states = np.empty((n + 1, model.d))
    states[0] = x

    def f(y):
        return drift_many(model, y)

    for i in range(n):
        h = times[i + 1] - times[i]
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        excess = model.violation(x)
        if excess > PROJECT_TOL:
            raise IntegrationEscapeError(
                f"ODE left the domain by {excess:.3g} at t={times[i + 1]:g}; reduce dt"
            )
        if excess > 0:
            x = model.project(x)
        states[i + 1] = x
    return OdePath(times, states)


def lln_distance(traj: Trajectory, ode: OdePath) -> float:
    """``sup_t |Z(t) - Y(t)|`` over the merged jump/ODE time grid.

    Both the jump path (constant between jumps) and the interpolated ODE
    path are affine between merged grid points, so the sup is attained at
    grid points, using the left limit of the jump path at jump times.
    """
    if abs(traj.end_time - ode.horizon) > 1e-9 * max(1.0, ode.horizon):
        raise PreconditionError(
            f"horizons differ: trajectory {traj.end_time:g}, ODE {ode.horizon:g}"
        )
    if not np.allclose(traj.x0, ode.states[0], atol=1e-12):
        raise PreconditionError("trajectory and ODE start from different states")
    grid = np.union1d(ode.times, traj.jump_times)
    y = ode.at(grid)
    right = np.linalg.norm(traj.state_at(grid) - y, axis=1)
    left = np.linalg.norm(traj.state_before(grid) - y, axis=1)
    return float(max(right.max(), left.max()))


def write_ode_csv(path_obj: OdePath, path) -> None:
    d = path_obj.states.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"y_{i + 1}" for i in range(d)])
        for t, s in zip(path_obj.times, path_obj.states):
            w.writerow([fmt(t)] + [fmt(v) for v in s])
