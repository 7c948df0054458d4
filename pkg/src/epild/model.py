"""Density-dependent jump models and the shipped SIRS reference model.

A model is a set of jump directions ``h_j`` (integer vectors) with rate
functions ``beta_j(x)``.  At population size ``N`` the scaled process jumps
from ``x`` to ``x + h_j / N`` at rate ``N * beta_j(x)``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    DomainError,
    InvalidParameterError,
    NoEndemicEquilibriumError,
    SnapError,
)

DOMAIN_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class JumpModel:
    """Immutable description of a density-dependent jump process.

    ``rates`` must accept an array of shape ``(..., d)`` and return shape
    ``(..., k)``.  ``scalar_rates``, when given, takes a plain tuple of floats
    and returns a tuple of floats; the simulator uses it in its inner loop.
    The domain is the polyhedron ``{x : G x <= g}`` given by ``constraints``.
    """

    jump_dirs: np.ndarray
    rates: Callable[[np.ndarray], np.ndarray]
    constraints: tuple[np.ndarray, np.ndarray]
    name: str = "custom"
    params: dict = field(default_factory=dict)
    scalar_rates: Optional[Callable[[tuple], tuple]] = None
    rate_bound: Optional[float] = None
    lipschitz: Optional[float] = None

    def __post_init__(self):
        h = np.atleast_2d(np.asarray(self.jump_dirs, dtype=np.int64))
        G, g = self.constraints
        G = np.atleast_2d(np.asarray(G, dtype=float))
        g = np.atleast_1d(np.asarray(g, dtype=float))
        if G.shape[1] != h.shape[1] or G.shape[0] != g.shape[0]:
            raise InvalidParameterError("constraint shapes do not match the state dimension")
        h.setflags(write=False)
        G.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "jump_dirs", h)
        object.__setattr__(self, "constraints", (G, g))

    @property
    def d(self) -> int:
        return self.jump_dirs.shape[1]

    @property
    def k(self) -> int:
        return self.jump_dirs.shape[0]

    def contains(self, x, tol: float = DOMAIN_TOL) -> bool:
        G, g = self.constraints
        x = np.asarray(x, dtype=float)
        return bool(np.all(G @ x <= g + tol))

    def contains_many(self, xs, tol: float = DOMAIN_TOL) -> np.ndarray:
        G, g = self.constraints
        xs = np.asarray(xs, dtype=float)
        return np.all(xs @ G.T <= g + tol, axis=-1)

    def violation(self, x) -> float:
        """Largest constraint violation at ``x`` (0 inside the domain)."""
        G, g = self.constraints
        return float(max(0.0, np.max(G @ np.asarray(x, dtype=float) - g)))

    def project(self, x, sweeps: int = 50) -> np.ndarray:
        """Push a slightly infeasible point back onto the domain.

        Cyclic projection onto the violated half-spaces; only meant for
        float-noise sized excursions.
        """
        G, g = self.constraints
        x = np.array(x, dtype=float)
        for _ in range(sweeps):
            moved = False
            for a, b in zip(G, g):
                excess = a @ x - b
                if excess > 0:
                    x -= excess * a / (a @ a)
                    moved = True
            if not moved:
                break
        return x

    def rates_at(self, x) -> np.ndarray:
        """Rate vector at a single state, checked for domain membership."""
        x = np.asarray(x, dtype=float)
        if not self.contains(x):
            raise DomainError(f"state {x.tolist()} is outside the domain of {self.name}")
        return np.asarray(self.rates(x), dtype=float)

    def model_hash(self) -> str:
        payload = json.dumps({"name": self.name, "params": self.params}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def drift(model: JumpModel, x) -> np.ndarray:
    """Fluid-limit vector field ``sum_j beta_j(x) h_j``."""
    return model.rates_at(x) @ model.jump_dirs


def drift_many(model: JumpModel, xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    return np.asarray(model.rates(xs), dtype=float) @ model.jump_dirs


# SIRS reference model


@dataclass(frozen=True)
class SirsParams:
    beta: float
    gamma: float
    nu: float

    def __post_init__(self):
        for name in ("beta", "gamma", "nu"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise InvalidParameterError(f"{name} must be a positive finite number, got {v!r}")


@dataclass(frozen=True)
class _SirsRates:
    beta: float
    gamma: float
    nu: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        z1 = x[..., 0]
        z2 = x[..., 1]
        s = np.maximum(1.0 - z1 - z2, 0.0)
        z1p = np.maximum(z1, 0.0)
        return np.stack(
            [self.beta * z1p * s, self.gamma * z1p, self.nu * np.maximum(z2, 0.0)], axis=-1
        )

    def scalar(self, x):
        z1, z2 = x
        s = 1.0 - z1 - z2
        if s < 0.0:
            s = 0.0
        if z1 < 0.0:
            z1 = 0.0
        if z2 < 0.0:
            z2 = 0.0
        return (self.beta * z1 * s, self.gamma * z1, self.nu * z2)


SIRS_JUMPS = np.array([[1, 0], [-1, 1], [0, -1]])


def simplex_constraints(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Half-space form of ``{x >= 0, sum(x) <= 1}``."""
    G = np.vstack([-np.eye(d), np.ones((1, d))])
    g = np.concatenate([np.zeros(d), [1.0]])
    return G, g


SIMPLEX_2D = simplex_constraints(2)


def sirs_model(params: SirsParams) -> JumpModel:
    """SIRS model on the proportions (infectious, removed)."""
    if not isinstance(params, SirsParams):
        params = SirsParams(*params)
    r = _SirsRates(float(params.beta), float(params.gamma), float(params.nu))
    # sup of beta*z1*(1-z1-z2) on the simplex is beta/4
    bound = max(params.beta / 4.0, params.gamma, params.nu)
    lip = math.sqrt(2.0) * max(params.beta, params.gamma, params.nu) * 2.0
    return JumpModel(
        jump_dirs=SIRS_JUMPS,
        rates=r,
        constraints=SIMPLEX_2D,
        name="sirs",
        params={"beta": params.beta, "gamma": params.gamma, "nu": params.nu},
        scalar_rates=r.scalar,
        rate_bound=bound,
        lipschitz=lip,
    )


def r0(params: SirsParams) -> float:
    """Basic reproduction number."""
    return params.beta / params.gamma


def endemic_equilibrium(params: SirsParams) -> np.ndarray:
    b, g, n = params.beta, params.gamma, params.nu
    if b <= g:
        raise NoEndemicEquilibriumError(f"R0 = {b / g:g} <= 1, no endemic equilibrium")
    denom = b * (g + n)
    return np.array([n * (b - g) / denom, g * (b - g) / denom])


# One-dimensional models on the half line


HALF_LINE = (np.array([[-1.0]]), np.array([0.0]))


@dataclass(frozen=True)
class _LinearRates:
    coef: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.coef * np.maximum(x, 0.0)

    def scalar(self, x):
        return (self.coef * max(x[0], 0.0),)


@dataclass(frozen=True)
class _ConstantRates:
    values: tuple

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.values), x.shape[:-1] + (len(self.values),)).copy()

    def scalar(self, x):
        return self.values


@dataclass(frozen=True)
class _BirthDeathRates:
    birth: float
    death: float

    def __call__(self, x):
        x = np.maximum(np.asarray(x, dtype=float)[..., 0], 0.0)
        return np.stack([self.birth * x, self.death * x], axis=-1)

    def scalar(self, x):
        v = max(x[0], 0.0)
        return (self.birth * v, self.death * v)


def linear_growth_model(coef: float = 1.0) -> JumpModel:
    """``beta(x) = coef * x`` with jump ``+1`` on the half line."""
    r = _LinearRates(float(coef))
    return JumpModel(
        jump_dirs=np.array([[1]]),
        rates=r,
        constraints=HALF_LINE,
        name="linear",
        params={"coef": coef},
        scalar_rates=r.scalar,
        lipschitz=abs(coef),
    )


def pure_death_model(coef: float = 1.0) -> JumpModel:
    """``beta(x) = coef * x`` with jump ``-1``; absorbed at 0."""
    r = _LinearRates(float(coef))
    return JumpModel(
        jump_dirs=np.array([[-1]]),
        rates=r,
        constraints=HALF_LINE,
        name="death",
        params={"coef": coef},
        scalar_rates=r.scalar,
        rate_bound=None,
        lipschitz=abs(coef),
    )


def constant_rate_model(rate: float = 1.0) -> JumpModel:
    """Constant rate with jump ``+1``: the scaled Poisson process."""
    if rate < 0:
        raise InvalidParameterError("rate must be nonnegative")
    r = _ConstantRates((float(rate),))
    return JumpModel(
        jump_dirs=np.array([[1]]),
        rates=r,
        constraints=HALF_LINE,
        name="constant",
        params={"rate": rate},
        scalar_rates=r.scalar,
        rate_bound=float(rate),
        lipschitz=0.0,
    )


def birth_death_model(birth: float, death: float) -> JumpModel:
    """Linear birth-death process on the half line."""
    if birth <= 0 or death <= 0:
        raise InvalidParameterError("birth and death rates must be positive")
    r = _BirthDeathRates(float(birth), float(death))
    return JumpModel(
        jump_dirs=np.array([[1], [-1]]),
        rates=r,
        constraints=HALF_LINE,
        name="birth-death",
        params={"birth": birth, "death": death},
        scalar_rates=r.scalar,
        lipschitz=max(birth, death),
    )


def grid_snap(x, N: int, model: Optional[JumpModel] = None) -> np.ndarray:
    """Nearest point of the grid ``A ∩ (Z/N)^d`` to ``x``.

    ``A`` is the domain of ``model``, or the probability simplex
    ``{x >= 0, sum(x) <= 1}`` when no model is given.

    Coordinates are rounded half-up to multiples of ``1/N``.  If that point
    leaves the domain, coordinates are lowered one grid step at a time,
    each time picking the coordinate whose decrement costs the least extra
    squared distance.  For ``sum(x) <= 1`` type domains this greedy descent
    lands on the exact nearest feasible grid point.
    """
    if N < 1:
        raise InvalidParameterError("N must be >= 1")
    x = np.asarray(x, dtype=float)
    if model is None:
        G, g = simplex_constraints(x.shape[0])
        inside = bool(np.all(G @ x <= g + DOMAIN_TOL))
        contains = lambda z: bool(np.all(G @ z <= g + DOMAIN_TOL))  # noqa: E731
    else:
        inside = model.contains(x)
        contains = model.contains
    if not inside:
        raise DomainError(f"state {x.tolist()} is outside the domain")
    target = N * x
    counts = np.floor(target + 0.5)
    for _ in range(int(counts.sum()) + x.shape[0] * N + 1):
        if contains(counts / N):
            return counts / N
        over = counts - target
        over[counts <= 0] = -np.inf
        i = int(np.argmax(over))
        if not np.isfinite(over[i]):
            break
        counts[i] -= 1
    raise SnapError(f"no grid point of spacing 1/{N} found near {x.tolist()}")
