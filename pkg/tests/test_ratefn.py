import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from epild.errors import DomainError
from epild.model import SirsParams, drift, linear_growth_model, sirs_model
from epild.ratefn import (
    FINITE,
    INFINITE_OUTSIDE_CONE,
    INFINITE_ZERO_RATE,
    PLPath,
    ell,
    ell_tilde,
    in_cone,
    local_rate,
    local_rate_dual,
    local_rate_primal,
    path_rate,
    segment_actions,
)

SIRS = sirs_model(SirsParams(2.0, 1.0, 1.0))
H = SIRS.jump_dirs
ONED = linear_growth_model()


def _interior(rng):
    while True:
        x = rng.uniform(0.02, 0.96, size=2)
        if x.sum() < 0.97:
            return x


def _primal_oracle(beta, y):
    """Entropy minimum over the feasible line of intensities.

    For the three SIRS directions, ``mu @ H = y`` leaves one free
    parameter: ``mu = mu0 + t (1, 1, 1)``.  Minimise over ``t`` directly.
    """
    mu0 = np.array([0.0, -y[0], -y[0] - y[1]])
    lo = max(-mu0)
    f = lambda t: ell(beta, mu0 + t)  # noqa: E731
    res = minimize_scalar(f, bounds=(lo, lo + 50.0), method="bounded", options={"xatol": 1e-13})
    return res.fun


def test_zero_on_the_drift():
    x = np.array([0.3, 0.1])
    r = local_rate_dual(SIRS, x, drift(SIRS, x))
    assert r.value < 1e-14
    assert np.allclose(r.theta_star, 0, atol=1e-9)
    assert np.allclose(r.mu_star, SIRS.rates_at(x))


@pytest.mark.parametrize("x", [0.1, 0.5, 1.0, 2.0])
def test_oned_closed_form(x):
    assert local_rate(ONED, [x], [1.0]) == pytest.approx(x - 1 - math.log(x), abs=1e-12)


def test_primal_agrees_with_independent_oracle():
    rng = np.random.default_rng(0)
    for _ in range(40):
        x = _interior(rng)
        y = rng.uniform(0, 3, 3) @ H
        beta = SIRS.rates_at(x)
        oracle = _primal_oracle(beta, y)
        assert local_rate_primal(SIRS, x, y).value == pytest.approx(oracle, rel=1e-7, abs=1e-9)


def test_weak_duality_any_theta_bounds_below():
    rng = np.random.default_rng(1)
    for _ in range(50):
        x = _interior(rng)
        y = rng.uniform(0, 2, 3) @ H
        L = local_rate(SIRS, x, y)
        for _ in range(5):
            theta = rng.normal(size=2)
            assert ell_tilde(SIRS.rates_at(x), H, y, theta) <= L + 1e-10


def test_primal_feasibility_and_envelope():
    rng = np.random.default_rng(2)
    for _ in range(30):
        x = _interior(rng)
        y = rng.uniform(0, 3, 3) @ H
        r = local_rate_primal(SIRS, x, y)
        assert np.allclose(r.mu_star @ H, y, atol=1e-9)
        # dL/dy = theta*
        eps = 1e-6
        for i in range(2):
            e = np.zeros(2)
            e[i] = eps
            fd = (local_rate(SIRS, x, y + e) - local_rate(SIRS, x, y - e)) / (2 * eps)
            assert fd == pytest.approx(r.theta_star[i], rel=1e-5, abs=1e-6)


@settings(max_examples=80, deadline=None)
@given(
    st.floats(0.02, 0.9),
    st.floats(0.02, 0.9),
    st.floats(-3.0, 3.0),
    st.floats(-3.0, 3.0),
)
def test_nonnegative_and_zero_only_on_drift(a, b, y1, y2):
    x = np.array([a, b]) * (0.95 / max(1.0, a + b))
    y = np.array([y1, y2])
    r = local_rate_dual(SIRS, x, y)
    assert r.value >= 0
    if np.linalg.norm(y - drift(SIRS, x)) > 1e-3:
        assert r.value > 0


def test_strictly_convex_along_segments():
    rng = np.random.default_rng(3)
    x = np.array([0.3, 0.3])
    for _ in range(30):
        y0, y1 = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
        mid = local_rate(SIRS, x, 0.5 * (y0 + y1))
        assert mid < 0.5 * (local_rate(SIRS, x, y0) + local_rate(SIRS, x, y1))


def test_superlinear_growth():
    x = np.array([0.3, 0.3])
    d = np.array([0.6, -0.8])
    ratios = [local_rate(SIRS, x, s * d) / s for s in (1.0, 10.0, 100.0, 1000.0)]
    assert all(b > a for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] > 3.0


def test_continuity_in_x():
    y = np.array([0.2, -0.1])
    x = np.array([0.3, 0.2])
    base = local_rate(SIRS, x, y)
    near = local_rate(SIRS, x + 1e-7, y)
    assert abs(near - base) < 1e-5


def test_boundary_infinite_statuses():
    # no infected: only loss of immunity can fire
    x = np.array([0.0, 0.5])
    r = local_rate_dual(SIRS, x, [0.1, 0.0])
    assert r.status == INFINITE_ZERO_RATE and math.isinf(r.value)
    assert local_rate_dual(SIRS, x, [0.0, -0.5]).status == FINITE
    r1 = local_rate_dual(ONED, [0.5], [-1.0])
    assert r1.status == INFINITE_OUTSIDE_CONE


def test_boundary_finite_value():
    # only the immunity-loss jump (0,-1) is active; L = ell(beta3, mu3)
    x = np.array([0.0, 0.5])
    r = local_rate_dual(SIRS, x, [0.0, -1.0])
    assert r.value == pytest.approx(ell([0, 0, 0.5], [0, 0, 1.0]), rel=1e-12)


def test_zero_velocity_on_a_face():
    # y = 0 in 1D: supremum approached as theta -> -inf, value beta(x)
    r = local_rate_dual(ONED, [0.5], [0.0])
    assert r.value == pytest.approx(0.5, rel=1e-10)
    assert r.recession is not None and r.recession[0] < 0


def test_outside_domain_raises():
    with pytest.raises(DomainError):
        local_rate_dual(SIRS, [0.8, 0.8], [0.0, 0.0])


def test_cone_membership_matches_lp_oracle():
    assert in_cone(H, np.array([1.0, 1.0]))
    assert in_cone(H, np.array([-1.0, 0.0]))
    assert in_cone(np.array([[1.0]]), np.array([2.0]))
    assert not in_cone(np.array([[1.0]]), np.array([-2.0]))
    assert not in_cone(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([1.0, -1.0]))


def test_oned_path_action_closed_form():
    path = PLPath.uniform([[1.0], [2.0]], 1.0)
    assert path_rate(ONED, path) == pytest.approx(1.5 - 2 * math.log(2), abs=1e-12)


def test_path_action_is_additive_over_segments():
    pts = np.array([[0.3, 0.2], [0.32, 0.18], [0.31, 0.21]])
    times = np.array([0.0, 0.4, 1.0])
    acts = segment_actions(SIRS, times, pts)
    assert path_rate(SIRS, PLPath(times, pts)) == pytest.approx(acts.sum(), rel=1e-14)
    single = path_rate(SIRS, PLPath(times[:2], pts[:2]))
    assert single == pytest.approx(acts[0], rel=1e-12)


def test_path_leaving_domain_rejected():
    with pytest.raises(DomainError):
        path_rate(SIRS, PLPath.uniform([[0.3, 0.3], [0.7, 0.5]], 1.0))


def test_path_csv_round_trip(tmp_path):
    p = PLPath.uniform([[0.3, 0.2], [0.31, 0.2]], 2.0)
    f = tmp_path / "p.csv"
    p.to_csv(f)
    assert f.read_text().splitlines()[0] == "t,x_1,x_2"
    back = PLPath.from_csv(f)
    assert np.array_equal(back.knot_points, p.knot_points)
