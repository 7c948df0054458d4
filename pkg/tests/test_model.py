import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epild.errors import DomainError, InvalidParameterError, NoEndemicEquilibriumError
from epild.model import (
    SirsParams,
    birth_death_model,
    drift,
    endemic_equilibrium,
    grid_snap,
    linear_growth_model,
    r0,
    sirs_model,
)


def test_sirs_rates_and_drift():
    m = sirs_model(SirsParams(2.0, 1.0, 1.0))
    x = np.array([0.2, 0.3])
    beta = m.rates_at(x)
    # infection, recovery, loss of immunity
    assert np.allclose(beta, [2.0 * 0.2 * 0.5, 0.2, 0.3])
    assert np.allclose(drift(m, x), [0.2 - 0.2, 0.2 - 0.3])


def test_endemic_equilibrium_is_a_zero_of_the_drift():
    p = SirsParams(2.0, 1.0, 1.0)
    xs = endemic_equilibrium(p)
    assert np.allclose(xs, [0.25, 0.25])
    assert r0(p) == 2.0
    m = sirs_model(SirsParams(1.5, 1.0, 1.0))
    assert np.abs(drift(m, endemic_equilibrium(SirsParams(1.5, 1.0, 1.0)))).max() < 1e-15


def test_no_equilibrium_below_threshold():
    with pytest.raises(NoEndemicEquilibriumError):
        endemic_equilibrium(SirsParams(1.0, 1.0, 1.0))


@pytest.mark.parametrize("bad", [(0, 1, 1), (1, -1, 1), (1, 1, 0)])
def test_invalid_params(bad):
    with pytest.raises(InvalidParameterError):
        SirsParams(*bad)


def test_rates_outside_domain_raise():
    m = sirs_model(SirsParams(2.0, 1.0, 1.0))
    with pytest.raises(DomainError):
        m.rates_at([0.7, 0.5])


def test_model_hash_tracks_parameters():
    a = sirs_model(SirsParams(2.0, 1.0, 1.0)).model_hash()
    b = sirs_model(SirsParams(2.0, 1.0, 1.0)).model_hash()
    c = sirs_model(SirsParams(2.0, 1.0, 1.5)).model_hash()
    assert a == b != c


def test_one_dimensional_models():
    m = linear_growth_model()
    assert np.allclose(m.rates_at([0.5]), [0.5])
    bd = birth_death_model(1.5, 1.0)
    assert np.allclose(drift(bd, [2.0]), [1.0])


def test_snap_endemic_point():
    xs = endemic_equilibrium(SirsParams(2.0, 1.0, 1.0))
    assert np.allclose(grid_snap(xs, 400), [0.25, 0.25])
    z = grid_snap(endemic_equilibrium(SirsParams(1.5, 1.0, 1.0)), 30)
    assert np.allclose(z * 30, np.round(z * 30))


def test_snap_on_the_hypotenuse_stays_feasible():
    # half-up rounding alone would give (0.5, 0.5) + one step too much
    z = grid_snap([0.505, 0.495], 100)
    assert z.sum() <= 1 + 1e-12
    assert np.allclose(z, [0.51, 0.49]) or np.allclose(z, [0.5, 0.5])


def _brute_force_snap(x, N):
    best, arg = np.inf, None
    for i in range(N + 1):
        for j in range(N + 1 - i):
            z = np.array([i, j]) / N
            dist = np.sum((z - x) ** 2)
            if dist < best - 1e-15:
                best, arg = dist, z
    return arg, best


@settings(max_examples=60, deadline=None)
@given(
    st.floats(0.0, 1.0),
    st.floats(0.0, 1.0),
    st.integers(1, 25),
)
def test_snap_is_nearest_grid_point(a, b, N):
    if a + b > 1:
        a, b = a / (a + b), b / (a + b)
    x = np.array([a, b])
    z = grid_snap(x, N)
    _, best = _brute_force_snap(x, N)
    assert np.allclose(z * N, np.round(z * N))
    assert z.sum() <= 1 + 1e-12 and np.all(z >= 0)
    assert np.sum((z - x) ** 2) <= best + 1e-12
