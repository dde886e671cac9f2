import numpy as np
import pytest
from scipy import special

import series_oracle as so
from coinvert.specfun import (
    WaveParams,
    bessel_zeros,
    count_n0,
    fundamental_solution,
    hankel1_0,
)

# frozen from series_oracle.h0(1.0)
H0_AT_ONE = 0.7651976865579666 + 0.08825696421567696j


def test_series_oracle_frozen_value():
    assert abs(so.h0(1.0) - H0_AT_ONE) < 1e-15


def test_hankel_at_one():
    assert abs(hankel1_0(1.0) - H0_AT_ONE) < 1e-12 * abs(H0_AT_ONE)


def test_hankel_real_part_vanishes_at_first_zero():
    t00 = so.bisect_zero(lambda t: float(so.j0(t)), 2.0, 3.0)
    assert abs(t00 - 2.404825557695773) < 1e-12
    assert abs(hankel1_0(t00).real) < 1e-10


def test_hankel_large_argument_modulus():
    t = 100.0
    assert abs(abs(hankel1_0(t)) / np.sqrt(2 / (np.pi * t)) - 1) < 0.01


@pytest.mark.parametrize("t", np.logspace(-3, np.log10(50), 25))
def test_hankel_matches_series_oracle(t):
    ref = so.h0(t)
    assert abs(hankel1_0(t) - ref) <= 1e-10 * abs(ref)


@pytest.mark.parametrize("t", [0.5, 1.0, 5.0, 50.0])
def test_wronskian(t):
    w = special.j0(t) * special.y1(t) - special.j1(t) * special.y0(t)
    assert abs(w / (-2 / (np.pi * t)) - 1) < 1e-10


def test_hankel_rejects_nonpositive():
    with pytest.raises(ValueError):
        hankel1_0(0.0)
    with pytest.raises(ValueError):
        hankel1_0(np.array([1.0, -2.0]))


def test_fundamental_solution_value():
    # (i/4) H0(1) from the series oracle
    expected = 0.25j * H0_AT_ONE
    assert abs(expected - (-0.0220642410 + 0.1912994217j)) < 1e-10
    val = fundamental_solution([1.0, 0.0], [0.0, 0.0], 1.0)
    assert abs(val - expected) < 1e-13


def test_fundamental_solution_symmetry_and_scaling():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(50, 2))
    z = rng.normal(size=(50, 2))
    np.testing.assert_allclose(fundamental_solution(x, z, 3.0), fundamental_solution(z, x, 3.0))
    np.testing.assert_allclose(
        fundamental_solution(x, z, 3.0), fundamental_solution(x / 2, z / 2, 6.0), rtol=1e-13
    )


def test_fundamental_solution_singular():
    with pytest.raises(ValueError):
        fundamental_solution([0.2, 0.1], [0.2, 0.1], 2.0)


def test_bessel_zeros_examples():
    z = bessel_zeros(0, 3.0)
    assert len(z) == 1 and abs(z[0] - 2.4048255577) < 1e-10
    assert bessel_zeros(0, 2.0) == []
    z = bessel_zeros(1, 4.0)
    oracle = so.bisect_zero(lambda t: float(so.j1(t)), 3.5, 4.0)
    assert len(z) == 1 and abs(z[0] - oracle) < 1e-10
    assert abs(z[0] - 3.8317059702) < 1e-10


def test_bessel_zeros_none_missed():
    for n in range(6):
        upper = 30.0
        grid = np.linspace(1e-3, upper, 300001)
        vals = special.jv(n, grid)
        changes = np.count_nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))
        assert len(bessel_zeros(n, upper)) == changes
        np.testing.assert_allclose(bessel_zeros(n, upper), special.jn_zeros(n, changes), atol=1e-10)


def test_count_n0_examples():
    assert count_n0(1.0, 2.0) == 0
    assert count_n0(1.0, 4.0) == 3
    assert count_n0(1.0, 2.405) == 1
    assert count_n0(2.0, 2.0) == count_n0(1.0, 4.0)


def test_count_n0_nondecreasing():
    values = [count_n0(1.0, kr) for kr in np.linspace(0.5, 25, 200)]
    assert all(a <= b for a, b in zip(values, values[1:]))


def test_wave_params_validation():
    WaveParams(k=10.0, delta=0.1)
    with pytest.raises(ValueError):
        WaveParams(k=0.0)
    with pytest.raises(ValueError):
        WaveParams(k=1.0, delta=1.0)
