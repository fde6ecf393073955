import math

import numpy as np
import pytest
from scipy.special import ive

from services.errors import DomainError
from services.scalar_kernels import (
    bessel_comparison_rhs,
    bessel_sequence,
    bessel_table,
    bessel_total_mass,
    heat_kernel_Z,
    log_s_profile,
    phi,
    s_profile,
    s_profile_rescaled,
    sup_profile,
)


def test_heat_kernel_Z_values():
    assert heat_kernel_Z(0.0, 0) == 1.0
    assert heat_kernel_Z(0.0, 3) == 0.0
    assert heat_kernel_Z(1.0, 1) == pytest.approx(0.2079104154, rel=1e-9)
    assert heat_kernel_Z(1.0, -1) == heat_kernel_Z(1.0, 1)
    with pytest.raises(DomainError):
        heat_kernel_Z(-1.0, 0)


@pytest.mark.parametrize("t", [0.1, 1.0, 10.0, 100.0])
def test_recurrence(t):
    h = bessel_sequence(t, 52)
    for j in range(1, 51):
        assert h[j - 1] - h[j + 1] == pytest.approx(2.0 * j / t * h[j], rel=1e-10)


@pytest.mark.parametrize("t", [0.5, 15.0, 25.0, 300.0, 5000.0, 2e4])
def test_sequence_matches_scipy(t):
    seq = bessel_sequence(t, 40)
    np.testing.assert_allclose(seq, ive(np.arange(41), t), rtol=1e-11)


def test_table_rows_match_sequences():
    ts = np.array([0.3, 30.0, 3e5])
    table = bessel_table(ts, 20)
    for row, t in zip(table, ts):
        np.testing.assert_allclose(row, bessel_sequence(t, 20), rtol=1e-12)


def test_large_time_values_are_finite():
    t = 2e9
    leading = 1.0 / math.sqrt(2.0 * math.pi * t)
    assert heat_kernel_Z(t, 0) == pytest.approx(leading * (1.0 + 1.0 / (8.0 * t)), rel=1e-12)
    assert heat_kernel_Z(t, 1) == pytest.approx(leading * (1.0 - 3.0 / (8.0 * t)), rel=1e-12)
    table = bessel_table(np.array([1.0, 2e9, 5e10]), 300)
    assert np.all(np.isfinite(table))
    assert np.all(table[1:] > 0)
    assert np.all(np.diff(table[1]) < 0)


def test_large_time_expansion_matches_scipy_below_its_limit():
    t = 5e8
    np.testing.assert_allclose(bessel_sequence(t, 200), ive(np.arange(201), t), rtol=1e-11)
    far = np.arange(11_000, 13_001, 500)
    seq = bessel_sequence(1e8, int(far[-1]))
    np.testing.assert_allclose(seq[far], ive(far, 1e8), rtol=1e-10)


@pytest.mark.parametrize("t", [0.5, 1.0, 20.0, 500.0])
def test_total_mass(t):
    mass = bessel_total_mass(t)
    assert 1.0 - 1e-10 <= mass <= 1.0 + 1e-12


def test_bessel_comparability_band():
    ratios = [heat_kernel_Z(t, j) / bessel_comparison_rhs(t, j)
              for t in (0.5, 1.0, 5.0, 20.0, 100.0) for j in range(61)]
    assert max(ratios) / min(ratios) <= 20.0


def test_phi():
    assert phi(1.0) == pytest.approx(math.sqrt(2) - 1 - math.log(1 + math.sqrt(2)), rel=1e-12)
    assert phi(1.0) == pytest.approx(-0.4671605, abs=1e-7)
    assert phi(2.0) > phi(1.0)
    assert -1e-5 < phi(1e6) < 0
    grid = np.logspace(-3, 3, 10_000)
    values = phi(grid)
    assert np.all(np.diff(values) > 0)
    assert np.all(values < 0)
    assert np.all(values <= 1.0 / (2 * grid) - np.log1p(1.0 / grid) + 1e-15)
    with pytest.raises(DomainError):
        phi(0.0)


def test_s_profile():
    assert s_profile(0, 1.0) == pytest.approx(math.exp(math.sqrt(2) - 1) / (1 + math.sqrt(2)) / 3 ** 0.25, rel=1e-12)
    assert s_profile(3, 2.0 * 4) == pytest.approx(s_profile_rescaled(3, 2.0), rel=1e-10)
    assert math.log(s_profile(5, 7.0)) == pytest.approx(log_s_profile(5, 7.0), rel=1e-14)
    with pytest.raises(DomainError):
        s_profile(-1, 1.0)
    with pytest.raises(DomainError):
        s_profile(2, 0.0)


def test_sup_profile_bounds():
    assert sup_profile(0, weighted=True).sup == 0.0
    sup10 = sup_profile(10)
    assert 0.1 <= 11 ** 2 * sup10.sup <= 10.0
    dense = np.logspace(-4, 6, 100_000)
    assert sup10.sup >= s_profile(10, dense).max() * (1 - 1e-8)
    assert 101 ** 3 * sup_profile(100, weighted=True).sup <= 10.0
    worst = max((n + 1) ** 2 * sup_profile(n).sup for n in range(0, 201, 5))
    assert worst <= 10.0
