import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from xyrotor.circle_kernel import (FOURIER_CROSSOVER, T_MIN, TWO_PI, KernelDomainError, PositivityError,
                                   TruncationError, expansion, kernel, kernel_cdf, kernel_plan, kernel_scalar,
                                   kernel_table, log_kernel, log_rest, plan_arrays, rest_constant, sample_step,
                                   wrap, write_kernel_table)

# Frozen from a 30-digit mpmath summation of 1 + 2 Σ e^{-n²t} cos(nΔ).
K_00_T1 = 1.772637204826652153
LOGK_0PI_T1 = -1.201888974112406271
LOGK_HALFPI_PI_T2 = -0.000671150426850055
K_D03_T005 = 5.054258118089277343
K_D2_T03 = 0.115443325297208643

def K_EXACT_T005(d):
    # 40 images in extended precision
    s = sum(np.exp(-np.longdouble(d + TWO_PI * k) ** 2 / np.longdouble(0.2)) for k in range(-20, 21))
    return float(s * np.sqrt(np.longdouble(math.pi) / np.longdouble(0.05)))


angles = st.floats(0.0, TWO_PI, allow_nan=False, exclude_max=True)
times = st.floats(0.02, 20.0)


def test_wrap_range():
    x = np.array([-1e-300, -TWO_PI, 0.0, TWO_PI, 7.0, -7.0, 1e6])
    w = wrap(x)
    assert np.all((w >= 0) & (w < TWO_PI))
    assert wrap(-1e-18) < TWO_PI


def test_series_oracle_t1():
    k = kernel(0.0, 0.0, 1.0, 1e-9)
    assert abs(k.value - K_00_T1) <= k.trunc_error + 1e-15
    assert abs(k.value - 1.772637) < 1e-6
    assert k.trunc_error <= 1e-9


def test_both_routes_against_oracle():
    lo = kernel(0.3, 0.0, 0.05, 1e-12)
    hi = kernel(2.0, 0.0, 0.3, 1e-12)
    assert not kernel_plan(0.05, 1e-12).fourier and kernel_plan(0.3, 1e-12).fourier
    assert abs(lo.value - K_D03_T005) <= lo.trunc_error + 1e-14
    assert abs(hi.value - K_D2_T03) <= hi.trunc_error + 1e-15


def test_crossover_routes_agree():
    d = np.linspace(0, TWO_PI, 101)
    t = FOURIER_CROSSOVER
    four = kernel(d, 0.0, t, 1e-13).value
    fourier, w, inv4t, pref = plan_arrays(t * (1 - 1e-12), 1e-13)
    assert not fourier
    img = np.array([kernel_scalar(x, fourier, w, inv4t, pref) for x in d])
    np.testing.assert_allclose(four, img, atol=1e-11)


def test_flat_limit():
    x = np.linspace(0, TWO_PI, 50)
    k = kernel(x, 1.3, 50.0, 1e-12)
    np.testing.assert_allclose(k.value, 1.0, atol=1e-12)
    lk = log_kernel(x, 0.2, 50.0, 1e-12)
    assert np.max(np.abs(lk.value)) < 2e-12


def test_log_kernel_oracles():
    lk = log_kernel(0.0, math.pi, 1.0, 1e-9)
    assert abs(lk.value - LOGK_0PI_T1) <= lk.trunc_error + 1e-14
    e = expansion(2.0)
    lk = log_kernel(math.pi / 2, math.pi, 2.0, 1e-9)
    assert e.leading(math.pi / 2) == pytest.approx(0.0, abs=1e-15)
    assert abs(lk.value - LOGK_HALFPI_PI_T2) < 1e-12
    assert abs(lk.value - e.leading(math.pi / 2)) <= e.rest_bound


def test_domain_errors():
    with pytest.raises(KernelDomainError):
        kernel(0, 0, 0.0)
    with pytest.raises(KernelDomainError):
        kernel(0, 0, -1.0)
    with pytest.raises(KernelDomainError):
        kernel(0, 0, 1.0, tol=0.0)
    with pytest.raises(KernelDomainError, match="t_min"):
        expansion(0.5)
    with pytest.raises(KernelDomainError):
        sample_step(0.0, 0.0, np.random.default_rng(0))


def test_truncation_failure_carries_bound():
    with pytest.raises(TruncationError) as ei:
        kernel(0, 0, 1.0, tol=1e-12, max_terms=1)
    assert ei.value.best_bound > 0


def test_positivity_error_when_tol_loose():
    with pytest.raises(PositivityError):
        log_kernel(math.pi, 0.0, 0.3, tol=0.5)


@settings(max_examples=200, deadline=None)
@given(angles, angles, times)
def test_symmetry_exact(x, y, t):
    assert kernel(x, y, t).value == kernel(y, x, t).value


@settings(max_examples=100, deadline=None)
@given(angles, angles, st.floats(-5, 5), times)
def test_depends_on_difference(x, y, shift, t):
    a = kernel(x, y, t).value
    b = kernel(wrap(x + shift), wrap(y + shift), t).value
    assert a == pytest.approx(b, rel=1e-11, abs=1e-12)


@pytest.mark.parametrize("t", [0.05, 0.3, 0.5, 1.0, 5.0])
def test_normalization(t):
    # trapezoid on a periodic grid is spectrally accurate
    z = np.linspace(0, TWO_PI, 4096, endpoint=False)
    for x in (0.0, 1.0, 4.0):
        assert abs(kernel(x, z, t).value.mean() - 1.0) < 1e-10


@pytest.mark.parametrize("s,t", [(0.05, 0.3), (0.3, 1.0), (1.0, 5.0), (0.1, 0.1)])
def test_semigroup(s, t):
    z = np.linspace(0, TWO_PI, 4096, endpoint=False)
    for x, y in ((0.0, 1.0), (2.0, 5.5)):
        lhs = (kernel(x, z, s).value * kernel(z, y, t).value).mean()
        assert abs(lhs - kernel(x, y, s + t).value) < 1e-8


@pytest.mark.parametrize("t", [0.01, 0.05, 0.3, 1.0, 5.0])
def test_positivity_on_grid(t):
    k = kernel(np.linspace(0, TWO_PI, 4096, endpoint=False), 0.0, t)
    assert np.all(k.value - k.trunc_error > 0)
    assert np.max(k.trunc_error) <= 1e-12 + 1e-13


def test_pointwise_bound_is_honest():
    # image route near Δ = π, where the kernel is tiny
    x = np.linspace(2.8, math.pi, 64)
    k = kernel(x, 0.0, 0.05, 1e-12)
    exact = np.array([K_EXACT_T005(v) for v in x])
    assert np.all(np.abs(k.value - exact) <= k.trunc_error)


def test_expansion_closed_forms():
    e = expansion(math.log(10.0))
    assert e.h_t == pytest.approx(0.1, rel=1e-15)
    assert e.c1 == pytest.approx(-0.2, rel=1e-15)
    assert e.c2 == pytest.approx(-0.02, rel=1e-14)
    assert e.c3 == pytest.approx(-8e-3 / 3, rel=1e-14)
    assert e.c1 == -2 * e.h_t and e.c2 == -2 * e.h_t**2 and e.c3 == -8 / 3 * e.h_t**3


def test_log_rest_matches_direct_difference():
    x = np.linspace(0, TWO_PI, 257)
    for t in (1.0, 2.0):
        direct = log_kernel(x, math.pi, t, 1e-15).value - expansion(t).leading(x)
        np.testing.assert_allclose(log_rest(x, t), direct, atol=1e-13)


@pytest.mark.parametrize("t", [T_MIN, 1.5, 2.0, 3.0, 4.0, 5.0])
def test_rest_bound_holds_on_grid(t):
    x = np.linspace(0, TWO_PI, 1024, endpoint=False)
    e = expansion(t)
    assert np.max(np.abs(log_rest(x, t))) <= e.rest_bound
    if t <= 2.0:
        gap = np.abs(log_kernel(x, math.pi, t, 1e-15).value - e.leading(x))
        assert np.max(gap) <= e.rest_bound


def test_rest_constant_value():
    # scaled maximum 3.42 at t = 1, times the 10% margin
    assert rest_constant() == pytest.approx(3.765, abs=5e-3)
    scaled = [np.max(np.abs(log_rest(np.linspace(0, TWO_PI, 4096), t))) * math.exp(4 * t)
              for t in (1.0, 2.0, 3.0, 5.0, 8.0)]
    assert all(a >= b for a, b in zip(scaled, scaled[1:]))
    assert scaled[-1] == pytest.approx(2.0, abs=0.01)


def test_sampler_degenerate_time():
    rng = np.random.default_rng(1)
    x0 = 2.0
    s = sample_step(np.full(100000, x0), 1e-8, rng)
    dist = np.abs(wrap(s - x0 + math.pi) - math.pi)
    assert np.mean(dist < 1e-3) > 0.999


def _ks(samples, x0, t):
    theta, cdf = kernel_cdf(x0, t)
    return stats.kstest(samples, lambda v: np.interp(v, theta, cdf)).statistic


@pytest.mark.slow
def test_sampler_ks_t07():
    rng = np.random.default_rng(7)
    s = sample_step(np.zeros(1_000_000), 0.7, rng)
    assert _ks(s, 0.0, 0.7) < 0.002


@pytest.mark.slow
def test_sampler_two_step_equals_one_step():
    rng = np.random.default_rng(11)
    two = sample_step(sample_step(np.zeros(1_000_000), 0.2, rng), 0.5, rng)
    one = sample_step(np.zeros(1_000_000), 0.7, rng)
    assert stats.ks_2samp(two, one).statistic < 0.003


def test_kernel_table_csv(tmp_path):
    rows = kernel_table([0.1, 2.0], n_delta=8)
    assert len(rows) == 16 and rows[0][0] == 0.1
    path = tmp_path / "k.csv"
    write_kernel_table(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,delta_angle,value,trunc_error"
    assert len(lines) == 17
    t, d, v, e = (float(s) for s in lines[10].split(","))
    assert v == pytest.approx(kernel(d, 0.0, t).value, rel=1e-15)
