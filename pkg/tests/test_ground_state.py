import math

import numpy as np
import pytest

from xyrotor.circle_kernel import TWO_PI, expansion
from xyrotor.ground_state import (SWEEP_HEADER, SitePotential, closed_form_window, epsilon_first_order,
                                  find_maximizers, golden_max, site_potential, stationary_cos, sweep_rows,
                                  transition_window, write_sweep)

T_LN10 = math.log(10.0)
# Closed-form window roots for βh = 0.2 and βh = 1 (mpmath, 30 digits).
WIN_02 = (2.097759620567468184, 2.480995451196432883)
WIN_1_STOP = 1.302525043995951541
# ε_t = π/2 - arcsin(c*) with c* the exact stationary root, h_t = 0.1.
EPS_EXACT = {1e-3: 0.024878800986387261, 1e-4: 0.0024987538487132571}


def sp_at(bh, h_t=0.1, full=False):
    return SitePotential(bh, h_t, full)


def test_site_potential_examples():
    assert site_potential(math.pi / 2, sp_at(0.2)) == pytest.approx(0.0, abs=1e-17)
    assert site_potential(0.0, sp_at(0.2)) == pytest.approx(-0.02 - 8e-3 / 3, abs=1e-15)
    assert site_potential(0.0, sp_at(0.2)) == pytest.approx(-0.0226667, abs=1e-7)


def test_site_potential_even():
    th = np.linspace(0, TWO_PI, 1024, endpoint=False)
    g = site_potential(th, sp_at(0.23))
    # the mirrored grid points and cos agree to rounding only
    assert np.max(np.abs(g[1:] - g[1:][::-1])) <= 4 * np.finfo(float).eps * np.max(np.abs(g))
    assert site_potential(1.0, sp_at(0.23)) == site_potential(-1.0, sp_at(0.23))


@pytest.mark.parametrize("t", [1.0, 2.0, 3.5])
def test_full_log_within_rest_bound(t):
    th = np.linspace(0, TWO_PI, 1024, endpoint=False)
    a = site_potential(th, SitePotential.at_time(0.3, t))
    b = site_potential(th, SitePotential.at_time(0.3, t, True))
    assert np.max(np.abs(a - b)) <= expansion(t).rest_bound


def test_compensated_pair():
    r = find_maximizers(sp_at(0.2))
    assert r.degenerate
    assert abs(r.maximizers[0] - math.pi / 2) < 1e-9
    assert abs(r.maximizers[1] - 3 * math.pi / 2) < 1e-9
    assert abs(r.epsilon_t) < 1e-9


@pytest.mark.parametrize("delta", [1e-3, 1e-4])
def test_epsilon_matches_exact_root(delta):
    r = find_maximizers(sp_at(0.2 + delta))
    assert r.degenerate
    assert r.epsilon_t == pytest.approx(EPS_EXACT[delta], abs=1e-9)
    assert math.sin(r.epsilon_t) == pytest.approx(stationary_cos(0.2 + delta, 0.1), abs=1e-11)
    # first order holds to O(δ²) with a coefficient of order 1/h_t³
    assert abs(r.epsilon_t - epsilon_first_order(0.2 + delta, 0.1)) < 200 * delta**2


def test_field_dominated_unique():
    r = find_maximizers(sp_at(1.0, 0.01))
    assert not r.degenerate
    assert r.maximizers == [0.0]
    assert r.epsilon_t == 0.0


def test_negative_delta_points_to_pi():
    r = find_maximizers(sp_at(0.0, 0.1))
    assert not r.degenerate and r.maximizers == [math.pi]


def test_reflection_pairing():
    rng = np.random.default_rng(4)
    for _ in range(20):
        h = rng.uniform(0.02, 0.2)
        r_sp = sp_at(2 * h + rng.uniform(-2, 2) * h * h, h)
        r = find_maximizers(r_sp)
        if r.degenerate:
            a, b = r.maximizers
            assert a + b == pytest.approx(TWO_PI, abs=1e-12)
            assert 0 < a < math.pi
            assert abs(r.g_at_max - float(site_potential(b, r_sp))) <= 1e-12


def test_grid_n_guard():
    with pytest.raises(ValueError):
        find_maximizers(sp_at(0.2), grid_n=128)


def test_golden_max_flags_unreachable():
    x, ok = golden_max(lambda c: -(c - 0.3) ** 2, -1, 1, 1e-300, max_iter=50)
    assert not ok and abs(x - 0.3) < 1e-6
    r = find_maximizers(sp_at(0.2), refine_tol=0.0)
    assert not r.converged and r.notes


@pytest.mark.slow
def test_agrees_with_dense_grid():
    rng = np.random.default_rng(8)
    th = np.linspace(0, TWO_PI, 10**6, endpoint=False)
    step = TWO_PI / 10**6
    for _ in range(20):
        h = rng.uniform(0.01, 0.3)
        sp = sp_at(rng.uniform(0, 1.0), h)
        r = find_maximizers(sp)
        g = site_potential(th, sp)
        best = th[int(np.argmax(g))]
        # grid optimum is within one spacing of the true maximizer set
        dist = min(abs((best - m + math.pi) % TWO_PI - math.pi) for m in r.maximizers)
        assert dist <= step
        assert r.g_at_max >= g.max() - 1e-15


def test_full_log_maximizer_perturbation():
    for t in (1.5, 2.3026, 3.0):
        sp3 = SitePotential.at_time(0.2, t)
        spf = SitePotential.at_time(0.2, t, True)
        a, b = find_maximizers(sp3), find_maximizers(spf)
        if not (a.degenerate and b.degenerate):
            continue
        h = sp3.h_t
        c = math.cos(a.theta_star)
        s2 = 1 - c * c
        # g''(θ) with g = δc - 2h²c² - (8/3)h³c³
        g2 = -(sp3.delta - 4 * h * h * c - 8 * h**3 * c * c) * c + (-4 * h * h - 16 * h**3 * c) * s2
        bound = math.sqrt(expansion(t).rest_bound / abs(g2)) + 1e-12
        assert abs(a.theta_star - b.theta_star) <= bound


def test_window_beta_h_02():
    w = transition_window(1.0, 0.2)
    assert w is not None and T_LN10 in w
    assert abs(w.t0 - WIN_02[0]) < 1e-4 and abs(w.t1 - WIN_02[1]) < 1e-4
    cf = closed_form_window(0.2, 1.0, 10.0)
    assert cf.t0 == pytest.approx(WIN_02[0], abs=1e-12)
    assert cf.t1 == pytest.approx(WIN_02[1], abs=1e-12)


def test_window_zero_field_is_none():
    # δ = -2h_t < 0 and the quadratic in c pushes the maximizer to c = -1
    assert transition_window(1.0, 0.0, 1.0, 3.0, step=1e-2) is None


def test_window_beta_h_1_hugs_the_start():
    w = transition_window(1.0, 1.0, 1.0, 10.0)
    assert w is not None and w.touches_start and not w.touches_stop
    assert w.t0 == 1.0 and abs(w.t1 - WIN_1_STOP) < 1e-4
    assert closed_form_window(1.0, 1.0, 10.0).t1 == pytest.approx(WIN_1_STOP, abs=1e-12)


def test_monotone_exit():
    for bh in (0.05, 0.2, 0.6):
        assert not find_maximizers(SitePotential.at_time(bh, 9.9)).degenerate


def test_sweep_csv(tmp_path):
    rows = sweep_rows([1.0], [0.2], [T_LN10, 5.0])
    path = tmp_path / "gs.csv"
    write_sweep(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == SWEEP_HEADER
    first = lines[1].split(",")
    assert first[3] == "1" and abs(float(first[4]) - math.pi / 2) < 1e-9
    assert lines[2].split(",")[3] == "0"
