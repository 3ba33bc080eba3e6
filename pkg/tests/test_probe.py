import math

import numpy as np
import pytest

from xyrotor.circle_kernel import TWO_PI, kernel
from xyrotor.lattice import ModelParams
from xyrotor.mc import run_chain, selection_angles
from xyrotor.probe import (PROBE_HEADER, DensityEstimate, OracleTooLarge, ProbeRow, Region, badness_scan,
                           bin_probabilities, conditional_density, density_from_samples, density_tv,
                           gap_with_error, oracle_marginal, probe_spec, witness, write_probe, y_grid)

T_LN10 = math.log(10.0)


def quadrature_density(bh, t, grid, n=4096):
    """Origin density when the x-sites decouple: p_t(·, y0) averaged against e^{βh cos x}."""
    x = (np.arange(n) + 0.5) * TWO_PI / n
    w = np.exp(bh * np.cos(x))
    f = (w[:, None] * kernel(x[:, None], grid[None, :], t, 1e-14).value).mean(axis=0) / w.mean()
    return f / f.mean()


def test_region_invariants():
    with pytest.raises(ValueError):
        Region(2, 2)
    with pytest.raises(ValueError):
        Region(0, 3)
    r = Region(1, 2, d=2)
    assert r.shape == (5, 5) and r.center() == 12
    assert r.inner_mask().sum() == 9


def test_site_zero_kernel_excluded():
    spec = probe_spec(ModelParams(1, 1, 0.3, 1.0, 2, None), Region(1, 2, 2), 0.5)
    mask = np.asarray(spec.kernel_mask).ravel()
    assert not mask[12] and mask.sum() == 24


def test_decoupled_matches_quadrature():
    p = ModelParams(1.0, 0.0, 0.8, 0.7, 2, None)
    est = conditional_density(p, Region(1, 2, 2), 0.0, sweeps=20000, burn_in=500, seed=3)
    want = quadrature_density(0.8, 0.7, est.grid)
    assert np.all(np.abs(est.density - want) <= 3 * est.err)
    assert est.flag == "ok"


def test_flat_limit():
    p = ModelParams(2.0, 1.0, 0.5, 50.0, 2, None)
    for angle in (0.3, 4.0):
        est = conditional_density(p, Region(1, 2, 2), angle, sweeps=600, burn_in=100)
        assert np.max(np.abs(est.density - 1.0)) < 1e-8
    rows = badness_scan([p], [1], d=2, sweeps=600, burn_in=100)
    assert rows[0].gap < 1e-6


def test_chain_matches_oracle():
    p = ModelParams(1.0, 1.0, 0.4, 1.0, 1, None)
    region = Region(1, 2, 1)
    for angle in (0.0, 2.0):
        est = conditional_density(p, region, angle, sweeps=200000, burn_in=1000, seed=11)
        exact = oracle_marginal(p, region, boundary_angle=angle)
        assert density_tv(est.density, exact) < 0.01


def test_oracle_decoupled_is_quadrature():
    p = ModelParams(1.3, 0.0, 0.6, 0.9, 1, None)
    f = oracle_marginal(p, Region(1, 3, 1), boundary_angle=1.0, n_bins=256)
    want = quadrature_density(1.3 * 0.6, 0.9, y_grid(), n=256)
    assert np.max(np.abs(f - want)) < 1e-10


def test_oracle_bin_convergence():
    p = ModelParams(1.0, 1.0, 0.4, 1.0, 1, None)
    a = oracle_marginal(p, Region(1, 2, 1), boundary_angle=0.7, n_bins=128)
    b = oracle_marginal(p, Region(1, 2, 1), boundary_angle=0.7, n_bins=256)
    assert np.max(np.abs(a - b)) < 1e-6


def test_oracle_reflection_symmetry():
    p = ModelParams(1.0, 1.0, 0.4, 1.0, 1, None)
    # y_grid is mirror-symmetric, so y0 -> 2π - y0 reverses it
    f = oracle_marginal(p, Region(1, 2, 1), boundary_angle=0.0)
    assert np.max(np.abs(f - f[::-1])) < 1e-12
    right = oracle_marginal(p, Region(1, 2, 1), boundary_angle=1.2)
    left = oracle_marginal(p, Region(1, 2, 1), boundary_angle=TWO_PI - 1.2)
    assert np.max(np.abs(right - left[::-1])) < 1e-12


def test_oracle_guard():
    p = ModelParams(1.0, 1.0, 0.4, 1.0, 3, None)
    with pytest.raises(OracleTooLarge):
        oracle_marginal(p, Region(1, 2, 3))


def test_gap_invariant_under_boundary_swap():
    p = ModelParams(2.0, 1.0, 0.1, T_LN10, 2, None)
    right, left, _ = selection_angles(p.beta_h, p.t)
    assert right + left == pytest.approx(TWO_PI, abs=1e-12)
    spec = probe_spec(p, Region(1, 2, 2), right, sweeps=3000, burn_in=200, seed=5)
    mirror = probe_spec(p, Region(1, 2, 2), left, sweeps=3000, burn_in=200, seed=5)
    grid = y_grid()
    br = density_from_samples(run_chain(spec).center_angle, p.t, grid)
    bl = density_from_samples(run_chain(mirror, reflect=True).center_angle, p.t, grid)
    # the mirrored chain's density is the original one read backwards
    assert np.max(np.abs(bl - br[:, ::-1])) < 1e-9
    mk = lambda b: DensityEstimate(grid, b.mean(axis=0), b, b.std(axis=0), b.size, "ok")
    g1, e1 = gap_with_error(mk(br), mk(bl))
    g2, e2 = gap_with_error(mk(bl), mk(br))
    assert g1 == g2 and e1 == e2


def test_density_normalized_and_gap_bounds():
    p = ModelParams(1.5, 1.0, 0.3, 1.5, 2, None)
    right, left, _ = selection_angles(p.beta_h, p.t)
    fr = conditional_density(p, Region(1, 2, 2), right, sweeps=2000, burn_in=200, seed=1)
    fl = conditional_density(p, Region(1, 2, 2), left, sweeps=2000, burn_in=200, seed=2)
    for f in (fr, fl):
        assert abs(f.density.mean() - 1.0) < 1e-8
        assert np.all(f.density > 0)
    gap, err = gap_with_error(fr, fl)
    assert 0.0 <= gap <= 2.0 and err >= 0.0
    # the witnessing event attains the grid TV distance
    mask = fr.density > fl.density
    assert np.mean((fr.density - fl.density)[mask]) * mask.sum() / len(mask) == pytest.approx(gap, rel=1e-12)


def test_witness_runs():
    a = np.array([1.0, 2, 2, 0, 0, 3])
    b = np.array([0.0, 1, 1, 1, 1, 1])
    assert witness(a, b) == "0-2;5"
    assert witness(b, b) == ""


def test_bin_probabilities():
    g = y_grid(64)
    f = 1 + 0.5 * np.cos(g)
    pr = bin_probabilities(f, 4)
    # ∫ over each quarter of 1 + cos/2, divided by 2π
    want = np.array([0.25 + 0.5 * s / TWO_PI for s in (1.0, -1.0, -1.0, 1.0)])
    np.testing.assert_allclose(pr, want, atol=1e-14)


@pytest.mark.slow
def test_window_probe_gap_plateau():
    h = math.exp(-2.2)
    p = ModelParams(2.0, 1.0, h, 2.2, 3, None)
    rows = badness_scan([p], [2, 3, 4], d=3, sweeps=3000, burn_in=300, seed=0)
    for r in rows:
        assert r.gap > 0.1 and r.gap - 5 * r.gap_err > 0.1
    # a plateau: consecutive gaps agree within the combined error
    for a, b in zip(rows, rows[1:]):
        assert abs(a.gap - b.gap) < 3 * math.hypot(a.gap_err, b.gap_err)


def test_small_beta_gap_is_noise():
    p = ModelParams(0.1, 1.0, 1.0, T_LN10, 2, None)
    rows = badness_scan([p], [1, 2], d=2, sweeps=4000, burn_in=400, seed=0)
    for r in rows:
        assert r.gap < 2 * r.gap_err


def test_probe_csv(tmp_path):
    rows = [ProbeRow(1.0, 0.1, 2.0, 2, 4, 0.25, 0.01, "0-31", "ok")]
    path = tmp_path / "probe.csv"
    write_probe(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == PROBE_HEADER
    assert lines[1] == "1.0,0.1,2.0,2,4,0.25,0.01,0-31,ok"
