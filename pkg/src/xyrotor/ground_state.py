"""Single-site effective potential of the conditioned two-layer system.

Conditioning the time-t layer on ``y_spec`` (all spins at π) turns the
ferromagnet into one with single-site potential

    g(θ) = (βh - 2h_t) cos θ - 2 h_t² cos² θ - (8/3) h_t³ cos³ θ,   h_t = e^{-t},

which is *maximized* by the ground-state angle (energies elsewhere in the
package are minimized; here we keep the sign of g).  Because g depends on θ
only through ``c = cos θ``, every interior maximizer ``c* ∈ (-1, 1)`` gives
the reflection pair ``{θ*, 2π - θ*}``: the left/right spin-flop ground states.

The compensation variable is ``δ = βh - 2h_t``.  Writing the stationarity
condition in ``c`` gives the quadratic ``8h_t³ c² + 4h_t² c = δ``; the pair
exists while its root stays inside ``(-1, 1)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .circle_kernel import TWO_PI, ExpansionCoeffs, expansion, log_kernel

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
# distance from c = ±1 below which a maximizer counts as the endpoint
EDGE_TOL = 1e-8


@dataclass(frozen=True)
class SitePotential:
    beta_h: float
    h_t: float
    use_full_log: bool = False

    @classmethod
    def at_time(cls, beta_h: float, t: float, use_full_log: bool = False) -> "SitePotential":
        return cls(beta_h, math.exp(-t), use_full_log)

    @property
    def t(self) -> float:
        return -math.log(self.h_t)

    @property
    def delta(self) -> float:
        return self.beta_h - 2.0 * self.h_t

    @property
    def coeffs(self) -> ExpansionCoeffs:
        return expansion(self.t)

    def of_cos(self, c):
        """g as a function of ``c = cos θ``."""
        if self.use_full_log:
            return site_potential(np.arccos(np.clip(c, -1.0, 1.0)), self)
        h = self.h_t
        return self.delta * c - 2.0 * h * h * c * c - (8.0 / 3.0) * h**3 * c * c * c


def site_potential(theta, sp: SitePotential):
    """``g(θ)``; with ``use_full_log`` the exact ``βh cos θ + log p_t(θ, π)``."""
    if sp.use_full_log:
        return sp.beta_h * np.cos(theta) + log_kernel(theta, math.pi, sp.t, 1e-14).value
    return sp.of_cos(np.cos(theta))


@dataclass
class GroundStateReport:
    maximizers: list[float]
    epsilon_t: float
    degenerate: bool
    theta_star: float
    g_at_max: float
    converged: bool = True
    notes: list[str] = field(default_factory=list)


def golden_max(f, a: float, b: float, tol: float, max_iter: int = 200) -> tuple[float, bool]:
    """Golden-section search for the maximum of a unimodal ``f`` on ``[a, b]``.

    Returns the midpoint of the final bracket and whether the bracket shrank
    below ``tol``.
    """
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            return 0.5 * (a + b), True
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b), b - a <= tol


def _polish(sp: SitePotential, c: float, lo: float, hi: float) -> float:
    """Newton steps on ``g'(c) = δ - 4h²c - 8h³c²``.

    Value comparisons in the golden search only resolve ``c*`` to about
    ``sqrt(eps)``; the derivative has a simple root there.
    """
    h2, h3 = sp.h_t**2, sp.h_t**3
    for _ in range(8):
        d1 = sp.delta - 4.0 * h2 * c - 8.0 * h3 * c * c
        d2 = -4.0 * h2 - 16.0 * h3 * c
        if d2 >= 0:
            break
        nxt = c - d1 / d2
        if not lo <= nxt <= hi or nxt == c:
            break
        c = nxt
    return c


def find_maximizers(sp: SitePotential, grid_n: int = 1024, refine_tol: float = 1e-12) -> GroundStateReport:
    """Global maximizers of g on [0, 2π): grid scan, then golden section in ``cos θ``.

    Refining in ``c`` rather than θ keeps the search well conditioned at the
    pitchfork, where g is quartic in θ but still linear-plus-quadratic in c.
    """
    if grid_n < 256:
        raise ValueError("grid_n must be at least 256")
    theta = np.linspace(0.0, TWO_PI, grid_n, endpoint=False)
    g = site_potential(theta, sp)
    k = int(np.argmax(g))
    step = TWO_PI / grid_n
    th = theta[k] if theta[k] <= math.pi else TWO_PI - theta[k]
    lo, hi = max(0.0, th - step), min(math.pi, th + step)
    c_lo, c_hi = math.cos(hi), math.cos(lo)

    def G(c):
        return float(sp.of_cos(c))

    c_star, converged = golden_max(G, c_lo, c_hi, refine_tol)
    if not sp.use_full_log:
        c_star = _polish(sp, c_star, c_lo, c_hi)
    # endpoints are never sampled by the open golden bracket
    for edge in (1.0, -1.0):
        if c_lo <= edge <= c_hi and G(edge) >= G(c_star):
            c_star = edge
    notes = [] if converged else [f"bracket did not shrink below {refine_tol:g}"]

    interior = -1.0 + EDGE_TOL < c_star < 1.0 - EDGE_TOL
    theta_star = math.acos(min(1.0, max(-1.0, c_star)))
    g_max = float(site_potential(theta_star, sp))
    if interior:
        twin = TWO_PI - theta_star
        g_twin = float(site_potential(twin, sp))
        degenerate = abs(g_max - g_twin) <= 1e-12
        maximizers = [theta_star, twin]
    else:
        degenerate = False
        theta_star = 0.0 if c_star > 0 else math.pi
        g_max = float(site_potential(theta_star, sp))
        maximizers = [theta_star]
    eps = math.pi / 2.0 - theta_star if degenerate else 0.0
    return GroundStateReport(maximizers, eps, degenerate, theta_star, g_max, converged, notes)


def epsilon_first_order(beta_h: float, h_t: float) -> float:
    """Leading behaviour ``ε_t ≈ δ / (4 h_t²)`` near exact compensation."""
    return (beta_h - 2.0 * h_t) / (4.0 * h_t * h_t)


def stationary_cos(beta_h: float, h_t: float) -> float:
    """Root of ``8h³c² + 4h²c - δ = 0`` continuing ``c = 0`` at ``δ = 0``."""
    h = h_t
    delta = beta_h - 2.0 * h
    disc = 1.0 + 2.0 * delta / h
    if disc < 0:
        return math.nan
    # (-1 + sqrt(disc)) / (4h), written to avoid cancellation for small δ
    return (2.0 * delta / h) / (4.0 * h * (1.0 + math.sqrt(disc)))


@dataclass(frozen=True)
class Window:
    t0: float
    t1: float
    touches_start: bool = False
    touches_stop: bool = False

    def __contains__(self, t: float) -> bool:
        return self.t0 <= t <= self.t1


def _degenerate_at(beta_h: float, t: float, use_full_log: bool, grid_n: int) -> bool:
    return find_maximizers(SitePotential.at_time(beta_h, t, use_full_log), grid_n).degenerate


def _bisect_flag(beta_h, a, b, flag_a, use_full_log, grid_n, tol):
    while b - a > tol:
        m = 0.5 * (a + b)
        if _degenerate_at(beta_h, m, use_full_log, grid_n) == flag_a:
            a = m
        else:
            b = m
    return 0.5 * (a + b)


def scan_degeneracy(beta: float, h: float, t_start: float, t_stop: float, step: float = 1e-3,
                    use_full_log: bool = False, grid_n: int = 256):
    """Degeneracy flag on the uniform t grid of the scan."""
    n = int(math.floor((t_stop - t_start) / step + 1e-9)) + 1
    ts = t_start + step * np.arange(n)
    flags = np.array([_degenerate_at(beta * h, t, use_full_log, grid_n) for t in ts])
    return ts, flags


def transition_window(beta: float, h: float, t_start: float = 1.0, t_stop: float = 10.0, step: float = 1e-3,
                      refine: float = 1e-6, use_full_log: bool = False, grid_n: int = 256,
                      scan=None) -> Window | None:
    """Longest run of t in the scan with a degenerate ground-state pair.

    Endpoints inside the range are bisected to ``refine``; a run reaching the
    scan boundary is reported at that boundary.  ``scan`` may pass the output
    of :func:`scan_degeneracy` for the same arguments.
    """
    if not (beta > 0 and h >= 0):
        raise ValueError("need beta > 0 and h >= 0")
    if scan is None:
        scan = scan_degeneracy(beta, h, t_start, t_stop, step, use_full_log, grid_n)
    ts, flags = scan
    if not flags.any():
        return None
    best, run_start = (0, -1, -1), None
    for i, f in enumerate(np.append(flags, False)):
        if f and run_start is None:
            run_start = i
        elif not f and run_start is not None:
            if i - run_start > best[0]:
                best = (i - run_start, run_start, i - 1)
            run_start = None
    _, i0, i1 = best
    bh = beta * h
    t0 = ts[i0] if i0 == 0 else _bisect_flag(bh, ts[i0 - 1], ts[i0], False, use_full_log, grid_n, refine)
    last = len(ts) - 1
    t1 = ts[i1] if i1 == last else _bisect_flag(bh, ts[i1], ts[i1 + 1], True, use_full_log, grid_n, refine)
    return Window(float(t0), float(t1), i0 == 0, i1 == last)


def closed_form_window(beta_h: float, t_start: float, t_stop: float) -> Window | None:
    """Window from the bifurcation conditions ``c* = ±1``.

    The pair exists iff ``-4h² + 8h³ < δ < 4h² + 8h³``.  This is exact while
    ``h_t < 1/4`` (g concave in c on [-1, 1]); for earlier times the lower
    condition is only the local one.
    """
    def upper(t):
        h = math.exp(-t)
        return beta_h - 2 * h - 4 * h * h - 8 * h**3

    def lower(t):
        h = math.exp(-t)
        return beta_h - 2 * h + 4 * h * h - 8 * h**3

    def inside(t):
        return upper(t) < 0 < lower(t)

    ts = np.linspace(t_start, t_stop, 4097)
    ins = np.array([inside(t) for t in ts])
    if not ins.any():
        return None
    i0 = int(np.argmax(ins))
    i1 = len(ins) - 1 - int(np.argmax(ins[::-1]))

    def edge(a, b):
        fa = upper(a) < 0, lower(a) > 0
        fb = upper(b) < 0, lower(b) > 0
        fn = upper if fa[0] != fb[0] else lower
        return brentq(fn, a, b, xtol=1e-14)

    t0 = ts[0] if i0 == 0 else edge(ts[i0 - 1], ts[i0])
    t1 = ts[-1] if i1 == len(ts) - 1 else edge(ts[i1], ts[i1 + 1])
    return Window(float(t0), float(t1), i0 == 0, i1 == len(ts) - 1)


def sweep_rows(betas, hs, ts, grid_n: int = 1024, refine_tol: float = 1e-12, use_full_log: bool = False):
    rows = []
    for beta in betas:
        for h in hs:
            for t in ts:
                r = find_maximizers(SitePotential.at_time(beta * h, t, use_full_log), grid_n, refine_tol)
                rows.append((beta, h, t, r.degenerate, r.theta_star, r.epsilon_t, r.g_at_max))
    return rows


SWEEP_HEADER = ["beta", "h", "t", "degenerate", "theta_star", "epsilon_t", "g_at_max"]


def write_sweep(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_HEADER)
        for beta, h, t, deg, th, eps, g in rows:
            w.writerow([repr(float(beta)), repr(float(h)), repr(float(t)), int(deg), repr(th), repr(eps), repr(g)])
