"""Heat kernel of Brownian motion on the circle.

Densities are taken with respect to the normalized reference measure
``dθ / 2π``, so the kernel is

    p_t(x, y) = 1 + 2 Σ_{n≥1} exp(-n² t) cos(n (x - y))

and integrates to one against ``dθ / 2π``.  For small ``t`` the Fourier series
converges slowly and the Poisson-summed image form

    p_t(x, y) = sqrt(π / t) Σ_k exp(-(x - y + 2πk)² / (4t))

is used instead.  Every evaluation carries a rigorous truncation bound.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi
EPS = np.finfo(float).eps

# below this the image sum is cheaper than the Fourier series
FOURIER_CROSSOVER = 0.3
# validity floor of the three-term expansion of log p_t(x, π)
T_MIN = 1.0
MAX_TERMS = 64
# safety factor applied to the numerically located rest-term constant
REST_MARGIN = 1.1


class KernelDomainError(ValueError):
    """Raised for non-positive times or tolerances, or t below the expansion floor."""


class TruncationError(RuntimeError):
    """The requested tolerance cannot be met within the term cap."""

    def __init__(self, message: str, best_bound: float):
        super().__init__(message)
        self.best_bound = best_bound


class PositivityError(ArithmeticError):
    """The truncation bound swallows the kernel value, so its logarithm is not certified."""


def wrap(theta):
    """Reduce angles into [0, 2π)."""
    r = np.mod(theta, TWO_PI)
    # np.mod can round a tiny negative input up to exactly 2π
    r = np.where(r >= TWO_PI, r - TWO_PI, r)
    if np.ndim(r) == 0:
        return float(r)
    return r


@dataclass(frozen=True)
class KernelEval:
    """Kernel value(s) with a uniform bound on ``|value - exact|``."""

    value: float | np.ndarray
    trunc_error: float | np.ndarray
    n_terms: int


@dataclass(frozen=True)
class ExpansionCoeffs:
    """Three-term expansion of ``log p_t(x, π)`` in powers of ``cos x``."""

    t: float
    h_t: float
    c1: float
    c2: float
    c3: float
    rest_bound: float

    def leading(self, x):
        c = np.cos(x)
        return self.c1 * c + self.c2 * c * c + self.c3 * c * c * c


@dataclass(frozen=True)
class KernelPlan:
    """Truncation chosen for a given ``(t, tol)``.

    For the Fourier route ``n`` is the highest harmonic kept; for the image
    route the images ``k = -n..n`` are summed.
    """

    t: float
    fourier: bool
    n: int
    tail: float

    @property
    def n_terms(self) -> int:
        return self.n + 1 if self.fourier else 2 * self.n + 1


def _fourier_tail(n: int, t: float) -> float:
    # 2 Σ_{m>n} e^{-m²t} with m² ≥ (n+1)² + 2j(n+1) for m = n+1+j
    m = n + 1
    return 2.0 * math.exp(-m * m * t) / (-math.expm1(-2.0 * m * t))


def _image_tail(n: int, t: float) -> float:
    # |Δ + 2πk| ≥ π(2|k| - 1) for |Δ| ≤ π; both signs of k contribute
    a = math.pi * math.pi / (4.0 * t)
    m = 2 * n + 1
    return 2.0 * math.sqrt(math.pi / t) * math.exp(-a * m * m) / (-math.expm1(-4.0 * a * m))


def _image_rel_tail(n: int, t: float) -> float:
    # dropped images relative to the k = 0 term, |Δ| ≤ π: the nearest one
    # (|k| = n+1) is down by e^{-π² n(n+1)/t}; further ones decay geometrically
    return 2.0 * math.exp(-math.pi**2 * n * (n + 1) / t) / (-math.expm1(-2.0 * math.pi**2 * (n + 1) / t))


def _check_t(t: float) -> None:
    if not t > 0:
        raise KernelDomainError(f"time must be positive, got t={t}")


@lru_cache(maxsize=1024)
def kernel_plan(t: float, tol: float, max_terms: int = MAX_TERMS) -> KernelPlan:
    """Pick the evaluation route and the smallest truncation meeting ``tol``."""
    _check_t(t)
    if not tol > 0:
        raise KernelDomainError(f"tolerance must be positive, got tol={tol}")
    fourier = t >= FOURIER_CROSSOVER
    tail_fn = _fourier_tail if fourier else _image_tail
    # the image route always keeps k = ±1: at Δ = π those equal the k = 0 term
    n = 0 if fourier else 1
    best = tail_fn(n, t)
    while best > tol:
        n += 1
        plan = KernelPlan(t, fourier, n, 0.0)
        if plan.n_terms > max_terms:
            raise TruncationError(
                f"tol={tol:g} not reached at t={t:g} within {max_terms} terms",
                best_bound=best,
            )
        best = tail_fn(n, t)
    return KernelPlan(t, fourier, n, best)


def _series(delta: np.ndarray, plan: KernelPlan) -> tuple[np.ndarray, np.ndarray]:
    """Truncated kernel and a pointwise bound on its error."""
    t = plan.t
    # reduce |Δ| so that swapping x and y gives bit-identical results
    a = np.fmod(np.abs(delta), TWO_PI)
    d = np.minimum(a, TWO_PI - a)
    if plan.fourier:
        value = np.ones_like(d)
        absum = 1.0
        for n in range(plan.n, 0, -1):
            w = 2.0 * math.exp(-n * n * t)
            value += w * np.cos(n * d)
            absum += w
        return value, np.full_like(d, plan.tail + 4.0 * EPS * plan.n_terms * absum)
    inv4t = 1.0 / (4.0 * t)
    value = np.zeros_like(d)
    rounding = np.zeros_like(d)
    for k in range(-plan.n, plan.n + 1):
        s = d + TWO_PI * k
        z = s * s * inv4t
        term = np.exp(-z)
        value += term
        # exp(-z) inherits the relative error of z, about z·eps
        rounding += term * (2.0 * z + 4.0)
    pref = math.sqrt(math.pi / t)
    value *= pref
    # all terms are positive, so the bounds hold pointwise and relatively
    tail = np.minimum(value * _image_rel_tail(plan.n, t), plan.tail)
    return value, tail + 2.0 * EPS * (plan.n_terms + 2) * value + EPS * pref * rounding


def kernel(x, y, t: float, tol: float = 1e-12, max_terms: int = MAX_TERMS) -> KernelEval:
    """Evaluate ``p_t(x, y)``; ``x`` and ``y`` broadcast as numpy arrays.

    ``trunc_error`` has the shape of ``value``: a pointwise bound covering the
    truncated tail (at most the bound that met ``tol``) plus rounding.
    """
    plan = kernel_plan(float(t), float(tol), max_terms)
    delta = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    value, err = _series(np.atleast_1d(delta), plan)
    if np.ndim(delta) == 0:
        return KernelEval(float(value[0]), float(err[0]), plan.n_terms)
    return KernelEval(value, err, plan.n_terms)


def log_kernel(x, y, t: float, tol: float = 1e-12, max_terms: int = MAX_TERMS) -> KernelEval:
    """``log p_t(x, y)`` with error bound ``err / (value - err)``."""
    k = kernel(x, y, t, tol, max_terms)
    margin = np.asarray(k.value - k.trunc_error)
    if np.any(margin <= 0):
        i = int(np.argmin(margin))
        v, e = np.ravel(k.value)[i], np.ravel(k.trunc_error)[i]
        raise PositivityError(f"kernel value {v:g} not certified positive (bound {e:g}) at t={t:g}; tighten tol")
    return KernelEval(np.log(k.value), k.trunc_error / margin, k.n_terms)


def log_rest(x, t: float, n_max: int | None = None) -> np.ndarray:
    """Remainder ``log p_t(x, π) - (c1 cos x + c2 cos²x + c3 cos³x)``.

    Computed without cancellation: with ``u = -2 e^{-t} cos x`` and ``r`` the
    ``n ≥ 2`` part of the kernel series, the remainder is the ``k ≥ 4`` part of
    the log series in ``S = u + r`` plus the cross terms in ``r`` from ``k ≤ 3``.
    Accurate to relative precision far beyond ``e^{-4t}`` for ``t ≥ T_MIN``.
    """
    x = np.asarray(x, dtype=float)
    if n_max is None:
        n_max = max(3, int(math.ceil(math.sqrt(40.0 / t))) + 1)
    r = np.zeros_like(x)
    for n in range(n_max, 1, -1):
        r += 2.0 * math.exp(-n * n * t) * np.cos(n * (x - math.pi))
    u = -2.0 * math.exp(-t) * np.cos(x)
    s = u + r
    high = np.zeros_like(x)
    # |s| ≤ 2Σe^{-n²t} < 0.75 at t ≥ 1; 120 terms leave < 1e-17 relative
    for k in range(120, 3, -1):
        high += (-1.0) ** (k + 1) * s**k / k
    return high + r - u * r - 0.5 * r * r + u * u * r + u * r * r + r**3 / 3.0


@lru_cache(maxsize=1)
def rest_constant(grid_n: int = 1 << 15) -> float:
    """Constant ``C`` with ``|log_rest(x, t)| ≤ C e^{-4t}`` for ``t ≥ T_MIN``.

    The scaled maximum ``max_x |R_t| e^{4t}`` decreases in ``t`` towards 2, so
    it is located at ``T_MIN`` and inflated by ``REST_MARGIN``.
    """
    x = np.linspace(0.0, TWO_PI, grid_n, endpoint=False)
    peak = float(np.max(np.abs(log_rest(x, T_MIN)))) * math.exp(4.0 * T_MIN)
    return REST_MARGIN * peak


def expansion(t: float) -> ExpansionCoeffs:
    """Coefficients of the leading terms of ``log p_t(x, π)`` and the rest bound."""
    _check_t(t)
    if t < T_MIN:
        raise KernelDomainError(f"expansion requires t >= t_min={T_MIN}, got t={t}")
    h = math.exp(-t)
    return ExpansionCoeffs(
        t=t,
        h_t=h,
        c1=-2.0 * h,
        c2=-2.0 * h * h,
        c3=-8.0 / 3.0 * h**3,
        rest_bound=rest_constant() * math.exp(-4.0 * t),
    )


def sample_step(x0, t: float, rng: np.random.Generator, size=None):
    """Advance angles by circular Brownian motion for time ``t``.

    The increment is Gaussian with variance ``2t``: its wrapped characteristic
    function ``exp(-n² σ² / 2)`` then matches the kernel's ``exp(-n² t)``.
    """
    _check_t(t)
    x0 = np.asarray(x0, dtype=float)
    if size is None:
        size = x0.shape
    return wrap(x0 + rng.normal(0.0, math.sqrt(2.0 * t), size=size))


def kernel_cdf(x0: float, t: float, n_grid: int = 1 << 14, tol: float = 1e-12):
    """Tabulate the CDF on [0, 2π) of the kernel started at ``x0``.

    Composite Simpson quadrature of the density against ``dθ / 2π``; returns
    ``(theta, cdf)`` for use with ``np.interp``.
    """
    from scipy.integrate import cumulative_simpson

    theta = np.linspace(0.0, TWO_PI, n_grid + 1)
    dens = kernel(x0, theta, t, tol).value / TWO_PI
    cdf = cumulative_simpson(dens, x=theta, initial=0.0)
    return theta, cdf / cdf[-1]


def kernel_table(times: Iterable[float], n_delta: int = 64, tol: float = 1e-12) -> list[tuple]:
    """Rows ``(t, delta_angle, value, trunc_error)`` on a uniform angle grid."""
    deltas = np.linspace(0.0, TWO_PI, n_delta, endpoint=False)
    rows = []
    for t in times:
        k = kernel(deltas, 0.0, t, tol)
        rows.extend((float(t), float(d), float(v), float(e)) for d, v, e in zip(deltas, k.value, k.trunc_error))
    return rows


def write_kernel_table(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "delta_angle", "value", "trunc_error"])
        for t, d, v, e in rows:
            w.writerow([repr(t), repr(d), repr(v), repr(e)])


# --- compiled evaluation for the samplers -------------------------------------------


def plan_arrays(t: float, tol: float = 1e-12) -> tuple[bool, np.ndarray, float, float]:
    """Flatten a plan into what the compiled kernel needs.

    Returns ``(fourier, weights, inv4t, prefactor)``; for the Fourier route the
    weights are ``2 e^{-n²t}``, for the image route they are the shifts ``2πk``.
    """
    plan = kernel_plan(float(t), float(tol))
    if plan.fourier:
        w = np.array([2.0 * math.exp(-n * n * t) for n in range(1, plan.n + 1)])
        return True, w, 0.0, 1.0
    w = np.array([TWO_PI * k for k in range(-plan.n, plan.n + 1)], dtype=float)
    return False, w, 1.0 / (4.0 * t), math.sqrt(math.pi / t)


@njit(cache=True, nogil=True)
def kernel_scalar(delta, fourier, weights, inv4t, prefactor):
    if fourier:
        s = 0.0
        for i in range(weights.shape[0] - 1, -1, -1):
            s += weights[i] * math.cos((i + 1) * delta)
        return 1.0 + s
    a = abs(delta) % (2.0 * math.pi)
    d = min(a, 2.0 * math.pi - a)
    s = 0.0
    for i in range(weights.shape[0]):
        z = d + weights[i]
        s += math.exp(-z * z * inv4t)
    return prefactor * s
