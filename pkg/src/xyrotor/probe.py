"""Numerical bad-configuration probe for the time-evolved measure.

The time-t measure is the y-marginal of the two-layer system.  Its
single-site conditional density at the origin, given y on the rest of a box
Γ, is obtained by sampling the x-layer on Γ with weight

    exp(-β H̃_Γ(x)) Π_{i ∈ Γ \\ {0}} p_t(x_i, y_i)

(the origin's own kernel factor left out) and averaging ``p_t(x_0, y_0)``.
Far-boundary dependence of that density is measured by fixing the x-layer
outside Γ at the right- or left-selecting ground-state angle and taking the
total-variation distance of the two results.  Finite boxes can only witness,
never prove, the discontinuity required of a bad configuration.

Exact references come from transfer-matrix contraction on a discretized
circle, available for chains and for two-dimensional strips of width ≤ 3.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .circle_kernel import TWO_PI, expansion, kernel, log_kernel
from .lattice import ModelParams
from .mc import ChainSpec, blocked, derive_seed, run_chain, selection_angles

N_GRID = 64
# cost guard for the exact contraction, in multiply-adds
MAX_ORACLE_OPS = 2e9
MAX_ORACLE_STATES = 1 << 21


class OracleTooLarge(ValueError):
    """Region exceeds what the exact contraction will attempt."""


def y_grid(n: int = N_GRID) -> np.ndarray:
    return (np.arange(n) + 0.5) * TWO_PI / n


@dataclass(frozen=True)
class Region:
    r_in: int
    r_out: int
    d: int = 3

    def __post_init__(self):
        if not self.r_out > self.r_in >= 1:
            raise ValueError(f"need r_out > r_in >= 1, got r_in={self.r_in}, r_out={self.r_out}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (2 * self.r_out + 1,) * self.d

    def center(self) -> int:
        return int(np.ravel_multi_index((self.r_out,) * self.d, self.shape))

    def inner_mask(self) -> np.ndarray:
        """Flat mask of Λ, the box of radius ``r_in`` around the origin."""
        idx = np.indices(self.shape) - self.r_out
        return (np.abs(idx).max(axis=0) <= self.r_in).ravel()


# --- exact contraction ----------------------------------------------------------------


def _site_energies(spec: ChainSpec, nodes: np.ndarray) -> np.ndarray:
    """``(n_sites, n_nodes)`` single-site energies of the chain's sampling weight."""
    p = spec.params
    n_sites = int(np.prod(spec.shape))
    e = np.tile(-p.beta_h * np.cos(nodes), (n_sites, 1))
    mask = np.ones(n_sites, bool) if spec.kernel_mask is None else np.asarray(spec.kernel_mask, bool)
    if spec.mode in ("conditioned", "dynamical"):
        y = np.full(n_sites, math.pi) if spec.y is None else spec.y.flat
        for i in np.flatnonzero(mask):
            e[i] -= log_kernel(nodes, y[i], p.t, spec.tol).value
    elif spec.mode == "restricted":
        lead = expansion(p.t).leading(nodes)
        e[mask] -= lead
    return e


def exact_site_marginal(spec: ChainSpec, site: int | None = None, n_bins: int = 256) -> np.ndarray:
    """Marginal density (w.r.t. dθ/2π) of one x-site on the nodes ``y_grid(n_bins)``.

    Handles ``spec.shape`` of the form ``(ℓ,)`` or ``(ℓ, w)`` with ``w ≤ 3``;
    boundaries periodic (chains only along the length), free, or fixed at a
    scalar angle.  The site defaults to the lattice centre.
    """
    shape = spec.shape
    if len(shape) == 1:
        length, width = shape[0], 1
    elif len(shape) == 2 and shape[1] <= 3:
        length, width = shape
    else:
        raise OracleTooLarge(f"exact contraction supports chains and strips of width <= 3, got {shape}")
    if n_bins & (n_bins - 1):
        raise ValueError("n_bins must be a power of two")
    if n_bins**width > MAX_ORACLE_STATES or float(n_bins) ** (width + 1) * width * length > MAX_ORACLE_OPS:
        raise OracleTooLarge(f"strip {shape} at n_bins={n_bins} exceeds the cost guard")
    bc = spec.boundary
    if bc == "fixed" and np.ndim(spec.boundary_angle) != 0:
        raise ValueError("oracle supports only a scalar fixed boundary angle")
    if bc == "periodic" and width > 1:
        raise OracleTooLarge("periodic strips are not contracted")

    K = spec.params.beta_J
    nodes = y_grid(n_bins)
    site_e = _site_energies(spec, nodes).reshape(length, width, n_bins)
    if site is None:
        site = int(np.ravel_multi_index(tuple(s // 2 for s in shape), shape))
    s_row, s_col = np.unravel_index(site, (length, width))
    T = np.exp(K * np.cos(nodes[:, None] - nodes[None, :]))
    shift = site_e.min(axis=2, keepdims=True)
    D = np.exp(-(site_e - shift)) / n_bins

    if bc == "periodic":
        return _ring_marginal(T, D[:, 0, :], s_row)

    theta_b = float(spec.boundary_angle) if bc == "fixed" else 0.0
    edge = np.exp(K * np.cos(nodes - theta_b)) if bc == "fixed" else np.ones(n_bins)
    # rows of a strip also see the boundary layer across its width
    side = edge if len(shape) == 2 else np.ones(n_bins)

    def column_weight(j):
        w = np.ones((n_bins,) * width)
        for r in range(width):
            w = w * _along(D[j, r], r, width)
            if r + 1 < width:
                w = w * _pair(T, r, r + 1, width)
        w = w * _along(side, 0, width) * _along(side, width - 1, width)
        return w

    def transfer(msg):
        for r in range(width):
            msg = np.moveaxis(np.tensordot(msg, T, axes=([r], [0])), -1, r)
        return msg

    def normalize(m):
        return m / m.max()

    boundary_msg = np.ones((n_bins,) * width)
    for r in range(width):
        boundary_msg = boundary_msg * _along(edge, r, width)

    left = boundary_msg
    for j in range(s_row):
        left = normalize(transfer(left * column_weight(j)))
    right = boundary_msg
    for j in range(length - 1, s_row, -1):
        right = normalize(transfer(right * column_weight(j)))
    joint = left * column_weight(s_row) * right
    other = tuple(r for r in range(width) if r != s_col)
    marg = joint.sum(axis=other) if other else joint
    return marg / marg.mean()


def _along(v, axis, ndim):
    shape = [1] * ndim
    shape[axis] = len(v)
    return v.reshape(shape)


def _pair(T, a, b, ndim):
    shape = [1] * ndim
    shape[a] = shape[b] = T.shape[0]
    return T.reshape(shape)


def _ring_marginal(T, D, s):
    n = D.shape[0]
    order = [(s + k) % n for k in range(1, n)]
    A = np.eye(T.shape[0])
    for i in order:
        A = (A @ T) * D[i][None, :]
        A /= A.max()
    # closes the loop back onto the marked site
    loop = np.einsum("ij,ji->i", A, T) if n > 1 else np.diag(T)
    marg = loop * D[s]
    return marg / marg.mean()


def trig_interpolant(values: np.ndarray):
    """Coefficients of the trigonometric interpolant through values at ``y_grid(n)``."""
    n = len(values)
    c = np.fft.rfft(values) / n
    # undo the half-bin offset of the nodes
    k = np.arange(len(c))
    return c * np.exp(-1j * k * math.pi / n)


def bin_probabilities(values: np.ndarray, n_out: int = N_GRID) -> np.ndarray:
    """Exact bin masses of the trigonometric interpolant over ``n_out`` equal bins."""
    n = len(values)
    c = trig_interpolant(values)
    edges = np.linspace(0.0, TWO_PI, n_out + 1)
    prob = np.full(n_out, c[0].real * TWO_PI / n_out)
    for k in range(1, len(c)):
        weight = 1.0 if (n % 2 == 0 and k == n // 2) else 2.0
        # ∫ Re(c e^{ikθ}) dθ over each bin
        prim = (c[k] * np.exp(1j * k * edges) / (1j * k)).real * weight
        prob += np.diff(prim)
    prob /= TWO_PI
    return prob / prob.sum()


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Total variation between two probability vectors."""
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def density_tv(f: np.ndarray, g: np.ndarray) -> float:
    """Total variation between two densities sampled on a uniform grid (w.r.t. dθ/2π)."""
    return 0.5 * float(np.mean(np.abs(f - g)))


def probe_spec(p: ModelParams, region: Region, boundary_angle: float, *, sweeps: int = 4000, burn_in: int = 500,
               seed: int = 0, mode: str = "conditioned", annulus: bool = False, parallel: bool = False) -> ChainSpec:
    """Chain on Γ whose weight excludes the origin's kernel factor.

    Default: y = y_spec on Γ \\ {0} and x fixed at ``boundary_angle`` outside Γ.
    ``annulus=True`` instead puts y at ``boundary_angle`` on Γ \\ Λ and leaves
    the x boundary free.
    """
    from .lattice import LatticeConfig

    shape = region.shape
    mask = np.ones(int(np.prod(shape)), bool)
    mask[region.center()] = False
    y = np.full(shape, math.pi)
    boundary, angle = "fixed", boundary_angle
    if annulus:
        y.ravel()[~region.inner_mask()] = boundary_angle
        boundary, angle = "free", None
    params = ModelParams(p.beta, p.J, p.h, p.t, region.d, None)
    return ChainSpec(params, mode=mode, y=LatticeConfig(y), boundary=boundary, boundary_angle=angle,
                     sweeps=sweeps, burn_in=burn_in, seed=seed, shape=shape, kernel_mask=mask,
                     start=boundary_angle, parallel=parallel)


@dataclass
class DensityEstimate:
    grid: np.ndarray
    density: np.ndarray
    blocks: np.ndarray
    err: np.ndarray
    n_samples: int
    flag: str


def density_from_samples(x0: np.ndarray, t: float, grid: np.ndarray, n_blocks: int = 32, tol: float = 1e-12):
    """Blocked averages of ``p_t(x0, y)`` over samples ``x0``; each normalized on the grid."""
    n = len(x0) // n_blocks * n_blocks
    x0 = x0[len(x0) - n:].reshape(n_blocks, -1)
    blocks = np.empty((n_blocks, len(grid)))
    for b in range(n_blocks):
        blocks[b] = kernel(x0[b][:, None], grid[None, :], t, tol).value.mean(axis=0)
    blocks /= blocks.mean(axis=1, keepdims=True)
    return blocks


def conditional_density(p: ModelParams, region: Region, boundary_angle: float, *, sweeps: int = 4000,
                        burn_in: int = 500, seed: int = 0, mode: str = "conditioned", annulus: bool = False,
                        n_grid: int = N_GRID, err_threshold: float = 0.05) -> DensityEstimate:
    """Monte Carlo estimate of the origin's conditional density on ``y_grid(n_grid)``."""
    spec = probe_spec(p, region, boundary_angle, sweeps=sweeps, burn_in=burn_in, seed=seed, mode=mode,
                      annulus=annulus)
    tr = run_chain(spec)
    grid = y_grid(n_grid)
    blocks = density_from_samples(tr.center_angle, p.t, grid)
    dens = blocks.mean(axis=0)
    dens /= dens.mean()
    err = blocks.std(axis=0, ddof=1) / math.sqrt(len(blocks))
    # sin x0 is the observable the boundary selects
    ok = blocked(np.sin(tr.center_angle)).equilibrated and float(err.max()) <= err_threshold
    return DensityEstimate(grid, dens, blocks, err, len(tr), "ok" if ok else "unequilibrated")


def oracle_marginal(p: ModelParams, region: Region, y_values: np.ndarray | None = None, boundary_angle: float = 0.0,
                    n_bins: int = 256, grid: np.ndarray | None = None, mode: str = "conditioned",
                    boundary: str = "fixed") -> np.ndarray:
    """Exact conditional density of ``y_0`` for chains (``region.d == 1``).

    ``y_values`` is the y-layer on Γ (the origin's entry is ignored); default
    ``y_spec``.  Returned on ``grid`` (default ``y_grid(64)``), normalized.
    """
    from .lattice import LatticeConfig

    if region.d != 1:
        raise OracleTooLarge("probe oracle is contracted for chains only")
    shape = region.shape
    y = np.full(shape, math.pi) if y_values is None else np.asarray(y_values, float)
    mask = np.ones(shape[0], bool)
    mask[region.center()] = False
    params = ModelParams(p.beta, p.J, p.h, p.t, 1, None)
    spec = ChainSpec(params, mode=mode, y=LatticeConfig(y), boundary=boundary,
                     boundary_angle=boundary_angle if boundary == "fixed" else None,
                     sweeps=2, burn_in=0, shape=shape, kernel_mask=mask)
    marg = exact_site_marginal(spec, region.center(), n_bins)
    nodes = y_grid(n_bins)
    grid = y_grid() if grid is None else grid
    f = (marg[:, None] * kernel(nodes[:, None], grid[None, :], p.t, 1e-14).value).mean(axis=0)
    return f / f.mean()


# --- badness scan ---------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeRow:
    beta: float
    h: float
    t: float
    r_in: int
    r_out: int
    gap: float
    gap_err: float
    witness_bins: str
    flag: str

    @property
    def key(self):
        return (self.beta, self.h, self.t, self.r_in)


PROBE_HEADER = ["beta", "h", "t", "r_in", "r_out", "gap", "gap_err", "witness_bins", "flag"]


def witness(f_right: np.ndarray, f_left: np.ndarray) -> str:
    """Bin ranges where the right-boundary density is larger, e.g. ``"0-31"``.

    The event formed by these bins attains the grid TV distance.
    """
    idx = np.flatnonzero(f_right > f_left)
    if len(idx) == 0:
        return ""
    runs, start = [], idx[0]
    for a, b in zip(idx[:-1], idx[1:]):
        if b != a + 1:
            runs.append((start, a))
            start = b
    runs.append((start, idx[-1]))
    return ";".join(f"{a}-{b}" if a != b else f"{a}" for a, b in runs)


def gap_with_error(right: DensityEstimate, left: DensityEstimate) -> tuple[float, float]:
    """Grid TV distance and its jackknife error over paired blocks."""
    gap = density_tv(right.density, left.density)
    nb = len(right.blocks)
    r_sum, l_sum = right.blocks.sum(axis=0), left.blocks.sum(axis=0)
    jack = np.array([density_tv((r_sum - right.blocks[b]) / (nb - 1), (l_sum - left.blocks[b]) / (nb - 1))
                     for b in range(nb)])
    err = math.sqrt((nb - 1) / nb * float(np.sum((jack - jack.mean()) ** 2)))
    return gap, err


def badness_scan(param_sets, r_in_list, *, d: int = 3, sweeps: int = 4000, burn_in: int = 500, seed: int = 0,
                 threads: int = 1, mode: str = "conditioned", annulus: bool = False,
                 err_threshold: float = 0.05) -> list[ProbeRow]:
    """Boundary-induced gap of the origin's conditional density, ``r_out = 2 r_in``.

    A gap that stays away from zero as ``r_in`` grows is the non-Gibbs
    surrogate; a gap decaying to zero is the Gibbs surrogate.
    """
    cells = sorted(((p.beta, p.h, p.t, r, side, p) for p in param_sets for r in r_in_list
                    for side in ("left", "right")), key=lambda c: c[:5])

    def job(k_cell):
        k, (beta, h, t, r, side, p) = k_cell
        right, left, _ = selection_angles(p.beta_h, p.t)
        angle = right if side == "right" else left
        est = conditional_density(p, Region(r, 2 * r, d), angle, sweeps=sweeps, burn_in=burn_in,
                                  seed=derive_seed(seed, k), mode=mode, annulus=annulus,
                                  err_threshold=err_threshold)
        return (beta, h, t, r, side), est

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = dict(pool.map(job, enumerate(cells)))
    rows = []
    for p in param_sets:
        for r in r_in_list:
            key = (p.beta, p.h, p.t, r)
            fr, fl = results[key + ("right",)], results[key + ("left",)]
            gap, err = gap_with_error(fr, fl)
            flag = "ok" if fr.flag == fl.flag == "ok" else "unequilibrated"
            rows.append(ProbeRow(p.beta, p.h, p.t, r, 2 * r, gap, err, witness(fr.density, fl.density), flag))
    return sorted(rows, key=lambda r: r.key)


def write_probe(path, rows: list[ProbeRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PROBE_HEADER)
        for r in rows:
            w.writerow([repr(r.beta), repr(r.h), repr(r.t), r.r_in, r.r_out, repr(r.gap), repr(r.gap_err),
                        r.witness_bins, r.flag])
