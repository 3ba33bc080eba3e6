"""Box geometry, spin configurations and the three Hamiltonians.

All energies are returned with the "minimize me" sign, i.e. the Boltzmann
weight is ``exp(-E)``.

* ``initial_energy``    H̃(x) = -J Σ_{i~k} cos(x_i - x_k) - h Σ_i cos x_i
* ``dynamical_energy``  H(x, y) = β H̃(x) - Σ_i log p_t(x_i, y_i)
* ``restricted_energy`` three-term truncation of H(x, y_spec)

Nearest-neighbour bonds are enumerated as one bond per site and positive
lattice direction on the torus, so an ``L^d`` torus has ``d L^d`` bonds
(for ``L = 2`` the two wrap-around bonds between a pair are both counted).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal

import numpy as np

from .circle_kernel import TWO_PI, expansion, log_kernel, wrap

Boundary = Literal["periodic", "free", "fixed"]
BOUNDARIES = ("periodic", "free", "fixed")


class GeometryError(ValueError):
    """Configuration shape or boundary does not match the model."""


@dataclass(frozen=True)
class ModelParams:
    beta: float
    J: float
    h: float
    t: float
    d: int = 2
    L: int | None = 8

    def __post_init__(self):
        problems = []
        if not self.beta > 0:
            problems.append(f"beta must be > 0, got {self.beta}")
        if not self.J >= 0:
            problems.append(f"J must be >= 0, got {self.J}")
        if not self.h >= 0:
            problems.append(f"h must be >= 0, got {self.h}")
        if not self.t > 0:
            problems.append(f"t must be > 0, got {self.t}")
        if self.d not in (1, 2, 3):
            problems.append(f"d must be 1, 2 or 3, got {self.d}")
        if self.L is not None and self.L < 2:
            problems.append(f"L must be >= 2, got {self.L}")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def beta_J(self) -> float:
        return self.beta * self.J

    @property
    def beta_h(self) -> float:
        return self.beta * self.h


class Lattice:
    """Neighbour tables for a box with a given boundary condition.

    Angles live in an *extended* vector: the ``N`` box sites in row-major
    order followed by the flattened padded array of shape ``shape + 2`` that
    holds the fixed boundary layer.  Free-boundary links point at slot ``N``
    with weight zero.
    """

    def __init__(self, shape: tuple[int, ...], boundary: Boundary):
        if boundary not in BOUNDARIES:
            raise GeometryError(f"unknown boundary {boundary!r}")
        self.shape = tuple(int(s) for s in shape)
        self.d = len(self.shape)
        self.boundary = boundary
        self.n_sites = int(np.prod(self.shape))
        self.padded_shape = tuple(s + 2 for s in self.shape)
        n_ext = self.n_sites + (int(np.prod(self.padded_shape)) if boundary == "fixed" else 1)
        self.n_ext = n_ext

        coords = np.array(np.unravel_index(np.arange(self.n_sites), self.shape)).T
        nbr = np.empty((self.n_sites, 2 * self.d), dtype=np.int64)
        wt = np.ones((self.n_sites, 2 * self.d))
        for axis in range(self.d):
            for s, step in enumerate((1, -1)):
                c = coords.copy()
                c[:, axis] += step
                inside = (c[:, axis] >= 0) & (c[:, axis] < self.shape[axis])
                col = 2 * axis + s
                if boundary == "periodic":
                    c[:, axis] %= self.shape[axis]
                    nbr[:, col] = np.ravel_multi_index(c.T, self.shape)
                    continue
                idx = np.full(self.n_sites, self.n_sites, dtype=np.int64)
                idx[inside] = np.ravel_multi_index(c[inside].T, self.shape)
                if boundary == "fixed":
                    out = ~inside
                    idx[out] = self.n_sites + np.ravel_multi_index((c[out] + 1).T, self.padded_shape)
                else:
                    wt[~inside, col] = 0.0
                nbr[:, col] = idx
        self.nbr = nbr
        self.nbr_w = wt
        # interior bonds are seen from both ends, boundary links only once
        self.bond_w = np.where(nbr < self.n_sites, 0.5, 1.0) * wt
        self.colours = self._colouring()

    def _colouring(self) -> np.ndarray:
        parity = np.indices(self.shape).sum(axis=0).ravel() % 2
        odd_torus = self.boundary == "periodic" and any(s % 2 for s in self.shape)
        if not odd_torus:
            return parity.astype(np.int64)
        # greedy proper colouring; odd tori need a third colour
        col = np.full(self.n_sites, -1, dtype=np.int64)
        for i in range(self.n_sites):
            used = {col[j] for j in self.nbr[i] if j < self.n_sites and j != i}
            c = 0
            while c in used:
                c += 1
            col[i] = c
        return col

    def checkerboard_order(self) -> np.ndarray:
        """Sites sorted by colour class; within a class no two are neighbours."""
        return np.argsort(self.colours, kind="stable").astype(np.int64)

    def colour_offsets(self) -> np.ndarray:
        counts = np.bincount(self.colours)
        return np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    def center_site(self) -> int:
        return int(np.ravel_multi_index(tuple(s // 2 for s in self.shape), self.shape))


@lru_cache(maxsize=64)
def lattice(shape: tuple[int, ...], boundary: Boundary) -> Lattice:
    return Lattice(shape, boundary)


@dataclass
class LatticeConfig:
    """Angles on a box plus the boundary condition they are embedded in.

    For ``boundary == "fixed"`` the layer is a padded array of shape
    ``angles.shape + 2``; only its outer shell is read.
    """

    angles: np.ndarray
    boundary: Boundary = "periodic"
    boundary_layer: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.angles = wrap(np.asarray(self.angles, dtype=float))
        if self.angles.ndim == 0:
            raise GeometryError("angles must be an array")
        if self.boundary not in BOUNDARIES:
            raise GeometryError(f"unknown boundary {self.boundary!r}")
        if self.boundary == "fixed":
            if self.boundary_layer is None:
                raise GeometryError("fixed boundary needs a boundary layer")
            layer = np.asarray(self.boundary_layer, dtype=float)
            if layer.ndim == 0:
                layer = np.full(tuple(s + 2 for s in self.angles.shape), float(layer))
            if layer.shape != tuple(s + 2 for s in self.angles.shape):
                raise GeometryError(f"boundary layer shape {layer.shape} does not pad {self.angles.shape}")
            self.boundary_layer = wrap(layer)
        else:
            self.boundary_layer = None

    @classmethod
    def uniform(cls, theta: float, d: int, L: int, boundary: Boundary = "periodic", boundary_angle=None):
        layer = None if boundary != "fixed" else (theta if boundary_angle is None else boundary_angle)
        return cls(np.full((L,) * d, float(theta)), boundary, layer)

    @classmethod
    def random(cls, rng: np.random.Generator, d: int, L: int, boundary: Boundary = "periodic", boundary_angle=None):
        layer = None
        if boundary == "fixed":
            layer = rng.uniform(0, TWO_PI, (L + 2,) * d) if boundary_angle is None else boundary_angle
        return cls(rng.uniform(0, TWO_PI, (L,) * d), boundary, layer)

    @property
    def lattice(self) -> Lattice:
        return lattice(self.angles.shape, self.boundary)

    @property
    def flat(self) -> np.ndarray:
        return self.angles.ravel()

    def extended(self) -> np.ndarray:
        """Angles in the layout indexed by :class:`Lattice` neighbour tables."""
        tail = self.boundary_layer.ravel() if self.boundary == "fixed" else np.zeros(1)
        return np.concatenate([self.angles.ravel(), tail])

    def reflected(self) -> "LatticeConfig":
        """Apply ``x -> 2π - x`` to every site and to the boundary layer."""
        layer = None if self.boundary_layer is None else wrap(-self.boundary_layer)
        return LatticeConfig(wrap(-self.angles), self.boundary, layer)

    def with_site(self, site, angle: float) -> "LatticeConfig":
        new = self.angles.copy()
        new[_site_tuple(site, self.angles.shape)] = angle
        return LatticeConfig(new, self.boundary, self.boundary_layer)


def y_spec(d: int, L: int) -> LatticeConfig:
    """All spins opposite to the initial field."""
    return LatticeConfig(np.full((L,) * d, math.pi), "periodic")


def special_config(kind: str, d: int, L: int, theta: float | None = None) -> LatticeConfig:
    if kind == "y_spec":
        return y_spec(d, L)
    if kind == "all":
        if theta is None:
            raise ValueError("kind 'all' needs an angle")
        return LatticeConfig(np.full((L,) * d, theta), "periodic")
    raise ValueError(f"unknown special configuration {kind!r}")


def _site_tuple(site, shape):
    if isinstance(site, (int, np.integer)):
        return np.unravel_index(int(site), shape)
    return tuple(site)


def _check(x: LatticeConfig, p: ModelParams) -> None:
    if x.angles.ndim != p.d:
        raise GeometryError(f"config has dimension {x.angles.ndim}, model expects d={p.d}")
    if p.L is not None and x.angles.shape != (p.L,) * p.d:
        raise GeometryError(f"config shape {x.angles.shape} does not match L={p.L}")


def bond_sum(x: LatticeConfig) -> float:
    """Σ over nearest-neighbour bonds of ``cos(x_i - x_k)``, boundary links included."""
    lat = x.lattice
    ext = x.extended()
    a = ext[: lat.n_sites, None]
    return float(np.sum(lat.bond_w * np.cos(a - ext[lat.nbr])))


def initial_energy(x: LatticeConfig, p: ModelParams) -> float:
    _check(x, p)
    return -p.J * bond_sum(x) - p.h * float(np.sum(np.cos(x.angles)))


def dynamical_energy(x: LatticeConfig, y: LatticeConfig, p: ModelParams, tol: float = 1e-12) -> float:
    _check(x, p)
    if y.angles.shape != x.angles.shape:
        raise GeometryError("x and y layers differ in shape")
    lk = log_kernel(x.flat, y.flat, p.t, tol)
    return p.beta * initial_energy(x, p) - float(np.sum(lk.value))


def restricted_energy(x: LatticeConfig, p: ModelParams) -> float:
    """Energy of the truncated two-layer system conditioned on ``y_spec``.

    β multiplies the coupling and field terms only; the kernel-induced
    single-site terms enter without β.
    """
    _check(x, p)
    co = expansion(p.t)
    site = p.beta_h * np.cos(x.angles) + co.leading(x.angles)
    return -p.beta_J * bond_sum(x) - float(np.sum(site))


def mode_energy(x: LatticeConfig, p: ModelParams, mode: str = "initial", y: LatticeConfig | None = None,
                tol: float = 1e-12) -> float:
    """Energy whose ``exp(-E)`` is the sampling weight in a given mode."""
    if mode == "initial":
        return p.beta * initial_energy(x, p)
    if mode in ("dynamical", "conditioned"):
        if y is None:
            y = LatticeConfig(np.full(x.angles.shape, math.pi))
        return dynamical_energy(x, y, p, tol)
    if mode == "restricted":
        return restricted_energy(x, p)
    raise ValueError(f"unknown mode {mode!r}")


def site_energy(theta, p: ModelParams, mode: str = "initial", y_angle: float = math.pi, tol: float = 1e-12):
    """Single-site part of :func:`mode_energy` at one site."""
    theta = np.asarray(theta, dtype=float)
    if mode == "initial":
        return -p.beta_h * np.cos(theta)
    if mode in ("dynamical", "conditioned"):
        return -p.beta_h * np.cos(theta) - log_kernel(theta, y_angle, p.t, tol).value
    if mode == "restricted":
        return -p.beta_h * np.cos(theta) - expansion(p.t).leading(theta)
    raise ValueError(f"unknown mode {mode!r}")


def local_energy_delta(x: LatticeConfig, site, new_angle: float, p: ModelParams, mode: str = "initial",
                       y: LatticeConfig | None = None, tol: float = 1e-12) -> float:
    """``E(x with site set to new_angle) - E(x)`` from the site's neighbourhood.

    ``E`` is :func:`mode_energy`, so in ``"initial"`` mode it includes β.
    """
    lat = x.lattice
    i = int(np.ravel_multi_index(_site_tuple(site, x.angles.shape), x.angles.shape))
    ext = x.extended()
    old = ext[i]
    new = wrap(new_angle)
    nb = ext[lat.nbr[i]]
    w = lat.nbr_w[i]
    d_bond = float(np.sum(w * (np.cos(new - nb) - np.cos(old - nb))))
    y_angle = math.pi
    if mode in ("dynamical", "conditioned") and y is not None:
        y_angle = float(y.flat[i])
    d_site = float(site_energy(new, p, mode, y_angle, tol) - site_energy(old, p, mode, y_angle, tol))
    return -p.beta_J * d_bond + d_site


def write_snapshot(path, x: LatticeConfig) -> None:
    """CSV with columns ``site_index, angle`` (row-major site order)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["site_index", "angle"])
        for i, a in enumerate(x.flat):
            w.writerow([i, repr(float(a))])


def read_snapshot(path, shape: tuple[int, ...], boundary: Boundary = "periodic", boundary_layer=None) -> LatticeConfig:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    n = int(np.prod(shape))
    if len(rows) != n:
        raise GeometryError(f"snapshot has {len(rows)} sites, expected {n}")
    angles = np.empty(n)
    for r in rows:
        angles[int(r["site_index"])] = float(r["angle"])
    return LatticeConfig(angles.reshape(shape), boundary, boundary_layer)
