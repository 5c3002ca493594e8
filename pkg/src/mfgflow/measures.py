"""Discrete probability densities, distances between them, and initializers.

Densities are absolutely-continuous grid functions: nonnegative node
values integrating to one under the grid quadrature.  Atoms are excluded
by representation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid, field_values, integrate

NORMALIZATION_TOL = 1e-10

# Initializers draw from PCG64 streams split as SeedSequence(seed,
# spawn_key=(attempt,)); attempt increments only on degenerate draws.
MAX_REDRAWS = 100


@dataclass(frozen=True)
class ScalarField:
    """Real-valued grid function (payoff, distance, coefficient...)."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ValueError(
                f"field shape {vals.shape} does not match grid {self.grid.shape}"
            )
        object.__setattr__(self, "values", vals)

    def max(self) -> float:
        return float(self.values.max())

    def min(self) -> float:
        return float(self.values.min())


@dataclass(frozen=True)
class Density:
    """Nonnegative grid function with unit integral (the player mass m)."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ValueError(
                f"density shape {vals.shape} does not match grid {self.grid.shape}"
            )
        if vals.min() < 0.0:
            raise ValueError("density values must be nonnegative")
        mass = integrate(vals, self.grid)
        if abs(mass - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"density must integrate to 1, got {mass!r}")
        object.__setattr__(self, "values", vals)


def normalize(raw, grid: Grid | None = None) -> Density:
    """Rescale a nonnegative field so it integrates to one.

    Raises ValueError on negative entries or an (numerically) all-zero
    field.  Idempotent on densities.
    """
    if grid is None:
        grid = getattr(raw, "grid", None)
    vals = field_values(raw).astype(float)
    if vals.min() < 0.0:
        raise ValueError("cannot normalize a field with negative values")
    mass = integrate(vals, grid)
    if mass <= 0.0:
        raise ValueError("cannot normalize an all-zero field")
    return Density(vals / mass, grid)


def _common_grid(a, b) -> Grid:
    ga = getattr(a, "grid", None)
    gb = getattr(b, "grid", None)
    grid = ga if ga is not None else gb
    if grid is None:
        raise ValueError("neither argument carries a grid")
    if ga is not None and gb is not None and ga.shape != gb.shape:
        raise ValueError("fields live on different grids")
    return grid


def tv_distance(m1, m2) -> float:
    """Total-variation distance: quadrature of |m1 - m2|.

    Accepts densities, scalar fields, or plain arrays (at least one
    argument must carry a grid).  Symmetric, and zero iff the node
    values coincide.
    """
    grid = _common_grid(m1, m2)
    return integrate(np.abs(field_values(m1) - field_values(m2)), grid)


def w1_distance_1d(m1, m2) -> float:
    """1-Wasserstein distance between 1D densities via their CDFs.

    Computes the integral over [0,1] of |M1 - M2| where M_i is the
    cumulative (trapezoidal) integral of m_i.  Only defined in 1D.
    """
    grid = _common_grid(m1, m2)
    if grid.dim != 1:
        raise ValueError("w1_distance_1d is only defined on 1D grids")
    diff = field_values(m1) - field_values(m2)
    dx = grid.spacing
    cdf = np.concatenate(([0.0], np.cumsum(dx * 0.5 * (diff[:-1] + diff[1:]))))
    return integrate(np.abs(cdf), grid)


def support(m, rel_threshold: float = 1e-9) -> np.ndarray:
    """Boolean mask of nodes carrying mass above rel_threshold * max(m)."""
    if not 0.0 <= rel_threshold < 1.0:
        raise ValueError("rel_threshold must lie in [0, 1)")
    vals = field_values(m)
    return vals > rel_threshold * vals.max()


def random_density(seed: int, grid: Grid) -> Density:
    """Random 1D initial mass: clipped sum of five random sine modes.

    Draws amplitudes a_j and frequencies b_j uniformly from [1,10],
    forms max(0, sum_j a_j sin(b_j pi x)) and normalizes.  Deterministic
    given the seed.  A degenerate all-zero draw triggers a redraw on a
    split substream; after MAX_REDRAWS attempts an error is raised.
    """
    if grid.dim != 1:
        raise ValueError("random initial densities are only defined in 1D")
    x = grid.axes[0]
    for attempt in range(MAX_REDRAWS):
        rng = np.random.default_rng(
            np.random.SeedSequence(int(seed), spawn_key=(attempt,))
        )
        a = rng.uniform(1.0, 10.0, size=5)
        b = rng.uniform(1.0, 10.0, size=5)
        raw = np.maximum(0.0, np.sin(np.pi * np.outer(b, x)).T @ a)
        if integrate(raw, grid) > 0.0:
            return normalize(raw, grid)
    raise ValueError(f"no usable random density after {MAX_REDRAWS} redraws")
