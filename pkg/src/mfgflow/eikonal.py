"""Distance-to-target fields via fast marching.

The flow needs dist(x, argmax theta) for target sets that may be
disconnected, where the distance solves |grad v| = 1 with v = 0 on the
target in the viscosity sense.  A fast-marching scheme with the
semi-Lagrangian simplex update is used: values are finalized in
nondecreasing order off a binary heap, and each local update minimizes
the interpolated neighbor value plus travel distance over the segment
joining two adjacent neighbors.  In 1D this degenerates to Dijkstra on
the line with exact increments dx.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .grid import Grid, field_values
from .measures import ScalarField


@dataclass(frozen=True)
class TargetSet:
    """Discrete maximizer set of a payoff field.

    mask flags the target nodes; zeta is the level tolerance that was
    used to extract them.  Never empty (the maximizer always belongs).
    """

    mask: np.ndarray
    zeta: float

    def __post_init__(self):
        if not bool(self.mask.any()):
            raise ValueError("target set must be nonempty")


def extract_target(theta: ScalarField, zeta: float | None = None) -> TargetSet:
    """Nodes within zeta of the maximum of theta.

    Default zeta = 1e-10 * (1 + |max theta|), which resolves exact
    plateaus while ignoring roundoff-level variation.
    """
    vals = field_values(theta)
    if not np.isfinite(vals).all():
        raise ValueError("theta must be finite")
    top = vals.max()
    if zeta is None:
        zeta = 1e-10 * (1.0 + abs(top))
    if zeta < 0.0:
        raise ValueError("zeta must be nonnegative")
    return TargetSet(mask=vals >= top - zeta, zeta=float(zeta))


def solve_eikonal(grid: Grid, target: TargetSet) -> ScalarField:
    """Distance field from the target set, v = 0 on target nodes."""
    if target.mask.shape != grid.shape:
        raise ValueError("target mask does not match grid shape")
    if grid.dim == 1:
        v = _sweep_1d(target.mask, grid.spacing)
    else:
        v = _march_2d(target.mask, grid.spacing)
    return ScalarField(v, grid)


def _sweep_1d(mask: np.ndarray, dx: float) -> np.ndarray:
    v = np.where(mask, 0.0, np.inf)
    for i in range(1, v.size):  # left-to-right
        v[i] = min(v[i], v[i - 1] + dx)
    for i in range(v.size - 2, -1, -1):  # right-to-left
        v[i] = min(v[i], v[i + 1] + dx)
    return v


def _march_2d(mask: np.ndarray, dx: float) -> np.ndarray:
    nx, ny = mask.shape
    v = np.where(mask, 0.0, np.inf)
    done = np.zeros_like(mask)
    heap = [(0.0, int(i), int(j)) for i, j in zip(*np.nonzero(mask))]
    heapq.heapify(heap)
    while heap:
        d, i, j = heapq.heappop(heap)
        if done[i, j]:
            continue
        done[i, j] = True
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            a, b = i + di, j + dj
            if 0 <= a < nx and 0 <= b < ny and not done[a, b]:
                cand = _simplex_update(v, a, b, nx, ny, dx)
                if cand < v[a, b]:
                    v[a, b] = cand
                    heapq.heappush(heap, (cand, a, b))
    return v


def _simplex_update(v, i, j, nx, ny, dx):
    """Minimum over neighbor simplices of interpolated value plus step.

    With unit speed the segment-interpolated semi-Lagrangian minimum has
    the closed form (a + b + sqrt(2 dx^2 - (a-b)^2)) / 2 when the two
    axis values are within dx of each other, and min(a, b) + dx
    otherwise.
    """
    a = math.inf
    if i > 0:
        a = v[i - 1, j]
    if i + 1 < nx:
        a = min(a, v[i + 1, j])
    b = math.inf
    if j > 0:
        b = v[i, j - 1]
    if j + 1 < ny:
        b = min(b, v[i, j + 1])
    if a > b:
        a, b = b, a
    if math.isinf(a):
        return math.inf
    if b - a >= dx or math.isinf(b):
        return a + dx
    return 0.5 * (a + b + math.sqrt(2.0 * dx * dx - (a - b) ** 2))
