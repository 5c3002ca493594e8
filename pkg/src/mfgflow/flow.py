"""The two total-variation minimizing-movement flows.

Each outer iteration removes a slice of mass epsilon from the current
density (the lowest-income players, or the players farthest from the
top-income region in the eikonal variant) and rebuilds it on the
payoff plateau {theta >= C} at the height that makes theta flat there,
so that the step approximates one implicit move of the corresponding
TV proximal scheme.  The step size epsilon is halved until the Nash-gap
residual strictly decreases; epsilon resets to eps0 after every
accepted step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .eikonal import extract_target, solve_eikonal
from .elliptic import ModelSpec, solve_payoff
from .grid import Grid, field_values, integrate
from .measures import Density, ScalarField


class EmptySelectionError(RuntimeError):
    """No mass available to move: everything already sits on the target."""


class SelectionError(ValueError):
    """Requested slice exceeds the available mass."""


class RedistributionShortfallError(RuntimeError):
    """The plateau cannot absorb eps; the step size must shrink."""


class StepOverlapError(RuntimeError):
    """Removal and redistribution regions overlapped for this eps."""


@dataclass
class FlowConfig:
    """Outer-loop parameters.

    tau = None binds the residual tolerance to the grid spacing at run
    time.  fixed_eps disables the adaptive halving entirely: every step
    uses that value and is accepted regardless of the residual.

    target_gap_fraction controls how the eikonal variant extracts the
    near-maximal target set before each distance solve: the level
    tolerance is that fraction of the current residual, so regions whose
    income trails the maximum by less than the unresolved gap count as
    part of the target instead of being dismantled by the distance
    selection.  None falls back to the roundoff-level tolerance of
    extract_target (which measurably stalls on payoffs with several
    separated maxima).
    """

    variant: str = "best_response"
    eps0: float = 0.1
    eps_min: float = 1e-15
    max_outer: int = 100
    tau: float | None = None
    support_rel_threshold: float = 1e-9
    fixed_eps: float | None = None
    target_gap_fraction: float | None = 0.7
    keep_trajectory: bool = False

    def __post_init__(self):
        if self.variant not in ("best_response", "eikonal"):
            raise ValueError(f"unknown flow variant {self.variant!r}")
        if not 0.0 < self.eps_min <= self.eps0 <= 1.0:
            raise ValueError("need 0 < eps_min <= eps0 <= 1")
        if self.tau is not None and self.tau <= 0.0:
            raise ValueError("tau must be positive")
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")


@dataclass(frozen=True)
class IterationRecord:
    j: int
    eps: float
    residual: float
    sup_theta: float
    min_theta_supp: float
    tv_step: float
    mass_cum: float
    halvings: int


@dataclass
class FlowResult:
    m: Density
    theta: ScalarField
    converged: bool
    records: list[IterationRecord]
    termination: str
    densities: list[np.ndarray] | None = field(default=None, repr=False)

    @property
    def iterations(self) -> int:
        """Number of accepted outer iterations."""
        return len(self.records) - 1

    @property
    def final_residual(self) -> float:
        return self.records[-1].residual


def nash_gap(theta, m, rel_threshold: float = 1e-9) -> float:
    """max theta minus the minimum of theta over the support of m.

    Zero exactly when every player already earns the top income; the
    flow stops once this residual falls below tau.
    """
    th = field_values(theta)
    m_vals = field_values(m)
    if th.shape != m_vals.shape:
        raise ValueError("theta and m live on different grids")
    mask = m_vals > rel_threshold * m_vals.max()
    assert mask.any(), "normalized density cannot have empty support"
    return float(th.max() - th[mask].min())


def _ordered_slice(
    mass: np.ndarray,
    key: np.ndarray,
    eps: float,
    descending: bool,
    tiebreak: np.ndarray | None = None,
):
    """Take eps of `mass` in the order of `key`, fractionally at the
    crossing level so the slice integrates to eps exactly.

    Nodes sharing the crossing key value are scaled by one common
    factor; an optional tiebreak field orders equal-key nodes ascending
    before the fractional split.  Returns (per-node weights in [0,1],
    crossing level).
    """
    key_flat = key.ravel()
    mass_flat = mass.ravel()
    signed = -key_flat if descending else key_flat
    if tiebreak is None:
        order = np.argsort(signed, kind="stable")
    else:
        order = np.lexsort((tiebreak.ravel(), signed))
    cum = np.cumsum(mass_flat[order])
    total = cum[-1]
    if eps > total * (1.0 + 1e-12) + 1e-15:
        raise SelectionError(f"requested mass {eps!r} exceeds available {total!r}")
    eps_eff = min(eps, total)
    idx = min(int(np.searchsorted(cum, eps_eff, side="left")), order.size - 1)
    level = key_flat[order[idx]]
    inside = key > level if descending else key < level
    at_level = key == level
    if tiebreak is not None:
        tb_level = tiebreak.ravel()[order[idx]]
        inside = inside | (at_level & (tiebreak < tb_level))
        at_level = at_level & (tiebreak == tb_level)
    mass_inside = float(mass_flat[inside.ravel()].sum())
    mass_level = float(mass_flat[at_level.ravel()].sum())
    frac = 0.0
    if mass_level > 0.0:
        frac = min(max((eps_eff - mass_inside) / mass_level, 0.0), 1.0)
    weights = inside.astype(float)
    weights[at_level] = frac
    return weights, float(level)


def select_lowest_income(m, theta, eps: float):
    """Split m into the eps lowest-income slice and the remainder.

    Returns (m_minus, m_plus, eta): m_minus = m on {theta < eta} plus a
    fractional share of the eta level set, with integral exactly eps;
    m_plus = m - m_minus.  Ties at the crossing level are removed
    proportionally, so a constant theta yields m_minus = eps * m.
    """
    grid = _grid_of(m, theta)
    m_vals = field_values(m)
    th = field_values(theta)
    if eps <= 0.0:
        raise SelectionError("eps must be positive")
    weights, eta = _ordered_slice(grid.quad_weights * m_vals, th, eps, descending=False)
    m_minus = m_vals * weights
    return m_minus, m_vals - m_minus, eta


def select_farthest(m, v, eps: float, income=None):
    """Split m into the eps slice farthest from the target and the rest.

    Selection runs on descending distance v.  Distances on a grid carry
    many exact ties (in 1D they are multiples of dx); when the income
    field is supplied, equally far nodes are taken poorest-first, which
    is the tiebreak the flow uses.  Raises EmptySelectionError when no
    mass sits at positive distance (the density already lives on the
    target), which the flow reads as convergence.
    """
    grid = _grid_of(m, v)
    m_vals = field_values(m)
    v_vals = field_values(v)
    if eps <= 0.0:
        raise SelectionError("eps must be positive")
    if float(v_vals[m_vals > 0.0].max(initial=0.0)) <= 0.0:
        raise EmptySelectionError("all mass already sits on the target set")
    tiebreak = None if income is None else field_values(income)
    weights, eta = _ordered_slice(
        grid.quad_weights * m_vals, v_vals, eps, descending=True, tiebreak=tiebreak
    )
    m_minus = m_vals * weights
    return m_minus, m_vals - m_minus, eta


def redistribute(m_plus, theta, model: ModelSpec, eps: float):
    """Rebuild mass eps on the payoff plateau {theta >= C}.

    The added density has the height that flattens theta there: for the
    linear model (f - P theta_bar - m_plus)+, for the harvesting model
    (K - theta_bar - m_plus)+, with theta_bar the top payoff value.
    Negative pointwise heights are clamped to zero and the level C is
    lowered (with fractional weighting of the crossing level) until the
    added mass reaches eps exactly.

    Returns (nu, C, theta_bar).  Raises RedistributionShortfallError
    when the plateau heights over the whole domain cannot absorb eps.
    """
    grid = theta.grid
    th = field_values(theta)
    mp = field_values(m_plus)
    if eps <= 0.0:
        raise SelectionError("eps must be positive")
    theta_bar = float(th.max())
    if model.kind == "linear":
        height = (
            model.coefficient("f", grid)
            - model.coefficient("P", grid) * theta_bar
            - mp
        )
    else:
        height = model.coefficient("K", grid) - theta_bar - mp
    height = np.maximum(height, 0.0)
    capacity = float(np.sum(grid.quad_weights * height))
    if capacity < eps * (1.0 - 1e-12):
        raise RedistributionShortfallError(
            f"plateau capacity {capacity!r} below requested mass {eps!r}"
        )
    weights, level = _ordered_slice(grid.quad_weights * height, th, eps, descending=True)
    return height * weights, level, theta_bar


def _grid_of(a, b) -> Grid:
    grid = getattr(a, "grid", None) or getattr(b, "grid", None)
    if grid is None:
        raise ValueError("no grid attached to the operands")
    return grid


def _attempt_step(m_vals, theta, v, model, grid, eps, variant, rel_thr, allow_overlap):
    """One trial move of mass eps from the current iterate.

    Returns (m_new, theta_new, R_new); raises the selection and
    redistribution signals for the caller to translate into halving or
    termination.
    """
    if variant == "best_response":
        m_minus, m_plus, _ = select_lowest_income(m_vals, theta, eps)
    else:
        m_minus, m_plus, _ = select_farthest(m_vals, v, eps, income=theta)
    nu, _, _ = redistribute(m_plus, theta, model, eps)
    if not allow_overlap and bool(np.any((m_minus > 0.0) & (nu > 0.0))):
        raise StepOverlapError("removal and redistribution regions overlap")
    m_new = m_plus + nu
    total = integrate(m_new, grid)
    if abs(total - 1.0) > 1e-12:
        m_new = m_new / total
    theta_new = solve_payoff(model, m_new, grid, theta0=theta)
    return m_new, theta_new, nash_gap(theta_new, m_new, rel_thr)


def flow_step(m: Density, model: ModelSpec, eps: float, variant: str = "best_response"):
    """A single move from m with step mass eps.

    Solves for theta, selects by income or distance, redistributes onto
    the plateau and re-solves.  A density whose support already lies on
    the argmax of its payoff (zero gap) is returned unchanged.
    Returns (m_next, theta_next, residual).
    """
    grid = m.grid
    theta = solve_payoff(model, m, grid)
    gap = nash_gap(theta, m)
    # roundoff-floor recognizer: a flat payoff over the support means
    # the density is already a discrete fixed point
    if gap <= 1e-11 * (1.0 + abs(theta.max())):
        return m, theta, gap
    v = None
    if variant == "eikonal":
        v = solve_eikonal(grid, extract_target(theta, zeta=0.7 * gap))
    m_new, theta_new, r_new = _attempt_step(
        m.values, theta, v, model, grid, eps, variant, 1e-9, allow_overlap=True
    )
    return Density(np.maximum(m_new, 0.0), grid), theta_new, r_new


def run_flow(model: ModelSpec, m0: Density, cfg: FlowConfig) -> FlowResult:
    """Iterate the flow until the Nash gap falls below tau.

    Adaptive mode (fixed_eps unset) accepts a step only when the
    residual strictly decreases, halving eps otherwise; eps restarts at
    eps0 after each acceptance.  The run stops when the tolerance is
    met, the outer cap is hit, eps is exhausted, or the selection comes
    up empty (everything already on the target).  With fixed_eps every
    computable step is taken as-is, which reproduces the oscillatory
    non-convergent regime of large fixed steps.

    Non-convergence is a reported outcome (converged=False plus a
    termination reason), not an exception.
    """
    grid = m0.grid
    tau = cfg.tau if cfg.tau is not None else grid.spacing
    adaptive = cfg.fixed_eps is None
    m = m0.values.copy()
    theta = solve_payoff(model, m0, grid)
    resid = nash_gap(theta, m, cfg.support_rel_threshold)
    records = [
        IterationRecord(
            j=0,
            eps=0.0,
            residual=resid,
            sup_theta=theta.max(),
            min_theta_supp=theta.max() - resid,
            tv_step=0.0,
            mass_cum=0.0,
            halvings=0,
        )
    ]
    densities = [m.copy()] if cfg.keep_trajectory else None
    mass_cum = 0.0
    termination = None

    j = 0
    while resid > tau and j < cfg.max_outer:
        v = None
        if cfg.variant == "eikonal":
            zeta = None
            if cfg.target_gap_fraction is not None:
                zeta = cfg.target_gap_fraction * resid
            v = solve_eikonal(grid, extract_target(theta, zeta=zeta))
        eps = cfg.eps0 if adaptive else cfg.fixed_eps
        halvings = 0
        trial = None
        while True:
            try:
                trial = _attempt_step(
                    m,
                    theta,
                    v,
                    model,
                    grid,
                    eps,
                    cfg.variant,
                    cfg.support_rel_threshold,
                    allow_overlap=not adaptive,
                )
            except EmptySelectionError:
                termination = "empty_selection"
                break
            except (RedistributionShortfallError, StepOverlapError, SelectionError):
                trial = None
            if trial is not None and (not adaptive or trial[2] < resid):
                break
            trial = None
            if not adaptive:
                termination = "step_failed"
                break
            eps /= 2.0
            halvings += 1
            if eps < cfg.eps_min:
                termination = "eps_exhausted"
                break
        if trial is None:
            break
        m_new, theta, resid = trial
        tv_step = float(np.sum(grid.quad_weights * np.abs(m_new - m)))
        m = m_new
        j += 1
        mass_cum += eps
        records.append(
            IterationRecord(
                j=j,
                eps=eps,
                residual=resid,
                sup_theta=theta.max(),
                min_theta_supp=theta.max() - resid,
                tv_step=tv_step,
                mass_cum=mass_cum,
                halvings=halvings,
            )
        )
        if densities is not None:
            densities.append(m.copy())

    converged = resid <= tau
    if termination is None:
        termination = "converged" if converged else "max_outer"
    return FlowResult(
        m=Density(np.maximum(m, 0.0), grid),
        theta=theta,
        converged=converged,
        records=records,
        termination=termination,
        densities=densities,
    )
