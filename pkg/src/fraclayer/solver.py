"""Projected-gradient minimization of the layer energy, with certificates.

The minimizer is found by clamped gradient descent: u <- clamp(u - step*g)
with Barzilai-Borwein steps and a backtracking-halving safeguard that makes
the recorded energy history exactly non-increasing.  The energy change of
each trial step is evaluated with the cancellation-free increment forms of
the kernel and potential modules, so descent can be verified at full
floating-point resolution even when the steps are tiny.

Also here: the Euler-Lagrange residual check (the pointwise operator plus
W' must vanish at interior nodes of a converged solution), monotone
rearrangement, translation normalization of layers, and warm-started
continuation across a growing sequence of symmetric windows.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid1D, Profile, interpolate, make_grid, make_profile, zero_crossing
from .kernel import FracOrder, cached_form, frac_laplacian
from .potential import (
    PotentialSpec,
    potential_eval,
    potential_increment,
    quartic_double_well,
)

__all__ = [
    "SolveOptions",
    "SolveReport",
    "build_seed",
    "minimize",
    "el_residual",
    "monotone_rearrange",
    "normalize_translation",
    "continuation_solve",
    "save_trace_csv",
    "TRACE_CSV_HEADER",
]

_STEP_MIN = 1e-14
_STEP_MAX = 1e14
_MAX_HALVINGS = 60


@dataclass(frozen=True)
class SolveOptions:
    """Knobs of the projected-gradient solver.

    grad_tol applies to the max-norm of the projected gradient divided by h
    (the natural scale on which the gradient matches the pointwise operator).
    initial_step of None means h^(2s), the step that makes the first update
    O(1) in profile units.
    """

    max_iters: int = 50000
    grad_tol: float = 1e-8
    step_rule: str = "barzilai_borwein"
    initial_step: float | None = None
    seed_profile: str = "linear_ramp"

    def __post_init__(self) -> None:
        if self.max_iters <= 0:
            raise ValueError(f"max_iters must be positive, got {self.max_iters}")
        if not self.grad_tol > 0.0:
            raise ValueError(f"grad_tol must be positive, got {self.grad_tol}")
        if self.step_rule not in ("barzilai_borwein", "fixed"):
            raise ValueError(
                "step_rule must be 'barzilai_borwein' or 'fixed', "
                f"got {self.step_rule!r}"
            )
        if self.seed_profile not in ("linear_ramp", "sign_step", "custom"):
            raise ValueError(
                "seed_profile must be 'linear_ramp', 'sign_step' or 'custom', "
                f"got {self.seed_profile!r}"
            )
        if self.initial_step is not None and not self.initial_step > 0.0:
            raise ValueError(f"initial_step must be positive, got {self.initial_step}")


@dataclass(frozen=True)
class SolveReport:
    """What the solver certifies about its output.

    monotonicity_defect is the most negative forward difference of the final
    profile (>= 0 means exactly non-decreasing).  energy_history_monotone is
    guaranteed True by the descent safeguard and recorded for auditability.
    el_residual_max is the Euler-Lagrange residual away from the window
    boundary (0.0 for grids too small to leave any margin).
    """

    iterations: int
    converged: bool
    final_grad_norm: float
    final_energy: float
    el_residual_max: float
    monotonicity_defect: float
    energy_history_monotone: bool
    energy_history: np.ndarray = field(repr=False)
    grad_norm_history: np.ndarray = field(repr=False)


def build_seed(grid: Grid1D, exterior: tuple[float, float], kind: str) -> Profile:
    """Standard starting profiles: a straight ramp or a sign step."""
    left, right = float(exterior[0]), float(exterior[1])
    x = grid.nodes()
    if kind == "linear_ramp":
        vals = np.linspace(left, right, grid.n_cells + 1)
    elif kind == "sign_step":
        mid = 0.5 * (grid.a + grid.b)
        vals = np.where(x < mid, left, right).astype(float)
    else:
        raise ValueError(
            f"no built-in seed of kind {kind!r}; pass the profile explicitly"
        )
    return make_profile(grid, np.clip(vals, -1.0, 1.0), left, right)


def _trapezoid_weights(n_nodes: int) -> np.ndarray:
    w = np.ones(n_nodes)
    w[0] = 0.5
    w[-1] = 0.5
    return w


def _projected_gradient(u: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Stationarity measure on the box [-1, 1]: the part of the gradient
    pointing into the feasible set.  Zero exactly at a clamped minimizer."""
    rg = g.copy()
    upper = u >= 1.0
    lower = u <= -1.0
    rg[upper] = np.maximum(g[upper], 0.0)
    rg[lower] = np.minimum(g[lower], 0.0)
    return rg


def minimize(
    p0: Profile,
    order: FracOrder,
    W: PotentialSpec | None = None,
    opts: SolveOptions | None = None,
) -> tuple[Profile, SolveReport]:
    """Clamped gradient descent from p0; returns the profile and a report.

    The starting point is projected onto [-1, 1] componentwise.  Boundary
    nodes pinned by a divergent exterior coupling must match their exterior
    value in p0 (otherwise the energy is infinite and a ValueError names the
    problem).  Hitting max_iters returns converged=False, not an exception.
    """
    spec = quartic_double_well() if W is None else W
    opts = SolveOptions() if opts is None else opts
    g = p0.grid
    h = g.h
    n_nodes = g.n_cells + 1
    tw = _trapezoid_weights(n_nodes)
    form = cached_form(g, order, (p0.left_exterior, p0.right_exterior))

    u = np.clip(np.asarray(p0.values, dtype=float), -1.0, 1.0)
    if form.sing_left and u[0] != form.left:
        raise ValueError(
            "initial profile has infinite energy: the left boundary node must "
            f"equal the exterior value {form.left} at s={order.s}"
        )
    if form.sing_right and u[-1] != form.right:
        raise ValueError(
            "initial profile has infinite energy: the right boundary node must "
            f"equal the exterior value {form.right} at s={order.s}"
        )

    def total_energy(v: np.ndarray) -> float:
        return form.value(v) + h * float(tw @ potential_eval(spec, v, 0))

    def gradient(v: np.ndarray) -> np.ndarray:
        gr = form.kinetic_grad(v) + h * tw * potential_eval(spec, v, 1)
        if form.sing_left:
            gr[0] = 0.0
        if form.sing_right:
            gr[-1] = 0.0
        return gr

    energy_now = total_energy(u)
    if not math.isfinite(energy_now):
        raise ValueError("initial profile has non-finite energy")

    step = opts.initial_step if opts.initial_step is not None else h ** (2.0 * order.s)
    energy_hist = [energy_now]
    grad_hist: list[float] = []
    grad = gradient(u)
    grad_norm = float(np.max(np.abs(_projected_gradient(u, grad)))) / h
    grad_hist.append(grad_norm)

    iterations = 0
    converged = grad_norm <= opts.grad_tol
    u_prev: np.ndarray | None = None
    g_prev: np.ndarray | None = None

    while not converged and iterations < opts.max_iters:
        if opts.step_rule == "barzilai_borwein" and u_prev is not None:
            du = u - u_prev
            dg = grad - g_prev
            denom = float(du @ dg)
            if denom > 0.0:
                step = float(du @ du) / denom
            # otherwise keep the last accepted step
        elif opts.step_rule == "fixed":
            step = (
                opts.initial_step
                if opts.initial_step is not None
                else h ** (2.0 * order.s)
            )
        step = min(max(step, _STEP_MIN), _STEP_MAX)

        trial = step
        accepted = False
        for _ in range(_MAX_HALVINGS):
            u_new = np.clip(u - trial * grad, -1.0, 1.0)
            d = u_new - u
            if not np.any(d):
                break
            delta = form.kinetic_increment(u, d) + h * float(
                tw @ potential_increment(spec, u, d)
            )
            if delta <= 0.0:
                accepted = True
                break
            trial *= 0.5
        if not accepted:
            break  # stagnation at floating-point resolution

        u_prev, g_prev = u, grad
        u = u_new
        step = trial
        energy_now += delta
        grad = gradient(u)
        grad_norm = float(np.max(np.abs(_projected_gradient(u, grad)))) / h
        iterations += 1
        energy_hist.append(energy_now)
        grad_hist.append(grad_norm)
        converged = grad_norm <= opts.grad_tol

    result = p0.with_values(u)
    eh = np.array(energy_hist)
    report = SolveReport(
        iterations=iterations,
        converged=converged,
        final_grad_norm=grad_norm,
        final_energy=energy_now,
        el_residual_max=_report_residual(result, order, spec),
        monotonicity_defect=float(np.min(np.diff(u))) if u.size > 1 else 0.0,
        energy_history_monotone=bool(np.all(np.diff(eh) <= 0.0)),
        energy_history=eh,
        grad_norm_history=np.array(grad_hist),
    )
    return result, report


def _report_residual(p: Profile, order: FracOrder, spec: PotentialSpec) -> float:
    """Euler-Lagrange residual for the report: the default 40-cell margin,
    shrunk to fit small grids, 0.0 when no interior node is left to check."""
    n = p.grid.n_cells
    margin = min(40, (n - 1) // 2)
    if margin < 2:
        return 0.0
    return el_residual(p, order, spec, margin)


def el_residual(
    p: Profile,
    order: FracOrder,
    W: PotentialSpec | None = None,
    margin_cells: int = 40,
) -> float:
    """Max of |(pointwise operator)u + W'(u)| over interior nodes.

    Nodes within margin_cells of either end are excluded: the finite-window
    minimizer is pinned by its exterior there and does not satisfy the
    whole-line equation near the boundary.  margin_cells must be at least 2
    (the pointwise operator needs two cells on each side of its node).
    """
    if margin_cells < 2:
        raise ValueError(f"margin_cells must be >= 2, got {margin_cells}")
    spec = quartic_double_well() if W is None else W
    g = p.grid
    n = g.n_cells
    lo, hi = margin_cells, n - margin_cells
    if lo > hi:
        raise ValueError(
            f"grid with {n} cells is too small for a {margin_cells}-cell margin"
        )
    nodes = g.nodes()
    worst = 0.0
    for i in range(lo, hi + 1):
        r = frac_laplacian(p, float(nodes[i]), order) + float(
            potential_eval(spec, float(p.values[i]), 1)
        )
        worst = max(worst, abs(r))
    return worst


def monotone_rearrange(p: Profile) -> Profile:
    """Sort the nodal values ascending; exterior data unchanged."""
    return p.with_values(np.sort(p.values))


def normalize_translation(p: Profile) -> Profile:
    """Shift the profile so its leftmost zero crossing sits at x = 0.

    The piecewise-linear interpolant is resampled on the lattice h*Z
    intersected with the shifted domain, so a profile already crossing at a
    lattice point is translated exactly.  The crossing must lie at least 10
    cells from each end of the domain.
    """
    g = p.grid
    h = g.h
    x0 = zero_crossing(p)
    if x0 - g.a < 10.0 * h or g.b - x0 < 10.0 * h:
        raise ValueError(
            f"zero crossing at x={x0} is closer than 10 cells to the domain "
            f"boundary [{g.a}, {g.b}]; cannot normalize the translation"
        )
    k_lo = math.ceil((g.a - x0) / h - 1e-9)
    k_hi = math.floor((g.b - x0) / h + 1e-9)
    new_a = k_lo * h
    new_b = k_hi * h
    n_new = k_hi - k_lo
    query = np.clip(new_a + h * np.arange(n_new + 1) + x0, g.a, g.b)
    vals = interpolate(p, query)
    return make_profile(
        Grid1D(new_a, new_b, n_new), vals, p.left_exterior, p.right_exterior
    )


def continuation_solve(
    R_schedule,
    order: FracOrder,
    W: PotentialSpec | None = None,
    opts: SolveOptions | None = None,
    h: float = 0.1,
    exterior: tuple[float, float] = (-1.0, 1.0),
) -> list[tuple[Profile, SolveReport]]:
    """Solve on the symmetric windows [-R, R] along a growing schedule.

    The grid step h is shared by every window (each R is snapped to the node
    lattice; it must sit within 1e-9 of a multiple of h).  The first window
    starts from the ``opts.seed_profile`` seed, each later window from the
    previous solution extended by its exterior values.
    """
    opts = SolveOptions() if opts is None else opts
    rs = [float(r) for r in R_schedule]
    if not rs:
        raise ValueError("R_schedule must be non-empty")
    if any(r2 <= r1 for r1, r2 in zip(rs, rs[1:])):
        raise ValueError(f"R_schedule must be strictly increasing, got {rs}")
    if rs[0] <= 0.0:
        raise ValueError(f"window halfwidths must be positive, got {rs[0]}")

    results: list[tuple[Profile, SolveReport]] = []
    prev: Profile | None = None
    for r in rs:
        m = round(r / h)
        if m < 1 or abs(m * h - r) > 1e-9 * max(1.0, r):
            raise ValueError(
                f"window halfwidth {r} is not a multiple of the grid step {h}"
            )
        grid = make_grid(-m * h, m * h, 2 * m)
        if prev is None:
            seed = build_seed(grid, exterior, opts.seed_profile)
        else:
            x = grid.nodes()
            pg = prev.grid
            vals = interpolate(prev, np.clip(x, pg.a, pg.b))
            vals = np.where(x < pg.a, prev.left_exterior, vals)
            vals = np.where(x > pg.b, prev.right_exterior, vals)
            seed = make_profile(grid, vals, prev.left_exterior, prev.right_exterior)
        sol, rep = minimize(seed, order, W, opts)
        results.append((sol, rep))
        prev = sol
    return results


TRACE_CSV_HEADER = "iteration,energy,grad_norm"


def save_trace_csv(path: str, report: SolveReport) -> None:
    """Write the iteration trace (iteration, energy, grad_norm) as CSV."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(TRACE_CSV_HEADER + "\n")
        for i, (e, gn) in enumerate(zip(report.energy_history, report.grad_norm_history)):
            fh.write(f"{i},{e:.17g},{gn:.17g}\n")
