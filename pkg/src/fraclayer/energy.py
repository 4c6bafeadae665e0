"""Total energy of a layer profile: nonlocal kinetic part plus potential well.

The energy of a profile u on [a, b] with constant exterior data is

    F(u) = K(u) + integral over [a, b] of W(u(x)) dx,

where K is the quadratic interaction built in :mod:`fraclayer.kernel`
(half the in-in double integral plus the full in-out term) and W is a
double-well potential from :mod:`fraclayer.potential`.  The potential
integral uses the trapezoid rule on the grid nodes, which is exact for
the piecewise-linear interpolant's endpoint values and keeps the whole
functional a smooth function of the nodal vector.

Everything here is deterministic: equal inputs give bitwise-equal outputs.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .grid import Profile
from .kernel import FracOrder, cached_form, kinetic_window_parts
from .potential import PotentialSpec, potential_eval, quartic_double_well

__all__ = [
    "EnergyBreakdown",
    "energy",
    "energy_gradient",
    "scaled_energy_G",
    "append_breakdown_csv",
    "BREAKDOWN_CSV_HEADER",
]


@dataclass(frozen=True)
class EnergyBreakdown:
    """The three pieces of the energy and their sum.

    k_in_in    half the double integral over the domain squared,
    k_in_out   the domain-exterior interaction (may be +inf when a boundary
               node disagrees with its exterior value and the boundary
               coupling diverges),
    potential  the trapezoid integral of W(u) over the domain,
    total      k_in_in + k_in_out + potential.

    All three pieces are nonnegative for admissible inputs.
    """

    k_in_in: float
    k_in_out: float
    potential: float
    total: float


def _resolve_potential(W: PotentialSpec | None) -> PotentialSpec:
    return quartic_double_well() if W is None else W


def _trapezoid_weights(n_nodes: int) -> np.ndarray:
    w = np.ones(n_nodes)
    w[0] = 0.5
    w[-1] = 0.5
    return w


def _check_values(p: Profile) -> None:
    if not np.all(np.isfinite(p.values)):
        raise ValueError("profile values must be finite")


def _potential_integral(
    p: Profile, spec: PotentialSpec, window: tuple[int, int] | None
) -> float:
    u = p.values
    h = p.grid.h
    if window is None:
        w = potential_eval(spec, u, 0)
        return float(h * (_trapezoid_weights(u.size) @ w))
    i_lo, i_hi = int(window[0]), int(window[1])
    seg = u[i_lo : i_hi + 1]
    w = potential_eval(spec, seg, 0)
    return float(h * (_trapezoid_weights(seg.size) @ w))


def energy(
    p: Profile,
    order: FracOrder,
    W: PotentialSpec | None = None,
    window: tuple[int, int] | None = None,
) -> EnergyBreakdown:
    """Energy breakdown of the profile, optionally restricted to a cell window.

    With ``window=(i_lo, i_hi)`` the domain of the functional becomes the
    sub-interval [x_{i_lo}, x_{i_hi}]; the remaining cells of [a, b] join the
    exterior in the in-out term, and the potential is integrated over the
    window only.  Two profiles that agree outside the window then differ in
    windowed energy by exactly their full-domain energy difference.
    """
    _check_values(p)
    spec = _resolve_potential(W)
    if window is None:
        form = cached_form(p.grid, order, (p.left_exterior, p.right_exterior))
        k_ii = form.in_in_value(p.values)
        k_io = form.in_out_value(p.values)
    else:
        k_ii, k_io = kinetic_window_parts(p, order, window)
    pot = _potential_integral(p, spec, window)
    return EnergyBreakdown(
        k_in_in=k_ii, k_in_out=k_io, potential=pot, total=k_ii + k_io + pot
    )


def energy_gradient(
    p: Profile, order: FracOrder, W: PotentialSpec | None = None
) -> np.ndarray:
    """Gradient of the total energy with respect to the nodal values.

    Entries for boundary nodes that are pinned to their exterior value (the
    regimes where the boundary coupling diverges) are reported as exactly
    zero: those coordinates are not free, so no descent direction uses them.
    A pinned node that does not match its exterior value makes the energy
    infinite and raises a ValueError.
    """
    _check_values(p)
    spec = _resolve_potential(W)
    form = cached_form(p.grid, order, (p.left_exterior, p.right_exterior))
    g = form.kinetic_grad(p.values)
    dw = potential_eval(spec, p.values, 1)
    g = g + p.grid.h * _trapezoid_weights(p.values.size) * dw
    if form.sing_left:
        g[0] = 0.0
    if form.sing_right:
        g[-1] = 0.0
    return g


def scaled_energy_G(
    p: Profile, order: FracOrder, W: PotentialSpec | None = None
) -> float:
    """Energy rescaled by the growth rate of minimal energies in the halfwidth.

    For a profile on a symmetric domain [-R, R] this divides the total energy
    by the regime's growth factor: R^(1-2s) below the critical order, log R at
    the critical order (R must exceed 1 there), and 1 above it, so that
    minimizers have bounded, nonvanishing scaled energy in every regime.
    """
    g = p.grid
    mid = 0.5 * (g.a + g.b)
    halfwidth = 0.5 * (g.b - g.a)
    if abs(mid) > 1e-12 * max(1.0, abs(g.a), abs(g.b)):
        raise ValueError(
            f"scaled energy needs a domain symmetric about 0, got [{g.a}, {g.b}]"
        )
    total = energy(p, order, W).total
    if order.regime == "critical":
        if halfwidth <= 1.0:
            raise ValueError(
                "scaled energy at the critical order needs halfwidth R > 1, "
                f"got R = {halfwidth}"
            )
        return total / math.log(halfwidth)
    if order.regime == "sub":
        return total * halfwidth ** (2.0 * order.s - 1.0)
    return total


BREAKDOWN_CSV_HEADER = "R,s,k_in_in,k_in_out,potential,total"


def append_breakdown_csv(
    path: str, R: float, order: FracOrder, breakdown: EnergyBreakdown
) -> None:
    """Append one row of the energy breakdown to a CSV file, creating it
    (with header) if needed.  Floats are written with repr-faithful precision
    so identical runs produce byte-identical files."""
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", encoding="utf-8") as fh:
        if fresh:
            fh.write(BREAKDOWN_CSV_HEADER + "\n")
        row = (
            R,
            order.s,
            breakdown.k_in_in,
            breakdown.k_in_out,
            breakdown.potential,
            breakdown.total,
        )
        fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
