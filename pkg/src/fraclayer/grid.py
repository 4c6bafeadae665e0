"""Uniform 1-D grids and piecewise-linear profiles with constant exterior data.

A Profile is the discrete object everything else works on: P1 (continuous,
piecewise linear) on [a, b], identically equal to left_exterior on (-inf, a]
and right_exterior on [b, +inf).  Piecewise-linear is the minimal
representation with finite interaction energy across the whole range of
fractional orders (piecewise-constant jumps cost infinite energy for
s >= 1/2).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Grid1D",
    "Profile",
    "make_grid",
    "make_profile",
    "interpolate",
    "zero_crossing",
    "clamp",
    "save_profile",
    "load_profile",
]


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid on [a, b] with n_cells cells; node i sits at a + i*h."""

    a: float
    b: float
    n_cells: int

    def __post_init__(self):
        if not (self.b > self.a):
            raise ValueError(f"need b > a, got [{self.a}, {self.b}]")
        if self.n_cells < 1:
            raise ValueError(f"need n_cells >= 1, got {self.n_cells}")

    @property
    def h(self) -> float:
        return (self.b - self.a) / self.n_cells

    def nodes(self) -> np.ndarray:
        return self.a + self.h * np.arange(self.n_cells + 1)


def make_grid(a: float, b: float, n_cells: int) -> Grid1D:
    return Grid1D(float(a), float(b), int(n_cells))


@dataclass(frozen=True)
class Profile:
    grid: Grid1D
    values: np.ndarray
    left_exterior: float
    right_exterior: float

    def with_values(self, values: np.ndarray) -> "Profile":
        return make_profile(self.grid, values, self.left_exterior, self.right_exterior)


def make_profile(grid: Grid1D, values, left: float, right: float) -> Profile:
    """Build a profile; endpoint compatibility with the exterior data is NOT
    enforced (jumps at a, b are penalized by the interior-exterior energy
    term instead, and are outright infinite for s >= 1/2)."""
    v = np.array(values, dtype=float, copy=True)
    if v.shape != (grid.n_cells + 1,):
        raise ValueError(
            f"values shape {v.shape} does not match grid with "
            f"{grid.n_cells + 1} nodes"
        )
    v.setflags(write=False)
    return Profile(grid=grid, values=v, left_exterior=float(left), right_exterior=float(right))


def interpolate(p: Profile, x) -> float | np.ndarray:
    """Evaluate the profile: P1 inside [a, b], exterior constants outside."""
    g = p.grid
    xs = np.asarray(x, dtype=float)
    t = (xs - g.a) / g.h
    i = np.clip(np.floor(t).astype(int), 0, g.n_cells - 1)
    frac = t - i
    inner = p.values[i] * (1.0 - frac) + p.values[i + 1] * frac
    out = np.where(xs <= g.a, p.left_exterior, np.where(xs >= g.b, p.right_exterior, inner))
    # at the endpoints the nodal values win (continuity from inside)
    out = np.where(xs == g.a, p.values[0], np.where(xs == g.b, p.values[-1], out))
    if np.ndim(x) == 0:
        return float(out)
    return out


def zero_crossing(p: Profile) -> float:
    """Leftmost zero of the interpolant of a sign-changing profile.

    An exactly-zero nodal value wins at its node position; otherwise the
    linear crossing inside the leftmost sign-change cell.  Raises if the
    profile never changes sign (not a layer).
    """
    v = p.values
    g = p.grid
    nodes_zero = np.flatnonzero(v == 0.0)
    sign_change = np.flatnonzero(v[:-1] * v[1:] < 0.0)
    candidates = []
    if nodes_zero.size:
        candidates.append(g.a + g.h * nodes_zero[0])
    if sign_change.size:
        i = sign_change[0]
        candidates.append(g.a + g.h * (i + v[i] / (v[i] - v[i + 1])))
    if not candidates:
        raise ValueError("profile has no sign change: not a layer")
    return min(candidates)


def clamp(p: Profile) -> Profile:
    """Clip nodal values into [-1, 1]; exterior data is left untouched."""
    return p.with_values(np.clip(p.values, -1.0, 1.0))


def save_profile(p: Profile, path, s: float | None = None) -> None:
    """Write CSV (columns x,u) preceded by one JSON header line.

    Floats use %.17g so identical profiles serialize byte-identically.
    """
    g = p.grid
    header = {
        "a": g.a,
        "b": g.b,
        "n_cells": g.n_cells,
        "left": p.left_exterior,
        "right": p.right_exterior,
        "s": s,
    }
    xs = g.nodes()
    with open(path, "w", newline="") as f:
        f.write("# " + json.dumps(header, sort_keys=True) + "\n")
        f.write("x,u\n")
        for x, u in zip(xs, p.values):
            f.write(f"{x:.17g},{u:.17g}\n")


def load_profile(path):
    """Inverse of save_profile; returns (profile, s_or_None)."""
    with open(path) as f:
        first = f.readline()
        if not first.startswith("# "):
            raise ValueError("missing JSON header line")
        header = json.loads(first[2:])
        cols = f.readline().strip()
        if cols != "x,u":
            raise ValueError(f"expected 'x,u' column line, got {cols!r}")
        values = [float(line.split(",")[1]) for line in f if line.strip()]
    g = make_grid(header["a"], header["b"], header["n_cells"])
    p = make_profile(g, values, header["left"], header["right"])
    return p, header.get("s")
