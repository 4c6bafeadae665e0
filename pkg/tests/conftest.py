"""Shared fixtures: memoized layer solves and continuation sweeps.

The expensive inputs of the suite are converged minimizers on large
symmetric windows.  Several test modules (and most acceptance criteria)
need the same handful of (s, R, h) combinations, so the solves are cached
for the whole session behind two factory fixtures.  Every cached solve is
cold (linear-ramp seed) and run to the solver's own convergence criterion;
tests that need warm starts or custom seeds call the solver directly.
"""

from __future__ import annotations

import numpy as np
import pytest

from fraclayer.grid import make_grid, Profile
from fraclayer.kernel import FracOrder
from fraclayer.solver import (
    SolveOptions,
    SolveReport,
    build_seed,
    continuation_solve,
    minimize,
)

_LAYERS: dict[tuple[float, float, float], tuple[Profile, SolveReport]] = {}
_SWEEPS: dict[tuple[float, tuple[float, ...], float], list] = {}


def solve_layer(s: float, R: float, h: float) -> tuple[Profile, SolveReport]:
    """Converged minimizer on [-R, R] at grid step h, cached per session."""
    key = (float(s), float(R), float(h))
    if key not in _LAYERS:
        m = round(R / h)
        if abs(m * h - R) > 1e-9 * max(1.0, R):
            raise ValueError(f"R={R} is not on the h={h} lattice")
        g = make_grid(-m * h, m * h, 2 * m)
        p0 = build_seed(g, (-1.0, 1.0), "linear_ramp")
        opts = SolveOptions(seed_profile="custom", max_iters=200_000)
        _LAYERS[key] = minimize(p0, FracOrder(float(s)), opts=opts)
    return _LAYERS[key]


def solve_sweep(s: float, schedule: tuple[float, ...], h: float) -> list:
    """continuation_solve result along the schedule, cached per session."""
    key = (float(s), tuple(float(r) for r in schedule), float(h))
    if key not in _SWEEPS:
        _SWEEPS[key] = continuation_solve(list(key[1]), FracOrder(float(s)), h=h)
    return _SWEEPS[key]


@pytest.fixture(scope="session")
def layer_cache():
    """Callable (s, R, h) -> (Profile, SolveReport), memoized session-wide."""
    return solve_layer


@pytest.fixture(scope="session")
def sweep_cache():
    """Callable (s, schedule, h) -> continuation results, memoized."""
    return solve_sweep


@pytest.fixture(scope="session")
def rng_factory():
    """Deterministic per-test RNG streams: rng_factory(tag) is reproducible."""

    def make(tag: int) -> np.random.Generator:
        return np.random.default_rng(900_000 + tag)

    return make
