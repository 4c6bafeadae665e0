"""Grids, profiles, interpolation, crossing, clamp, and serialization."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fraclayer.grid import (
    Grid1D,
    clamp,
    interpolate,
    load_profile,
    make_grid,
    make_profile,
    save_profile,
    zero_crossing,
)


def test_grid_nodes_and_h():
    g = make_grid(-2.0, 3.0, 10)
    assert g.h == pytest.approx(0.5, abs=0.0)
    nodes = g.nodes()
    assert nodes.shape == (11,)
    assert nodes[0] == -2.0 and nodes[-1] == 3.0
    assert np.allclose(np.diff(nodes), 0.5)


def test_grid_rejects_bad_bounds_and_cells():
    with pytest.raises(ValueError):
        make_grid(1.0, 1.0, 4)
    with pytest.raises(ValueError):
        make_grid(0.0, 1.0, 0)
    with pytest.raises(ValueError):
        Grid1D(2.0, -2.0, 8)


def test_profile_shape_validation():
    g = make_grid(0.0, 1.0, 4)
    with pytest.raises(ValueError):
        make_profile(g, np.zeros(4), -1.0, 1.0)  # needs 5 nodes
    p = make_profile(g, np.zeros(5), -1.0, 1.0)
    assert p.values.flags.writeable is False


def test_interpolate_inside_outside_and_endpoints():
    g = make_grid(-1.0, 1.0, 2)
    p = make_profile(g, [0.0, 1.0, 0.0], -1.0, 1.0)
    # P1 inside
    assert interpolate(p, -0.5) == pytest.approx(0.5)
    assert interpolate(p, 0.5) == pytest.approx(0.5)
    # exterior constants strictly outside
    assert interpolate(p, -5.0) == -1.0
    assert interpolate(p, 5.0) == 1.0
    # at the endpoints the nodal value wins (continuity from inside)
    assert interpolate(p, -1.0) == 0.0
    assert interpolate(p, 1.0) == 0.0
    # vector input round-trips shapes
    out = interpolate(p, np.array([-2.0, 0.0, 2.0]))
    assert isinstance(out, np.ndarray)
    assert np.allclose(out, [-1.0, 1.0, 1.0])


@given(
    shift=st.floats(min_value=-0.49, max_value=0.49),
    n=st.integers(min_value=2, max_value=40),
)
@settings(max_examples=60, deadline=None)
def test_zero_crossing_of_shifted_ramp(shift, n):
    # u(x) = x - shift on [-1, 1]: crossing must come back exactly
    g = make_grid(-1.0, 1.0, n)
    vals = g.nodes() - shift
    p = make_profile(g, vals, -1.0, 1.0)
    assert zero_crossing(p) == pytest.approx(shift, abs=1e-12)


def test_zero_crossing_prefers_exact_node_and_rejects_signless():
    g = make_grid(0.0, 1.0, 4)
    p = make_profile(g, [-1.0, 0.0, 0.5, 0.8, 1.0], -1.0, 1.0)
    assert zero_crossing(p) == pytest.approx(0.25)
    q = make_profile(g, [0.5, 0.6, 0.7, 0.8, 0.9], -1.0, 1.0)
    with pytest.raises(ValueError):
        zero_crossing(q)


@given(
    data=st.lists(
        st.floats(min_value=-3.0, max_value=3.0, allow_nan=False),
        min_size=5,
        max_size=5,
    )
)
@settings(max_examples=60, deadline=None)
def test_clamp_is_projection(data):
    g = make_grid(0.0, 1.0, 4)
    p = make_profile(g, data, -1.0, 1.0)
    c = clamp(p)
    assert np.all(c.values <= 1.0) and np.all(c.values >= -1.0)
    # idempotent, and identity on already-admissible profiles
    assert np.array_equal(clamp(c).values, c.values)
    inside = np.clip(np.array(data), -1.0, 1.0)
    assert np.array_equal(c.values, inside)


def test_save_load_roundtrip_and_byte_determinism(tmp_path):
    g = make_grid(-1.25, 2.0, 13)
    rng = np.random.default_rng(3)
    p = make_profile(g, rng.uniform(-1, 1, 14), -1.0, 1.0)
    f1 = tmp_path / "p1.csv"
    f2 = tmp_path / "p2.csv"
    save_profile(p, f1, s=0.3)
    save_profile(p, f2, s=0.3)
    assert f1.read_bytes() == f2.read_bytes()
    q, s = load_profile(f1)
    assert s == 0.3
    assert q.grid == p.grid
    assert np.array_equal(q.values, p.values)
    assert (q.left_exterior, q.right_exterior) == (-1.0, 1.0)
    # round-trip again: the serialization is a fixed point
    f3 = tmp_path / "p3.csv"
    save_profile(q, f3, s=s)
    assert f3.read_bytes() == f1.read_bytes()


def test_load_rejects_malformed_header(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("x,u\n0,0\n")
    with pytest.raises(ValueError):
        load_profile(bad)
