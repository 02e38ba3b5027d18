import itertools
import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rftopo.covariance import make_model
from rftopo.harness import Aggregate
from rftopo.sampler import GridField, sample_torus
from rftopo.theory import hermite
from rftopo.topology import component_count, euler_characteristic, level_mask, level_topology
from test_topology import bfs_components

SHAPES_2D = st.tuples(st.integers(3, 9), st.integers(3, 9))
SHAPES_3D = st.tuples(st.integers(3, 5), st.integers(3, 5), st.integers(3, 5))


def tie_heavy(shapes):
    """Small integer-valued arrays, so levels often coincide with vertex values."""
    return shapes.flatmap(lambda s: arrays(np.float64, s, elements=st.integers(-3, 3).map(float)))


def cubical_euler(mask):
    """V - E + F (- C) over the closed cells of the periodic grid whose corners all lie in mask."""
    n = mask.ndim
    chi = 0
    for dims in itertools.product((0, 1), repeat=n):
        k = sum(dims)
        for v in itertools.product(*[range(m) for m in mask.shape]):
            corners = itertools.product(*[(0, 1) if d else (0,) for d in dims])
            if all(mask[tuple((a + c) % m for a, c, m in zip(v, cs, mask.shape))] for cs in corners):
                chi += (-1) ** k
    return chi


@settings(max_examples=60, deadline=None)
@given(tie_heavy(SHAPES_2D), st.integers(-3, 3).map(float))
def test_negation_identity_per_realization(values, u):
    f = GridField(values, tuple(float(m) for m in values.shape))
    g = GridField(-values, f.sides)
    a = level_topology(f, u, "excursion", with_balls=False).as_record()
    b = level_topology(g, -u, "sojourn", with_balls=False).as_record()
    for rec in (a, b):
        rec.pop("u")
        rec.pop("side")
    assert a == b


@settings(max_examples=60, deadline=None)
@given(tie_heavy(SHAPES_2D | SHAPES_3D), st.integers(-3, 3).map(float), st.sampled_from(["excursion", "sojourn"]))
def test_flood_fill_oracle(values, u, side):
    assert component_count(values, u, side)[0] == bfs_components(level_mask(values, u, side))


@settings(max_examples=40, deadline=None)
@given(tie_heavy(SHAPES_2D | SHAPES_3D), st.integers(-3, 3).map(float))
def test_euler_matches_cell_count(values, u):
    assert euler_characteristic(values, u) == cubical_euler(level_mask(values, u))


@settings(max_examples=40, deadline=None)
@given(tie_heavy(SHAPES_2D), st.integers(-3, 3).map(float), st.integers(0, 8), st.integers(0, 8))
def test_topology_invariant_under_periodic_shift(values, u, s0, s1):
    shifted = np.roll(values, (s0, s1), axis=(0, 1))
    assert euler_characteristic(values, u) == euler_characteristic(shifted, u)
    assert component_count(values, u)[0] == component_count(shifted, u)[0]


@settings(max_examples=40, deadline=None)
@given(tie_heavy(SHAPES_2D), st.integers(-3, 3).map(float))
def test_level_sets_partition_the_torus(values, u):
    # excursion and sojourn at the same level never share a vertex
    assert not np.any(level_mask(values, u, "excursion") & level_mask(values, u, "sojourn"))


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=40), st.integers(1, 39))
def test_aggregate_merge_commutes(xs, cut):
    cut = min(cut, len(xs) - 1)

    def agg(vals):
        a = Aggregate()
        for v in vals:
            a.add(v)
        return a

    ab = agg(xs[:cut]).merge(agg(xs[cut:]))
    ba = agg(xs[cut:]).merge(agg(xs[:cut]))
    scale = 1 + max(abs(v) for v in xs)
    assert ab.count == ba.count == len(xs)
    assert math.isclose(ab.mean, ba.mean, rel_tol=1e-9, abs_tol=1e-9 * scale)
    assert math.isclose(ab.mean, float(np.mean(xs)), rel_tol=1e-9, abs_tol=1e-9 * scale)
    assert math.isclose(ab.stderr, ba.stderr, rel_tol=1e-7, abs_tol=1e-9 * scale)


@given(st.integers(1, 12), st.floats(-6, 6))
def test_hermite_recurrence(j, x):
    lhs = hermite(j + 1, x)
    rhs = x * hermite(j, x) - j * hermite(j - 1, x)
    assert math.isclose(lhs, rhs, rel_tol=1e-9, abs_tol=1e-9 * (1 + abs(x)) ** (j + 1))


@given(st.integers(1, 12), st.floats(-6, 6))
def test_hermite_derivative(j, x):
    h = 1e-5
    fd = (hermite(j, x + h) - hermite(j, x - h)) / (2 * h)
    assert math.isclose(fd, j * hermite(j - 1, x), rel_tol=1e-6, abs_tol=1e-6 * (1 + abs(x)) ** j)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 1000))
def test_sampler_determinism(seed, replicate):
    model = make_model("bargmann_fock", 2)
    a = sample_torus(model, (32.0, 32.0), (64, 64), seed, replicate)
    b = sample_torus(model, (32.0, 32.0), (64, 64), seed, replicate)
    assert a.values.tobytes() == b.values.tobytes()
