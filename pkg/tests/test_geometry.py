import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qspace import ParameterError
from qspace.geometry import (Ball, Cube, ball_volume, check_whitney, dist_to_set, dyadic_cubes,
                             interiors_overlap, whitney_decompose)


def test_dist_to_set_examples():
    assert dist_to_set((0, 0), [(0, 0)]) == 0
    assert dist_to_set((3, 4), [(0, 0)]) == pytest.approx(5.0)
    lattice = np.array(list(itertools.product(range(5), repeat=2)), dtype=float)
    brute = min(math.hypot(0.5 - p[0], 0 - p[1]) for p in lattice)
    assert dist_to_set((0.5, 0), lattice) == pytest.approx(brute) == pytest.approx(0.5)


def test_dist_to_empty_set():
    with pytest.raises(ParameterError, match="empty set"):
        dist_to_set((0, 0), np.empty((0, 2)))


def test_dyadic_cubes_partition():
    box = Cube((0.0, 0.0), 1.0)
    assert len(dyadic_cubes(0, box)) == 1
    assert len(dyadic_cubes(1, box)) == 4
    cs = dyadic_cubes(3, box)
    assert len(cs) == 64
    assert sum(c.edge**2 for c in cs) == pytest.approx(1.0)
    assert not any(interiors_overlap(a, b) for a, b in itertools.combinations(cs, 2))


def test_ball_volume():
    assert ball_volume(2, 1.0) == pytest.approx(math.pi)
    assert ball_volume(3, 2.0) == pytest.approx(4 / 3 * math.pi * 8)
    assert Ball((0, 0), 2.0).dilate(0.5).radius == 1.0


def test_whitney_point_in_square():
    E = np.array([[0.0, 0.0]])
    cubes = whitney_decompose(E, Cube((-1.0, -1.0), 2.0), 10)
    assert cubes
    assert check_whitney(cubes, E) == {"overlap": 0, "distance": 0, "neighbour_ratio": 0, "alignment": 0}


def test_whitney_1d_bounded_per_level():
    cubes = whitney_decompose(np.array([[0.0]]), Cube((0.0,), 1.0), 16)
    per_level = {}
    for w in cubes:
        per_level[w.level] = per_level.get(w.level, 0) + 1
    # brute force: away from the coarsest levels the count per level is constant
    deep = [v for L, v in per_level.items() if L >= 4]
    assert max(deep) <= 4 and max(per_level.values()) <= 8


def test_whitney_cantor_counts_grow_like_dimension():
    from qspace.fractal import gen_cantor_centers
    E, _ = gen_cantor_centers(0.5, 3, 2, with_cubes=False)
    cubes = whitney_decompose(E.points, Cube((0.0, 0.0), 1.0), 9)
    assert sum(check_whitney(cubes, E.points).values()) == 0
    counts = {}
    for w in cubes:
        counts[w.level] = counts.get(w.level, 0) + 1
    # dimension of E_{1/2} is 1, so counts grow at most like 2^k up to a constant
    ks = sorted(counts)
    assert all(counts[k] <= 64 * 2.0**k for k in ks)


def test_whitney_constants_validated():
    with pytest.raises(ParameterError):
        whitney_decompose(np.zeros((1, 2)), Cube((-1.0, -1.0), 2.0), 5, c1=1.0, c2=3.0)


def test_whitney_level_too_small_flags():
    E = np.array([[0.3, 0.3]])
    with pytest.warns(RuntimeWarning):
        cubes, flag = whitney_decompose(E, Cube((0.0, 0.0), 1.0), 0, return_flag=True)
    assert flag and cubes == []


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9)), min_size=1, max_size=4))
def test_whitney_invariants_random_sets(pts):
    E = np.array(pts)
    cubes = whitney_decompose(E, Cube((-1.0, -1.0), 2.0), 7)
    assert sum(check_whitney(cubes, E).values()) == 0
