"""Euclidean primitives and the Whitney decomposition of a box minus a point set."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.spatial import cKDTree

from . import ParameterError


def as_points(x) -> np.ndarray:
    """Return ``x`` as a float array of shape (N, n)."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    return a


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ParameterError(f"ball radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def n(self) -> int:
        return len(self.center)

    @property
    def c(self) -> np.ndarray:
        return np.asarray(self.center)

    def dilate(self, lam: float) -> "Ball":
        return Ball(self.center, lam * self.radius)

    def volume(self) -> float:
        return ball_volume(self.n, self.radius)

    def contains(self, x) -> np.ndarray:
        x = as_points(x)
        return np.linalg.norm(x - self.c, axis=1) < self.radius


@dataclass(frozen=True)
class Cube:
    min_corner: tuple
    edge: float

    def __post_init__(self):
        if not self.edge > 0:
            raise ParameterError(f"cube edge must be positive, got {self.edge}")
        object.__setattr__(self, "min_corner", tuple(float(c) for c in self.min_corner))

    @property
    def n(self) -> int:
        return len(self.min_corner)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.min_corner)

    @property
    def hi(self) -> np.ndarray:
        return self.lo + self.edge

    @property
    def center(self) -> np.ndarray:
        return self.lo + 0.5 * self.edge

    def dilate(self, lam: float) -> "Cube":
        """Concentric cube with edge ``lam * edge``."""
        return Cube(tuple(self.center - 0.5 * lam * self.edge), lam * self.edge)

    def contains(self, x) -> np.ndarray:
        x = as_points(x)
        return np.all((x >= self.lo) & (x <= self.hi), axis=1)

    def contains_cube(self, other: "Cube", tol: float = 1e-12) -> bool:
        return bool(np.all(other.lo >= self.lo - tol) and np.all(other.hi <= self.hi + tol))


@dataclass(frozen=True)
class WhitneyCube:
    cube: Cube
    level: int
    boundary: bool = False  # truncated by the bounding box, (ii) may fail upward

    @property
    def edge(self) -> float:
        return self.cube.edge


def ball_volume(n: int, r: float = 1.0) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1) * r**n


def dist_to_set(x, E) -> np.ndarray | float:
    """Euclidean distance from point(s) ``x`` to the finite set ``E``.

    ``E`` may be a PointSet or an (N, n) array. Scalar in, scalar out.
    """
    pts = getattr(E, "points", E)
    pts = np.asarray(pts, dtype=float)
    if pts.size == 0:
        raise ParameterError("empty set")
    pts = pts.reshape(len(pts), -1)
    x_arr = np.asarray(x, dtype=float)
    scalar = x_arr.ndim == 1
    d, _ = cKDTree(pts).query(as_points(x_arr))
    return float(d[0]) if scalar else d


def box_dist(lo: np.ndarray, hi: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Distance from each point in ``pts`` to the closed box [lo, hi]."""
    gap = np.maximum(lo - pts, 0.0) + np.maximum(pts - hi, 0.0)
    return np.linalg.norm(gap, axis=-1)


def dyadic_cubes(level: int, bbox: Cube) -> list[Cube]:
    """Tile ``bbox`` by aligned cubes of edge ``bbox.edge * 2**-level``."""
    if level < 0:
        raise ParameterError("level must be >= 0")
    k = 2**level
    h = bbox.edge / k
    lo = bbox.lo
    return [Cube(tuple(lo + h * np.asarray(idx)), h) for idx in product(range(k), repeat=bbox.n)]


def _start_level(bbox: Cube, level_max: int) -> int:
    # coarsest dyadic level whose grid is aligned with bbox and tiles it
    for L in range(-60, level_max + 1):
        h = 2.0**-L
        if h > bbox.edge:
            continue
        q = bbox.lo / h
        m = bbox.edge / h
        if np.allclose(q, np.round(q), atol=1e-9) and abs(m - round(m)) < 1e-9:
            return L
    raise ParameterError("bbox is not compatible with any dyadic grid up to level_max")


def whitney_decompose(E, bbox: Cube, level_max: int, c1: float = 1.0, c2: float = 4.0,
                      return_flag: bool = False):
    """Whitney cubes of ``bbox`` minus the finite set ``E``.

    A dyadic cube S is emitted when dist(S, E) >= c1*sqrt(n)*edge and its parent
    was not; this forces dist(S, E) < (2*c1 + 2)*sqrt(n)*edge, hence c2 must be at
    least 2*c1 + 2. Cubes still too close to E at ``level_max`` are dropped.
    Cubes of the starting grid that are already farther than c2*sqrt(n)*edge
    cannot grow beyond the box and are emitted with ``boundary=True``.
    """
    pts = np.asarray(getattr(E, "points", E), dtype=float)
    if pts.size == 0:
        raise ParameterError("empty set")
    pts = pts.reshape(len(pts), -1)
    n = bbox.n
    if pts.shape[1] != n:
        raise ParameterError("dimension mismatch between E and bbox")
    if c1 <= 0 or c2 < 2 * c1 + 2:
        raise ParameterError("Whitney constants need c1 > 0 and c2 >= 2*c1 + 2")
    sqn = math.sqrt(n)
    tree = cKDTree(pts)
    L0 = _start_level(bbox, level_max)
    h0 = 2.0**-L0

    def dist_cube(lo, h):
        c = lo + 0.5 * h
        half_diag = 0.5 * sqn * h
        dc, _ = tree.query(c)
        idx = tree.query_ball_point(c, dc + half_diag + 1e-12)
        return float(box_dist(lo, lo + h, pts[idx]).min())

    out: list[WhitneyCube] = []
    stack = []
    m0 = int(round(bbox.edge / h0))
    for idx in product(range(m0), repeat=n):
        stack.append((bbox.lo + h0 * np.asarray(idx, dtype=float), L0, True))
    while stack:
        lo, L, top = stack.pop()
        h = 2.0**-L
        d = dist_cube(lo, h)
        if d >= c1 * sqn * h:
            out.append(WhitneyCube(Cube(tuple(lo), h), L, boundary=top and d > c2 * sqn * h))
        elif L < level_max:
            for idx in product((0, 1), repeat=n):
                stack.append((lo + 0.5 * h * np.asarray(idx, dtype=float), L + 1, False))
    flag = len(out) == 0
    if flag:
        warnings.warn("level_max too small to separate any cube from E", RuntimeWarning)
    out.sort(key=lambda w: (w.level, w.cube.min_corner))
    return (out, flag) if return_flag else out


def cubes_touch(a: Cube, b: Cube, tol: float = 1e-12) -> bool:
    """True if the closed cubes intersect."""
    return bool(np.all(a.lo <= b.hi + tol) and np.all(b.lo <= a.hi + tol))


def interiors_overlap(a: Cube, b: Cube, tol: float = 1e-12) -> bool:
    return bool(np.all(a.lo < b.hi - tol) and np.all(b.lo < a.hi - tol))


def check_whitney(cubes: list[WhitneyCube], E, c1: float = 1.0, c2: float = 4.0) -> dict:
    """Count violations of the three Whitney properties on an emitted family."""
    pts = np.asarray(getattr(E, "points", E), dtype=float).reshape(-1, cubes[0].cube.n if cubes else 1)
    n = pts.shape[1]
    sqn = math.sqrt(n)
    bad = {"overlap": 0, "distance": 0, "neighbour_ratio": 0, "alignment": 0}
    if not cubes:
        return bad
    lo = np.array([w.cube.lo for w in cubes])
    h = np.array([w.edge for w in cubes])
    hi = lo + h[:, None]
    for w in cubes:
        q = w.cube.lo / w.edge
        if not np.allclose(q, np.round(q), atol=1e-9):
            bad["alignment"] += 1
        d = box_dist(w.cube.lo, w.cube.hi, pts).min()
        ratio = d / (sqn * w.edge)
        if ratio < c1 - 1e-9 or (ratio > c2 + 1e-9 and not w.boundary):
            bad["distance"] += 1
    tol = 1e-12
    for i in range(len(cubes)):
        touch = np.all(lo[i] <= hi + tol, axis=1) & np.all(lo <= hi[i] + tol, axis=1)
        touch[: i + 1] = False
        js = np.nonzero(touch)[0]
        if js.size == 0:
            continue
        inner = np.all(lo[i] < hi[js] - tol, axis=1) & np.all(lo[js] < hi[i] - tol, axis=1)
        bad["overlap"] += int(inner.sum())
        r = h[js] / h[i]
        bad["neighbour_ratio"] += int(np.sum((r < 0.25 - 1e-12) | (r > 4 + 1e-12)))
    return bad
