"""Covering numbers, Minkowski dimension and self-similar Minkowski dimensions.

The self-similar dimensions are defined through a liminf over N of a sup over
balls B with r_B >= N r of log N_cov(r, E cap B) / log(r_B / r).  On finite
truncations the ratio carries an O(log C / log N) bias from the covering
constant, so the reported ``value`` is the growth exponent of the maximal
covering count, i.e. the least-squares slope of

    M(N) = max_{r, B : r_B = N r} log N_cov(r, E cap B)

against log N.  The literal truncated liminf (min over N of the sup-ratio) is
kept alongside as ``liminf_ratio``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp
from scipy.spatial import cKDTree

from . import ParameterError
from .geometry import Cube, as_points


@dataclass
class PointSet:
    points: np.ndarray
    meta: dict = field(default_factory=dict)
    bounded_flag: bool = True

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if len(pts):
            pts = np.unique(pts, axis=0)
        self.points = pts
        self.meta.setdefault("kind", "explicit")

    @property
    def n(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return len(self.points)

    def extent(self) -> float:
        """Largest absolute coordinate; balls beyond this radius see all of E."""
        return float(np.abs(self.points).max()) if len(self) else 0.0

    def min_gap(self) -> float:
        if len(self) < 2:
            return math.inf
        d, _ = cKDTree(self.points).query(self.points, k=2)
        return float(d[:, 1].min())

    def intersect_ball(self, center, radius) -> "PointSet":
        c = np.asarray(center, dtype=float)
        keep = np.linalg.norm(self.points - c, axis=1) < radius
        meta = dict(self.meta, restricted_to=(tuple(c), float(radius)))
        return PointSet(self.points[keep], meta, True)

    def to_text(self) -> str:
        params = ",".join(f"{k}:{v}" for k, v in sorted(self.meta.items())
                          if k not in ("kind", "restricted_to"))
        lines = [f"n={self.n} kind={self.meta['kind']} params={params}"]
        lines += [" ".join(repr(float(c)) for c in p) for p in self.points]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PointSet":
        rows = [ln for ln in text.splitlines() if ln.strip()]
        head = dict(tok.split("=", 1) for tok in rows[0].split())
        n = int(head["n"])
        meta = {"kind": head.get("kind", "explicit")}
        params = head.get("params", "")
        for item in filter(None, params.split(",")):
            k, v = item.split(":", 1)
            meta[k] = _parse_scalar(v)
        pts = np.array([[float(t) for t in ln.split()] for ln in rows[1:]]).reshape(-1, n)
        return cls(pts, meta)


def _parse_scalar(v: str):
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    return v


@dataclass
class DimensionEstimate:
    value: float
    per_N_values: list
    scale_range: tuple
    regression_r2: float
    ball_budget: int
    liminf_ratio: float = float("nan")
    log_counts: list = field(default_factory=list)
    method: str = ""


# ---------------------------------------------------------------- generators

def lattice_theta_1d(theta: float, k_max: int) -> np.ndarray:
    vals = set()
    for k in range(k_max + 1):
        top = 2**k + 2 ** math.floor(theta * k + 1e-12)
        vals.update(range(2**k, top + 1))
    return np.array(sorted(vals), dtype=float)


def gen_lattice_theta(theta: float, k_max: int, n: int = 1) -> PointSet:
    """(union_{k<=k_max} A_{k,theta})^n with A_{k,theta} = {2^k, ..., 2^k + 2^floor(theta k)}."""
    if not 0.0 <= theta <= 1.0:
        raise ParameterError("theta must lie in [0, 1]")
    if k_max < 1:
        raise ParameterError("k_max must be >= 1")
    one = lattice_theta_1d(theta, k_max)
    grids = np.meshgrid(*([one] * n), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    meta = {"kind": "lattice_theta", "theta": theta, "k_max": k_max, "depth": k_max, "resolution": 1.0}
    return PointSet(pts, meta, bounded_flag=False)


def gen_lattice_3n(extent: float, n: int = 2) -> PointSet:
    """Points of (3N)^n with coordinates <= extent (template set for unit patches)."""
    one = np.arange(3.0, extent + 1e-9, 3.0)
    grids = np.meshgrid(*([one] * n), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    return PointSet(pts, {"kind": "lattice_3n", "extent": extent, "resolution": 3.0}, False)


def cantor_intervals_1d(a: float, m: int) -> np.ndarray:
    """Left endpoints of the 2^m level-m intervals, each of length ((1-a)/2)^m."""
    left = np.array([0.0])
    length = 1.0
    for _ in range(m):
        child = length * (1 - a) / 2
        left = np.concatenate([left, left + length - child])
        left.sort()
        length = child
    return left


def cantor_level(a: float, m: int, n: int) -> tuple[np.ndarray, float]:
    """Centers (2^{mn}, n) and edge of the level-m cubes Q_{m,j}."""
    edge = ((1 - a) / 2) ** m
    c1 = cantor_intervals_1d(a, m) + edge / 2
    grids = np.meshgrid(*([c1] * n), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1), edge


def gen_cantor_centers(a: float, m_max: int, n: int = 1, with_cubes: bool = True):
    """Centers z_0 and z_{m,j} (m <= m_max) of the Cantor construction, plus the cubes."""
    if not 0 < a < 1:
        raise ParameterError("a must lie in (0, 1)")
    if m_max < 1:
        raise ParameterError("m_max must be >= 1")
    chunks = [np.full((1, n), 0.5)]
    cubes = []
    for m in range(1, m_max + 1):
        c, edge = cantor_level(a, m, n)
        chunks.append(c)
        if with_cubes:
            cubes.extend(Cube(tuple(z - edge / 2), edge) for z in c)
    meta = {"kind": "cantor_centers", "a": a, "m_max": m_max, "depth": m_max,
            "resolution": ((1 - a) / 2) ** m_max, "ratio": (1 - a) / 2}
    return PointSet(np.concatenate(chunks), meta, True), cubes


def gen_cantor_extension(a: float, m_max: int, k_max: int, n: int = 1) -> PointSet:
    """Union of the dilates (2/(1-a))^k E_a, k = 0..k_max."""
    base, _ = gen_cantor_centers(a, m_max, n, with_cubes=False)
    s = 2 / (1 - a)
    pts = np.concatenate([s**k * base.points for k in range(k_max + 1)])
    meta = {"kind": "cantor_extension", "a": a, "m_max": m_max, "k_max": k_max, "depth": m_max,
            "resolution": ((1 - a) / 2) ** m_max, "ratio": (1 - a) / 2}
    return PointSet(pts, meta, bounded_flag=k_max == 0)


def cantor_dimension(a: float, n: int) -> float:
    """n / log_2(2/(1-a))."""
    return n / math.log2(2 / (1 - a))


# ---------------------------------------------------------------- covering

def _count_cells(pts: np.ndarray, r: float) -> int:
    if len(pts) == 0:
        return 0
    idx = np.floor(pts / r + 1e-9).astype(np.int64)
    if idx.shape[1] == 1:
        return int(np.unique(idx[:, 0]).size)
    idx -= idx.min(axis=0)
    span = idx.max(axis=0) + 1
    if np.prod(span.astype(float)) < 2**62:
        key = np.ravel_multi_index(idx.T, span)
        return int(np.unique(key).size)
    return int(np.unique(idx, axis=0).shape[0])


def _exact_cover_1d(x: np.ndarray, r: float) -> int:
    x = np.sort(x)
    count, i = 0, 0
    while i < len(x):
        count += 1
        end = x[i] + r * (1 + 1e-12)
        while i < len(x) and x[i] <= end:
            i += 1
    return count


def _exact_cover_2d(P: np.ndarray, r: float) -> int:
    xs = np.unique(P[:, 0])
    ys = np.unique(P[:, 1])
    tol = r * 1e-12
    cand = []
    for x0 in xs:
        inx = (P[:, 0] >= x0 - tol) & (P[:, 0] <= x0 + r + tol)
        if not inx.any():
            continue
        for y0 in ys:
            cov = inx & (P[:, 1] >= y0 - tol) & (P[:, 1] <= y0 + r + tol)
            if cov.any():
                cand.append(cov)
    A = np.unique(np.array(cand, dtype=np.int8), axis=0)
    # drop candidates dominated by another candidate
    keep = []
    for i, row in enumerate(A):
        sup = np.all(A >= row, axis=1) & np.any(A > row, axis=1)
        if not sup.any():
            keep.append(i)
    A = A[keep].T.astype(float)  # points x candidates
    k = A.shape[1]
    res = milp(c=np.ones(k), constraints=LinearConstraint(A, lb=np.ones(len(P)), ub=np.inf),
               integrality=np.ones(k), bounds=Bounds(0, 1))
    if not res.success:
        raise RuntimeError("exact covering search failed: " + res.message)
    return int(round(res.fun))


def covering_number(r: float, E, mode: str = "grid") -> int:
    """Number of edge-r cubes needed to cover E.

    ``grid`` counts the half-open aligned cells [k r, (k+1) r)^n that meet E,
    which is within a factor 2^n of the minimum. ``exact_small`` returns the
    true minimum (n <= 2, at most 64 points).
    """
    pts = as_points(getattr(E, "points", E))
    if r <= 0:
        raise ParameterError("r must be positive")
    if pts.size == 0:
        raise ParameterError("empty set")
    if mode == "grid":
        return _count_cells(pts, r)
    if mode == "exact_small":
        if len(pts) > 64 or pts.shape[1] > 2:
            raise ParameterError("instance too large for exact mode")
        if pts.shape[1] == 1:
            return _exact_cover_1d(pts[:, 0], r)
        return _exact_cover_2d(pts, r)
    raise ParameterError(f"unknown covering mode {mode!r}")


# ---------------------------------------------------------------- dimensions

def _fit(x, y):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return float(slope), float(r2)


def dim_minkowski(E: PointSet, scale_range=None, n_scales: int = 8) -> DimensionEstimate:
    """Least-squares slope of log N_cov(r) against log(1/r) over geometric scales."""
    if scale_range is None:
        res = E.meta.get("resolution", E.min_gap())
        scale_range = (res, res * 2.0 ** (n_scales - 1))
    r_lo, r_hi = scale_range
    if n_scales < 3 or not (0 < r_lo < r_hi):
        raise ParameterError("insufficient scale range")
    rs = np.geomspace(r_lo, r_hi, n_scales)
    counts = np.array([covering_number(r, E) for r in rs])
    ok = counts > 0
    if ok.sum() < 3:
        raise ParameterError("insufficient scale range")
    slope, r2 = _fit(np.log(1 / rs[ok]), np.log(counts[ok]))
    return DimensionEstimate(value=float(np.clip(slope, 0, E.n)),
                             per_N_values=[(float(r), int(c)) for r, c in zip(rs, counts)],
                             scale_range=(float(r_lo), float(r_hi)), regression_r2=r2,
                             ball_budget=0, method="minkowski")


def _default_ratio(E: PointSet) -> float:
    return 1.0 / E.meta["ratio"] if "ratio" in E.meta else 2.0


def _sample_centers(E: PointSet, radius: float, budget: int, rng) -> np.ndarray:
    lo = E.points.min(axis=0) - radius
    hi = E.points.max(axis=0) + radius
    n_uni = budget // 2
    uni = lo + (hi - lo) * rng.random((n_uni, E.n))
    pick = E.points[rng.integers(0, len(E), budget - n_uni)]
    jitter = rng.normal(size=pick.shape)
    jitter *= (radius * rng.random(len(pick)) / np.maximum(np.linalg.norm(jitter, axis=1), 1e-300))[:, None]
    return np.concatenate([uni, pick + jitter])


def _selfsim(E: PointSet, N_list, r_lists, family, ball_budget, seed, anchor, method):
    if len(E) == 0:
        raise ParameterError("empty set")
    N_list = sorted(N_list)
    tree = cKDTree(E.points)
    rng = np.random.default_rng(seed)
    logN, M, used = [], [], []
    all_r = []
    for N in N_list:
        best = -math.inf
        for r in r_lists(N):
            rb = N * r
            if family == "anchored":
                centers = np.asarray(anchor, float).reshape(1, E.n)
            else:
                centers = _sample_centers(E, rb, ball_budget, rng)
            for c in centers:
                idx = tree.query_ball_point(c, rb)
                if not idx:
                    continue
                cnt = _count_cells(E.points[idx], r)
                best = max(best, math.log(cnt))
            all_r.append(r)
        if best == -math.inf:
            warnings.warn(f"no admissible (B, r) pair for N={N}; dropped", RuntimeWarning)
            continue
        logN.append(math.log(N))
        M.append(best)
        used.append(N)
    if len(used) < 2:
        raise ParameterError("insufficient admissible N values")
    M = np.array(M)
    logN = np.array(logN)
    # sup over r_B >= N r restricted to the sampled ratios N' >= N
    ratios = M / logN
    sup_ratio = np.maximum.accumulate(ratios[::-1])[::-1]
    slope, r2 = _fit(logN, M)
    return DimensionEstimate(value=float(np.clip(slope, 0.0, E.n)),
                             per_N_values=[(int(N), float(s)) for N, s in zip(used, sup_ratio)],
                             scale_range=(float(min(all_r)), float(max(all_r))),
                             regression_r2=r2, ball_budget=int(ball_budget),
                             liminf_ratio=float(sup_ratio.min()),
                             log_counts=[(int(N), float(m)) for N, m in zip(used, M)],
                             method=method)


def _resolution(E: PointSet, r_cut: float, N_max: float) -> float:
    if "resolution" in E.meta and E.meta["kind"].startswith("cantor"):
        return float(E.meta["resolution"])
    return r_cut / (4.0 * N_max)


def dim_local_selfsim(E: PointSet, N_list=(4, 16, 64, 256), ball_budget: int = 256, seed: int = 0,
                      r_cut: float = 1.0, r_min: float | None = None,
                      family: str = "free", anchor=None) -> DimensionEstimate:
    """Local self-similar dimension: balls with N r <= r_B <= r_cut, r at the finest admissible scale."""
    N_list = sorted(N_list)
    r0 = r_min if r_min is not None else _resolution(E, r_cut, N_list[-1])

    def r_lists(N):
        return [r0] if N * r0 <= r_cut * (1 + 1e-12) else []

    anchor = np.zeros(E.n) if anchor is None else anchor
    return _selfsim(E, N_list, r_lists, family, ball_budget, seed, anchor, "local")


def dim_global_selfsim(E: PointSet, N_list=(4, 16, 64, 256), ball_budget: int = 256, seed: int = 0,
                       r_min: float | None = None, family: str = "anchored", anchor=None,
                       r_factor: float | None = None) -> DimensionEstimate:
    """Global self-similar dimension: all scales r > 0 and balls with r_B >= N r.

    ``family='anchored'`` centers every ball at ``anchor`` (default the origin),
    the ball family used in the growth estimates for sets built around the
    origin; ``family='free'`` samples centers over and near E.
    """
    N_list = sorted(N_list)
    ext = max(E.extent(), 1e-300)
    r0 = r_min if r_min is not None else float(E.meta.get("resolution", min(E.min_gap(), ext)))
    fac = r_factor if r_factor is not None else _default_ratio(E)

    def r_lists(N):
        out, r = [], r0
        while N * r <= 2 * ext * fac:
            out.append(r)
            r *= fac
        return out

    anchor = np.zeros(E.n) if anchor is None else anchor
    return _selfsim(E, N_list, r_lists, family, ball_budget, seed, anchor, "global")


__all__ = [
    "PointSet", "DimensionEstimate", "gen_lattice_theta", "gen_lattice_3n", "gen_cantor_centers",
    "gen_cantor_extension", "cantor_level", "cantor_dimension", "covering_number",
    "dim_minkowski", "dim_local_selfsim", "dim_global_selfsim"
]
