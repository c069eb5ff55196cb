"""Radial stretches, inversion and patched stretch maps with closed-form inverses.

Every non-identity map is built from one primitive, the radial map

    x -> z + c |x - z|^(p - 1) (x - z)

whose Jacobian determinant is |p| c^n |x - z|^(n (p - 1)) and whose inverse is
the radial map with constants (c^(-1/p), 1/p).  Radial power uses (1, beta),
inversion (1, -1), and a patch of outer radius R uses (R^-beta, beta + 1),
which fixes the sphere |x - z| = R pointwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import ParameterError, PoleError
from .fractal import cantor_level, gen_lattice_3n, gen_lattice_theta
from .geometry import Ball, as_points

KINDS = ("identity", "radial_power", "inversion", "cantor_patch", "lattice_patch")


@dataclass(frozen=True, eq=False)
class MapModel:
    kind: str
    n: int
    beta: float = 1.0
    center: tuple = ()
    params: dict = field(default_factory=dict)
    patch_centers: np.ndarray | None = None
    patch_radii: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown map kind {self.kind!r}")
        if self.kind == "radial_power" and self.beta == 0:
            raise ParameterError("beta must be nonzero for radial maps")
        if self.kind in ("radial_power", "inversion"):
            c = tuple(float(v) for v in (self.center or (0.0,) * self.n))
            object.__setattr__(self, "center", c)
        lookup = []
        if self.patch_centers is not None:
            Z = np.asarray(self.patch_centers, dtype=float).reshape(-1, self.n)
            R = np.asarray(self.patch_radii, dtype=float).reshape(-1)
            object.__setattr__(self, "patch_centers", Z)
            object.__setattr__(self, "patch_radii", R)
            # one tree per distinct radius; patches are disjoint so at most one hit
            for rad in np.unique(R):
                idx = np.nonzero(R == rad)[0]
                lookup.append((float(rad), cKDTree(Z[idx]), idx))
        object.__setattr__(self, "_lookup", lookup)

    @property
    def patched(self) -> bool:
        return self.kind in ("cantor_patch", "lattice_patch")

    @property
    def n_patches(self) -> int:
        return 0 if self.patch_centers is None else len(self.patch_centers)

    def radial_constants(self):
        """(c, p) of the radial primitive; for patched kinds c depends on the patch."""
        if self.kind == "radial_power":
            return 1.0, self.beta
        if self.kind == "inversion":
            return 1.0, -1.0
        if self.patched:
            return None, self.beta + 1.0
        return 1.0, 1.0

    def singular_points(self) -> np.ndarray:
        """Centers where the Jacobian vanishes or blows up."""
        if self.kind in ("radial_power", "inversion"):
            if self.kind == "radial_power" and self.beta == 1:
                return np.empty((0, self.n))
            return np.asarray([self.center])
        if self.patched:
            return self.patch_centers
        return np.empty((0, self.n))

    def has_pole(self) -> bool:
        return self.kind == "inversion" or (self.kind == "radial_power" and self.beta < 0)

    def patch_index(self, x) -> np.ndarray:
        """Index of the open patch ball containing each point, -1 if none."""
        x = as_points(x)
        out = np.full(len(x), -1, dtype=int)
        for rad, tree, idx in self._lookup:
            d, j = tree.query(x)
            hit = d < rad
            out[hit] = idx[j[hit]]
        return out

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "n": self.n, "beta": self.beta}
        if self.center:
            d["center"] = list(self.center)
        d.update(self.params)
        return d


# ---------------------------------------------------------------- primitives

def _radial(x, z, c, p):
    d = x - z
    rho = np.linalg.norm(d, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(rho > 0, c * rho ** (p - 1.0), 0.0)
    return z + s[..., None] * d


def _radial_inv(y, z, c, p):
    return _radial(y, z, c ** (-1.0 / p), 1.0 / p)


def _radial_jac(rho, c, p, n):
    with np.errstate(divide="ignore"):
        return abs(p) * c**n * rho ** (n * (p - 1.0))


def _check_pole(f: MapModel, x: np.ndarray):
    if f.has_pole():
        rho = np.linalg.norm(x - np.asarray(f.center), axis=1)
        if np.any(rho == 0):
            raise PoleError("pole")


def _apply(f: MapModel, x, inverse: bool):
    x_arr = np.asarray(x, dtype=float)
    single = x_arr.ndim == 1
    pts = as_points(x_arr)
    if pts.shape[1] != f.n:
        raise ParameterError("dimension mismatch")
    if f.kind == "identity":
        out = pts.copy()
    elif f.kind in ("radial_power", "inversion"):
        _check_pole(f, pts)
        c, p = f.radial_constants()
        z = np.asarray(f.center)
        out = _radial_inv(pts, z, c, p) if inverse else _radial(pts, z, c, p)
    else:
        out = pts.copy()
        idx = f.patch_index(pts)
        hit = idx >= 0
        if hit.any():
            z = f.patch_centers[idx[hit]]
            R = f.patch_radii[idx[hit]]
            p = f.beta + 1.0
            c = (R ** -f.beta)[:, None]
            d = pts[hit] - z
            rho = np.linalg.norm(d, axis=1)[:, None]
            with np.errstate(divide="ignore", invalid="ignore"):
                if inverse:
                    s = np.where(rho > 0, c ** (-1.0 / p) * rho ** (1.0 / p - 1.0), 0.0)
                else:
                    s = c * rho ** (p - 1.0)
            out[hit] = z + s * d
    return out[0] if single else out


def map_eval(f: MapModel, x):
    return _apply(f, x, inverse=False)


def map_inverse(f: MapModel, y):
    return _apply(f, y, inverse=True)


def _fd_step(f: MapModel, pts: np.ndarray) -> np.ndarray:
    h = np.maximum(1e-6, 1e-6 * np.linalg.norm(pts, axis=1))
    S = f.singular_points()
    if len(S):
        ds, _ = cKDTree(S).query(pts)
        h = np.minimum(h, 1e-3 * np.maximum(ds, 1e-300))
    if f.patched:
        # stay on one side of every patch sphere
        for rad, tree, _ in f._lookup:
            d, _ = tree.query(pts)
            h = np.minimum(h, 0.25 * np.maximum(np.abs(d - rad), 1e-300))
    return h


def derivative_fd(f: MapModel, x, inverse: bool = False) -> np.ndarray:
    """Central-difference derivative matrices, shape (N, n, n)."""
    pts = as_points(x)
    N, n = pts.shape
    h = _fd_step(f, pts)
    D = np.empty((N, n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        step = h[:, None] * e
        fp = _apply(f, pts + step, inverse)
        fm = _apply(f, pts - step, inverse)
        D[:, :, i] = (fp - fm) / (2 * h[:, None])
    return D


def map_jacobian(f: MapModel, x, mode: str = "analytic", inverse: bool = False):
    """|det Df(x)| (or of the inverse map at x when ``inverse``)."""
    x_arr = np.asarray(x, dtype=float)
    single = x_arr.ndim == 1
    pts = as_points(x_arr)
    if f.has_pole():
        _check_pole(f, pts)
    if mode == "finite_difference":
        J = np.abs(np.linalg.det(derivative_fd(f, pts, inverse)))
    elif mode == "analytic":
        n = f.n
        if f.kind == "identity":
            J = np.ones(len(pts))
        elif f.kind in ("radial_power", "inversion"):
            c, p = f.radial_constants()
            if inverse:
                c, p = c ** (-1.0 / p), 1.0 / p
            rho = np.linalg.norm(pts - np.asarray(f.center), axis=1)
            J = _radial_jac(rho, c, p, n)
        else:
            J = np.ones(len(pts))
            idx = f.patch_index(pts)
            hit = idx >= 0
            if hit.any():
                R = f.patch_radii[idx[hit]]
                p = f.beta + 1.0
                c = R ** -f.beta
                if inverse:
                    c, p = c ** (-1.0 / p), 1.0 / p
                rho = np.linalg.norm(pts[hit] - f.patch_centers[idx[hit]], axis=1)
                J[hit] = _radial_jac(rho, c, p, n)
    else:
        raise ParameterError(f"unknown jacobian mode {mode!r}")
    return float(J[0]) if single else J


# ---------------------------------------------------------------- constructors

def identity_map(n: int) -> MapModel:
    return MapModel("identity", n)


def radial_power_map(beta: float, n: int, center=None) -> MapModel:
    """x -> |x - c|^(beta - 1) (x - c) + c."""
    return MapModel("radial_power", n, beta=beta, center=tuple(center) if center is not None else ())


def inversion_map(n: int, center=None) -> MapModel:
    """x -> c + (x - c) / |x - c|^2."""
    return MapModel("inversion", n, beta=-1.0, center=tuple(center) if center is not None else ())


def cantor_patch_radius(a: float, m: int) -> float:
    return 0.5 * a * ((1 - a) / 2) ** m


def cantor_patch_map(a: float, beta: float, m_max: int, n: int, m_min: int = 0) -> MapModel:
    """Stretch of exponent beta in B(z_{m,j}, a/2 ((1-a)/2)^m) for m_min <= m <= m_max."""
    if not 0 < a < 1:
        raise ParameterError("a must lie in (0, 1)")
    if not beta > 0:
        raise ParameterError("beta must be positive")
    if m_max < 1 or m_min < 0 or m_min > m_max:
        raise ParameterError("need 0 <= m_min <= m_max and m_max >= 1")
    Z, R = [], []
    for m in range(m_min, m_max + 1):
        if m == 0:
            c = np.full((1, n), 0.5)
        else:
            c, _ = cantor_level(a, m, n)
        Z.append(c)
        R.append(np.full(len(c), cantor_patch_radius(a, m)))
    params = {"a": a, "m_max": m_max, "m_min": m_min}
    return MapModel("cantor_patch", n, beta=beta, params=params,
                    patch_centers=np.concatenate(Z), patch_radii=np.concatenate(R))


def lattice_patch_map(theta: float, beta: float, extent: float, patch_radius: float | None = None,
                      n: int = 2, variant: str = "theta", centers=None) -> MapModel:
    """Normalized stretch of exponent beta in a ball about each generated lattice point.

    ``variant='theta'`` uses the points of (2^{N_theta})^n up to ``extent`` with
    default radius 1/3; ``variant='case1'`` uses (3N)^n with radius 1.  Explicit
    ``centers`` override the generator (used for single-patch checks).
    """
    if not beta > 0:
        raise ParameterError("beta must be positive")
    if variant == "case1":
        radius = 1.0 if patch_radius is None else patch_radius
        if radius > 1.5:
            raise ParameterError("patch_radius must be <= 3/2 on (3N)^n")
        pts = gen_lattice_3n(extent, n).points if centers is None else centers
    elif variant == "theta":
        radius = 1.0 / 3.0 if patch_radius is None else patch_radius
        if radius > 0.5:
            raise ParameterError("patch_radius must be <= 1/2 on an integer lattice")
        if centers is None:
            k_max = max(1, int(math.floor(math.log2(max(extent, 2.0)) + 1e-9)))
            pts = gen_lattice_theta(theta, k_max, n).points
            pts = pts[np.all(pts <= extent + 1e-9, axis=1)]
        else:
            pts = centers
    else:
        raise ParameterError(f"unknown lattice variant {variant!r}")
    if not radius > 0:
        raise ParameterError("patch_radius must be positive")
    pts = np.asarray(pts, dtype=float).reshape(-1, n)
    params = {"theta": theta, "extent": extent, "patch_radius": radius, "variant": variant}
    return MapModel("lattice_patch", n, beta=beta, params=params,
                    patch_centers=pts, patch_radii=np.full(len(pts), radius))


def map_from_dict(d: dict) -> MapModel:
    """Build a map from a config entry such as {kind='radial_power', beta=2, n=2}."""
    d = dict(d)
    kind = d.pop("kind")
    n = int(d.pop("n", 2))
    if kind == "identity":
        return identity_map(n)
    if kind == "radial_power":
        return radial_power_map(float(d.pop("beta")), n, d.pop("center", None))
    if kind == "inversion":
        return inversion_map(n, d.pop("center", None))
    if kind == "cantor_patch":
        return cantor_patch_map(float(d.pop("a")), float(d.pop("beta")), int(d.pop("m_max")), n,
                                int(d.pop("m_min", 0)))
    if kind == "lattice_patch":
        return lattice_patch_map(float(d.pop("theta")), float(d.pop("beta")), float(d.pop("extent")),
                                 d.pop("patch_radius", None), n, d.pop("variant", "theta"))
    raise ParameterError(f"unknown map kind {kind!r}")


# ---------------------------------------------------------------- distortion

def sphere_directions(n: int, k: int, seed: int = 0) -> np.ndarray:
    """k quasi-uniform unit vectors in R^n."""
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        t = 2 * np.pi * np.arange(k) / k
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    if n == 3:
        i = np.arange(k) + 0.5
        phi = np.arccos(1 - 2 * i / k)
        t = np.pi * (1 + 5**0.5) * i
        return np.stack([np.cos(t) * np.sin(phi), np.sin(t) * np.sin(phi), np.cos(phi)], axis=1)
    g = np.random.default_rng(seed).standard_normal((k, n))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def local_distortion(f: MapModel, z, r: float, n_dirs: int = 64) -> float:
    """L_f(z, r) = sup_{|w - z| <= r} |f(z) - f(w)|, taken over sphere directions."""
    if n_dirs < 8:
        raise ParameterError("n_dirs must be >= 8")
    if not r > 0:
        raise ParameterError("r must be positive")
    z = np.asarray(z, dtype=float)
    if f.has_pole() and np.linalg.norm(z - np.asarray(f.center)) <= r:
        raise ParameterError("unbounded distortion")
    w = z + r * sphere_directions(f.n, n_dirs)
    return float(np.max(np.linalg.norm(map_eval(f, w) - map_eval(f, z), axis=1)))


@dataclass
class DistortionReport:
    K_estimate: float
    L_values: list
    sample_count: int
    skipped: int = 0


def _uniform_ball(rng, center, radius, k, n):
    g = rng.standard_normal((k, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return np.asarray(center) + radius * rng.random(k)[:, None] ** (1.0 / n) * g


def qc_dilatation_estimate(f: MapModel, sample_region: Ball, n_samples: int = 1000,
                           seed: int = 0) -> DistortionReport:
    """max over samples of |Df|^n / J_f with Df by central differences."""
    n = f.n
    if f.has_pole() or (f.kind == "radial_power" and f.beta < 0):
        if np.linalg.norm(sample_region.c - np.asarray(f.center)) < sample_region.radius:
            raise ParameterError("sample region contains a pole")
    rng = np.random.default_rng(seed)
    pts = _uniform_ball(rng, sample_region.c, sample_region.radius, n_samples, n)
    if f.patched:
        # half the samples land inside patches meeting the region
        inside = np.linalg.norm(f.patch_centers - sample_region.c, axis=1) < sample_region.radius
        cand = np.nonzero(inside)[0]
        if cand.size:
            k = n_samples // 2
            j = cand[rng.integers(0, cand.size, k)]
            g = rng.standard_normal((k, n))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            rad = f.patch_radii[j] * rng.random(k) ** (1.0 / n)
            pts[:k] = f.patch_centers[j] + rad[:, None] * g
    D = derivative_fd(f, pts)
    J = np.abs(np.linalg.det(D))
    ok = J >= 1e-300
    opn = np.linalg.norm(D[ok], ord=2, axis=(1, 2))
    ratios = opn**n / J[ok]
    K = float(ratios.max()) if ratios.size else float("nan")
    L_values = []
    for x in pts[: min(8, len(pts))]:
        for kk in range(1, 4):
            r = sample_region.radius * 2.0**-kk
            try:
                L_values.append((tuple(x), r, local_distortion(f, x, r)))
            except ParameterError:
                continue
    return DistortionReport(K, L_values, int(ok.sum()), int((~ok).sum()))
