"""Q_alpha machinery: Phi_alpha, Psi_{alpha,q}, sampled Q_alpha / BMO seminorms.

Phi_alpha(u, B) = |B|^(2 alpha/n - 1) int_B int_B |u(x) - u(y)|^2 / |x - y|^(n + 2 alpha).

The Monte Carlo estimator draws x uniformly (or from the support of u when u is
constant off a union of balls) and y = x + s w from dyadic annuli around x.
The annulus index is drawn from a two-sided geometric law centred at the field's
feature scale h: weight 2^(-k (1 - alpha)) for the inner annuli h 2^-k (all k >= 0,
so nothing is truncated) and 2^(-|k| alpha) for the outer annuli up to diam B.
Each pair carries the exact importance weight 1/q(y), so the estimate is
unbiased and its standard error is the plain sample one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import ParameterError, PoleError
from .geometry import Ball, as_points, ball_volume
from .qcmaps import MapModel, map_eval, map_inverse, map_jacobian, sphere_directions

BATCH = 1 << 15


# ---------------------------------------------------------------- fields

@dataclass(frozen=True, eq=False)
class ScalarField:
    """Closed-form scalar field on R^n.

    kinds: constant, linear, tent_on_ball, tent_sum, composed, rescaled, affine,
    gaussian, plane_wave, log_radial, jacobian.
    """
    kind: str
    n: int
    params: dict = field(default_factory=dict)
    field_id: str = ""

    def __post_init__(self):
        if self.kind in ("tent_sum",):
            C = np.asarray(self.params["centers"], dtype=float).reshape(-1, self.n)
            R = np.asarray(self.params["radii"], dtype=float).reshape(-1)
            self.params["centers"], self.params["radii"] = C, R
            self.params["_tree"] = cKDTree(C)
            self.params["_rmax"] = float(R.max())

    def __call__(self, x) -> np.ndarray:
        return self.evaluate(x)

    def evaluate(self, x) -> np.ndarray:
        x_arr = np.asarray(x, dtype=float)
        single = x_arr.ndim == 1
        x = as_points(x_arr)
        p = self.params
        k = self.kind
        if k == "constant":
            v = np.full(len(x), float(p["value"]))
        elif k == "linear":
            v = x @ np.asarray(p["coef"], dtype=float) + float(p.get("offset", 0.0))
        elif k == "tent_on_ball":
            v = np.maximum(0.0, p["radius"] - np.linalg.norm(x - np.asarray(p["center"]), axis=1))
        elif k == "tent_sum":
            v = _tent_sum_eval(x, p)
        elif k == "composed":
            v = p["inner"].evaluate(map_eval(p["map"], x))
        elif k == "rescaled":
            v = p["inner"].evaluate(p["scale"] * x + np.asarray(p["shift"], dtype=float))
        elif k == "affine":
            v = p["a"] * p["inner"].evaluate(x) + p["b"]
        elif k == "gaussian":
            d2 = np.sum((x - np.asarray(p["center"])) ** 2, axis=1)
            v = p["amplitude"] * np.exp(-d2 / p["width"] ** 2)
        elif k == "plane_wave":
            v = np.sin(x @ np.asarray(p["wave"], dtype=float) + p["phase"])
        elif k == "log_radial":
            rho = np.linalg.norm(x - np.asarray(p["center"]), axis=1)
            if np.any(rho == 0):
                raise PoleError("pole")
            v = np.log(rho)
        elif k == "jacobian":
            v = map_jacobian(p["map"], x)
        else:
            raise ParameterError(f"unknown field kind {k!r}")
        return v[0] if single else v

    # -- geometry of the field, used by samplers

    def feature_scale(self) -> float:
        """Finest length scale of the field (inf for affine-in-x fields)."""
        p, k = self.params, self.kind
        if k == "tent_on_ball":
            return float(p["radius"])
        if k == "tent_sum":
            return float(p["radii"].min())
        if k == "gaussian":
            return float(p["width"])
        if k == "plane_wave":
            return float(1.0 / max(np.linalg.norm(p["wave"]), 1e-300))
        if k == "composed":
            sb = self.support_balls()
            h = p["inner"].feature_scale()
            if sb is not None and len(sb[1]):
                h = min(h, float(sb[1].min()))
            f = p["map"]
            if f.patched:
                h = min(h, float(f.patch_radii.min()))
            return h
        if k == "rescaled":
            return p["inner"].feature_scale() / abs(p["scale"])
        if k == "affine":
            return p["inner"].feature_scale()
        return math.inf

    def features(self) -> np.ndarray:
        """Points where the field has structure (tent centres, patch centres)."""
        p, k = self.params, self.kind
        if k == "tent_on_ball":
            return np.asarray([p["center"]], dtype=float)
        if k == "tent_sum":
            return p["centers"]
        if k == "gaussian" or k == "log_radial":
            return np.asarray([p["center"]], dtype=float)
        if k == "jacobian":
            return p["map"].singular_points()
        if k == "composed":
            f = p["map"]
            inner = p["inner"].features()
            pts = [map_inverse(f, inner)] if len(inner) else []
            if f.patched:
                pts.append(f.patch_centers)
            elif f.kind != "identity":
                pts.append(np.asarray([f.center]))
            return np.concatenate(pts) if pts else np.empty((0, self.n))
        if k == "rescaled":
            inner = p["inner"].features()
            return (inner - np.asarray(p["shift"])) / p["scale"]
        if k == "affine":
            return p["inner"].features()
        return np.empty((0, self.n))

    def support_balls(self):
        """(centers, radii) of balls off whose union the field is constant, or None."""
        p, k = self.params, self.kind
        if k == "tent_on_ball":
            return np.asarray([p["center"]], dtype=float), np.asarray([p["radius"]], dtype=float)
        if k == "tent_sum":
            return p["centers"], p["radii"]
        if k == "composed":
            if "_support" not in p:
                p["_support"] = _preimage_balls(p["inner"], p["map"])
            return p["_support"]
        if k == "rescaled":
            sb = p["inner"].support_balls()
            if sb is None:
                return None
            s = abs(p["scale"])
            return (sb[0] - np.asarray(p["shift"])) / p["scale"], sb[1] / s
        if k == "affine":
            return p["inner"].support_balls()
        return None

    def poles(self) -> np.ndarray:
        p, k = self.params, self.kind
        if k == "log_radial":
            return np.asarray([p["center"]], dtype=float)
        if k in ("composed", "jacobian") and p["map"].has_pole():
            return np.asarray([p["map"].center])
        if k in ("composed", "affine", "rescaled"):
            inner = p["inner"].poles()
            if k == "rescaled" and len(inner):
                return (inner - np.asarray(p["shift"])) / p["scale"]
            if k == "composed" and len(inner):
                return map_inverse(p["map"], inner)
            return inner
        return np.empty((0, self.n))

    def lipschitz(self):
        p, k = self.params, self.kind
        if k == "constant":
            return 0.0
        if k == "linear":
            return float(np.linalg.norm(p["coef"]))
        if k in ("tent_on_ball", "tent_sum"):
            return 1.0
        return None

    def is_constant(self) -> bool:
        if self.kind == "constant":
            return True
        if self.kind == "linear":
            return not np.any(np.asarray(self.params["coef"]))
        if self.kind in ("affine",):
            return self.params["a"] == 0 or self.params["inner"].is_constant()
        if self.kind in ("composed", "rescaled"):
            return self.params["inner"].is_constant()
        return False


def _tent_sum_eval(x, p):
    v = np.zeros(len(x))
    C, R, tree = p["centers"], p["radii"], p["_tree"]
    d, j = tree.query(x)
    hit = d < R[j]
    v[hit] = R[j[hit]] - d[hit]
    if np.ptp(R) > 0:
        # unequal radii: the nearest centre need not own the point
        miss = np.nonzero(~hit)[0]
        if miss.size:
            lists = tree.query_ball_point(x[miss], p["_rmax"])
            for i, lst in zip(miss, lists):
                if lst:
                    dd = np.linalg.norm(C[lst] - x[i], axis=1)
                    val = R[lst] - dd
                    v[i] = max(0.0, float(val.max()))
    return v


def _preimage_balls(inner: ScalarField, f: MapModel, n_dirs: int = 256):
    sb = inner.support_balls()
    if sb is None:
        return None
    C, R = sb
    n = inner.n
    if f.kind == "identity":
        return C, R
    if f.has_pole():
        if np.any(np.linalg.norm(C - np.asarray(f.center), axis=1) <= R):
            return None
    dirs = sphere_directions(n, n_dirs) if n <= 3 else sphere_directions(n, 4 * n_dirs)
    out_c = np.empty_like(C)
    out_r = np.empty_like(R)
    for i in range(len(C)):
        P = map_inverse(f, C[i] + R[i] * dirs)
        lo, hi = P.min(axis=0), P.max(axis=0)
        c = 0.5 * (lo + hi)
        rad = np.linalg.norm(P - c, axis=1).max()
        # sampled sphere: pad by the largest gap between neighbouring images
        out_c[i] = c
        out_r[i] = 1.1 * rad
    return out_c, out_r


# -- constructors

def constant_field(value: float, n: int, field_id: str = "") -> ScalarField:
    return ScalarField("constant", n, {"value": float(value)}, field_id or f"const{value}")


def linear_field(coef, offset: float = 0.0, field_id: str = "") -> ScalarField:
    coef = np.asarray(coef, dtype=float)
    return ScalarField("linear", len(coef), {"coef": coef, "offset": float(offset)}, field_id or "linear")


def tent_field(center, radius: float, field_id: str = "") -> ScalarField:
    """chi_B(x) d(x, boundary of B)."""
    if not radius > 0:
        raise ParameterError("tent radius must be positive")
    c = np.asarray(center, dtype=float)
    return ScalarField("tent_on_ball", len(c), {"center": c, "radius": float(radius)}, field_id or "tent")


def tent_sum_field(centers, radii, field_id: str = "", check: bool = True) -> ScalarField:
    C = as_points(centers)
    R = np.broadcast_to(np.asarray(radii, dtype=float), (len(C),)).copy()
    if check and len(C) > 1:
        tree = cKDTree(C)
        pairs = tree.query_pairs(2 * R.max())
        for i, j in pairs:
            if np.linalg.norm(C[i] - C[j]) < R[i] + R[j]:
                raise ParameterError("tent balls must be pairwise disjoint")
    return ScalarField("tent_sum", C.shape[1], {"centers": C, "radii": R}, field_id or "tent_sum")


def composed_field(inner: ScalarField, f: MapModel, field_id: str = "") -> ScalarField:
    """u o f."""
    if inner.n != f.n:
        raise ParameterError("dimension mismatch")
    return ScalarField("composed", inner.n, {"inner": inner, "map": f},
                       field_id or f"{inner.field_id}@{f.kind}")


def rescaled_field(inner: ScalarField, scale: float, shift=None, field_id: str = "") -> ScalarField:
    """x -> u(scale x + shift)."""
    shift = np.zeros(inner.n) if shift is None else np.asarray(shift, dtype=float)
    return ScalarField("rescaled", inner.n, {"inner": inner, "scale": float(scale), "shift": shift},
                       field_id or f"{inner.field_id}*{scale}")


def affine_field(inner: ScalarField, a: float = 1.0, b: float = 0.0, field_id: str = "") -> ScalarField:
    """x -> a u(x) + b."""
    return ScalarField("affine", inner.n, {"inner": inner, "a": float(a), "b": float(b)},
                       field_id or f"{a}*{inner.field_id}+{b}")


def gaussian_field(center, width: float, amplitude: float = 1.0, field_id: str = "") -> ScalarField:
    c = np.asarray(center, dtype=float)
    return ScalarField("gaussian", len(c), {"center": c, "width": float(width), "amplitude": float(amplitude)},
                       field_id or "gauss")


def plane_wave_field(wave, phase: float = 0.0, field_id: str = "") -> ScalarField:
    w = np.asarray(wave, dtype=float)
    return ScalarField("plane_wave", len(w), {"wave": w, "phase": float(phase)}, field_id or "wave")


def log_radial_field(center, field_id: str = "") -> ScalarField:
    c = np.asarray(center, dtype=float)
    return ScalarField("log_radial", len(c), {"center": c}, field_id or "log")


def jacobian_field(f: MapModel, field_id: str = "") -> ScalarField:
    return ScalarField("jacobian", f.n, {"map": f}, field_id or f"J_{f.kind}")


# ---------------------------------------------------------------- estimates

@dataclass
class SeminormEstimate:
    value: float
    std_error: float
    n_samples: int
    seed: int
    method: str
    field_id: str = ""
    ball: Ball | None = None
    alpha: float = float("nan")
    q: float = float("nan")
    k_max: int | None = None
    history: list = field(default_factory=list)

    def to_record(self) -> dict:
        b = self.ball
        return {"field_id": self.field_id,
                "ball": "" if b is None else " ".join(f"{c:.17g}" for c in b.center) + f" {b.radius:.17g}",
                "alpha": self.alpha, "q": self.q, "value": self.value, "std_error": self.std_error,
                "n_samples": self.n_samples, "seed": self.seed, "method": self.method}


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise ParameterError("alpha must lie in (0, 1)")


def _unit_vectors(rng, k, n):
    if n == 1:
        return np.where(rng.random(k) < 0.5, -1.0, 1.0)[:, None]
    g = rng.standard_normal((k, n))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _uniform_in_balls(rng, centers, radii, n):
    k = len(radii)
    return centers + (radii * rng.random(k) ** (1.0 / n))[:, None] * _unit_vectors(rng, k, n)


class _Annuli:
    """Two-sided geometric law over dyadic annuli about the feature scale h."""

    def __init__(self, n, alpha, h, D):
        self.n, self.alpha = n, alpha
        self.h = h = min(h, D)
        self.rho = 2.0 ** -(1.0 - alpha)
        w_in = 1.0 / (1.0 - self.rho)
        self.K_out = K = max(0, int(math.ceil(math.log2(D / h) - 1e-12)))
        w_out = 2.0 ** (-alpha * np.arange(1, K + 1))
        tot = w_in + w_out.sum()
        self.p_in = w_in / tot
        self.p_out = w_out / tot
        self.cum_out = np.cumsum(self.p_out)

    def draw(self, rng, k):
        """Return radial offsets s and densities q(y) at y = x + s w."""
        u = rng.random(k)
        inner = u < self.p_in
        kk = np.empty(k)
        pk = np.empty(k)
        m = inner.sum()
        if m:
            g = np.floor(np.log(rng.random(m)) / math.log(self.rho))
            kk[inner] = g
            pk[inner] = self.p_in * (1 - self.rho) * self.rho**g
        if m < k:
            j = np.searchsorted(self.cum_out, u[~inner] - self.p_in, side="right")
            j = np.minimum(j, self.K_out - 1)
            kk[~inner] = -(j + 1)
            pk[~inner] = self.p_out[j]
        a = self.h * 2.0 ** (-kk - 1)
        b = 2 * a
        n = self.n
        s = (a**n + rng.random(k) * (b**n - a**n)) ** (1.0 / n)
        q = pk / (ball_volume(n, 1.0) * (b**n - a**n))
        return s, q


def _support_sampler(u: ScalarField, B: Ball):
    sb = u.support_balls()
    if sb is None:
        return None
    C, R = sb
    near = np.linalg.norm(C - B.c, axis=1) < R + B.radius
    if not near.any():
        return "zero"
    C, R = C[near], R[near]
    vols = np.array([ball_volume(B.n, r) for r in R])
    if vols.sum() >= B.volume():
        return None
    # radii bucketed by factor 2; within a bucket nearly disjoint balls meet
    # a point only among its few nearest centres
    buckets = []
    lr = np.floor(np.log2(R))
    for b in np.unique(lr):
        idx = np.nonzero(lr == b)[0]
        buckets.append((cKDTree(C[idx]), R[idx], min(8, idx.size)))

    def count(x):
        out = np.zeros(len(x))
        for tree, Rb, kq in buckets:
            d, j = tree.query(x, k=kq)
            if kq == 1:
                d, j = d[:, None], j[:, None]
            out += np.sum(d < Rb[j], axis=1)
        return out

    return C, R, vols, count


def _phi_terms(u, B, alpha, k, rng, annuli, supp):
    n = B.n
    if supp is None:
        x = _uniform_in_balls(rng, np.broadcast_to(B.c, (k, n)), np.full(k, B.radius), n)
        wx = np.ones(k)
        mult = None
    else:
        C, R, vols, count = supp
        j = rng.choice(len(R), size=k, p=vols / vols.sum())
        x = _uniform_in_balls(rng, C[j], R[j], n)
        wx = vols.sum() / np.maximum(count(x), 1.0) / B.volume()
        wx[~B.contains(x)] = 0.0
        mult = count
    s, q = annuli.draw(rng, k)
    y = x + s[:, None] * _unit_vectors(rng, k, n)
    inB = B.contains(y)
    t = np.zeros(k)
    ok = inB & (wx > 0)
    if ok.any():
        du = u.evaluate(x[ok]) - u.evaluate(y[ok])
        t[ok] = wx[ok] * du**2 / s[ok] ** (n + 2 * alpha) / q[ok]
        if mult is not None:
            t[ok] *= 2.0 - (mult(y[ok]) > 0)
    return t


def phi_alpha(u: ScalarField, B: Ball, alpha: float, n_samples: int = 20000, seed: int = 0,
              method: str = "mc_stratified", levels=(16, 24, 32)) -> SeminormEstimate:
    """Phi_alpha(u, B) by annulus importance sampling or deterministic quadrature."""
    _check_alpha(alpha)
    P = u.poles()
    if len(P) and np.any(np.linalg.norm(P - B.c, axis=1) <= B.radius):
        raise ParameterError("field has a pole inside the ball")
    if method == "grid_oracle":
        v = _phi_grid_oracle(u, B, alpha, levels)
        return SeminormEstimate(v, 0.0, 0, seed, "grid_oracle", u.field_id, B, alpha)
    if method != "mc_stratified":
        raise ParameterError(f"unknown method {method!r}")
    if u.is_constant():
        return SeminormEstimate(0.0, 0.0, n_samples, seed, method, u.field_id, B, alpha)
    n = B.n
    supp = _support_sampler(u, B)
    if isinstance(supp, str):
        return SeminormEstimate(0.0, 0.0, n_samples, seed, method, u.field_id, B, alpha)
    annuli = _Annuli(n, alpha, u.feature_scale(), 2 * B.radius)
    terms = []
    done, b = 0, 0
    while done < n_samples:
        k = min(BATCH, n_samples - done)
        rng = np.random.default_rng([seed, b])
        terms.append(_phi_terms(u, B, alpha, k, rng, annuli, supp))
        done += k
        b += 1
    t = np.concatenate(terms)
    norm = B.volume() ** (2 * alpha / n)
    return SeminormEstimate(float(norm * t.mean()), float(norm * t.std(ddof=1) / math.sqrt(len(t))),
                            n_samples, seed, method, u.field_id, B, alpha)


# -- deterministic oracle (n = 1, 2; smooth fields)

def _inner_integral(u, B, alpha, x, n_t, n_w):
    """int_B |u(x) - u(y)|^2 |x - y|^(-n - 2 alpha) dy for each row of x."""
    n = B.n
    p = 1.0 / (1.0 - alpha)
    t, wt = np.polynomial.legendre.leggauss(n_t)
    t = 0.5 * (t + 1)
    wt = 0.5 * wt
    if n == 1:
        W = np.array([[1.0], [-1.0]])
        ww = np.ones(2)
    else:
        ang = 2 * np.pi * (np.arange(n_w) + 0.5) / n_w
        W = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        ww = np.full(n_w, 2 * np.pi / n_w)
    d = x - B.c
    out = np.zeros(len(x))
    ux = u.evaluate(x)
    for w, ow in zip(W, ww):
        xw = d @ w
        s_exit = -xw + np.sqrt(np.maximum(xw**2 + B.radius**2 - np.sum(d * d, axis=1), 0.0))
        # s = s_exit t^p, ds = s_exit p t^(p-1) dt; measure s^(n-1) ds
        s = s_exit[:, None] * t[None, :] ** p
        y = x[:, None, :] + s[..., None] * w
        uy = u.evaluate(y.reshape(-1, n)).reshape(s.shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = (ux[:, None] - uy) ** 2 * s ** (-1.0 - 2 * alpha) * s_exit[:, None] * p * t ** (p - 1)
        g = np.nan_to_num(g)
        out += ow * (g * wt).sum(axis=1)
    return out


def _phi_grid(u, B, alpha, N):
    n = B.n
    r = B.radius
    # outer radial coordinate r - rho = r w^2 clusters nodes at the sphere
    w, ww = np.polynomial.legendre.leggauss(N)
    w = 0.5 * (w + 1)
    ww = 0.5 * ww
    rho = r * (1 - w**2)
    drho = 2 * r * w * ww
    if n == 1:
        X = np.concatenate([B.c + rho[:, None], B.c - rho[:, None]])
        wX = np.concatenate([drho, drho])
    else:
        n_phi = 2 * N
        ph = 2 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
        R_, P_ = np.meshgrid(rho, ph, indexing="ij")
        X = B.c + np.stack([(R_ * np.cos(P_)).ravel(), (R_ * np.sin(P_)).ravel()], axis=1)
        wX = (np.repeat(drho * rho, n_phi)) * (2 * np.pi / n_phi)
    I = np.empty(len(X))
    step = 256
    for i in range(0, len(X), step):
        I[i:i + step] = _inner_integral(u, B, alpha, X[i:i + step], 2 * N, 4 * N)
    return B.volume() ** (2 * alpha / n - 1) * float(np.dot(wX, I))


def _phi_grid_oracle(u, B, alpha, levels):
    if B.n not in (1, 2):
        raise ParameterError("grid_oracle supports n = 1, 2 only")
    if u.is_constant():
        return 0.0
    vals = [_phi_grid(u, B, alpha, N) for N in levels]
    a, b, c = vals
    # Aitken-type extrapolation when the last two differences contract
    d1, d2 = b - a, c - b
    if d1 != 0 and abs(d2) < abs(d1) and d1 * d2 > 0 and abs(d1 - d2) > 1e-300:
        return c - d2 * d2 / (d2 - d1)
    return c


# -- Psi

def default_k_max(u: ScalarField, B: Ball, alpha: float) -> int:
    """Resolve the finest feature and leave a tail below 1 percent."""
    h = u.feature_scale()
    base = max(0, int(math.ceil(math.log2(B.radius / h)))) if math.isfinite(h) else 0
    return base + 2 + int(math.ceil(math.log2(100.0) / (2 - 2 * alpha)))


def _golden_min(Y, q, iters=40):
    """min_c mean |Y - c|^q per row, by golden-section search on [min, max]."""
    lo = Y.min(axis=1)
    hi = Y.max(axis=1)
    g = (math.sqrt(5) - 1) / 2

    def obj(c):
        return np.mean(np.abs(Y - c[:, None]) ** q, axis=1)

    best = np.minimum(obj(lo), obj(hi))
    for _ in range(iters):
        c1 = hi - g * (hi - lo)
        c2 = lo + g * (hi - lo)
        f1, f2 = obj(c1), obj(c2)
        best = np.minimum(best, np.minimum(f1, f2))
        left = f1 < f2
        hi = np.where(left, c2, hi)
        lo = np.where(left, lo, c1)
    return np.minimum(best, obj(0.5 * (lo + hi)))


def local_inf(Y: np.ndarray, q: float) -> np.ndarray:
    """inf_c mean |Y - c|^q over each row of the sample matrix Y."""
    if q == 2:
        return Y.var(axis=1)
    return _golden_min(Y, q)


def psi_alpha_q(u: ScalarField, B: Ball, alpha: float, q: float = 2.0, k_max: int | None = None,
                n_samples: int = 2000, seed: int = 0, inner_samples: int = 64) -> SeminormEstimate:
    """Truncated Psi_{alpha,q}(u, B); n_samples outer points per dyadic level."""
    _check_alpha(alpha)
    if not 0 < q <= 2:
        raise ParameterError("q must lie in (0, 2]")
    if k_max is None:
        k_max = default_k_max(u, B, alpha)
    if u.is_constant():
        return SeminormEstimate(0.0, 0.0, n_samples, seed, "mc_stratified", u.field_id, B, alpha, q, k_max)
    n = B.n
    total = 0.0
    var = 0.0
    for k in range(k_max + 1):
        rng = np.random.default_rng([seed, k])
        x = _uniform_in_balls(rng, np.broadcast_to(B.c, (n_samples, n)), np.full(n_samples, B.radius), n)
        rk = 2.0**-k * B.radius
        z = _uniform_in_balls(rng, np.repeat(x, inner_samples, axis=0),
                              np.full(n_samples * inner_samples, rk), n)
        Y = u.evaluate(z).reshape(n_samples, inner_samples)
        vals = local_inf(Y, q) ** (2.0 / q)
        wk = 2.0 ** (2 * k * alpha)
        total += wk * vals.mean()
        var += wk**2 * vals.var(ddof=1) / n_samples
    return SeminormEstimate(float(total), float(math.sqrt(var)), n_samples * inner_samples * (k_max + 1),
                            seed, "mc_stratified", u.field_id, B, alpha, q, k_max)


# ---------------------------------------------------------------- sup over balls

@dataclass
class BallSampler:
    """Random balls inside a region, biased towards the field's features.

    A third of the balls have uniform centres, a third are centred near
    features, a third are centred exactly on features; radii are log-uniform
    in [r_min, r_max].
    """
    center: tuple
    radius: float
    r_min: float
    r_max: float
    feature_points: np.ndarray | None = None
    poles: np.ndarray | None = None

    def sample(self, k: int, seed: int):
        """k balls as (centres, radii); the first k of a larger draw are identical."""
        Cs, rs = [], []
        for b0 in range(0, k, 1024):
            C, r = self._block(seed, b0)
            Cs.append(C)
            rs.append(r)
        C, r = np.concatenate(Cs)[:k], np.concatenate(rs)[:k]
        if self.poles is not None and len(self.poles):
            d = cKDTree(self.poles).query(C)[0]
            bad = d <= 1.05 * r
            r[bad] = d[bad] / 1.1
            keep = r > 0
            C, r = C[keep], r[keep]
        return C, r

    def _block(self, seed, b0, k=1024):
        rng = np.random.default_rng([seed, 7919, b0])
        n = len(self.center)
        c0 = np.asarray(self.center, dtype=float)
        r = np.exp(rng.uniform(math.log(self.r_min), math.log(self.r_max), k))
        C = _uniform_in_balls(rng, np.broadcast_to(c0, (k, n)), np.full(k, self.radius), n)
        F = self.feature_points
        if F is not None and len(F):
            F = F[np.linalg.norm(F - c0, axis=1) <= self.radius]
        if F is not None and len(F):
            kind = rng.integers(0, 3, k)
            j = rng.integers(0, len(F), k)
            jitter = _uniform_in_balls(rng, np.zeros((k, n)), r, n)
            near = kind == 1
            on = kind == 2
            C[near] = F[j[near]] + jitter[near]
            C[on] = F[j[on]]
        return C, r


def default_sampler(u: ScalarField, center, radius: float, r_min: float | None = None,
                    r_max: float | None = None) -> BallSampler:
    h = u.feature_scale()
    if r_min is None:
        r_min = (h / 8 if math.isfinite(h) else radius / 64)
    if r_max is None:
        r_max = radius
    return BallSampler(tuple(center), radius, min(r_min, r_max), r_max, u.features(), u.poles())


def _phi_many(u, C, r, alpha, per_ball, seed, offset=0):
    """Screening estimates of Phi_alpha on many balls at once (uniform x)."""
    n = C.shape[1]
    k = len(r)
    h = u.feature_scale()
    vals = np.empty(k)
    for i0 in range(0, k, 256):
        sl = slice(i0, min(k, i0 + 256))
        Cb, rb = C[sl], r[sl]
        kb = len(rb)
        rng = np.random.default_rng([seed, 104729, offset + i0])
        m = kb * per_ball
        cc = np.repeat(Cb, per_ball, axis=0)
        rr = np.repeat(rb, per_ball)
        x = _uniform_in_balls(rng, cc, rr, n)
        # per-ball annuli with the same law in units of the ball radius
        hh = np.minimum(h, 2 * rr) if math.isfinite(h) else 2 * rr
        rho = 2.0 ** -(1.0 - alpha)
        w_in = 1.0 / (1.0 - rho)
        K = np.maximum(0, np.ceil(np.log2(2 * rr / hh) - 1e-12)).astype(int)
        Kmax = int(K.max())
        jj = np.arange(1, Kmax + 1)
        wout = 2.0 ** (-alpha * jj)[None, :] * (jj[None, :] <= K[:, None])
        tot = w_in + wout.sum(axis=1)
        uu = rng.random(m)
        inner = uu < w_in / tot
        g = np.floor(np.log(rng.random(m)) / math.log(rho))
        cum = np.cumsum(wout, axis=1) / tot[:, None]
        jo = (cum < (uu - w_in / tot)[:, None]).sum(axis=1) if Kmax else np.zeros(m, int)
        jo = np.minimum(jo, np.maximum(K - 1, 0))
        kk = np.where(inner, g, -(jo + 1.0))
        pk = np.where(inner, (w_in / tot) * (1 - rho) * rho**g,
                      2.0 ** (-alpha * (jo + 1.0)) / tot)
        a = hh * 2.0 ** (-kk - 1)
        s = (a**n + rng.random(m) * ((2 * a) ** n - a**n)) ** (1.0 / n)
        qd = pk / (ball_volume(n, 1.0) * ((2 * a) ** n - a**n))
        y = x + s[:, None] * _unit_vectors(rng, m, n)
        ok = np.linalg.norm(y - cc, axis=1) < rr
        t = np.zeros(m)
        if ok.any():
            du = u.evaluate(x[ok]) - u.evaluate(y[ok])
            t[ok] = du**2 / s[ok] ** (n + 2 * alpha) / qd[ok]
        vol = np.array([ball_volume(n, v) for v in rb])
        vals[sl] = vol ** (2 * alpha / n) * t.reshape(kb, per_ball).mean(axis=1)
    return vals


def qnorm_estimate(u: ScalarField, alpha: float, ball_sampler: BallSampler, ball_budget: int = 1000,
                   seed: int = 0, screen_samples: int = 256, refine_samples: int = 8192,
                   refine_top: int = 4, chunk: int = 500, extra_balls=None) -> SeminormEstimate:
    """Lower estimate of sup_B Phi_alpha(u, B)^(1/2) over sampled balls.

    Balls are processed in chunks; the top screened balls of each chunk are
    re-estimated with more samples and the running maximum is kept, so the
    value is monotone in the budget.  ``history`` holds (budget, value).
    For fields constant off a union of balls, the ball enclosing that union is
    always refined (the many-bumps regime is invisible to uniform screening).
    """
    _check_alpha(alpha)
    if u.is_constant():
        return SeminormEstimate(0.0, 0.0, 0, seed, "mc_stratified", u.field_id, None, alpha)
    C, r = ball_sampler.sample(ball_budget, seed)
    best, best_se, best_ball = 0.0, 0.0, None
    history = []
    used = 0
    extra = list(extra_balls or [])
    sb = u.support_balls()
    if sb is not None and len(sb[1]) > 1:
        lo = (sb[0] - sb[1][:, None]).min(axis=0)
        hi = (sb[0] + sb[1][:, None]).max(axis=0)
        c = 0.5 * (lo + hi)
        extra.append(Ball(tuple(c), float(np.linalg.norm(sb[0] - c, axis=1).max() + sb[1].max())))
    for i, B in enumerate(extra):
        est = phi_alpha(u, B, alpha, refine_samples, seed=seed * 1000003 + 999983 + i)
        used += refine_samples
        if est.value > best:
            best, best_se, best_ball = est.value, est.std_error, B
    for i0 in range(0, len(r), chunk):
        sl = slice(i0, min(len(r), i0 + chunk))
        scr = _phi_many(u, C[sl], r[sl], alpha, screen_samples, seed, offset=i0)
        for j in np.argsort(scr)[::-1][:refine_top]:
            if scr[j] <= 0:
                continue
            B = Ball(tuple(C[sl][j]), float(r[sl][j]))
            est = phi_alpha(u, B, alpha, refine_samples, seed=seed * 1000003 + i0 + int(j))
            used += refine_samples
            if est.value > best:
                best, best_se, best_ball = est.value, est.std_error, B
        used += (sl.stop - sl.start) * screen_samples
        history.append((sl.stop, math.sqrt(best)))
    val = math.sqrt(best)
    se = 0.5 * best_se / val if val > 0 else 0.0
    return SeminormEstimate(val, se, used, seed, "mc_stratified", u.field_id, best_ball, alpha,
                            history=history)


def bmo_norm_estimate(u: ScalarField, ball_sampler: BallSampler, ball_budget: int = 1000, seed: int = 0,
                      samples: int = 512, refine_samples: int = 16384, refine_top: int = 4,
                      chunk: int = 500) -> SeminormEstimate:
    """Lower estimate of sup_B mean_B |u - u_B| over sampled balls."""
    if u.is_constant():
        return SeminormEstimate(0.0, 0.0, 0, seed, "mc_stratified", u.field_id, None)
    C, r = ball_sampler.sample(ball_budget, seed)
    n = C.shape[1]
    best, best_se, best_ball = 0.0, 0.0, None
    history = []

    def osc(Cb, rb, m, rng):
        x = _uniform_in_balls(rng, np.repeat(Cb, m, axis=0), np.repeat(rb, m), n)
        Y = u.evaluate(x).reshape(len(rb), m)
        dev = np.abs(Y - Y.mean(axis=1, keepdims=True))
        return dev.mean(axis=1), dev.std(axis=1, ddof=1) / math.sqrt(m)

    for i0 in range(0, len(r), chunk):
        sl = slice(i0, min(len(r), i0 + chunk))
        scr, _ = osc(C[sl], r[sl], samples, np.random.default_rng([seed, 15485863, i0]))
        for j in np.argsort(scr)[::-1][:refine_top]:
            v, se = osc(C[sl][j:j + 1], r[sl][j:j + 1], refine_samples,
                        np.random.default_rng([seed, 32452843, i0 + int(j)]))
            if v[0] > best:
                best, best_se, best_ball = float(v[0]), float(se[0]), Ball(tuple(C[sl][j]), float(r[sl][j]))
        history.append((sl.stop, best))
    return SeminormEstimate(best, best_se, len(r) * samples, seed, "mc_stratified", u.field_id, best_ball,
                            history=history)


@dataclass
class EquivalenceReport:
    psi: SeminormEstimate
    phi_small: SeminormEstimate
    phi_large: SeminormEstimate
    ratio_small: float
    ratio_large: float
    degenerate: bool


def norm_equivalence_check(u: ScalarField, B: Ball, alpha: float, q: float = 2.0, seed: int = 0,
                           n_samples: int = 20000, psi_samples: int = 1000) -> EquivalenceReport:
    """Psi(u, B) / Phi(u, B/16) and Psi(u, B) / Phi(u, 16B)."""
    psi = psi_alpha_q(u, B, alpha, q, n_samples=psi_samples, seed=seed)
    ps = phi_alpha(u, B.dilate(1 / 16), alpha, n_samples, seed)
    pl = phi_alpha(u, B.dilate(16), alpha, n_samples, seed)
    degenerate = psi.value == 0 or ps.value == 0 or pl.value == 0
    rs = psi.value / ps.value if ps.value > 0 else math.inf
    rl = psi.value / pl.value if pl.value > 0 else math.inf
    if degenerate and psi.value == 0 and ps.value == 0:
        rs = float("nan")
    if degenerate and psi.value == 0 and pl.value == 0:
        rl = float("nan")
    return EquivalenceReport(psi, ps, pl, rs, rl, degenerate)
