"""Experiment drivers and the ``qspace`` command line."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import ParameterError
from .fractal import (cantor_dimension, dim_global_selfsim, dim_local_selfsim, dim_minkowski,
                      gen_cantor_centers, gen_lattice_theta)
from .geometry import Ball, ball_volume
from .muckenhoupt import a1_constant_estimate
from .qcmaps import (MapModel, cantor_patch_map, cantor_patch_radius, inversion_map, lattice_patch_map,
                     map_from_dict, map_inverse, map_jacobian, radial_power_map)
from .qnorm import (ScalarField, _Annuli, _unit_vectors, composed_field, default_sampler, gaussian_field,
                    jacobian_field, linear_field, norm_equivalence_check, plane_wave_field, qnorm_estimate,
                    tent_field, tent_sum_field)

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

EXPERIMENTS = ("dim", "qnorm", "a1check", "compose-ratio", "blowup", "lattice-blowup")


# ---------------------------------------------------------------- config

@dataclass
class Budgets:
    ball_budget: int = 2000
    ball_budgets: list = field(default_factory=lambda: [2000, 4000])
    n_samples: int = 20000
    psi_samples: int = 1000
    screen_samples: int = 256
    refine_samples: int = 8192
    quad_samples: int = 512
    a1_ball_budget: int = 10000  # two full decades above the first checkpoint
    numerator_samples: int = 200000
    dim_ball_budget: int = 256


@dataclass
class Thresholds:
    min_slope: float = float("nan")
    max_abs_slope: float = float("nan")
    divergence_slope: float = 0.05
    sigma_flag: float = 0.25
    stability: float = 0.10
    max_spread: float = 1e3


@dataclass
class ExperimentConfig:
    experiment: str = "dim"
    n: int = 2
    alpha: float = 0.5
    alpha_list: list = field(default_factory=list)
    q_list: list = field(default_factory=lambda: [2.0])
    alpha0: float | None = None
    beta: float = 1.0
    theta: float | None = None
    a: float | None = None
    m_list: list = field(default_factory=lambda: [1, 2, 3, 4])
    ell_rule: str = "derived"
    ell_beta: float | None = None
    seed: int = 0
    out: str = "results"
    require_convergence: bool = False
    maps: list = field(default_factory=list)
    sets: list = field(default_factory=list)
    budgets: Budgets = field(default_factory=Budgets)
    thresholds: Thresholds = field(default_factory=Thresholds)

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ParameterError(f"unknown experiment {self.experiment!r}")
        for al in [self.alpha] + list(self.alpha_list):
            if not 0 < al < 1:
                raise ParameterError("alpha must lie in (0, 1)")
        if self.experiment in ("blowup", "lattice-blowup"):
            if self.alpha0 is None:
                raise ParameterError("blow-up experiments need alpha0")
            if not self.alpha > self.alpha0:
                raise ParameterError("blow-up experiments need alpha > alpha0")
        if self.ell_rule not in ("derived", "fixed"):
            raise ParameterError("ell_rule must be 'derived' or 'fixed'")
        return self


def _build(cls, data: dict, where: str):
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ParameterError(f"unknown config key(s) in {where}: {', '.join(sorted(unknown))}")
    kw = {}
    for k, v in data.items():
        if k == "budgets":
            v = _build(Budgets, v, "budgets")
        elif k == "thresholds":
            v = _build(Thresholds, v, "thresholds")
        kw[k] = v
    return cls(**kw)


def load_config(path: str) -> ExperimentConfig:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return config_from_dict(data)


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, dict(data), "top level").validate()


# ---------------------------------------------------------------- output

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path: str, rows: list, columns: list):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])


def _ball_str(B):
    return "" if B is None else " ".join(f"{c:.17g}" for c in B.center) + f" {B.radius:.17g}"


# ---------------------------------------------------------------- dimension table

DIM_COLUMNS = ["set", "n", "dim_M", "dim_L", "dim_LG", "target_M", "target_L", "target_LG",
               "liminf_L", "liminf_LG"]


def _dim_row(entry: dict, ball_budget: int, seed: int) -> dict:
    entry = dict(entry)
    kind = entry.pop("kind")
    n = int(entry.pop("n", 1))
    N_list = entry.pop("N_list", None)
    scale_range = entry.pop("scale_range", None)
    if kind == "lattice_theta":
        theta = float(entry.pop("theta"))
        k_max = int(entry.pop("k_max", 20))
        E = gen_lattice_theta(theta, k_max, n)
        name = f"lattice_theta={theta}"
        N_list = N_list or [2**k for k in range(max(2, k_max - 6), k_max + 1, 2)]
        target = (float("nan"), 0.0, theta * n)
        dM = float("nan")
    elif kind == "naturals":
        k_max = int(entry.pop("k_max", 12))
        E = gen_lattice_theta(1.0, k_max, n)
        name = "naturals"
        N_list = N_list or [2**k for k in range(max(2, k_max - 6), k_max + 1, 2)]
        target = (float("nan"), 0.0, float(n))
        dM = float("nan")
    elif kind == "cantor":
        a = float(entry.pop("a"))
        m_max = int(entry.pop("m_max", 8))
        E, _ = gen_cantor_centers(a, m_max, n, with_cubes=False)
        name = f"cantor_a={a:.6g}"
        s = 2 / (1 - a)
        N_list = N_list or [s**k for k in range(2, m_max - 1)]
        d = cantor_dimension(a, n)
        target = (d, d, d)
        rr = (1 - a) / 2
        scale_range = scale_range or (rr**m_max, rr**3)
        dM = dim_minkowski(E, tuple(scale_range)).value
    else:
        raise ParameterError(f"unknown set kind {kind!r}")
    if entry:
        raise ParameterError(f"unknown set keys: {', '.join(sorted(entry))}")
    L = dim_local_selfsim(E, N_list=N_list, ball_budget=ball_budget, seed=seed)
    G = dim_global_selfsim(E, N_list=N_list, ball_budget=ball_budget, seed=seed)
    return {"set": name, "n": n, "dim_M": dM, "dim_L": L.value, "dim_LG": G.value,
            "target_M": target[0], "target_L": target[1], "target_LG": target[2],
            "liminf_L": L.liminf_ratio, "liminf_LG": G.liminf_ratio}


DEFAULT_SETS = [
    {"kind": "lattice_theta", "theta": 0.0, "k_max": 20, "N_list": [2**14, 2**16, 2**18, 2**20]},
    {"kind": "lattice_theta", "theta": 0.5, "k_max": 20, "N_list": [2**14, 2**16, 2**18, 2**20]},
    {"kind": "lattice_theta", "theta": 1.0, "k_max": 20, "N_list": [2**14, 2**16, 2**18, 2**20]},
    {"kind": "naturals", "k_max": 20, "N_list": [2**14, 2**16, 2**18, 2**20]},
    {"kind": "cantor", "a": 1 / 3, "m_max": 8, "n": 1, "N_list": [9, 27, 81, 243, 729]},
    {"kind": "cantor", "a": 0.5, "m_max": 8, "n": 2},
]


def run_dimension_table(config: ExperimentConfig) -> list:
    sets = config.sets or DEFAULT_SETS
    return [_dim_row(s, config.budgets.dim_ball_budget, config.seed) for s in sets]


# ---------------------------------------------------------------- field suites

def field_suite(n: int = 2, away_from_origin: bool = False) -> list:
    """Nonconstant test fields in R^2; with ``away_from_origin`` only fields
    supported (or decaying) away from 0."""
    if n != 2:
        raise ParameterError("the built-in field suite is two-dimensional")
    sup = [
        tent_field([0.6, 0.2], 0.3, "tent_a"),
        tent_field([-0.4, 0.5], 0.15, "tent_b"),
        tent_sum_field([[0.5, -0.5], [0.8, -0.3], [0.3, -0.8]], [0.1, 0.08, 0.12], "tents3"),
        gaussian_field([0.6, 0.4], 0.2, 1.0, "gauss_a"),
    ]
    if away_from_origin:
        return sup
    rest = [
        linear_field([1.0, 0.0], 0.0, "lin_x"),
        linear_field([0.5, -1.5], 0.3, "lin_xy"),
        tent_field([0.0, 0.0], 0.5, "tent_0"),
        gaussian_field([0.0, 0.0], 0.5, 2.0, "gauss_0"),
        plane_wave_field([3.0, 1.0], 0.0, "wave_31"),
        plane_wave_field([0.0, 6.0], 0.3, "wave_06"),
        composed_field(tent_field([0.6, 0.2], 0.3), radial_power_map(2.0, 2), "tent_a@radial2"),
    ]
    return sup + rest


def _anchor(u: ScalarField):
    # a point with nonzero gradient; a bump's own centre is a critical point
    if u.kind == "gaussian":
        c = np.array(u.params["center"], dtype=float)
        c[0] += u.params["width"] / math.sqrt(2)
        return c
    F = u.features()
    return F[0] if len(F) else np.zeros(u.n)


def suite_balls(u: ScalarField) -> list:
    """Five balls per field, centred on or near its first feature."""
    c = _anchor(u)
    h = u.feature_scale()
    s = 0.5 if not math.isfinite(h) else h
    return [Ball(tuple(c), s), Ball(tuple(c), 2 * s), Ball(tuple(c), 0.5 * s),
            Ball(tuple(c + [0.1 * s, 0.0]), s), Ball(tuple(c + [-0.1 * s, 0.05 * s]), 3 * s)]


RECORD_COLUMNS = ["field_id", "ball", "alpha", "q", "value", "std_error", "n_samples", "seed", "method"]
RATIO_COLUMNS = ["field_id", "ball", "alpha", "q", "psi", "phi_small", "phi_large", "ratio_small",
                 "ratio_large", "degenerate"]


def run_norm_equivalence(config: ExperimentConfig):
    """Psi/Phi bracketing ratios over the field suite; returns (records, ratio rows)."""
    alphas = config.alpha_list or [config.alpha]
    records, rows = [], []
    b = config.budgets
    for u in field_suite(config.n):
        for B in suite_balls(u):
            for al in alphas:
                for q in config.q_list:
                    rep = norm_equivalence_check(u, B, al, float(q), config.seed, b.n_samples, b.psi_samples)
                    for est, tag in ((rep.psi, "psi"), (rep.phi_small, "phi_small"), (rep.phi_large, "phi_large")):
                        rec = est.to_record()
                        rec["q"] = q
                        rec["method"] = f"{est.method}:{tag}"
                        records.append(rec)
                    rows.append({"field_id": u.field_id, "ball": _ball_str(B), "alpha": al, "q": q,
                                 "psi": rep.psi.value, "phi_small": rep.phi_small.value,
                                 "phi_large": rep.phi_large.value, "ratio_small": rep.ratio_small,
                                 "ratio_large": rep.ratio_large, "degenerate": rep.degenerate})
    return records, rows


def spread(values) -> float:
    v = np.asarray([x for x in values if np.isfinite(x) and x > 0])
    return float(v.max() / v.min()) if v.size else float("nan")


# ---------------------------------------------------------------- composition ratio

COMPOSE_COLUMNS = ["map", "alpha", "field_id", "budget", "qnorm_u", "qnorm_uf", "rho"]


def run_composition_ratio(f: MapModel, alpha: float, field_suite_: list, ball_budget, seed: int = 0,
                          budgets: Budgets | None = None, region=((0.0, 0.0), 2.0)) -> dict:
    """rho(u) = qnorm(u o f) / qnorm(u) per field, at each checkpoint budget.

    ``ball_budget`` may be a list of increasing budgets; budgets are nested so a
    single run at the largest budget yields every checkpoint.
    """
    bl = sorted(ball_budget) if isinstance(ball_budget, (list, tuple)) else [ball_budget]
    b = budgets or Budgets()
    center, radius = region
    rows = []
    for u in field_suite_:
        uf = composed_field(u, f)
        # chunks must end on every checkpoint budget so the history has them
        kw = dict(screen_samples=b.screen_samples, refine_samples=b.refine_samples,
                  chunk=min(500, math.gcd(*bl)))
        eu = qnorm_estimate(u, alpha, default_sampler(u, center, radius), bl[-1], seed, **kw)
        ef = qnorm_estimate(uf, alpha, default_sampler(uf, center, radius), bl[-1], seed, **kw)
        hu, hf = dict(eu.history), dict(ef.history)
        for k in bl:
            vu = _hist_at(hu, k)
            vf = _hist_at(hf, k)
            rows.append({"map": f.kind, "alpha": alpha, "field_id": u.field_id, "budget": k,
                         "qnorm_u": vu, "qnorm_uf": vf, "rho": vf / vu if vu > 0 else float("nan")})
    max_rho = {k: max(r["rho"] for r in rows if r["budget"] == k) for k in bl}
    change = (max_rho[bl[-1]] / max_rho[bl[0]] - 1.0) if len(bl) > 1 else 0.0
    return {"rows": rows, "max_rho": max_rho, "relative_change": change}


def _hist_at(h: dict, k: int) -> float:
    keys = [b for b in h if b <= k]
    return h[max(keys)] if keys else 0.0


# ---------------------------------------------------------------- blow-up constructions

@dataclass
class RatioCurve:
    entries: list            # (m, R_m, std_error)
    fitted_slope: float
    predicted_slope: float
    flags: list = field(default_factory=list)
    details: list = field(default_factory=list)

    @property
    def increasing(self) -> bool:
        R = [e[1] for e in self.entries]
        return all(b > a for a, b in zip(R, R[1:]))


def derived_a(alpha0: float, n: int) -> float:
    """a = 1 - 2^(-2 alpha0 / (n - 2 alpha0))."""
    if not 0 < 2 * alpha0 < n:
        raise ParameterError("need 0 < 2 alpha0 < n")
    return 1.0 - 2.0 ** (-2 * alpha0 / (n - 2 * alpha0))


def beta_zero(a: float, alpha: float, n: int) -> float:
    return 1.0 + (n - 2 * alpha) / n * math.log2((1 - a) / 2)


def ell_cantor(m: int, n: int, alpha: float, beta: float, b0: float) -> float:
    return m * n * min(beta, b0) / (n - 2 * alpha)


@dataclass
class UmData:
    field: ScalarField
    z: np.ndarray          # patch centres z_{m,j}
    x: np.ndarray          # tent centres x_{m,j}
    r: float
    ell: float
    edge: float            # ((1 - a)/2)^m


def build_um(a: float, alpha: float, alpha0: float, beta: float, m: int, n: int = 2,
             ell: float | None = None) -> UmData:
    """Tent sum over B_{m,j}: radius 2^-ell a e_m / 64, centre offset 2^-ell a e_m / 4 along e_1."""
    if not alpha > alpha0:
        raise ParameterError("need alpha > alpha0")
    if not 0 < a < 1:
        raise ParameterError("a must lie in (0, 1)")
    from .fractal import cantor_level
    if ell is None:
        ell = ell_cantor(m, n, alpha, beta, beta_zero(a, alpha, n))
    z, e = cantor_level(a, m, n)
    r = 2.0**-ell * a * e / 64
    off = np.zeros(n)
    off[0] = 2.0**-ell * a * e / 4
    x = z + off
    u = tent_sum_field(x, r, f"u_m{m}")
    return UmData(u, z, x, r, ell, e)


def check_um(d: UmData, a: float, cube_factor: float = 17 / 64) -> dict:
    """Containment checks for B_{m,j}: inside the patch ball, inside the scaled cube
    of half-edge cube_factor 2^-ell a e_m, count 2^{mn}."""
    n = d.x.shape[1]
    R = 0.5 * a * d.edge
    reach = np.linalg.norm(d.x - d.z, axis=1) + d.r
    cheb = np.abs(d.x - d.z).max(axis=1) + d.r
    half = cube_factor * 2.0**-d.ell * a * d.edge
    return {"count": len(d.x), "expected_count": 2 ** (int(round(math.log2(len(d.x)) / n)) * n),
            "in_patch": bool(np.all(reach < R)), "in_cube_half_edge": bool(np.all(cheb <= half * (1 + 1e-12))),
            "in_cube_edge": bool(np.all(cheb <= 0.5 * half * (1 + 1e-12)))}


def pulled_back_energy(f: MapModel, centers: np.ndarray, radius: float, alpha: float, n_samples: int,
                       seed: int = 0):
    """sum_j of the double integral of |v(x) - v(y)|^2 / |x - y|^(n + 2 alpha) over P_j x P_j,

    where P_j = f^-1(B(c_j, radius)) and v = tent_j o f.  x is drawn as f^-1 of a
    uniform point of B_j (density J_f(x) / |B_j|), y from dyadic annuli around x.
    Returns (value, std_error).
    """
    n = f.n
    C = np.asarray(centers, dtype=float).reshape(-1, n)
    P = len(C)
    # size of a preimage, for the annulus law
    ring = C[0] + radius * _ring(n)
    pre = map_inverse(f, ring)
    diam = float(np.max(np.linalg.norm(pre[:, None] - pre[None], axis=2)))
    vol = ball_volume(n, radius)
    tot = []
    for b0 in range(0, n_samples, 1 << 15):
        k = min(1 << 15, n_samples - b0)
        rng = np.random.default_rng([seed, 271828, b0])
        j = rng.integers(0, P, k)
        y0 = C[j] + (radius * rng.random(k) ** (1 / n))[:, None] * _unit_vectors(rng, k, n)
        x = map_inverse(f, y0)
        wx = vol / map_jacobian(f, x)
        ann = _Annuli(n, alpha, diam / 4, diam)
        s, q = ann.draw(rng, k)
        y = x + s[:, None] * _unit_vectors(rng, k, n)
        fy = _eval_map(f, y)
        dy = np.linalg.norm(fy - C[j], axis=1)
        inside = dy < radius
        # both values through f, so that y == x gives an exact zero
        vx = radius - np.linalg.norm(_eval_map(f, x) - C[j], axis=1)
        vy = np.where(inside, radius - dy, 0.0)
        t = np.where(inside, wx * (vx - vy) ** 2 / s ** (n + 2 * alpha) / q, 0.0)
        tot.append(t)
    t = np.concatenate(tot)
    return P * float(t.mean()), P * float(t.std(ddof=1) / math.sqrt(len(t)))


def _eval_map(f, y):
    from .qcmaps import map_eval
    return map_eval(f, y)


def _ring(n, k=256):
    from .qcmaps import sphere_directions
    return sphere_directions(n, k)


def _ratio_point(f, um_centers, um_radius, u, alpha, big_ball, cfg: ExperimentConfig, region):
    b = cfg.budgets
    I, I_se = pulled_back_energy(f, um_centers, um_radius, alpha, b.numerator_samples, cfg.seed)
    nb = big_ball.n
    num = ball_volume(nb, big_ball.radius) ** (2 * alpha / nb - 1) * I
    num_se = num * I_se / I if I > 0 else float("inf")
    den_est = qnorm_estimate(u, alpha, default_sampler(u, region[0], region[1]), b.ball_budget, cfg.seed,
                             screen_samples=b.screen_samples, refine_samples=b.refine_samples)
    den = den_est.value**2
    den_se = 2 * den_est.value * den_est.std_error
    R = math.sqrt(num / den)
    rel = 0.5 * math.hypot(num_se / num, den_se / den if den > 0 else 0.0)
    return R, R * rel, num, den, den_est.ball


def _fit_slope(ms, R):
    return float(np.polyfit(np.asarray(ms, float), np.log2(np.asarray(R, float)), 1)[0])


def run_blowup(config: ExperimentConfig) -> RatioCurve:
    """Ratio ||u_m o f|| / ||u_m|| for the Cantor-patched stretch."""
    cfg = config
    n, alpha, beta = cfg.n, cfg.alpha, cfg.beta
    a = cfg.a if cfg.a is not None else derived_a(cfg.alpha0, n)
    b0 = beta_zero(a, alpha, n)
    ell_b = beta if cfg.ell_rule == "derived" else (cfg.ell_beta if cfg.ell_beta is not None else beta)
    entries, flags, details = [], [], []
    for m in cfg.m_list:
        ell = ell_cantor(m, n, alpha, ell_b, b0)
        d = build_um(a, alpha, cfg.alpha0, beta, m, n, ell)
        chk = check_um(d, a)
        assert chk["in_patch"] and chk["in_cube_half_edge"] and chk["count"] == 2 ** (m * n), chk
        f = cantor_patch_map(a, beta, max(m, 1), n)
        big = Ball(tuple(np.full(n, 0.0)), 2.0)
        R, se, num, den, wb = _ratio_point(f, d.x, d.r, d.field, alpha, big, cfg, (np.full(n, 0.5), 1.0))
        entries.append((m, R, se))
        flags.append(bool(se > cfg.thresholds.sigma_flag * R))
        details.append({"m": m, "ell": ell, "R": R, "std_error": se, "numerator": num, "denominator": den,
                        "flagged": flags[-1], "den_ball": _ball_str(wb)})
    ms = [e[0] for e in entries]
    slope = _fit_slope(ms, [e[1] for e in entries]) if len(ms) > 1 else float("nan")
    ell_per_m = ell_cantor(1, n, alpha, ell_b, b0)
    pred = ell_per_m * (n - 2 * alpha) * beta / (2 * (beta + 1))
    return RatioCurve(entries, slope, pred, flags, details)


def lattice_theta_from_alpha0(alpha0: float, n: int) -> float:
    """theta = (n - 2 alpha0) / n."""
    return (n - 2 * alpha0) / n


def ell_lattice(m: int, n: int, alpha: float, theta: float) -> float:
    den = 2 * alpha - n + theta * n
    if den <= 0:
        raise ParameterError("need 2 alpha - n + theta n > 0")
    return m * (n - 2 * alpha) / den


def build_lattice_um(theta: float, m: int, n: int, ell: float, points=None):
    """Tents of radius 2^(-m-5) at distance 2^-m (along e_1) from each lattice point |k| <= 2^ell."""
    if points is None:
        k_max = max(1, int(math.ceil(ell)))
        points = gen_lattice_theta(theta, k_max, n).points
        points = points[np.linalg.norm(points, axis=1) <= 2.0**ell + 1e-9]
    K = np.asarray(points, dtype=float).reshape(-1, n)
    off = np.zeros(n)
    off[0] = 2.0**-m
    r = 2.0 ** (-m - 5)
    return tent_sum_field(K + off, r, f"lattice_u_m{m}"), K, r


def run_lattice_blowup(config: ExperimentConfig, points=None) -> RatioCurve:
    cfg = config
    n, alpha, beta = cfg.n, cfg.alpha, cfg.beta
    theta = cfg.theta if cfg.theta is not None else lattice_theta_from_alpha0(cfg.alpha0, n)
    entries, flags, details = [], [], []
    for m in cfg.m_list:
        ell = ell_lattice(m, n, alpha, theta)
        u, K, r = build_lattice_um(theta, m, n, ell, points)
        f = lattice_patch_map(theta, beta, float(K.max()) + 1, n=n, centers=K)
        c = 0.5 * (K.min(axis=0) + K.max(axis=0))
        big = Ball(tuple(c), float(np.linalg.norm(K - c, axis=1).max()) + 1.0)
        region = (c, big.radius)
        R, se, num, den, wb = _ratio_point(f, u.params["centers"], r, u, alpha, big, cfg, region)
        entries.append((m, R, se))
        flags.append(bool(se > cfg.thresholds.sigma_flag * R))
        details.append({"m": m, "ell": ell, "R": R, "std_error": se, "numerator": num, "denominator": den,
                        "flagged": flags[-1], "den_ball": _ball_str(wb), "n_points": len(K)})
    ms = [e[0] for e in entries]
    slope = _fit_slope(ms, [e[1] for e in entries]) if len(ms) > 1 else float("nan")
    pred = (n - 2 * alpha) * beta / (2 * (beta + 1))
    return RatioCurve(entries, slope, pred, flags, details)


def lattice_dimension_check(theta: float, n: int = 2, k_max: int = 12, seed: int = 0, ball_budget: int = 256):
    E = gen_lattice_theta(theta, k_max, n)
    N_list = [2**k for k in range(max(2, k_max - 6), k_max + 1, 2)]
    L = dim_local_selfsim(E, N_list=N_list, ball_budget=ball_budget, seed=seed)
    G = dim_global_selfsim(E, N_list=N_list, ball_budget=ball_budget, seed=seed)
    return L.value, G.value


# ---------------------------------------------------------------- A_1 suite

A1_COLUMNS = ["map", "E", "constant_estimate", "divergence_flag", "expected", "slope_last_decade",
              "slope_last_two_decades", "admissible_count", "worst_ball"]


def run_a1_suite(config: ExperimentConfig) -> list:
    cfg = config
    n = cfg.n
    a = cfg.a if cfg.a is not None else 0.5
    m_max = max(cfg.m_list) if cfg.m_list else 4
    fc = cantor_patch_map(a, cfg.beta, m_max, n)
    Ea, _ = gen_cantor_centers(a, m_max, n, with_cubes=False)
    cube = Ball(tuple(np.full(n, 0.5)), 0.5 * math.sqrt(n))
    origin = Ball(tuple(np.zeros(n)), 2.0)
    cases = [
        ("cantor_patch", "E_a", jacobian_field(fc), Ea, cube, "converge"),
        ("cantor_patch", "empty", jacobian_field(fc), None, cube, "diverge"),
        ("radial_power_2", "{0}", jacobian_field(radial_power_map(2.0, n)), np.zeros((1, n)), origin, "converge"),
        ("radial_power_0.5", "empty", jacobian_field(radial_power_map(0.5, n)), None, origin, "converge"),
    ]
    rows = []
    for name, ename, w, E, region, expected in cases:
        rep = a1_constant_estimate(w, E, region, cfg.budgets.a1_ball_budget, cfg.budgets.quad_samples, cfg.seed,
                                   slope_threshold=cfg.thresholds.divergence_slope)
        rows.append({"map": name, "E": ename, "constant_estimate": rep.constant_estimate,
                     "divergence_flag": rep.divergence_flag, "expected": expected,
                     "slope_last_decade": rep.slope_last_decade,
                     "slope_last_two_decades": rep.slope_last_two_decades,
                     "admissible_count": rep.admissible_count, "worst_ball": _ball_str(rep.worst_ball)})
    return rows


# ---------------------------------------------------------------- CLI

def _maps_for(cfg: ExperimentConfig) -> list:
    if cfg.maps:
        return [map_from_dict({"n": cfg.n, **m}) for m in cfg.maps]
    return [radial_power_map(2.0, cfg.n), inversion_map(cfg.n)]


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="qspace", description="Q_alpha composition-operator experiments")
    p.add_argument("command", choices=EXPERIMENTS)
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    args = p.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out = args.out
        cfg.experiment = args.command
        cfg.validate()
        return _dispatch(cfg)
    except ParameterError as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return 2


def _dispatch(cfg: ExperimentConfig) -> int:
    out = cfg.out
    th = cfg.thresholds
    status = 0
    if cfg.experiment == "dim":
        rows = run_dimension_table(cfg)
        write_csv(os.path.join(out, "dim.csv"), rows, DIM_COLUMNS)
    elif cfg.experiment == "qnorm":
        records, rows = run_norm_equivalence(cfg)
        write_csv(os.path.join(out, "qnorm_records.csv"), records, RECORD_COLUMNS)
        write_csv(os.path.join(out, "qnorm_ratios.csv"), rows, RATIO_COLUMNS)
        for key in ("ratio_small", "ratio_large"):
            s = spread(r[key] for r in rows)
            print(f"{key} spread {s:.4g}")
    elif cfg.experiment == "a1check":
        rows = run_a1_suite(cfg)
        write_csv(os.path.join(out, "a1.csv"), rows, A1_COLUMNS)
        if cfg.require_convergence and any(r["divergence_flag"] for r in rows if r["expected"] == "converge"):
            status = 3
    elif cfg.experiment == "compose-ratio":
        rows, summary = [], []
        for f in _maps_for(cfg):
            for al in cfg.alpha_list or [cfg.alpha]:
                suite = field_suite(cfg.n, away_from_origin=True)
                res = run_composition_ratio(f, al, suite, cfg.budgets.ball_budgets, cfg.seed, cfg.budgets)
                rows += res["rows"]
                summary.append({"map": f.kind, "alpha": al, "relative_change": res["relative_change"],
                                **{f"max_rho_{k}": v for k, v in res["max_rho"].items()}})
                if cfg.require_convergence and abs(res["relative_change"]) > th.stability:
                    status = 3
        write_csv(os.path.join(out, "compose_ratio.csv"), rows, COMPOSE_COLUMNS)
        cols = sorted({k for s in summary for k in s}, key=lambda c: (c != "map", c != "alpha", c))
        write_csv(os.path.join(out, "compose_ratio_summary.csv"), summary, cols)
    else:
        curve = run_blowup(cfg) if cfg.experiment == "blowup" else run_lattice_blowup(cfg)
        name = cfg.experiment.replace("-", "_")
        cols = ["m", "ell", "R", "std_error", "numerator", "denominator", "flagged", "den_ball"]
        if cfg.experiment == "lattice-blowup":
            cols.append("n_points")
        write_csv(os.path.join(out, f"{name}.csv"), curve.details, cols)
        write_csv(os.path.join(out, f"{name}_fit.csv"),
                  [{"fitted_slope": curve.fitted_slope, "predicted_slope": curve.predicted_slope,
                    "increasing": curve.increasing}], ["fitted_slope", "predicted_slope", "increasing"])
        print(f"fitted slope {curve.fitted_slope:.4g} predicted {curve.predicted_slope:.4g}")
    return status


if __name__ == "__main__":
    sys.exit(main())
