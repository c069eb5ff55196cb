"""Local A_1 constants: sup over admissible balls of avg_B w / ess inf_B w.

A ball B(x_B, r_B) is admissible for the degeneracy set E when 2 r_B < d(x_B, E);
with E empty every ball is admissible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import ParameterError
from .geometry import Ball
from .qcmaps import map_eval
from .qnorm import ScalarField, _uniform_in_balls, _unit_vectors


@dataclass
class A1Report:
    constant_estimate: float
    worst_ball: Ball
    admissible_count: int
    divergence_flag: bool
    history: list = field(default_factory=list)
    slope_last_decade: float = float("nan")
    slope_last_two_decades: float = float("nan")
    rejected: int = 0


def _image_area_avg(f, C, r, n_vertices=512):
    """avg_B J_f = |f(B)| / |B| from the image of the boundary circle (n = 2)."""
    t = 2 * np.pi * np.arange(n_vertices) / n_vertices
    ring = np.stack([np.cos(t), np.sin(t)], axis=1)
    P = C[:, None, :] + r[:, None, None] * ring[None]
    Q = map_eval(f, P.reshape(-1, 2)).reshape(P.shape)
    x, y = Q[..., 0], Q[..., 1]
    area = 0.5 * np.abs(np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1))
    return area / (np.pi * r**2)


def _unit_ball_samples(seed, i, m, n):
    rng = np.random.default_rng([seed, 1, int(i)])
    return _uniform_in_balls(rng, np.zeros((m, n)), np.ones(m), n)


def _avg_and_inf(w: ScalarField, C, r, m, seed, ids, percentile):
    n = C.shape[1]
    if w.kind == "affine":
        a, b = w.params["a"], w.params["b"]
        if a < 0:
            raise ParameterError("weight must be nonnegative")
        avg, inf = _avg_and_inf(w.params["inner"], C, r, m, seed, ids, percentile)
        return a * avg + b, a * inf + b
    U = np.stack([_unit_ball_samples(seed, i, m, n) for i in ids])
    x = (C[:, None, :] + r[:, None, None] * U).reshape(-1, n)
    Y = w.evaluate(x).reshape(len(r), m)
    if np.any(Y < 0):
        raise ParameterError("weight must be nonnegative")
    inf = np.percentile(Y, 1.0, axis=1) if percentile else Y.min(axis=1)
    if w.kind == "jacobian" and n == 2 and not w.params["map"].has_pole():
        avg = _image_area_avg(w.params["map"], C, r)
    else:
        avg = Y.mean(axis=1)
    return avg, inf


def _slope(hist, lo_budget):
    pts = [(b, v) for b, v in hist if b >= lo_budget and v > 0]
    if len(pts) < 2:
        return float("nan")
    b, v = np.log(np.array(pts)).T
    if np.ptp(b) == 0:
        return float("nan")
    return float(np.polyfit(b, v, 1)[0])


def a1_constant_estimate(w: ScalarField, E, region: Ball, ball_budget: int = 4000, quad_samples: int = 512,
                         seed: int = 0, r_min: float | None = None, r_max: float | None = None,
                         mode: str = "min", slope_threshold: float = 0.05, chunk: int = 256) -> A1Report:
    """Sampled A_1(R^n; E) constant of the weight w on balls inside ``region``.

    Half the balls are uniform in the region with log-uniform radii; the other
    half sit at distance in (2 r, 10 r], log-uniform, from a random point of E (from a
    random feature of w, at distance in [0, 10 r], when E is empty).  Ball i
    uses its own RNG stream, so budgets are nested and the history is the
    running maximum at geometric checkpoints.
    """
    if mode not in ("min", "percentile"):
        raise ParameterError("mode must be 'min' or 'percentile'")
    n = region.n
    pts = getattr(E, "points", E)
    pts = np.empty((0, n)) if pts is None else np.asarray(pts, dtype=float).reshape(-1, n)
    tree = cKDTree(pts) if len(pts) else None
    R0 = region.radius
    r_max = 0.5 * R0 if r_max is None else r_max
    r_min = 1e-4 * R0 if r_min is None else r_min
    if len(pts):
        targets, t_lo = pts[np.linalg.norm(pts - region.c, axis=1) < R0], 2.0
    else:
        F = w.features()
        targets = F[np.linalg.norm(F - region.c, axis=1) < R0] if len(F) else F
        t_lo = 0.0

    k = ball_budget
    C = np.empty((k, n))
    r = np.empty(k)
    for b0 in range(0, k, 1024):
        # fixed-size blocks keep the ball sequence independent of the budget
        rng = np.random.default_rng([seed, 0, b0])
        kb = 1024
        rb = np.exp(rng.uniform(math.log(r_min), math.log(r_max), kb))
        Cb = _uniform_in_balls(rng, np.broadcast_to(region.c, (kb, n)), np.full(kb, R0), n)
        if len(targets):
            snap = rng.random(kb) < 0.5
            j = rng.integers(0, len(targets), kb)
            u01 = rng.random(kb)
            # log-uniform on (2, 10] puts mass where admissibility binds
            t = 2.0 * 5.0**u01 if t_lo > 0 else 10.0 * u01
            Cb[snap] = targets[j[snap]] + (t[snap] * rb[snap])[:, None] * _unit_vectors(rng, int(snap.sum()), n)
        m = min(kb, k - b0)
        C[b0:b0 + m], r[b0:b0 + m] = Cb[:m], rb[:m]
    inside = np.linalg.norm(C - region.c, axis=1) + r <= R0
    if tree is not None:
        d, _ = tree.query(C)
        adm = inside & (2 * r < d)
    else:
        adm = inside
    if not adm.any():
        raise ParameterError("region inside degeneracy neighborhood")

    ratio = np.full(k, -np.inf)
    idx = np.nonzero(adm)[0]
    for i0 in range(0, idx.size, chunk):
        sel = idx[i0:i0 + chunk]
        avg, inf = _avg_and_inf(w, C[sel], r[sel], quad_samples, seed, sel, mode == "percentile")
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio[sel] = np.where(inf > 0, avg / inf, np.where(avg > 0, np.inf, 1.0))

    run = np.maximum.accumulate(ratio)
    checkpoints = sorted({int(round(v)) for v in np.geomspace(10, k, 25)} | {k})
    history = [(b, float(run[b - 1])) for b in checkpoints if run[b - 1] > -np.inf]
    best = int(np.argmax(ratio))
    s1 = _slope(history, k / 10)
    s2 = _slope(history, k / 100)
    flag = bool((s2 > slope_threshold) or not math.isfinite(run[-1]))
    return A1Report(float(run[-1]), Ball(tuple(C[best]), float(r[best])), int(adm.sum()), flag,
                    history, s1, s2, int(k - adm.sum()))
