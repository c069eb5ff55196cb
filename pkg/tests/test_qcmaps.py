import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qspace import ParameterError, PoleError
from qspace.geometry import Ball
from qspace.qcmaps import (cantor_patch_map, identity_map, inversion_map, lattice_patch_map, local_distortion,
                           map_eval, map_from_dict, map_inverse, map_jacobian, qc_dilatation_estimate,
                           radial_power_map)

MAPS = {
    "identity": identity_map(2),
    "radial2": radial_power_map(2.0, 2),
    "radial05": radial_power_map(0.5, 2),
    "inversion": inversion_map(2),
    "cantor": cantor_patch_map(0.5, 1.0, 3, 2),
    "lattice": lattice_patch_map(0.5, 1.0, 16.0),
}


def test_radial_examples():
    f = radial_power_map(2.0, 2)
    x = np.array([1.0, 1.0]) / np.sqrt(2)
    assert np.allclose(map_eval(f, x), x)
    assert np.allclose(map_eval(f, [2.0, 0.0]), [4.0, 0.0])
    assert np.allclose(map_inverse(f, [4.0, 0.0]), [2.0, 0.0])
    pts = np.random.default_rng(0).normal(size=(50, 2))
    assert np.allclose(map_eval(radial_power_map(1.0, 2), pts), pts)
    assert np.allclose(map_inverse(identity_map(2), pts), pts)


def test_pole_errors():
    with pytest.raises(PoleError, match="pole"):
        map_eval(inversion_map(2), [0.0, 0.0])
    with pytest.raises(PoleError):
        map_jacobian(inversion_map(2), [0.0, 0.0])


@pytest.mark.parametrize("beta", [0.5, 2.0, 3.0])
@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_radial_jacobian(beta, r):
    f = radial_power_map(beta, 2)
    x = np.array([r * 0.6, r * 0.8])
    J = map_jacobian(f, x)
    assert J == pytest.approx(beta * r ** (2 * (beta - 1)), rel=1e-12)
    assert map_jacobian(f, x, mode="finite_difference") == pytest.approx(J, rel=1e-6)


def test_identity_jacobian_and_distortion():
    f = identity_map(2)
    assert map_jacobian(f, [0.3, -2.0]) == 1.0
    assert local_distortion(f, [0.1, 0.2], 0.7) == pytest.approx(0.7, rel=1e-12)
    assert qc_dilatation_estimate(f, Ball((0, 0), 1.0), 500).K_estimate == pytest.approx(1.0, abs=1e-6)


def test_radial_distortion_about_center():
    f = radial_power_map(2.0, 2)
    assert local_distortion(f, [0.0, 0.0], 0.3) == pytest.approx(0.09, rel=1e-9)
    K = qc_dilatation_estimate(f, Ball((0.2, 0.1), 1.0), 2000).K_estimate
    assert K == pytest.approx(2.0, rel=0.05)


def test_inversion_distortion_pole():
    with pytest.raises(ParameterError, match="unbounded distortion"):
        local_distortion(inversion_map(2), [0.1, 0.0], 0.5)


def test_cantor_patch_boundary_and_outside():
    f = MAPS["cantor"]
    rng = np.random.default_rng(1)
    for z, R in zip(f.patch_centers[:10], f.patch_radii[:10]):
        v = rng.normal(size=2)
        x = np.asarray(z) + R * v / np.linalg.norm(v)
        assert np.allclose(map_eval(f, x), x, atol=1e-12)
    far = np.array([[3.0, 3.0], [-1.0, 0.5]])
    assert np.allclose(map_eval(f, far), far)
    assert np.allclose(map_jacobian(f, far), 1.0)


def test_cantor_patch_dilatation_stable():
    f = cantor_patch_map(0.5, 2.0, 3, 2)
    region = Ball((0.5, 0.5), 0.75)
    k1 = qc_dilatation_estimate(f, region, 1000, seed=0).K_estimate
    k2 = qc_dilatation_estimate(f, region, 100000, seed=0).K_estimate
    assert np.isfinite(k1) and np.isfinite(k2)
    assert abs(k2 / k1 - 1) < 0.05


def test_lattice_patch_checks():
    with pytest.raises(ParameterError):
        lattice_patch_map(0.5, 1.0, 8.0, patch_radius=0.6)
    f = MAPS["lattice"]
    z, R = np.asarray(f.patch_centers[3]), f.patch_radii[3]
    x = z + [R, 0.0]
    assert np.allclose(map_eval(f, x), x, atol=1e-12)


def test_map_dict_round_trip():
    f = radial_power_map(2.0, 2, center=(0.5, 0.0))
    g = map_from_dict(f.to_dict())
    x = np.array([[0.1, 0.2], [1.3, -0.4]])
    assert np.allclose(map_eval(f, x), map_eval(g, x))


def _points_away(f, pts):
    s = f.singular_points()
    if len(s):
        d = np.min(np.linalg.norm(pts[:, None] - np.asarray(s)[None], axis=2), axis=1)
        pts = pts[d > 1e-3]
    return pts


@pytest.mark.parametrize("name", list(MAPS))
def test_round_trip(name):
    f = MAPS[name]
    pts = _points_away(f, np.random.default_rng(3).uniform(-1.5, 2.5, size=(400, 2)))
    assert np.max(np.abs(map_inverse(f, map_eval(f, pts)) - pts)) <= 1e-10
    assert np.max(np.abs(map_eval(f, map_inverse(f, pts)) - pts)) <= 1e-10


@pytest.mark.parametrize("name", list(MAPS))
def test_jacobian_modes_agree(name):
    f = MAPS[name]
    pts = _points_away(f, np.random.default_rng(4).uniform(-1.5, 2.5, size=(200, 2)))
    Ja = map_jacobian(f, pts)
    Jf = map_jacobian(f, pts, mode="finite_difference")
    assert np.max(np.abs(Jf / Ja - 1)) <= 1e-5


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 4.0), st.floats(-3, 3), st.floats(-3, 3))
def test_inverse_jacobian_reciprocal(beta, x, y):
    f = radial_power_map(beta, 2)
    p = np.array([x, y])
    if np.linalg.norm(p) < 1e-2:
        return
    J = map_jacobian(f, p)
    Ji = map_jacobian(f, map_eval(f, p), inverse=True)
    assert J * Ji == pytest.approx(1.0, rel=1e-9)
