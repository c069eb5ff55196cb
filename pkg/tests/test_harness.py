import csv
import math
import os

import numpy as np
import pytest

from qspace import ParameterError
from qspace.harness import (build_lattice_um, build_um, beta_zero, check_um, config_from_dict, derived_a,
                            ell_cantor, ell_lattice, field_suite, lattice_theta_from_alpha0, main,
                            pulled_back_energy, run_composition_ratio, spread, suite_balls)
from qspace.qcmaps import identity_map, lattice_patch_map


def write(tmp_path, text):
    p = tmp_path / "cfg.toml"
    p.write_text(text)
    return str(p)


def test_derived_parameters_for_cantor_blowup():
    a = derived_a(0.5, 2)
    assert a == pytest.approx(0.5)
    b0 = beta_zero(a, 0.75, 2)
    assert b0 == pytest.approx(0.5)
    assert ell_cantor(3, 2, 0.75, 1.0, b0) == pytest.approx(6.0)
    # predicted log2 slope per unit m: (ell/m)(n - 2 alpha) beta / (2 (beta + 1))
    assert 2 * (2 - 1.5) * 1 / (2 * 2) == pytest.approx(0.25)


def test_lattice_parameters():
    theta = lattice_theta_from_alpha0(0.5, 2)
    assert theta == pytest.approx(0.5)
    assert ell_lattice(3, 2, 0.75, theta) == pytest.approx(3.0)
    with pytest.raises(ParameterError):
        ell_lattice(3, 2, 0.4, theta)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_build_um_invariants(m):
    d = build_um(0.5, 0.75, 0.5, 1.0, m, 2)
    chk = check_um(d, 0.5)
    assert chk["count"] == 2 ** (2 * m)
    assert chk["in_patch"] and chk["in_cube_half_edge"]
    u = d.field
    assert np.max(u.evaluate(d.x)) == pytest.approx(d.r)
    assert u.lipschitz() == pytest.approx(1.0)
    with pytest.raises(ParameterError):
        build_um(0.5, 0.4, 0.5, 1.0, m, 2)


def test_single_patch_energy_matches_direct_integration():
    f = lattice_patch_map(0.5, 1.0, 2.0, centers=np.zeros((1, 2)))
    m, alpha = 2, 0.3
    c = np.array([[2.0**-m, 0.0]])
    r = 2.0 ** (-m - 5)
    I, se = pulled_back_energy(f, c, r, alpha, 200000, seed=0)

    # hand-built: inside the patch f(x) = 3|x| x; uniform pairs in a box around f^-1(B)
    rng = np.random.default_rng(1)
    lo, hi = np.array([0.27, -0.02]), np.array([0.30, 0.02])

    def v(x):
        d = np.linalg.norm(3 * np.linalg.norm(x, axis=1)[:, None] * x - c, axis=1)
        return np.maximum(r - d, 0.0), d < r

    vals = []
    for _ in range(10):
        x = lo + (hi - lo) * rng.random((10**6, 2))
        y = lo + (hi - lo) * rng.random((10**6, 2))
        vx, ix = v(x)
        vy, iy = v(y)
        k = np.linalg.norm(x - y, axis=1) ** (2 + 2 * alpha)
        vals.append(np.where(ix & iy, (vx - vy) ** 2 / k, 0.0) * np.prod(hi - lo) ** 2)
    t = np.concatenate(vals)
    direct, dse = t.mean(), t.std() / math.sqrt(len(t))
    assert abs(I - direct) <= 3 * math.hypot(se, dse)


def test_lattice_um_layout():
    u, K, r = build_lattice_um(0.5, 2, 2, 2.0)
    assert r == 2.0**-7
    C = u.params["centers"]
    assert np.allclose(np.linalg.norm(C - K, axis=1), 0.25)
    assert np.all(np.linalg.norm(K, axis=1) <= 4 + 1e-9)


def test_identity_composition_ratio_is_one():
    suite = field_suite(2, away_from_origin=True)[:2]
    res = run_composition_ratio(identity_map(2), 0.5, suite, [200, 400], seed=0)
    for row in res["rows"]:
        assert row["rho"] == pytest.approx(1.0, rel=1e-12)


def test_suite_sizes():
    suite = field_suite(2)
    assert len(suite) >= 10 and not any(u.is_constant() for u in suite)
    assert all(len(suite_balls(u)) >= 5 for u in suite)
    assert spread([1.0, 10.0, float("nan"), 0.0]) == 10.0


def test_unknown_config_keys(tmp_path):
    with pytest.raises(ParameterError, match="unknown config key"):
        config_from_dict({"experiment": "dim", "alpha_zero": 0.3})
    with pytest.raises(ParameterError, match="budgets"):
        config_from_dict({"experiment": "dim", "budgets": {"balls": 3}})
    assert main(["dim", "--config", write(tmp_path, 'experiment = "dim"\nbogus = 1\n')]) == 2


def test_cli_parameter_error_exit_code(tmp_path):
    cfg = write(tmp_path, 'alpha = 0.4\nalpha0 = 0.5\n')
    assert main(["blowup", "--config", cfg, "--out", str(tmp_path)]) == 2
    cfg = write(tmp_path, 'alpha = 1.5\n')
    assert main(["qnorm", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_cli_dim_writes_csv(tmp_path):
    cfg = write(tmp_path, '''
[[sets]]
kind = "cantor"
a = 0.3333333333333333
m_max = 6
n = 1
''')
    assert main(["dim", "--config", cfg, "--out", str(tmp_path / "o"), "--seed", "3"]) == 0
    with open(tmp_path / "o" / "dim.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["set"].startswith("cantor") and abs(float(rows[0]["dim_M"]) - 0.6309) < 0.1


def test_cli_flagged_instability_exit_code(tmp_path):
    # a negative stability threshold flags any budget change, which must map to exit code 3
    text = '''
alpha_list = [0.5]
require_convergence = {req}
maps = [{{kind = "radial_power", beta = 2.0}}]
[budgets]
ball_budgets = [100, 200]
refine_samples = 1024
[thresholds]
stability = -1.0
'''
    out = str(tmp_path / "o")
    assert main(["compose-ratio", "--config", write(tmp_path, text.format(req="true")), "--out", out]) == 3
    assert main(["compose-ratio", "--config", write(tmp_path, text.format(req="false")), "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "compose_ratio.csv"))


def test_cli_reproducible(tmp_path):
    cfg = write(tmp_path, '''
m_list = [1, 2]
alpha = 0.75
alpha0 = 0.5
[budgets]
ball_budget = 200
numerator_samples = 20000
refine_samples = 1024
''')
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        assert main(["blowup", "--config", cfg, "--out", str(out)]) == 0
        outs.append((out / "blowup.csv").read_text())
    assert outs[0] == outs[1]


def test_shipped_configs_load():
    from pathlib import Path
    from qspace.harness import load_config
    paths = sorted((Path(__file__).parent.parent / "configs").glob("*.toml"))
    assert len(paths) == 6
    for p in paths:
        assert load_config(str(p)).experiment == p.stem
