import json
import os
import subprocess

import numpy as np
import pytest

import calibrax as cx


def test_projection_and_pinv():
    a = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    g = cx.gram_pseudoinverse(a)
    assert np.allclose(g, np.linalg.pinv(a.T @ a))
    x = np.array([1.0, 3.0, 5.0])
    assert np.allclose(cx.project(a, x), [2.0, 2.0, 5.0])


def test_tree_loss_and_bound():
    t = cx.TreeSpec([2, 2], [0.5, 0.5])
    assert t.leaves == 4
    assert cx.tree_distance(t, 1, 3) == pytest.approx(1.0)
    L = cx.tree_loss_matrix(t)
    S = cx.tree_block_basis(t, 1)
    assert cx.theorem1_bound(S, L, 1.0) == pytest.approx(0.0703125)
    assert cx.tree_bound_closed(t, 1, 1.0) == pytest.approx(0.0703125)
    rep = cx.consistency_report(S, L)
    assert rep["eta_lower"] == pytest.approx(0.5)
    assert rep["eta_upper"] == pytest.approx(0.5)


def test_binary_curve():
    L = cx.loss_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    S = cx.identity_subspace(2)
    grid = list(np.linspace(0.0, 1.0, 11))
    for eps, val in cx.calibration_curve(S, L, grid, workers=2):
        assert val == pytest.approx(eps * eps / 8, abs=1e-9)
    n, _ = cx.sample_complexity([(e, e * e / 8) for e in np.linspace(0, 1, 101)], 0.1, 1.0)
    assert n == 2560000


def test_map_helpers():
    assert cx.map_loss([1, 2, 3], [1, 0, 1]) == pytest.approx(1 / 6)
    assert cx.sort_predict([3.0, 1.0, 2.0]) == [1, 3, 2]
    assert cx.kappa_f_sort(5) == pytest.approx(3.148, rel=1e-3)
    assert cx.harmonic(3, 1) == pytest.approx(11 / 6)
    assert cx.map_loss_matrix(3).L.shape == (6, 7)
    assert cx.f_sort(3).F.shape == (6, 3)


def test_qp():
    res = cx.solve_qp(np.array([[2.0]]), np.array([0.0]), np.array([[1.0]]), np.array([1.0]))
    assert res["status"] == "optimal"
    assert res["x"][0] == pytest.approx(1.0)


def test_errors_become_python_exceptions():
    with pytest.raises(ValueError):
        cx.TreeSpec([2], [0.4])
    with pytest.raises(ValueError):
        cx.loss_matrix(np.array([[0.0, float("nan")], [1.0, 0.0]]))


@pytest.mark.skipif("CALIBRAX_CLI" not in os.environ, reason="CLI path not provided")
def test_cli_sample_complexity(tmp_path):
    curve = tmp_path / "c.csv"
    curve.write_text("# meta: kind=exact\nepsilon,value\n" +
                     "".join(f"{e!r},{e * e / 8!r}\n" for e in (t / 100 for t in range(101))))
    out = subprocess.run([os.environ["CALIBRAX_CLI"], "sample-complexity", "--curve", str(curve),
                          "--eps", "0.1", "--dm", "1"], capture_output=True, text=True, check=True)
    assert json.loads(out.stdout)["n_star"] == 2560000
    bad = subprocess.run([os.environ["CALIBRAX_CLI"], "sample-complexity", "--curve", str(curve),
                          "--eps", "0", "--dm", "1"], capture_output=True, text=True)
    assert bad.returncode == 4
