import math

import numpy as np
import pytest
import scipy.sparse as sp

from twistband.eigensolve import (EigenError, merge_pairs, rayleigh_quotient,
                                  relative_residuals, solve_lowest)


def test_diagonal_pencil():
    S = sp.diags([1.0, 2.0, 3.0])
    res = solve_lowest(S, sp.identity(3), 2)
    assert np.allclose(res.values, [1, 2])


@pytest.mark.parametrize("method", ["dense", "shift_invert", "lobpcg"])
def test_square_eigenvalue(square_mats, method):
    F = square_mats
    res = solve_lowest(F.K, F.M, 3, method=method, seed=3)
    assert abs(res.values[0] - 2 * math.pi ** 2) / (2 * math.pi ** 2) < 0.02
    assert np.all(np.diff(res.values) >= 0)
    G = res.vectors.T @ (F.M @ res.vectors)
    assert np.allclose(G, np.eye(3), atol=1e-10)
    assert np.all(res.residuals <= 1e-8)
    assert np.allclose(res.residuals, relative_residuals(F.K, F.M, res.values, res.vectors))


def test_methods_agree(square_mats):
    F = square_mats
    a = solve_lowest(F.K, F.M, 3, method="dense").values
    b = solve_lowest(F.K, F.M, 3, method="shift_invert").values
    assert np.allclose(a, b, rtol=1e-10)


def test_shift_identity(square_mats):
    F = square_mats
    c = 3.7
    a = solve_lowest(F.K, F.M, 2, method="shift_invert").values
    b = solve_lowest(F.K + c * F.M, F.M, 2, method="shift_invert").values
    assert np.allclose(b - a, c, atol=1e-11 * abs(b).max())


def test_deterministic(square_mats):
    F = square_mats
    a = solve_lowest(F.K, F.M, 2, method="shift_invert", seed=5)
    b = solve_lowest(F.K, F.M, 2, method="shift_invert", seed=5)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.vectors, b.vectors)


def test_minimax_monotone(square_mats):
    F = square_mats
    a = solve_lowest(F.K, F.M, 3).values
    b = solve_lowest(F.K + F.A, F.M, 3).values
    assert np.all(b >= a - 1e-12)


def test_rayleigh(square_mats, rng):
    F = square_mats
    res = solve_lowest(F.K, F.M, 2)
    x1, x2 = res.vectors.T
    assert abs(rayleigh_quotient(F.K, F.M, x1) - res.values[0]) < 1e-8 * res.values[0]
    two = rayleigh_quotient(F.K, F.M, x1 + x2)
    assert abs(two - res.values.mean()) < 1e-10 * res.values.mean()
    x = rng.standard_normal(F.M.shape[0])
    assert rayleigh_quotient(F.K, F.M, x) >= res.values[0] * (1 - 1e-12)
    with pytest.raises(ValueError):
        rayleigh_quotient(F.K, F.M, np.zeros(F.M.shape[0]))


def test_bad_arguments():
    with pytest.raises(ValueError):
        solve_lowest(sp.identity(3), sp.identity(3), 0)
    with pytest.raises(ValueError):
        solve_lowest(sp.identity(3), sp.identity(4), 1)


def test_indefinite_mass():
    with pytest.raises(EigenError):
        solve_lowest(sp.identity(3), sp.diags([1.0, -1.0, 1.0]), 1, method="dense")


def test_history_csv(square_mats):
    res = solve_lowest(square_mats.K, square_mats.M, 2, method="lobpcg")
    head = res.history_csv().splitlines()[0]
    assert head == "iteration,res_1,res_2"


def test_merge_pairs():
    vals, vecs = merge_pairs(np.array([1.0, 1.0, 2.0, 2.0]), np.eye(4))
    assert np.allclose(vals, [1, 2]) and vecs.shape == (4, 2)
    with pytest.raises(EigenError):
        merge_pairs(np.array([1.0, 1.0, 2.0]))
    with pytest.raises(EigenError):
        merge_pairs(np.array([1.0, 1.5, 2.0, 2.0]))
