import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixedrom.rbf import (ExtrapolationWarning, LinearInterpolant1D, RbfError, RbfInterpolant,
                          build_training_table, fit, fit_mean_coefficients, gaussian,
                          projection_coefficients)


def gauss_solve(A, B):
    """Textbook Gaussian elimination with partial pivoting."""
    A = np.array(A, dtype=float)
    B = np.array(B, dtype=float)
    n = len(A)
    for k in range(n):
        p = k + int(np.argmax(np.abs(A[k:, k])))
        A[[k, p]], B[[k, p]] = A[[p, k]], B[[p, k]]
        for i in range(k + 1, n):
            f = A[i, k] / A[k, k]
            A[i, k:] -= f * A[k, k:]
            B[i] -= f * B[k]
    X = np.zeros_like(B)
    for i in reversed(range(n)):
        X[i] = (B[i] - A[i, i + 1:] @ X[i + 1:]) / A[i, i]
    return X


def kernel_matrix(Xh, gamma):
    n = len(Xh)
    K = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            K[i, j] = np.exp(-(gamma * np.linalg.norm(Xh[i] - Xh[j])) ** 2)
    return K


def test_single_centre_weight_is_output():
    r = fit(np.array([[0.3, 0.7]]), np.array([[2.5, -1.0]]), ridge=0.0)
    np.testing.assert_allclose(r.weights, [[2.5, -1.0]])


def test_weights_match_independent_solve(rng):
    X = rng.uniform(-2, 5, (20, 2))
    Y = rng.standard_normal((20, 3))
    r = fit(X, Y, ridge=0.0)
    Xh = (X - X.min(0)) / (X.max(0) - X.min(0))
    np.testing.assert_allclose(r.centers, Xh, atol=1e-15)
    w = gauss_solve(kernel_matrix(Xh, r.gamma), Y)
    np.testing.assert_allclose(r.weights, w, rtol=0, atol=1e-9 * np.max(np.abs(w)))


def test_exact_at_nodes_with_zero_ridge(rng):
    X = rng.uniform(0, 1, (20, 3))
    Y = rng.standard_normal((20, 2))
    r = fit(X, Y, ridge=0.0)
    K = gaussian(np.linalg.norm(r.centers[:, None] - r.centers[None], axis=2), r.gamma)
    assert np.max(np.abs(K @ r.weights - Y)) <= 1e-10 * np.max(np.abs(Y))
    np.testing.assert_allclose(r(X), Y, atol=1e-8 * np.max(np.abs(Y)))


def test_default_shape_parameter_is_inverse_mean_distance(rng):
    X = rng.uniform(0, 1, (8, 2))
    r = fit(X, rng.standard_normal(8))
    Xh = r.centers
    d = [np.linalg.norm(Xh[i] - Xh[j]) for i in range(8) for j in range(i + 1, 8)]
    assert r.gamma == pytest.approx(1.0 / np.mean(d), rel=1e-14)


def test_far_query_decays_and_warns(rng):
    X = rng.uniform(0, 1, (10, 2))
    Y = rng.standard_normal(10)
    r = fit(X, Y, ridge=0.0)
    far = X.min(0) + (X.max(0) - X.min(0)) * (1.0 + 10.0 / r.gamma + 1.0)
    with pytest.warns(ExtrapolationWarning):
        out = r(far)
    assert abs(out[0]) <= 1e-12 * np.max(np.abs(Y))


def test_no_warning_inside_box(rng):
    X = rng.uniform(0, 1, (10, 2))
    r = fit(X, rng.standard_normal(10))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        r(X.mean(axis=0))


def test_midpoint_matches_direct_formula(rng):
    X = rng.uniform(0, 3, (6, 2))
    Y = rng.standard_normal((6, 2))
    r = fit(X, Y, gamma=1.7, ridge=0.0)
    z = 0.5 * (X[1] + X[4])
    zh = (z - X.min(0)) / (X.max(0) - X.min(0))
    ref = sum(r.weights[j] * np.exp(-(1.7 * np.linalg.norm(zh - r.centers[j])) ** 2) for j in range(6))
    np.testing.assert_allclose(r(z), ref, rtol=1e-13, atol=1e-13)


def test_duplicates_need_ridge():
    X = np.array([[0.0], [1.0], [1.0]])
    with pytest.raises(RbfError, match="duplicate"):
        fit(X, np.array([1.0, 2.0, 2.0]), ridge=0.0)
    r = fit(X, np.array([1.0, 2.0, 2.0]), ridge=1e-8)
    assert np.all(np.isfinite(r.weights))


def test_ridge_bounds_kernel_spectrum(rng):
    X = rng.uniform(0, 1, (15, 2))
    r = fit(X, rng.standard_normal(15), ridge=1e-3)
    K = kernel_matrix(r.centers, r.gamma) + 1e-3 * np.eye(15)
    np.testing.assert_allclose(K, K.T)
    assert np.linalg.eigvalsh(K)[0] >= 1e-3 * (1 - 1e-9)


def test_shape_errors():
    with pytest.raises(RbfError):
        fit(np.zeros((3, 2)), np.zeros(4))
    r = fit(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([0.0, 1.0]))
    with pytest.raises(RbfError, match="inputs"):
        r(np.zeros(3))


def test_serialization_roundtrip(rng):
    r = fit(rng.uniform(0, 1, (7, 3)), rng.standard_normal((7, 2)))
    back = RbfInterpolant.from_arrays(r.arrays())
    z = rng.uniform(0, 1, (5, 3))
    np.testing.assert_array_equal(back(z, warn=False), r(z, warn=False))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_row_permutation_invariance(seed):
    r_ = np.random.default_rng(seed)
    X = r_.uniform(0, 1, (12, 2))
    Y = r_.standard_normal((12, 2))
    perm = r_.permutation(12)
    z = r_.uniform(0, 1, (4, 2))
    a = fit(X, Y, ridge=1e-10)(z, warn=False)
    b = fit(X[perm], Y[perm], ridge=1e-10)(z, warn=False)
    np.testing.assert_allclose(a, b, atol=1e-12 * max(1.0, np.max(np.abs(a))))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 10.0), st.floats(-5.0, 5.0))
def test_affine_input_rescaling_invariance(seed, s, t):
    r_ = np.random.default_rng(seed)
    X = r_.uniform(0, 1, (10, 2))
    Y = r_.standard_normal(10)
    z = r_.uniform(0, 1, (3, 2))
    a = fit(X, Y, ridge=1e-10)(z, warn=False)
    b = fit(s * X + t, Y, ridge=1e-10)(s * z + t, warn=False)
    np.testing.assert_allclose(a, b, atol=1e-10 * max(1.0, np.max(np.abs(a))))


# --------------------------------------------------------- 1D interpolation
def test_linear_interpolant_nodes_midpoints_and_clamping(rng):
    mus = np.array([0.8, 1.0, 1.3])
    table = rng.standard_normal((3, 4))
    f = fit_mean_coefficients(mus, table)
    np.testing.assert_array_equal(f(1.0), table[1])
    np.testing.assert_allclose(f(1.15), 0.5 * (table[1] + table[2]), atol=1e-15)
    np.testing.assert_array_equal(f(0.1), table[0])
    np.testing.assert_array_equal(f(9.0), table[2])
    for q in rng.uniform(0.8, 1.3, 20):
        k = np.searchsorted(mus, q) - 1
        w = (q - mus[k]) / (mus[k + 1] - mus[k])
        np.testing.assert_allclose(f(q), (1 - w) * table[k] + w * table[k + 1], atol=1e-14)


def test_linear_interpolant_rejects_bad_samples():
    with pytest.raises(RbfError):
        LinearInterpolant1D(np.array([1.0, 1.0]), np.zeros((2, 1)))
    with pytest.raises(RbfError):
        fit_mean_coefficients(np.array([2.0, 1.0]), np.zeros((2, 1)))
    with pytest.raises(RbfError):
        fit_mean_coefficients(np.array([1.0]), np.zeros((1, 1)))


# ----------------------------------------------------------- training data
def test_projection_coefficients(rng):
    w = rng.uniform(0.5, 1.5, 30)
    modes = np.linalg.qr(rng.standard_normal((30, 3)) / np.sqrt(w)[:, None])[0] / np.sqrt(w)[:, None]
    S = np.column_stack([modes[:, 0], np.zeros(30), rng.standard_normal(30)])
    g = projection_coefficients(S, modes, w)
    np.testing.assert_allclose(g[0], [1.0, 0.0, 0.0], atol=1e-12)
    assert np.all(g[1] == 0.0)
    for l in range(3):
        assert g[2, l] == pytest.approx(sum(w[c] * S[c, 2] * modes[c, l] for c in range(30)), rel=1e-12)


def test_training_table_counts_and_linear_rate():
    a = np.array([[1.0, 2.0], [1.5, 2.5], [2.0, 3.0]])
    tab = build_training_table(a, np.ones((3, 1)), 1, 3, np.array([0.5]))
    assert tab.inputs.shape == (2, 4)
    np.testing.assert_array_equal(tab.inputs[:, 2:], 1.0)


def test_training_table_matches_loop(rng):
    M, NT, Nu = 3, 4, 2
    a = rng.standard_normal((M * NT, Nu))
    g = rng.standard_normal((M * NT, 2))
    dts = np.array([0.1, 0.2, 0.05])
    tab = build_training_table(a, g, M, NT, dts)
    rows, targets = [], []
    for k in range(M):
        for r in range(1, NT):
            cur, prev = a[k * NT + r], a[k * NT + r - 1]
            rows.append(list(cur) + [(cur[i] - prev[i]) / dts[k] for i in range(Nu)])
            targets.append(g[k * NT + r])
    assert np.array_equal(tab.inputs, np.array(rows))
    assert np.array_equal(tab.targets, np.array(targets))
    with pytest.raises(RbfError, match="N_T >= 2"):
        build_training_table(a, g, M * NT, 1, np.ones(M * NT))
