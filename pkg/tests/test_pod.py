import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from mixedrom.boundary import FlowBoundary
from mixedrom.fom import step_channel, square_obstacle
from mixedrom.grid import rectangle
from mixedrom.jacobi import EigenError, jacobi_eigh
from mixedrom.pod import (PodError, build_basis, build_lifting_functions, compute_modes,
                          correlation_matrix, cumulative_energy, eigendecompose, homogenize,
                          mean_viscosity_fields, numerical_rank, pod, supremizer_modes)
from mixedrom.rbf import projection_coefficients


def weighted_gram(Q, w):
    return Q.T @ (w[:, None] * Q)


# ------------------------------------------------------------- eigensolver
def test_rank_one_matrix():
    lam, V = eigendecompose(np.array([[1.0, 1.0], [1.0, 1.0]]))
    np.testing.assert_allclose(lam, [2.0, 0.0], atol=1e-14)
    np.testing.assert_allclose(np.abs(V[:, 0]), [1 / np.sqrt(2)] * 2, atol=1e-14)


def test_identity_eigenvalues():
    lam, V = eigendecompose(np.eye(5))
    np.testing.assert_allclose(lam, 1.0)
    np.testing.assert_allclose(V.T @ V, np.eye(5), atol=1e-14)


# 150 and 300 exercise the blocked iteration
@pytest.mark.parametrize("n", [2, 3, 10, 37, 150, 300])
def test_random_spd_residual_and_trace(rng, n):
    A = rng.standard_normal((n, n))
    C = A @ A.T + 0.1 * np.eye(n)
    lam, V = eigendecompose(C)
    assert np.linalg.norm(C @ V - V * lam) <= 1e-10 * np.linalg.norm(C)
    assert lam.sum() == pytest.approx(np.trace(C), abs=1e-10 * np.trace(C))
    np.testing.assert_allclose(V.T @ V, np.eye(n), atol=1e-12)
    assert np.all(np.diff(lam) <= 0)
    np.testing.assert_allclose(lam, np.sort(np.linalg.eigvalsh(C))[::-1], rtol=1e-10)


@pytest.mark.parametrize("n", [12, 200])
def test_eigensolver_reports_nonconvergence(rng, n):
    A = rng.standard_normal((n, n))
    with pytest.raises(EigenError, match="did not converge in 1 sweeps"):
        jacobi_eigh(A + A.T, max_sweeps=1)


def test_rank_deficient_correlation_in_blocked_path(rng):
    S = rng.standard_normal((400, 30))
    S = np.hstack([S, S @ rng.standard_normal((30, 120))])
    C = S.T @ S
    lam, V = jacobi_eigh(C)
    np.testing.assert_allclose(V.T @ V, np.eye(150), atol=1e-12)
    assert np.linalg.norm(C @ V - V * lam) <= 1e-12 * np.linalg.norm(C)
    assert np.sum(lam > 1e-12 * lam[0]) == 30
    # spectrum agrees with LAPACK
    np.testing.assert_allclose(lam, np.sort(np.linalg.eigvalsh(C))[::-1], atol=1e-12 * lam[0])


def test_negative_roundoff_eigenvalues_are_clipped():
    C = np.array([[1.0, 1.0], [1.0, 1.0 + 1e-17]])
    lam, _ = eigendecompose(C)
    assert lam.min() >= 0.0


# ------------------------------------------------------------- correlation
def test_correlation_of_orthonormal_and_duplicate_snapshots():
    g = rectangle(4, 3)
    w = g.dof_weights(1)
    S = np.zeros((g.n_scalar_dofs, 3))
    for i in range(3):
        S[i, i] = 1.0 / np.sqrt(g.cell_volumes[i])
    np.testing.assert_allclose(correlation_matrix(S, w), np.eye(3), atol=1e-15)
    u = S[:, :1]
    np.testing.assert_allclose(correlation_matrix(np.hstack([u, u]), w), np.ones((2, 2)))


def test_correlation_matches_double_loop(rng):
    g, _ = step_channel(16, 8)
    S = rng.standard_normal((g.n_vector_dofs, 7))
    C = correlation_matrix(S, g.dof_weights(2))
    for i in range(7):
        for j in range(7):
            fi, _ = g.unpack_vector(S[:, i])
            fj, _ = g.unpack_vector(S[:, j])
            ref = g.inner_product(fi, fj)
            assert C[i, j] == pytest.approx(ref, rel=1e-12)


# -------------------------------------------------------------------- modes
def test_single_and_duplicate_snapshot_modes(rng):
    w = rng.uniform(0.5, 2.0, 40)
    u = rng.standard_normal((40, 1))
    unit = u / np.sqrt(w @ u[:, 0] ** 2)
    modes, lam = pod(u, w)
    np.testing.assert_allclose(np.abs(modes), np.abs(unit), atol=1e-13)
    modes, lam = pod(np.hstack([u, u]), w)
    assert modes.shape[1] == 1 and numerical_rank(lam) == 1
    np.testing.assert_allclose(np.abs(modes), np.abs(unit), atol=1e-12)


def test_requesting_more_modes_than_rank_fails(rng):
    u = rng.standard_normal((30, 1))
    lam, V = eigendecompose(correlation_matrix(np.hstack([u, 2 * u]), np.ones(30)))
    with pytest.raises(PodError, match="numerical rank is 1"):
        compute_modes(np.hstack([u, 2 * u]), lam, V, 2, np.ones(30))


def test_modes_match_weighted_svd(rng):
    w = rng.uniform(0.1, 1.0, 100)
    S = rng.standard_normal((100, 20))
    modes, lam = pod(S, w)
    U, sig, _ = np.linalg.svd(np.sqrt(w)[:, None] * S, full_matrices=False)
    angles = sla.subspace_angles(np.sqrt(w)[:, None] * modes, U)
    assert np.max(angles) <= 1e-8
    total = np.sum(w[:, None] * S ** 2)
    assert lam.sum() == pytest.approx(total, rel=1e-10)
    np.testing.assert_allclose(lam, sig ** 2, rtol=1e-10)
    np.testing.assert_allclose(weighted_gram(modes, w), np.eye(20), atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 12))
def test_full_rank_reconstruction_and_energy(seed, n):
    r = np.random.default_rng(seed)
    w = r.uniform(0.1, 1.0, 60)
    S = r.standard_normal((60, n)) @ np.diag(r.uniform(0.1, 10, n))
    modes, lam = pod(S, w)
    a = projection_coefficients(S, modes, w)
    rec = modes @ a.T
    err = np.sqrt(np.sum(w[:, None] * (S - rec) ** 2, axis=0) / np.sum(w[:, None] * S ** 2, axis=0))
    assert err.max() <= 1e-8
    e = cumulative_energy(lam)
    assert np.all(np.diff(e) >= 0) and e[0] >= 0 and e[-1] == pytest.approx(1.0)


# ------------------------------------------------------------------ lifting
def test_lifting_of_whole_boundary_is_constant():
    g = rectangle(6, 5)
    bnd = FlowBoundary({s: "inlet" for s in g.patch_names}, inlet_direction=(1.0, 0.0),
                       scalar_bcs=[])
    from mixedrom.boundary import ScalarBC
    bnd.scalar_bcs = [ScalarBC(s, 0) for s in g.patch_names]
    phi, chi = build_lifting_functions(g, bnd)
    np.testing.assert_allclose(phi.sum(axis=1)[:g.n_cells], 1.0, atol=1e-10)
    assert chi is None


@pytest.mark.parametrize("make", [lambda: step_channel(16, 8), lambda: square_obstacle(24, 12)])
def test_lifting_traces_and_maximum_principle(make):
    g, bnd = make()
    phi, chi = build_lifting_functions(g, bnd)
    vmask = bnd.velocity_dirichlet_mask(g)
    for k, bc in enumerate(bnd.scalar_bcs):
        cells, trace = g.unpack_vector(phi[:, k])
        own = np.zeros(g.n_bfaces, dtype=bool)
        own[g.patch(bc.patch).faces] = True
        m = vmask[:, bc.comp]
        np.testing.assert_allclose(trace[m & own, bc.comp], 1.0, atol=1e-10)
        np.testing.assert_allclose(trace[m & ~own, bc.comp], 0.0, atol=1e-10)
        assert cells[:, bc.comp].min() >= -1e-12 and cells[:, bc.comp].max() <= 1 + 1e-12
        assert np.all(cells[:, 1 - bc.comp] == 0.0)
    pc, pt = g.unpack_scalar(chi)
    np.testing.assert_allclose(pt[bnd.pressure_dirichlet_mask(g)], 1.0, atol=1e-10)


def test_homogenize_identities(tiny_archive):
    ar = tiny_archive
    g, bnd = ar.grid, ar.boundary
    phi, chi = build_lifting_functions(g, bnd)
    U, P = homogenize(ar.S_u, ar.S_p, phi, chi, np.zeros_like(ar.U_bc), ar.n_times)
    np.testing.assert_array_equal(U, ar.S_u)
    col = phi @ ar.U_bc[0]
    U, _ = homogenize(np.column_stack([col] * ar.n_times), ar.S_p[:, :ar.n_times], phi, chi,
                      ar.U_bc[:1], ar.n_times)
    assert np.max(np.abs(U)) == 0.0
    U, _ = homogenize(ar.S_u, ar.S_p, phi, chi, ar.U_bc, ar.n_times)
    vmask = bnd.velocity_dirichlet_mask(g)
    for r in range(U.shape[1]):
        _, trace = g.unpack_vector(U[:, r])
        k = r // ar.n_times
        assert np.max(np.abs(trace[vmask])) <= 1e-8 * np.max(np.abs(ar.U_bc[k]))
    with pytest.raises(PodError, match="U_BC"):
        homogenize(ar.S_u, ar.S_p, phi, chi, np.zeros((2, 3)), ar.n_times)


# -------------------------------------------------------------- supremizers
def test_supremizer_of_linear_pressure_is_uniform():
    g = rectangle(8, 6, 0.5, 0.5)
    bnd = FlowBoundary({"left": "slip", "right": "slip", "bottom": "slip", "top": "slip"})
    chi = g.pack_scalar(g.x, g.bface_x)[:, None]
    s = supremizer_modes(chi, g, bnd)
    cells, _ = g.unpack_vector(s[:, 0])
    i, j = g.lattice_i, g.lattice_j
    inner = (i > 0) & (i < g.nx - 1) & (j > 0) & (j < g.ny - 1)
    np.testing.assert_allclose(cells[inner, 1], 0.0, atol=1e-12)
    np.testing.assert_allclose(cells[inner, 0], cells[inner, 0][0], rtol=1e-12)


def test_constant_pressure_mode_rejected():
    g, bnd = step_channel(16, 8)
    with pytest.raises(PodError, match="constant pressure"):
        supremizer_modes(np.ones((g.n_scalar_dofs, 1)), g, bnd)


def test_supremizer_pairing_positive(tiny_model):
    b = tiny_model.basis
    g = tiny_model.grid
    for i in range(b.n_s):
        chi, _ = g.unpack_scalar(b.pressure[:, i])
        s, sb = g.unpack_vector(b.supremizers[:, i])
        assert g.inner_product(chi, g.divergence(s, sb)) > 0.0


# --------------------------------------------------------- viscosity split
def test_mean_viscosity_split(rng, tiny_archive):
    ar = tiny_archive
    means, fl = mean_viscosity_fields(ar.S_nut, ar.n_samples, ar.n_times)
    blocks = fl.reshape(fl.shape[0], ar.n_samples, ar.n_times)
    assert np.max(np.abs(blocks.mean(axis=2))) <= 1e-12 * np.max(np.abs(ar.S_nut))
    rebuilt = (blocks + means[:, :, None]).reshape(fl.shape)
    np.testing.assert_allclose(rebuilt, ar.S_nut, rtol=0, atol=4 * np.finfo(float).eps * np.max(ar.S_nut))
    const = np.repeat(rng.random((10, 3)), 4, axis=1)
    _, fl = mean_viscosity_fields(const, 3, 4)
    assert np.all(fl == 0.0)


# -------------------------------------------------------------- full basis
def test_basis_is_orthonormal_and_reproduces_training_set(tiny_model, tiny_archive):
    b, g, ar = tiny_model.basis, tiny_model.grid, tiny_archive
    wv, ws = g.dof_weights(2), g.dof_weights(1)
    for Q, w in ((b.velocity, wv), (b.pressure, ws), (b.nut, ws)):
        np.testing.assert_allclose(weighted_gram(Q, w), np.eye(Q.shape[1]), atol=1e-10)
    for S, Q, w in ((ar.S_u, b.velocity, wv), (ar.S_p, b.pressure, ws), (ar.S_nut, b.nut, ws)):
        rec = Q @ projection_coefficients(S, Q, w).T
        err = np.sqrt(np.sum(w[:, None] * (S - rec) ** 2, axis=0) / np.sum(w[:, None] * S ** 2, axis=0))
        assert err.max() <= 1e-8
    assert b.ranks == {"u": 10, "p": 10, "nut": 10}


def test_supremizers_activate_divergence_block(tiny_model):
    P = tiny_model.rom.ops.P
    assert np.max(np.linalg.norm(P, axis=0)) > 0


def test_split_basis_counts(tiny_archive):
    b = build_basis(tiny_archive, nut_split=True)
    assert b.nut_mean.shape == (tiny_archive.grid.n_scalar_dofs, tiny_archive.n_samples)
    assert b.n_nut <= tiny_archive.n_snapshots - tiny_archive.n_samples
    with pytest.raises(PodError, match="N_S"):
        build_basis(tiny_archive, n_s=99)
    with pytest.raises(PodError, match="boundary mode"):
        build_basis(tiny_archive, bc_mode="magic")
