"""Brute-force reference implementations used as independent test oracles.

Everything here is written field by field (or face by face) with plain
loops, so it shares no vectorization with the assembly code under test.
"""
import numpy as np


def random_vector_modes(grid, rng, n):
    return np.column_stack([grid.pack_vector(rng.standard_normal((grid.n_cells, 2)),
                                             rng.standard_normal((grid.n_bfaces, 2)))
                            for _ in range(n)])


def random_scalar_modes(grid, rng, n):
    return np.column_stack([grid.pack_scalar(rng.standard_normal(grid.n_cells),
                                             rng.standard_normal(grid.n_bfaces))
                            for _ in range(n)])


def volume_sum(grid, f, g):
    """``sum_c V_c f_c . g_c`` by an explicit loop over cells."""
    total = 0.0
    for c in range(grid.n_cells):
        total += grid.cell_volumes[c] * float(np.dot(np.atleast_1d(f[c]), np.atleast_1d(g[c])))
    return total


def operator_entries(grid, V, X, ETA, ETA_mean):
    """Every Galerkin entry by applying the field operators mode by mode."""
    u = [grid.unpack_vector(V[:, i]) for i in range(V.shape[1])]
    x = [grid.unpack_scalar(X[:, i]) for i in range(X.shape[1])]
    e = [grid.unpack_scalar(ETA[:, i]) for i in range(ETA.shape[1])]
    em = [grid.unpack_scalar(ETA_mean[:, i]) for i in range(ETA_mean.shape[1])]
    n, npr = len(u), len(x)
    out = {k: np.zeros(s) for k, s in (
        ("M", (n, n)), ("B", (n, n)), ("BT", (n, n)), ("H", (n, npr)), ("P", (npr, n)),
        ("C", (n, n, n)), ("CT1", (len(e), n, n)), ("CT2", (len(e), n, n)),
        ("CT1_mean", (len(em), n, n)), ("CT2_mean", (len(em), n, n)))}
    for i in range(n):
        ui = u[i][0]
        for j in range(n):
            uj, ujb = u[j]
            lap = grid.laplacian(uj, None, ujb)
            out["M"][i, j] = volume_sum(grid, ui, uj)
            out["B"][i, j] = volume_sum(grid, ui, lap)
            out["BT"][i, j] = volume_sum(grid, ui, grid.div_grad_transpose(uj, ujb))
            for k in range(n):
                w = grid.convection(uj, ujb, u[k][0], u[k][1])
                out["C"][i, j, k] = volume_sum(grid, ui, w)
            for name, fam in (("CT1", e), ("CT1_mean", em)):
                for l, (ec, _) in enumerate(fam):
                    out[name][l, i, j] = volume_sum(grid, ui, ec[:, None] * lap)
            for name, fam in (("CT2", e), ("CT2_mean", em)):
                for l, (ec, eb) in enumerate(fam):
                    out[name][l, i, j] = volume_sum(grid, ui, grid.div_grad_transpose(uj, ujb, ec, eb))
        for j in range(npr):
            out["H"][i, j] = volume_sum(grid, ui, grid.gradient(*x[j]))
            out["P"][j, i] = volume_sum(grid, x[j][0], grid.divergence(*u[i]))
    return out


def penalty_entries(grid, V, scalar_bcs):
    """``D[k, i]`` and ``E[k, i, j]`` by looping over patch faces."""
    n = V.shape[1]
    traces = [grid.unpack_vector(V[:, i])[1] for i in range(n)]
    D = np.zeros((len(scalar_bcs), n))
    E = np.zeros((len(scalar_bcs), n, n))
    for k, bc in enumerate(scalar_bcs):
        for f in grid.patch(bc.patch).faces:
            s = grid.bface_area[f]
            for i in range(n):
                D[k, i] += s * traces[i][f, bc.comp]
                for j in range(n):
                    E[k, i, j] += s * np.dot(traces[i][f], traces[j][f])
    return D, E


def surface_force_loop(grid, u, ub, p_trace, patch, mu, normal_sign):
    """``int (2 mu grad(u) n - p n) ds`` face by face.

    The normal derivative is one-sided to the trace; tangential derivatives
    come from the adjacent cell's Gauss gradient.
    """
    g = grid.vector_gradient(u, ub)
    F = np.zeros(2)
    for f in grid.patch(patch).faces:
        c, ax, sgn = grid.bface_cell[f], grid.bface_axis[f], grid.bface_sign[f]
        n = np.zeros(2)
        n[ax] = normal_sign * sgn
        T = g[c].copy()                      # T[m, k] = d_m u_k
        T[ax, :] = sgn * (ub[f] - u[c]) / grid.bface_dist[f]
        gn = T.T @ n                         # (grad u) n
        F += grid.bface_area[f] * (2.0 * mu * gn - p_trace[f] * n)
    return F
