"""Independent reference implementations used to compute expected values.

Everything here recomputes results by a different route than the package:
quadrature-based assembly (edge-midpoint rule on triangles, Gauss rules on
edges) instead of closed-form blocks, explicit 0/1 restriction matrices and
dense inverses with true transposes for the preconditioners, per-triangle
affine solves for the coarse hats, and an orthonormalised power basis plus
least squares for GMRES residuals.
"""

import numpy as np

_REF_GRADS = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
_MIDPOINTS = np.array([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])
_GAUSS2 = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))


def _tri_quadrature_blocks(p):
    """Stiffness and mass blocks of one triangle via quadrature."""
    J = np.column_stack([p[1] - p[0], p[2] - p[0]])
    area = 0.5 * abs(np.linalg.det(J))
    grads = np.linalg.solve(J.T, _REF_GRADS.T).T
    S = area * grads @ grads.T
    phi = np.column_stack([1.0 - _MIDPOINTS.sum(axis=1), _MIDPOINTS[:, 0], _MIDPOINTS[:, 1]])
    M = (area / 3.0) * phi.T @ phi
    return S, M


def _edge_block(p0, p1):
    L = np.linalg.norm(p1 - p0)
    B = np.zeros((2, 2))
    for s in _GAUSS2:
        phi = np.array([1.0 - s, s])
        B += (L / 2.0) * np.outer(phi, phi)
    return B


def oracle_shifts(mesh, coeff):
    c = coeff.wavespeed.values
    if coeff.shift_mode == "additive_eps":
        k = coeff.omega / c[0]
        return np.full(len(c), k * k + 1j * coeff.shift_value)
    return (1.0 + 1j * coeff.shift_value) * (coeff.omega / c) ** 2


def _boundary_edges_by_incidence(elements):
    """Edges incident to exactly one of the given triangles, with owners."""
    seen = {}
    for t, tri in enumerate(elements):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            if key in seen:
                seen[key] = None
            else:
                seen[key] = (a, b, t)
    return [v for v in seen.values() if v is not None]


def dense_system(mesh, coeff, element_ids=None, impedance_everywhere=False):
    """Quadrature-assembled system matrix.  With element_ids it assembles the
    local subdomain matrix over the closed subdomain nodes; with
    impedance_everywhere the boundary term covers the whole subdomain
    boundary (from edge incidence), else only the global boundary."""
    if element_ids is None:
        element_ids = np.arange(len(mesh.elements))
    element_ids = np.asarray(element_ids)
    tris = mesh.elements[element_ids]
    nodes_g = np.unique(tris)
    remap = {g: l for l, g in enumerate(nodes_g)}
    nl = len(nodes_g)
    A = np.zeros((nl, nl), dtype=complex)
    shifts = oracle_shifts(mesh, coeff)[element_ids]
    for tri, shift in zip(tris, shifts):
        S, M = _tri_quadrature_blocks(mesh.nodes[tri])
        loc = [remap[g] for g in tri]
        A[np.ix_(loc, loc)] += S - shift * M

    if impedance_everywhere:
        edges = _boundary_edges_by_incidence(tris)
        for a, b, t in edges:
            c_adj = coeff.wavespeed.values[element_ids[t]]
            B = _edge_block(mesh.nodes[a], mesh.nodes[b])
            loc = [remap[a], remap[b]]
            A[np.ix_(loc, loc)] += -1j * (coeff.omega / c_adj) * B
    else:
        for (a, b), owner in zip(mesh.boundary_edge_nodes, mesh.boundary_edge_elements):
            if a not in remap or b not in remap:
                continue
            c_adj = coeff.wavespeed.values[owner]
            B = _edge_block(mesh.nodes[a], mesh.nodes[b])
            loc = [remap[a], remap[b]]
            A[np.ix_(loc, loc)] += -1j * (coeff.omega / c_adj) * B
    return A, nodes_g


def dense_energy(mesh, k):
    n = mesh.n
    D = np.zeros((n, n))
    for tri in mesh.elements:
        S, M = _tri_quadrature_blocks(mesh.nodes[tri])
        D[np.ix_(tri, tri)] += S + k * k * M
    return D


def dense_coarse_interp(mesh, layout):
    """R0 by locating each fine node in a coarse triangle and solving the
    3x3 affine system for the hat values."""
    cmesh = layout.as_mesh()
    nc = cmesh.n
    R0 = np.zeros((nc, mesh.n))
    assigned = np.zeros(mesh.n, dtype=bool)
    for tri in cmesh.elements:
        p = cmesh.nodes[tri]
        T = np.vstack([p.T, np.ones(3)])  # rows x, y, 1
        lam = np.linalg.solve(T, np.vstack([mesh.nodes.T, np.ones(mesh.n)]))
        inside = np.all(lam >= -1e-12, axis=0) & ~assigned
        for i in range(3):
            R0[tri[i], inside] = np.clip(lam[i, inside], 0.0, 1.0)
        assigned |= inside
    assert assigned.all()
    return R0


def _restriction(index_set, n):
    R = np.zeros((len(index_set), n))
    R[np.arange(len(index_set)), index_set] = 1.0
    return R


def _ras_diag(decomp, sub_id, n):
    W = np.zeros(n)
    for j in range(n):
        subs, w = decomp.ras.owners(j)
        for s, wt in zip(subs, w):
            if s == sub_id:
                W[j] = wt
    return np.diag(W)


def dense_preconditioner(kind, mesh, decomp, A_sys, A_prec, coeff_prec):
    """Dense action matrix of each preconditioner straight from its formula."""
    n = mesh.n
    dense_Aprec = A_prec.toarray() if hasattr(A_prec, "toarray") else np.asarray(A_prec)
    dense_Asys = A_sys.toarray() if hasattr(A_sys, "toarray") else np.asarray(A_sys)
    impedance = kind in ("ImpRAS1", "ImpHRAS")
    weighted = kind in ("RAS1", "HRAS", "ImpRAS1", "ImpHRAS")

    B_loc = np.zeros((n, n), dtype=complex)
    for sub in decomp.subdomains:
        if impedance:
            A_l, nodes = dense_system(mesh, coeff_prec, sub.element_ids,
                                      impedance_everywhere=True)
            R = _restriction(nodes, n)
        else:
            idx = sub.interior_nodes
            if len(idx) == 0:
                continue
            R = _restriction(idx, n)
            A_l = R @ dense_Aprec @ R.T
        term = R.T @ np.linalg.inv(A_l) @ R
        if weighted:
            term = _ras_diag(decomp, sub.id, n) @ term
        B_loc += term
    if kind in ("AS1", "RAS1", "ImpRAS1"):
        return B_loc

    R0 = dense_coarse_interp(mesh, decomp.layout)
    A0 = R0 @ dense_Aprec @ R0.T
    C0 = R0.T @ np.linalg.inv(A0) @ R0
    if kind == "AS":
        return C0 + B_loc
    P0 = np.eye(n) - dense_Asys @ C0
    return C0 + P0.T @ B_loc @ P0


def gmres_residual_oracle(C, b, m_max):
    """Minimal-residual norms over growing Krylov spaces, via a twice-
    orthonormalised power basis and dense least squares."""
    n = len(b)
    Q = np.zeros((n, m_max), dtype=complex)
    res = []
    v = b.astype(complex)
    for m in range(m_max):
        for _ in range(2):
            v = v - Q[:, :m] @ (Q[:, :m].conj().T @ v)
        nv = np.linalg.norm(v)
        if nv < 1e-13 * np.linalg.norm(b):
            break
        Q[:, m] = v / nv
        CQ = C @ Q[:, :m + 1]
        y, *_ = np.linalg.lstsq(CQ, b, rcond=None)
        res.append(np.linalg.norm(b - CQ @ y))
        v = C @ Q[:, m]
    return np.array(res) / np.linalg.norm(b)
