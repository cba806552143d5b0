"""P1 assembly of the (possibly absorbed) Helmholtz system, the energy matrix,
and impedance subdomain matrices.

All matrices are complex CSR with sorted indices and summed duplicates.  The
weak form of -Delta u - shift*u = f with du/dn - i*(omega/c)*u = g on the
boundary gives

    A = S - sum_e shift(e) * M_e - i * B,

where S is the stiffness matrix, M_e the element mass blocks, and B the
boundary mass matrix weighted per edge by omega/c of the adjacent element.
No absorption ever enters the boundary term.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.io import mmwrite

from . import _kernels
from .mesh import WaveSpeedField


@dataclass(frozen=True)
class AssemblyCoefficients:
    """Frequency, wave speed, and the absorption shift for one assembly.

    shift_mode "additive_eps" uses shift = k^2 + i*eps with k = omega/c and
    requires a constant wave speed; "multiplicative_rho" uses
    shift = (1 + i*rho) * (omega/c)^2 per element.
    """

    omega: float
    wavespeed: WaveSpeedField
    shift_mode: str = "additive_eps"
    shift_value: float = 0.0

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError("omega must be positive")
        if self.shift_mode == "additive_eps":
            v = self.wavespeed.values
            if np.any(v != v[0]):
                raise ValueError("additive_eps shift requires constant wave speed")
        elif self.shift_mode == "multiplicative_rho":
            if self.shift_value < 0:
                raise ValueError("rho must be nonnegative")
        else:
            raise ValueError(f"unknown shift mode {self.shift_mode!r}")

    @property
    def wavenumber(self):
        return self.omega / float(self.wavespeed.values[0])

    def element_shifts(self, mesh):
        v = self.wavespeed.values
        if len(v) != len(mesh.elements):
            raise ValueError("wave-speed field does not match the mesh")
        if self.shift_mode == "additive_eps":
            k = self.wavenumber
            return np.full(len(v), k * k + 1j * self.shift_value, dtype=np.complex128)
        return (1.0 + 1j * self.shift_value) * (self.omega / v) ** 2

    def edge_impedance(self, adjacent_c):
        # per-edge omega/c from the adjacent element's speed; never absorbed
        return self.omega / np.asarray(adjacent_c, dtype=float)

    def on_mesh(self, mesh):
        """Same coefficients with the wave speed re-sampled on another mesh."""
        return AssemblyCoefficients(self.omega, self.wavespeed.sample_on(mesh),
                                    self.shift_mode, self.shift_value)


def _to_csr(rows, cols, vals, n):
    a = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    a.sum_duplicates()
    a.sort_indices()
    return a


def assemble_system(mesh, coeff):
    """A_eps over all mesh nodes; complex symmetric (unconjugated)."""
    shifts = coeff.element_shifts(mesh)
    r, c, v = _kernels.element_system_triplets(mesh.nodes, mesh.elements, shifts)
    adj_c = coeff.wavespeed.values[mesh.boundary_edge_elements]
    er, ec, ev = _kernels.edge_mass_triplets(mesh.nodes, mesh.boundary_edge_nodes,
                                             coeff.edge_impedance(adj_c))
    return _to_csr(np.concatenate([r, er]), np.concatenate([c, ec]),
                   np.concatenate([v, -1j * ev]), mesh.n)


def assemble_mass_matrix(mesh):
    """Consistent P1 mass matrix (real)."""
    r, c, v = _kernels.element_system_triplets(
        mesh.nodes, mesh.elements, np.full(len(mesh.elements), -1.0, np.complex128))
    s = _kernels.element_system_triplets(
        mesh.nodes, mesh.elements, np.zeros(len(mesh.elements), np.complex128))
    return _to_csr(r, c, (v - s[2]).real, mesh.n)


def assemble_energy_matrix(mesh, k):
    """D_k = S + k^2 M, the energy (k-weighted H^1) inner-product matrix."""
    if k <= 0:
        raise ValueError("wavenumber must be positive")
    r, c, v = _kernels.element_system_triplets(
        mesh.nodes, mesh.elements, np.full(len(mesh.elements), -(k * k), np.complex128))
    return _to_csr(r, c, v.real, mesh.n)


def closed_node_set(mesh, element_ids):
    """Sorted global node ids of the closed subdomain spanned by the elements."""
    return np.unique(mesh.elements[np.asarray(element_ids)])


def subdomain_boundary_edges(mesh, element_ids):
    """Boundary edges of a union of elements: edges incident to exactly one
    element.  Returns (edges (nb,2) global node pairs, adjacent element ids)."""
    element_ids = np.asarray(element_ids)
    tris = mesh.elements[element_ids]
    edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    key = np.minimum(edges[:, 0], edges[:, 1]) * mesh.n + np.maximum(edges[:, 0], edges[:, 1])
    _, first, counts = np.unique(key, return_index=True, return_counts=True)
    onb = first[counts == 1]
    owner = element_ids[onb % len(element_ids)]
    return edges[onb], owner


def assemble_local_impedance(mesh, element_ids, coeff):
    """Subdomain matrix over the closed subdomain's nodes with the impedance
    term on the entire subdomain boundary (artificial interior boundary and
    any part on the global boundary alike)."""
    element_ids = np.asarray(element_ids)
    if element_ids.size == 0:
        raise ValueError("empty subdomain")
    nodes_g = closed_node_set(mesh, element_ids)
    shifts = coeff.element_shifts(mesh)[element_ids]
    r, c, v = _kernels.element_system_triplets(mesh.nodes, mesh.elements[element_ids], shifts)
    edges, owners = subdomain_boundary_edges(mesh, element_ids)
    er, ec, ev = _kernels.edge_mass_triplets(
        mesh.nodes, edges, coeff.edge_impedance(coeff.wavespeed.values[owners]))
    rows = np.searchsorted(nodes_g, np.concatenate([r, er]))
    cols = np.searchsorted(nodes_g, np.concatenate([c, ec]))
    return _to_csr(rows, cols, np.concatenate([v, -1j * ev]), len(nodes_g))


def write_matrix_market(matrix, target):
    """Matrix Market coordinate dump (complex general, 1-based)."""
    mmwrite(target, sp.coo_matrix(matrix), field="complex", symmetry="general")
