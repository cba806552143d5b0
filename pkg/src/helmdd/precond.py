"""Factorised coarse/local solves and the preconditioner family of additive
Schwarz variants: AS1, AS, RAS1, HRAS, ImpRAS1, ImpHRAS.

The hybrid kinds apply the residual projection P0 = I - A R0^T A_{eps,0}^{-1} R0
built from the system matrix A being solved (not its absorbed counterpart) and
the shifted coarse inverse; A and A_{eps,0} are complex symmetric, so the
transposed projection reuses the same solves.  Coarse or local solves
may be nested inner GMRES iterations, in which case the operator varies per
application and must sit under flexible outer GMRES.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .assembly import assemble_local_impedance
from .decomposition import (build_block_decomposition, build_coarse_interpolation,
                            build_decomposition)
from .mesh import ceil_snapped, layout_from_blocks, round_half_up

DENSE_SOLVE_CUTOFF = 200  # below this, dense LAPACK beats SuperLU call overhead

KINDS = ("AS1", "AS", "RAS1", "HRAS", "ImpRAS1", "ImpHRAS")
_IMPEDANCE_KINDS = ("ImpRAS1", "ImpHRAS")
_WEIGHTED_KINDS = ("RAS1", "HRAS", "ImpRAS1", "ImpHRAS")
_COARSE_KINDS = ("AS", "HRAS", "ImpHRAS")
_HYBRID_KINDS = ("HRAS", "ImpHRAS")


class SingularMatrixError(RuntimeError):
    """A coarse/local matrix was numerically singular (possible only at eps=0)."""


class DirectFactorization:
    """Reusable LU of a sparse complex matrix (dense LAPACK below a cutoff)."""

    flexible = False

    def __init__(self, matrix, dense_cutoff=DENSE_SOLVE_CUTOFF):
        matrix = sp.csc_matrix(matrix)
        if matrix.shape[0] != matrix.shape[1]:
            raise ValueError("matrix must be square")
        self.n = matrix.shape[0]
        self._dense = self.n <= dense_cutoff
        if self._dense:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                lu, piv = sla.lu_factor(matrix.toarray())
            d = np.abs(np.diag(lu))
            if self.n and (np.min(d) == 0.0 or not np.all(np.isfinite(d))):
                raise SingularMatrixError("zero pivot in dense LU")
            self._lu = (lu, piv)
            self.fill_nnz = self.n * self.n
        else:
            try:
                self._splu = spla.splu(matrix)
            except RuntimeError as exc:  # "Factor is exactly singular"
                raise SingularMatrixError(str(exc)) from exc
            self.fill_nnz = self._splu.L.nnz + self._splu.U.nnz

    def solve(self, rhs):
        if self._dense:
            return sla.lu_solve(self._lu, rhs)
        return self._splu.solve(rhs)


def factorize(matrix):
    """Factorize a complex sparse matrix for repeated solves."""
    return DirectFactorization(matrix)


class NestedSolver:
    """Inexact solve: right-preconditioned GMRES run to a loose tolerance.

    Divergence at the iteration cap is recorded as a failure status on the
    solver (the current iterate is still returned), never raised.
    """

    flexible = True

    def __init__(self, matrix, inner_precond, inner_tol=0.5, inner_max_iters=200):
        self.matrix = matrix.tocsr() if sp.issparse(matrix) else matrix
        self.inner_precond = inner_precond
        self.inner_tol = float(inner_tol)
        self.inner_max_iters = int(inner_max_iters)
        self.n = self.matrix.shape[0]
        self.inner_counts = []
        self.failures = 0

    def solve(self, rhs):
        from .krylov import KrylovConfig, gmres

        cfg = KrylovConfig(variant="gmres", side="right", rel_tol=self.inner_tol,
                           max_iters=self.inner_max_iters)
        x, rep = gmres(self.matrix, self.inner_precond, rhs, cfg)
        self.inner_counts.append(rep.iterations)
        if not rep.converged:
            self.failures += 1
        return x


class LocalSolves:
    """Per-subdomain solves plus plain (AS) or RAS-weighted recombination.

    Each entry holds the solve index set (interior nodes for Dirichlet local
    problems, closed nodes for impedance ones), a solver, and the owned
    nodes/weights of the weighted combination.  Recombination always runs in
    subdomain order, so results are deterministic even when the solves
    themselves run on a thread pool.
    """

    def __init__(self, n, threads=1):
        self.n = n
        self.threads = threads
        self.solvers = []
        self.solve_sets = []
        self.own_global = []
        self.own_pos = []
        self.own_weights = []

    def add(self, solver, solve_set, own_global, own_pos, own_weights):
        self.solvers.append(solver)
        self.solve_sets.append(solve_set)
        self.own_global.append(own_global)
        self.own_pos.append(own_pos)
        self.own_weights.append(own_weights)

    @property
    def flexible(self):
        return any(s.flexible for s in self.solvers)

    def _solve_all(self, v):
        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(lambda t: t[0].solve(v[t[1]]),
                                     zip(self.solvers, self.solve_sets)))
        return [s.solve(v[idx]) for s, idx in zip(self.solvers, self.solve_sets)]

    def apply_weighted(self, v):
        out = np.zeros(self.n, dtype=np.complex128)
        for i, u in enumerate(self._solve_all(v)):
            _kernels.weighted_scatter_add(out, self.own_global[i], self.own_weights[i],
                                          np.ascontiguousarray(u), self.own_pos[i])
        return out

    def apply_plain(self, v):
        out = np.zeros(self.n, dtype=np.complex128)
        for i, u in enumerate(self._solve_all(v)):
            out[self.solve_sets[i]] += u
        return out

    def inner_counts(self):
        out = []
        for s in self.solvers:
            if isinstance(s, NestedSolver):
                out.extend(s.inner_counts)
        return out

    def inner_failures(self):
        return sum(s.failures for s in self.solvers if isinstance(s, NestedSolver))


class CoarseSolve:
    """R0^T A_{eps,0}^{-1} R0 with a direct or nested coarse solver."""

    def __init__(self, coarse_interp, solver):
        self.R0 = coarse_interp
        self.R0T = coarse_interp.T.tocsr()
        self.solver = solver

    @property
    def flexible(self):
        return self.solver.flexible

    def apply(self, v):
        return self.R0T @ self.solver.solve(self.R0 @ v)

    def inner_counts(self):
        return list(self.solver.inner_counts) if isinstance(self.solver, NestedSolver) else []

    def inner_failures(self):
        return self.solver.failures if isinstance(self.solver, NestedSolver) else 0


class PreconditionerOperator:
    """Linear-operator contract: apply(v) performs one preconditioner action."""

    def __init__(self, kind, n, locals_, coarse=None, system_matrix=None,
                 coarse_enabled=True):
        if kind not in KINDS:
            raise ValueError(f"unknown preconditioner kind {kind!r}")
        if kind in _COARSE_KINDS and coarse is None:
            raise ValueError(f"{kind} needs a coarse solve")
        if kind in _HYBRID_KINDS and system_matrix is None:
            raise ValueError(f"{kind} needs the system matrix for the projection")
        self.kind = kind
        self.n = n
        self.locals_ = locals_
        self.coarse = coarse
        self.system_matrix = system_matrix
        self.coarse_enabled = coarse_enabled

    @property
    def flexible(self):
        return self.locals_.flexible or (self.coarse is not None and self.coarse.flexible)

    @property
    def shape(self):
        return (self.n, self.n)

    def apply(self, v):
        v = np.asarray(v, dtype=np.complex128)
        if self.kind == "AS1":
            return self.locals_.apply_plain(v)
        if self.kind == "AS":
            return self.coarse.apply(v) + self.locals_.apply_plain(v)
        if self.kind in ("RAS1", "ImpRAS1") or not self.coarse_enabled:
            return self.locals_.apply_weighted(v)
        # hybrid: z + P0^T B_local P0 v, with A^T = A and A_{eps,0}^T = A_{eps,0}
        z = self.coarse.apply(v)
        t = self.locals_.apply_weighted(v - self.system_matrix @ z)
        return z + t - self.coarse.apply(self.system_matrix @ t)

    def __call__(self, v):
        return self.apply(v)

    def inner_counts(self):
        out = self.locals_.inner_counts()
        if self.coarse is not None:
            out = out + self.coarse.inner_counts()
        return out

    def inner_failures(self):
        fails = self.locals_.inner_failures()
        if self.coarse is not None:
            fails += self.coarse.inner_failures()
        return fails

    def reset_stats(self):
        for s in self.locals_.solvers:
            if isinstance(s, NestedSolver):
                s.inner_counts = []
                s.failures = 0
        if self.coarse is not None and isinstance(self.coarse.solver, NestedSolver):
            self.coarse.solver.inner_counts = []
            self.coarse.solver.failures = 0

    def to_dense(self):
        """Dense action matrix (exact solves only), for desk-scale analysis."""
        if self.flexible:
            raise ValueError("nested preconditioners have no fixed matrix")
        n = self.n
        loc = np.zeros((n, n), dtype=np.complex128)
        weighted = self.kind in _WEIGHTED_KINDS
        for i, solver in enumerate(self.locals_.solvers):
            idx = self.locals_.solve_sets[i]
            inv = solver.solve(np.eye(len(idx), dtype=np.complex128))
            if weighted:
                og = self.locals_.own_global[i]
                loc[np.ix_(og, idx)] += self.locals_.own_weights[i][:, None] \
                    * inv[self.locals_.own_pos[i], :]
            else:
                loc[np.ix_(idx, idx)] += inv
        if self.kind in ("AS1", "RAS1", "ImpRAS1") or not self.coarse_enabled:
            return loc
        r0 = self.coarse.R0.toarray()
        c0 = r0.T @ self.coarse.solver.solve(r0)
        if self.kind == "AS":
            return c0 + loc
        p0 = np.eye(n) - self.system_matrix @ c0
        return c0 + p0.T @ loc @ p0


def _own_positions(solve_set, own_nodes, own_w):
    """Positions of owned nodes inside the solve set; owners outside the set
    (possible only in the degenerate no-overlap case) contribute nothing."""
    if len(solve_set) == 0:
        return own_nodes[:0], np.zeros(0, dtype=np.int64), own_w[:0]
    pos = np.searchsorted(solve_set, own_nodes)
    inside = solve_set[np.minimum(pos, len(solve_set) - 1)] == own_nodes
    return own_nodes[inside], pos[inside], own_w[inside]


def coarse_matrix(R0, A):
    """Galerkin coarse operator A_{eps,0} = R0 A_eps R0^T."""
    A0 = (R0 @ (A @ R0.T)).tocsr()
    A0.sum_duplicates()
    A0.sort_indices()
    return A0


def build_preconditioner(kind, *, mesh, decomp, A_prec, coeff_prec,
                         system_matrix=None, nested_coarse=None, nested_local=None,
                         coarse_enabled=True, threads=1):
    """Assemble and factorize everything one preconditioner kind needs.

    nested_coarse: a NestedSolver for the coarse problem (see
    build_nested_coarse_solver) replacing the direct coarse factorization.
    nested_local: dict of _nested_local_solver keywords (must include k)
    making every local impedance solve an inner GMRES preconditioned by a
    block ImpRAS1 on the subdomain.
    """
    impedance = kind in _IMPEDANCE_KINDS
    locals_ = LocalSolves(mesh.n, threads=threads)
    for sub in decomp.subdomains:
        solve_set = sub.closed_nodes if impedance else sub.interior_nodes
        if len(solve_set) == 0:
            continue
        if impedance:
            mat = assemble_local_impedance(mesh, sub.element_ids, coeff_prec)
            if nested_local is not None:
                solver = _nested_local_solver(mesh, sub, mat, coeff_prec, **nested_local)
            else:
                solver = DirectFactorization(mat)
        else:
            solver = DirectFactorization(A_prec[solve_set, :][:, solve_set])
        own_nodes, own_w = decomp.ras.by_subdomain[sub.id]
        og, op, ow = _own_positions(solve_set, own_nodes, own_w)
        locals_.add(solver, solve_set, og, op, ow)

    coarse = None
    if kind in _COARSE_KINDS:
        if decomp.coarse_interp is None:
            raise ValueError("decomposition carries no coarse interpolation")
        if nested_coarse is not None:
            coarse = CoarseSolve(decomp.coarse_interp, nested_coarse)
        else:
            A0 = coarse_matrix(decomp.coarse_interp, A_prec)
            coarse = CoarseSolve(decomp.coarse_interp, DirectFactorization(A0))
    return PreconditionerOperator(kind, mesh.n, locals_, coarse=coarse,
                                  system_matrix=system_matrix,
                                  coarse_enabled=coarse_enabled)


def make_nested_solver(matrix, inner_precond, inner_tol=0.5, inner_max_iters=200):
    """Wrap a matrix and an inner preconditioner into an inexact solver."""
    return NestedSolver(matrix, inner_precond, inner_tol, inner_max_iters)


def build_nested_coarse_solver(mesh, layout, A_prec, coeff_prec, k, *,
                               alpha_inner=0.5, inner_tol=0.5, inner_max_iters=200,
                               coarse_interp=None, threads=1):
    """Inexact coarse solve: the coarse-grid problem (Galerkin matrix), solved
    by GMRES with a one-level ImpRAS1 preconditioner re-discretised on the
    coarse triangulation, over a second-level decomposition of diameter
    ~k^-alpha_inner.  Returns (NestedSolver, A0)."""
    R0 = coarse_interp if coarse_interp is not None else build_coarse_interpolation(mesh, layout)
    A0 = coarse_matrix(R0, A_prec)
    cmesh = layout.as_mesh()
    ccoeff = coeff_prec.on_mesh(cmesh)
    Mi = min(ceil_snapped(k ** alpha_inner), cmesh.m)
    cdecomp = build_decomposition(cmesh, layout_from_blocks(cmesh, Mi))
    inner = build_preconditioner("ImpRAS1", mesh=cmesh, decomp=cdecomp, A_prec=A0,
                                 coeff_prec=ccoeff, threads=threads)
    return make_nested_solver(A0, inner, inner_tol, inner_max_iters), A0


def _nested_local_solver(mesh, sub, imp_matrix, coeff_prec, *, k, alpha_inner=0.8,
                         tol=0.5, max_iters=200):
    """Inexact local impedance solve: inner GMRES on the subdomain system,
    preconditioned by ImpRAS1 over blocks of diameter ~k^-alpha_inner."""
    x0, x1, y0, y1 = sub.cell_rect
    wx = float(mesh.xs[x1] - mesh.xs[x0])
    wy = float(mesh.ys[y1] - mesh.ys[y0])
    nbx = max(1, min(round_half_up(wx * k ** alpha_inner), x1 - x0))
    nby = max(1, min(round_half_up(wy * k ** alpha_inner), y1 - y0))
    bdec = build_block_decomposition(mesh, sub.cell_rect, nbx, nby)
    nloc = len(sub.closed_nodes)
    locals_ = LocalSolves(nloc)
    for blk in bdec.subdomains:
        mat = assemble_local_impedance(mesh, blk.element_ids, coeff_prec)
        solve_set = np.searchsorted(sub.closed_nodes, blk.closed_nodes)
        own_nodes, own_w = bdec.ras.by_subdomain[blk.id]
        own_local = np.searchsorted(sub.closed_nodes, own_nodes)
        og, op, ow = _own_positions(solve_set, own_local, own_w)
        locals_.add(DirectFactorization(mat), solve_set, og, op, ow)
    inner = PreconditionerOperator("ImpRAS1", nloc, locals_)
    return make_nested_solver(imp_matrix, inner, tol, max_iters)
