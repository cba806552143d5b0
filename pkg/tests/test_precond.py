import numpy as np
import pytest
import scipy.sparse as sp

from helmdd.assembly import AssemblyCoefficients, assemble_system
from helmdd.decomposition import build_decomposition
from helmdd.krylov import KrylovConfig, fgmres, gmres
from helmdd.mesh import build_fine_mesh, build_wavespeed, layout_from_blocks
from helmdd.precond import (KINDS, DirectFactorization, SingularMatrixError,
                            build_nested_coarse_solver, build_preconditioner,
                            coarse_matrix, factorize, make_nested_solver)

from oracles import dense_preconditioner


def setup_problem(m, M, k=5.0, eps=None, scenario="constant", c_star=1.0):
    mesh = build_fine_mesh(1, "explicit", m=m)
    ws = build_wavespeed(mesh, scenario, c_star=c_star)
    if scenario == "constant":
        coeff0 = AssemblyCoefficients(omega=k, wavespeed=ws, shift_mode="additive_eps",
                                      shift_value=0.0)
        coeffp = AssemblyCoefficients(omega=k, wavespeed=ws, shift_mode="additive_eps",
                                      shift_value=k if eps is None else eps)
    else:
        coeff0 = AssemblyCoefficients(omega=k, wavespeed=ws,
                                      shift_mode="multiplicative_rho", shift_value=0.0)
        coeffp = AssemblyCoefficients(omega=k, wavespeed=ws,
                                      shift_mode="multiplicative_rho",
                                      shift_value=0.5 if eps is None else eps)
    A_sys = assemble_system(mesh, coeff0)
    A_prec = assemble_system(mesh, coeffp)
    layout = layout_from_blocks(mesh, M)
    decomp = build_decomposition(mesh, layout)
    return mesh, decomp, A_sys, A_prec, coeffp


def test_factorize_identity_and_permutation():
    eye = sp.identity(5, format="csr", dtype=complex)
    f = factorize(eye)
    rhs = np.arange(5.0) + 1j
    assert np.allclose(f.solve(rhs), rhs, atol=1e-14)
    perm = sp.csr_matrix(np.array([[0, 1], [1, 0]], dtype=complex))
    f2 = factorize(perm)
    assert np.allclose(f2.solve(np.array([1.0, 2.0])), [2.0, 1.0], atol=1e-14)


def test_factorize_matches_dense_lu():
    rng = np.random.default_rng(1)
    A = sp.random(50, 50, density=0.2, random_state=1, dtype=float).toarray()
    A = A + 1j * rng.standard_normal((50, 50)) * (A != 0) + 5 * np.eye(50)
    f = factorize(sp.csr_matrix(A))
    b = rng.standard_normal(50) + 1j * rng.standard_normal(50)
    x = f.solve(b)
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) < 1e-10
    assert np.linalg.norm(x - np.linalg.solve(A, b)) / np.linalg.norm(x) < 1e-10
    assert f.fill_nnz > 0


def test_factorize_singular_raises():
    with pytest.raises(SingularMatrixError):
        factorize(sp.csr_matrix(np.zeros((3, 3), dtype=complex)))
    big = sp.identity(300, format="csr", dtype=complex).tolil()
    big[7, 7] = 0.0
    with pytest.raises(SingularMatrixError):
        factorize(big.tocsr())


def test_factorization_well_conditioned_contract():
    mesh, decomp, A_sys, A_prec, coeff = setup_problem(8, 2)
    f = factorize(A_prec)
    rng = np.random.default_rng(0)
    b = rng.standard_normal(mesh.n) + 1j * rng.standard_normal(mesh.n)
    x = f.solve(b)
    assert np.linalg.norm(A_prec @ x - b) / np.linalg.norm(b) < 1e-10


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("setup", [
    dict(m=8, M=2, k=5.0, eps=5.0),
    dict(m=6, M=2, k=4.0, scenario="centered-square", c_star=1.5),
])
def test_dense_oracle_equivalence(kind, setup):
    mesh, decomp, A_sys, A_prec, coeff = setup_problem(**setup)
    P = build_preconditioner(kind, mesh=mesh, decomp=decomp, A_prec=A_prec,
                             coeff_prec=coeff, system_matrix=A_sys)
    Bd = dense_preconditioner(kind, mesh, decomp, A_sys, A_prec, coeff)
    rng = np.random.default_rng(42)
    for _ in range(5):
        v = rng.standard_normal(mesh.n) + 1j * rng.standard_normal(mesh.n)
        got = P.apply(v)
        want = Bd @ v
        assert np.linalg.norm(got - want) / np.linalg.norm(want) < 1e-10
    # and the densified operator agrees entrywise
    assert np.abs(P.to_dense() - Bd).max() < 1e-10 * np.abs(Bd).max()


@pytest.mark.parametrize("kind", KINDS)
def test_linearity(kind):
    mesh, decomp, A_sys, A_prec, coeff = setup_problem(8, 2)
    P = build_preconditioner(kind, mesh=mesh, decomp=decomp, A_prec=A_prec,
                             coeff_prec=coeff, system_matrix=A_sys)
    rng = np.random.default_rng(7)
    u = rng.standard_normal(mesh.n) + 1j * rng.standard_normal(mesh.n)
    v = rng.standard_normal(mesh.n) + 1j * rng.standard_normal(mesh.n)
    a, b = 1.3 - 0.2j, -0.7 + 2.1j
    lhs = P.apply(a * u + b * v)
    rhs = a * P.apply(u) + b * P.apply(v)
    assert np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs) < 1e-12
    assert np.linalg.norm(P.apply(np.zeros(mesh.n, complex))) == 0.0


def test_single_subdomain_collapse():
    mesh, _, A_sys, A_prec, coeff = setup_problem(6, 2)
    layout = layout_from_blocks(mesh, 1)
    dec1 = build_decomposition(mesh, layout)
    Ad = A_prec.toarray()
    rng = np.random.default_rng(3)
    v = rng.standard_normal(mesh.n) + 1j * rng.standard_normal(mesh.n)
    want = np.linalg.solve(Ad, v)
    for kind in ("AS1", "RAS1", "ImpRAS1"):
        P = build_preconditioner(kind, mesh=mesh, decomp=dec1, A_prec=A_prec,
                                 coeff_prec=coeff)
        assert np.linalg.norm(P.apply(v) - want) / np.linalg.norm(want) < 1e-12


def test_hras_with_full_coarse_space_is_exact():
    # M = m: R0 is the identity, the coarse term alone solves A_eps; at eps=0
    # GMRES converges in one iteration
    mesh, _, A_sys, _, _ = setup_problem(6, 2)
    ws = build_wavespeed(mesh, "constant")
    coeff0 = AssemblyCoefficients(omega=5.0, wavespeed=ws, shift_mode="additive_eps",
                                  shift_value=0.0)
    layout = layout_from_blocks(mesh, mesh.m)
    with pytest.warns(UserWarning):
        dec = build_decomposition(mesh, layout)
    R0 = dec.coarse_interp
    assert (R0 != sp.identity(mesh.n, format="csr")).nnz == 0
    P = build_preconditioner("HRAS", mesh=mesh, decomp=dec, A_prec=A_sys,
                             coeff_prec=coeff0, system_matrix=A_sys)
    b = np.ones(mesh.n, complex)
    x, rep = gmres(A_sys, P, b, KrylovConfig(rel_tol=1e-8))
    assert rep.converged and rep.iterations == 1


def test_imphras_coarse_switch_off_equals_impras1():
    mesh, decomp, A_sys, A_prec, coeff = setup_problem(8, 2)
    P2 = build_preconditioner("ImpHRAS", mesh=mesh, decomp=decomp, A_prec=A_prec,
                              coeff_prec=coeff, system_matrix=A_sys,
                              coarse_enabled=False)
    P1 = build_preconditioner("ImpRAS1", mesh=mesh, decomp=decomp, A_prec=A_prec,
                              coeff_prec=coeff)
    rng = np.random.default_rng(11)
    v = rng.standard_normal(mesh.n) + 1j * rng.standard_normal(mesh.n)
    assert np.allclose(P2.apply(v), P1.apply(v), atol=1e-14)


def test_nested_solver_tight_tolerance_matches_direct():
    mesh, decomp, A_sys, A_prec, coeff = setup_problem(8, 2)
    A0 = coarse_matrix(decomp.coarse_interp, A_prec)
    exact = DirectFactorization(A0)
    nested = make_nested_solver(A0, lambda v: exact.solve(v), inner_tol=1e-12,
                                inner_max_iters=200)
    rng = np.random.default_rng(5)
    b = rng.standard_normal(A0.shape[0]) + 1j * rng.standard_normal(A0.shape[0])
    assert np.linalg.norm(nested.solve(b) - exact.solve(b)) < 1e-10 * np.linalg.norm(b)
    assert nested.inner_counts == [1]
    assert nested.failures == 0


def test_nested_solver_divergence_is_status_not_crash():
    mesh, decomp, A_sys, A_prec, coeff = setup_problem(8, 2)
    nested = make_nested_solver(A_sys, None, inner_tol=1e-14, inner_max_iters=2)
    b = np.ones(mesh.n, complex)
    nested.solve(b)
    assert nested.failures == 1


def test_nested_coarse_solver_flexible_flag_and_fgmres():
    mesh, decomp, A_sys, A_prec, coeff = setup_problem(12, 3, k=6.0, eps=6.0)
    ns, A0 = build_nested_coarse_solver(mesh, decomp.layout, A_prec, coeff, 6.0,
                                        alpha_inner=0.5)
    P = build_preconditioner("HRAS", mesh=mesh, decomp=decomp, A_prec=A_prec,
                             coeff_prec=coeff, system_matrix=A_sys, nested_coarse=ns)
    assert P.flexible
    b = np.ones(mesh.n, complex)
    with pytest.raises(ValueError):
        gmres(A_sys, P, b, KrylovConfig(rel_tol=1e-6))
    x, rep = fgmres(A_sys, P, b, KrylovConfig(variant="fgmres", rel_tol=1e-8))
    assert rep.converged
    assert np.linalg.norm(A_sys @ x - b) / np.linalg.norm(b) < 1e-7
    assert len(P.inner_counts()) > 0
    # exact-coarse comparison: same solve, similar iteration count
    Pex = build_preconditioner("HRAS", mesh=mesh, decomp=decomp, A_prec=A_prec,
                               coeff_prec=coeff, system_matrix=A_sys)
    x2, rep2 = gmres(A_sys, Pex, b, KrylovConfig(rel_tol=1e-8))
    assert abs(rep.iterations - rep2.iterations) <= max(3, rep2.iterations)


def test_nested_local_preconditioner():
    mesh, decomp, A_sys, A_prec, coeff = setup_problem(16, 2, k=6.0, eps=6.0)
    P = build_preconditioner("ImpRAS1", mesh=mesh, decomp=decomp, A_prec=A_prec,
                             coeff_prec=coeff,
                             nested_local=dict(k=6.0, alpha_inner=0.8, tol=0.5))
    assert P.flexible
    b = np.ones(mesh.n, complex)
    x, rep = fgmres(A_sys, P, b, KrylovConfig(variant="fgmres", rel_tol=1e-8))
    assert rep.converged
    assert np.linalg.norm(A_sys @ x - b) / np.linalg.norm(b) < 1e-7
    assert len(P.inner_counts()) == 4 * rep.iterations  # one per subdomain per apply


def test_threaded_local_solves_deterministic():
    mesh, decomp, A_sys, A_prec, coeff = setup_problem(12, 3, k=6.0, eps=6.0)
    rng = np.random.default_rng(21)
    v = rng.standard_normal(mesh.n) + 1j * rng.standard_normal(mesh.n)
    outs = []
    for threads in (1, 3):
        P = build_preconditioner("ImpRAS1", mesh=mesh, decomp=decomp, A_prec=A_prec,
                                 coeff_prec=coeff, threads=threads)
        outs.append(P.apply(v))
    assert np.array_equal(outs[0], outs[1])


def test_reset_stats():
    mesh, decomp, A_sys, A_prec, coeff = setup_problem(12, 3, k=6.0, eps=6.0)
    ns, _ = build_nested_coarse_solver(mesh, decomp.layout, A_prec, coeff, 6.0)
    P = build_preconditioner("HRAS", mesh=mesh, decomp=decomp, A_prec=A_prec,
                             coeff_prec=coeff, system_matrix=A_sys, nested_coarse=ns)
    b = np.ones(mesh.n, complex)
    fgmres(A_sys, P, b, KrylovConfig(variant="fgmres", rel_tol=1e-6))
    assert P.inner_counts()
    P.reset_stats()
    assert P.inner_counts() == []
