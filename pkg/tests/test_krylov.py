import numpy as np
import pytest
import scipy.sparse as sp

from helmdd.assembly import AssemblyCoefficients, assemble_energy_matrix, assemble_system
from helmdd.decomposition import build_decomposition
from helmdd.krylov import GmresBreakdown, KrylovConfig, fgmres, gmres
from helmdd.mesh import build_fine_mesh, build_wavespeed, layout_from_blocks
from helmdd.precond import DirectFactorization, build_preconditioner

from oracles import gmres_residual_oracle


def random_system(n, seed, diag=4.0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)) + diag * np.eye(n)
    b = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return A, b


def test_identity_converges_in_one_iteration():
    b = np.arange(1.0, 6.0) + 2j
    x, rep = gmres(np.eye(5, dtype=complex), None, b, KrylovConfig(rel_tol=1e-12))
    assert rep.converged and rep.iterations == 1
    assert np.allclose(x, b, atol=1e-12)


def test_zero_rhs():
    x, rep = gmres(np.eye(4, dtype=complex), None, np.zeros(4), KrylovConfig())
    assert rep.converged and rep.iterations == 0 and np.all(x == 0)


def test_config_validation():
    with pytest.raises(ValueError):
        KrylovConfig(variant="fgmres", side="left")
    with pytest.raises(ValueError):
        KrylovConfig(variant="weighted_gmres")
    with pytest.raises(ValueError):
        KrylovConfig(variant="qmr")
    with pytest.raises(ValueError):
        KrylovConfig(side="middle")


def test_weighted_identity_reproduces_standard_iterate_for_iterate():
    A, b = random_system(12, 0)
    x1, rep1 = gmres(A, None, b, KrylovConfig(side="none", rel_tol=1e-10))
    x2, rep2 = gmres(A, None, b, KrylovConfig(variant="weighted_gmres", side="none",
                                              rel_tol=1e-10, weight=np.eye(12)))
    assert rep1.iterations == rep2.iterations
    assert np.allclose(rep1.residual_history, rep2.residual_history, atol=1e-12)
    assert np.allclose(x1, x2, atol=1e-10)


def test_residuals_match_least_squares_oracle():
    A, b = random_system(10, 1)
    _, rep = gmres(A, None, b, KrylovConfig(side="none", rel_tol=1e-14, max_iters=10))
    want = gmres_residual_oracle(A, b, rep.iterations)
    got = rep.residual_history[1:len(want) + 1]
    assert np.abs(got - want).max() < 1e-10


def test_residual_history_non_increasing():
    for seed in range(5):
        A, b = random_system(25, seed, diag=1.5)
        _, rep = gmres(A, None, b, KrylovConfig(side="none", rel_tol=1e-12, max_iters=25))
        h = rep.residual_history
        assert np.all(h[1:] <= h[:-1] + 1e-14)


def test_fgmres_fixed_preconditioner_matches_right_gmres():
    A, b = random_system(20, 3)
    Af = DirectFactorization(sp.csr_matrix(A + 2 * np.eye(20)))
    M = lambda v: Af.solve(v)
    x1, rep1 = gmres(A, M, b, KrylovConfig(side="right", rel_tol=1e-10))
    x2, rep2 = fgmres(A, M, b, KrylovConfig(variant="fgmres", rel_tol=1e-10))
    assert rep1.iterations == rep2.iterations
    assert np.allclose(rep1.residual_history, rep2.residual_history, atol=1e-12)
    assert np.allclose(x1, x2, atol=1e-9)


def test_fgmres_identity_preconditioner_identity_system():
    b = np.ones(7, dtype=complex)
    x, rep = fgmres(np.eye(7, dtype=complex), lambda v: v, b,
                    KrylovConfig(variant="fgmres", rel_tol=1e-12))
    assert rep.converged and rep.iterations == 1


def test_left_right_consistency():
    mesh = build_fine_mesh(8, "points_per_wavelength")
    ws = build_wavespeed(mesh, "constant")
    coeff = AssemblyCoefficients(omega=8.0, wavespeed=ws, shift_mode="additive_eps",
                                 shift_value=8.0)
    A = assemble_system(mesh, AssemblyCoefficients(omega=8.0, wavespeed=ws,
                                                   shift_mode="additive_eps",
                                                   shift_value=0.0))
    A_prec = assemble_system(mesh, coeff)
    decomp = build_decomposition(mesh, layout_from_blocks(mesh, 3))
    P = build_preconditioner("HRAS", mesh=mesh, decomp=decomp, A_prec=A_prec,
                             coeff_prec=coeff, system_matrix=A)
    b = np.ones(mesh.n, dtype=complex)
    xl, rl = gmres(A, P, b, KrylovConfig(side="left", rel_tol=1e-10, max_iters=150))
    xr, rr = gmres(A, P, b, KrylovConfig(side="right", rel_tol=1e-10, max_iters=150))
    assert rl.converged and rr.converged
    assert np.linalg.norm(xl - xr) / np.linalg.norm(xr) < 1e-8


def test_weighted_gmres_with_energy_matrix():
    mesh = build_fine_mesh(1, "explicit", m=6)
    ws = build_wavespeed(mesh, "constant")
    k = 4.0
    A = assemble_system(mesh, AssemblyCoefficients(omega=k, wavespeed=ws,
                                                   shift_mode="additive_eps",
                                                   shift_value=0.0))
    D = assemble_energy_matrix(mesh, k)
    b = np.ones(mesh.n, dtype=complex)
    x, rep = gmres(A, None, b, KrylovConfig(variant="weighted_gmres", side="none",
                                            weight=D, rel_tol=1e-10, max_iters=60))
    assert rep.converged
    # D-weighted residual of the returned iterate honours the reported history
    r = b - A @ x
    dnorm = np.sqrt(np.real(np.vdot(r, D @ r)) / np.real(np.vdot(b, D @ b)))
    assert dnorm <= 2 * rep.residual_history[-1] + 1e-12


def test_weighted_left_preconditioned_combination():
    # weighted residual minimisation under left preconditioning
    mesh = build_fine_mesh(1, "explicit", m=9)
    ws = build_wavespeed(mesh, "constant")
    k = 5.0
    coeff = AssemblyCoefficients(omega=k, wavespeed=ws, shift_mode="additive_eps",
                                 shift_value=k * k)
    A = assemble_system(mesh, coeff)
    D = assemble_energy_matrix(mesh, k)
    decomp = build_decomposition(mesh, layout_from_blocks(mesh, 3))
    P = build_preconditioner("AS", mesh=mesh, decomp=decomp, A_prec=A,
                             coeff_prec=coeff)
    b = np.ones(mesh.n, dtype=complex)
    x, rep = gmres(A, P, b, KrylovConfig(variant="weighted_gmres", side="left",
                                         weight=D, rel_tol=1e-9, max_iters=100))
    assert rep.converged
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) < 1e-7
    h = rep.residual_history
    assert np.all(h[1:] <= h[:-1] + 1e-14)


def test_side_none_rejects_preconditioner():
    with pytest.raises(ValueError):
        gmres(np.eye(3, dtype=complex), lambda v: v, np.ones(3),
              KrylovConfig(side="none"))


def test_breakdown_raises_when_residual_large():
    A = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
    with pytest.raises(GmresBreakdown):
        gmres(A, None, np.array([1.0, 0.0], dtype=complex),
              KrylovConfig(side="none", rel_tol=1e-12))


def test_cap_reported_as_nonconverged():
    A, b = random_system(40, 9, diag=0.0)
    _, rep = gmres(A, None, b, KrylovConfig(side="none", rel_tol=1e-14, max_iters=5))
    assert not rep.converged and rep.iterations == 5


def test_basis_memory_accounting():
    A, b = random_system(30, 2)
    _, rep = gmres(A, None, b, KrylovConfig(side="none", rel_tol=1e-13, max_iters=30))
    assert rep.basis_bytes >= rep.iterations * 30 * 16
    assert rep.basis_bytes <= (rep.iterations + 33) * 30 * 16


def test_true_residual_reported():
    A, b = random_system(15, 4)
    x, rep = gmres(A, None, b, KrylovConfig(side="none", rel_tol=1e-9))
    assert rep.true_relres == pytest.approx(
        np.linalg.norm(b - A @ x) / np.linalg.norm(b), rel=1e-8)
    assert rep.true_relres <= 2e-9
