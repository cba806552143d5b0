"""Field-of-values estimates and numerical verification of the GMRES
convergence theory on dense desk-scale instances.

The numerical range is traced through the extremal eigenvalues of the rotated
Hermitian parts H(theta) = cos(theta)*F + sin(theta)*G of the similarity-
transformed matrix, on a theta grid (>= 256 angles) adaptively refined near
the minimum of lambda_max.  Each supporting halfplane gives the certified
lower bound dist >= max_theta(-lambda_max(theta) - eta_theta), eta being the
eigenpair residual, so under-converged eigensolves can only weaken the
estimate, never inflate it.  The distance to the convex hull of the traced
boundary points is kept as an upper cross-check.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .assembly import AssemblyCoefficients, assemble_energy_matrix, assemble_system
from .decomposition import build_decomposition
from .krylov import KrylovConfig, gmres
from .mesh import build_fine_mesh, build_wavespeed, ceil_snapped, layout_from_blocks
from .precond import build_preconditioner

SIZE_CAP = 4096
DENSE_EIG_CUTOFF = 600

ANALYSIS_COLUMNS = ("tag", "k", "eps", "H", "dist", "norm", "beta", "certified",
                    "max_ratio")


class AnalysisSizeError(ValueError):
    """Instance too large for the dense analysis path."""


@dataclass
class FovEstimate:
    tag: str
    weight_tag: str          # "D", "Dinv", or "I"
    dist_to_origin: float    # certified lower bound of dist(0, W_D(C))
    norm: float              # ||C||_D
    beta: float              # angle with cos(beta) = dist / norm
    certified: bool
    angles_used: int
    hull_dist: float         # distance to hull of traced boundary points (upper)

    @property
    def cos_beta(self):
        return self.dist_to_origin / self.norm if self.norm > 0 else 0.0


def _check_hpd(D):
    D = np.asarray(D)
    if np.abs(D - D.conj().T).max() > 1e-10 * max(np.abs(D).max(), 1e-300):
        raise ValueError("weight matrix is not Hermitian")
    try:
        return np.linalg.cholesky(D)
    except np.linalg.LinAlgError as exc:
        raise ValueError("weight matrix is not positive definite") from exc


def to_euclidean(C, D=None, weight="D"):
    """Similarity transform making the D (or D^-1) field of values Euclidean.

    weight "D":    Ctilde = L^H C L^-H  with D = L L^H
    weight "Dinv": Ctilde = L^-1 C L
    """
    C = np.asarray(C, dtype=complex)
    if D is None or weight == "I":
        return C.copy()
    L = _check_hpd(np.asarray(D, dtype=complex))
    if weight == "D":
        X = L.conj().T @ C
        return sla.solve_triangular(L.conj(), X.T, lower=True).T
    if weight == "Dinv":
        X = sla.solve_triangular(L, C, lower=True)
        return X @ L
    raise ValueError(f"unknown weight tag {weight!r}")


class _SubspaceSweep:
    """Rayleigh-Ritz evaluation of lambda_max(cos(t) F + sin(t) G) over many
    angles through one shared subspace, enriched by Ritz residuals.

    Ritz values underestimate lambda_max, so each angle yields the valid
    support lower bound -(lam + eta) with eta the explicit residual norm;
    enrichment drives eta to zero exactly where the maximum is attained.
    """

    def __init__(self, Ct, F, G, rng, max_basis=260):
        self.Ct, self.F, self.G = Ct, F, G
        self.n = Ct.shape[0]
        self.max_basis = max_basis
        X = rng.standard_normal((self.n, 6)) + 1j * rng.standard_normal((self.n, 6))
        U, _ = np.linalg.qr(np.hstack([X, F @ X, G @ X]))
        self.U = U
        self.FU = F @ U
        self.GU = G @ U
        self.CU = Ct @ U
        self.Fs = U.conj().T @ self.FU
        self.Gs = U.conj().T @ self.GU
        self.Cs = U.conj().T @ self.CU

    @property
    def size(self):
        return self.U.shape[1]

    def append(self, u):
        if self.size >= self.max_basis:
            return False
        for _ in range(2):
            u = u - self.U @ (self.U.conj().T @ u)
        nu = np.linalg.norm(u)
        if nu < 1e-12:
            return False
        u = u / nu
        Fu, Gu, Cu = self.F @ u, self.G @ u, self.Ct @ u

        def border(S, col, row, corner):
            s = S.shape[0]
            out = np.empty((s + 1, s + 1), dtype=complex)
            out[:s, :s] = S
            out[:s, s] = col
            out[s, :s] = row
            out[s, s] = corner
            return out

        col_f = self.U.conj().T @ Fu
        col_g = self.U.conj().T @ Gu
        col_c = self.U.conj().T @ Cu
        self.Fs = border(self.Fs, col_f, col_f.conj(), np.vdot(u, Fu))
        self.Gs = border(self.Gs, col_g, col_g.conj(), np.vdot(u, Gu))
        self.Cs = border(self.Cs, col_c, u.conj() @ self.CU, np.vdot(u, Cu))
        self.U = np.hstack([self.U, u[:, None]])
        self.FU = np.hstack([self.FU, Fu[:, None]])
        self.GU = np.hstack([self.GU, Gu[:, None]])
        self.CU = np.hstack([self.CU, Cu[:, None]])
        return True

    def lam_batch(self, thetas):
        """Ritz lambda_max for every angle (values only)."""
        out = np.empty(len(thetas))
        chunk = max(1, int(2e7 / (self.size ** 2)))
        for i in range(0, len(thetas), chunk):
            ts = np.asarray(thetas[i:i + chunk])
            Hs = (np.cos(ts)[:, None, None] * self.Fs[None]
                  + np.sin(ts)[:, None, None] * self.Gs[None])
            out[i:i + chunk] = np.linalg.eigvalsh(Hs)[:, -1]
        return out

    def ritz(self, theta):
        """(lam, Ritz vector y, residual norm eta, boundary point z)."""
        Hs = math.cos(theta) * self.Fs + math.sin(theta) * self.Gs
        w, v = np.linalg.eigh(Hs)
        lam = float(w[-1])
        y = v[:, -1]
        r = (math.cos(theta) * (self.FU @ y) + math.sin(theta) * (self.GU @ y)
             - lam * (self.U @ y))
        z = complex(y.conj() @ (self.Cs @ y))
        return lam, y, float(np.linalg.norm(r)), z

    def residual_vector(self, theta, y, lam):
        return (math.cos(theta) * (self.FU @ y) + math.sin(theta) * (self.GU @ y)
                - lam * (self.U @ y))


def _dense_angle_results(Ct, F, G, thetas):
    out = {}
    for t in thetas:
        H = math.cos(t) * F + math.sin(t) * G
        w, v = np.linalg.eigh(H)
        vec = v[:, -1]
        out[t] = (float(w[-1]), 0.0, complex(np.vdot(vec, Ct @ vec)))
    return out


def _subspace_converge(sweep, thetas, eta_tol, max_phases=400, batch_every=8):
    """Enrich the shared subspace until every angle that could attain the
    support maximum has a tight Ritz pair.  Ritz values only grow with the
    basis, so stale cached values scan conservatively."""
    thetas = list(thetas)
    lam_cache = sweep.lam_batch(thetas)
    since_batch = 0
    for _ in range(max_phases):
        order = np.argsort(lam_cache)
        dist_cand = -np.inf
        target = None
        for idx in order:
            if -lam_cache[idx] <= dist_cand:
                break
            t = thetas[idx]
            l, y, eta, _ = sweep.ritz(t)
            lam_cache[idx] = l
            if eta > eta_tol:
                target = (t, y, l)
                break
            dist_cand = max(dist_cand, -(l + eta))
        if target is None:
            break
        t, y, l = target
        if not sweep.append(sweep.residual_vector(t, y, l)):
            break  # basis cap: eta-corrected values stay valid, just weaker
        since_batch += 1
        if since_batch >= batch_every:
            lam_cache = sweep.lam_batch(thetas)
            since_batch = 0
    results = {}
    for t in thetas:
        l, y, eta, z = sweep.ritz(t)
        results[t] = (l, eta, z)
    return results


def _norm2_upper(Ct):
    """||C||_2 of the transformed matrix, never an underestimate."""
    n = Ct.shape[0]
    if n <= DENSE_EIG_CUTOFF:
        return float(sla.svdvals(Ct)[0])
    gram = spla.LinearOperator((n, n), matvec=lambda x: Ct.conj().T @ (Ct @ x),
                               dtype=complex)
    w, v = spla.eigsh(gram, k=1, which="LM", tol=1e-11, maxiter=20000)
    vec = v[:, 0] / np.linalg.norm(v[:, 0])
    lam = float(np.real(w[0]))
    eta = float(np.linalg.norm(Ct.conj().T @ (Ct @ vec) - lam * vec))
    return math.sqrt(max(lam + eta, 0.0))


def _hull_distance(points):
    """Distance from the origin to the convex hull of 2-D points (0 if inside)."""
    from scipy.spatial import ConvexHull

    pts = np.column_stack([points.real, points.imag])
    polygon = True
    try:
        hull = ConvexHull(pts)
        verts = pts[hull.vertices]  # counterclockwise
    except Exception:  # collinear set: no 2-D hull, just a segment of points
        order = np.lexsort((pts[:, 1], pts[:, 0]))
        verts = pts[order]
        polygon = False
    nv = len(verts)
    if polygon and nv >= 3:
        inside = True
        for i in range(nv):
            a = verts[i]
            b = verts[(i + 1) % nv]
            e = b - a
            if e[0] * (-a[1]) - e[1] * (-a[0]) < 0:  # origin right of a CCW edge
                inside = False
                break
        if inside:
            return 0.0
    best = np.inf
    for i in range(nv):
        a = verts[i]
        b = verts[(i + 1) % nv] if nv > 1 else a
        ab = b - a
        denom = float(ab @ ab)
        t = 0.0 if denom == 0 else float(np.clip(-(a @ ab) / denom, 0.0, 1.0))
        best = min(best, float(np.linalg.norm(a + t * ab)))
    return best


def fov_distance(C, D=None, *, weight="D", tag="", angles=256, refine_rounds=3,
                 refine_points=16, rel_tol=1e-6, size_cap=SIZE_CAP):
    """FovEstimate for dist(0, W_D(C)) and ||C||_D via boundary tracing."""
    C = np.asarray(C, dtype=complex)
    n = C.shape[0]
    if n > size_cap:
        raise AnalysisSizeError(f"dense analysis refused for dimension {n} > {size_cap}")
    Ct = to_euclidean(C, D, weight)
    F = 0.5 * (Ct + Ct.conj().T)
    G = 0.5j * (Ct - Ct.conj().T)  # H(theta) = cos(t) F + sin(t) G, both Hermitian
    norm = _norm2_upper(Ct)
    dense = n <= DENSE_EIG_CUTOFF
    rng = np.random.default_rng(2357)
    eta_tol = max(1e-8 * norm, 1e-14)
    sweep = None if dense else _SubspaceSweep(Ct, F, G, rng)

    thetas = [float(t) for t in
              np.linspace(0.0, 2.0 * math.pi, max(angles, 256), endpoint=False)]
    if dense:
        results = _dense_angle_results(Ct, F, G, thetas)
    else:
        results = _subspace_converge(sweep, thetas, eta_tol)
    spacing = 2.0 * math.pi / len(thetas)
    for _ in range(refine_rounds):
        t_best = min(results, key=lambda t: results[t][0])
        local = [float(t % (2.0 * math.pi))
                 for t in np.linspace(t_best - spacing, t_best + spacing, refine_points)]
        new = [t for t in local if t not in results]
        thetas.extend(new)
        if dense:
            results.update(_dense_angle_results(Ct, F, G, new))
        else:
            results = _subspace_converge(sweep, thetas, eta_tol)
        spacing /= refine_points / 2.0

    support = max(-(lam + eta) for lam, eta, _ in results.values())
    dist = max(0.0, support)
    hull = _hull_distance(np.array([z for _, _, z in results.values()]))
    cosb = min(dist / norm, 1.0) if norm > 0 else 0.0
    return FovEstimate(tag=tag, weight_tag=weight if D is not None else "I",
                       dist_to_origin=dist, norm=norm,
                       beta=math.acos(cosb), certified=dist > rel_tol * norm,
                       angles_used=len(results), hull_dist=hull)


def rayleigh_samples(C, D=None, *, weight="D", num=10000, seed=0):
    """|Rayleigh quotient| samples of W_D(C); all lie >= dist(0, W_D(C))."""
    Ct = to_euclidean(C, D, weight)
    rng = np.random.default_rng(seed)
    n = Ct.shape[0]
    X = rng.standard_normal((n, num)) + 1j * rng.standard_normal((n, num))
    num_q = np.einsum("ij,ij->j", X.conj(), Ct @ X)
    den_q = np.einsum("ij,ij->j", X.conj(), X).real
    return np.abs(num_q / den_q)


def check_gmres_bound(C, D, b=None, *, est=None, max_iters=None, slack=1e-10,
                      seed=0, tag=""):
    """Runs weighted GMRES on C x = b and tests the sin^m(beta) envelope."""
    C = np.asarray(C, dtype=complex)
    n = C.shape[0]
    if est is None:
        est = fov_distance(C, D, tag=tag)
    if not est.certified:
        return {"status": "skipped", "estimate": est, "max_excess": None,
                "max_ratio": None}
    if b is None:
        rng = np.random.default_rng(seed)
        b = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    D = np.eye(n) if D is None else D
    cfg = KrylovConfig(variant="weighted_gmres", side="none", weight=D,
                       rel_tol=1e-13, max_iters=max_iters or min(n, 60))
    _, rep = gmres(C, None, b, cfg)
    sinb = math.sin(est.beta)
    hist = rep.residual_history
    bounds = sinb ** np.arange(len(hist))
    excess = hist - bounds
    ratios = hist[1:] / np.maximum(bounds[1:], 1e-300)
    ok = bool(np.all(excess <= slack))
    return {"status": "ok" if ok else "violated", "estimate": est,
            "max_excess": float(excess.max()), "max_ratio": float(ratios.max()),
            "iterations": rep.iterations, "history": hist, "bounds": bounds}


def check_adjoint_identity(C, D, *, samples=20, seed=0, check_distance=False,
                           tol=1e-10):
    """Verifies the D / D^-1 adjoint identity between Rayleigh quotients of C
    and C^H, and optionally the equality of the two origin distances."""
    C = np.asarray(C, dtype=complex)
    D = np.asarray(D, dtype=complex)
    _check_hpd(D)
    rng = np.random.default_rng(seed)
    n = C.shape[0]
    worst = 0.0
    for _ in range(samples):
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        w = D @ v
        q1 = np.vdot(C @ v, D @ v) / np.vdot(v, D @ v)
        winv = np.linalg.solve(D, w)
        q2 = np.conj(np.vdot(C.conj().T @ w, winv) / np.vdot(w, winv))
        worst = max(worst, abs(q1 - q2) / max(abs(q1), 1.0))
    out = {"max_error": worst, "status": "ok" if worst <= tol else "violated"}
    if check_distance:
        e1 = fov_distance(C, D, weight="D")
        e2 = fov_distance(C.conj().T, D, weight="Dinv")
        out["dist_D"] = e1.dist_to_origin
        out["dist_Dinv_adjoint"] = e2.dist_to_origin
        out["dist_gap"] = abs(e1.dist_to_origin - e2.dist_to_origin)
        if out["dist_gap"] > 1e-5 * max(e1.norm, 1.0):
            out["status"] = "violated"
    return out


def analysis_mesh_cells(k):
    """Desk-scale dense-analysis rule: m = 3k, the coarsest mesh for which the
    alpha = 1 layout still has one overlap layer (about 19 points/wavelength)."""
    return 3 * ceil_snapped(k)


def preconditioned_operator(k, *, eps, alpha=1.0, kind="AS", cells=None,
                            size_cap=SIZE_CAP):
    """Dense preconditioned matrices of the absorbed problem: returns a dict
    with B (preconditioner action), A (A_eps), D (energy matrix), and the
    left/right products B@A and A@B."""
    m = cells(k) if callable(cells) else (cells or analysis_mesh_cells(k))
    mesh = build_fine_mesh(k, "explicit", m=m)
    if mesh.n > size_cap:
        raise AnalysisSizeError(f"k={k} needs n={mesh.n} > cap {size_cap}")
    ws = build_wavespeed(mesh, "constant")
    coeff = AssemblyCoefficients(omega=float(k), wavespeed=ws,
                                 shift_mode="additive_eps", shift_value=float(eps))
    A = assemble_system(mesh, coeff)
    layout = layout_from_blocks(mesh, ceil_snapped(k ** alpha))
    decomp = build_decomposition(mesh, layout)
    P = build_preconditioner(kind, mesh=mesh, decomp=decomp, A_prec=A,
                             coeff_prec=coeff, system_matrix=A)
    B = P.to_dense()
    Ad = A.toarray()
    D = assemble_energy_matrix(mesh, float(k)).toarray()
    return {"mesh": mesh, "layout": layout, "A_sparse": A, "precond": P,
            "B": B, "A": Ad, "D": D, "left": B @ Ad, "right": Ad @ B,
            "H": 1.0 / layout.M, "eps": float(eps)}


def scaling_sweep(k_list, *, beta=None, eps_rule="k^beta", alpha=1.0, kind="AS",
                  cells=None, sides=("left", "right"), angles=256,
                  envelope=False, size_cap=SIZE_CAP):
    """Tabulates norm and origin distance of the preconditioned operators in
    the energy inner products across k, with log-log trend slopes against the
    theoretical k^2/eps scaling."""
    rows = []
    for k in k_list:
        if eps_rule == "ksq":
            eps = float(k) ** 2
        elif eps_rule == "k^beta":
            if beta is None:
                raise ValueError("k^beta rule needs beta")
            eps = float(k) ** beta
        else:
            eps = float(eps_rule(k))
        ops = preconditioned_operator(k, eps=eps, alpha=alpha, kind=kind,
                                      cells=cells, size_cap=size_cap)
        for side in sides:
            C = ops["left"] if side == "left" else ops["right"]
            wt = "D" if side == "left" else "Dinv"
            tag = f"{kind}-{side}"
            est = fov_distance(C, ops["D"], weight=wt, tag=tag, angles=angles)
            row = {"tag": tag, "k": k, "eps": eps, "H": ops["H"],
                   "dist": est.dist_to_origin, "norm": est.norm, "beta": est.beta,
                   "certified": est.certified, "max_ratio": None, "estimate": est,
                   "operator": C, "D": ops["D"]}
            if envelope and side == "left":
                # the sin^m(beta) envelope lives in the D norm of the left
                # operator; the D^-1 side is exercised via the adjoint identity
                chk = check_gmres_bound(C, ops["D"], est=est, tag=tag)
                row["max_ratio"] = chk.get("max_ratio")
                row["envelope"] = chk
            rows.append(row)
    slopes = {}
    lefts = [r for r in rows if r["tag"].endswith("left")]
    if len(lefts) >= 2 and len({r["eps"] / r["k"] ** 2 for r in lefts}) > 1:
        x = np.log([r["k"] ** 2 / r["eps"] for r in lefts])
        slopes["norm_vs_k2_over_eps"] = float(np.polyfit(x, np.log([r["norm"] for r in lefts]), 1)[0])
        dists = np.array([r["dist"] for r in lefts])
        if np.all(dists > 0):
            slopes["dist_vs_eps_over_k2"] = float(
                np.polyfit(-x, np.log(dists), 1)[0])
    return {"rows": rows, "slopes": slopes}


def rows_to_csv(rows, fobj):
    writer = csv.writer(fobj)
    writer.writerow(ANALYSIS_COLUMNS)
    for r in rows:
        writer.writerow([r["tag"], r["k"], r["eps"], r["H"],
                         f"{r['dist']:.12g}", f"{r['norm']:.12g}", f"{r['beta']:.12g}",
                         str(bool(r["certified"])).lower(),
                         "" if r.get("max_ratio") is None else f"{r['max_ratio']:.12g}"])
