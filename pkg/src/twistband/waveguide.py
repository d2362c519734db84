"""Truncated straightened waveguide [-L, L] x omega with a local twist perturbation.

The quadratic form

    Q[psi] = int |grad_t psi|^2 + |d_s psi + theta_dot(s) psi'_tau|^2 ds dt

is discretized by tensor products of 1-D P1 elements in ``s`` (Dirichlet at
``s = +-L``) and the cross-section P1 space.  With ``x`` indexed s-major,

    H = K_s (x) M_t + M_s (x) K_t + W_s (x) A_t + G_s (x) D_t + (G_s (x) D_t)^T
    Mhat = M_s (x) M_t

where ``W_s`` is the ``theta_dot^2``-weighted 1-D mass matrix and
``G_s[m, n] = int theta_dot l_m' l_n ds``.  All s-integrals use the same
4-point Gauss rule per element, so ``H`` is a sum of squares at quadrature
points and ``H >= lambda_1(omega) Mhat`` holds exactly.

Large problems can be compressed onto the lowest ``n_modes`` eigenvectors of
the p = 0 fiber pencil.  That is a Galerkin subspace of the full tensor space,
so compressed eigenvalues are upper bounds of the full discrete ones and
converge to them as ``n_modes`` grows.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .band_structure import ground_state
from .eigensolve import DEFAULT_TOL, solve_lowest
from .fiber_assembly import FiberMatrices, assemble_matrices
from .geometry import refine, triangulate
from .twist_profile import TwistProfile, sample_theta

log = logging.getLogger(__name__)

DIMENSION_CAP = 2_000_000
# above this size the pencil is projected onto transverse modes; the sparse
# LU of the full 3-D pencil is the memory bottleneck well before 200k
COMPRESS_LIMIT = 60_000
DEFAULT_MODES = 32

_G4_X, _G4_W = np.polynomial.legendre.leggauss(4)


class WaveguideError(ValueError):
    pass


@dataclass(frozen=True)
class StripDiscretization:
    L: float
    n_s: int

    def __post_init__(self):
        if not self.L > 0:
            raise WaveguideError("L must be positive")
        if self.n_s < 2:
            raise WaveguideError("n_s must be at least 2")

    @property
    def ds(self):
        return 2 * self.L / self.n_s

    @property
    def s_nodes(self):
        return np.linspace(-self.L, self.L, self.n_s + 1)

    @property
    def interior_s(self):
        return self.s_nodes[1:-1]

    @classmethod
    def with_density(cls, L, per_unit=10.0):
        """Uniform strip with ``per_unit * L`` elements."""
        return cls(float(L), max(2, int(round(per_unit * L))))


def axial_matrices(strip: StripDiscretization, profile: TwistProfile):
    """1-D matrices (K_s, M_s, W_s, G_s) on interior s-nodes."""
    n = strip.n_s
    s = strip.s_nodes
    h = strip.ds
    # per-element Gauss points and local shape values
    xq = 0.5 * (_G4_X + 1.0)          # in [0, 1]
    wq = 0.5 * _G4_W * h
    left = s[:-1]
    sq = left[:, None] + h * xq[None, :]           # (n, 4)
    td = sample_theta(profile, sq)[1]
    l0, l1 = 1.0 - xq, xq
    dl0, dl1 = -1.0 / h, 1.0 / h
    # local 2x2 blocks
    Ke = np.array([[1.0, -1.0], [-1.0, 1.0]]) / h
    Me = np.array([[2.0, 1.0], [1.0, 2.0]]) * h / 6.0
    w2 = td ** 2 * wq[None, :]
    We = np.stack([np.stack([w2 @ (l0 * l0), w2 @ (l0 * l1)], -1),
                   np.stack([w2 @ (l1 * l0), w2 @ (l1 * l1)], -1)], -2)   # (n, 2, 2)
    w1 = td * wq[None, :]
    # G[a, b] = int theta_dot * l_a' * l_b
    Ge = np.stack([np.stack([dl0 * (w1 @ l0), dl0 * (w1 @ l1)], -1),
                   np.stack([dl1 * (w1 @ l0), dl1 * (w1 @ l1)], -1)], -2)
    rows = np.stack([np.arange(n), np.arange(n)], 1)
    cols = rows + np.array([0, 1])[None, :]
    r = np.repeat(cols, 2, axis=1).ravel()
    c = np.tile(cols, (1, 2)).ravel()

    def build(local):
        if local.ndim == 2:
            local = np.broadcast_to(local, (n, 2, 2))
        full = sp.coo_matrix((local.reshape(-1), (r, c)), shape=(n + 1, n + 1)).tocsr()
        return full[1:-1, 1:-1].tocsr()

    Ks, Ms, Ws, Gs = build(Ke), build(Me), build(We), build(Ge)
    Ms = ((Ms + Ms.T) * 0.5).tocsr()
    Ws = ((Ws + Ws.T) * 0.5).tocsr()
    Ks = ((Ks + Ks.T) * 0.5).tocsr()
    return Ks, Ms, Ws, Gs


@dataclass(eq=False)
class WaveguidePencil:
    H: sp.csr_matrix
    M: sp.csr_matrix
    strip: StripDiscretization
    n_t: int
    lower_bound: float
    basis: np.ndarray | None = None
    mats: FiberMatrices | None = field(default=None, repr=False)

    @property
    def dim(self):
        return self.H.shape[0]

    def expand(self, x):
        """Nodal coefficients (n_s - 1, n_interior_t) of a pencil vector."""
        X = np.asarray(x).reshape(self.strip.n_s - 1, -1)
        if self.basis is not None:
            X = X @ self.basis.T
        return X


def _untwisted_floor(mats):
    return float(solve_lowest(mats.K, mats.M, 1, sigma=0.0).values[0])


def transverse_modes(mats: FiberMatrices, beta0, n_modes, tol=DEFAULT_TOL, seed=0):
    """Lowest ``n_modes`` M-orthonormal eigenvectors of K + beta0^2 A."""
    n_modes = min(n_modes, mats.n)
    res = solve_lowest((mats.K + beta0 * beta0 * mats.A).tocsr(), mats.M, n_modes,
                       tol=tol, seed=seed, sigma=0.0)
    return res.vectors


def resolve_modes(n_t, n_s, n_modes=None, compress_limit=COMPRESS_LIMIT):
    """Mode count actually used for an ``n_t``-node section and ``n_s`` elements."""
    if n_modes is not None:
        return n_modes if n_modes < n_t else None
    if (n_s - 1) * n_t > compress_limit:
        return min(DEFAULT_MODES, n_t)
    return None


def assemble_waveguide(mats: FiberMatrices, profile: TwistProfile, strip: StripDiscretization,
                       cap=DIMENSION_CAP, n_modes=None, compress_limit=COMPRESS_LIMIT,
                       basis=None):
    """Sparse symmetric pencil (H, Mhat) of the truncated perturbed waveguide.

    ``n_modes`` projects the cross-section space onto the lowest fiber
    eigenvectors at p = 0; by default this happens only when the full
    dimension exceeds ``compress_limit``.  A precomputed ``basis`` (columns
    M-orthonormal) overrides ``n_modes``.  ``cap`` bounds the dimension of
    the pencil actually assembled.
    """
    if not strip.L > profile.s0:
        raise WaveguideError(f"L={strip.L} must exceed the support half-width s0={profile.s0}")
    n_s_int = strip.n_s - 1
    if basis is None:
        n_modes = resolve_modes(mats.n, strip.n_s, n_modes, compress_limit)
        if n_modes is not None:
            log.info("compressing onto %d transverse modes", n_modes)
            basis = transverse_modes(mats, profile.beta0, n_modes)
    n_t = mats.n if basis is None else basis.shape[1]
    if n_s_int * n_t > cap:
        raise WaveguideError(f"dimension {n_s_int * n_t} exceeds the cap {cap}")
    Ks, Ms, Ws, Gs = axial_matrices(strip, profile)
    floor = _untwisted_floor(mats)
    Mt, Kt, At, Dt = mats.M, mats.K, mats.A, mats.D
    if basis is not None:
        V = basis
        Mt = sp.csr_matrix(V.T @ (mats.M @ V))
        Kt = sp.csr_matrix(V.T @ (mats.K @ V))
        At = sp.csr_matrix(V.T @ (mats.A @ V))
        Dt = sp.csr_matrix(V.T @ (mats.D @ V))
    cross = sp.kron(Gs, Dt, format="csr")
    H = (sp.kron(Ks, Mt, format="csr") + sp.kron(Ms, Kt, format="csr")
         + sp.kron(Ws, At, format="csr") + cross + cross.T).tocsr()
    H = ((H + H.T) * 0.5).tocsr()
    Mhat = sp.kron(Ms, Mt, format="csr")
    Mhat = ((Mhat + Mhat.T) * 0.5).tocsr()
    return WaveguidePencil(H=H, M=Mhat, strip=strip, n_t=mats.n, lower_bound=floor,
                           basis=basis, mats=mats)


@dataclass
class BoundStateReport:
    eigenvalues: list
    residuals: list
    E_ref: float
    gaps: list
    candidates: list
    error_budget: float
    truncation_table: list = field(default_factory=list)
    mesh_table: list = field(default_factory=list)
    extrapolated_gap: float | None = None
    extrapolated_gap_error: float | None = None
    verdict: str = ""
    certified: bool = False
    inconclusive: bool = False
    budget_terms: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    monotone_in_L: bool | None = None
    saturated: bool | None = None
    h_increments: list = field(default_factory=list)
    mode_check: dict | None = None

    def to_dict(self):
        return dict(self.__dict__)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def solve_bound_states(pencil: WaveguidePencil, E_ref: float, k=3, tol=DEFAULT_TOL, seed=0,
                       error_budget=None, return_vectors=False):
    """k lowest eigenvalues; those below ``E_ref - budget`` are bound-state candidates."""
    sigma = pencil.lower_bound - 1e-9 * (abs(pencil.lower_bound) + 1.0)
    res = solve_lowest(pencil.H, pencil.M, k, tol=tol, seed=seed, sigma=sigma)
    budget = 10 * tol * abs(E_ref) if error_budget is None else error_budget
    vals = res.values.tolist()
    gaps = [E_ref - v for v in vals]
    cand = [v for v in vals if v < E_ref - budget]
    verdict = (f"{len(cand)} eigenvalue(s) below E_ref beyond the budget"
               if cand else "no certified bound state")
    rep = BoundStateReport(eigenvalues=vals, residuals=res.residuals.tolist(), E_ref=E_ref,
                           gaps=gaps, candidates=cand, error_budget=budget, verdict=verdict,
                           certified=bool(cand))
    if return_vectors:
        return rep, res.vectors
    return rep


def trial_vector(pencil: WaveguidePencil, f, phi_values):
    """Pencil coordinates of the product state phi(s) f(t) sampled at the nodes."""
    if pencil.basis is not None:
        # coordinates in the M-orthonormal mode basis
        f = pencil.basis.T @ (pencil.mats.M @ f)
    return np.outer(phi_values, f).ravel()


def discrete_rayleigh(pencil: WaveguidePencil, x):
    return float(x @ (pencil.H @ x)) / float(x @ (pencil.M @ x))


def slab_mass(pencil: WaveguidePencil, x, edges):
    """Mhat-mass of ``x`` in the slabs |s| in [edges[i], edges[i+1])."""
    X = pencil.expand(x)
    mats = pencil.mats
    s = pencil.strip.interior_s
    per_node = np.einsum("ij,ij->i", X, (mats.M @ X.T).T) * pencil.strip.ds
    a = np.abs(s)
    return [float(per_node[(a >= lo) & (a < hi)].sum()) for lo, hi in zip(edges[:-1], edges[1:])]


def eigenvector_slice_csv(pencil: WaveguidePencil, x, s_stride=1):
    X = pencil.expand(x)
    nodes = pencil.mats.mesh.interior_nodes
    lines = ["s,t2,t3,value"]
    for i in range(0, len(pencil.strip.interior_s), s_stride):
        s = pencil.strip.interior_s[i]
        lines.extend(f"{s:.17g},{t2:.17g},{t3:.17g},{v:.17g}"
                     for (t2, t3), v in zip(nodes, X[i]))
    return "\n".join(lines) + "\n"


def richardson(values, ratio=2.0, order=2):
    """Extrapolate the last two values of a sequence with step ratio ``ratio``.

    Returns (extrapolated, error_estimate); the error estimate compares the
    extrapolations built from the last two and the previous two entries when
    at least three values are available.
    """
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return float(v[-1]), float("inf")
    f = ratio ** order
    ex = v[-1] + (v[-1] - v[-2]) / (f - 1.0)
    if len(v) >= 3:
        ex_prev = v[-2] + (v[-2] - v[-3]) / (f - 1.0)
        err = abs(ex - ex_prev)
    else:
        err = abs(v[-1] - v[-2])
    return float(ex), float(err)


def convergence_study(spec, profile, h_list, L_list, per_unit=10.0, k=3, tol=DEFAULT_TOL,
                      seed=0, mesh_builder=None, n_modes=None, L_for_mesh=None,
                      h_for_L=None, compress_limit=COMPRESS_LIMIT):
    """Truncation sweep in L followed by a refinement sweep in h.

    ``h_list`` is a decreasing list of mesh sizes of a nested family (each
    entry half the previous); meshes are produced by ``mesh_builder(h)``
    when given, otherwise by triangulating at ``h_list[0]`` and refining.
    The L-sweep runs on the mesh ``h_for_L`` (default: the finest) and the
    h-sweep at ``L_for_mesh`` (default: the largest L).

    Each mesh uses one transverse space for every L, so with a fixed
    ``per_unit`` the discrete spaces are nested in L and the truncation
    table is monotone up to solver tolerance.
    """
    L_list = sorted(float(x) for x in L_list)
    if len(L_list) < 2:
        raise WaveguideError("L_list needs at least two lengths")
    if any(L <= profile.s0 for L in L_list):
        raise WaveguideError("every L must exceed s0")
    if mesh_builder is None:
        meshes = []
        m = triangulate(spec, h_list[0])
        for i, _ in enumerate(h_list):
            if i:
                m = refine(m, spec)
            meshes.append(m)
    else:
        meshes = [mesh_builder(h) for h in h_list]
    L_mesh = L_list[-1] if L_for_mesh is None else float(L_for_mesh)
    n_s_max = StripDiscretization.with_density(max(L_list[-1], L_mesh), per_unit).n_s
    fibers = []
    for m in meshes:
        mats = assemble_matrices(m)
        gs = ground_state(mats, profile.beta0, tol=tol, seed=seed)
        nm = resolve_modes(mats.n, n_s_max, n_modes, compress_limit)
        basis = None if nm is None else transverse_modes(mats, profile.beta0, nm, tol, seed)
        fibers.append((mats, gs, basis))
    i_L = len(meshes) - 1 if h_for_L is None else list(h_list).index(h_for_L)

    def cell(i, L):
        mats, gs, basis = fibers[i]
        t0 = time.perf_counter()
        strip = StripDiscretization.with_density(L, per_unit)
        pen = assemble_waveguide(mats, profile, strip, basis=basis)
        rep = solve_bound_states(pen, gs.E, k=k, tol=tol, seed=seed)
        return {"L": L, "n_s": strip.n_s, "h": h_list[i], "lambda_1": rep.eigenvalues[0],
                "E_ref": gs.E, "gap": gs.E - rep.eigenvalues[0],
                "eigenvalues": rep.eigenvalues, "residuals": rep.residuals, "dim": pen.dim,
                "n_interior": mats.n,
                "transverse_modes": None if basis is None else basis.shape[1],
                "seconds": time.perf_counter() - t0}

    notes = []
    gs_L = fibers[i_L][1]
    trunc = [cell(i_L, L) for L in L_list]
    lam = [row["lambda_1"] for row in trunc]
    mono_tol = 10 * tol * abs(gs_L.E)
    monotone = all(lam[i + 1] <= lam[i] + mono_tol for i in range(len(lam) - 1))
    if not monotone:
        notes.append("lambda_1(L) not monotone in L; check the eigensolver tolerance")
    # |lambda_1(L_max) - lambda_1(L_max / 2)|, or the last step if L_max/2 is absent
    half = [r for r in trunc if abs(r["L"] - L_list[-1] / 2) < 1e-12]
    prev = half[0] if half else trunc[-2]
    sat = abs(lam[-1] - prev["lambda_1"])

    mesh_rows = []
    for i, h in enumerate(h_list):
        if i == i_L and L_mesh == L_list[-1]:
            mesh_rows.append(trunc[-1])
        else:
            mesh_rows.append(cell(i, L_mesh))
    gaps = [r["gap"] for r in mesh_rows]
    ex_gap, ex_err = richardson(gaps, ratio=2.0, order=2)
    h_incr = np.diff([r["lambda_1"] for r in mesh_rows]).tolist()

    mode_check = None
    basis = fibers[i_L][2]
    if basis is not None and basis.shape[1] >= 4:
        mats = fibers[i_L][0]
        half_basis = basis[:, : basis.shape[1] // 2]
        pen = assemble_waveguide(mats, profile,
                                 StripDiscretization.with_density(L_list[-1], per_unit),
                                 basis=half_basis)
        lam_half = solve_bound_states(pen, gs_L.E, k=1, tol=tol, seed=seed).eigenvalues[0]
        mode_check = {"modes": basis.shape[1], "lambda_1": lam[-1],
                      "modes_half": half_basis.shape[1], "lambda_1_half": lam_half,
                      "difference": lam_half - lam[-1]}
        notes.append("transverse-mode compression is a Galerkin restriction: compressed "
                     "eigenvalues bound the full discrete ones from above, so the gap is "
                     "conservative")

    solver_term = 10 * tol * abs(gs_L.E)
    budget_terms = {"truncation": sat, "richardson": ex_err, "solver": solver_term}
    budget = sat + ex_err + solver_term
    final_gap = trunc[-1]["gap"]
    last = trunc[-1]
    rep = BoundStateReport(eigenvalues=last["eigenvalues"], residuals=last["residuals"],
                           E_ref=gs_L.E, gaps=[gs_L.E - v for v in last["eigenvalues"]],
                           candidates=[v for v in last["eigenvalues"] if v < gs_L.E - budget],
                           error_budget=budget, truncation_table=trunc, mesh_table=mesh_rows,
                           extrapolated_gap=ex_gap, extrapolated_gap_error=ex_err,
                           budget_terms=budget_terms, notes=notes)
    rep.monotone_in_L = monotone
    rep.h_increments = h_incr
    rep.mode_check = mode_check
    # saturated once the truncation change is small against the distance to E
    rep.saturated = bool(sat < abs(final_gap))
    if final_gap > budget and ex_gap > budget and monotone:
        rep.certified = True
        rep.verdict = "bound state certified: gap exceeds the combined error budget"
    elif profile.max_abs_beta == 0.0:
        # unperturbed tube: lambda_1(L) > E for every L, saturation never occurs
        rep.verdict = "no certified bound state"
    elif not rep.saturated:
        rep.inconclusive = True
        rep.verdict = ("inconclusive: L-sweep not saturated (no certified bound state at "
                       f"L = {L_list[-1]:g}); see truncation_table")
    elif final_gap > 0:
        rep.inconclusive = True
        rep.verdict = "inconclusive: gap does not exceed the combined error budget"
    else:
        rep.verdict = "no certified bound state"
    return rep


def lowest_gap_estimate(mats, profile, L, per_unit=10.0, n_modes=None, tol=DEFAULT_TOL):
    gs = ground_state(mats, profile.beta0, tol=tol)
    strip = StripDiscretization.with_density(L, per_unit)
    pen = assemble_waveguide(mats, profile, strip, n_modes=n_modes)
    rep = solve_bound_states(pen, gs.E, k=1, tol=tol)
    return gs.E - rep.eigenvalues[0]
