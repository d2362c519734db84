"""Lowest eigenpairs of sparse symmetric-definite pencils ``S x = eps M x``.

Three paths are available:

``dense``
    LAPACK ``eigh`` on small problems.
``shift_invert``
    Lanczos (ARPACK) on ``(S - sigma M)^{-1} M`` with a sparse LU.  The shift
    is certified to lie below the whole spectrum by a Sylvester inertia count
    of the factorization, so the eigenvalues nearest to it are the lowest.
``lobpcg``
    Block preconditioned iteration with an incomplete-LU preconditioner.
    Stagnation (less than 1% residual decrease over 50 iterations) hands the
    problem to ``shift_invert``.

Residuals are reported in the scale-free form
``||S x - eps M x|| / (||S x|| + |eps| ||M x||)``.
"""
from __future__ import annotations

import csv
import io
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as sla

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
MAX_ITER = 5000
DENSE_LIMIT = 800
STAGNATION_WINDOW = 50


class EigenError(RuntimeError):
    """Solver failure.  ``result`` carries the best pairs found, if any."""

    def __init__(self, msg, result=None):
        super().__init__(msg)
        self.result = result


@dataclass
class EigenResult:
    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    iterations: int
    seed: int
    method: str = ""
    history: list = field(default_factory=list)

    def history_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration"] + [f"res_{i + 1}" for i in range(len(self.values))])
        for it, res in enumerate(self.history):
            w.writerow([it] + [f"{r:.17g}" for r in res])
        return buf.getvalue()


def relative_residuals(S, M, values, vectors):
    SX = S @ vectors
    MX = M @ vectors
    R = SX - MX * values[None, :]
    num = np.linalg.norm(R, axis=0)
    den = np.linalg.norm(SX, axis=0) + np.abs(values) * np.linalg.norm(MX, axis=0)
    return num / np.where(den > 0, den, 1.0)


def _normalize(M, values, vectors):
    order = np.argsort(values, kind="stable")
    values = np.asarray(values)[order]
    vectors = np.asarray(vectors)[:, order]
    norms = np.sqrt(np.abs(np.einsum("ij,ij->j", vectors.conj(), M @ vectors)))
    vectors = vectors / norms[None, :]
    # deterministic sign: largest-magnitude component positive
    idx = np.argmax(np.abs(vectors), axis=0)
    phase = vectors[idx, np.arange(vectors.shape[1])]
    phase = phase / np.abs(phase)
    return values, vectors / phase[None, :]


def _inertia_below(S, M, sigma):
    """Number of pencil eigenvalues below ``sigma`` and the LU of S - sigma M."""
    A = (S - sigma * M).tocsc()
    lu = sla.splu(A, permc_spec="COLAMD", diag_pivot_thresh=0.0,
                  options=dict(SymmetricMode=True))
    if not np.array_equal(lu.perm_r, lu.perm_c):
        # row pivoting broke the symmetric structure; the count is meaningless
        return -1, lu
    return int(np.count_nonzero(lu.U.diagonal() < 0)), lu


def _dense(S, M, k):
    Sd = S.toarray() if sp.issparse(S) else np.asarray(S)
    Md = M.toarray() if sp.issparse(M) else np.asarray(M)
    try:
        w, v = la.eigh(Sd, Md, subset_by_index=[0, k - 1])
    except la.LinAlgError as exc:
        raise EigenError(f"M not positive definite: {exc}") from exc
    return w, v, 1


def _shift_invert(S, M, k, tol, seed, sigma, maxiter):
    n = S.shape[0]
    rng = np.random.default_rng(seed)
    if sigma is None:
        sigma = _estimate_floor(S, M, seed)
    lu = None
    for _ in range(60):
        try:
            below, lu = _inertia_below(S, M, sigma)
        except RuntimeError:
            # exactly singular at sigma
            sigma -= 1e-6 * (abs(sigma) + 1.0)
            continue
        if below == 0:
            break
        if below < 0:
            log.warning("inertia count unavailable at sigma=%g; shift not certified", sigma)
            break
        sigma -= 2.0 * (abs(sigma) + 1.0)
    else:
        raise EigenError("could not place the shift below the spectrum")
    op = sla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
    v0 = rng.standard_normal(n)
    ncv = min(n, max(2 * k + 1, 20))
    try:
        w, v = sla.eigsh(S, k=k, M=M, sigma=sigma, which="LM", OPinv=op, v0=v0,
                         ncv=ncv, tol=min(tol * 1e-2, 1e-12), maxiter=maxiter)
    except sla.ArpackNoConvergence as exc:
        raise EigenError("shift-invert Lanczos did not converge") from exc
    return w, v, 0


def _estimate_floor(S, M, seed):
    """A value near, and ideally below, the lowest eigenvalue of the pencil."""
    n = S.shape[0]
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        w, _ = sla.lobpcg(S, X, B=M, tol=1e-3, maxiter=100, largest=False)
    theta = float(w[0])
    return theta - 0.05 * (abs(theta) + 1.0)


def _ilu_preconditioner(S, M):
    n = S.shape[0]
    diag = S.diagonal()
    shift = 0.0
    if np.any(diag <= 0):
        shift = abs(diag.min()) + 1.0
    try:
        ilu = sla.spilu((S + shift * M).tocsc(), drop_tol=1e-4, fill_factor=10)
    except RuntimeError:
        return None
    return sla.LinearOperator((n, n), matvec=ilu.solve, dtype=float)


def _lobpcg(S, M, k, tol, seed, maxiter):
    n = S.shape[0]
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, k))
    precond = _ilu_preconditioner(S, M)
    history = []
    iterations = 0
    best = None
    while iterations < maxiter:
        chunk = min(STAGNATION_WINDOW, maxiter - iterations)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            w, X, _, res_hist = sla.lobpcg(S, X, B=M, M=precond, tol=tol, maxiter=chunk,
                                           largest=False, retLambdaHistory=True,
                                           retResidualNormsHistory=True)
        iterations += max(1, len(res_hist) - 1)
        history.extend(np.asarray(r).tolist() for r in res_hist)
        rel = relative_residuals(S, M, w, X)
        best = (w, X)
        if rel.max() <= tol:
            return w, X, iterations, history, False
        start = np.max(res_hist[0])
        end = np.max(res_hist[-1])
        if end > 0.99 * start:
            return best[0], best[1], iterations, history, True
    return best[0], best[1], iterations, history, True


def solve_lowest(S, M, k, tol=DEFAULT_TOL, seed=0, method="auto", sigma=None,
                 maxiter=None) -> EigenResult:
    """k lowest eigenpairs of ``S x = eps M x`` with certified residuals.

    Parameters
    ----------
    S, M : sparse matrices
        Symmetric pencil, ``M`` positive definite.
    k : int
        Number of eigenpairs.
    tol : float
        Bound on the relative residual of every returned pair.
    seed : int
        Seed of the starting subspace.
    method : {"auto", "dense", "shift_invert", "lobpcg"}
    sigma : float, optional
        Known lower bound (or estimate) for the spectrum, used as the shift.
    maxiter : int, optional
        Iteration cap; defaults to the module-level ``MAX_ITER``.
    """
    if maxiter is None:
        maxiter = MAX_ITER
    n = S.shape[0]
    if S.shape != M.shape or S.shape[0] != S.shape[1]:
        raise ValueError("S and M must be square with matching dimensions")
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")
    S = sp.csr_matrix(S)
    M = sp.csr_matrix(M)
    history = []
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT or k >= n - 1 else "shift_invert"
    if method == "shift_invert" and k >= n - 1:
        method = "dense"

    if method == "dense":
        w, v, iterations = _dense(S, M, k)
    elif method == "shift_invert":
        w, v, iterations = _shift_invert(S, M, k, tol, seed, sigma, maxiter)
    elif method == "lobpcg":
        w, v, iterations, history, stalled = _lobpcg(S, M, k, tol, seed, maxiter)
        if stalled:
            log.info("lobpcg stagnated after %d iterations; switching to shift-invert",
                     iterations)
            w, v, _ = _shift_invert(S, M, k, tol, seed, sigma, maxiter)
            method = "lobpcg+shift_invert"
    else:
        raise ValueError(f"unknown method {method!r}")

    w, v = _normalize(M, np.real(w), v)
    res = relative_residuals(S, M, w, v)
    result = EigenResult(values=w, vectors=v, residuals=res, iterations=iterations,
                         seed=seed, method=method, history=history)
    if np.any(res > tol):
        raise EigenError(f"residuals {res.max():.3e} exceed tol {tol:.1e}", result)
    return result


def rayleigh_quotient(S, M, x):
    x = np.asarray(x)
    den = np.vdot(x, M @ x).real
    if den == 0 or not np.any(x):
        raise ValueError("Rayleigh quotient of the zero vector")
    return float(np.vdot(x, S @ x).real / den)


def merge_pairs(values, vectors=None, rel_tol=1e-9):
    """Collapse the doubled spectrum of a real embedding of a Hermitian matrix.

    Consecutive values are paired in an ascending sweep; a leftover unpaired
    value signals a tolerance problem and raises.
    """
    values = np.asarray(values)
    if len(values) % 2:
        raise EigenError("odd number of eigenvalues cannot be pair-merged")
    merged, keep = [], []
    for i in range(0, len(values), 2):
        a, b = values[i], values[i + 1]
        if abs(a - b) > rel_tol * (1 + abs(a)):
            raise EigenError(f"unpaired eigenvalue {a!r} (partner {b!r}); "
                             "doubled-embedding tolerance misconfigured")
        merged.append(0.5 * (a + b))
        keep.append(i)
    merged = np.array(merged)
    if vectors is None:
        return merged
    return merged, vectors[:, keep]
