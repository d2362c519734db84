"""Ground state of the p = 0 fiber, band functions and their diagnostics."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .eigensolve import DEFAULT_TOL, EigenError, merge_pairs, solve_lowest
from .fiber_assembly import FiberMatrices, fiber_matrix

log = logging.getLogger(__name__)


@dataclass
class GroundState:
    E: float
    f: np.ndarray
    norm_sq: float
    angular_energy: float
    positivity_ok: bool
    residual: float
    beta0: float
    min_value: float
    min_node: tuple | None = None
    # angular energies at or below this are treated as discretization noise
    angular_energy_tol: float = 0.0

    @property
    def ratio(self):
        """Angular energy per unit norm, ||f'_tau||^2 / ||f||^2."""
        return self.angular_energy / self.norm_sq

    @property
    def angular_resolved(self):
        return self.angular_energy > self.angular_energy_tol


def with_refinement_tolerance(fine: GroundState, coarse: GroundState, factor=10.0):
    """Copy of ``fine`` whose angular-energy tolerance is ``factor`` times the
    change of the angular energy between ``coarse`` and ``fine``."""
    diff = abs(fine.angular_energy - coarse.angular_energy)
    return replace(fine, angular_energy_tol=factor * diff)


def ground_state(mats: FiberMatrices, beta0: float, tol=DEFAULT_TOL, seed=0) -> GroundState:
    """Lowest eigenpair of (K + beta0^2 A) f = E M f, sign-normalized.

    A non-positive nodal value does not raise; it clears ``positivity_ok``
    and records the offending node.
    """
    if beta0 < 0:
        raise ValueError("beta0 must be non-negative")
    S = (mats.K + beta0 ** 2 * mats.A).tocsr()
    res = solve_lowest(S, mats.M, 1, tol=tol, seed=seed, sigma=0.0)
    f = np.real(res.vectors[:, 0])
    if (mats.M @ f).sum() < 0:
        f = -f
    norm_sq = float(f @ (mats.M @ f))
    f = f / np.sqrt(norm_sq)
    norm_sq = float(f @ (mats.M @ f))
    ang = float(f @ (mats.A @ f))
    i_min = int(np.argmin(f))
    ok = bool(f[i_min] > 0)
    node = None
    if not ok:
        node = tuple(mats.mesh.interior_nodes[i_min].tolist())
        log.warning("ground state not positive at node %s (value %.3e)", node, f[i_min])
    return GroundState(E=float(res.values[0]), f=f, norm_sq=norm_sq, angular_energy=max(ang, 0.0),
                       positivity_ok=ok, residual=float(res.residuals[0]), beta0=beta0,
                       min_value=float(f[i_min]), min_node=node)


def untwisted_lowest(mats: FiberMatrices, tol=DEFAULT_TOL, seed=0) -> float:
    """Lowest Dirichlet eigenvalue of the cross section on the same mesh."""
    return float(solve_lowest(mats.K, mats.M, 1, tol=tol, seed=seed, sigma=0.0).values[0])


def default_p_grid(a, beta0, n_points=41):
    pm = 5.0 * (1.0 + a * beta0)
    return np.linspace(-pm, pm, n_points)


def _check_grid(p_grid):
    p = np.asarray(p_grid, dtype=float)
    if p.ndim != 1 or len(p) == 0:
        raise ValueError("p_grid must be a non-empty 1-D array")
    if np.any(np.diff(p) <= 0):
        raise ValueError("p_grid must be strictly ascending")
    scale = max(1.0, np.abs(p).max())
    if not np.allclose(p, -p[::-1], atol=1e-12 * scale, rtol=0):
        raise ValueError("p_grid must be symmetric about 0")
    if not np.any(np.abs(p) <= 1e-12 * scale):
        raise ValueError("p_grid must contain 0")
    return p


@dataclass
class BandData:
    p_grid: np.ndarray
    bands: np.ndarray
    vectors_at_zero: np.ndarray
    beta0: float
    mesh_fingerprint: str
    failures: list = field(default_factory=list)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.bands.shape[1]
        w.writerow(["p"] + [f"eps_{i + 1}" for i in range(n)])
        for p, row in zip(self.p_grid, self.bands):
            w.writerow([f"{p:.17g}"] + [f"{v:.17g}" for v in row])
        return buf.getvalue()


def fiber_eigenvalues(mats, p, beta0, n_bands, tol=DEFAULT_TOL, seed=0):
    """n_bands lowest eigenvalues of H(p), via the doubled real embedding if complex."""
    if p == 0.0 or beta0 == 0.0:
        H = fiber_matrix(mats, p, beta0)
        res = solve_lowest(H.hermitian_part_real, mats.M, n_bands, tol=tol, seed=seed, sigma=0.0)
        return res.values, res.vectors
    H = fiber_matrix(mats, p, beta0)
    big_M = sp.block_diag([mats.M, mats.M], format="csr")
    res = solve_lowest(H.real_embedding(), big_M, 2 * n_bands, tol=tol, seed=seed, sigma=0.0)
    values, vecs = merge_pairs(res.values, res.vectors)
    n = mats.n
    return values, vecs[:n] + 1j * vecs[n:]


def compute_bands(mats: FiberMatrices, beta0, p_grid, n_bands=4, tol=DEFAULT_TOL,
                  seed=0) -> BandData:
    """Band functions eps_n(p) on a symmetric grid.

    A failed solve at some p leaves NaNs in that row and a failure record;
    the remaining rows are still returned.
    """
    p_grid = _check_grid(p_grid)
    n_bands = min(n_bands, mats.n)
    bands = np.full((len(p_grid), n_bands), np.nan)
    failures = []
    vectors_at_zero = None
    for j, p in enumerate(p_grid):
        p = 0.0 if abs(p) <= 1e-12 * max(1.0, np.abs(p_grid).max()) else float(p)
        try:
            vals, vecs = fiber_eigenvalues(mats, p, beta0, n_bands, tol=tol, seed=seed)
        except EigenError as exc:
            failures.append({"index": j, "p": p, "error": str(exc)})
            continue
        bands[j] = vals
        if p == 0.0:
            vectors_at_zero = np.real(vecs)
    return BandData(p_grid=p_grid, bands=bands, vectors_at_zero=vectors_at_zero,
                    beta0=float(beta0), mesh_fingerprint=mats.mesh.fingerprint(),
                    failures=failures)


def band_diagnostics(band: BandData, a: float, evenness_rel_tol=1e-8):
    """Evenness, growth lower bound, outer monotonicity and threshold location."""
    p = band.p_grid
    eps = band.bands
    scale = float(np.nanmax(np.abs(eps)))
    defect = float(np.nanmax(np.abs(eps - eps[::-1])))
    even_tol = evenness_rel_tol * scale

    e1 = eps[:, 0]
    b0 = band.beta0
    bound = p ** 2 / (1.0 + a * a * b0 * b0)
    margin = e1 - bound
    violations = [{"p": float(pj), "eps_1": float(ej), "bound": float(bj)}
                  for pj, ej, bj in zip(p, e1, bound) if not ej >= bj]

    pmax = np.abs(p).max()
    mono_tol = 1e-10 * scale
    right = e1[p >= 0.5 * pmax]
    left = e1[p <= -0.5 * pmax]
    right_ok = bool(np.all(np.diff(right) >= -mono_tol))
    left_ok = bool(np.all(np.diff(left) <= mono_tol))

    j0 = int(np.argmin(np.abs(p)))
    j_min = int(np.nanargmin(e1))
    arg_tol = 1e-10 * scale
    at_zero = bool(e1[j0] <= e1[j_min] + arg_tol)
    return {
        "evenness": {"defect": defect, "tol": even_tol, "ok": bool(defect <= even_tol)},
        "lower_bound": {
            "a": float(a), "beta0": b0, "violations": violations,
            "min_margin": float(np.nanmin(margin)), "tol": 0.0,
            "ok": not violations,
        },
        "divergence_trend": {"right_nondecreasing": right_ok, "left_nonincreasing": left_ok,
                             "tol": mono_tol, "ok": right_ok and left_ok},
        "threshold": {"argmin_p": float(p[j_min]) if not at_zero else 0.0,
                      "eps1_at_zero": float(e1[j0]), "min_eps1": float(e1[j_min]),
                      "tol": arg_tol, "ok": at_zero},
        "failures": band.failures,
    }


def ground_state_csv(gs: GroundState, mats: FiberMatrices):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node_t2", "node_t3", "f_value"])
    for (t2, t3), v in zip(mats.mesh.interior_nodes, gs.f):
        w.writerow([f"{t2:.17g}", f"{t3:.17g}", f"{v:.17g}"])
    return buf.getvalue()
