"""P1 finite-element matrices of the fiber quadratic form on the cross section.

For interior hat functions phi_i the assembled matrices are

    M_ij = int phi_i phi_j               K_ij = int grad phi_i . grad phi_j
    A_ij = int (phi_i)'_tau (phi_j)'_tau D_ij = int phi_i (phi_j)'_tau

with the angular derivative u'_tau = t2 du/dt3 - t3 du/dt2.  With these
conventions the fiber form at wavenumber p is the Hermitian matrix

    H(p) = K + beta0^2 A + p^2 M - 2 i p beta0 D.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import Mesh, signed_areas

# three-point interior Gauss rule on the reference triangle (degree 2)
_GAUSS_BARY = np.array([[2 / 3, 1 / 6, 1 / 6],
                        [1 / 6, 2 / 3, 1 / 6],
                        [1 / 6, 1 / 6, 2 / 3]])
_GAUSS_W = np.full(3, 1 / 3)


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FiberMatrices:
    M: sp.csr_matrix
    K: sp.csr_matrix
    A: sp.csr_matrix
    D: sp.csr_matrix
    mesh: Mesh

    @property
    def n(self):
        return self.M.shape[0]


@dataclass(frozen=True, eq=False)
class FiberMatrix:
    """H(p) stored as a real symmetric part and a real antisymmetric part.

    ``H(p) = hermitian_part_real + 1j * hermitian_part_imag``.
    """
    hermitian_part_real: sp.csr_matrix
    hermitian_part_imag: sp.csr_matrix
    p: float
    beta0: float

    def as_complex(self):
        return (self.hermitian_part_real + 1j * self.hermitian_part_imag).tocsr()

    def real_embedding(self):
        """Symmetric real matrix acting on (Re x, Im x) with doubled spectrum."""
        S, B = self.hermitian_part_real, self.hermitian_part_imag
        return sp.bmat([[S, -B], [B, S]], format="csr")


def _element_data(mesh):
    p = mesh.nodes[mesh.triangles]                       # (nt, 3, 2)
    area = signed_areas(mesh.nodes, mesh.triangles)
    if np.any(area <= 0):
        raise AssemblyError("mesh has non-positive triangle areas")
    # gradients of barycentric coordinates
    x, y = p[..., 0], p[..., 1]
    gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    grad = np.stack([gx, gy], axis=-1) / (2 * area)[:, None, None]   # (nt, 3, 2)
    return p, area, grad


def element_matrices(mesh: Mesh):
    """Local 3x3 matrices (M, K, A, D) for every triangle."""
    p, area, grad = _element_data(mesh)
    nt = len(area)
    Me = (area / 12.0)[:, None, None] * (np.ones((3, 3)) + np.eye(3))
    Ke = area[:, None, None] * np.einsum("eid,ejd->eij", grad, grad)
    # angular derivative of phi_j at t: t2 * d3 phi_j - t3 * d2 phi_j
    Ae = np.zeros((nt, 3, 3))
    De = np.zeros((nt, 3, 3))
    for bary, w in zip(_GAUSS_BARY, _GAUSS_W):
        t = np.einsum("k,ekd->ed", bary, p)             # (nt, 2)
        tau = t[:, 0:1] * grad[..., 1] - t[:, 1:2] * grad[..., 0]   # (nt, 3)
        Ae += w * area[:, None, None] * tau[:, :, None] * tau[:, None, :]
        De += w * area[:, None, None] * bary[None, :, None] * tau[:, None, :]
    return Me, Ke, Ae, De


def _scatter(mesh, local):
    tris = mesh.triangles
    imap = mesh.interior_map
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    ri, ci = imap[rows], imap[cols]
    keep = (ri >= 0) & (ci >= 0)
    n = mesh.n_interior
    mat = sp.coo_matrix((local.reshape(-1)[keep], (ri[keep], ci[keep])), shape=(n, n))
    return mat.tocsr()


def assemble_matrices(mesh: Mesh) -> FiberMatrices:
    """Assemble M, K, A, D on interior nodes (Dirichlet by elimination)."""
    if mesh.n_interior < 1:
        raise AssemblyError("mesh has no interior nodes")
    Me, Ke, Ae, De = element_matrices(mesh)
    M, K, A, D = (_scatter(mesh, x) for x in (Me, Ke, Ae, De))
    # symmetric parts are symmetrized to remove summation-order noise
    M = ((M + M.T) * 0.5).tocsr()
    K = ((K + K.T) * 0.5).tocsr()
    A = ((A + A.T) * 0.5).tocsr()
    return FiberMatrices(M=M, K=K, A=A, D=D.tocsr(), mesh=mesh)


def fiber_matrix(mats: FiberMatrices, p: float, beta0: float) -> FiberMatrix:
    if beta0 < 0:
        raise ValueError("beta0 must be non-negative")
    S = (mats.K + beta0 ** 2 * mats.A + p ** 2 * mats.M).tocsr()
    B = (-2.0 * p * beta0 * mats.D).tocsr()
    return FiberMatrix(S, B, float(p), float(beta0))


def sparse_to_json(mat) -> str:
    coo = sp.coo_matrix(mat)
    return json.dumps({"rows": coo.row.tolist(), "cols": coo.col.tolist(),
                       "vals": coo.data.tolist(), "n": int(coo.shape[0])})


def sparse_from_json(text):
    d = json.loads(text)
    n = d["n"]
    return sp.coo_matrix((d["vals"], (d["rows"], d["cols"])), shape=(n, n)).tocsr()
