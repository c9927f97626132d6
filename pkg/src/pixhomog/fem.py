"""Q1 plane-strain elements, sparse assembly and constrained saddle solves."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import DegenerateElement, SingularSystem
from .mesh import ConstraintSet, QuadtreeMesh
from .phase import MaterialTable

log = logging.getLogger(__name__)

# reference square [-1, 1]^2, nodes counterclockwise from (-1, -1)
NODE_XI = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
_G = 1.0 / np.sqrt(3.0)
GAUSS_XI = NODE_XI * _G
GAUSS_W = np.ones(4)


def shape_functions(xi, eta):
    """Bilinear shape functions and their reference derivatives at (xi, eta)."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    N = 0.25 * (1.0 + np.multiply.outer(xi, NODE_XI[:, 0])) \
        * (1.0 + np.multiply.outer(eta, NODE_XI[:, 1]))
    dN_dxi = 0.25 * NODE_XI[:, 0] * (1.0 + np.multiply.outer(eta, NODE_XI[:, 1]))
    dN_deta = 0.25 * NODE_XI[:, 1] * (1.0 + np.multiply.outer(xi, NODE_XI[:, 0]))
    return N, dN_dxi, dN_deta


def strain_displacement(dN_dx, dN_dy):
    """3x8 B-matrix (engineering shear) from physical shape-function gradients."""
    B = np.zeros(dN_dx.shape[:-1] + (3, 8))
    B[..., 0, 0::2] = dN_dx
    B[..., 1, 1::2] = dN_dy
    B[..., 2, 0::2] = dN_dy
    B[..., 2, 1::2] = dN_dx
    return B


def element_stiffness(coords, C):
    """8x8 stiffness of a bilinear quad with 2x2 Gauss quadrature.

    Parameters
    ----------
    coords : array_like, shape (4, 2)
        Corner coordinates, counterclockwise.
    C : array_like, shape (3, 3)
        Voigt stiffness, constant over the element.
    """
    X = np.asarray(coords, dtype=float)
    C = np.asarray(C, dtype=float)
    K = np.zeros((8, 8))
    for (xi, eta), w in zip(GAUSS_XI, GAUSS_W):
        _, dxi, deta = shape_functions(xi, eta)
        J = np.array([dxi @ X, deta @ X])  # rows: d(x,y)/dxi, d(x,y)/deta
        detJ = np.linalg.det(J)
        if not detJ > 0.0:
            raise DegenerateElement(f"non-positive Jacobian {detJ:g}")
        grads = np.linalg.solve(J, np.array([dxi, deta]))
        B = strain_displacement(grads[0], grads[1])
        K += w * detJ * B.T @ C @ B
    return K


def _unit_square_b():
    """B-matrices of the unit square at the four Gauss points, shape (4, 3, 8)."""
    _, dxi, deta = shape_functions(GAUSS_XI[:, 0], GAUSS_XI[:, 1])
    return strain_displacement(2.0 * dxi, 2.0 * deta)


B_UNIT = _unit_square_b()
# K_e = sum_ij C_ij * _K_BASIS[i, j]; side-length independent for squares
_K_BASIS = 0.25 * np.einsum("gia,gjb->ijab", B_UNIT, B_UNIT)


def square_stiffness(C):
    """Stiffness of square elements for stacked tensors ``C`` (..., 3, 3)."""
    K = np.einsum("...ij,ijab->...ab", C, _K_BASIS)
    return 0.5 * (K + np.swapaxes(K, -1, -2))


def element_dofs(elements):
    e = np.asarray(elements)
    return np.stack([2 * e, 2 * e + 1], axis=-1).reshape(len(e), 8)


def assemble(mesh: QuadtreeMesh, table: MaterialTable):
    """Global stiffness over all node dofs (hanging nodes included), CSR."""
    Ke = square_stiffness(mesh.element_tensors(table))
    return assemble_elements(mesh, Ke)


def assemble_elements(mesh, Ke):
    dofs = element_dofs(mesh.elements)
    rows = np.repeat(dofs, 8, axis=1).ravel()
    cols = np.tile(dofs, (1, 8)).ravel()
    K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(mesh.n_dofs, mesh.n_dofs)).tocsr()
    K.sum_duplicates()
    return K


def gauss_strains(mesh: QuadtreeMesh, u):
    """Strains (engineering shear) at the 2x2 Gauss points, shape (ne, 4, 3[, k])."""
    u = np.asarray(u)
    ue = u[element_dofs(mesh.elements)]  # (ne, 8[, k])
    scale = 1.0 / mesh.element_sizes
    eps = np.einsum("gia,ea...->egi...", B_UNIT, ue)
    return eps * scale.reshape((-1,) + (1,) * (eps.ndim - 1))


def gauss_stresses(mesh, u, tensors):
    eps = gauss_strains(mesh, u)
    return np.einsum("eij,egj->egi", tensors, eps)


def energy_norm_sq(d_a, d_b, K):
    """``(d_a - d_b)^T K (d_a - d_b)``."""
    diff = np.asarray(d_a, dtype=float) - np.asarray(d_b, dtype=float)
    return float(diff @ (K @ diff))


def element_energies(mesh, u, tensors):
    """Per-element strain energy ``int eps : C : eps`` (twice the stored energy)."""
    eps = gauss_strains(mesh, u)
    detw = 0.25 * mesh.element_sizes ** 2
    return np.einsum("egi,eij,egj->e", eps, tensors, eps) * detw


# ---------------------------------------------------------------------------
# Saddle-point solve
# ---------------------------------------------------------------------------

@dataclass
class SaddleSolution:
    d: np.ndarray            # (n_dofs, n_rhs)
    lam: np.ndarray          # (n_constraints, n_rhs)
    constraint_residual: np.ndarray
    equilibrium_residual: np.ndarray


class SaddleSolver:
    """Factorizes ``[[K, G^T], [G, 0]]`` once and solves for many gap vectors."""

    def __init__(self, K, G):
        if isinstance(G, ConstraintSet):
            G = G.G
        self.K = sp.csr_matrix(K)
        self.G = sp.csr_matrix(G)
        n, m = self.K.shape[0], self.G.shape[0]
        self.n, self.m = n, m
        A = sp.bmat([[self.K, self.G.T], [self.G, None]], format="csc")
        try:
            self._lu = spla.splu(A, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SingularSystem(f"saddle system is singular: {exc}",
                                 null_space=_null_space(A)) from exc
        diag_u = np.abs(self._lu.U.diagonal())
        if diag_u.min() <= 1e-13 * diag_u.max():
            raise SingularSystem(
                f"saddle system is numerically singular "
                f"(pivot ratio {diag_u.min() / diag_u.max():.2e})",
                null_space=_null_space(A))

    def solve(self, g):
        g = np.asarray(g, dtype=float)
        squeeze = g.ndim == 1
        g2 = g.reshape(self.m, -1)
        rhs = np.zeros((self.n + self.m, g2.shape[1]))
        rhs[self.n:] = g2
        x = self._lu.solve(rhs)
        d, lam = x[:self.n], x[self.n:]
        gnorm = np.linalg.norm(g2, axis=0)
        cres = np.linalg.norm(self.G @ d - g2, axis=0)
        eq = self.K @ d + self.G.T @ lam
        scale = np.maximum(np.linalg.norm(self.K @ d, axis=0), gnorm)
        eres = np.linalg.norm(eq, axis=0) / np.where(scale > 0, scale, 1.0)
        crel = np.where(gnorm > 0, cres / np.where(gnorm > 0, gnorm, 1.0), cres)
        if np.any(crel > 1e-8) or np.any(eres > 1e-7):
            log.warning("saddle solve residuals high: constraint %.2e, equilibrium %.2e",
                        crel.max(), eres.max())
        if squeeze:
            return SaddleSolution(d[:, 0], lam[:, 0], crel, eres)
        return SaddleSolution(d, lam, crel, eres)


def _null_space(A, max_dim=3000):
    if A.shape[0] > max_dim:
        return None
    return scipy.linalg.null_space(A.toarray(), rcond=1e-10)


def solve_saddle(K, G, rhs_gaps):
    """Solve ``[[K, G^T], [G, 0]] [d; lam] = [0; g]`` for every column of ``rhs_gaps``."""
    return SaddleSolver(K, G).solve(rhs_gaps)
