"""Periodic homogenization and the two-scale (FE-HMM) cantilever solver.

The micro domain is one periodic unit cell centred at a macro quadrature
point. Micro problems are driven by the macro field linearized there,
``u_lin(x) = u(x_K) + grad u(x_K) (x - x_K)``, through the gaps ``G d_lin``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import (
    GAUSS_XI,
    SaddleSolver,
    assemble_elements,
    element_stiffness,
    gauss_strains,
    shape_functions,
    square_stiffness,
)
from .mesh import QuadtreeMesh, extract_constraints, linear_field
from .phase import MaterialTable

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Voigt helpers
# ---------------------------------------------------------------------------

def strain_to_voigt(eps):
    eps = np.asarray(eps, dtype=float)
    return np.array([eps[0, 0], eps[1, 1], eps[0, 1] + eps[1, 0]])


def voigt_to_strain(v):
    v = np.asarray(v, dtype=float)
    return np.array([[v[0], 0.5 * v[2]], [0.5 * v[2], v[1]]])


def unit_strain_states():
    """Macro strains whose Voigt vectors (engineering shear) are the unit vectors."""
    return [voigt_to_strain(e) for e in np.eye(3)]


def von_mises_plane_strain(stress, sigma_zz):
    """Von Mises stress from in-plane Voigt stress (..., 3) and out-of-plane sigma_zz."""
    sx, sy, txy = stress[..., 0], stress[..., 1], stress[..., 2]
    sz = sigma_zz
    return np.sqrt(0.5 * ((sx - sy) ** 2 + (sy - sz) ** 2 + (sz - sx) ** 2) + 3.0 * txy ** 2)


# ---------------------------------------------------------------------------
# Unit cell
# ---------------------------------------------------------------------------

class RVE:
    """Assembled and factorized periodic cell problem.

    Build once per micro mesh; every macro drive reuses the factorization.
    """

    def __init__(self, mesh: QuadtreeMesh, table: MaterialTable, anchor="lower-left"):
        self.mesh = mesh
        self.table = table
        self.tensors = mesh.element_tensors(table)
        self.K = assemble_elements(mesh, square_stiffness(self.tensors))
        self.constraints = extract_constraints(mesh, anchor=anchor)
        self.solver = SaddleSolver(self.K, self.constraints)

    @property
    def volume(self):
        return self.mesh.area

    @property
    def center(self):
        g = self.mesh.grid
        return np.array([0.5 * g.eps_x, 0.5 * g.eps_y])

    def solve_fields(self, fields):
        """Micro solutions for nodal macro fields (columns of ``fields``)."""
        return self.solver.solve(self.constraints.G @ np.asarray(fields))

    def solve_gradient(self, grad, u0=(0.0, 0.0)):
        """Micro displacement for the macro field ``u0 + grad (x - centre)``.

        The translation ``u0`` is superposed after the solve.
        """
        field = linear_field(self.mesh, grad, (0.0, 0.0), self.center)
        d = self.solve_fields(field).d
        d[0::2] += u0[0]
        d[1::2] += u0[1]
        return d

    def strain_modes(self):
        """Micro solutions of the three unit strain states, shape (n_dofs, 3)."""
        return self._strain_modes

    @cached_property
    def _strain_modes(self):
        fields = np.stack([linear_field(self.mesh, F, (0.0, 0.0), self.center)
                           for F in unit_strain_states()], axis=1)
        return self.solve_fields(fields).d

    @cached_property
    def homogenized(self):
        D = self._strain_modes
        A = D.T @ (self.K @ D) / self.volume
        return 0.5 * (A + A.T)


def homogenized_tensor(mesh: QuadtreeMesh, table: MaterialTable, anchor="lower-left"):
    """Effective Voigt stiffness of the periodic cell (energy average)."""
    return RVE(mesh, table, anchor=anchor).homogenized


def voigt_bound(fractions, table):
    return sum(f * table.tensor(p) for p, f in fractions.items())


def reuss_bound(fractions, table):
    return np.linalg.inv(sum(f * np.linalg.inv(table.tensor(p)) for p, f in fractions.items()))


def laminate_tensor(fractions, tensors, normal="x"):
    """Exact effective stiffness of a layered medium.

    ``normal`` is the layer normal: ``"x"`` for phase bands that run along y
    (layers stacked in x). Strain components tangential to the layers and
    stress components acting on the layer planes are uniform.
    """
    n_idx = [0, 2] if normal == "x" else [1, 2]
    t_idx = [1] if normal == "x" else [0]
    inv_nn = np.zeros((2, 2))
    inv_nn_nt = np.zeros((2, 1))
    tn_inv = np.zeros((1, 2))
    schur = np.zeros((1, 1))
    for f, C in zip(fractions, tensors):
        C = np.asarray(C, dtype=float)
        Cnn = C[np.ix_(n_idx, n_idx)]
        Cnt = C[np.ix_(n_idx, t_idx)]
        Ctn = C[np.ix_(t_idx, n_idx)]
        Ctt = C[np.ix_(t_idx, t_idx)]
        Cnn_inv = np.linalg.inv(Cnn)
        inv_nn += f * Cnn_inv
        inv_nn_nt += f * Cnn_inv @ Cnt
        tn_inv += f * Ctn @ Cnn_inv
        schur += f * (Ctt - Ctn @ Cnn_inv @ Cnt)
    # sigma_n = S (eps_n_avg + inv_nn_nt eps_t); sigma_t = tn_inv sigma_n + schur eps_t
    S = np.linalg.inv(inv_nn)
    A_nn = S
    A_nt = S @ inv_nn_nt
    A_tn = tn_inv @ S
    A_tt = tn_inv @ S @ inv_nn_nt + schur
    A = np.zeros((3, 3))
    A[np.ix_(n_idx, n_idx)] = A_nn
    A[np.ix_(n_idx, t_idx)] = A_nt
    A[np.ix_(t_idx, n_idx)] = A_tn
    A[np.ix_(t_idx, t_idx)] = A_tt
    return A


# ---------------------------------------------------------------------------
# Macro problem
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MacroProblem:
    """Plane-strain cantilever clamped at x=0 with an end line load.

    ``q0`` (N/mm) acts downward along the free edge x=L, so the total end
    force per unit thickness is ``q0 * B``. ``D`` is kept for reporting only.
    """

    L: float = 5000.0
    B: float = 1000.0
    D: float = 100.0
    q0: float = 0.02
    nx: int = 20
    ny: int = 4

    @cached_property
    def nodes(self):
        ys, xs = np.meshgrid(np.linspace(0.0, self.B, self.ny + 1),
                             np.linspace(0.0, self.L, self.nx + 1), indexing="ij")
        return np.stack([xs.ravel(), ys.ravel()], axis=1)

    @cached_property
    def elements(self):
        j, i = np.mgrid[0:self.ny, 0:self.nx]
        n0 = (j * (self.nx + 1) + i).ravel()
        return np.stack([n0, n0 + 1, n0 + self.nx + 2, n0 + self.nx + 1], axis=1)

    @property
    def n_dofs(self):
        return 2 * len(self.nodes)

    @property
    def element_size(self):
        return (self.L / self.nx, self.B / self.ny)

    @property
    def qp_weights(self):
        hx, hy = self.element_size
        return np.full(4, 0.25 * hx * hy)

    def qp_coords(self, element):
        N, _, _ = shape_functions(GAUSS_XI[:, 0], GAUSS_XI[:, 1])
        return N @ self.nodes[self.elements[element]]

    def shape_gradients(self, element, xi, eta):
        """Macro shape-function values and physical gradients at (xi, eta)."""
        X = self.nodes[self.elements[element]]
        N, dxi, deta = shape_functions(xi, eta)
        J = np.array([dxi @ X, deta @ X])
        grads = np.linalg.solve(J, np.array([dxi, deta]))
        return N, grads.T  # (4,), (4, 2)

    def fixed_dofs(self):
        left = np.nonzero(np.isclose(self.nodes[:, 0], 0.0))[0]
        return np.sort(np.concatenate([2 * left, 2 * left + 1]))

    def load_vector(self):
        f = np.zeros(self.n_dofs)
        right = np.nonzero(np.isclose(self.nodes[:, 0], self.L))[0]
        right = right[np.argsort(self.nodes[right, 1])]
        y = self.nodes[right, 1]
        for a, b, ya, yb in zip(right[:-1], right[1:], y[:-1], y[1:]):
            half = 0.5 * self.q0 * (yb - ya)
            f[2 * a + 1] -= half
            f[2 * b + 1] -= half
        return f

    def nearest_qp(self, x, y):
        """(element, qp index) of the macro Gauss point closest to (x, y)."""
        best = None
        for e in range(len(self.elements)):
            d = np.hypot(*(self.qp_coords(e) - (x, y)).T)
            k = int(np.argmin(d))
            if best is None or d[k] < best[0]:
                best = (d[k], e, k)
        return best[1], best[2]


def _element_dofs(elem):
    return np.stack([2 * elem, 2 * elem + 1], axis=-1).ravel()


def solve_macro(macro: MacroProblem, element_matrices):
    """Assemble per-element 8x8 matrices, clamp x=0 and solve for the end load."""
    n = macro.n_dofs
    rows, cols, vals = [], [], []
    for e, elem in enumerate(macro.elements):
        dofs = _element_dofs(elem)
        rows.append(np.repeat(dofs, 8))
        cols.append(np.tile(dofs, 8))
        vals.append(np.asarray(element_matrices[e]).ravel())
    K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    f = macro.load_vector()
    fixed = macro.fixed_dofs()
    free = np.setdiff1d(np.arange(n), fixed)
    u = np.zeros(n)
    if np.any(f[free] != 0.0):
        u[free] = spla.spsolve(K[free][:, free].tocsc(), f[free])
    return MacroSolution(macro, u, K)


def single_scale_stiffnesses(macro: MacroProblem, C):
    Ke = element_stiffness(macro.nodes[macro.elements[0]], C)
    return [Ke] * len(macro.elements)


def solve_single_scale(macro: MacroProblem, C):
    """Standard FEM with a constant effective tensor."""
    return solve_macro(macro, single_scale_stiffnesses(macro, C))


@dataclass
class MacroSolution:
    macro: MacroProblem
    u: np.ndarray
    K: sp.csr_matrix

    @property
    def u_max(self):
        """Largest transverse (y) deflection magnitude."""
        return float(np.max(np.abs(self.u[1::2])))

    def energy_norm(self, other=None):
        d = self.u if other is None else self.u - other.u
        return float(np.sqrt(max(d @ (self.K @ d), 0.0)))

    def qp_state(self, element, qp):
        """Displacement and displacement gradient at a macro Gauss point."""
        xi, eta = GAUSS_XI[qp]
        N, grads = self.macro.shape_gradients(element, xi, eta)
        ue = self.u[_element_dofs(self.macro.elements[element])].reshape(4, 2)
        return N @ ue, ue.T @ grads  # u (2,), grad[i, j] = du_i/dx_j


# ---------------------------------------------------------------------------
# FE-HMM
# ---------------------------------------------------------------------------

def macro_unit_fields(rve: RVE, macro: MacroProblem, element, qp, translation=True):
    """Nodal micro fields of the linearized macro unit states, shape (n_mic, 8).

    With ``translation=False`` the constant part ``N_I(x_K) e_i`` is dropped;
    it only adds a rigid translation to the micro response.
    """
    xi, eta = GAUSS_XI[qp]
    N, grads = macro.shape_gradients(element, xi, eta)
    cols = []
    for I in range(4):
        for i in range(2):
            e_i = np.eye(2)[i]
            u0 = N[I] * e_i if translation else np.zeros(2)
            cols.append(linear_field(rve.mesh, np.outer(e_i, grads[I]), u0, rve.center))
    return np.stack(cols, axis=1)


def _gradient_responses(rve, macro, element, qp):
    return rve.solve_fields(macro_unit_fields(rve, macro, element, qp, translation=False)).d


def transformation_matrix(rve: RVE, macro: MacroProblem, element, qp):
    """Micro responses to the 8 macro unit displacement states (column 2I + i).

    The translation ``N_I(x_K) e_i`` of each state is superposed exactly after
    the solve; solving for it would only add round-off to the gradient part.
    """
    T = _gradient_responses(rve, macro, element, qp)
    xi, eta = GAUSS_XI[qp]
    N, _ = macro.shape_gradients(element, xi, eta)
    for I in range(4):
        T[0::2, 2 * I] += N[I]
        T[1::2, 2 * I + 1] += N[I]
    return T


def macro_element_stiffness(Ts, Ks, weights, volumes):
    """``sum_l w_l / |K_l| * T_l^T K_l T_l``."""
    k = np.zeros((8, 8))
    for T, K, w, vol in zip(Ts, Ks, weights, volumes):
        if w == 0.0:
            continue
        k += (w / vol) * (T.T @ (K @ T))
    return 0.5 * (k + k.T)


def fehmm_stiffnesses(macro: MacroProblem, micro, workers=1):
    """Macro element matrices from micro solves at every quadrature point.

    ``micro`` is an :class:`RVE` used at every point, or a callable
    ``(element, qp) -> RVE``. With ``workers > 1`` elements are processed by a
    thread pool; results keep element order, so output is run-to-run identical.
    """
    get = micro if callable(micro) else (lambda e, q: micro)

    def element(e):
        Ts, Ks, vols = [], [], []
        for q in range(4):
            rve = get(e, q)
            # rigid translations carry no energy; leave them out of T^T K T
            Ts.append(_gradient_responses(rve, macro, e, q))
            Ks.append(rve.K)
            vols.append(rve.volume)
        return macro_element_stiffness(Ts, Ks, macro.qp_weights, vols)

    ids = range(len(macro.elements))
    if workers <= 1:
        return [element(e) for e in ids]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(element, ids))


def fehmm_solve(macro: MacroProblem, micro, workers=1):
    return solve_macro(macro, fehmm_stiffnesses(macro, micro, workers))


@dataclass
class MicroState:
    d: np.ndarray              # nodal micro displacements
    strain: np.ndarray         # (ne, 4, 3) Gauss-point strains
    stress: np.ndarray         # (ne, 4, 3)
    sigma_zz: np.ndarray       # (ne, 4)
    macro_strain: np.ndarray   # Voigt, from the macro gradient

    @property
    def von_mises(self):
        return von_mises_plane_strain(self.stress, self.sigma_zz)

    def average_stress(self, mesh):
        w = 0.25 * mesh.element_sizes ** 2
        return np.einsum("e,egi->i", w, self.stress) / mesh.area

    def average_strain(self, mesh):
        w = 0.25 * mesh.element_sizes ** 2
        return np.einsum("e,egi->i", w, self.strain) / mesh.area


def micro_state(rve: RVE, d, macro_grad):
    strain = gauss_strains(rve.mesh, d)
    stress = np.einsum("eij,egj->egi", rve.tensors, strain)
    sigma_zz = rve.tensors[:, 0, 1][:, None] * (strain[..., 0] + strain[..., 1])
    return MicroState(d, strain, stress, sigma_zz, strain_to_voigt(macro_grad))


def micro_recover(solution: MacroSolution, element, qp, rve: RVE):
    """True micro fields driven by the solved macro displacement at one point."""
    u_at, grad = solution.qp_state(element, qp)
    d = rve.solve_gradient(grad, u_at)
    return micro_state(rve, d, grad)


def timoshenko_tip_deflection(A0, L, B, q0, kappa=5.0 / 6.0):
    """Cantilever end deflection with shear correction, per unit thickness.

    Bending modulus ``A11 - A12^2 / A22`` (free top/bottom faces),
    shear modulus ``A33``.
    """
    A0 = np.asarray(A0)
    P = q0 * B
    I = B ** 3 / 12.0
    E_bar = A0[0, 0] - A0[0, 1] ** 2 / A0[1, 1]
    return P * L ** 3 / (3.0 * E_bar * I) + P * L / (kappa * A0[2, 2] * B)
