"""True errors against reference solutions and Zienkiewicz-Zhu estimates.

True errors are evaluated on a uniform reference mesh: every coarse field is
sampled with its own bilinear shape functions at the reference 2x2 Gauss
points, then integrated with the reference elasticity field.
"""

from __future__ import annotations

import hashlib
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import NotNested
from .fem import GAUSS_XI, NODE_XI, gauss_strains, shape_functions
from .homogenize import RVE, MacroSolution
from .mesh import QuadtreeMesh, build_uniform_mesh
from .phase import MaterialTable, PhaseGrid

log = logging.getLogger(__name__)

# bilinear extrapolation from Gauss points to corners: N_g evaluated at sqrt(3) * node
_EXTRAP, _, _ = shape_functions(NODE_XI[:, 0] * np.sqrt(3.0), NODE_XI[:, 1] * np.sqrt(3.0))
# interpolation from corner values back to Gauss points
_INTERP, _, _ = shape_functions(GAUSS_XI[:, 0], GAUSS_XI[:, 1])


# ---------------------------------------------------------------------------
# Projection and true errors
# ---------------------------------------------------------------------------

def _leaf_gauss_points(mesh):
    """Physical Gauss-point coordinates of every leaf, shape (ne, 4, 2)."""
    h = mesh.grid.cell_size
    s = mesh.leaf_size[:, None]
    x = (mesh.leaf_ix[:, None] + 0.5 * s * (1.0 + GAUSS_XI[None, :, 0])) * h
    y = (mesh.leaf_iy[:, None] + 0.5 * s * (1.0 + GAUSS_XI[None, :, 1])) * h
    return np.stack([x, y], axis=-1)


def project_to_reference(u, mesh: QuadtreeMesh, reference: QuadtreeMesh):
    """Sample a coarse FE field at the Gauss points of a nested reference mesh.

    Returns ``(disp, strain)`` with shapes (n_ref, 4, 2) and (n_ref, 4, 3).
    """
    g, gr = mesh.grid, reference.grid
    if not (np.isclose(g.eps_x, gr.eps_x) and np.isclose(g.eps_y, gr.eps_y)):
        raise NotNested("meshes cover different domains")
    if gr.width_px % g.width_px or gr.height_px % g.height_px:
        raise NotNested(f"{gr.width_px} px is not a multiple of {g.width_px} px")
    r = gr.width_px // g.width_px
    if gr.height_px // g.height_px != r:
        raise NotNested("anisotropic refinement factor")

    owner = mesh.pixel_leaf_map()[reference.leaf_iy // r, reference.leaf_ix // r]
    cx0 = mesh.leaf_ix[owner] * r
    cy0 = mesh.leaf_iy[owner] * r
    cs = mesh.leaf_size[owner] * r
    fits = (reference.leaf_ix >= cx0) & (reference.leaf_iy >= cy0) \
        & (reference.leaf_ix + reference.leaf_size <= cx0 + cs) \
        & (reference.leaf_iy + reference.leaf_size <= cy0 + cs)
    if not np.all(fits):
        raise NotNested("reference leaves straddle coarse leaves")

    h = gr.cell_size
    pts = _leaf_gauss_points(reference)  # (n, 4, 2)
    size = (cs * h)[:, None]
    xi = 2.0 * (pts[..., 0] - (cx0 * h)[:, None]) / size - 1.0
    eta = 2.0 * (pts[..., 1] - (cy0 * h)[:, None]) / size - 1.0
    N, dxi, deta = shape_functions(xi, eta)  # (n, 4g, 4nodes)
    ue = np.asarray(u)[2 * mesh.elements[owner][..., None] + np.arange(2)]  # (n, 4, 2)
    disp = np.einsum("egn,enc->egc", N, ue)
    dx = 2.0 * dxi / size[..., None]
    dy = 2.0 * deta / size[..., None]
    strain = np.stack([
        np.einsum("egn,en->eg", dx, ue[..., 0]),
        np.einsum("egn,en->eg", dy, ue[..., 1]),
        np.einsum("egn,en->eg", dy, ue[..., 0]) + np.einsum("egn,en->eg", dx, ue[..., 1]),
    ], axis=-1)
    return disp, strain


def _gauss_weights(reference):
    return 0.25 * reference.element_sizes ** 2  # w_g * det J per Gauss point


def element_error_sq(u_a, mesh_a, u_b, mesh_b, reference, ref_tensors):
    """Per-reference-element squared energy error."""
    _, ea = project_to_reference(u_a, mesh_a, reference)
    if u_b is None:
        diff = ea
    else:
        _, eb = project_to_reference(u_b, mesh_b, reference)
        diff = ea - eb
    return np.einsum("egi,eij,egj->e", diff, ref_tensors, diff) * _gauss_weights(reference)


def true_error(u_a, mesh_a, u_b, mesh_b, reference, ref_tensors):
    """Energy-norm distance of two nested FE fields, measured on ``reference``.

    ``u_b=None`` gives the energy norm of ``u_a``.
    """
    return float(np.sqrt(max(element_error_sq(u_a, mesh_a, u_b, mesh_b,
                                              reference, ref_tensors).sum(), 0.0)))


def displacement_error(u_a, mesh_a, u_b, mesh_b, reference):
    """L2 distance of two nested FE displacement fields."""
    da, _ = project_to_reference(u_a, mesh_a, reference)
    db, _ = project_to_reference(u_b, mesh_b, reference)
    w = _gauss_weights(reference)
    return float(np.sqrt(np.einsum("e,egc->", w, (da - db) ** 2)))


# ---------------------------------------------------------------------------
# Micro error decomposition
# ---------------------------------------------------------------------------

class ReferenceCache:
    """On-disk store of micro solutions keyed by image, mesh, drive and materials."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(mesh: QuadtreeMesh, table: MaterialTable, grad):
        h = hashlib.sha256()
        h.update(mesh.grid.weights.tobytes())
        h.update(repr((mesh.grid.phase_ids, mesh.grid.cell_size)).encode())
        for a in (mesh.leaf_ix, mesh.leaf_iy, mesh.leaf_size):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update(repr(table.to_dict()).encode())
        h.update(np.asarray(grad, dtype=float).tobytes())
        return h.hexdigest()[:32]

    def get(self, key):
        path = self.dir / f"{key}.npy"
        return np.load(path) if path.exists() else None

    def put(self, key, u):
        np.save(self.dir / f"{key}.npy", u)


def solve_micro(mesh: QuadtreeMesh, table: MaterialTable, grad, cache=None):
    """Micro displacement of a periodic cell for macro gradient ``grad``."""
    key = None
    if cache is not None:
        key = cache.key(mesh, table, grad)
        hit = cache.get(key)
        if hit is not None:
            return hit
    u = RVE(mesh, table).solve_gradient(grad)
    if cache is not None:
        cache.put(key, u)
    return u


def check_resolves_image(mesh: QuadtreeMesh):
    """Every leaf must cover pixels of a single material."""
    labels, _ = mesh.grid.material_labels()
    for e in np.nonzero(mesh.leaf_size > 1)[0]:
        x, y, s = mesh.leaf_ix[e], mesh.leaf_iy[e], mesh.leaf_size[e]
        block = labels[y:y + s, x:x + s]
        if np.any(block != block[0, 0]):
            raise ValueError(f"leaf {e} spans several materials; the mesh does not resolve the image")


@dataclass
class ErrorBreakdown:
    """Micro errors of one (resolution, mesh) configuration against a reference.

    All norms use the reference-resolution elasticity field. ``e_disc_own``
    measures the discretization error in the working image's own elasticity,
    the norm the recovery estimator approximates.
    """

    e_total: float
    e_disc: float
    e_model: float
    e_disc_own: float
    energy_norm: float          # ||u_ref||_A, normalizes the relative errors
    h_star: float
    h_box: float
    ndof: int
    element_total: np.ndarray = field(repr=False)   # per reference element, squared
    element_disc: np.ndarray = field(repr=False)
    element_model: np.ndarray = field(repr=False)

    @property
    def triangle_ok(self):
        return self.e_total <= self.e_disc + self.e_model + 1e-12

    @property
    def relative(self):
        n = self.energy_norm
        return {"e_total": self.e_total / n, "e_disc": self.e_disc / n, "e_model": self.e_model / n}


@dataclass
class MicroFields:
    """Solutions entering one error decomposition."""

    working_mesh: QuadtreeMesh
    u_working: np.ndarray
    fine_mesh: QuadtreeMesh        # working image, reference discretization
    u_fine: np.ndarray
    reference_mesh: QuadtreeMesh   # reference image, reference discretization
    u_reference: np.ndarray


def decompose_micro_error(working_mesh: QuadtreeMesh, reference_grid: PhaseGrid,
                          table: MaterialTable, grad, cache=None, u_reference=None):
    """Total, discretization and modeling micro errors of one configuration.

    Parameters
    ----------
    working_mesh : QuadtreeMesh
        Mesh of the (possibly coarsened) working image.
    reference_grid : PhaseGrid
        Reference image, at least as fine as the working image.
    grad : array_like (2, 2)
        Macro displacement gradient driving all three micro problems.
    u_reference : ndarray, optional
        Precomputed reference solution on ``build_uniform_mesh(reference_grid)``.

    Returns
    -------
    (ErrorBreakdown, MicroFields)
    """
    wg = working_mesh.grid
    if reference_grid.width_px % wg.width_px or reference_grid.height_px % wg.height_px:
        raise NotNested("reference resolution must be a multiple of the working resolution")
    r = reference_grid.width_px // wg.width_px
    if r < 1:
        raise ValueError("reference must be at least as fine as the working image")
    check_resolves_image(working_mesh)

    ref_mesh = build_uniform_mesh(reference_grid)
    fine_mesh = build_uniform_mesh(wg.upsample(r)) if r > 1 else build_uniform_mesh(wg)
    u_w = solve_micro(working_mesh, table, grad, cache)
    u_f = solve_micro(fine_mesh, table, grad, cache)
    u_r = u_reference if u_reference is not None else solve_micro(ref_mesh, table, grad, cache)

    C_ref = ref_mesh.element_tensors(table)
    C_own = fine_mesh.element_tensors(table)
    tot = element_error_sq(u_w, working_mesh, u_r, ref_mesh, ref_mesh, C_ref)
    dis = element_error_sq(u_w, working_mesh, u_f, fine_mesh, ref_mesh, C_ref)
    mod = element_error_sq(u_f, fine_mesh, u_r, ref_mesh, ref_mesh, C_ref)
    own = element_error_sq(u_w, working_mesh, u_f, fine_mesh, ref_mesh, C_own)
    energy = true_error(u_r, ref_mesh, None, None, ref_mesh, C_ref)

    bd = ErrorBreakdown(
        e_total=float(np.sqrt(tot.sum())), e_disc=float(np.sqrt(dis.sum())),
        e_model=float(np.sqrt(mod.sum())), e_disc_own=float(np.sqrt(own.sum())),
        energy_norm=energy, h_star=working_mesh.h_star, h_box=wg.cell_size,
        ndof=working_mesh.ndof, element_total=tot, element_disc=dis, element_model=mod)
    if not bd.triangle_ok:
        log.warning("triangle inequality violated: %g > %g + %g", bd.e_total, bd.e_disc, bd.e_model)
    return bd, MicroFields(working_mesh, u_w, fine_mesh, u_f, ref_mesh, u_r)


def elasticity_error(A_approx, A_ref, phase_tensors):
    """Coefficient error relative to the closest single-phase deviation.

    ``||A_ref - A_approx||_F / min_r ||A_ref - A_r||_F`` on the 3x3 Voigt
    matrices, so the phase contrast sets the scale.
    """
    A_ref = np.asarray(A_ref, dtype=float)
    num = np.linalg.norm(A_ref - np.asarray(A_approx, dtype=float))
    den = min(np.linalg.norm(A_ref - np.asarray(C, dtype=float)) for C in phase_tensors)
    if den == 0.0:
        raise ValueError("reference tensor coincides with a phase tensor")
    return float(num / den)


# ---------------------------------------------------------------------------
# Recovery-based estimation
# ---------------------------------------------------------------------------

SCHEMES = ("average", "phase_distinct")


@dataclass
class NodalStress:
    """Recovered nodal stresses.

    ``element_values[e, k]`` is the recovered stress used by element ``e`` at
    its corner ``k``. ``groups`` maps ``(node, label)`` to the recovered value
    of that group; the average scheme uses label ``-1`` for every node.
    """

    scheme: str
    element_values: np.ndarray
    group_keys: np.ndarray      # (ngroups, 2): node, label
    group_values: np.ndarray    # (ngroups, 3)

    def node_sets(self, node):
        """All recovered values at ``node`` keyed by material label."""
        sel = self.group_keys[:, 0] == node
        return {int(k): v for k, v in zip(self.group_keys[sel, 1], self.group_values[sel])}


def extrapolate_to_nodes(gauss_values):
    """Bilinear extrapolation of Gauss-point values (ne, 4, c) to the corners."""
    return np.einsum("ng,egc->enc", _EXTRAP, gauss_values)


def recover_nodal_stress(mesh: QuadtreeMesh, stress, scheme="average", labels=None):
    """Average element-extrapolated corner stresses over adjacent elements.

    ``average`` pools every element touching a node. ``phase_distinct`` pools
    only elements sharing the same material label, so a node bordered by k
    materials carries k values (duplex, quadruplex...).
    """
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}")
    ext = extrapolate_to_nodes(stress)  # (ne, 4, 3)
    nodes = mesh.elements.ravel()
    if scheme == "average":
        lab = np.full(nodes.shape, -1, dtype=np.int64)
    else:
        if labels is None:
            labels = mesh.element_labels()
        lab = np.repeat(np.asarray(labels, dtype=np.int64), 4)
    nlab = int(lab.max()) + 2
    key = nodes.astype(np.int64) * nlab + (lab + 1)
    ukeys, inv = np.unique(key, return_inverse=True)
    counts = np.bincount(inv)
    vals = np.stack([np.bincount(inv, weights=ext.reshape(-1, 3)[:, c]) for c in range(3)], axis=1)
    vals /= counts[:, None]
    group_keys = np.stack([ukeys // nlab, ukeys % nlab - 1], axis=1)
    return NodalStress(scheme, vals[inv].reshape(ext.shape), group_keys, vals)


@dataclass
class EstimateReport:
    scheme: str
    estimate: float
    element_sq: np.ndarray = field(repr=False)        # per-element squared estimate
    element_energy: np.ndarray = field(repr=False)    # per-element ||u||_A^2
    theta: float | None = None

    @property
    def relative_to_element(self):
        """Per-element estimate divided by the element's own energy norm."""
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.sqrt(self.element_sq / self.element_energy)
        return np.where(self.element_energy > 0, out, 0.0)

    @property
    def relative_to_total(self):
        """Per-element estimate divided by the total energy norm."""
        return np.sqrt(self.element_sq / self.element_energy.sum())


def zz_estimate(mesh: QuadtreeMesh, u, tensors, scheme="average", labels=None):
    """Recovery-based energy-norm estimate of the discretization error.

    Gauss stresses are extrapolated to the corners, recovered per ``scheme``,
    interpolated back to the Gauss points and compared with the raw stresses
    through each element's compliance.
    """
    eps = gauss_strains(mesh, u)
    sig = np.einsum("eij,egj->egi", tensors, eps)
    rec = recover_nodal_stress(mesh, sig, scheme, labels)
    sig_star = np.einsum("gn,enc->egc", _INTERP, rec.element_values)
    diff = sig_star - sig
    comp = np.linalg.inv(tensors)
    w = 0.25 * mesh.element_sizes ** 2
    contrib = np.einsum("egi,eij,egj->e", diff, comp, diff) * w
    if np.any(contrib < 0.0):
        warnings.warn("negative element estimate clamped to zero", RuntimeWarning)
        contrib = np.maximum(contrib, 0.0)
    energy = np.einsum("egi,egi->e", sig, eps) * w
    return EstimateReport(scheme, float(np.sqrt(contrib.sum())), contrib, energy)


def efficiency_index(estimate, e_disc):
    """Estimated over true discretization error; NaN when the true error is zero."""
    if isinstance(estimate, EstimateReport):
        estimate = estimate.estimate
    if e_disc <= 0.0:
        return float("nan")
    return float(estimate / e_disc)


def isolated_elements(mesh: QuadtreeMesh, labels=None):
    """Elements whose every node-neighbour carries a different material label."""
    if labels is None:
        labels = mesh.element_labels()
    labels = np.asarray(labels)
    ne = mesh.n_elements
    node_elems = [[] for _ in range(mesh.n_nodes)]
    for e, conn in enumerate(mesh.elements):
        for n in conn:
            node_elems[n].append(e)
    out = np.ones(ne, dtype=bool)
    for e, conn in enumerate(mesh.elements):
        for n in conn:
            if any(o != e and labels[o] == labels[e] for o in node_elems[n]):
                out[e] = False
                break
    return out


# ---------------------------------------------------------------------------
# Macro error
# ---------------------------------------------------------------------------

def _macro_grid_sample(sol: MacroSolution, ref):
    """Strains of a macro solution at the Gauss points of a nested finer macro mesh."""
    m, r = sol.macro, ref
    if r.nx % m.nx or r.ny % m.ny or not (np.isclose(m.L, r.L) and np.isclose(m.B, r.B)):
        raise NotNested("macro meshes are not nested")
    fx, fy = r.nx // m.nx, r.ny // m.ny
    hx, hy = r.L / r.nx, r.B / r.ny
    Hx, Hy = m.L / m.nx, m.B / m.ny
    j, i = np.mgrid[0:r.ny, 0:r.nx]
    i, j = i.ravel(), j.ravel()
    x = (i[:, None] + 0.5 * (1.0 + GAUSS_XI[None, :, 0])) * hx
    y = (j[:, None] + 0.5 * (1.0 + GAUSS_XI[None, :, 1])) * hy
    ci, cj = i // fx, j // fy
    owner = cj * m.nx + ci
    xi = 2.0 * (x - (ci * Hx)[:, None]) / Hx - 1.0
    eta = 2.0 * (y - (cj * Hy)[:, None]) / Hy - 1.0
    _, dxi, deta = shape_functions(xi, eta)
    ue = sol.u[2 * m.elements[owner][..., None] + np.arange(2)]
    dx, dy = 2.0 * dxi / Hx, 2.0 * deta / Hy
    return np.stack([
        np.einsum("egn,en->eg", dx, ue[..., 0]),
        np.einsum("egn,en->eg", dy, ue[..., 1]),
        np.einsum("egn,en->eg", dy, ue[..., 0]) + np.einsum("egn,en->eg", dx, ue[..., 1]),
    ], axis=-1), 0.25 * hx * hy


def macro_error(solution: MacroSolution, reference: MacroSolution, C):
    """Energy-norm distance between a macro solution and a finer nested reference."""
    ea, w = _macro_grid_sample(solution, reference.macro)
    eb, _ = _macro_grid_sample(reference, reference.macro)
    d = ea - eb
    return float(np.sqrt(max(np.einsum("egi,ij,egj->", d, np.asarray(C), d) * w, 0.0)))
