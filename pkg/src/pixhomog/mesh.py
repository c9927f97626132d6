"""Quadtree Q1 meshes over pixel grids and their linear constraints.

Leaves are axis-aligned squares whose corners sit on the pixel lattice.
Geometry is kept in integer lattice units (``i``, ``j``) so node matching is
exact; physical coordinates are ``i * cell_size``. Displacement dofs are
node-interleaved: ``2 * node + component``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .exceptions import PeriodicMismatch
from .phase import MaterialTable, PhaseGrid

ANCHORS = {
    "lower-left": (0, 0),
    "lower-right": (1, 0),
    "upper-left": (0, 1),
    "upper-right": (1, 1),
}


@dataclass(frozen=True)
class HangingNode:
    node: int
    master_a: int
    master_b: int
    t: float  # position along a -> b, u = (1 - t) u_a + t u_b


class QuadtreeMesh:
    """Leaf-cell mesh of a :class:`PhaseGrid`.

    Parameters
    ----------
    grid : PhaseGrid
        Material source; every leaf covers pixels with one weight vector.
    leaf_ix, leaf_iy, leaf_size : array_like of int
        Lower-left pixel index and edge length (in pixels) of each leaf.
    """

    def __init__(self, grid: PhaseGrid, leaf_ix, leaf_iy, leaf_size):
        self.grid = grid
        ix = np.asarray(leaf_ix, dtype=np.int64)
        iy = np.asarray(leaf_iy, dtype=np.int64)
        s = np.asarray(leaf_size, dtype=np.int64)
        nx, ny = grid.width_px, grid.height_px
        if np.any(s < 1) or np.any(ix < 0) or np.any(iy < 0) \
                or np.any(ix + s > nx) or np.any(iy + s > ny):
            raise ValueError("leaves must lie inside the grid")
        if int(np.sum(s * s)) != nx * ny:
            raise ValueError("leaves do not tile the grid")

        # leaf order: by (iy, ix) so matrices are reproducible
        order = np.lexsort((ix, iy))
        self.leaf_ix, self.leaf_iy, self.leaf_size = ix[order], iy[order], s[order]
        for a in (self.leaf_ix, self.leaf_iy, self.leaf_size):
            a.setflags(write=False)

        cx = np.stack([self.leaf_ix, self.leaf_ix + self.leaf_size,
                       self.leaf_ix + self.leaf_size, self.leaf_ix], axis=1)
        cy = np.stack([self.leaf_iy, self.leaf_iy,
                       self.leaf_iy + self.leaf_size, self.leaf_iy + self.leaf_size], axis=1)
        keys = cy * (nx + 1) + cx
        node_keys, inverse = np.unique(keys.ravel(), return_inverse=True)
        self._node_keys = node_keys
        self.node_ij = np.stack([node_keys % (nx + 1), node_keys // (nx + 1)], axis=1)
        self.nodes = self.node_ij * grid.cell_size
        self.elements = inverse.reshape(-1, 4)
        self.node_ij.setflags(write=False)
        self.nodes.setflags(write=False)
        self.elements.setflags(write=False)

        self.hanging = self._find_hanging()
        self._periodic = None

    # -- basic properties ---------------------------------------------------

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_dofs(self):
        return 2 * self.n_nodes

    @property
    def nx(self):
        return self.grid.width_px

    @property
    def ny(self):
        return self.grid.height_px

    @property
    def area(self):
        return self.grid.eps_x * self.grid.eps_y

    @property
    def element_sizes(self):
        """Physical edge length of every leaf (mm)."""
        return self.leaf_size * self.grid.cell_size

    @property
    def h_star(self):
        """Characteristic element length sqrt(area / number of elements)."""
        return float(np.sqrt(self.area / self.n_elements))

    def element_weights(self):
        """Phase weight vector of every leaf, shape (ne, nphase)."""
        return self.grid.weights[self.leaf_iy, self.leaf_ix]

    def element_labels(self):
        """Integer material label per leaf (equal labels = identical weights)."""
        labels, _ = self.grid.material_labels()
        return labels[self.leaf_iy, self.leaf_ix]

    def element_tensors(self, table: MaterialTable):
        stack = np.stack([table.tensor(p) for p in self.grid.phase_ids])
        return np.einsum("ep,pij->eij", self.element_weights(), stack)

    def node_index(self, i, j):
        """Node id at lattice point (i, j), or -1 if there is none."""
        key = j * (self.nx + 1) + i
        k = np.searchsorted(self._node_keys, key)
        if k < len(self._node_keys) and self._node_keys[k] == key:
            return int(k)
        return -1

    def pixel_leaf_map(self):
        """Leaf index covering every pixel, shape (ny, nx)."""
        out = np.empty((self.ny, self.nx), dtype=np.int64)
        for e, (x, y, s) in enumerate(zip(self.leaf_ix, self.leaf_iy, self.leaf_size)):
            out[y:y + s, x:x + s] = e
        return out

    def leaf_size_map(self):
        out = np.empty((self.ny, self.nx), dtype=np.int64)
        for x, y, s in zip(self.leaf_ix, self.leaf_iy, self.leaf_size):
            out[y:y + s, x:x + s] = s
        return out

    # -- hanging nodes --------------------------------------------------------

    def _find_hanging(self):
        nx = self.nx
        big = np.nonzero(self.leaf_size > 1)[0]
        if len(big) == 0:
            return ()
        cand_key, cand_a, cand_b, cand_t = [], [], [], []
        for e in big:
            x, y, s = int(self.leaf_ix[e]), int(self.leaf_iy[e]), int(self.leaf_size[e])
            k = np.arange(1, s)
            n0, n1, n2, n3 = self.elements[e]
            # bottom, right, top (walking +x), left (walking +y)
            edges = (
                ((y * (nx + 1) + x + k), n0, n1),
                (((y + k) * (nx + 1) + x + s), n1, n2),
                (((y + s) * (nx + 1) + x + k), n3, n2),
                (((y + k) * (nx + 1) + x), n0, n3),
            )
            for keys, a, b in edges:
                cand_key.append(keys)
                cand_a.append(np.full(s - 1, a))
                cand_b.append(np.full(s - 1, b))
                cand_t.append(k / s)
        keys = np.concatenate(cand_key)
        pos = np.searchsorted(self._node_keys, keys)
        pos = np.minimum(pos, len(self._node_keys) - 1)
        hit = self._node_keys[pos] == keys
        a = np.concatenate(cand_a)[hit]
        b = np.concatenate(cand_b)[hit]
        t = np.concatenate(cand_t)[hit]
        nodes = pos[hit]
        order = np.argsort(nodes, kind="stable")
        return tuple(HangingNode(int(n), int(ma), int(mb), float(tt))
                     for n, ma, mb, tt in zip(nodes[order], a[order], b[order], t[order]))

    # -- periodic boundary --------------------------------------------------

    def _side_nodes(self, axis, value):
        """Nodes on a boundary side sorted along it: (positions, node ids)."""
        sel = self.node_ij[:, axis] == value
        ids = np.nonzero(sel)[0]
        pos = self.node_ij[ids, 1 - axis]
        order = np.argsort(pos)
        return pos[order], ids[order]

    @staticmethod
    def _trace_terms(pos, ids, p):
        """Interpolation terms of a side's piecewise-linear trace at position p."""
        k = np.searchsorted(pos, p)
        if k < len(pos) and pos[k] == p:
            return [(int(ids[k]), 1.0)]
        if k == 0 or k == len(pos):
            raise PeriodicMismatch(f"boundary position {p} outside the side's node span")
        p0, p1 = pos[k - 1], pos[k]
        t = (p - p0) / (p1 - p0)
        return [(int(ids[k - 1]), 1.0 - t), (int(ids[k]), t)]

    def periodic_rows(self):
        """Periodicity rows as ``(terms, offset)``.

        ``terms`` is a list of ``(node, coefficient)`` and the row states
        ``sum(c * u_node) = F @ offset`` for a macro displacement gradient F.
        Edge rows are placed at the union of node positions on the two
        opposite sides, so non-matching layouts are tied through their
        piecewise-linear traces. The three non-origin corners are tied to the
        origin corner.
        """
        if self._periodic is not None:
            return self._periodic
        nx, ny = self.nx, self.ny
        ex, ey = self.grid.eps_x, self.grid.eps_y
        rows = []
        for axis, lo_val, hi_val, n_along, offset in (
                (0, 0, nx, ny, (ex, 0.0)),   # left/right, positions along y
                (1, 0, ny, nx, (0.0, ey))):  # bottom/top, positions along x
            pos_lo, ids_lo = self._side_nodes(axis, lo_val)
            pos_hi, ids_hi = self._side_nodes(axis, hi_val)
            if pos_lo[0] != 0 or pos_lo[-1] != n_along or pos_hi[0] != 0 or pos_hi[-1] != n_along:
                raise PeriodicMismatch("boundary sides do not span the full cell")
            union = np.union1d(pos_lo, pos_hi)
            for p in union[(union > 0) & (union < n_along)]:
                terms = self._trace_terms(pos_hi, ids_hi, p) + \
                    [(n, -c) for n, c in self._trace_terms(pos_lo, ids_lo, p)]
                rows.append((terms, offset))
        origin = self.node_index(0, 0)
        for (i, j), offset in (((nx, 0), (ex, 0.0)), ((0, ny), (0.0, ey)), ((nx, ny), (ex, ey))):
            n = self.node_index(i, j)
            if n < 0 or origin < 0:
                raise PeriodicMismatch("missing corner node")
            rows.append(([(n, 1.0), (origin, -1.0)], offset))
        self._periodic = rows
        return rows

    @property
    def n_periodic(self):
        return len(self.periodic_rows())

    @property
    def ndof(self):
        """Independent displacement dofs under periodicity and hanging-node ties.

        Counts ``2 * (nodes - hanging - periodic ties)``; the two translation
        dofs fixed by the anchor are not subtracted.
        """
        return 2 * (self.n_nodes - len(self.hanging) - self.n_periodic)

    def boundary_class(self):
        """Per-node label: interior/left/right/bottom/top/corner."""
        i, j = self.node_ij[:, 0], self.node_ij[:, 1]
        on_x = (i == 0) | (i == self.nx)
        on_y = (j == 0) | (j == self.ny)
        out = np.full(self.n_nodes, "interior", dtype=object)
        out[i == 0] = "left"
        out[i == self.nx] = "right"
        out[j == 0] = "bottom"
        out[j == self.ny] = "top"
        out[on_x & on_y] = "corner"
        return out

    def __repr__(self):
        return (f"QuadtreeMesh({self.nx}x{self.ny} px, {self.n_elements} leaves, "
                f"{self.n_nodes} nodes, {len(self.hanging)} hanging)")


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def build_uniform_mesh(grid: PhaseGrid):
    """One Q1 element per pixel."""
    iy, ix = np.mgrid[0:grid.height_px, 0:grid.width_px]
    return QuadtreeMesh(grid, ix.ravel(), iy.ravel(), np.ones(ix.size, dtype=np.int64))


def build_quadtree_mesh(grid: PhaseGrid, adaptive_steps: int):
    """Uniform mesh followed by ``adaptive_steps`` quadtree coarsening steps."""
    from .coarsen import quadtree_coarsen

    mesh = build_uniform_mesh(grid)
    if adaptive_steps > 0:
        mesh, _ = quadtree_coarsen(mesh, adaptive_steps)
    return mesh


# ---------------------------------------------------------------------------
# Constraints
# ---------------------------------------------------------------------------

def linear_field(mesh: QuadtreeMesh, grad, u0=(0.0, 0.0), x0=(0.0, 0.0)):
    """Nodal values of ``u(x) = u0 + grad @ (x - x0)``, interleaved dofs."""
    grad = np.asarray(grad, dtype=float)
    x = mesh.nodes - np.asarray(x0, dtype=float)
    u = np.asarray(u0, dtype=float) + x @ grad.T
    return u.ravel()


class ConstraintSet:
    """Rows ``G d = g`` tying hanging nodes, periodic pairs and one anchor node.

    Row order: hanging rows, periodic rows, anchor rows; each entry in the
    first two groups yields one row per displacement component.
    ``anchor=None`` omits the anchor rows, leaving rigid translations free
    (only useful to provoke a singular system on purpose).
    """

    def __init__(self, mesh: QuadtreeMesh, anchor="lower-left"):
        if anchor is not None and anchor not in ANCHORS:
            raise ValueError(f"anchor must be one of {sorted(ANCHORS)} or None")
        self.mesh = mesh
        self.anchor = anchor
        if anchor is None:
            self.anchor_node = None
        else:
            ax, ay = ANCHORS[anchor]
            self.anchor_node = mesh.node_index(ax * mesh.nx, ay * mesh.ny)

        rows, cols, vals = [], [], []
        r = 0
        for hn in mesh.hanging:
            for c in range(2):
                rows += [r, r, r]
                cols += [2 * hn.node + c, 2 * hn.master_a + c, 2 * hn.master_b + c]
                vals += [1.0, -(1.0 - hn.t), -hn.t]
                r += 1
        self.n_hanging_rows = r
        for terms, _ in mesh.periodic_rows():
            for c in range(2):
                for n, coef in terms:
                    rows.append(r)
                    cols.append(2 * n + c)
                    vals.append(coef)
                r += 1
        self.n_periodic_rows = r - self.n_hanging_rows
        if self.anchor_node is not None:
            for c in range(2):
                rows.append(r)
                cols.append(2 * self.anchor_node + c)
                vals.append(1.0)
                r += 1
        G = sp.csr_matrix((vals, (rows, cols)), shape=(r, mesh.n_dofs))
        G.sum_duplicates()
        self.G = G

    @property
    def n_rows(self):
        return self.G.shape[0]

    @property
    def n_pairs(self):
        """Number of periodic ties L (each contributes two rows)."""
        return self.n_periodic_rows // 2

    def rhs(self, grad, u0=(0.0, 0.0), x0=None):
        """Prescribed right-hand side for the macro field ``u0 + grad (x - x0)``.

        Equivalent to ``G @ linear_field(...)``: hanging rows vanish for any
        affine field, periodic rows get ``grad @ offset``, the anchor gets the
        field value at the anchor node. ``x0`` defaults to the cell centre.
        """
        if x0 is None:
            x0 = (0.5 * self.mesh.grid.eps_x, 0.5 * self.mesh.grid.eps_y)
        return self.G @ linear_field(self.mesh, grad, u0, x0)

    def rhs_matrix(self, fields):
        """Stack ``G @ d`` for nodal fields given as columns of ``fields``."""
        return self.G @ np.asarray(fields)


def extract_constraints(mesh: QuadtreeMesh, coupling="periodic", anchor="lower-left"):
    if coupling != "periodic":
        raise ValueError("only periodic coupling is supported")
    return ConstraintSet(mesh, anchor=anchor)
