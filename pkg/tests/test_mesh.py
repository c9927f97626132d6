import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pixhomog.coarsen import coarsen_variant_a, quadtree_coarsen
from pixhomog.exceptions import PeriodicMismatch
from pixhomog.mesh import (ANCHORS, QuadtreeMesh, build_quadtree_mesh, build_uniform_mesh,
                           extract_constraints, linear_field)
from pixhomog.phase import Laminate, PhaseGrid, synth_microstructure


def grid(ids, eps=1.0):
    return PhaseGrid.from_ids(np.asarray(ids), phase_ids=(0, 1), eps_x=eps)


def random_quadtree(seed, n=16, steps=3):
    rng = np.random.default_rng(seed)
    blobs = (rng.random((n // 4, n // 4)) < 0.3).astype(int)
    return build_quadtree_mesh(grid(np.kron(blobs, np.ones((4, 4), int))), steps)


def brute_hanging(mesh):
    """{node: (a, b, t)} by testing every node against every leaf edge."""
    out = {}
    for e, (x, y, s) in enumerate(zip(mesh.leaf_ix, mesh.leaf_iy, mesh.leaf_size)):
        corners = mesh.elements[e]
        for n, (i, j) in enumerate(mesh.node_ij):
            if n in corners:
                continue
            c = mesh.node_ij[corners]
            for a, b in ((0, 1), (1, 2), (3, 2), (0, 3)):
                (ia, ja), (ib, jb) = c[a], c[b]
                if ia == ib == i and min(ja, jb) < j < max(ja, jb):
                    out[n] = (corners[a], corners[b], (j - ja) / (jb - ja))
                if ja == jb == j and min(ia, ib) < i < max(ia, ib):
                    out[n] = (corners[a], corners[b], (i - ia) / (ib - ia))
    return out


class TestUniformMesh:
    def test_two_by_two(self):
        m = build_uniform_mesh(grid([[0, 1], [1, 0]]))
        assert m.n_nodes == 9 and m.n_elements == 4 and not m.hanging

    def test_large_grid_dof_counts(self):
        m = build_uniform_mesh(grid(np.zeros((1024, 1024), int)))
        assert m.n_dofs == 2 * 1025 ** 2 == 2_101_250
        assert m.ndof == 2 * 1024 ** 2 == 2_097_152

    def test_blend_material_reference(self):
        g = coarsen_variant_a(grid([[0, 0, 1, 1], [0, 1, 1, 1], [0, 0, 0, 0], [1, 1, 1, 1]]))
        m = build_uniform_mesh(g)
        np.testing.assert_allclose(m.element_weights()[0], [0.75, 0.25])
        np.testing.assert_allclose(m.element_weights()[1], [0.0, 1.0])

    def test_counterclockwise_connectivity(self):
        m = build_uniform_mesh(grid(np.zeros((3, 3), int)))
        for conn in m.elements:
            p = m.nodes[conn]
            area = 0.5 * np.sum(p[:, 0] * np.roll(p[:, 1], -1) - np.roll(p[:, 0], -1) * p[:, 1])
            assert area > 0

    def test_node_order_lexicographic(self):
        m = random_quadtree(3)
        keys = m.node_ij[:, 1] * (m.nx + 1) + m.node_ij[:, 0]
        assert np.all(np.diff(keys) > 0)

    def test_boundary_classes(self):
        cls = build_uniform_mesh(grid(np.zeros((2, 2), int))).boundary_class()
        assert list(cls).count("corner") == 4
        assert list(cls).count("interior") == 1
        assert {c for c in cls} == {"corner", "left", "right", "bottom", "top", "interior"}


class TestQuadtreeMesh:
    def test_tiling_rejected(self):
        g = grid(np.zeros((4, 4), int))
        with pytest.raises(ValueError):
            QuadtreeMesh(g, [0], [0], [2])
        with pytest.raises(ValueError):
            QuadtreeMesh(g, [3], [3], [4])

    def test_laminate_hanging_nodes_match_scan(self):
        m = build_quadtree_mesh(synth_microstructure(Laminate(0.25, "x"), 8, 8), 1)
        scan = brute_hanging(m)
        assert scan, "expected hanging nodes between 2h and h leaves"
        got = {h.node: (h.master_a, h.master_b, h.t) for h in m.hanging}
        assert got == scan

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 1000))
    def test_hanging_nodes_on_master_edges(self, seed):
        m = random_quadtree(seed)
        got = {h.node: (h.master_a, h.master_b, h.t) for h in m.hanging}
        assert got == brute_hanging(m)
        for h in m.hanging:
            p = (1 - h.t) * m.nodes[h.master_a] + h.t * m.nodes[h.master_b]
            np.testing.assert_allclose(m.nodes[h.node], p, atol=1e-12)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 1000))
    def test_leaves_tile_domain(self, seed):
        m = random_quadtree(seed)
        assert np.sum(m.element_sizes ** 2) == pytest.approx(m.area, rel=1e-10)
        cover = np.zeros((m.ny, m.nx), int)
        for x, y, s in zip(m.leaf_ix, m.leaf_iy, m.leaf_size):
            cover[y:y + s, x:x + s] += 1
        assert np.all(cover == 1)

    def test_h_star(self):
        m = build_quadtree_mesh(grid(np.zeros((4, 4), int)), 1)
        assert m.n_elements == 4
        assert m.h_star == pytest.approx(0.5)


class TestConstraints:
    def test_uniform_two_by_two_rows(self):
        m = build_uniform_mesh(grid([[0, 1], [1, 0]]))
        c = extract_constraints(m)
        # one interior tie per side pair plus three corner ties
        assert c.n_pairs == 5
        assert c.n_rows == 2 * (1 + 5) == 12
        assert np.linalg.matrix_rank(c.G.toarray()) == c.n_rows

    def test_row_count_formula(self):
        m = random_quadtree(11)
        c = extract_constraints(m)
        assert c.n_rows == 2 * len(m.hanging) + 2 * c.n_pairs + 2
        assert c.n_hanging_rows == 2 * len(m.hanging)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 1000), st.integers(1, 4))
    def test_full_row_rank(self, seed, steps):
        c = extract_constraints(random_quadtree(seed, steps=steps))
        assert np.linalg.matrix_rank(c.G.toarray()) == c.n_rows

    def test_zero_strain_zero_gaps(self):
        c = extract_constraints(random_quadtree(5))
        assert not np.any(c.rhs(np.zeros((2, 2))))

    def test_unit_strain_gap(self):
        m = build_uniform_mesh(grid(np.zeros((4, 4), int), eps=2.0))
        c = extract_constraints(m)
        g = c.rhs(np.array([[1.0, 0.0], [0.0, 0.0]]), x0=(0.0, 0.0))
        rows = c.G.toarray()
        for r in range(c.n_hanging_rows, c.n_hanging_rows + c.n_periodic_rows):
            nodes = np.nonzero(rows[r])[0] // 2
            comp = np.nonzero(rows[r])[0][0] % 2
            dx = m.nodes[nodes, 0].max() - m.nodes[nodes, 0].min()
            expected = dx if comp == 0 else 0.0
            assert g[r] == pytest.approx(expected)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 1000), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
    def test_linear_field_satisfies_rows(self, seed, a, b, c_):
        m = random_quadtree(seed)
        c = extract_constraints(m)
        F = np.array([[a, b], [c_, -a]])
        u = linear_field(m, F, (0.3, -0.2))
        r = c.G @ u
        h = c.n_hanging_rows
        np.testing.assert_allclose(r[:h], 0.0, atol=1e-12)
        np.testing.assert_allclose(r[h:h + c.n_periodic_rows],
                                   c.rhs(F)[h:h + c.n_periodic_rows], atol=1e-12)

    def test_matching_pairs_offsets(self):
        m = build_uniform_mesh(grid(np.zeros((6, 6), int), eps=3.0))
        pairs = []
        for terms, offset in m.periodic_rows():
            assert len(terms) == 2
            (n1, c1), (n0, c0) = terms
            assert (c1, c0) == (1.0, -1.0)
            np.testing.assert_allclose(m.nodes[n1] - m.nodes[n0], offset, atol=1e-12)
            pairs.append(n1)
        assert len(set(pairs)) == len(pairs)

    def test_nonmatching_sides_are_interpolated(self):
        ids = np.zeros((16, 16), int)
        ids[4:12, 12:15] = 1  # interface near the right side only
        m = build_quadtree_mesh(grid(ids), 3)
        sizes = m.leaf_size_map()
        assert sizes[:, 0].max() > 1 and sizes[4:12, -1].max() == 1
        c = extract_constraints(m)
        assert any(len(t) == 3 for t, _ in m.periodic_rows())
        assert np.linalg.matrix_rank(c.G.toarray()) == c.n_rows

    @pytest.mark.parametrize("anchor", sorted(ANCHORS))
    def test_anchor_node(self, anchor):
        m = build_uniform_mesh(grid(np.zeros((2, 2), int)))
        c = extract_constraints(m, anchor=anchor)
        ax, ay = ANCHORS[anchor]
        np.testing.assert_array_equal(m.node_ij[c.anchor_node], [2 * ax, 2 * ay])

    def test_no_anchor(self):
        c = extract_constraints(build_uniform_mesh(grid(np.zeros((2, 2), int))), anchor=None)
        assert c.n_rows == 10 and c.anchor_node is None

    def test_bad_coupling_and_anchor(self):
        m = build_uniform_mesh(grid(np.zeros((2, 2), int)))
        with pytest.raises(ValueError):
            extract_constraints(m, coupling="kubc")
        with pytest.raises(ValueError):
            extract_constraints(m, anchor="centre")

    def test_trace_outside_span(self):
        with pytest.raises(PeriodicMismatch):
            QuadtreeMesh._trace_terms(np.array([0, 2]), np.array([0, 1]), 3)

    def test_ndof_counts_independent_dofs(self):
        for seed in range(3):
            m = random_quadtree(seed)
            G = extract_constraints(m).G.toarray()[:-2]
            assert m.ndof == m.n_dofs - np.linalg.matrix_rank(G)
