import numpy as np
import pytest
import scipy.sparse as sp
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from pixhomog.exceptions import DegenerateElement, SingularSystem
from pixhomog.fem import (SaddleSolver, assemble, element_dofs, element_energies,
                          element_stiffness, energy_norm_sq, gauss_strains, solve_saddle,
                          square_stiffness)
from pixhomog.mesh import build_quadtree_mesh, build_uniform_mesh, extract_constraints, linear_field
from pixhomog.phase import PhaseGrid, default_two_phase_table, plane_strain_tensor

UNIT = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def grid(ids, eps=1.0):
    return PhaseGrid.from_ids(np.asarray(ids), phase_ids=(0, 1), eps_x=eps)


def symbolic_unit_square_stiffness(C):
    """Exact integral of B^T C B over the unit square, via sympy."""
    x, y = sympy.symbols("x y")
    N = [(1 - x) * (1 - y), x * (1 - y), x * y, (1 - x) * y]
    B = sympy.zeros(3, 8)
    for a, Na in enumerate(N):
        B[0, 2 * a] = sympy.diff(Na, x)
        B[1, 2 * a + 1] = sympy.diff(Na, y)
        B[2, 2 * a] = sympy.diff(Na, y)
        B[2, 2 * a + 1] = sympy.diff(Na, x)
    Cs = sympy.Matrix(3, 3, lambda i, j: sympy.nsimplify(C[i, j], rational=True))
    K = (B.T * Cs * B).applyfunc(lambda f: sympy.integrate(f, (x, 0, 1), (y, 0, 1)))
    return np.array(K.evalf(20), dtype=float)


def dense_assembly(mesh, table):
    n = mesh.n_dofs
    K = np.zeros((n, n))
    tensors = mesh.element_tensors(table)
    for e, conn in enumerate(mesh.elements):
        Ke = element_stiffness(mesh.nodes[conn], tensors[e])
        dofs = np.ravel([[2 * a, 2 * a + 1] for a in conn])
        for i in range(8):
            for j in range(8):
                K[dofs[i], dofs[j]] += Ke[i, j]
    return K


def dense_saddle(K, G, g):
    K, G = np.asarray(K), np.asarray(G)
    m = G.shape[0]
    A = np.block([[K, G.T], [G, np.zeros((m, m))]])
    x = np.linalg.solve(A, np.concatenate([np.zeros(K.shape[0]), g]))
    return x[:K.shape[0]], x[K.shape[0]:]


class TestElementStiffness:
    def test_rigid_translations(self):
        K = element_stiffness(UNIT, plane_strain_tensor(100, 0.2))
        for c in range(2):
            v = np.zeros(8)
            v[c::2] = 1.0
            assert np.linalg.norm(K @ v) <= 1e-12 * np.linalg.norm(K)

    def test_rigid_rotation(self):
        K = element_stiffness(UNIT, plane_strain_tensor(100, 0.2))
        v = np.column_stack([-UNIT[:, 1], UNIT[:, 0]]).ravel()
        assert np.linalg.norm(K @ v) <= 1e-12 * np.linalg.norm(K)

    @pytest.mark.parametrize("E,nu", [(100.0, 0.2), (192.1, 0.2), (3.0, 0.45)])
    def test_matches_symbolic_integration(self, E, nu):
        C = plane_strain_tensor(E, nu)
        np.testing.assert_allclose(element_stiffness(UNIT, C),
                                   symbolic_unit_square_stiffness(C), rtol=1e-12, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(s=st.floats(1e-3, 1e3), x0=st.floats(-10, 10), y0=st.floats(-10, 10))
    def test_scale_and_shift_invariance(self, s, x0, y0):
        C = plane_strain_tensor(100, 0.2)
        K = element_stiffness(UNIT * s + (x0, y0), C)
        np.testing.assert_allclose(K, element_stiffness(UNIT, C), rtol=1e-9, atol=1e-9)

    def test_square_stiffness_batch(self):
        Cs = np.stack([plane_strain_tensor(100, 0.2), plane_strain_tensor(5, 0.1)])
        Ks = square_stiffness(Cs)
        for C, K in zip(Cs, Ks):
            np.testing.assert_allclose(K, element_stiffness(UNIT, C), rtol=1e-13, atol=1e-12)
            assert np.array_equal(K, K.T)

    def test_degenerate(self):
        with pytest.raises(DegenerateElement):
            element_stiffness(UNIT[::-1], plane_strain_tensor(100, 0.2))
        with pytest.raises(DegenerateElement):
            element_stiffness(np.zeros((4, 2)), plane_strain_tensor(100, 0.2))


class TestAssemble:
    def test_single_element(self, table):
        m = build_uniform_mesh(grid([[1]]))
        dofs = element_dofs(m.elements)[0]
        K = assemble(m, table).toarray()[np.ix_(dofs, dofs)]
        np.testing.assert_allclose(K, element_stiffness(UNIT, table.tensor(1)), rtol=1e-13)

    def test_patch_energy(self, table):
        m = build_uniform_mesh(grid(np.zeros((2, 2), int), eps=3.0))
        K = assemble(m, table)
        F = np.array([[1e-3, 4e-4], [-2e-4, 5e-4]])
        u = linear_field(m, F)
        eps = np.array([F[0, 0], F[1, 1], F[0, 1] + F[1, 0]])
        C = table.tensor(0)
        assert 0.5 * u @ (K @ u) == pytest.approx(0.5 * eps @ C @ eps * 9.0, rel=1e-12)

    def test_matches_dense_oracle(self, table):
        rng = np.random.default_rng(0)
        m = build_uniform_mesh(grid(rng.integers(0, 2, (4, 4))))
        K = assemble(m, table)
        Kd = dense_assembly(m, table)
        assert np.max(np.abs(K.toarray() - Kd)) <= 1e-12 * np.abs(Kd).max()
        assert abs(K - K.T).max() <= 1e-14 * abs(K).max()

    def test_quadtree_matches_dense_oracle(self, table):
        ids = np.zeros((8, 8), int)
        ids[2:4, 5:7] = 1
        m = build_quadtree_mesh(grid(ids), 2)
        assert m.leaf_size.max() > 1
        np.testing.assert_allclose(assemble(m, table).toarray(), dense_assembly(m, table),
                                   rtol=0, atol=1e-12 * 300)

    def test_energy_additivity(self, table):
        rng = np.random.default_rng(2)
        m = build_uniform_mesh(grid(rng.integers(0, 2, (4, 4))))
        u = rng.standard_normal(m.n_dofs)
        K = assemble(m, table)
        total = element_energies(m, u, m.element_tensors(table)).sum()
        assert total == pytest.approx(u @ (K @ u), rel=1e-12)

    def test_deterministic(self, table):
        rng = np.random.default_rng(4)
        m = build_uniform_mesh(grid(rng.integers(0, 2, (8, 8))))
        a, b = assemble(m, table), assemble(m, table)
        assert np.array_equal(a.indptr, b.indptr) and np.array_equal(a.data, b.data)

    def test_gauss_strains_of_linear_field(self):
        m = build_quadtree_mesh(grid(np.zeros((8, 8), int)), 2)
        F = np.array([[1.0, 2.0], [3.0, 4.0]])
        eps = gauss_strains(m, linear_field(m, F))
        np.testing.assert_allclose(eps, np.broadcast_to([1.0, 4.0, 5.0], eps.shape), atol=1e-12)

    def test_element_dofs(self):
        np.testing.assert_array_equal(element_dofs([[0, 1, 3, 2]]), [[0, 1, 2, 3, 6, 7, 4, 5]])


class TestSaddle:
    def test_zero_gap(self, table, checker4):
        m = build_uniform_mesh(checker4)
        sol = solve_saddle(assemble(m, table), extract_constraints(m).G, np.zeros(
            extract_constraints(m).n_rows))
        assert not np.any(sol.d) and not np.any(sol.lam)

    def test_affine_exactness_single_phase(self, table):
        m = build_uniform_mesh(grid(np.zeros((4, 4), int)))
        c = extract_constraints(m)
        F = np.array([[1.0, 0.0], [0.0, 0.0]])
        sol = solve_saddle(assemble(m, table), c, c.rhs(F))
        np.testing.assert_allclose(sol.d, linear_field(m, F, x0=(0.5, 0.5)), atol=1e-12)

    def test_checkerboard_shear_dense_oracle(self, table, checker4):
        m = build_uniform_mesh(checker4)
        c = extract_constraints(m)
        K = assemble(m, table)
        g = c.rhs(np.array([[0.0, 0.5], [0.5, 0.0]]))
        sol = solve_saddle(K, c.G, g)
        d, lam = dense_saddle(K.toarray(), c.G.toarray(), g)
        np.testing.assert_allclose(sol.d, d, rtol=0, atol=1e-10 * np.abs(d).max())
        np.testing.assert_allclose(sol.lam, lam, rtol=0, atol=1e-10 * np.abs(lam).max())

    def test_residual_contract(self, table):
        rng = np.random.default_rng(7)
        m = build_quadtree_mesh(grid(np.kron(rng.integers(0, 2, (4, 4)), np.ones((4, 4), int))), 2)
        c = extract_constraints(m)
        g = c.rhs(np.array([[0.3, 0.1], [-0.2, 0.4]]))
        sol = solve_saddle(assemble(m, table), c, g)
        assert sol.constraint_residual.max() <= 1e-10
        assert sol.equilibrium_residual.max() <= 1e-9
        assert sol.d @ (assemble(m, table) @ sol.d) >= 0

    def test_multi_rhs_equals_columns(self, table):
        rng = np.random.default_rng(1)
        m = build_uniform_mesh(grid(rng.integers(0, 2, (8, 8))))
        c = extract_constraints(m)
        solver = SaddleSolver(assemble(m, table), c)
        gs = np.stack([c.rhs(F) for F in (np.eye(2), np.array([[0, 1.0], [1.0, 0]]),
                                         np.array([[0.2, -0.1], [0.4, 0.3]]))], axis=1)
        multi = solver.solve(gs).d
        for k in range(3):
            single = solver.solve(gs[:, k]).d
            np.testing.assert_allclose(multi[:, k], single, rtol=1e-12,
                                       atol=1e-12 * np.abs(single).max())

    @settings(max_examples=8, deadline=None)
    @given(st.integers(0, 500), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
    def test_patch_test_with_hanging_nodes(self, seed, a, b, c_):
        rng = np.random.default_rng(seed)
        blobs = np.kron(rng.integers(0, 2, (4, 4)), np.ones((4, 4), int))
        m = build_quadtree_mesh(grid(blobs), 3)
        # geometry from the two-phase image, one material everywhere
        single = PhaseGrid.from_ids(np.zeros((16, 16), int), phase_ids=(0,))
        from pixhomog.mesh import QuadtreeMesh
        ms = QuadtreeMesh(single, m.leaf_ix, m.leaf_iy, m.leaf_size)
        t = default_two_phase_table()
        c = extract_constraints(ms)
        F = np.array([[a, b], [c_, 0.5]])
        sol = solve_saddle(assemble(ms, t), c, c.rhs(F))
        lin = linear_field(ms, F, x0=(0.5, 0.5))
        np.testing.assert_allclose(sol.d, lin, atol=1e-10 * max(1.0, np.abs(lin).max()))

    def test_singular_without_anchor(self, table, checker4):
        m = build_uniform_mesh(checker4)
        c = extract_constraints(m, anchor=None)
        with pytest.raises(SingularSystem) as info:
            SaddleSolver(assemble(m, table), c)
        ns = info.value.null_space
        assert ns is not None and ns.shape[1] >= 2


class TestEnergyNorm:
    def test_zero_for_equal(self, table, checker4):
        K = assemble(build_uniform_mesh(checker4), table)
        d = np.arange(K.shape[0], dtype=float)
        assert energy_norm_sq(d, d, K) == 0.0

    def test_rigid_translation(self, table, checker4):
        m = build_uniform_mesh(checker4)
        K = assemble(m, table)
        d = np.random.default_rng(0).standard_normal(m.n_dofs)
        shift = d.copy()
        shift[0::2] += 3.0
        assert abs(energy_norm_sq(d, shift, K)) <= 1e-12 * abs(K).max() * 9 * m.n_nodes

    def test_triple_product(self):
        rng = np.random.default_rng(3)
        A = rng.standard_normal((6, 6))
        K = A @ A.T
        a, b = rng.standard_normal(6), rng.standard_normal(6)
        assert energy_norm_sq(a, b, sp.csr_matrix(K)) == pytest.approx((a - b) @ K @ (a - b))
