"""
The periodic cell problem
=========================

The effective tensor A0 from three unit macro strains on a periodic cell,
checked against the closed-form laminate and compared between a uniform
and a quadtree mesh of the same image.
"""

import numpy as np

from pixhomog import (RVE, CircularInclusions, Laminate, build_quadtree_mesh, build_uniform_mesh,
                      default_two_phase_table, homogenized_tensor, laminate_tensor,
                      synth_microstructure, volume_fractions)

np.set_printoptions(precision=4, suppress=True)
table = default_two_phase_table()

lam = synth_microstructure(Laminate(0.25, "x"), 64, 64)
f = volume_fractions(lam)[1]
A_fe = homogenized_tensor(build_uniform_mesh(lam), table)
A_ex = laminate_tensor([1 - f, f], [table.tensor(0), table.tensor(1)], "x")
print("laminate, finite elements\n", A_fe)
print("laminate, closed form\n", A_ex)
print("relative difference %.1e" % (np.linalg.norm(A_fe - A_ex) / np.linalg.norm(A_ex)))

grid = synth_microstructure(CircularInclusions(5, 0.2419, seed=7), 128, 128)
uni = RVE(build_uniform_mesh(grid), table)
quad = RVE(build_quadtree_mesh(grid, 4), table)
print("\ninclusions, uniform mesh (ndof %d)\n" % uni.mesh.ndof, uni.homogenized)
print("inclusions, quadtree mesh (ndof %d)\n" % quad.mesh.ndof, quad.homogenized)

# the fluctuation field for a unit shear, split into periodic and affine parts
F = np.array([[0.0, 0.5], [0.5, 0.0]])
d = uni.solve_gradient(F)
print("\nshear response: max |d| = %.4f mm, constraint residual %.1e"
      % (np.abs(d).max(), np.abs(uni.constraints.G @ d - uni.constraints.rhs(F)).max()))
