"""
Pixel microstructures and their phase tensors
=============================================

A two-phase cell with a matrix (E = 100 MPa) and stiffer inclusions
(E = 192.1 MPa), both with nu = 0.2, generated at 128 x 128 pixels.
"""

import numpy as np

from pixhomog import (CircularInclusions, Laminate, default_two_phase_table, reuss_bound,
                      synth_microstructure, voigt_bound, volume_fractions)

table = default_two_phase_table()
for p in table.phases:
    C = table.tensor(p.id)
    print(f"phase {p.id}: E={p.E:6.1f} nu={p.nu}  A11={C[0, 0]:.2f} A12={C[0, 1]:.2f} A33={C[2, 2]:.2f}")

# five periodic discs covering about 24 % of the cell
grid = synth_microstructure(CircularInclusions(5, 0.2419, seed=7), 128, 128)
fr = volume_fractions(grid)
print("\ninclusions:", grid)
print("fractions:", {k: round(v, 4) for k, v in fr.items()})

# crude text rendering, one character per 4x4 block, top row first
ids = grid.ids()[::-4, ::4]
print("\n".join("".join("#" if v else "." for v in row) for row in ids))

# the elementary bounds bracket every effective tensor of these fractions
np.set_printoptions(precision=2, suppress=True)
print("\nVoigt bound\n", voigt_bound(fr, table))
print("Reuss bound\n", reuss_bound(fr, table))

lam = synth_microstructure(Laminate(0.25, "x"), 8, 8)
print("\nlaminate(0.25, x) at 8x8, top row first:")
print(lam.ids()[::-1])
