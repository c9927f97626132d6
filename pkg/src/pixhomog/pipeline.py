"""End-to-end runs behind the command-line subcommands.

Each ``run_*`` function takes a :class:`RunConfig`, writes its files into
``cfg.output_dir`` and returns the summary it wrote.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from . import io
from .coarsen import coarsen_uniform, quadtree_coarsen
from .errors import decompose_micro_error, efficiency_index, elasticity_error, zz_estimate
from .exceptions import ConfigError, SingularSystem
from .fem import SaddleSolver, assemble
from .homogenize import (RVE, fehmm_solve, micro_recover, micro_state, reuss_bound,
                         solve_single_scale, timoshenko_tip_deflection, voigt_bound)
from .mesh import ConstraintSet, QuadtreeMesh, build_uniform_mesh, linear_field
from .phase import PhaseGrid, load_grid, synth_microstructure, volume_fractions, write_pgm

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Inputs
# ---------------------------------------------------------------------------

def reference_image(cfg) -> PhaseGrid:
    """The finest image of the run (reference resolution)."""
    if cfg.synth is not None:
        w = cfg.reference_px or cfg.width_px
        aspect = (cfg.height_px / cfg.width_px) if cfg.width_px else 1.0
        return synth_microstructure(cfg.synth_spec(), w, int(round(w * aspect)), eps_x=cfg.eps_x)
    grid = load_grid(cfg.source, cfg.image_format, table=cfg.table)
    if cfg.reference_px is not None and cfg.reference_px != grid.width_px:
        raise ConfigError(f"image is {grid.width_px} px wide but reference.resolution_px is "
                          f"{cfg.reference_px}")
    if cfg.width_px is not None and cfg.width_px > grid.width_px:
        raise ConfigError("working resolution exceeds the image resolution")
    return grid


def working_image(cfg, reference: PhaseGrid):
    """Reference image coarsened down to the configured working resolution."""
    if cfg.width_px is None or cfg.width_px == reference.width_px:
        return reference
    steps = int(round(math.log2(reference.width_px / cfg.width_px)))
    grid, _ = coarsen_uniform(reference, cfg.variant, steps)
    return grid


def planned_mesh(cfg, grid: PhaseGrid):
    """Apply the configured uniform and adaptive coarsening to ``grid``."""
    g, report = coarsen_uniform(grid, cfg.variant, cfg.uniform_steps)
    mesh = build_uniform_mesh(g)
    if cfg.adaptive_steps > 0:
        mesh, report = quadtree_coarsen(mesh, cfg.adaptive_steps)
    return mesh, report


def macro_drive(cfg, A0):
    """Macro displacement gradient at the configured point of the single-scale solution."""
    sol = solve_single_scale(cfg.macro, A0)
    e, q = cfg.macro.nearest_qp(*cfg.point)
    _, grad = sol.qp_state(e, q)
    return grad, (e, q), sol


def _tensor_dict(A):
    A = np.asarray(A)
    return {"A11": A[0, 0], "A22": A[1, 1], "A33": A[2, 2], "A12": A[0, 1],
            "A13": A[0, 2], "A23": A[1, 2], "matrix": A}


def _fractions(grid):
    return {str(k): v for k, v in volume_fractions(grid).items()}


def _out(cfg):
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    return cfg.output_dir


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def run_synth(cfg):
    grid = reference_image(cfg)
    out = _out(cfg)
    write_pgm(grid, out / "image.pgm", cfg.table)
    summary = {"width_px": grid.width_px, "height_px": grid.height_px,
               "cell_size_mm": grid.cell_size, "fractions": _fractions(grid),
               "source": cfg.synth or str(cfg.source)}
    io.write_json(summary, out / "synth.json")
    return summary


def run_homogenize(cfg):
    grid = working_image(cfg, reference_image(cfg))
    mesh, report = planned_mesh(cfg, grid)
    A0 = RVE(mesh, cfg.table, cfg.anchor or "lower-left").homogenized
    fr = volume_fractions(mesh.grid)
    summary = {
        "A0": _tensor_dict(A0),
        "fractions": _fractions(mesh.grid),
        "ndof": mesh.ndof,
        "resolution_px": [mesh.nx, mesh.ny],
        "elements": mesh.n_elements,
        "voigt_bound": voigt_bound(fr, cfg.table),
        "reuss_bound": reuss_bound(fr, cfg.table),
        "coarsening": report.to_dict(),
    }
    io.write_json(summary, _out(cfg) / "homogenize.json")
    return summary


def _estimates(mesh, u, table, schemes):
    C = mesh.element_tensors(table)
    return {s: zz_estimate(mesh, u, C, s) for s in schemes}


def _study_row(step, kind, mesh, ndof0, bd, ests, schemes, e_A0):
    first = ests[schemes[0]]
    row = {
        "step": step, "kind": kind, "px": f"{mesh.nx}x{mesh.ny}", "ndof": mesh.ndof,
        "factor": mesh.ndof / ndof0, "e_total": bd.e_total, "e_est": first.estimate,
        "e_disc": bd.e_disc, "theta": efficiency_index(first, bd.e_disc_own),
        "e_model": bd.e_model, "e_disc_own": bd.e_disc_own, "h_star": bd.h_star,
        "e_A0": e_A0,
    }
    for s in schemes:
        row[f"e_est_{s}"] = ests[s].estimate
        row[f"theta_{s}"] = efficiency_index(ests[s], bd.e_disc_own)
    return row


def run_coarsen_study(cfg):
    """Error table over uniform coarsening steps, then adaptive (quadtree) steps."""
    out = _out(cfg)
    reference = reference_image(cfg)
    working = working_image(cfg, reference)
    table = cfg.table
    phase_tensors = [table.tensor(p) for p in reference.phase_ids]

    ref_mesh = build_uniform_mesh(reference)
    ref_rve = RVE(ref_mesh, table)
    A0_ref = ref_rve.homogenized
    grad, (e, q), _ = macro_drive(cfg, A0_ref)
    u_ref = ref_rve.solve_gradient(grad)

    rows, meshes = [], []
    for s in range(cfg.uniform_steps + 1):
        g, _ = coarsen_uniform(working, cfg.variant, s)
        meshes.append((s, f"variant-{cfg.variant}", build_uniform_mesh(g)))
    base = build_uniform_mesh(working)
    for k in range(1, cfg.adaptive_steps + 1):
        mesh, rep = quadtree_coarsen(base, k)
        if rep.steps_applied < k:
            break
        meshes.append((k, "quadtree", mesh))

    ndof0 = meshes[0][2].ndof
    last = None
    for step, kind, mesh in meshes:
        bd, fields = decompose_micro_error(mesh, reference, table, grad, u_reference=u_ref)
        ests = _estimates(mesh, fields.u_working, table, cfg.schemes)
        A0 = RVE(mesh, table).homogenized
        rows.append(_study_row(step, kind, mesh, ndof0, bd, ests, cfg.schemes,
                               elasticity_error(A0, A0_ref, phase_tensors)))
        cd = {}
        for s, est in ests.items():
            cd[f"est_rel_element_{s}"] = est.relative_to_element
            cd[f"est_rel_total_{s}"] = est.relative_to_total
        io.write_mesh_vtk(mesh, out / f"estimate_{kind}_{step}.vtk", cell_data=cd)
        last = bd

    energy = last.energy_norm
    io.write_mesh_vtk(ref_mesh, out / "true_error_last.vtk", cell_data={
        "e_total_rel": np.sqrt(last.element_total) / energy,
        "e_disc_rel": np.sqrt(last.element_disc) / energy,
        "e_model_rel": np.sqrt(last.element_model) / energy,
    })
    extra = ["kind", "e_disc_own", "h_star", "e_A0"]
    for s in cfg.schemes:
        extra += [f"e_est_{s}", f"theta_{s}"]
    io.write_error_table(rows, out / "coarsen_study.csv", extra_columns=extra)
    summary = {
        "reference_px": reference.width_px, "working_px": working.width_px,
        "A0_reference": _tensor_dict(A0_ref),
        "macro_gradient": grad, "macro_point": {"element": e, "qp": q},
        "energy_norm_reference": energy,
        "triangle_inequality": all(r["e_total"] <= r["e_disc"] + r["e_model"] + 1e-12
                                   for r in rows),
        "rows": rows,
    }
    io.write_json(summary, out / "coarsen_study.json")
    return summary


def run_macro(cfg):
    """Two-scale cantilever with the working RVE at every macro quadrature point."""
    out = _out(cfg)
    grid = working_image(cfg, reference_image(cfg))
    mesh, _ = planned_mesh(cfg, grid)
    rve = RVE(mesh, cfg.table, cfg.anchor or "lower-left")
    A0 = rve.homogenized
    sol = fehmm_solve(cfg.macro, rve, workers=cfg.threads)
    e, q = cfg.macro.nearest_qp(*cfg.point)
    state = micro_recover(sol, e, q, rve)
    vm = state.von_mises
    timo = timoshenko_tip_deflection(A0, cfg.macro.L, cfg.macro.B, cfg.macro.q0)
    io.write_macro_vtk(sol, out / "macro.vtk")
    io.write_mesh_vtk(mesh, out / "micro.vtk",
                      cell_data={"von_mises_max": vm.max(axis=1),
                                 "stress_xx": state.stress[..., 0].mean(axis=1),
                                 "stress_yy": state.stress[..., 1].mean(axis=1),
                                 "stress_xy": state.stress[..., 2].mean(axis=1)},
                      point_data={"u": state.d.reshape(-1, 2)})
    m = cfg.macro
    summary = {
        "u_max_mm": sol.u_max, "timoshenko_mm": timo,
        "ratio_to_timoshenko": sol.u_max / timo if timo else float("nan"),
        "von_mises_max_mpa": float(vm.max()),
        "macro_point": {"element": e, "qp": q, "x_mm": cfg.macro.qp_coords(e)[q]},
        "A0": _tensor_dict(A0), "micro_ndof": mesh.ndof,
        "macro": {"length_mm": m.L, "height_mm": m.B, "thickness_mm": m.D,
                  "q0_n_per_mm": m.q0, "nx": m.nx, "ny": m.ny},
    }
    io.write_json(summary, out / "macro_run.json")
    return summary


def run_validate(cfg, max_dense=4000):
    """Invariant checks on the configured working mesh.

    Raises :class:`SingularSystem` (with context) when the constrained cell
    problem cannot be factorized.
    """
    grid = working_image(cfg, reference_image(cfg))
    mesh, _ = planned_mesh(cfg, grid)
    checks = {}
    checks["leaves_tile_domain"] = bool(np.isclose(
        (mesh.element_sizes ** 2).sum(), grid.eps_x * grid.eps_y, rtol=1e-10))
    checks["fractions_sum_to_one"] = bool(abs(sum(volume_fractions(grid).values()) - 1) < 1e-12)

    cons = ConstraintSet(mesh, cfg.anchor)
    if cons.G.shape[0] <= max_dense:
        rank = np.linalg.matrix_rank(cons.G.toarray())
        checks["constraints_full_rank"] = bool(rank == cons.G.shape[0])
    expected = 2 * len(mesh.hanging) + cons.n_periodic_rows + (2 if cfg.anchor else 0)
    checks["constraint_row_count"] = bool(cons.n_rows == expected)

    K = assemble(mesh, cfg.table)
    try:
        SaddleSolver(K, cons)
    except SingularSystem as exc:
        raise SingularSystem(
            f"cell problem on {mesh.nx}x{mesh.ny} px mesh ({mesh.n_elements} leaves, "
            f"anchor={cfg.anchor}) is singular: {exc}", exc.null_space) from exc

    rve = RVE(mesh, cfg.table, cfg.anchor)
    A0 = rve.homogenized
    fr = volume_fractions(grid)
    eig = np.linalg.eigvalsh(A0)
    checks["A0_symmetric_positive_definite"] = bool(eig.min() > 0)
    tol = 1e-9 * np.abs(A0).max()
    checks["A0_below_voigt"] = bool(np.linalg.eigvalsh(voigt_bound(fr, cfg.table) - A0).min() > -tol)
    checks["A0_above_reuss"] = bool(np.linalg.eigvalsh(A0 - reuss_bound(fr, cfg.table)).min() > -tol)

    eps = np.array([[1e-3, 2e-4], [2e-4, -5e-4]])
    st = micro_state(rve, rve.solve_gradient(eps), eps)
    avg = st.average_stress(mesh)
    checks["hill_consistency"] = bool(np.allclose(avg, A0 @ st.macro_strain,
                                                  rtol=1e-8, atol=1e-12 * np.abs(avg).max()))

    single = QuadtreeMesh(PhaseGrid.from_ids(np.zeros((mesh.ny, mesh.nx), dtype=int),
                                             (grid.phase_ids[0],), grid.cell_size),
                          mesh.leaf_ix, mesh.leaf_iy, mesh.leaf_size)
    srve = RVE(single, cfg.table)
    d = srve.solve_gradient(eps)
    lin = linear_field(single, eps, (0.0, 0.0), srve.center)
    checks["patch_test"] = bool(np.allclose(d, lin, rtol=0, atol=1e-10 * np.abs(lin).max()))

    result = {"passed": all(checks.values()), "checks": checks,
              "mesh": {"px": [mesh.nx, mesh.ny], "elements": mesh.n_elements,
                       "hanging": len(mesh.hanging), "ndof": mesh.ndof}}
    io.write_json(result, _out(cfg) / "validate.json")
    return result


def run_export_mesh(cfg, matrix=False):
    out = _out(cfg)
    grid = working_image(cfg, reference_image(cfg))
    mesh, report = planned_mesh(cfg, grid)
    io.write_mesh_vtk(mesh, out / "mesh.vtk")
    if matrix:
        io.write_matrix_market(assemble(mesh, cfg.table), out / "stiffness.mtx")
        io.write_matrix_market(ConstraintSet(mesh, cfg.anchor).G, out / "constraints.mtx")
    summary = {"elements": mesh.n_elements, "nodes": mesh.n_nodes,
               "hanging": len(mesh.hanging), "ndof": mesh.ndof,
               "coarsening": report.to_dict()}
    io.write_json(summary, out / "mesh.json")
    (out / "coarsening.csv").write_text(report.to_csv())
    return summary
