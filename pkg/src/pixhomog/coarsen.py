"""Uniform pixel coarsening and microstructure-informed quadtree coarsening."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import DiscreteOnly, OddDimension
from .mesh import QuadtreeMesh, build_uniform_mesh
from .phase import PhaseGrid, volume_fractions


@dataclass
class CoarseningReport:
    kind: str                      # "variant-a", "variant-b" or "quadtree"
    steps_requested: int
    steps_applied: int
    resolution_before: tuple[int, int]
    resolution_after: tuple[int, int]
    ndof_before: int
    ndof_after: int
    fractions_original: dict
    fractions_achieved: dict
    ndof_per_step: list = field(default_factory=list)

    @property
    def factor(self):
        return self.ndof_after / self.ndof_before

    def to_dict(self):
        d = asdict(self)
        d["factor"] = self.factor
        d["fractions_original"] = {str(k): v for k, v in self.fractions_original.items()}
        d["fractions_achieved"] = {str(k): v for k, v in self.fractions_achieved.items()}
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    CSV_FIELDS = ("kind", "steps_requested", "steps_applied", "px_before", "px_after",
                  "ndof_before", "ndof_after", "factor")

    def csv_row(self):
        return {
            "kind": self.kind,
            "steps_requested": self.steps_requested,
            "steps_applied": self.steps_applied,
            "px_before": "x".join(map(str, self.resolution_before)),
            "px_after": "x".join(map(str, self.resolution_after)),
            "ndof_before": self.ndof_before,
            "ndof_after": self.ndof_after,
            "factor": f"{self.factor:.6f}",
        }

    def to_csv(self):
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerow(self.csv_row())
        return buf.getvalue()


def _uniform_ndof(grid):
    return 2 * grid.width_px * grid.height_px


def _check_even(grid):
    if grid.width_px % 2 or grid.height_px % 2:
        raise OddDimension(f"{grid.width_px}x{grid.height_px} px cannot be halved")


def _blocks(w):
    ny, nx, p = w.shape
    return w.reshape(ny // 2, 2, nx // 2, 2, p)


def coarsen_variant_a(grid: PhaseGrid):
    """Halve the resolution; each coarse pixel gets the mean weight vector."""
    _check_even(grid)
    w = _blocks(grid.weights).sum(axis=(1, 3)) * 0.25
    return PhaseGrid(w, grid.phase_ids, 2.0 * grid.cell_size)


def coarsen_variant_b(grid: PhaseGrid, reference_fractions=None):
    """Halve the resolution keeping discrete phases ("majority wins").

    Ties between equally represented phases are broken, block by block in
    row-major order, by the choice that leaves the running global fractions
    closest (Euclidean) to ``reference_fractions``. The running fractions count
    already decided coarse pixels plus the untouched fine pixels.
    """
    if not grid.is_discrete:
        raise DiscreteOnly("variant B needs a segmented (discrete) grid")
    _check_even(grid)
    if reference_fractions is None:
        reference_fractions = volume_fractions(grid)
    ref = np.array([reference_fractions.get(p, 0.0) for p in grid.phase_ids])

    counts = _blocks(grid.weights).sum(axis=(1, 3))  # (by, bx, nphase), integers 0..4
    nby, nbx, nph = counts.shape
    counts = counts.reshape(-1, nph)
    top = counts.max(axis=1, keepdims=True)
    is_top = counts == top
    n_top = is_top.sum(axis=1)
    winner = np.argmax(counts, axis=1)

    # running pixel totals: start from the fine image, apply blocks in order
    delta = -counts.copy()
    clear = n_top == 1
    delta[np.arange(len(winner))[clear], winner[clear]] += 4.0
    delta[~clear] = 0.0
    total = grid.weights.reshape(-1, nph).sum(axis=0)
    n_pix = float(grid.width_px * grid.height_px)
    prefix = np.cumsum(delta, axis=0) - delta  # sum over earlier blocks

    tie_shift = np.zeros(nph)
    for b in np.nonzero(~clear)[0]:
        running = total + prefix[b] + tie_shift - counts[b]
        best, best_d = None, None
        for k in np.nonzero(is_top[b])[0]:
            trial = running.copy()
            trial[k] += 4.0
            d = np.sum((trial / n_pix - ref) ** 2)
            if best_d is None or d < best_d - 1e-15:
                best, best_d = k, d
        winner[b] = best
        tie_shift += -counts[b]
        tie_shift[best] += 4.0

    w = np.zeros((nby * nbx, nph))
    w[np.arange(len(winner)), winner] = 1.0
    return PhaseGrid(w.reshape(nby, nbx, nph), grid.phase_ids, 2.0 * grid.cell_size)


def coarsen_uniform(grid: PhaseGrid, variant: str, steps: int):
    """Apply ``steps`` uniform halvings of one variant; returns (grid, report)."""
    variant = variant.lower()
    if variant not in ("a", "b"):
        raise ValueError("variant must be 'a' or 'b'")
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    original = volume_fractions(grid)
    out = grid
    ndofs = [_uniform_ndof(grid)]
    for _ in range(steps):
        out = coarsen_variant_a(out) if variant == "a" else coarsen_variant_b(out, original)
        ndofs.append(_uniform_ndof(out))
    report = CoarseningReport(
        kind=f"variant-{variant}", steps_requested=steps, steps_applied=steps,
        resolution_before=(grid.width_px, grid.height_px),
        resolution_after=(out.width_px, out.height_px),
        ndof_before=ndofs[0], ndof_after=ndofs[-1],
        fractions_original=original, fractions_achieved=volume_fractions(out),
        ndof_per_step=ndofs)
    return out, report


# ---------------------------------------------------------------------------
# Quadtree
# ---------------------------------------------------------------------------

def interface_mask(labels):
    """Pixels with a differently labelled pixel among their 8 neighbours."""
    ny, nx = labels.shape
    mask = np.zeros((ny, nx), dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            ys = slice(max(dy, 0), ny + min(dy, 0))
            xs = slice(max(dx, 0), nx + min(dx, 0))
            yd = slice(max(-dy, 0), ny + min(-dy, 0))
            xd = slice(max(-dx, 0), nx + min(-dx, 0))
            mask[yd, xd] |= labels[ys, xs] != labels[yd, xd]
    return mask


def _merge_step(size_map, labels, frozen):
    """One quadtree pass: merge every eligible 2x2 group of equal-size siblings.

    Returns the new size map and the number of merges.
    """
    ny, nx = size_map.shape
    new = size_map.copy()
    merges = 0
    for s in np.unique(size_map):
        s = int(s)
        b = 2 * s
        by, bx = ny // b, nx // b
        if by == 0 or bx == 0:
            continue
        sub = (slice(0, by * b), slice(0, bx * b))
        blk_size = size_map[sub].reshape(by, b, bx, b)
        blk_lab = labels[sub].reshape(by, b, bx, b)
        blk_frz = frozen[sub].reshape(by, b, bx, b)
        ok = np.all(blk_size == s, axis=(1, 3))
        ok &= ~np.any(blk_frz, axis=(1, 3))
        ok &= np.all(blk_lab == blk_lab[:, :1, :, :1], axis=(1, 3))
        if not ok.any():
            continue
        merges += int(ok.sum())
        grow = np.repeat(np.repeat(ok, b, axis=0), b, axis=1)
        view = new[sub]
        view[grow] = b
    return new, merges


def _leaves_from_size_map(size_map):
    ny, nx = size_map.shape
    iy, ix = np.mgrid[0:ny, 0:nx]
    corner = (ix % size_map == 0) & (iy % size_map == 0)
    return ix[corner], iy[corner], size_map[corner]


def quadtree_coarsen(mesh: QuadtreeMesh, steps: int):
    """Coarsen the mesh interior while keeping interface pixels at full resolution.

    A leaf is frozen when any pixel among its 8 neighbours carries a different
    material (phase id or blend weight vector, compared exactly). Each step
    merges, for every leaf size, all aligned 2x2 sibling groups of that size
    that share one material and contain no frozen pixel. Stops early at the
    fixpoint; the report records the steps that changed the mesh.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    labels, _ = mesh.grid.material_labels()
    frozen = interface_mask(labels)
    size_map = mesh.leaf_size_map()
    current = mesh
    ndofs = [mesh.ndof]
    applied = 0
    for _ in range(steps):
        size_map, merges = _merge_step(size_map, labels, frozen)
        if merges == 0:
            break
        applied += 1
        current = QuadtreeMesh(mesh.grid, *_leaves_from_size_map(size_map))
        ndofs.append(current.ndof)
    fr = volume_fractions(mesh.grid)
    report = CoarseningReport(
        kind="quadtree", steps_requested=steps, steps_applied=applied,
        resolution_before=(mesh.nx, mesh.ny), resolution_after=(mesh.nx, mesh.ny),
        ndof_before=ndofs[0], ndof_after=ndofs[-1],
        fractions_original=fr, fractions_achieved=dict(fr), ndof_per_step=ndofs)
    return current, report


def adaptive_mesh(grid: PhaseGrid, steps: int):
    """Uniform mesh of ``grid`` coarsened by ``steps`` quadtree steps (0 = uniform)."""
    mesh = build_uniform_mesh(grid)
    if steps <= 0:
        return mesh, None
    return quadtree_coarsen(mesh, steps)
