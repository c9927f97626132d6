"""Pixel microstructures and their phase materials.

A :class:`PhaseGrid` stores, for every pixel, a weight vector over the phases
of a material table. Segmented images have one-hot vectors; coarsening with
volume averaging produces blend cells whose weights are fractions. Array
index ``[iy, ix]`` with ``iy = 0`` the bottom row (origin lower-left).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .exceptions import (
    DiscreteOnly,
    GenerationFailure,
    IncompressibleLimit,
    ParseError,
    UnmappedPhase,
)

_REL_TOL = 1e-12


# ---------------------------------------------------------------------------
# Materials
# ---------------------------------------------------------------------------

def plane_strain_tensor(E, nu):
    """Isotropic plane-strain stiffness in Voigt form (11, 22, 12).

    Shear uses the engineering convention, so ``C[2, 2]`` is the shear
    modulus.

    >>> plane_strain_tensor(100.0, 0.0)[0, 0]
    100.0
    """
    E = float(E)
    nu = float(nu)
    if not E > 0.0:
        raise ValueError(f"Young's modulus must be positive, got {E}")
    if abs(0.5 - nu) <= 1e-9:
        raise IncompressibleLimit(f"nu={nu} is at the incompressible limit")
    if not 0.0 <= nu < 0.5:
        raise ValueError(f"Poisson ratio must lie in [0, 0.5), got {nu}")
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return np.array([
        [lam + 2.0 * mu, lam, 0.0],
        [lam, lam + 2.0 * mu, 0.0],
        [0.0, 0.0, mu],
    ])


@dataclass(frozen=True)
class Phase:
    id: int
    E: float
    nu: float
    gray: int | None = None
    color: str | None = None

    def __post_init__(self):
        if not self.E > 0.0:
            raise ValueError(f"phase {self.id}: E must be positive")
        if not 0.0 <= self.nu < 0.5:
            raise ValueError(f"phase {self.id}: nu must lie in [0, 0.5)")


@dataclass(frozen=True)
class MaterialTable:
    """Per-phase isotropic constants plus the physical unit-cell extents."""

    phases: tuple[Phase, ...]
    eps_x: float | None = None
    eps_y: float | None = None
    _tensors: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = [p.id for p in self.phases]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate phase ids in {ids}")
        grays = [p.gray for p in self.phases if p.gray is not None]
        if len(set(grays)) != len(grays):
            raise ValueError(f"duplicate gray levels in {grays}")
        object.__setattr__(self, "phases", tuple(self.phases))
        object.__setattr__(
            self, "_tensors",
            {p.id: plane_strain_tensor(p.E, p.nu) for p in self.phases})

    @property
    def ids(self):
        return tuple(p.id for p in self.phases)

    def phase(self, phase_id):
        for p in self.phases:
            if p.id == phase_id:
                return p
        raise UnmappedPhase(f"phase id {phase_id} not in material table")

    def tensor(self, phase_id):
        try:
            return self._tensors[phase_id].copy()
        except KeyError:
            raise UnmappedPhase(f"phase id {phase_id} not in material table") from None

    def gray_map(self):
        return {p.gray: p.id for p in self.phases if p.gray is not None}

    @classmethod
    def from_dict(cls, data):
        try:
            phases = tuple(
                Phase(id=int(p["id"]), E=float(p["E"]), nu=float(p["nu"]),
                      gray=None if p.get("gray") is None else int(p["gray"]),
                      color=p.get("color"))
                for p in data["phases"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad material table: {exc}") from exc
        dom = data.get("domain") or {}
        return cls(phases, eps_x=dom.get("eps_x_mm"), eps_y=dom.get("eps_y_mm"))

    @classmethod
    def from_json(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self):
        out = {"phases": [
            {k: v for k, v in (("id", p.id), ("E", p.E), ("nu", p.nu),
                               ("gray", p.gray), ("color", p.color)) if v is not None}
            for p in self.phases]}
        if self.eps_x is not None:
            out["domain"] = {"eps_x_mm": self.eps_x,
                             "eps_y_mm": self.eps_y if self.eps_y is not None else self.eps_x}
        return out


def default_two_phase_table(eps=1.0):
    """Matrix (id 0, E=100 MPa) and stiffer inclusion (id 1, E=192.1 MPa), nu=0.2."""
    return MaterialTable(
        (Phase(0, 100.0, 0.2, gray=0, color="black"),
         Phase(1, 192.1, 0.2, gray=255, color="white")),
        eps_x=eps, eps_y=eps)


def blend_tensor(weights: Mapping[int, float], table: MaterialTable):
    """Fraction-weighted arithmetic average of the phase stiffness tensors."""
    total = sum(weights.values())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"blend weights sum to {total}, expected 1")
    C = np.zeros((3, 3))
    for pid, w in weights.items():
        C += w * table.tensor(pid)
    return C


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------

class PhaseGrid:
    """Uniform pixel raster of phase weight vectors.

    Parameters
    ----------
    weights : ndarray, shape (ny, nx, nphase)
        Nonnegative weights summing to one per pixel.
    phase_ids : sequence of int
        Phase id for each weight column.
    cell_size : float
        Pixel edge length in mm.
    """

    def __init__(self, weights, phase_ids: Sequence[int], cell_size: float):
        w = np.array(weights, dtype=float)
        if w.ndim != 3 or w.shape[2] != len(phase_ids):
            raise ValueError("weights must have shape (ny, nx, len(phase_ids))")
        if w.shape[0] < 1 or w.shape[1] < 1:
            raise ValueError("grid must have at least one pixel")
        if np.any(w < 0.0) or np.any(np.abs(w.sum(axis=2) - 1.0) > _REL_TOL):
            raise ValueError("weight vectors must be nonnegative and sum to 1")
        if not cell_size > 0.0:
            raise ValueError("cell_size must be positive")
        w.setflags(write=False)
        self._w = w
        self.phase_ids = tuple(int(p) for p in phase_ids)
        self.cell_size = float(cell_size)

    @classmethod
    def from_ids(cls, ids, phase_ids=None, cell_size=None, eps_x=1.0):
        """Discrete grid from an integer id array indexed ``[iy, ix]``."""
        ids = np.asarray(ids)
        if ids.ndim != 2:
            raise ValueError("id array must be 2-D")
        if phase_ids is None:
            phase_ids = sorted(int(v) for v in np.unique(ids))
        phase_ids = tuple(int(p) for p in phase_ids)
        lookup = {p: k for k, p in enumerate(phase_ids)}
        unknown = set(int(v) for v in np.unique(ids)) - set(lookup)
        if unknown:
            raise UnmappedPhase(f"ids {sorted(unknown)} not among {phase_ids}")
        col = np.vectorize(lookup.__getitem__, otypes=[int])(ids)
        w = np.zeros(ids.shape + (len(phase_ids),))
        np.put_along_axis(w, col[..., None], 1.0, axis=2)
        if cell_size is None:
            cell_size = eps_x / ids.shape[1]
        return cls(w, phase_ids, cell_size)

    @property
    def weights(self):
        return self._w

    @property
    def height_px(self):
        return self._w.shape[0]

    @property
    def width_px(self):
        return self._w.shape[1]

    @property
    def eps_x(self):
        return self.width_px * self.cell_size

    @property
    def eps_y(self):
        return self.height_px * self.cell_size

    @property
    def is_discrete(self):
        return bool(np.all((self._w == 0.0) | (self._w == 1.0)))

    def ids(self):
        """Phase id per pixel; only valid for discrete grids."""
        if not self.is_discrete:
            raise DiscreteOnly("grid contains blend cells")
        return np.asarray(self.phase_ids)[np.argmax(self._w, axis=2)]

    def material_labels(self):
        """Integer label per pixel, one label per distinct weight vector.

        Returns ``(labels, table)`` where ``table[k]`` is the weight vector of
        label ``k``. Labels follow the lexicographic order of the vectors, so
        they do not depend on pixel order.
        """
        flat = self._w.reshape(-1, self._w.shape[2])
        table, inv = np.unique(flat, axis=0, return_inverse=True)
        return inv.reshape(self._w.shape[:2]), table

    def upsample(self, factor: int):
        """Replicate each pixel into ``factor x factor`` sub-pixels."""
        w = np.repeat(np.repeat(self._w, factor, axis=0), factor, axis=1)
        return PhaseGrid(w, self.phase_ids, self.cell_size / factor)

    def __eq__(self, other):
        return (isinstance(other, PhaseGrid) and self.phase_ids == other.phase_ids
                and self.cell_size == other.cell_size
                and self._w.shape == other._w.shape and np.array_equal(self._w, other._w))

    def __hash__(self):
        return hash((self.phase_ids, self.cell_size, self._w.tobytes()))

    def __repr__(self):
        kind = "discrete" if self.is_discrete else "blended"
        return (f"PhaseGrid({self.width_px}x{self.height_px}, {kind}, "
                f"phases={self.phase_ids}, h={self.cell_size:g} mm)")


def volume_fractions(grid: PhaseGrid):
    """Area fraction of every phase, blend weights included."""
    frac = grid.weights.reshape(-1, len(grid.phase_ids)).mean(axis=0)
    return {pid: float(f) for pid, f in zip(grid.phase_ids, frac)}


def cell_tensors(grid: PhaseGrid, table: MaterialTable):
    """Blended stiffness per pixel, shape (ny, nx, 3, 3)."""
    stack = np.stack([table.tensor(p) for p in grid.phase_ids])
    return np.einsum("yxp,pij->yxij", grid.weights, stack)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def _pgm_tokens(data: bytes):
    """Header tokens of a PGM file and the byte offset after the header."""
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < 4:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated PGM header")
        tokens.append(data[start:pos].decode("ascii", "replace"))
    return tokens, pos + 1


def _read_pgm(path):
    data = Path(path).read_bytes()
    tokens, offset = _pgm_tokens(data)
    magic = tokens[0]
    if magic not in ("P2", "P5"):
        raise ParseError(f"{path}: unsupported PGM magic {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise ParseError(f"{path}: bad PGM header {tokens}") from exc
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ParseError(f"{path}: bad PGM dimensions {tokens[1:4]}")
    count = width * height
    if magic == "P5":
        dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
        raw = np.frombuffer(data, dtype=dtype, count=count, offset=offset) \
            if len(data) - offset >= count * np.dtype(dtype).itemsize else None
        if raw is None:
            raise ParseError(f"{path}: PGM raster shorter than {width}x{height}")
        values = raw.astype(int)
    else:
        body = re.sub(rb"#[^\n]*", b"", data[offset:]).split()
        if len(body) < count:
            raise ParseError(f"{path}: PGM raster shorter than {width}x{height}")
        values = np.array([int(v) for v in body[:count]])
    return values.reshape(height, width)


def _read_csv(path):
    text = Path(path).read_text()
    rows = [r.strip() for r in re.split(r"[;\n]", text) if r.strip()]
    if not rows:
        raise ParseError(f"{path}: empty CSV")
    try:
        arr = [[int(v) for v in r.split(",")] for r in rows]
    except ValueError as exc:
        raise ParseError(f"{path}: non-integer entry ({exc})") from exc
    if len({len(r) for r in arr}) != 1:
        raise ParseError(f"{path}: ragged CSV rows")
    return np.array(arr)


def load_grid(path, format=None, table: MaterialTable | None = None, eps_x=None):
    """Read a segmented image into a discrete :class:`PhaseGrid`.

    The first stored row is the bottom row of the microstructure. PGM gray
    levels are mapped to phase ids through ``table``; CSV files hold ids
    directly. The unit-cell width comes from ``eps_x``, else from the
    table's domain, else 1 mm.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "pgm":
        if table is None:
            raise ValueError("PGM input needs a material table with gray levels")
        raw = _read_pgm(path)
        gmap = table.gray_map()
        unknown = sorted(set(int(v) for v in np.unique(raw)) - set(gmap))
        if unknown:
            raise UnmappedPhase(f"{path}: gray levels {unknown} have no phase")
        ids = np.vectorize(gmap.__getitem__, otypes=[int])(raw)
    elif fmt == "csv":
        ids = _read_csv(path)
    else:
        raise ValueError(f"unknown image format {fmt!r}")

    phase_ids = table.ids if table is not None else None
    if eps_x is None:
        eps_x = table.eps_x if table is not None and table.eps_x else 1.0
    grid = PhaseGrid.from_ids(ids, phase_ids=phase_ids, eps_x=eps_x)
    if table is not None and table.eps_y is not None:
        if abs(grid.eps_y - table.eps_y) > 1e-12 * table.eps_y:
            raise ParseError(
                f"{path}: {grid.width_px}x{grid.height_px} px cannot tile "
                f"{table.eps_x}x{table.eps_y} mm with square pixels")
    return grid


def write_pgm(grid: PhaseGrid, path, table: MaterialTable | None = None):
    """Write a binary PGM; blend cells get the weight-averaged gray level."""
    if table is not None and all(table.phase(p).gray is not None for p in grid.phase_ids):
        grays = np.array([table.phase(p).gray for p in grid.phase_ids], dtype=float)
    else:
        n = len(grid.phase_ids)
        grays = np.linspace(0, 255, n) if n > 1 else np.zeros(1)
    img = np.rint(grid.weights @ grays).astype(np.uint8)
    header = f"P5\n{grid.width_px} {grid.height_px}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())


def write_csv_grid(grid: PhaseGrid, path):
    ids = grid.ids()
    Path(path).write_text("\n".join(",".join(str(v) for v in row) for row in ids) + "\n")


# ---------------------------------------------------------------------------
# Synthetic microstructures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Checkerboard:
    n: int = 1


@dataclass(frozen=True)
class Laminate:
    fraction: float
    axis: str = "x"


@dataclass(frozen=True)
class CircularInclusions:
    count: int
    target_fraction: float
    seed: int = 0


_SYNTH_RE = re.compile(r"^\s*(\w+)\s*\((.*)\)\s*$")


def parse_synth_spec(text: str):
    """Parse ``"laminate(0.25, x)"``-style strings into a spec object."""
    m = _SYNTH_RE.match(text)
    if not m:
        raise ParseError(f"bad synthetic spec {text!r}")
    name, args = m.group(1).lower(), [a.strip() for a in m.group(2).split(",") if a.strip()]
    try:
        if name == "checkerboard":
            return Checkerboard(int(args[0]) if args else 1)
        if name == "laminate":
            return Laminate(float(args[0]), args[1] if len(args) > 1 else "x")
        if name in ("circular_inclusions", "circles"):
            return CircularInclusions(int(args[0]), float(args[1]),
                                      int(args[2]) if len(args) > 2 else 0)
    except (IndexError, ValueError) as exc:
        raise ParseError(f"bad synthetic spec {text!r}: {exc}") from exc
    raise ParseError(f"unknown synthetic microstructure {name!r}")


def _periodic_dist2(px, py, cx, cy, width, height):
    dx = np.abs(px - cx)
    dy = np.abs(py - cy)
    dx = np.minimum(dx, width - dx)
    dy = np.minimum(dy, height - dy)
    return dx * dx + dy * dy


def _circles(spec: CircularInclusions, width, height):
    f = spec.target_fraction
    if not 0.0 < f < 1.0:
        raise ValueError("target_fraction must lie in (0, 1)")
    if spec.count < 1:
        raise ValueError("count must be positive")
    area = width * height
    r0 = math.sqrt(f * area / (spec.count * math.pi))
    if 2.0 * r0 >= min(width, height):
        raise GenerationFailure(f"{spec.count} circle(s) of radius {r0:.2f} px do not fit")
    rng = np.random.default_rng(spec.seed)
    min_sep = 2.0 * r0 + 1.0
    centers = []
    attempts = 0
    while len(centers) < spec.count:
        attempts += 1
        if attempts > 20000:
            raise GenerationFailure(
                f"could not place {spec.count} disjoint circles at fraction {f}")
        c = rng.uniform((0.0, 0.0), (width, height))
        if all(_periodic_dist2(c[0], c[1], q[0], q[1], width, height) >= min_sep ** 2
               for q in centers):
            centers.append(c)

    py, px = np.mgrid[0:height, 0:width] + 0.5
    d2 = np.full((height, width), np.inf)
    for cx, cy in centers:
        d2 = np.minimum(d2, _periodic_dist2(px, py, cx, cy, width, height))

    # achieved fraction is a step function of the radius; bisect on it
    target = f * area
    lo, hi = 0.5 * r0, 1.5 * r0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if np.count_nonzero(d2 <= mid * mid) < target:
            lo = mid
        else:
            hi = mid
    best = min((lo, hi), key=lambda r: abs(np.count_nonzero(d2 <= r * r) - target))
    ids = (d2 <= best * best).astype(int)
    achieved = ids.mean()
    if abs(achieved - f) > 0.02 * f:
        raise GenerationFailure(f"achieved fraction {achieved:.4f} misses target {f}")
    return ids


def synth_microstructure(spec, width_px: int, height_px: int, eps_x=1.0):
    """Deterministic two-phase test image (phase 0 matrix, phase 1 inclusion)."""
    if isinstance(spec, str):
        spec = parse_synth_spec(spec)
    if width_px < 1 or height_px < 1:
        raise ValueError("dimensions must be positive")
    if isinstance(spec, Checkerboard):
        if spec.n < 1:
            raise ValueError("checkerboard block size must be positive")
        iy, ix = np.mgrid[0:height_px, 0:width_px]
        ids = ((ix // spec.n + iy // spec.n) % 2).astype(int)
    elif isinstance(spec, Laminate):
        if not 0.0 < spec.fraction < 1.0:
            raise ValueError("laminate fraction must lie in (0, 1)")
        axis = spec.axis.lower()
        if axis not in ("x", "y"):
            raise ValueError("laminate axis must be 'x' or 'y'")
        n = width_px if axis == "x" else height_px
        k = int(round(spec.fraction * n))
        if k == 0 or k == n:
            raise GenerationFailure(f"fraction {spec.fraction} rounds to a single phase at {n} px")
        start = (n - k) // 2
        band = np.zeros(n, dtype=int)
        band[start:start + k] = 1
        ids = np.tile(band, (height_px, 1)) if axis == "x" \
            else np.tile(band[:, None], (1, width_px))
    elif isinstance(spec, CircularInclusions):
        ids = _circles(spec, width_px, height_px)
    else:
        raise TypeError(f"unsupported synthetic spec {spec!r}")
    return PhaseGrid.from_ids(ids, phase_ids=(0, 1), eps_x=eps_x)
