"""Writers for VTK fields, CSV tables, JSON summaries and Matrix Market dumps.

Everything here formats floats with a fixed ``repr``-free format so repeated
runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np
import scipy.io

TABLE_VERSION = 1
ERROR_COLUMNS = ("step", "px", "ndof", "factor", "e_total", "e_est", "e_disc", "theta", "e_model")
_FLOAT = "{:.10e}"


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "nan" if np.isnan(v) else _FLOAT.format(float(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return None if np.isnan(f) else float(_FLOAT.format(f))
    return obj


def dumps_json(obj):
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(obj, path):
    Path(path).write_text(dumps_json(obj))


# ---------------------------------------------------------------------------
# Error tables
# ---------------------------------------------------------------------------

def error_table_csv(rows, scale=1e4, extra_columns=()):
    """CSV text of an error study.

    ``rows`` are dicts with the keys of ``ERROR_COLUMNS``. Errors appear in raw
    energy-norm units, followed by the same columns multiplied by ``scale``
    (suffix ``_x1e-4`` for the default).
    """
    err_cols = ("e_total", "e_est", "e_disc", "e_model")
    scaled = [f"{c}_x1e-4" for c in err_cols] if scale == 1e4 else [f"{c}_scaled" for c in err_cols]
    header = list(ERROR_COLUMNS) + scaled + list(extra_columns)
    buf = io.StringIO()
    buf.write(f"# pixhomog error table v{TABLE_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        vals = [_fmt(r[c]) for c in ERROR_COLUMNS]
        vals += [_fmt(r[c] * scale) for c in err_cols]
        vals += [_fmt(r[c]) for c in extra_columns]
        w.writerow(vals)
    return buf.getvalue()


def write_error_table(rows, path, **kw):
    Path(path).write_text(error_table_csv(rows, **kw))


def read_error_table(path):
    """Rows of an error table as dicts of strings (comment line skipped)."""
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# ---------------------------------------------------------------------------
# VTK
# ---------------------------------------------------------------------------

def _vtk_array(buf, name, data):
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        buf.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
        buf.write("\n".join(_FLOAT.format(v) for v in data) + "\n")
    elif data.shape[1] in (2, 3) and name.startswith("u"):
        vec = np.zeros((len(data), 3))
        vec[:, :data.shape[1]] = data
        buf.write(f"VECTORS {name} double\n")
        buf.write("\n".join(" ".join(_FLOAT.format(v) for v in row) for row in vec) + "\n")
    else:
        buf.write(f"FIELD {name}_field 1\n{name} {data.shape[1]} {len(data)} double\n")
        buf.write("\n".join(" ".join(_FLOAT.format(v) for v in row) for row in data) + "\n")


def vtk_text(points, cells, title="pixhomog", cell_data=None, point_data=None):
    """Legacy ASCII unstructured grid of quads."""
    pts = np.asarray(points, dtype=float)
    cells = np.asarray(cells, dtype=int)
    buf = io.StringIO()
    buf.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
    buf.write(f"POINTS {len(pts)} double\n")
    for x, y in pts:
        buf.write(f"{_FLOAT.format(x)} {_FLOAT.format(y)} 0\n")
    buf.write(f"CELLS {len(cells)} {5 * len(cells)}\n")
    for c in cells:
        buf.write("4 " + " ".join(map(str, c)) + "\n")
    buf.write(f"CELL_TYPES {len(cells)}\n" + "9\n" * len(cells))
    if cell_data:
        buf.write(f"CELL_DATA {len(cells)}\n")
        for name in sorted(cell_data):
            _vtk_array(buf, name, cell_data[name])
    if point_data:
        buf.write(f"POINT_DATA {len(pts)}\n")
        for name in sorted(point_data):
            _vtk_array(buf, name, point_data[name])
    return buf.getvalue()


def write_mesh_vtk(mesh, path, cell_data=None, point_data=None):
    """Quadtree mesh with material label, leaf size and blend weights as cell data."""
    labels = mesh.element_labels()
    cd = {"material": labels.astype(float), "leaf_size": mesh.leaf_size.astype(float)}
    w = mesh.element_weights()
    for k, p in enumerate(mesh.grid.phase_ids):
        cd[f"weight_{p}"] = w[:, k]
    cd.update(cell_data or {})
    Path(path).write_text(vtk_text(mesh.nodes, mesh.elements, "pixhomog micro mesh",
                                   cd, point_data))


def write_macro_vtk(solution, path, cell_data=None):
    m = solution.macro
    Path(path).write_text(vtk_text(m.nodes, m.elements, "pixhomog macro field", cell_data,
                                   {"u": solution.u.reshape(-1, 2)}))


def write_matrix_market(K, path, comment=""):
    """Sparse matrix dump for debugging."""
    scipy.io.mmwrite(str(path), K, comment=comment, field="real", symmetry="general")
