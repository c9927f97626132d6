"""Run configuration read from a TOML file.

Physical quantities carry their unit in the key name (``_mm``, ``_mpa``,
``_n_per_mm``). Example::

    seed = 7
    output_dir = "out"

    [image]
    synth = "circular_inclusions(5, 0.2419)"   # or: path = "cell.pgm"
    width_px = 128

    [materials]
    eps_x_mm = 1.0
    [[materials.phases]]
    id = 0
    e_mpa = 100.0
    nu = 0.2
    gray = 0

    [coarsening]
    variant = "b"
    uniform_steps = 2
    adaptive_steps = 0

    [reference]
    resolution_px = 256

    [macro]
    length_mm = 5000.0
    height_mm = 1000.0
    thickness_mm = 100.0
    q0_n_per_mm = 0.02
    nx = 20
    ny = 4
    point_x_mm = 2.1132
    point_y_mm = 2.1132

    [estimator]
    schemes = ["average", "phase_distinct"]
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import SCHEMES
from .exceptions import ConfigError
from .homogenize import MacroProblem
from .mesh import ANCHORS
from .phase import (CircularInclusions, MaterialTable, Phase, default_two_phase_table,
                    parse_synth_spec)

_SECTIONS = {
    "": {"seed", "output_dir", "threads", "image", "materials", "coarsening", "reference",
         "macro", "estimator", "solver"},
    "image": {"synth", "path", "format", "width_px", "height_px"},
    "materials": {"path", "eps_x_mm", "phases"},
    "coarsening": {"variant", "uniform_steps", "adaptive_steps"},
    "reference": {"resolution_px"},
    "macro": {"length_mm", "height_mm", "thickness_mm", "q0_n_per_mm", "nx", "ny",
              "point_x_mm", "point_y_mm"},
    "estimator": {"schemes"},
    "solver": {"anchor"},
}
_PHASE_KEYS = {"id", "e_mpa", "nu", "gray", "color"}


@dataclass
class RunConfig:
    source: Path | None = None
    synth: str | None = None
    image_format: str | None = None
    width_px: int | None = None        # working resolution (None: same as reference)
    height_px: int | None = None
    table: MaterialTable = field(default_factory=default_two_phase_table)
    variant: str = "b"
    uniform_steps: int = 0
    adaptive_steps: int = 0
    reference_px: int | None = None    # None: the image's own resolution
    macro: MacroProblem = field(default_factory=MacroProblem)
    point: tuple = (2.1132, 2.1132)
    schemes: tuple = SCHEMES
    anchor: str | None = "lower-left"
    seed: int = 0
    output_dir: Path = Path("out")
    threads: int = 1
    base_dir: Path = Path(".")

    @property
    def eps_x(self):
        return self.table.eps_x

    def synth_spec(self):
        """Synthetic spec; circular inclusions without an explicit seed take ``seed``."""
        spec = parse_synth_spec(self.synth)
        if isinstance(spec, CircularInclusions) and self.synth.count(",") < 2:
            spec = replace(spec, seed=self.seed)
        return spec


def _check_keys(data, section):
    unknown = set(data) - _SECTIONS[section]
    if unknown:
        where = f"[{section}]" if section else "top level"
        raise ConfigError(f"unknown key(s) {sorted(unknown)} at {where}")


def _int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}")
    return value


def _num(value, name, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number")
    if positive and not value > 0:
        raise ConfigError(f"{name} must be positive")
    return float(value)


def _materials(sec, base):
    _check_keys(sec, "materials")
    if "path" in sec:
        path = base / sec["path"]
        if not path.exists():
            raise ConfigError(f"material table {path} not found")
        return MaterialTable.from_json(path)
    eps = _num(sec.get("eps_x_mm", 1.0), "eps_x_mm", positive=True)
    if "phases" not in sec:
        return default_two_phase_table(eps)
    phases = []
    for p in sec["phases"]:
        extra = set(p) - _PHASE_KEYS
        if extra:
            raise ConfigError(f"unknown phase key(s) {sorted(extra)}")
        try:
            phases.append(Phase(int(p["id"]), float(p["e_mpa"]), float(p["nu"]),
                                p.get("gray"), p.get("color")))
        except KeyError as exc:
            raise ConfigError(f"phase entry lacks {exc}") from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    try:
        return MaterialTable(tuple(phases), eps, eps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(data: dict, base_dir=".") -> RunConfig:
    """Validate a parsed TOML mapping and build a :class:`RunConfig`."""
    base = Path(base_dir)
    _check_keys(data, "")
    cfg = RunConfig(base_dir=base)
    cfg.seed = _int(data.get("seed", 0), "seed")
    cfg.threads = _int(data.get("threads", 1), "threads", 1)
    cfg.output_dir = base / data.get("output_dir", "out")

    img = data.get("image", {})
    _check_keys(img, "image")
    if ("synth" in img) == ("path" in img):
        raise ConfigError("[image] needs exactly one of 'synth' or 'path'")
    if "synth" in img:
        cfg.synth = str(img["synth"])
        try:
            parse_synth_spec(cfg.synth)
        except Exception as exc:
            raise ConfigError(str(exc)) from exc
    else:
        cfg.source = base / img["path"]
        if not cfg.source.exists():
            raise ConfigError(f"image {cfg.source} not found")
        cfg.image_format = img.get("format")
    if "width_px" in img:
        cfg.width_px = _int(img["width_px"], "width_px", 1)
    cfg.height_px = _int(img["height_px"], "height_px", 1) if "height_px" in img else cfg.width_px

    cfg.table = _materials(data.get("materials", {}), base)

    co = data.get("coarsening", {})
    _check_keys(co, "coarsening")
    cfg.variant = str(co.get("variant", "b")).lower()
    if cfg.variant not in ("a", "b"):
        raise ConfigError("coarsening.variant must be 'a' or 'b'")
    cfg.uniform_steps = _int(co.get("uniform_steps", 0), "uniform_steps", 0)
    cfg.adaptive_steps = _int(co.get("adaptive_steps", 0), "adaptive_steps", 0)

    ref = data.get("reference", {})
    _check_keys(ref, "reference")
    if "resolution_px" in ref:
        cfg.reference_px = _int(ref["resolution_px"], "resolution_px", 1)
    if cfg.synth is not None and cfg.reference_px is None and cfg.width_px is None:
        raise ConfigError("a synthetic image needs image.width_px or reference.resolution_px")
    if cfg.reference_px is not None and cfg.width_px is not None:
        if cfg.reference_px < cfg.width_px:
            raise ConfigError(f"reference resolution {cfg.reference_px} px is coarser than "
                              f"the working resolution {cfg.width_px} px")
        ratio = cfg.reference_px / cfg.width_px
        if ratio != 2 ** round(math.log2(ratio)):
            raise ConfigError("reference/working resolution ratio must be a power of two")

    mac = data.get("macro", {})
    _check_keys(mac, "macro")
    cfg.macro = MacroProblem(
        L=_num(mac.get("length_mm", 5000.0), "length_mm", True),
        B=_num(mac.get("height_mm", 1000.0), "height_mm", True),
        D=_num(mac.get("thickness_mm", 100.0), "thickness_mm", True),
        q0=_num(mac.get("q0_n_per_mm", 0.02), "q0_n_per_mm"),
        nx=_int(mac.get("nx", 20), "nx", 1), ny=_int(mac.get("ny", 4), "ny", 1))
    cfg.point = (_num(mac.get("point_x_mm", 2.1132), "point_x_mm"),
                 _num(mac.get("point_y_mm", 2.1132), "point_y_mm"))

    est = data.get("estimator", {})
    _check_keys(est, "estimator")
    schemes = tuple(est.get("schemes", SCHEMES))
    bad = [s for s in schemes if s not in SCHEMES]
    if bad or not schemes:
        raise ConfigError(f"estimator.schemes must be drawn from {SCHEMES}")
    cfg.schemes = schemes

    sol = data.get("solver", {})
    _check_keys(sol, "solver")
    anchor = sol.get("anchor", "lower-left")
    if anchor == "none":
        anchor = None
    elif anchor not in ANCHORS:
        raise ConfigError(f"solver.anchor must be one of {sorted(ANCHORS)} or 'none'")
    cfg.anchor = anchor
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data, path.parent)
