"""TOML run configuration: parsing, defaults and validation."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .constitutive import (DEGRADATION_FAMILIES, DISSIPATION_FAMILIES, BoundaryDatum, DegradationSpec,
                           DissipationSpec, MaterialParams, Model, TimeGrid, validate_model)
from .energetics import Problem
from .evolution import MODES, StaggerOptions
from .mesh import Mesh, MeshError, build_rect_mesh, parse_dirichlet_spec, read_ascii_mesh
from .subsolvers import SolveOptions


class ConfigError(ValueError):
    """Invalid configuration; the message lists every problem found."""


@dataclass(frozen=True)
class MeshConfig:
    nx: int = 8
    ny: int = 8
    lx: float = 1.0
    ly: float = 1.0
    dirichlet: Tuple[Tuple[str, int], ...] = ()
    file: Optional[str] = None


@dataclass(frozen=True)
class SolverConfig:
    tol_slope: float = 1e-8
    tol_stag: float = 1e-8
    max_inner: int = 100
    max_iter: int = 200
    flow_dl_u: float = 0.2
    flow_dl_z: float = 0.005


@dataclass(frozen=True)
class InitialConfig:
    """``z0`` as a constant, a rectangular band of reduced value, or a nodal file."""

    value: float = 1.0
    band: Optional[Tuple[float, float, float, float]] = None
    band_value: float = 0.0
    file: Optional[str] = None


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "output"
    csv: bool = True
    vtk_stride: int = 1


@dataclass(frozen=True, eq=False)
class Config:
    mesh: MeshConfig
    material: MaterialParams
    h: str
    f: str
    c0: float
    A: np.ndarray
    b: np.ndarray
    ramp: np.ndarray
    T: float
    k: int
    solver: SolverConfig = field(default_factory=SolverConfig)
    mode: str = "chord"
    initial: InitialConfig = field(default_factory=InitialConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    base_dir: Path = Path(".")

    def build_mesh(self) -> Mesh:
        if self.mesh.file:
            return read_ascii_mesh(self.base_dir / self.mesh.file, self.mesh.dirichlet)
        return build_rect_mesh(self.mesh.nx, self.mesh.ny, self.mesh.lx, self.mesh.ly, self.mesh.dirichlet)

    def model(self) -> Model:
        return Model(self.material, DegradationSpec(self.h, self.material.eta), DissipationSpec(self.f, self.c0))

    def datum(self) -> BoundaryDatum:
        return BoundaryDatum(self.A, self.b, self.ramp[:, 0], self.ramp[:, 1])

    def grid(self) -> TimeGrid:
        return TimeGrid(self.T, self.k)

    def problem(self) -> Problem:
        return Problem(self.build_mesh(), self.model(), self.datum())

    def stagger_options(self) -> StaggerOptions:
        s = self.solver
        return StaggerOptions(s.tol_stag, s.max_inner, SolveOptions(tol_slope=s.tol_slope, max_iter=s.max_iter))

    @property
    def flow_dl(self) -> Tuple[float, float]:
        return self.solver.flow_dl_u, self.solver.flow_dl_z

    def initial_field(self, mesh: Mesh) -> np.ndarray:
        ini = self.initial
        if ini.file:
            z0 = np.loadtxt(self.base_dir / ini.file, dtype=float, ndmin=1)
            if z0.shape != (mesh.node_count,):
                raise ConfigError(f"initial.file: expected {mesh.node_count} nodal values, got {z0.size}")
        else:
            z0 = np.full(mesh.node_count, ini.value)
            if ini.band is not None:
                x0, x1, y0, y1 = ini.band
                x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
                tol = 1e-12 * max(mesh.lx, mesh.ly)
                inside = (x >= x0 - tol) & (x <= x1 + tol) & (y >= y0 - tol) & (y <= y1 + tol)
                z0[inside] = ini.band_value
        if np.any(z0 < 0) or np.any(z0 > 1):
            raise ConfigError("initial: z0 must lie in [0, 1]")
        return z0


_KNOWN = {
    "mesh": {"nx", "ny", "lx", "ly", "dirichlet", "file"},
    "material": {"mu", "kappa", "eta"},
    "functions": {"h", "f", "c0"},
    "bc": {"A", "b", "ramp"},
    "time": {"T", "k"},
    "solver": {"tol_slope", "tol_stag", "max_inner", "max_iter", "flow_dl", "flow_dl_u", "flow_dl_z"},
    "parametrization": {"mode"},
    "initial": {"z0", "band", "band_value", "file"},
    "output": {"directory", "csv", "vtk_stride"},
}


class _Collector:
    def __init__(self):
        self.errors: List[str] = []

    def get(self, table: Dict[str, Any], section: str, key: str, kind, default=None, required=False):
        if key not in table:
            if required:
                self.errors.append(f"{section}.{key}: required")
            return default
        val = table[key]
        try:
            if kind is int:
                if isinstance(val, bool) or int(val) != val:
                    raise ValueError
                return int(val)
            if kind is float:
                if isinstance(val, bool):
                    raise ValueError
                return float(val)
            if kind is bool:
                if not isinstance(val, bool):
                    raise ValueError
                return val
            if kind is str:
                if not isinstance(val, str):
                    raise ValueError
                return val
        except (TypeError, ValueError):
            self.errors.append(f"{section}.{key}: expected {kind.__name__}, got {val!r}")
            return default
        return val

    def require(self, cond: bool, message: str) -> None:
        if not cond:
            self.errors.append(message)


def parse_config(path: Union[str, Path]) -> Config:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: TOML syntax error: {exc}") from exc
    return config_from_dict(data, base_dir=path.parent)


def config_from_dict(data: Dict[str, Any], base_dir: Union[str, Path] = ".") -> Config:
    """Validate a parsed TOML document; every problem is collected before raising."""
    c = _Collector()
    for section, table in data.items():
        if section not in _KNOWN:
            c.errors.append(f"{section}: unknown section")
            continue
        if not isinstance(table, dict):
            c.errors.append(f"{section}: expected a table")
            continue
        for key in table:
            if key not in _KNOWN[section]:
                c.errors.append(f"{section}.{key}: unknown key")
    sec = {name: data.get(name, {}) if isinstance(data.get(name, {}), dict) else {} for name in _KNOWN}

    time = sec["time"]
    if "T" not in time or "k" not in time:
        c.errors.append("time.T and time.k required")
    T = c.get(time, "time", "T", float, 1.0)
    k = c.get(time, "time", "k", int, 1)
    c.require(T is None or T > 0, f"time.T: must be positive, got {T}")
    c.require(k is None or k >= 1, f"time.k: must be >= 1, got {k}")

    m = sec["mesh"]
    mesh_file = c.get(m, "mesh", "file", str)
    nx = c.get(m, "mesh", "nx", int, 8, required=mesh_file is None)
    ny = c.get(m, "mesh", "ny", int, 8, required=mesh_file is None)
    lx = c.get(m, "mesh", "lx", float, 1.0)
    ly = c.get(m, "mesh", "ly", float, 1.0)
    c.require(nx is None or nx >= 1, f"mesh.nx: must be >= 1, got {nx}")
    c.require(ny is None or ny >= 1, f"mesh.ny: must be >= 1, got {ny}")
    c.require(lx is None or lx > 0, f"mesh.lx: must be positive, got {lx}")
    c.require(ly is None or ly > 0, f"mesh.ly: must be positive, got {ly}")
    dirichlet = ()
    try:
        dirichlet = parse_dirichlet_spec(m.get("dirichlet", {}))
    except (MeshError, TypeError, ValueError, AttributeError) as exc:
        c.errors.append(f"mesh.dirichlet: {exc}")

    mat = sec["material"]
    mu = c.get(mat, "material", "mu", float, 1.0, required=True)
    kappa = c.get(mat, "material", "kappa", float, 1.0, required=True)
    eta = c.get(mat, "material", "eta", float, 0.01, required=True)

    fn = sec["functions"]
    h = c.get(fn, "functions", "h", str, "quadratic")
    f = c.get(fn, "functions", "f", str, "at2")
    c0 = c.get(fn, "functions", "c0", float, 0.0)
    c.require(h in DEGRADATION_FAMILIES, f"functions.h: unknown family {h!r}; expected one of {DEGRADATION_FAMILIES}")
    c.require(f in DISSIPATION_FAMILIES, f"functions.f: unknown family {f!r}; expected one of {DISSIPATION_FAMILIES}")
    c.require(c0 is None or c0 >= 0, f"functions.c0: must be >= 0, got {c0}")
    c.require(not (f == "at2" and c0), "functions.c0: only the 'shifted' family takes an offset")
    if None not in (mu, kappa, eta) and h in DEGRADATION_FAMILIES and f in DISSIPATION_FAMILIES \
            and not (f == "at2" and c0) and c0 is not None:
        report = validate_model(MaterialParams(mu, kappa, eta), DegradationSpec(h, eta), DissipationSpec(f, c0))
        for name, detail in report.failures:
            key = name.split()[0]
            where = f"material.{key}" if key in ("mu", "kappa", "eta") else f"functions ({name})"
            c.errors.append(f"{where}: check '{name}' failed" + (f" ({detail})" if detail else ""))

    bc = sec["bc"]
    A = b = ramp = None
    try:
        A = np.asarray(bc.get("A", [[0.0, 0.0], [0.0, 0.0]]), dtype=float)
        c.require(A.shape == (2, 2), f"bc.A: expected a 2x2 matrix, got shape {A.shape}")
    except (TypeError, ValueError) as exc:
        c.errors.append(f"bc.A: {exc}")
    try:
        b = np.asarray(bc.get("b", [0.0, 0.0]), dtype=float)
        c.require(b.shape == (2,), f"bc.b: expected 2 entries, got shape {b.shape}")
    except (TypeError, ValueError) as exc:
        c.errors.append(f"bc.b: {exc}")
    try:
        ramp = np.asarray(bc.get("ramp", [[0.0, 0.0], [T or 1.0, 1.0]]), dtype=float)
        if ramp.ndim != 2 or ramp.shape[1] != 2 or ramp.shape[0] < 2:
            c.errors.append("bc.ramp: expected a list of at least two [t, rho] pairs")
        elif np.any(np.diff(ramp[:, 0]) <= 0):
            c.errors.append("bc.ramp: breakpoint times must be strictly increasing")
        elif T is not None and (ramp[0, 0] != 0.0 or ramp[-1, 0] < T * (1 - 1e-12)):
            c.errors.append(f"bc.ramp: breakpoints must cover [0, {T}]")
    except (TypeError, ValueError) as exc:
        c.errors.append(f"bc.ramp: {exc}")

    s = sec["solver"]
    dl = c.get(s, "solver", "flow_dl", float)
    defaults = SolverConfig()
    solver = SolverConfig(
        tol_slope=c.get(s, "solver", "tol_slope", float, defaults.tol_slope),
        tol_stag=c.get(s, "solver", "tol_stag", float, defaults.tol_stag),
        max_inner=c.get(s, "solver", "max_inner", int, defaults.max_inner),
        max_iter=c.get(s, "solver", "max_iter", int, defaults.max_iter),
        flow_dl_u=c.get(s, "solver", "flow_dl_u", float, dl if dl is not None else defaults.flow_dl_u),
        flow_dl_z=c.get(s, "solver", "flow_dl_z", float, dl if dl is not None else defaults.flow_dl_z),
    )
    for key in ("tol_slope", "tol_stag", "flow_dl_u", "flow_dl_z"):
        val = getattr(solver, key)
        c.require(val is not None and val > 0, f"solver.{key}: must be positive, got {val}")
    for key in ("max_inner", "max_iter"):
        val = getattr(solver, key)
        c.require(val is not None and val >= 1, f"solver.{key}: must be >= 1, got {val}")

    mode = c.get(sec["parametrization"], "parametrization", "mode", str, "chord")
    c.require(mode in MODES, f"parametrization.mode: unknown mode {mode!r}; expected one of {MODES}")
    c.require(not (mode == "energy-norm-chord" and h != "quadratic"),
              "parametrization.mode: energy-norm-chord requires functions.h = 'quadratic'")

    ini = sec["initial"]
    band = ini.get("band")
    if band is not None:
        try:
            band = tuple(float(v) for v in band)
            c.require(len(band) == 4, "initial.band: expected [x0, x1, y0, y1]")
        except (TypeError, ValueError):
            c.errors.append("initial.band: expected [x0, x1, y0, y1]")
            band = None
    initial = InitialConfig(value=c.get(ini, "initial", "z0", float, 1.0),
                            band=band if band is None or len(band) == 4 else None,
                            band_value=c.get(ini, "initial", "band_value", float, 0.0),
                            file=c.get(ini, "initial", "file", str))
    for key, val in (("z0", initial.value), ("band_value", initial.band_value)):
        c.require(val is not None and 0.0 <= val <= 1.0, f"initial.{key}: must lie in [0, 1], got {val}")

    out = sec["output"]
    output = OutputConfig(directory=c.get(out, "output", "directory", str, "output"),
                          csv=c.get(out, "output", "csv", bool, True),
                          vtk_stride=c.get(out, "output", "vtk_stride", int, 1))
    c.require(output.vtk_stride is not None and output.vtk_stride >= 0,
              f"output.vtk_stride: must be >= 0 (0 disables VTK), got {output.vtk_stride}")

    if c.errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(c.errors))
    return Config(MeshConfig(nx, ny, lx, ly, dirichlet, mesh_file), MaterialParams(mu, kappa, eta),
                  h, f, c0, A, b, ramp, T, k, solver, mode, initial, output, Path(base_dir))
