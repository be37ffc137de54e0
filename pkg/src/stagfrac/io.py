"""Serialization: trajectory CSV, legacy ASCII VTK fields and the plain-text report."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence

import numpy as np

from .mesh import Mesh

CSV_COLUMNS = ("s", "segment_kind", "node_i", "inner_j", "t", "F", "E", "D",
               "slope_u", "slope_z", "arc_inc", "power", "ledger_residual")


def fmt(x: float) -> str:
    """Round-trip float formatting (17 significant digits)."""
    return "%.17g" % float(x)


@dataclass(frozen=True)
class TrajectoryRow:
    s: float
    segment_kind: str
    node_i: int
    inner_j: int
    t: float
    F: float
    E: float
    D: float
    slope_u: float
    slope_z: float
    arc_inc: float
    power: float
    ledger_residual: float

    def cells(self) -> List[str]:
        return [fmt(self.s), self.segment_kind, str(self.node_i), str(self.inner_j), fmt(self.t),
                fmt(self.F), fmt(self.E), fmt(self.D), fmt(self.slope_u), fmt(self.slope_z),
                fmt(self.arc_inc), fmt(self.power), fmt(self.ledger_residual)]


def write_trajectory_csv(path, rows: Iterable[TrajectoryRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow(row.cells())


def read_trajectory_csv(path) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_vtk(path, mesh: Mesh, u: np.ndarray, z: np.ndarray, title: str = "stagfrac state") -> None:
    """Legacy ASCII VTK 2.0 unstructured grid with nodal displacement and phase field."""
    n = mesh.node_count
    ne = mesh.element_count
    disp = np.asarray(u, dtype=float).reshape(n, 2)
    lines = ["# vtk DataFile Version 2.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {n} double"]
    lines += [f"{fmt(x)} {fmt(y)} 0" for x, y in mesh.nodes]
    lines.append(f"CELLS {ne} {4 * ne}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {ne}")
    lines += ["5"] * ne
    lines.append(f"POINT_DATA {n}")
    lines.append("VECTORS displacement double")
    lines += [f"{fmt(a)} {fmt(b)} 0" for a, b in disp]
    lines += ["SCALARS phase double 1", "LOOKUP_TABLE default"]
    lines += [fmt(v) for v in z]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk_point_data(path) -> dict:
    """Minimal reader for files written by :func:`write_vtk` (used in tests)."""
    tokens = Path(path).read_text().split("\n")
    out = {}
    i = 0
    while i < len(tokens):
        line = tokens[i]
        if line.startswith("POINTS"):
            n = int(line.split()[1])
            out["points"] = np.array([tokens[i + 1 + r].split() for r in range(n)], dtype=float)
        elif line.startswith("VECTORS displacement"):
            out["displacement"] = np.array([tokens[i + 1 + r].split()[:2] for r in range(n)], dtype=float)
        elif line.startswith("LOOKUP_TABLE"):
            out["phase"] = np.array(tokens[i + 1:i + 1 + n], dtype=float)
        i += 1
    return out


def write_report(path, sections: Sequence[tuple]) -> None:
    """``sections`` is a sequence of ``(title, [lines])``."""
    parts = []
    for title, lines in sections:
        parts.append(f"[{title}]")
        parts.extend(f"  {line}" for line in lines)
        parts.append("")
    Path(path).write_text("\n".join(parts))
