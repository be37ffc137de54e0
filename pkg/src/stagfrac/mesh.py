"""
Structured P1 triangle meshes and the fixed inner products built on them.

Nodes are numbered row-major, ``node = j * (nx + 1) + i`` for column ``i``
and row ``j``.  Vector fields are stored interleaved: the two components of
node ``a`` live at dofs ``2a`` and ``2a + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterable, Mapping, Tuple

import numpy as np
import scipy.sparse as sp

SIDES = ("left", "right", "bottom", "top")
_COMPONENTS = {"x": (0,), "y": (1,), "xy": (0, 1), "both": (0, 1)}


class MeshError(ValueError):
    """Invalid mesh input or configuration."""


@dataclass(frozen=True)
class Strain2:
    """Symmetric 2x2 tensor; ``e12`` is the off-diagonal entry (not doubled)."""

    e11: float
    e22: float
    e12: float

    @property
    def trace(self) -> float:
        return self.e11 + self.e22

    def norm2(self) -> float:
        return self.e11**2 + self.e22**2 + 2.0 * self.e12**2

    def dot(self, other: "Strain2") -> float:
        return self.e11 * other.e11 + self.e22 * other.e22 + 2.0 * self.e12 * other.e12

    def __add__(self, other: "Strain2") -> "Strain2":
        return Strain2(self.e11 + other.e11, self.e22 + other.e22, self.e12 + other.e12)

    def __sub__(self, other: "Strain2") -> "Strain2":
        return Strain2(self.e11 - other.e11, self.e22 - other.e22, self.e12 - other.e12)

    def __mul__(self, a: float) -> "Strain2":
        return Strain2(a * self.e11, a * self.e22, a * self.e12)

    __rmul__ = __mul__

    def as_array(self) -> np.ndarray:
        return np.array([self.e11, self.e22, self.e12])


def parse_dirichlet_spec(spec) -> Tuple[Tuple[str, int], ...]:
    """Normalise a Dirichlet description into sorted ``(side, component)`` pairs.

    Accepts a mapping ``{"left": "xy", "right": "x"}`` or an iterable of
    ``(side, component)`` pairs where component is ``"x"``, ``"y"``, ``"xy"``,
    0 or 1.
    """
    pairs = set()
    items: Iterable = spec.items() if isinstance(spec, Mapping) else spec
    for side, comp in items:
        if side not in SIDES:
            raise MeshError(f"unknown side {side!r}; expected one of {SIDES}")
        if isinstance(comp, (int, np.integer)) and comp in (0, 1):
            comps = (int(comp),)
        elif comp in _COMPONENTS:
            comps = _COMPONENTS[comp]
        else:
            raise MeshError(f"unknown component {comp!r} for side {side!r}")
        pairs.update((side, c) for c in comps)
    if not pairs:
        raise MeshError("empty Dirichlet specification: rigid motions are unconstrained")
    return tuple(sorted(pairs, key=lambda p: (SIDES.index(p[0]), p[1])))


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangulated rectangle with tagged boundary nodes and constrained dofs."""

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_tags: Dict[str, np.ndarray]
    dirichlet_dofs: np.ndarray
    lx: float
    ly: float
    dirichlet_spec: Tuple[Tuple[str, int], ...] = field(default=())

    @property
    def node_count(self) -> int:
        return self.nodes.shape[0]

    @property
    def element_count(self) -> int:
        return self.triangles.shape[0]

    @property
    def dirichlet_u(self) -> set:
        """Constrained ``(node, component)`` pairs."""
        return {(int(d) // 2, int(d) % 2) for d in self.dirichlet_dofs}

    def tags_of(self, node: int) -> set:
        return {s for s, ids in self.boundary_tags.items() if node in set(ids.tolist())}

    @cached_property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(2 * self.node_count, dtype=bool)
        mask[self.dirichlet_dofs] = False
        return np.flatnonzero(mask)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        x = self.nodes[self.triangles]
        d1 = x[:, 1] - x[:, 0]
        d2 = x[:, 2] - x[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return self.signed_areas

    @cached_property
    def shape_gradients(self) -> np.ndarray:
        """Gradients of the barycentric basis, shape ``(ne, 3, 2)``."""
        x = self.nodes[self.triangles]
        two_a = 2.0 * self.signed_areas
        grads = np.empty((self.element_count, 3, 2))
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            grads[:, a, 0] = (x[:, b, 1] - x[:, c, 1]) / two_a
            grads[:, a, 1] = (x[:, c, 0] - x[:, b, 0]) / two_a
        return grads

    @cached_property
    def gradient_operators(self) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
        """Sparse ``(Dx, Dy)``; ``Dx @ w`` is the elementwise x-derivative of a nodal scalar."""
        ne = self.element_count
        rows = np.repeat(np.arange(ne), 3)
        cols = self.triangles.ravel()
        g = self.shape_gradients
        shape = (ne, self.node_count)
        dx = sp.csr_matrix((g[:, :, 0].ravel(), (rows, cols)), shape=shape)
        dy = sp.csr_matrix((g[:, :, 1].ravel(), (rows, cols)), shape=shape)
        return dx, dy

    @cached_property
    def element_dofs(self) -> np.ndarray:
        """Interleaved vector dofs per element, shape ``(ne, 6)``."""
        t = self.triangles
        return np.stack([2 * t[:, 0], 2 * t[:, 0] + 1, 2 * t[:, 1], 2 * t[:, 1] + 1,
                         2 * t[:, 2], 2 * t[:, 2] + 1], axis=1)

    @cached_property
    def strain_matrices(self) -> np.ndarray:
        """Voigt strain-displacement matrices ``(ne, 3, 6)`` with engineering shear."""
        g = self.shape_gradients
        b = np.zeros((self.element_count, 3, 6))
        for a in range(3):
            b[:, 0, 2 * a] = g[:, a, 0]
            b[:, 1, 2 * a + 1] = g[:, a, 1]
            b[:, 2, 2 * a] = g[:, a, 1]
            b[:, 2, 2 * a + 1] = g[:, a, 0]
        return b

    def validate(self) -> None:
        if np.any(self.signed_areas <= 0.0):
            raise MeshError("triangle with non-positive signed area")
        if self.triangles.min() < 0 or self.triangles.max() >= self.node_count:
            raise MeshError("triangle references a node out of range")
        if self.dirichlet_dofs.size == 0:
            raise MeshError("no Dirichlet dofs: rigid motions are unconstrained")
        total = self.signed_areas.sum()
        if abs(total - self.lx * self.ly) > 1e-12 * self.lx * self.ly:
            raise MeshError(f"triangles cover area {total}, expected {self.lx * self.ly}")


def _boundary_tags(nodes: np.ndarray, lx: float, ly: float, x0=0.0, y0=0.0):
    tol = 1e-12 * max(lx, ly)
    x, y = nodes[:, 0], nodes[:, 1]
    return {
        "left": np.flatnonzero(np.abs(x - x0) <= tol),
        "right": np.flatnonzero(np.abs(x - x0 - lx) <= tol),
        "bottom": np.flatnonzero(np.abs(y - y0) <= tol),
        "top": np.flatnonzero(np.abs(y - y0 - ly) <= tol),
    }


def _dirichlet_dofs(tags, pairs) -> np.ndarray:
    dofs = set()
    for side, comp in pairs:
        dofs.update((2 * tags[side] + comp).tolist())
    return np.array(sorted(dofs), dtype=np.int64)


def build_rect_mesh(nx: int, ny: int, lx: float, ly: float, dirichlet_spec) -> Mesh:
    """Structured mesh of ``[0, lx] x [0, ly]`` with each cell split lower-left to upper-right.

    Examples
    --------
    >>> m = build_rect_mesh(2, 1, 2.0, 1.0, {"left": "x", "right": "x"})
    >>> m.node_count, m.element_count, sorted(m.dirichlet_u)
    (6, 4, [(0, 0), (2, 0), (3, 0), (5, 0)])
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError(f"nx, ny must be integers >= 1, got {nx}, {ny}")
    if not (lx > 0 and ly > 0):
        raise MeshError(f"lx, ly must be positive, got {lx}, {ly}")
    nx, ny = int(nx), int(ny)
    pairs = parse_dirichlet_spec(dirichlet_spec)

    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    xx, yy = np.meshgrid(xs, ys)
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n0 = (j * (nx + 1) + i).ravel()
    n1 = n0 + 1
    n2 = n0 + nx + 2
    n3 = n0 + nx + 1
    tris = np.empty((2 * nx * ny, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([n0, n1, n2])
    tris[1::2] = np.column_stack([n0, n2, n3])

    tags = _boundary_tags(nodes, lx, ly)
    mesh = Mesh(nodes, tris, tags, _dirichlet_dofs(tags, pairs), float(lx), float(ly), pairs)
    mesh.validate()
    return mesh


def read_ascii_mesh(path, dirichlet_spec) -> Mesh:
    """Read a triangle mesh of an axis-aligned rectangle from a plain text file.

    Format (whitespace separated, ``#`` starts a comment)::

        N
        x_0 y_0
        ...
        x_{N-1} y_{N-1}
        M
        a_0 b_0 c_0
        ...

    Element indices are zero-based.  Clockwise triangles are reoriented.
    Boundary sides are detected from the bounding box.
    """
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    try:
        pos = 0
        n = int(tokens[pos]); pos += 1
        nodes = np.array(tokens[pos:pos + 2 * n], dtype=float).reshape(n, 2); pos += 2 * n
        m = int(tokens[pos]); pos += 1
        tris = np.array(tokens[pos:pos + 3 * m], dtype=np.int64).reshape(m, 3); pos += 3 * m
    except (IndexError, ValueError) as exc:
        raise MeshError(f"malformed mesh file {path}: {exc}") from exc
    if pos != len(tokens):
        raise MeshError(f"trailing data in mesh file {path}")
    x = nodes[tris]
    signed = (x[:, 1, 0] - x[:, 0, 0]) * (x[:, 2, 1] - x[:, 0, 1]) - \
             (x[:, 1, 1] - x[:, 0, 1]) * (x[:, 2, 0] - x[:, 0, 0])
    flip = signed < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    lo, hi = nodes.min(axis=0), nodes.max(axis=0)
    nodes = nodes - lo
    lx, ly = float(hi[0] - lo[0]), float(hi[1] - lo[1])
    pairs = parse_dirichlet_spec(dirichlet_spec)
    tags = _boundary_tags(nodes, lx, ly)
    mesh = Mesh(nodes, tris, tags, _dirichlet_dofs(tags, pairs), lx, ly, pairs)
    mesh.validate()
    return mesh


def element_strains(mesh: Mesh, field: np.ndarray) -> np.ndarray:
    """Constant symmetric gradients of an interleaved nodal vector field, ``(ne, 3)``.

    Columns are ``e11, e22, e12`` (tensor shear, not engineering shear).
    """
    field = np.asarray(field, dtype=float)
    if field.shape != (2 * mesh.node_count,):
        raise ValueError(f"field has shape {field.shape}, expected ({2 * mesh.node_count},)")
    dx, dy = mesh.gradient_operators
    ux, uy = field[0::2], field[1::2]
    return np.column_stack([dx @ ux, dy @ uy, 0.5 * (dy @ ux + dx @ uy)])


def element_strain(mesh: Mesh, field: np.ndarray, tri: int) -> Strain2:
    """Strain of a P1 vector field on a single triangle."""
    if not 0 <= tri < mesh.element_count:
        raise IndexError(f"triangle index {tri} out of range [0, {mesh.element_count})")
    field = np.asarray(field, dtype=float)
    if field.shape != (2 * mesh.node_count,):
        raise ValueError(f"field has shape {field.shape}, expected ({2 * mesh.node_count},)")
    g = mesh.shape_gradients[tri]
    nodes = mesh.triangles[tri]
    ux, uy = field[2 * nodes], field[2 * nodes + 1]
    e11 = float(ux @ g[:, 0])
    e22 = float(uy @ g[:, 1])
    e12 = 0.5 * float(ux @ g[:, 1] + uy @ g[:, 0])
    return Strain2(e11, e22, e12)


@dataclass(frozen=True, eq=False)
class InnerProducts:
    """Fixed geometries: full H1 on free u-dofs, lumped L2 and Dirichlet form on z."""

    h1_matrix: sp.csc_matrix
    lumped_mass: np.ndarray
    stiffness_z: sp.csr_matrix
    mass_z: sp.csr_matrix

    @cached_property
    def h1_solve(self):
        from scipy.sparse.linalg import factorized
        return factorized(self.h1_matrix.tocsc())

    def h1_norm(self, w_free: np.ndarray) -> float:
        return float(np.sqrt(max(w_free @ (self.h1_matrix @ w_free), 0.0)))

    def l2_norm(self, z: np.ndarray) -> float:
        return float(np.sqrt(np.sum(self.lumped_mass * z * z)))


def scalar_matrices(mesh: Mesh) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
    """Consistent P1 mass and stiffness matrices for scalar fields."""
    area = mesh.signed_areas
    g = mesh.shape_gradients
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    local_m = area[:, None, None] / 12.0 * (np.ones((3, 3)) + np.eye(3))
    local_k = area[:, None, None] * np.einsum("eai,ebi->eab", g, g)
    n = mesh.node_count
    mass = sp.coo_matrix((local_m.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    stiff = sp.coo_matrix((local_k.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return mass, stiff


def vector_h1_matrix(mesh: Mesh) -> sp.csr_matrix:
    """Full ``int u.v + grad u : grad v`` on interleaved dofs (all dofs)."""
    mass, stiff = scalar_matrices(mesh)
    return sp.kron(mass + stiff, sp.identity(2), format="csr")


def assemble_inner_products(mesh: Mesh) -> InnerProducts:
    mass, stiff = scalar_matrices(mesh)
    h1 = sp.kron(mass + stiff, sp.identity(2), format="csr")
    free = mesh.free_dofs
    h1_free = h1[free][:, free].tocsc()
    lumped = np.asarray(mass.sum(axis=1)).ravel()
    return InnerProducts(h1_free, lumped, stiff, mass)
