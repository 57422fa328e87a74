"""Structured P1 meshes for the bulk rectangle and its contact side.

The bulk domain is a rectangle split into ``nx * ny`` cells, each cell cut
along the diagonal joining its lower-left and upper-right corners.  One side
of the rectangle carries the contact surface, which is represented as a 1D
mesh whose nodes are the bulk nodes lying on that side.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
CONTACT = "contact"
TAGS = (DIRICHLET, NEUMANN, CONTACT)
SIDES = ("bottom", "right", "top", "left")

_OUTWARD = {
    "bottom": (0.0, -1.0),
    "right": (1.0, 0.0),
    "top": (0.0, 1.0),
    "left": (-1.0, 0.0),
}


class MeshError(ValueError):
    """Raised for invalid mesh parameters or inconsistent field sizes."""


@dataclass(frozen=True, eq=False)
class BulkMesh:
    """Conforming P1 triangulation of a rectangle.

    Attributes
    ----------
    nodes : (N, 2) array
        Node coordinates.
    triangles : (E, 3) int array
        Counter-clockwise vertex indices.
    edges : (B, 2) int array
        Boundary edges.
    edge_tags : tuple of str
        Tag of each boundary edge, one of ``dirichlet``, ``neumann``, ``contact``.
    edge_normals : (B, 2) array
        Unit outward normal of each boundary edge.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_tags: tuple
    edge_normals: np.ndarray
    width: float = 1.0
    height: float = 1.0
    nx: int = 1
    ny: int = 1

    # derived quantities, filled in __post_init__
    areas: np.ndarray = field(init=False, repr=False)
    grads: np.ndarray = field(init=False, repr=False)
    lumped_mass: np.ndarray = field(init=False, repr=False)
    dirichlet_nodes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = self.nodes[self.triangles]  # (E, 3, 2)
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        if np.any(det <= 0):
            raise MeshError("triangle with non-positive signed area")
        areas = 0.5 * det
        # gradients of barycentric coordinates: rows of inv([d1 d2])^T
        inv = np.empty((len(det), 2, 2))
        inv[:, 0, 0] = d2[:, 1] / det
        inv[:, 0, 1] = -d2[:, 0] / det
        inv[:, 1, 0] = -d1[:, 1] / det
        inv[:, 1, 1] = d1[:, 0] / det
        grads = np.empty((len(det), 3, 2))
        grads[:, 1] = inv[:, 0]
        grads[:, 2] = inv[:, 1]
        grads[:, 0] = -grads[:, 1] - grads[:, 2]
        mass = np.zeros(len(self.nodes))
        np.add.at(mass, self.triangles, np.repeat(areas[:, None] / 3.0, 3, axis=1))
        tags = np.asarray(self.edge_tags)
        dn = np.unique(self.edges[tags == DIRICHLET]) if len(tags) else np.zeros(0, int)
        object.__setattr__(self, "areas", areas)
        object.__setattr__(self, "grads", grads)
        object.__setattr__(self, "lumped_mass", mass)
        object.__setattr__(self, "dirichlet_nodes", dn)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def tagged_edges(self, tag: str) -> np.ndarray:
        mask = np.asarray(self.edge_tags) == tag
        return self.edges[mask]

    def free_mask(self) -> np.ndarray:
        """Boolean mask of nodes not constrained by the Dirichlet condition."""
        m = np.ones(self.n_nodes, dtype=bool)
        m[self.dirichlet_nodes] = False
        return m

    def boundary_weights(self, tag: str) -> np.ndarray:
        """Lumped (trapezoidal) nodal weights of the boundary part ``tag``."""
        w = np.zeros(self.n_nodes)
        e = self.tagged_edges(tag)
        if len(e):
            ln = np.linalg.norm(self.nodes[e[:, 1]] - self.nodes[e[:, 0]], axis=1)
            np.add.at(w, e[:, 0], 0.5 * ln)
            np.add.at(w, e[:, 1], 0.5 * ln)
        return w

    def dump(self) -> str:
        """Plain-text listing of nodes and triangles (debugging aid)."""
        lines = [f"nodes {self.n_nodes}"]
        lines += [f"{i} {x:.17g} {y:.17g}" for i, (x, y) in enumerate(self.nodes)]
        lines.append(f"triangles {self.n_triangles}")
        lines += [f"{i} {a} {b} {c}" for i, (a, b, c) in enumerate(self.triangles)]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """1D P1 mesh of the contact side.

    Attributes
    ----------
    positions : (S,) array
        Arc-length coordinate of each contact node, strictly increasing.
    bulk_index : (S,) int array
        Bulk node carrying each surface node.
    normal : (2,) array
        Outward unit normal of the (flat) contact side.
    """

    positions: np.ndarray
    bulk_index: np.ndarray
    normal: np.ndarray
    origin: np.ndarray
    direction: np.ndarray

    lengths: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.positions) < 2 or np.any(np.diff(self.positions) <= 0):
            raise MeshError("surface node positions must be strictly increasing")
        h = np.diff(self.positions)
        w = np.zeros(len(self.positions))
        w[:-1] += 0.5 * h
        w[1:] += 0.5 * h
        object.__setattr__(self, "lengths", h)
        object.__setattr__(self, "weights", w)

    @property
    def n_nodes(self) -> int:
        return len(self.positions)

    @property
    def measure(self) -> float:
        return float(self.positions[-1] - self.positions[0])

    def points(self) -> np.ndarray:
        """Physical coordinates of the surface nodes."""
        return self.origin[None, :] + self.positions[:, None] * self.direction[None, :]

    def stiffness(self, coef=None) -> sp.csr_matrix:
        """P1 stiffness ``sum_e c_e/h_e [[1,-1],[-1,1]]`` with natural ends."""
        n = self.n_nodes
        c = np.ones(n - 1) if coef is None else np.broadcast_to(coef, (n - 1,))
        k = c / self.lengths
        diag = np.zeros(n)
        diag[:-1] += k
        diag[1:] += k
        return sp.diags([diag, -k, -k], [0, 1, -1], format="csr")

    def mass(self) -> sp.csr_matrix:
        """Consistent P1 mass matrix."""
        h = self.lengths
        diag = np.zeros(self.n_nodes)
        diag[:-1] += h / 3
        diag[1:] += h / 3
        return sp.diags([diag, h / 6, h / 6], [0, 1, -1], format="csr")


def build_rect_mesh(nx: int, ny: int, width: float = 1.0, height: float = 1.0,
                    boundary_spec: Mapping[str, str] | None = None):
    """Build a structured triangulation and the contact surface mesh.

    Parameters
    ----------
    nx, ny : int
        Cells per direction.
    width, height : float
        Rectangle ``[0, width] x [0, height]``.
    boundary_spec : mapping side -> tag
        Sides are ``bottom``, ``right``, ``top``, ``left``.  Missing sides are
        Neumann.  Defaults to contact at the bottom and Dirichlet on the left.

    Returns
    -------
    (BulkMesh, SurfaceMesh)
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError(f"cell counts must be positive integers, got nx={nx}, ny={ny}")
    if not (width > 0 and height > 0 and np.isfinite(width) and np.isfinite(height)):
        raise MeshError(f"rectangle dimensions must be positive, got {width} x {height}")
    nx, ny = int(nx), int(ny)
    spec = {"bottom": CONTACT, "left": DIRICHLET}
    if boundary_spec is not None:
        spec = dict(boundary_spec)
    for side, tag in spec.items():
        if side not in SIDES:
            raise MeshError(f"unknown side {side!r}")
        if tag not in TAGS:
            raise MeshError(f"unknown boundary tag {tag!r} on side {side!r}")
    spec = {s: spec.get(s, NEUMANN) for s in SIDES}
    tags = list(spec.values())
    if tags.count(CONTACT) != 1:
        raise MeshError("exactly one side must carry the contact tag")
    if DIRICHLET not in tags:
        raise MeshError("at least one side must carry the Dirichlet tag")

    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return j * (nx + 1) + i

    I, J = np.meshgrid(np.arange(nx), np.arange(ny))
    I, J = I.ravel(), J.ravel()
    n00, n10, n11, n01 = nid(I, J), nid(I + 1, J), nid(I + 1, J + 1), nid(I, J + 1)
    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    triangles = np.empty((2 * nx * ny, 3), dtype=int)
    triangles[0::2] = lower
    triangles[1::2] = upper

    side_nodes = {
        "bottom": nid(np.arange(nx + 1), 0),
        "right": nid(nx, np.arange(ny + 1)),
        "top": nid(np.arange(nx + 1), ny),
        "left": nid(0, np.arange(ny + 1)),
    }
    edges, edge_tags, normals = [], [], []
    for side in SIDES:
        sn = side_nodes[side]
        for a, b in zip(sn[:-1], sn[1:]):
            edges.append((a, b))
            edge_tags.append(spec[side])
            normals.append(_OUTWARD[side])
    bulk = BulkMesh(nodes=nodes, triangles=triangles, edges=np.asarray(edges, dtype=int),
                    edge_tags=tuple(edge_tags), edge_normals=np.asarray(normals, float),
                    width=float(width), height=float(height), nx=nx, ny=ny)

    cside = next(s for s in SIDES if spec[s] == CONTACT)
    cn = side_nodes[cside]
    origin = nodes[cn[0]]
    direction = nodes[cn[-1]] - origin
    direction = direction / np.linalg.norm(direction)
    positions = (nodes[cn] - origin) @ direction
    surface = SurfaceMesh(positions=positions, bulk_index=np.asarray(cn, dtype=int),
                          normal=np.asarray(_OUTWARD[cside], float), origin=origin.copy(),
                          direction=direction)
    return bulk, surface


def trace(mesh, bulk_field) -> np.ndarray:
    """Restrict a nodal bulk field (scalar or vector) to the contact nodes.

    ``mesh`` is a ``(BulkMesh, SurfaceMesh)`` pair or any object exposing
    ``bulk`` and ``surface`` attributes.
    """
    bulk, surface = _pair(mesh)
    f = np.asarray(bulk_field)
    if f.shape[0] != bulk.n_nodes:
        raise MeshError(f"field has {f.shape[0]} entries, mesh has {bulk.n_nodes} nodes")
    return f[surface.bulk_index].copy()


def _pair(mesh):
    if isinstance(mesh, tuple):
        return mesh
    return mesh.bulk, mesh.surface


# ---------------------------------------------------------------------------
# P1 operators shared by the assembly and diagnostics modules

def scalar_stiffness_pattern(bulk: BulkMesh):
    """Row/col indices and unit local stiffness ``area * G G^T`` per triangle."""
    t = bulk.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    local = bulk.areas[:, None, None] * np.einsum("eai,ebi->eab", bulk.grads, bulk.grads)
    return rows, cols, local


def scalar_stiffness(bulk: BulkMesh, coef=None) -> sp.csr_matrix:
    """Assemble ``sum_e c_e area_e G_e G_e^T`` (``c`` per triangle, default 1)."""
    rows, cols, local = scalar_stiffness_pattern(bulk)
    c = np.ones(bulk.n_triangles) if coef is None else np.asarray(coef)
    data = (c[:, None, None] * local).ravel()
    n = bulk.n_nodes
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def scalar_mass(bulk: BulkMesh) -> sp.csr_matrix:
    """Consistent P1 mass matrix."""
    t = bulk.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    data = (bulk.areas[:, None, None] * ref[None]).ravel()
    n = bulk.n_nodes
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def strain_operator(bulk: BulkMesh) -> np.ndarray:
    """Per-triangle matrix ``B`` (E, 3, 6) mapping local displacements to strain.

    Local dofs are ordered ``(u0x, u0y, u1x, u1y, u2x, u2y)``; the strain is
    returned in Mandel form ``(e11, e22, sqrt(2) e12)`` so that the Euclidean
    norm equals the Frobenius norm of the symmetric tensor.
    """
    g = bulk.grads
    B = np.zeros((bulk.n_triangles, 3, 6))
    r = np.sqrt(0.5)
    B[:, 0, 0::2] = g[:, :, 0]
    B[:, 1, 1::2] = g[:, :, 1]
    B[:, 2, 0::2] = r * g[:, :, 1]
    B[:, 2, 1::2] = r * g[:, :, 0]
    return B


def vector_dofs(bulk: BulkMesh) -> np.ndarray:
    """Global dof indices (E, 6) matching :func:`strain_operator` ordering."""
    t = bulk.triangles
    d = np.empty((bulk.n_triangles, 6), dtype=int)
    d[:, 0::2] = 2 * t
    d[:, 1::2] = 2 * t + 1
    return d


def vector_form_matrix(bulk: BulkMesh, D: np.ndarray) -> sp.csr_matrix:
    """Assemble ``sum_e area_e B_e^T D B_e`` for a constant Mandel tensor ``D``."""
    B = strain_operator(bulk)
    dofs = vector_dofs(bulk)
    local = bulk.areas[:, None, None] * np.einsum("eai,ab,ebj->eij", B, D, B)
    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    n = 2 * bulk.n_nodes
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def vector_h1_gram(bulk: BulkMesh) -> sp.csr_matrix:
    """Discrete H^1 Gram matrix ``M + K`` for vector fields (interleaved dofs)."""
    g = scalar_mass(bulk) + scalar_stiffness(bulk)
    return sp.kron(g, sp.identity(2), format="csr")
