"""Unit-square Helmholtz model: structured triangular mesh, boundary
classification, and P1 assembly of the second-order system matrices.

Geometry convention: the domain is [0,1]^2 (meters), each grid cell is split
along its lower-left to upper-right diagonal, triangles are counterclockwise.
The Neumann segment sits on the left edge, x = 0, y in [ymin, ymax]; the rest
of the boundary carries the first-order impedance (absorbing) condition that
produces the damping matrix.  Wave numbers are in 1/m.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .errors import (DuplicateProbeWarning, EmptyNeumannBoundary,
                     NotClassified, ShapeError)
from .linalg import from_triplets
from .system import SecondOrderSystem

LABEL_NONE = 0
LABEL_NEUMANN = 1
LABEL_ROBIN = 2


@dataclass(frozen=True)
class BoundarySpec:
    """Neumann segment location on the boundary; the remainder is impedance.

    The segment is a vertical slice of the boundary at ``x = neumann_x``
    between ``neumann_ymin`` and ``neumann_ymax``.  ``datum_scale`` scales the
    assembled unit-Neumann load vector; the physical excitation (e.g. 10i)
    is carried by the input signal, not by the load vector.
    """

    neumann_x: float = 0.0
    neumann_ymin: float = 0.75
    neumann_ymax: float = 1.0
    datum_scale: float = 1.0
    snap_tol: float = 1e-12


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray          # (n_nodes, 2) coordinates
    triangles: np.ndarray      # (n_tri, 3) node ids, counterclockwise
    boundary_edges: np.ndarray  # (n_edge, 2) node ids
    edge_labels: np.ndarray | None = None  # LABEL_* per boundary edge

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    def triangle_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))

    def mesh_size(self) -> float:
        """Grid spacing h, from the largest triangle area (h^2/2 per cell half)."""
        return math.sqrt(2.0 * float(self.triangle_areas().max()))

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.nodes).tobytes())
        h.update(np.ascontiguousarray(self.triangles).tobytes())
        h.update(np.ascontiguousarray(self.boundary_edges).tobytes())
        if self.edge_labels is not None:
            h.update(np.ascontiguousarray(self.edge_labels).tobytes())
        return h.hexdigest()

    def validate(self):
        """Check the structural mesh invariants (used by tests)."""
        areas = self.triangle_areas()
        assert (areas > 0).all(), "non-positive triangle area"
        counts = {}
        for tri in self.triangles:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (min(a, b), max(a, b))
                counts[key] = counts.get(key, 0) + 1
        for a, b in self.boundary_edges:
            key = (min(a, b), max(a, b))
            assert counts.get(key) == 1, f"boundary edge {key} not on exactly one triangle"


@dataclass
class MeasurementSet:
    """Pressure probe locations and, once resolved, their nearest node ids."""

    points: np.ndarray              # (n_pts, 2)
    node_ids: np.ndarray | None = None


def build_unit_square_mesh(m: int) -> Mesh:
    """Structured triangulation of [0,1]^2 with m subdivisions per side.

    (m+1)^2 nodes, 2 m^2 right triangles, 4 m boundary edges.
    """
    if m < 1:
        raise ValueError(f"need m >= 1 subdivisions, got {m}")
    side = np.linspace(0.0, 1.0, m + 1)
    xg, yg = np.meshgrid(side, side, indexing="xy")
    nodes = np.column_stack([xg.ravel(), yg.ravel()])

    def nid(ix, iy):
        return iy * (m + 1) + ix

    tris = []
    for iy in range(m):
        for ix in range(m):
            a, b = nid(ix, iy), nid(ix + 1, iy)
            c, d = nid(ix + 1, iy + 1), nid(ix, iy + 1)
            tris.append((a, b, c))  # diagonal runs a -> c
            tris.append((a, c, d))
    edges = []
    for ix in range(m):                       # bottom, y = 0
        edges.append((nid(ix, 0), nid(ix + 1, 0)))
    for iy in range(m):                       # right, x = 1
        edges.append((nid(m, iy), nid(m, iy + 1)))
    for ix in range(m):                       # top, y = 1
        edges.append((nid(ix, m), nid(ix + 1, m)))
    for iy in range(m):                       # left, x = 0
        edges.append((nid(0, iy), nid(0, iy + 1)))
    return Mesh(nodes=nodes,
                triangles=np.asarray(tris, dtype=np.int64),
                boundary_edges=np.asarray(edges, dtype=np.int64))


def classify_boundary(mesh: Mesh, spec: BoundarySpec = BoundarySpec()) -> Mesh:
    """Label boundary edges as Neumann or impedance per the boundary spec.

    An edge is Neumann iff both endpoints lie on the configured segment
    (within snapping tolerance).  Raises ``EmptyNeumannBoundary`` when the
    mesh has no edge on the segment (e.g. too coarse to hit y = 0.75).
    """
    tol = spec.snap_tol
    pts = mesh.nodes[mesh.boundary_edges]          # (n_edge, 2, 2)
    on_x = np.abs(pts[:, :, 0] - spec.neumann_x) <= tol
    in_y = (pts[:, :, 1] >= spec.neumann_ymin - tol) & (pts[:, :, 1] <= spec.neumann_ymax + tol)
    is_neumann = (on_x & in_y).all(axis=1)
    if not is_neumann.any():
        raise EmptyNeumannBoundary(
            f"no boundary edge lies on x={spec.neumann_x}, "
            f"y in [{spec.neumann_ymin}, {spec.neumann_ymax}]")
    labels = np.where(is_neumann, LABEL_NEUMANN, LABEL_ROBIN).astype(np.int8)
    return replace(mesh, edge_labels=labels)


def _tri_matrices(p):
    """Exact P1 element stiffness and mass for one triangle (3x3 each)."""
    x, y = p[:, 0], p[:, 1]
    b = np.array([y[1] - y[2], y[2] - y[0], y[0] - y[1]])
    c = np.array([x[2] - x[1], x[0] - x[2], x[1] - x[0]])
    # signed area, positive for counterclockwise vertices
    area = 0.5 * ((x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0]))
    ke = (np.outer(b, b) + np.outer(c, c)) / (4.0 * area)
    me = area / 12.0 * np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]])
    return ke, me


def assemble(mesh: Mesh, probes: MeasurementSet | None = None,
             spec: BoundarySpec = BoundarySpec()) -> SecondOrderSystem:
    """Assemble M, D, K, B, C from a labeled mesh.

    K from the gradient-gradient form, M from the domain mass form, D from
    the 1-d boundary mass on the impedance edges, B as the unit-datum Neumann
    load.  All element integrals are exact for P1.  ``probes`` defaults to
    the built-in 13-point measurement arcs.
    """
    if mesh.edge_labels is None:
        raise NotClassified("mesh boundary edges are unlabeled; run classify_boundary")
    n = mesh.n_nodes
    k_trip, m_trip = [], []
    for tri in mesh.triangles:
        ke, me = _tri_matrices(mesh.nodes[tri])
        for a in range(3):
            for b in range(3):
                k_trip.append((tri[a], tri[b], ke[a, b]))
                m_trip.append((tri[a], tri[b], me[a, b]))
    d_trip, b_trip = [], []
    for edge, label in zip(mesh.boundary_edges, mesh.edge_labels):
        length = float(np.linalg.norm(mesh.nodes[edge[1]] - mesh.nodes[edge[0]]))
        if label == LABEL_ROBIN:
            for a in range(2):
                for b in range(2):
                    d_trip.append((edge[a], edge[b], length / 6.0 * (2.0 if a == b else 1.0)))
        else:
            for a in range(2):
                b_trip.append((edge[a], 0, spec.datum_scale * length / 2.0))
    if probes is None:
        probes = default_measurement_points()
    C = measurement_matrix(mesh, probes)
    meta = {"mesh_hash": mesh.content_hash(), "boundary_spec": spec,
            "mesh_size": mesh.mesh_size()}
    return SecondOrderSystem(
        M=from_triplets(m_trip, n, n),
        D=from_triplets(d_trip, n, n),
        K=from_triplets(k_trip, n, n),
        B=from_triplets(b_trip, n, 1),
        C=C,
        meta=meta,
    )


def default_measurement_points() -> MeasurementSet:
    """The built-in probes: two arcs centered at the top-left corner (0, 1).

    Five points on radius 0.5111 at angles -15deg * j (j = 1..5) and eight on
    radius 0.7611 at -10deg * j (j = 1..8).
    """
    pts = []
    for j in range(1, 6):
        ang = math.radians(-15.0 * j)
        pts.append((0.5111 * math.cos(ang), 1.0 + 0.5111 * math.sin(ang)))
    for j in range(1, 9):
        ang = math.radians(-10.0 * j)
        pts.append((0.7611 * math.cos(ang), 1.0 + 0.7611 * math.sin(ang)))
    return MeasurementSet(points=np.asarray(pts))


def resolve_points(mesh: Mesh, probes: MeasurementSet) -> MeasurementSet:
    """Snap each probe to its nearest mesh node (ties -> lowest node id)."""
    pts = np.atleast_2d(np.asarray(probes.points, dtype=float))
    lo, hi = mesh.nodes.min(), mesh.nodes.max()
    if (pts < lo - 1e-9).any() or (pts > hi + 1e-9).any():
        raise ValueError("measurement point outside the meshed domain")
    ids = np.empty(pts.shape[0], dtype=np.int64)
    h = mesh.mesh_size()
    for i, pt in enumerate(pts):
        d2 = ((mesh.nodes - pt) ** 2).sum(axis=1)
        ids[i] = int(np.argmin(d2))  # argmin takes the first (lowest id) on ties
        if math.sqrt(d2[ids[i]]) > h * math.sqrt(2.0) * 0.5 + 1e-9:
            raise ValueError(f"probe {pt} resolves {math.sqrt(d2[ids[i]]):.3g} away, "
                             f"beyond element size {h:.3g}")
    seen = set()
    for i, nid in enumerate(ids):
        if nid in seen:
            warnings.warn(f"probe {i} at {pts[i]} shares node {nid} with an earlier probe",
                          DuplicateProbeWarning)
        seen.add(int(nid))
    return MeasurementSet(points=pts, node_ids=ids)


def measurement_matrix(mesh: Mesh, probes: MeasurementSet) -> sp.csr_array:
    """Output matrix C: one one-hot row per probe at its resolved node."""
    resolved = probes if probes.node_ids is not None else resolve_points(mesh, probes)
    rows = [(i, int(nid), 1.0) for i, nid in enumerate(resolved.node_ids)]
    return from_triplets(rows, len(resolved.node_ids), mesh.n_nodes)


def resolution_ratio(mesh_size: float, k: float) -> float:
    """Points-per-wavelength measure lambda/h = 2*pi / (k*h)."""
    return 2.0 * math.pi / (k * mesh_size)


def write_mesh_text(mesh: Mesh, path):
    """Plain-text node/element listing (ids, coordinates, connectivity, labels)."""
    names = {LABEL_NONE: "-", LABEL_NEUMANN: "N", LABEL_ROBIN: "R"}
    with open(path, "w") as fh:
        fh.write(f"nodes {mesh.n_nodes}\n")
        for i, (x, y) in enumerate(mesh.nodes):
            fh.write(f"{i} {x!r} {y!r}\n")
        fh.write(f"triangles {len(mesh.triangles)}\n")
        for i, tri in enumerate(mesh.triangles):
            fh.write(f"{i} {tri[0]} {tri[1]} {tri[2]}\n")
        fh.write(f"boundary_edges {len(mesh.boundary_edges)}\n")
        labels = mesh.edge_labels if mesh.edge_labels is not None else [LABEL_NONE] * len(mesh.boundary_edges)
        for i, (edge, lab) in enumerate(zip(mesh.boundary_edges, labels)):
            fh.write(f"{i} {edge[0]} {edge[1]} {names[int(lab)]}\n")
