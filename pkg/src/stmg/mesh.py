"""Tetrahedral meshes and nested hierarchies built by uniform red refinement."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# local edge k of a tet joins local vertices LOCAL_EDGES[k]
LOCAL_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
LOCAL_FACES = np.array([(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)])

_EDGE_INDEX = {(int(a), int(b)): k for k, (a, b) in enumerate(LOCAL_EDGES)}


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TetMesh:
    """Unstructured tetrahedral mesh with global edge numbering.

    Edges are stored as ``(i, j)`` with ``i < j``; ``tet_edge_signs[t, k]`` is
    +1 when local edge ``k`` of tet ``t`` (lower to higher *local* index)
    runs from the lower to the higher global vertex id.
    """

    vertices: np.ndarray
    tets: np.ndarray
    material: np.ndarray
    edges: np.ndarray = field(repr=False)
    tet_edges: np.ndarray = field(repr=False)
    tet_edge_signs: np.ndarray = field(repr=False)
    boundary_edges: np.ndarray = field(repr=False)
    boundary_nodes: np.ndarray = field(repr=False)

    @classmethod
    def from_arrays(cls, vertices, tets, material=None) -> TetMesh:
        vertices = np.ascontiguousarray(vertices, dtype=float)
        tets = np.ascontiguousarray(tets, dtype=np.int64)
        if tets.ndim != 2 or tets.shape[1] != 4:
            raise MeshError("tets must have shape (n, 4)")
        if material is None:
            material = np.zeros(len(tets), dtype=np.int64)
        material = np.asarray(material, dtype=np.int64)
        if material.shape != (len(tets),):
            raise MeshError(
                f"expected {len(tets)} material labels, got {material.size}"
            )
        if len(tets) and (tets.min() < 0 or tets.max() >= len(vertices)):
            raise MeshError("tet references a nonexistent vertex")

        pairs = tets[:, LOCAL_EDGES]  # (nt, 6, 2)
        lo = pairs.min(axis=2)
        hi = pairs.max(axis=2)
        keys = np.stack([lo.ravel(), hi.ravel()], axis=1)
        edges, inverse = np.unique(keys, axis=0, return_inverse=True)
        tet_edges = inverse.reshape(-1, 6)
        signs = np.where(pairs[:, :, 0] < pairs[:, :, 1], 1, -1).astype(np.int8)

        faces = np.sort(tets[:, LOCAL_FACES].reshape(-1, 3), axis=1)
        ufaces, counts = np.unique(faces, axis=0, return_counts=True)
        bfaces = ufaces[counts == 1]
        boundary_nodes = np.zeros(len(vertices), dtype=bool)
        boundary_nodes[bfaces.ravel()] = True
        bpairs = np.concatenate([bfaces[:, [0, 1]], bfaces[:, [0, 2]], bfaces[:, [1, 2]]])
        boundary_edges = np.zeros(len(edges), dtype=bool)
        if len(bpairs):
            boundary_edges[_lookup_edges(edges, bpairs)] = True

        mesh = cls(vertices, tets, material, edges, tet_edges, signs,
                   boundary_edges, boundary_nodes)
        if len(tets) and np.any(mesh.volumes() <= 0.0):
            raise MeshError("degenerate tetrahedron")
        return mesh

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    def volumes(self) -> np.ndarray:
        p = self.vertices[self.tets]
        d = p[:, 1:] - p[:, :1]
        return np.abs(np.linalg.det(d)) / 6.0

    def edge_lengths(self) -> np.ndarray:
        v = self.vertices
        return np.linalg.norm(v[self.edges[:, 1]] - v[self.edges[:, 0]], axis=1)

    def longest_edges(self) -> np.ndarray:
        """h_T for every tet: the length of its longest edge."""
        return self.edge_lengths()[self.tet_edges].max(axis=1)

    def edge_index(self, pairs) -> np.ndarray:
        """Global ids of the edges given as vertex pairs (any order)."""
        pairs = np.sort(np.atleast_2d(np.asarray(pairs, dtype=np.int64)), axis=1)
        return _lookup_edges(self.edges, pairs)


def _lookup_edges(edges: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    # edges are lexicographically sorted by np.unique
    nv = int(max(edges.max(), pairs.max())) + 1
    keys = edges[:, 0] * nv + edges[:, 1]
    q = pairs[:, 0] * nv + pairs[:, 1]
    idx = np.searchsorted(keys, q)
    if np.any(idx >= len(keys)) or np.any(keys[np.minimum(idx, len(keys) - 1)] != q):
        raise MeshError("edge not present in mesh")
    return idx


def longest_edge(mesh: TetMesh, tet: int) -> float:
    if not 0 <= tet < mesh.n_tets:
        raise IndexError(f"tet id {tet} out of range for mesh with {mesh.n_tets} tets")
    p = mesh.vertices[mesh.tets[tet]]
    a, b = LOCAL_EDGES.T
    return float(np.linalg.norm(p[b] - p[a], axis=1).max())


TWO_TETS_VERTICES = np.array(
    [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]]
)
TWO_TETS = np.array([[0, 1, 2, 3], [1, 2, 3, 4]])

CUBE_VERTICES = np.array(
    [[(i >> 0) & 1, (i >> 1) & 1, (i >> 2) & 1] for i in range(8)], dtype=float
)
# Kuhn subdivision: every tet contains the main diagonal 0 -> 7
CUBE_TETS = np.array(
    [[0, 1, 3, 7], [0, 1, 5, 7], [0, 2, 3, 7], [0, 2, 6, 7], [0, 4, 5, 7], [0, 4, 6, 7]]
)

BASE_MESHES = {
    "two_tets": (TWO_TETS_VERTICES, TWO_TETS),
    "unit_cube": (CUBE_VERTICES, CUBE_TETS),
}


def build_base_mesh(kind: str = "two_tets", materials=None) -> TetMesh:
    try:
        vertices, tets = BASE_MESHES[kind]
    except KeyError:
        raise MeshError(f"unknown base mesh {kind!r}; choose from {sorted(BASE_MESHES)}") from None
    if materials is None:
        materials = np.zeros(len(tets), dtype=np.int64)
    if len(materials) != len(tets):
        raise MeshError(f"{kind} has {len(tets)} tets but {len(materials)} materials were given")
    return TetMesh.from_arrays(vertices, tets, materials)


@dataclass(frozen=True, eq=False)
class Refinement:
    """Parent maps between a coarse mesh and its red refinement.

    Fine vertex ``v`` is coarse vertex ``v`` when ``parent_edge[v] == -1``,
    otherwise the midpoint of coarse edge ``parent_edge[v]``.
    """

    coarse: TetMesh
    fine: TetMesh
    parent_edge: np.ndarray
    parent_tet: np.ndarray


# Bey's ordering keeps the number of similarity classes bounded under
# repeated refinement; the interior octahedron is split along x02 -- x13.
_CHILDREN = [
    ("0", "01", "02", "03"),
    ("01", "1", "12", "13"),
    ("02", "12", "2", "23"),
    ("03", "13", "23", "3"),
    ("01", "02", "03", "13"),
    ("01", "02", "12", "13"),
    ("02", "03", "13", "23"),
    ("02", "12", "13", "23"),
]


def refine_uniform(mesh: TetMesh) -> Refinement:
    nv = mesh.n_vertices
    mid = mesh.vertices[mesh.edges].mean(axis=1)
    vertices = np.concatenate([mesh.vertices, mid])
    # midpoint of global edge e gets id nv + e
    local = {str(i): mesh.tets[:, i] for i in range(4)}
    for k, (a, b) in enumerate(LOCAL_EDGES):
        local[f"{a}{b}"] = nv + mesh.tet_edges[:, k]
    children = np.stack(
        [np.stack([local[s] for s in child], axis=1) for child in _CHILDREN], axis=1
    )
    tets = children.reshape(-1, 4)
    parent_tet = np.repeat(np.arange(mesh.n_tets), 8)
    fine = TetMesh.from_arrays(vertices, tets, mesh.material[parent_tet])
    parent_edge = np.concatenate([np.full(nv, -1), np.arange(mesh.n_edges)])
    return Refinement(mesh, fine, parent_edge, parent_tet)


@dataclass(frozen=True, eq=False)
class MeshHierarchy:
    levels: list[TetMesh]
    refinements: list[Refinement]

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, k: int) -> TetMesh:
        return self.levels[k]

    @property
    def finest(self) -> TetMesh:
        return self.levels[-1]


def build_hierarchy(base: TetMesh, n_refinements: int) -> MeshHierarchy:
    """Level 0 is ``base``, level ``k`` is ``base`` refined ``k`` times."""
    if n_refinements < 0:
        raise ValueError("n_refinements must be nonnegative")
    levels, refinements = [base], []
    for _ in range(n_refinements):
        r = refine_uniform(levels[-1])
        refinements.append(r)
        levels.append(r.fine)
    return MeshHierarchy(levels, refinements)


def mesh_counts(kind: str, n_refinements: int) -> tuple[int, int, int, int]:
    """(vertices, edges, faces, tets) after repeated red refinement, in closed form."""
    m = build_base_mesh(kind)
    faces = np.unique(np.sort(m.tets[:, LOCAL_FACES].reshape(-1, 3), axis=1), axis=0)
    v, e, f, t = m.n_vertices, m.n_edges, len(faces), m.n_tets
    for _ in range(n_refinements):
        v, e, f, t = v + e, 2 * e + 3 * f + t, 4 * f + 8 * t, 8 * t
    return v, e, f, t


def write_mesh(mesh: TetMesh, path) -> None:
    """Plain-text dump: one section per entity, whitespace separated.

    Layout::

        # stmg tetmesh v1
        vertices <n>
        x y z
        tets <n>
        v0 v1 v2 v3
        edges <n>
        i j
        materials <n>
        label
    """
    lines = ["# stmg tetmesh v1", f"vertices {mesh.n_vertices}"]
    lines += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines.append(f"tets {mesh.n_tets}")
    lines += [" ".join(map(str, t)) for t in mesh.tets]
    lines.append(f"edges {mesh.n_edges}")
    lines += [f"{i} {j}" for i, j in mesh.edges]
    lines.append(f"materials {mesh.n_tets}")
    lines += [str(m) for m in mesh.material]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> TetMesh:
    sections: dict[str, list[list[str]]] = {}
    current = None
    for raw in Path(path).read_text().splitlines():
        if not raw.strip() or raw.startswith("#"):
            continue
        parts = raw.split()
        if parts[0] in ("vertices", "tets", "edges", "materials"):
            current = sections.setdefault(parts[0], [])
            continue
        current.append(parts)
    mesh = TetMesh.from_arrays(
        np.array(sections["vertices"], dtype=float),
        np.array(sections["tets"], dtype=np.int64),
        np.array(sections["materials"], dtype=np.int64).ravel(),
    )
    if not np.array_equal(mesh.edges, np.array(sections["edges"], dtype=np.int64)):
        raise MeshError("edge section inconsistent with tets")
    return mesh
