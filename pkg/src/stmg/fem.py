"""Lowest-order Nedelec (Whitney) assembly, nodal Laplacian, gradient and transfers."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Union

import numpy as np
import scipy.sparse as sp

from .mesh import LOCAL_EDGES, Refinement, TetMesh

Coefficient = Union[float, Mapping[int, float]]

_I, _J = LOCAL_EDGES.T


@dataclass(frozen=True)
class MaterialField:
    """Piecewise-constant conductivity and reluctivity, keyed by material label.

    A bare float applies to every label.
    """

    sigma: Coefficient = 1.0
    mu_inv: Coefficient = 1.0

    def per_tet(self, mesh: TetMesh) -> tuple[np.ndarray, np.ndarray]:
        sigma = _expand(self.sigma, mesh.material, "sigma")
        mu_inv = _expand(self.mu_inv, mesh.material, "mu_inv")
        return sigma, mu_inv


def _expand(coef: Coefficient, labels: np.ndarray, name: str) -> np.ndarray:
    if isinstance(coef, Mapping):
        missing = set(np.unique(labels).tolist()) - set(coef)
        if missing:
            raise ValueError(f"{name} has no value for material labels {sorted(missing)}")
        values = np.array([coef[int(l)] for l in labels], dtype=float)
    else:
        values = np.full(len(labels), float(coef))
    if np.any(values <= 0.0) or not np.all(np.isfinite(values)):
        raise ValueError(f"{name} must be positive and finite")
    return values


def barycentric_gradients(mesh: TetMesh) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the four barycentric coordinates, shape (nt, 4, 3), and volumes."""
    p = mesh.vertices[mesh.tets]
    P = np.concatenate([np.ones((mesh.n_tets, 4, 1)), p], axis=2)
    det = np.linalg.det(P)
    if np.any(np.abs(det) <= 1e-14 * np.abs(p).max() ** 3):
        raise ValueError("degenerate tetrahedron")
    C = np.linalg.inv(P)
    return np.transpose(C[:, 1:, :], (0, 2, 1)), np.abs(det) / 6.0


def element_matrices(mesh: TetMesh, sigma, mu_inv):
    """Signed local mass, curl-curl and nodal stiffness matrices.

    Returns arrays of shape (nt, 6, 6), (nt, 6, 6) and (nt, 4, 4).
    """
    grads, vol = barycentric_gradients(mesh)
    gg = np.einsum("tid,tjd->tij", grads, grads)
    # exact integral of lambda_i * lambda_j over a tet
    ll = vol[:, None, None] * (np.ones((4, 4)) + np.eye(4))[None] / 20.0

    def blk(A, r, c):
        return A[:, r][:, :, c]

    mass = (
        blk(ll, _I, _I) * blk(gg, _J, _J)
        - blk(ll, _I, _J) * blk(gg, _J, _I)
        - blk(ll, _J, _I) * blk(gg, _I, _J)
        + blk(ll, _J, _J) * blk(gg, _I, _I)
    )
    curls = 2.0 * np.cross(grads[:, _I], grads[:, _J])
    curlcurl = vol[:, None, None] * np.einsum("tkd,tld->tkl", curls, curls)

    s = mesh.tet_edge_signs.astype(float)
    ss = s[:, :, None] * s[:, None, :]
    mass = sigma[:, None, None] * ss * mass
    curlcurl = mu_inv[:, None, None] * ss * curlcurl
    nodal = (sigma * vol)[:, None, None] * gg
    return _sym(mass), _sym(curlcurl), _sym(nodal)


def _sym(A):
    return 0.5 * (A + np.swapaxes(A, 1, 2))


def _scatter(local: np.ndarray, dofs: np.ndarray, n: int) -> sp.csr_matrix:
    k = dofs.shape[1]
    rows = np.repeat(dofs, k, axis=1).ravel()
    cols = np.tile(dofs, (1, k)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    # duplicates of (i, j) and (j, i) may be summed in different orders; mirror
    # the upper triangle so the result is symmetric bit for bit
    U = sp.triu(A, 1)
    A = (sp.diags(A.diagonal()) + U + U.T).tocsr()
    A.sort_indices()
    return A


def gradient_matrix(mesh: TetMesh) -> sp.csr_matrix:
    """Incidence matrix: edge (i, j), i < j, maps a nodal vector y to y_j - y_i."""
    ne = mesh.n_edges
    rows = np.repeat(np.arange(ne), 2)
    cols = mesh.edges.ravel()
    vals = np.tile([-1.0, 1.0], ne)
    return sp.csr_matrix((vals, (rows, cols)), shape=(ne, mesh.n_vertices))


@dataclass(frozen=True, eq=False)
class SpatialOperators:
    """Assembled spatial operators restricted to the free degrees of freedom."""

    mesh: TetMesh
    M: sp.csr_matrix
    K: sp.csr_matrix
    Kn: sp.csr_matrix
    G: sp.csr_matrix
    bc: str
    free_edges: np.ndarray
    free_nodes: np.ndarray

    @property
    def n(self) -> int:
        return self.M.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.Kn.shape[0]

    def restrict_edges(self, full: np.ndarray) -> np.ndarray:
        return np.asarray(full)[..., self.free_edges]


def free_dofs(mesh: TetMesh, bc: str) -> tuple[np.ndarray, np.ndarray]:
    if bc == "neumann":
        return np.arange(mesh.n_edges), np.arange(mesh.n_vertices)
    if bc == "dirichlet":
        return np.flatnonzero(~mesh.boundary_edges), np.flatnonzero(~mesh.boundary_nodes)
    raise ValueError(f"unknown boundary condition {bc!r}")


def _submatrix(A, rows, cols) -> sp.csr_matrix:
    B = A[rows][:, cols].tocsr()
    B.sort_indices()
    return B


def assemble_operators(mesh: TetMesh, materials: MaterialField | None = None,
                       bc: str = "neumann") -> SpatialOperators:
    materials = materials or MaterialField()
    fe, fn = free_dofs(mesh, bc)
    sigma, mu_inv = materials.per_tet(mesh)
    mass, curlcurl, nodal = element_matrices(mesh, sigma, mu_inv)
    M = _scatter(mass, mesh.tet_edges, mesh.n_edges)
    K = _scatter(curlcurl, mesh.tet_edges, mesh.n_edges)
    Kn = _scatter(nodal, mesh.tets, mesh.n_vertices)
    G = gradient_matrix(mesh)
    return SpatialOperators(
        mesh=mesh,
        M=_submatrix(M, fe, fe),
        K=_submatrix(K, fe, fe),
        Kn=_submatrix(Kn, fn, fn),
        G=_submatrix(G, fe, fn),
        bc=bc,
        free_edges=fe,
        free_nodes=fn,
    )


def discrete_gradient(mesh: TetMesh, bc: str = "neumann") -> sp.csr_matrix:
    fe, fn = free_dofs(mesh, bc)
    return _submatrix(gradient_matrix(mesh), fe, fn)


def _fine_barycentric(ref: Refinement, verts: np.ndarray, coarse_tets: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of fine vertices w.r.t. the given coarse tets, exact."""
    ctv = ref.coarse.tets[coarse_tets]  # (k, 4)
    parent = ref.parent_edge[verts]
    own = (ctv == verts[:, None]).astype(float)
    safe = np.where(parent < 0, 0, parent)
    a, b = ref.coarse.edges[safe].T
    mid = 0.5 * ((ctv == a[:, None]).astype(float) + (ctv == b[:, None]).astype(float))
    return np.where((parent < 0)[:, None], own, mid)


def build_transfers(ref: Refinement, bc: str = "neumann") -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Edge and nodal prolongations from ``ref.coarse`` to ``ref.fine``.

    The edge entry (f, c) is the line integral of the Whitney function of
    coarse edge c along fine edge f, which for straight edges reduces to
    ``l_i(p) l_j(q) - l_i(q) l_j(p)`` in the barycentrics of the endpoints.
    """
    coarse, fine = ref.coarse, ref.fine
    if fine.n_tets != 8 * coarse.n_tets or len(ref.parent_tet) != fine.n_tets:
        raise ValueError("fine mesh is not the red refinement of the coarse mesh")

    fe_ids = fine.tet_edges.ravel()
    owner = np.repeat(ref.parent_tet, 6)
    uniq, first = np.unique(fe_ids, return_index=True)
    if len(uniq) != fine.n_edges:
        raise ValueError("fine edges not covered by children")
    ctet = owner[first]
    p, q = fine.edges[uniq].T
    lp = _fine_barycentric(ref, p, ctet)
    lq = _fine_barycentric(ref, q, ctet)
    vals = lp[:, _I] * lq[:, _J] - lq[:, _I] * lp[:, _J]
    vals = vals * coarse.tet_edge_signs[ctet]
    rows = np.repeat(uniq, 6)
    cols = coarse.tet_edges[ctet].ravel()
    vals = vals.ravel()
    keep = vals != 0.0
    P_edge = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])),
                           shape=(fine.n_edges, coarse.n_edges))

    nvf = fine.n_vertices
    survivors = np.flatnonzero(ref.parent_edge < 0)
    mids = np.flatnonzero(ref.parent_edge >= 0)
    ends = coarse.edges[ref.parent_edge[mids]]
    rows = np.concatenate([survivors, mids, mids])
    cols = np.concatenate([survivors, ends[:, 0], ends[:, 1]])
    vals = np.concatenate([np.ones(len(survivors)), np.full(2 * len(mids), 0.5)])
    P_node = sp.csr_matrix((vals, (rows, cols)), shape=(nvf, coarse.n_vertices))

    fe_c, fn_c = free_dofs(coarse, bc)
    fe_f, fn_f = free_dofs(fine, bc)
    return _submatrix(P_edge, fe_f, fe_c), _submatrix(P_node, fn_f, fn_c)


QUAD4_BARY = np.array(
    [[0.5854101966249685, 0.1381966011250105, 0.1381966011250105, 0.1381966011250105],
     [0.1381966011250105, 0.5854101966249685, 0.1381966011250105, 0.1381966011250105],
     [0.1381966011250105, 0.1381966011250105, 0.5854101966249685, 0.1381966011250105],
     [0.1381966011250105, 0.1381966011250105, 0.1381966011250105, 0.5854101966249685]]
)


def load_vector(ops: SpatialOperators, field: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Edge load vector (int f . w_e) for a vector field ``field(points) -> (N, 3)``.

    Uses the 4-point degree-2 rule, exact for linear fields.
    """
    mesh = ops.mesh
    grads, vol = barycentric_gradients(mesh)
    p = mesh.vertices[mesh.tets]  # (nt, 4, 3)
    out = np.zeros(mesh.n_edges)
    for bary in QUAD4_BARY:
        x = np.einsum("i,tid->td", bary, p)
        f = np.asarray(field(x), dtype=float).reshape(-1, 3)
        w = bary[_I][None, :, None] * grads[:, _J] - bary[_J][None, :, None] * grads[:, _I]
        contrib = 0.25 * vol[:, None] * np.einsum("tkd,td->tk", w, f)
        np.add.at(out, mesh.tet_edges, contrib * mesh.tet_edge_signs)
    return out[ops.free_edges]


def interpolate_constant(mesh: TetMesh, E) -> np.ndarray:
    """Edge degrees of freedom of a constant field E (exact tangential integrals)."""
    d = mesh.vertices[mesh.edges[:, 1]] - mesh.vertices[mesh.edges[:, 0]]
    return d @ np.asarray(E, dtype=float)


def write_coo(A, path) -> None:
    """Coordinate text export: header ``rows cols nnz`` then ``i j value`` lines."""
    C = sp.coo_matrix(A)
    order = np.lexsort((C.col, C.row))
    lines = [f"{C.shape[0]} {C.shape[1]} {C.nnz}"]
    lines += [f"{i} {j} {v:.17g}" for i, j, v in zip(C.row[order], C.col[order], C.data[order])]
    Path(path).write_text("\n".join(lines) + "\n")


def read_coo(path) -> sp.csr_matrix:
    lines = Path(path).read_text().split("\n")
    nr, nc, nnz = map(int, lines[0].split())
    data = np.loadtxt(lines[1:1 + nnz], ndmin=2) if nnz else np.zeros((0, 3))
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))),
                         shape=(nr, nc))
