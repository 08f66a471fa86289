"""Lagrange P1/P2 assembly on affine triangles.

Matrices are returned as ``scipy.sparse.csr_matrix``; symmetry is exact
because every element matrix is symmetrized before scattering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .geometry import EdgeTag, Mesh, gamma_arclength

# Dunavant 6-point rule, exact for degree 4 (barycentric weights sum to 1)
_A, _B = 0.445948490915965, 0.091576213509771
_WA, _WB = 0.223381589678011, 0.109951743655322
TRI_POINTS = np.array([
    [_A, _A], [1 - 2 * _A, _A], [_A, 1 - 2 * _A],
    [_B, _B], [1 - 2 * _B, _B], [_B, 1 - 2 * _B],
])
TRI_WEIGHTS = np.array([_WA] * 3 + [_WB] * 3)

# 3-point Gauss-Legendre on [0, 1]
GAUSS_T = 0.5 + 0.5 * np.array([-math.sqrt(3 / 5), 0.0, math.sqrt(3 / 5)])
GAUSS_W = np.array([5 / 18, 8 / 18, 5 / 18])


class Weight(str, Enum):
    ONE = "one"
    ARCLENGTH_S = "s"


def shape_functions(order: int, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values (q, n) and reference gradients (q, n, 2) at reference points."""
    xi, eta = pts[:, 0], pts[:, 1]
    l1, l2, l3 = 1 - xi - eta, xi, eta
    if order == 1:
        N = np.column_stack([l1, l2, l3])
        dN = np.broadcast_to(np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]), (len(pts), 3, 2)).copy()
        return N, dN
    N = np.column_stack([
        l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), l3 * (2 * l3 - 1),
        4 * l1 * l2, 4 * l2 * l3, 4 * l3 * l1,
    ])
    dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    L = np.stack([l1, l2, l3], axis=1)
    dN = np.empty((len(pts), 6, 2))
    for k in range(3):
        dN[:, k] = (4 * L[:, k] - 1)[:, None] * dl[k]
    for k, (i, j) in enumerate([(0, 1), (1, 2), (2, 0)]):
        dN[:, 3 + k] = 4 * (L[:, i, None] * dl[j] + L[:, j, None] * dl[i])
    return N, dN


def _geometry(mesh: Mesh):
    p = mesh.nodes[mesh.triangles]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # (T, 2, 2), columns = edges
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    Jinv_T = np.empty_like(J)
    Jinv_T[:, 0, 0] = J[:, 1, 1] / det
    Jinv_T[:, 0, 1] = -J[:, 1, 0] / det
    Jinv_T[:, 1, 0] = -J[:, 0, 1] / det
    Jinv_T[:, 1, 1] = J[:, 0, 0] / det
    return det, Jinv_T


def _scatter(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    local = 0.5 * (local + np.swapaxes(local, 1, 2))
    el = mesh.elements
    n = el.shape[1]
    rows = np.repeat(el, n, axis=1).ravel()
    cols = np.tile(el, (1, n)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_dofs, mesh.n_dofs)).tocsr()
    A.sum_duplicates()
    return A


def physical_gradients(mesh: Mesh, pts: np.ndarray = TRI_POINTS) -> np.ndarray:
    """Basis gradients (T, q, n, 2) at reference quadrature points."""
    _, dN = shape_functions(mesh.element_order, pts)
    _, Jinv_T = _geometry(mesh)
    return np.einsum("tij,qnj->tqni", Jinv_T, dN)


def assemble_stiffness(mesh: Mesh, component: int | None = None) -> sp.csr_matrix:
    """Stiffness matrix of the Dirichlet form; ``component`` restricts to d/dx or d/dy."""
    det, Jinv_T = _geometry(mesh)
    area = 0.5 * det
    if mesh.element_order == 1 and component is None:
        G = np.einsum("tij,nj->tni", Jinv_T, np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]))
        local = area[:, None, None] * np.einsum("tni,tmi->tnm", G, G)
        return _scatter(mesh, local)
    G = physical_gradients(mesh)
    if component is not None:
        G = G[..., component:component + 1]
    local = np.einsum("q,tqni,tqmi->tnm", TRI_WEIGHTS, G, G) * area[:, None, None]
    return _scatter(mesh, local)


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    det, _ = _geometry(mesh)
    area = 0.5 * det
    if mesh.element_order == 1:
        ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
        return _scatter(mesh, area[:, None, None] * ref)
    N, _ = shape_functions(2, TRI_POINTS)
    ref = np.einsum("q,qn,qm->nm", TRI_WEIGHTS, N, N)
    return _scatter(mesh, area[:, None, None] * ref)


@dataclass(frozen=True)
class DofMap:
    """Free dofs kept after eliminating the Dirichlet ones."""

    free: np.ndarray
    n_full: int

    def expand(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n_full,) + x.shape[1:], dtype=x.dtype)
        out[self.free] = x
        return out

    def restrict(self, x: np.ndarray) -> np.ndarray:
        return x[self.free]


def dirichlet_dofmap(mesh: Mesh, tags) -> DofMap:
    tags = set(tags)
    if not tags:
        raise ValueError("apply_dirichlet needs at least one tag")
    fixed = mesh.dofs_on(tags)
    free = np.setdiff1d(np.arange(mesh.n_dofs), fixed)
    if len(free) == 0:
        raise ValueError("the tag set constrains every node")
    return DofMap(free, mesh.n_dofs)


def apply_dirichlet(matrix: sp.spmatrix, mesh: Mesh, tags) -> tuple[sp.csr_matrix, DofMap]:
    """Eliminate rows and columns of dofs on edges carrying any of ``tags``."""
    dm = dirichlet_dofmap(mesh, tags)
    A = sp.csr_matrix(matrix)[dm.free][:, dm.free]
    return A.tocsr(), dm


def _edge_data(mesh: Mesh, tag: EdgeTag):
    edges = mesh.edges_with(tag)
    if len(edges) == 0:
        raise ValueError(f"mesh has no {tag.name} edges")
    a = mesh.nodes[edges[:, 0]]
    b = mesh.nodes[edges[:, 1]]
    length = np.linalg.norm(b - a, axis=1)
    return edges, a, b, length


def _edge_shape(order: int, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """1D trace basis on an edge parametrized by t in [0, 1]; dofs [a, b, (mid)]."""
    if order == 1:
        return np.column_stack([1 - t, t]), np.column_stack([-np.ones_like(t), np.ones_like(t)])
    N = np.column_stack([(1 - t) * (1 - 2 * t), t * (2 * t - 1), 4 * t * (1 - t)])
    dN = np.column_stack([4 * t - 3, 4 * t - 1, 4 - 8 * t])
    return N, dN


def boundary_mass(mesh: Mesh, tag: EdgeTag) -> sp.csr_matrix:
    edges, _, _, length = _edge_data(mesh, tag)
    N, _ = _edge_shape(mesh.element_order, GAUSS_T)
    ref = np.einsum("q,qn,qm->nm", GAUSS_W, N, N)
    local = length[:, None, None] * ref
    n = edges.shape[1]
    rows = np.repeat(edges, n, axis=1).ravel()
    cols = np.tile(edges, (1, n)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_dofs,) * 2).tocsr()
    A.sum_duplicates()
    return A


def boundary_load(mesh: Mesh, tag: EdgeTag, g) -> np.ndarray:
    """Vector of integrals of g(x, y) times each basis function over tagged edges."""
    edges, a, b, length = _edge_data(mesh, tag)
    N, _ = _edge_shape(mesh.element_order, GAUSS_T)
    pts = a[:, None, :] + GAUSS_T[None, :, None] * (b - a)[:, None, :]
    gv = np.asarray(g(pts[..., 0], pts[..., 1]))
    vals = np.einsum("q,eq,qn->en", GAUSS_W, gv, N) * length[:, None]
    out = np.zeros(mesh.n_dofs, dtype=vals.dtype)
    np.add.at(out, edges.ravel(), vals.ravel())
    return out


def w_in(L: float, y):
    """Trace of the incoming wave (X + i) sin(pi Y) at X = L."""
    return (L + 1j) * np.sin(np.pi * np.asarray(y))


def assemble_robin_boundary(mesh: Mesh, L: float) -> tuple[sp.csr_matrix, np.ndarray]:
    """Complex Robin contribution and load for the truncated threshold problem.

    Returns ``-1/(L - i) * M_L`` (boundary mass on X = L) and the load vector
    ``-2i/(L^2 + 1) * int w_in v dY``.
    """
    ML = boundary_mass(mesh, EdgeTag.ARTIFICIAL_BOUNDARY)
    R = (-1.0 / (L - 1j)) * ML.astype(complex)
    load = (-2j / (L**2 + 1)) * boundary_load(mesh, EdgeTag.ARTIFICIAL_BOUNDARY, lambda x, y: w_in(L, y))
    return R.tocsr(), load


def edge_integral(mesh: Mesh, tag: EdgeTag, field: np.ndarray, g) -> complex:
    """Integral over tagged edges of trace(field) * g(x, y)."""
    edges, a, b, length = _edge_data(mesh, tag)
    N, _ = _edge_shape(mesh.element_order, GAUSS_T)
    pts = a[:, None, :] + GAUSS_T[None, :, None] * (b - a)[:, None, :]
    trace = field[edges] @ N.T
    gv = np.asarray(g(pts[..., 0], pts[..., 1]))
    return np.sum(GAUSS_W * trace * gv * length[:, None])


def gamma_traces(mesh: Mesh, field: np.ndarray):
    """Arc length, trace value and tangential derivative at Gauss points of the free side.

    The derivative is taken per edge from the exact trace polynomial, oriented
    so that d/ds points away from the corner at the origin.  Returns arrays
    of shape (E, 3) plus the Gauss weights times edge lengths.
    """
    edges, a, b, length = _edge_data(mesh, EdgeTag.FREE_SIDE)
    N, dN = _edge_shape(mesh.element_order, GAUSS_T)
    pts = a[:, None, :] + GAUSS_T[None, :, None] * (b - a)[:, None, :]
    s = gamma_arclength(mesh, pts)
    vals = field[edges]
    trace = vals @ N.T
    dtrace = (vals @ dN.T) / length[:, None]
    sa = gamma_arclength(mesh, a)
    sb = gamma_arclength(mesh, b)
    dtrace = dtrace * np.sign(sb - sa)[:, None]
    return s, trace, dtrace, GAUSS_W[None, :] * length[:, None]


def gamma_weighted_integral(mesh: Mesh, field, weight: Weight = Weight.ONE,
                            quantity: str = "value") -> float:
    """Integral over the free side of ``w(s) * q`` with q one of

    ``value``  the trace itself,
    ``value_sq``  |trace|^2,
    ``ds_sq``  |d trace / ds|^2,

    and ``w`` either 1 or the arc length s from the tip corner (0, 0).
    """
    field = np.asarray(field)
    if field.ndim == 0:
        field = np.full(mesh.n_dofs, field, dtype=float)
    s, tr, dtr, w = gamma_traces(mesh, field)
    if quantity == "value":
        q = tr
    elif quantity == "value_sq":
        q = np.abs(tr) ** 2
    elif quantity == "ds_sq":
        q = np.abs(dtr) ** 2
    else:
        raise ValueError(f"unknown quantity {quantity!r}")
    if Weight(weight) is Weight.ARCLENGTH_S:
        q = s * q
    total = np.sum(w * q)
    return float(total.real) if np.isrealobj(q) else complex(total)


def write_coo(A: sp.spmatrix, path) -> None:
    """Coordinate text export, one ``i j value`` per line (complex as ``re im``)."""
    C = sp.coo_matrix(A)
    with Path(path).open("w") as fh:
        fh.write(f"# {C.shape[0]} {C.shape[1]} {C.nnz}\n")
        if np.iscomplexobj(C.data):
            np.savetxt(fh, np.column_stack([C.row, C.col, C.data.real, C.data.imag]),
                       fmt=["%d", "%d", "%.17g", "%.17g"])
        else:
            np.savetxt(fh, np.column_stack([C.row, C.col, C.data]), fmt=["%d", "%d", "%.17g"])


def interpolate(mesh: Mesh, f) -> np.ndarray:
    return np.asarray(f(mesh.nodes[:, 0], mesh.nodes[:, 1]))


def element_quadrature(mesh: Mesh):
    """Physical quadrature points (T, q, 2), weights (T, q) and basis values (q, n)."""
    det, _ = _geometry(mesh)
    p = mesh.nodes[mesh.triangles]
    lam = np.column_stack([1 - TRI_POINTS.sum(axis=1), TRI_POINTS])
    xq = np.einsum("qk,tkd->tqd", lam, p)
    N, _ = shape_functions(mesh.element_order, TRI_POINTS)
    return xq, 0.5 * det[:, None] * TRI_WEIGHTS[None, :], N
