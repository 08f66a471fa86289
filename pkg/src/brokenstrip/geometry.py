"""Domains and structured triangulations.

Two domain families are meshed here:

* the thin trapezoid ``{0 < y < eps, y tan(alpha) < x < 1}`` whose slanted
  side carries the Neumann (or, optionally, Dirichlet) condition, and
* the half-strip ``{0 < Y < 1, Y tan(alpha) < X < L}`` truncated at ``X = L``.

Both are meshed by the same column/row generator expressed in units of the
strip thickness, so the trapezoid mesh seen in the stretched variable
``z / eps`` coincides with the half-strip mesh near the tip.  Harness
comparisons between the thin domain and its near-field model rely on that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path

import numpy as np


class EdgeTag(IntEnum):
    DIRICHLET_WALL = 1
    FREE_SIDE = 2
    ARTIFICIAL_BOUNDARY = 3


class GammaBC(str, Enum):
    NEUMANN = "neumann"
    DIRICHLET = "dirichlet"


def singular_exponents(alpha: float) -> tuple[float, float]:
    """Leading corner exponents at the bottom (tip) and top ends of the slanted side."""
    return math.pi / (math.pi - 2 * alpha), math.pi / (math.pi + 2 * alpha)


@dataclass(frozen=True)
class TrapezoidGeom:
    eps: float
    alpha: float
    gamma_bc: str = GammaBC.NEUMANN

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not abs(self.alpha) < math.pi / 2:
            raise ValueError(f"|alpha| must be < pi/2, got {self.alpha}")
        object.__setattr__(self, "gamma_bc", GammaBC(self.gamma_bc))
        if self.eps * math.tan(self.alpha) >= 1:
            raise ValueError("slanted side leaves the unit length (eps*tan(alpha) >= 1)")

    @property
    def area(self) -> float:
        return self.eps - self.eps**2 * math.tan(self.alpha) / 2

    @property
    def gamma_length(self) -> float:
        return self.eps / math.cos(self.alpha)


@dataclass(frozen=True)
class HalfStripGeom:
    alpha: float
    truncation_L: float = 8.0

    def __post_init__(self):
        if not 0 <= self.alpha < math.pi / 2:
            raise ValueError(f"alpha must lie in [0, pi/2), got {self.alpha}")
        if not self.truncation_L > math.tan(self.alpha):
            raise ValueError(
                f"truncation L={self.truncation_L} must exceed tan(alpha)={math.tan(self.alpha):.4g}"
            )

    @property
    def area(self) -> float:
        return self.truncation_L - math.tan(self.alpha) / 2

    @property
    def gamma_length(self) -> float:
        return 1.0 / math.cos(self.alpha)


@dataclass(frozen=True)
class GradingSpec:
    """Geometric clustering of mesh lines toward the corners of the slanted side.

    With ``first_width=None`` the first layer width (in thickness units) is
    ``h ** (1 / lambda)`` where ``lambda`` is the relevant corner exponent;
    corners with exponent >= 1 are left ungraded.  ``first_width`` forces a
    fixed (deeper) first layer, used when boundary traces near the corner
    matter.
    """

    enabled: bool = True
    ratio: float = 1.5
    first_width: float | None = None
    all_corners: bool = False

    def __post_init__(self):
        if self.ratio <= 1:
            raise ValueError("grading ratio must exceed 1")


NO_GRADING = GradingSpec(enabled=False)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangulation with tagged boundary edges.

    ``triangles`` always holds the vertex triples; for P2 meshes ``elements``
    carries the six dofs ``[v0, v1, v2, m01, m12, m20]`` and midside nodes are
    appended after the ``n_vertices`` vertices in ``nodes``.  ``boundary_dofs``
    is ``[a, b]`` (P1) or ``[a, b, mid]`` (P2) per boundary edge.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: np.ndarray
    element_order: int
    corner_nodes: tuple[int, int]
    elements: np.ndarray
    boundary_dofs: np.ndarray
    n_vertices: int
    meta: dict = field(default_factory=dict)

    @property
    def n_dofs(self) -> int:
        return len(self.nodes)

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def area(self) -> float:
        return float(math.fsum(self.signed_areas()))

    def min_quality(self) -> float:
        """Smallest normalized shape quality 4*sqrt(3)*A / sum(edge^2) (1 for equilateral)."""
        p = self.nodes[self.triangles]
        e2 = sum(np.sum((p[:, (k + 1) % 3] - p[:, k]) ** 2, axis=1) for k in range(3))
        return float(np.min(4 * math.sqrt(3) * self.signed_areas() / e2))

    def edges_with(self, tag: EdgeTag) -> np.ndarray:
        return self.boundary_dofs[self.edge_tags == tag]

    def dofs_on(self, tags) -> np.ndarray:
        mask = np.isin(self.edge_tags, [int(t) for t in tags])
        return np.unique(self.boundary_dofs[mask])

    def with_order(self, order: int) -> "Mesh":
        if order == self.element_order:
            return self
        return _assemble_mesh(
            self.nodes[: self.n_vertices], self.triangles, self.boundary_edges,
            self.edge_tags, self.corner_nodes, order, self.meta,
        )


def _graded_layers(first: float, h: float, ratio: float) -> list[float]:
    widths = []
    w = first
    while w < h / ratio:
        widths.append(w)
        w *= ratio
    return widths


def _column_positions(length: float, h: float, graded: list[float],
                      far: tuple[float, float, float] | None = None) -> np.ndarray:
    """Abscissas starting at 0: graded layers, then cells of width exactly h.

    Fixed cell width keeps meshes of different lengths identical on their
    common part; the remainder is absorbed by the last cell.  With
    ``far = (start, ratio, max_width)`` cells beyond ``start`` grow
    geometrically up to ``max_width``.
    """
    start = float(np.sum(graded))
    if start + h >= length:
        raise ValueError("grading layers exceed the domain length")
    stop = length if far is None else min(length, max(far[0], start + h))
    n = max(0, int(math.floor((stop - start) / h - 0.5)))
    pos = list(np.concatenate([[0.0], np.cumsum(graded), start + h * np.arange(1, n + 1)]))
    if far is not None and stop < length:
        _, ratio, max_width = far
        w = h
        while True:
            w = min(w * ratio, max_width)
            if pos[-1] + 1.5 * w >= length:
                break
            pos.append(pos[-1] + w)
    pos.append(length)
    return np.asarray(pos)


def _row_positions(h: float, grade_bottom: float | None, grade_top: float | None, ratio: float) -> np.ndarray:
    """Rows across the unit thickness, optionally graded toward either wall."""
    lo = _graded_layers(grade_bottom, h, ratio) if grade_bottom else []
    hi = _graded_layers(grade_top, h, ratio) if grade_top else []
    y_lo = np.concatenate([[0.0], np.cumsum(lo)]) if lo else np.array([0.0])
    y_hi = 1.0 - (np.concatenate([[0.0], np.cumsum(hi)]) if hi else np.array([0.0]))
    a, b = y_lo[-1], y_hi[-1]
    if b - a <= 0:
        raise ValueError("row grading exhausts the thickness")
    n = max(1, int(math.ceil((b - a) / h - 1e-9)))
    mid = np.linspace(a, b, n + 1)
    return np.concatenate([y_lo[:-1], mid, y_hi[-2::-1]])


def _grading_widths(alpha: float, h: float, grading: GradingSpec) -> tuple[float | None, float | None, float | None]:
    """First widths for (columns at the slanted side, rows at bottom, rows at top)."""
    if not grading.enabled:
        return None, None, None
    lam_tip, lam_top = singular_exponents(alpha)

    def first(lam):
        if lam >= 1 and not (grading.all_corners and grading.first_width is not None):
            return None
        if grading.first_width is not None:
            return min(grading.first_width, h)
        w = h ** (1.0 / lam)
        return w if w < h / grading.ratio else None

    lam_min = min(lam_tip, lam_top)
    return first(lam_min), first(lam_tip), first(lam_top)


def _blend_distance(tan_a: float, length: float) -> float:
    # column lines bend from parallel-to-Gamma into verticals over this distance
    return min(1.5 * abs(tan_a) + 1.0, length)


def _structured_mesh(length: float, tan_a: float, h: float, grading: GradingSpec,
                     alpha: float, right_tag: EdgeTag, order: int, far=None) -> Mesh:
    """Mesh of {0<Y<1, Y tan(a) < X < length} in thickness units."""
    gcol, gbot, gtop = _grading_widths(alpha, h, grading)
    a = _column_positions(length, h, _graded_layers(gcol, h, grading.ratio) if gcol else [], far)
    eta = _row_positions(h, gbot, gtop, grading.ratio)
    nx, ny = len(a) - 1, len(eta) - 1
    d = _blend_distance(tan_a, length)

    A, E = np.meshgrid(a, eta, indexing="ij")  # (nx+1, ny+1)
    X = A + E * tan_a * np.clip(1.0 - A / d, 0.0, None)
    X[-1, :] = length
    nodes = np.column_stack([X.ravel(), E.ravel()])
    idx = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)

    bl = idx[:-1, :-1].ravel()
    br = idx[1:, :-1].ravel()
    tl = idx[:-1, 1:].ravel()
    tr = idx[1:, 1:].ravel()
    d1 = np.sum((nodes[tr] - nodes[bl]) ** 2, axis=1)
    d2 = np.sum((nodes[tl] - nodes[br]) ** 2, axis=1)
    use_main = d1 <= d2
    t1 = np.where(use_main[:, None], np.column_stack([bl, br, tr]), np.column_stack([bl, br, tl]))
    t2 = np.where(use_main[:, None], np.column_stack([bl, tr, tl]), np.column_stack([br, tr, tl]))
    tris = np.vstack([t1, t2])

    bottom = np.column_stack([idx[:-1, 0], idx[1:, 0]])
    top = np.column_stack([idx[1:, -1], idx[:-1, -1]])
    right = np.column_stack([idx[-1, :-1], idx[-1, 1:]])
    left = np.column_stack([idx[0, 1:], idx[0, :-1]])
    edges = np.vstack([bottom, top, right, left])
    tags = np.concatenate([
        np.full(len(bottom) + len(top), EdgeTag.DIRICHLET_WALL),
        np.full(len(right), right_tag),
        np.full(len(left), EdgeTag.FREE_SIDE),
    ]).astype(np.int8)
    corners = (int(idx[0, 0]), int(idx[0, -1]))
    meta = {"columns": a, "rows": eta}
    return _assemble_mesh(nodes, tris, edges, tags, corners, order, meta)


def _orient(nodes: np.ndarray, tris: np.ndarray) -> np.ndarray:
    p = nodes[tris]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    neg = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    tris = tris.copy()
    tris[neg] = tris[neg][:, [0, 2, 1]]
    return tris


def _assemble_mesh(nodes, tris, edges, tags, corners, order, meta) -> Mesh:
    tris = _orient(np.asarray(nodes, float), np.asarray(tris, np.int64))
    edges = np.asarray(edges, np.int64)
    nv = len(nodes)
    if order == 1:
        return Mesh(np.asarray(nodes, float), tris, edges, np.asarray(tags, np.int8), 1,
                    corners, tris, edges, nv, dict(meta))
    if order != 2:
        raise ValueError(f"element order must be 1 or 2, got {order}")
    local = tris[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2)
    key = np.sort(local, axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.ravel()
    mids = 0.5 * (nodes[uniq[:, 0]] + nodes[uniq[:, 1]])
    all_nodes = np.vstack([nodes, mids])
    elements = np.column_stack([tris, (nv + inv).reshape(-1, 3)])
    ekey = np.sort(edges, axis=1)
    # locate each boundary edge among the unique edges
    codes_u = uniq[:, 0] * (nv + 1) + uniq[:, 1]
    codes_b = ekey[:, 0] * (nv + 1) + ekey[:, 1]
    order_u = np.argsort(codes_u)
    pos = order_u[np.searchsorted(codes_u, codes_b, sorter=order_u)]
    if not np.array_equal(codes_u[pos], codes_b):
        raise ValueError("boundary edge not found among element edges")
    bdofs = np.column_stack([edges, nv + pos])
    return Mesh(all_nodes, tris, edges, np.asarray(tags, np.int8), 2, corners,
                elements, bdofs, nv, dict(meta))


def build_trapezoid_mesh(geom: TrapezoidGeom, target_h: float,
                         grading: GradingSpec = GradingSpec(), order: int = 2) -> Mesh:
    """Graded structured mesh of the trapezoid.

    ``target_h`` is the physical element size; the mesh is generated in units
    of the thickness (``target_h / eps``) and scaled back, so it is the
    half-strip mesh of length ``1/eps`` seen at scale ``eps``.
    """
    eps, alpha = geom.eps, geom.alpha
    if target_h > min(eps, 1.0) / 2 * (1 + 1e-12):
        raise ValueError(
            f"target_h={target_h} too coarse: need at least 2 element layers across eps={eps}"
        )
    if 1 - eps * math.tan(alpha) < 4 * target_h:
        raise ValueError("short horizontal side 1 - eps*tan(alpha) below 4*target_h (near-collapse)")
    m = _structured_mesh(1.0 / eps, math.tan(alpha), target_h / eps, grading, alpha,
                         EdgeTag.DIRICHLET_WALL, order)
    nodes = m.nodes * eps
    meta = dict(m.meta, geom=geom, target_h=target_h)
    return Mesh(nodes, m.triangles, m.boundary_edges, m.edge_tags, m.element_order,
                m.corner_nodes, m.elements, m.boundary_dofs, m.n_vertices, meta)


def build_halfstrip_mesh(geom: HalfStripGeom, target_h: float,
                         grading: GradingSpec = GradingSpec(), order: int = 2,
                         far_stretch: tuple[float, float, float] | None = None) -> Mesh:
    """Graded mesh of the truncated half-strip.

    ``far_stretch = (start, ratio, max_width)`` lets columns beyond
    ``X = start`` grow geometrically, for fields that vary slowly far from
    the tip (eigenfunctions close to the threshold).
    """
    if target_h > 0.5 * (1 + 1e-12):
        raise ValueError(f"target_h={target_h} too coarse: need at least 2 element layers")
    if far_stretch is not None:
        start, ratio, max_width = far_stretch
        if ratio <= 1 or max_width < target_h:
            raise ValueError("far_stretch needs ratio > 1 and max_width >= target_h")
        if start < _blend_distance(math.tan(geom.alpha), geom.truncation_L):
            raise ValueError("far_stretch must start beyond the region where columns follow the slanted side")
    m = _structured_mesh(geom.truncation_L, math.tan(geom.alpha), target_h, grading,
                         geom.alpha, EdgeTag.ARTIFICIAL_BOUNDARY, order, far_stretch)
    m.meta.update(geom=geom, target_h=target_h)
    return m


def refine(mesh: Mesh) -> Mesh:
    """Uniform red refinement: every triangle split into four through edge midpoints."""
    nv = mesh.n_vertices
    verts = mesh.nodes[:nv]
    tris = mesh.triangles
    local = tris[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2)
    uniq, inv = np.unique(np.sort(local, axis=1), axis=0, return_inverse=True)
    inv = inv.ravel().reshape(-1, 3) + nv
    nodes = np.vstack([verts, 0.5 * (verts[uniq[:, 0]] + verts[uniq[:, 1]])])
    v0, v1, v2 = tris.T
    m01, m12, m20 = inv.T
    new_tris = np.vstack([
        np.column_stack([v0, m01, m20]),
        np.column_stack([m01, v1, m12]),
        np.column_stack([m20, m12, v2]),
        np.column_stack([m01, m12, m20]),
    ])
    codes_u = uniq[:, 0] * (nv + 1) + uniq[:, 1]
    ek = np.sort(mesh.boundary_edges, axis=1)
    srt = np.argsort(codes_u)
    pos = srt[np.searchsorted(codes_u, ek[:, 0] * (nv + 1) + ek[:, 1], sorter=srt)]
    mid = nv + pos
    a, b = mesh.boundary_edges.T
    edges = np.vstack([np.column_stack([a, mid]), np.column_stack([mid, b])])
    tags = np.concatenate([mesh.edge_tags, mesh.edge_tags])
    meta = {k: v for k, v in mesh.meta.items() if k not in ("columns", "rows")}
    meta["refinements"] = mesh.meta.get("refinements", 0) + 1
    return _assemble_mesh(nodes, new_tris, edges, tags, mesh.corner_nodes,
                          mesh.element_order, meta)


def gamma_arclength(mesh: Mesh, points: np.ndarray) -> np.ndarray:
    """Arc length along the slanted side measured from the corner at the origin."""
    p0 = mesh.nodes[mesh.corner_nodes[0]]
    return np.linalg.norm(np.asarray(points) - p0, axis=-1)


def write_mesh(mesh: Mesh, path) -> None:
    """Plain-text dump: vertices ``x y``, triangles ``i j k``, boundary edges ``i j tag``."""
    path = Path(path)
    nv = mesh.n_vertices
    with path.open("w") as fh:
        fh.write(f"# nodes {nv}\n")
        np.savetxt(fh, mesh.nodes[:nv], fmt="%.17g")
        fh.write(f"# triangles {len(mesh.triangles)}\n")
        np.savetxt(fh, mesh.triangles, fmt="%d")
        fh.write(f"# edges {len(mesh.boundary_edges)}\n")
        np.savetxt(fh, np.column_stack([mesh.boundary_edges, mesh.edge_tags]), fmt="%d")
        fh.write(f"# corners {mesh.corner_nodes[0]} {mesh.corner_nodes[1]}\n")


def read_mesh(path, order: int = 1) -> Mesh:
    lines = Path(path).read_text().splitlines()
    sections: dict[str, list[str]] = {}
    corners = (0, 0)
    cur = None
    for line in lines:
        if line.startswith("#"):
            parts = line[1:].split()
            if parts[0] == "corners":
                corners = (int(parts[1]), int(parts[2]))
                cur = None
            else:
                cur = parts[0]
                sections[cur] = []
        elif cur is not None and line.strip():
            sections[cur].append(line)
    nodes = np.loadtxt(sections["nodes"], ndmin=2)
    tris = np.loadtxt(sections["triangles"], dtype=np.int64, ndmin=2)
    ed = np.loadtxt(sections["edges"], dtype=np.int64, ndmin=2)
    return _assemble_mesh(nodes, tris, ed[:, :2], ed[:, 2], corners, order, {})
