"""Euclidean geometry of single tetrahedra and barycentric dual cells.

Everything is a pure function of edge lengths.  Tetrahedra use the slot
order of ``complexes._TET_EDGE_SLOTS``: lengths are 6-vectors
(d01, d02, d03, d12, d13, d23).  Batched variants operate on (T,6) arrays
and are the workhorses of the flow loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .complexes import _TET_EDGE_SLOTS

__all__ = [
    "TetLengths",
    "ConvexCell",
    "RealizabilityError",
    "cayley_menger",
    "embed_tet",
    "tet_volume",
    "dihedral_angle",
    "angle_between_edges",
    "barycentric_corner_cell",
    "clip_cell",
    "vertex_dual_volume",
    "edge_volume",
    "batch_embed",
    "batch_dihedrals",
    "slab_fraction_below",
    "CM_REL_TOL",
]

CM_REL_TOL = 1e-14  # Cayley-Menger determinant must exceed this times scale^6

_EDGE_SLOT_INDEX = {pair: i for i, pair in enumerate(_TET_EDGE_SLOTS)}


class RealizabilityError(ValueError):
    """Edge lengths admit no (non-degenerate) Euclidean tetrahedron."""


@dataclass(frozen=True)
class TetLengths:
    """Six positive edge lengths of one tet, keyed by vertex-pair slots."""

    lengths: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.lengths, dtype=float).reshape(6)
        if (arr <= 0).any():
            raise RealizabilityError("edge lengths must be positive")
        object.__setattr__(self, "lengths", arr)

    @staticmethod
    def from_points(pts) -> "TetLengths":
        pts = np.asarray(pts, dtype=float)
        return TetLengths(
            [np.linalg.norm(pts[b] - pts[a]) for a, b in _TET_EDGE_SLOTS]
        )

    @staticmethod
    def regular(edge: float = 1.0) -> "TetLengths":
        return TetLengths(np.full(6, float(edge)))


def cayley_menger(lengths) -> float:
    """Cayley-Menger determinant (= 288 V^2 for a realizable tet)."""
    d = np.asarray(lengths, dtype=float).reshape(6) ** 2
    m = np.array(
        [
            [0.0, 1.0, 1.0, 1.0, 1.0],
            [1.0, 0.0, d[0], d[1], d[2]],
            [1.0, d[0], 0.0, d[3], d[4]],
            [1.0, d[1], d[3], 0.0, d[5]],
            [1.0, d[2], d[4], d[5], 0.0],
        ]
    )
    return float(np.linalg.det(m))


def _as_lengths(lengths):
    if isinstance(lengths, TetLengths):
        return lengths.lengths
    return np.asarray(lengths, dtype=float).reshape(6)


def embed_tet(lengths) -> np.ndarray:
    """Embed a tet in R^3: v0 at the origin, v1 on +x, v2 in the xy-plane."""
    pts, ok = batch_embed(_as_lengths(lengths)[None, :])
    if not ok[0]:
        raise RealizabilityError(f"lengths {_as_lengths(lengths)} are not realizable")
    return pts[0]


def batch_embed(lengths):
    """Vectorised embedding.  Returns ((T,4,3) points, (T,) validity mask)."""
    L = np.asarray(lengths, dtype=float)
    d01, d02, d03, d12, d13, d23 = (L[:, i] for i in range(6))
    scale = L.max(axis=1)
    ok = (L > 0).all(axis=1) & (scale > 0)

    with np.errstate(divide="ignore", invalid="ignore"):
        x2 = (d01**2 + d02**2 - d12**2) / (2.0 * d01)
        y2sq = d02**2 - x2**2
        ok &= y2sq > (1e-16 * scale**2)
        y2 = np.sqrt(np.clip(y2sq, 0.0, None))
        x3 = (d01**2 + d03**2 - d13**2) / (2.0 * d01)
        y3 = (d02**2 + d03**2 - d23**2 - 2.0 * x2 * x3) / (2.0 * y2)
        z3sq = d03**2 - x3**2 - y3**2
        ok &= z3sq > 0
        z3 = np.sqrt(np.clip(z3sq, 0.0, None))

    # CM tolerance: 288 V^2 = (d01 * y2 * z3)^2 * 8 ... computed directly
    vol = d01 * y2 * z3 / 6.0
    ok &= (288.0 * vol**2) > (CM_REL_TOL * scale**6)

    T = len(L)
    pts = np.zeros((T, 4, 3))
    pts[:, 1, 0] = d01
    pts[:, 2, 0] = x2
    pts[:, 2, 1] = y2
    pts[:, 3, 0] = x3
    pts[:, 3, 1] = y3
    pts[:, 3, 2] = z3
    pts[~ok] = np.nan
    return pts, ok


def tet_volume(lengths) -> float:
    """Tet volume from edge lengths via the Cayley-Menger determinant."""
    cm = cayley_menger(_as_lengths(lengths))
    scale = float(np.max(_as_lengths(lengths)))
    if cm <= CM_REL_TOL * scale**6:
        raise RealizabilityError("degenerate or non-realizable tetrahedron")
    return math.sqrt(cm / 288.0)


def batch_volumes(points) -> np.ndarray:
    """(T,) volumes from embedded corner points (T,4,3)."""
    a = points[:, 1] - points[:, 0]
    b = points[:, 2] - points[:, 0]
    c = points[:, 3] - points[:, 0]
    return np.abs(np.einsum("ti,ti->t", a, np.cross(b, c))) / 6.0


def batch_dihedrals(points) -> np.ndarray:
    """(T,6) interior dihedral angles at each edge slot of embedded tets."""
    T = len(points)
    out = np.empty((T, 6))
    for j, (i1, i2) in enumerate(_TET_EDGE_SLOTS):
        k, l = (s for s in range(4) if s not in (i1, i2))
        e = points[:, i2] - points[:, i1]
        e = e / np.linalg.norm(e, axis=1, keepdims=True)
        a = points[:, k] - points[:, i1]
        b = points[:, l] - points[:, i1]
        a = a - np.einsum("ti,ti->t", a, e)[:, None] * e
        b = b - np.einsum("ti,ti->t", b, e)[:, None] * e
        cross = np.cross(a, b)
        out[:, j] = np.arctan2(
            np.linalg.norm(cross, axis=1), np.einsum("ti,ti->t", a, b)
        )
    return out


def dihedral_angle(lengths, edge) -> float:
    """Dihedral angle (radians) at ``edge`` = (slot_a, slot_b) of one tet."""
    pts = embed_tet(lengths)
    a, b = edge
    pair = (min(a, b), max(a, b))
    if pair not in _EDGE_SLOT_INDEX:
        raise ValueError(f"{edge} is not a vertex-pair of a tetrahedron")
    return float(batch_dihedrals(pts[None])[0, _EDGE_SLOT_INDEX[pair]])


def angle_between_edges(lengths, edge_a, edge_b) -> float:
    """Angle between two tet edges sharing a vertex, by the law of cosines."""
    sa = set(edge_a)
    sb = set(edge_b)
    shared = sa & sb
    if len(shared) != 1:
        raise ValueError("edges must share exactly one vertex")
    if not (sa | sb) <= {0, 1, 2, 3}:
        raise ValueError("edges must be vertex pairs of the tetrahedron")
    v = shared.pop()
    p = (sa - {v}).pop()
    q = (sb - {v}).pop()
    Lv = _as_lengths(lengths)

    def d(i, j):
        return Lv[_EDGE_SLOT_INDEX[(min(i, j), max(i, j))]]

    num = d(v, p) ** 2 + d(v, q) ** 2 - d(p, q) ** 2
    den = 2.0 * d(v, p) * d(v, q)
    return math.acos(min(1.0, max(-1.0, num / den)))


# ---------------------------------------------------------------------------
# Convex cells: barycentric corner cells and halfspace clipping
# ---------------------------------------------------------------------------


@dataclass
class ConvexCell:
    """Convex polyhedron as vertex coordinates plus faces (vertex index loops)."""

    vertices: np.ndarray
    faces: list

    def volume(self) -> float:
        """Volume as a sum of pyramids from the centroid over each face."""
        if len(self.vertices) < 4 or not self.faces:
            return 0.0
        c = self.vertices.mean(axis=0)
        total = 0.0
        for loop in self.faces:
            if len(loop) < 3:
                continue
            pts = self.vertices[list(loop)]
            face_sum = 0.0
            for i in range(1, len(pts) - 1):
                face_sum += np.dot(
                    pts[0] - c, np.cross(pts[i] - c, pts[i + 1] - c)
                )
            total += abs(face_sum) / 6.0
        return total

    def contains(self, x, tol=1e-10) -> bool:
        c = self.vertices.mean(axis=0)
        for loop in self.faces:
            if len(loop) < 3:
                continue
            p0, p1, p2 = (self.vertices[i] for i in loop[:3])
            n = np.cross(p1 - p0, p2 - p0)
            if np.dot(n, c - p0) > 0:
                n = -n
            if np.dot(n, np.asarray(x) - p0) > tol * max(1.0, np.linalg.norm(n)):
                return False
        return True


def barycentric_corner_cell(lengths, vertex: int) -> ConvexCell:
    """Barycentric dual cell of one tet corner: a convex hexahedron.

    Hull of the corner, its three edge midpoints, the three adjacent face
    barycenters and the tet barycenter; volume is a quarter of the tet.
    """
    pts = embed_tet(lengths)
    return corner_cell_from_points(pts, vertex)


def corner_cell_from_points(pts, vertex: int) -> ConvexCell:
    v = int(vertex)
    others = [s for s in range(4) if s != v]
    a, b, c = others
    P = {
        "v": pts[v],
        "ma": (pts[v] + pts[a]) / 2.0,
        "mb": (pts[v] + pts[b]) / 2.0,
        "mc": (pts[v] + pts[c]) / 2.0,
        "fab": (pts[v] + pts[a] + pts[b]) / 3.0,
        "fac": (pts[v] + pts[a] + pts[c]) / 3.0,
        "fbc": (pts[v] + pts[b] + pts[c]) / 3.0,
        "cc": pts.mean(axis=0),
    }
    order = ["v", "ma", "mb", "mc", "fab", "fac", "fbc", "cc"]
    idx = {k: i for i, k in enumerate(order)}
    verts = np.array([P[k] for k in order])
    # cube-combinatorics faces: three on the tet's boundary faces, three
    # interior walls towards the opposite corner cells
    faces = [
        [idx["v"], idx["ma"], idx["fab"], idx["mb"]],
        [idx["v"], idx["ma"], idx["fac"], idx["mc"]],
        [idx["v"], idx["mb"], idx["fbc"], idx["mc"]],
        [idx["ma"], idx["fab"], idx["cc"], idx["fac"]],
        [idx["mb"], idx["fab"], idx["cc"], idx["fbc"]],
        [idx["mc"], idx["fac"], idx["cc"], idx["fbc"]],
    ]
    return ConvexCell(verts, faces)


def clip_cell(cell: ConvexCell, point, normal, tol=1e-14) -> ConvexCell:
    """Intersect a convex cell with the halfspace {x : (x - p) . n >= 0}."""
    p = np.asarray(point, dtype=float)
    n = np.asarray(normal, dtype=float)
    verts = cell.vertices
    if len(verts) == 0:
        return ConvexCell(np.zeros((0, 3)), [])
    h = (verts - p) @ n  # keep h >= 0
    scale = max(1.0, float(np.abs(h).max()))
    keep = h >= -tol * scale

    if keep.all():
        return ConvexCell(verts.copy(), [loop[:] for loop in cell.faces])
    if not keep.any():
        return ConvexCell(np.zeros((0, 3)), [])

    new_verts = []
    vmap = {}

    def old_vertex(i):
        if i not in vmap:
            vmap[i] = len(new_verts)
            new_verts.append(verts[i])
        return vmap[i]

    cut_cache = {}

    def cut_vertex(i, j):
        key = (min(i, j), max(i, j))
        if key not in cut_cache:
            t = h[i] / (h[i] - h[j])
            cut_cache[key] = len(new_verts)
            new_verts.append(verts[i] + t * (verts[j] - verts[i]))
        return cut_cache[key]

    new_faces = []
    cap_edges = []
    for loop in cell.faces:
        out = []
        k = len(loop)
        entry_exit = []
        for i in range(k):
            a, b = loop[i], loop[(i + 1) % k]
            if keep[a]:
                out.append(old_vertex(a))
            if keep[a] != keep[b]:
                cv = cut_vertex(a, b)
                out.append(cv)
                entry_exit.append(cv)
        if len(out) >= 3:
            new_faces.append(out)
        if len(entry_exit) == 2:
            cap_edges.append(tuple(entry_exit))

    # cap face: chain the cut edges into a loop
    if len(cap_edges) >= 3:
        adj = {}
        for a, b in cap_edges:
            adj.setdefault(a, []).append(b)
            adj.setdefault(b, []).append(a)
        start = cap_edges[0][0]
        loop = [start]
        prev = None
        cur = start
        while True:
            nbrs = [x for x in adj.get(cur, []) if x != prev]
            if not nbrs:
                break
            nxt = nbrs[0]
            if nxt == start:
                break
            loop.append(nxt)
            prev, cur = cur, nxt
            if len(loop) > len(cap_edges) + 1:
                break
        if len(loop) >= 3:
            new_faces.append(loop)

    return ConvexCell(np.array(new_verts), new_faces)


# ---------------------------------------------------------------------------
# Slab volumes: the fraction of a tet below a plane orthogonal to +x
# ---------------------------------------------------------------------------


def slab_fraction_below(heights, c):
    """Volume fraction of simplices with (sorted) vertex heights below c.

    ``heights``: (N,4) already sorted along axis 1.  Piecewise cubic in c,
    evaluated in cancellation-safe form per region.
    """
    h1, h2, h3, h4 = (heights[:, i] for i in range(4))
    c = np.broadcast_to(np.asarray(c, dtype=float), (len(heights),))
    out = np.zeros(len(heights))
    out[c >= h4] = 1.0

    d21 = h2 - h1
    d31 = h3 - h1
    d41 = h4 - h1
    d32 = h3 - h2
    d42 = h4 - h2
    d43 = h4 - h3

    r1 = (c > h1) & (c <= h2)
    if r1.any():
        t = c[r1] - h1[r1]
        out[r1] = t**3 / (d21[r1] * d31[r1] * d41[r1])

    r2 = (c > h2) & (c <= h3)
    if r2.any():
        b = c[r2] - h2[r2]
        num = (
            3.0 * b**2 * d32[r2] * d42[r2]
            + 3.0 * b * d21[r2] * d32[r2] * d42[r2]
            + d21[r2] ** 2 * d32[r2] * d42[r2]
            - b**3 * (d32[r2] + d42[r2] + d21[r2])
        )
        out[r2] = num / (d31[r2] * d41[r2] * d32[r2] * d42[r2])

    r3 = (c > h3) & (c < h4)
    if r3.any():
        s = h4[r3] - c[r3]
        out[r3] = 1.0 - s**3 / (d43[r3] * d42[r3] * d41[r3])

    return out


# Flag table: for a centre corner the 6 barycentric sub-simplices are the
# ordered pairs (a, b) of the remaining corners; heights are affine combos.
_FLAG_PAIRS = {
    s: [
        (a, b)
        for a in range(4)
        if a != s
        for b in range(4)
        if b not in (s, a)
    ]
    for s in range(4)
}


def corner_cell_subsimplex_heights(corner_h, centre_slot):
    """Heights of the 6 barycentric sub-simplices of one corner cell.

    ``corner_h``: (N,4) corner heights of each tet; ``centre_slot``: (N,)
    the corner owning the cell.  Returns (N,6,4) unsorted sub-simplex
    vertex heights (corner, edge midpoint, face barycenter, tet barycenter).
    """
    N = len(corner_h)
    out = np.empty((N, 6, 4))
    hbary = corner_h.mean(axis=1)
    for s in range(4):
        mask = centre_slot == s
        if not mask.any():
            continue
        hs = corner_h[mask, s]
        for fi, (a, b) in enumerate(_FLAG_PAIRS[s]):
            ha = corner_h[mask, a]
            hb = corner_h[mask, b]
            out[mask, fi, 0] = hs
            out[mask, fi, 1] = (hs + ha) / 2.0
            out[mask, fi, 2] = (hs + ha + hb) / 3.0
            out[mask, fi, 3] = hbary[mask]
    return out


def vertex_dual_volume(cx, lengths, v: int) -> float:
    """Barycentric dual volume of a vertex: quarter-volumes of incident corners."""
    from .curvature import GeometryCache

    geo = GeometryCache(cx, lengths)
    return float(geo.vertex_volumes()[v])


def edge_volume(cx, lengths, e: int) -> float:
    """Edge volume: endpoint corner cells clipped by the orthogonal cut planes."""
    from .curvature import GeometryCache

    geo = GeometryCache(cx, lengths)
    return float(geo.edge_volumes()[e])
