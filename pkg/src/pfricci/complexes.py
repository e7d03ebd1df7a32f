"""Block-based simplicial 3-complexes on lattice quotients.

A complex is built in the universal cover: vertices sit on an integer
lattice, tetrahedra are listed per block in lattice coordinates, and the
quotient is taken by a deck lattice of integer translations (plus an
optional shear on the first axis, used for the Nil twist).  Simplices are
identified by winding-aware canonical keys, so grids with a single block
per axis (loops, multi-edges) need no special casing.

Lattice coordinates are plain block steps for cubic/skew grids and
half-block steps for diamond grids (corner vertices even, cell centres
odd).  Geometry only enters through the linear position map ``U`` that
sends lattice coordinates to coordinates of the target chart.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "BlockSpec",
    "GridSpec",
    "LatticeQuotient",
    "SimplicialComplex3",
    "BlockTemplate",
    "build_block",
    "tile_and_identify",
    "covering_duplicate",
    "validate",
    "mesh_to_json",
    "ComplexBuildError",
]


class ComplexBuildError(ValueError):
    """Raised when a block/grid combination cannot form a valid closed complex."""


# ---------------------------------------------------------------------------
# Block templates
# ---------------------------------------------------------------------------

# Kuhn decomposition around the main body diagonal (0,0,0)-(1,1,1).
# Opposite faces carry parallel ("+") diagonals; tiles all plain grids.
_KUHN_MAIN = [
    ((0, 0, 0), (1, 0, 0), (1, 1, 0), (1, 1, 1)),
    ((0, 0, 0), (1, 0, 0), (1, 0, 1), (1, 1, 1)),
    ((0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 1, 1)),
    ((0, 0, 0), (0, 1, 0), (0, 1, 1), (1, 1, 1)),
    ((0, 0, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1)),
    ((0, 0, 0), (0, 0, 1), (0, 1, 1), (1, 1, 1)),
]
_KUHN_MAIN_DIAG = ((0, 0, 0), (1, 1, 1))

# Kuhn decomposition around (0,1,0)-(1,0,1); x-face diagonals are "-"
# oriented, matching a negative twist shear.
_KUHN_ALT = [
    ((0, 1, 0), (0, 0, 0), (0, 0, 1), (1, 0, 1)),
    ((0, 1, 0), (0, 0, 0), (1, 0, 0), (1, 0, 1)),
    ((0, 1, 0), (1, 1, 0), (1, 0, 0), (1, 0, 1)),
    ((0, 1, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1)),
    ((0, 1, 0), (0, 1, 1), (0, 0, 1), (1, 0, 1)),
    ((0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 0, 1)),
]
_KUHN_ALT_DIAG = ((0, 1, 0), (1, 0, 1))

# Six-tet cube with opposite diagonals on the two x-faces (y/z-face pairs
# still matched).  Five tets share the body diagonal, the sixth caps it.
# _NILMATCH_NEG: x=0 face "-", x=1 face "+"  (absorbs twist shear m = -1)
_NILMATCH_NEG = [
    ((0, 0, 0), (1, 0, 0), (1, 0, 1), (1, 1, 1)),
    ((0, 0, 0), (1, 0, 0), (1, 1, 1), (1, 1, 0)),
    ((0, 0, 0), (1, 1, 0), (1, 1, 1), (0, 1, 0)),
    ((0, 0, 0), (0, 0, 1), (0, 1, 0), (1, 1, 1)),
    ((0, 0, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1)),
    ((0, 1, 0), (0, 1, 1), (1, 1, 1), (0, 0, 1)),
]
_NILMATCH_NEG_DIAG = ((0, 0, 0), (1, 1, 1))

# z-mirror of _NILMATCH_NEG: x=0 face "+", x=1 face "-"  (for m = +1)
_NILMATCH_POS = [tuple((x, y, 1 - z) for (x, y, z) in tet) for tet in _NILMATCH_NEG]
_NILMATCH_POS_DIAG = ((0, 0, 1), (1, 1, 0))


def _diamond_template():
    """BCC cell: 12 tets in diamonds around the three corner coordinate edges.

    Doubled lattice coordinates: corner vertices even, cell centres odd.
    Each tet holds one corner coordinate edge, one centre coordinate edge
    (the diamond's outer ring) and four corner-to-centre diagonals.
    """
    tets = []
    rings = {
        0: [(1, 1, 1), (1, 1, -1), (1, -1, -1), (1, -1, 1)],
        1: [(1, 1, 1), (-1, 1, 1), (-1, 1, -1), (1, 1, -1)],
        2: [(1, 1, 1), (1, -1, 1), (-1, -1, 1), (-1, 1, 1)],
    }
    for axis, ring in rings.items():
        e0 = (0, 0, 0)
        e1 = tuple(2 if a == axis else 0 for a in range(3))
        for r in range(4):
            tets.append((e0, e1, ring[r], ring[(r + 1) % 4]))
    return tets


_DIAMOND = _diamond_template()

_SKEW_BASIS = np.array([[1.0, -1.0 / 3.0, 0.0], [0.0, 1.0, 0.0], [-1.0 / 3.0, -2.0 / 9.0, 1.0]])
_SKEW_BASIS_ADAPTED = np.array([[1.0, -0.5, 0.0], [0.0, 1.0, 0.0], [-0.5, -0.25, 1.0]])


@dataclass(frozen=True)
class BlockSpec:
    """Block type plus lattice basis and decomposition variant.

    ``basis`` rows are the block edge vectors in block-relative units: entry
    [a][b] scales with the b-axis grid spacing.  Identity for cubic and
    diamond; the skew bases shear the x and z steps.
    """

    block_type: str = "cubic"  # cubic | skew | diamond
    basis: np.ndarray = field(default_factory=lambda: np.eye(3))
    variant: str = "standard"  # standard | nil-matched

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=float)
        if b.shape != (3, 3) or abs(np.linalg.det(b)) < 1e-12:
            raise ComplexBuildError("block basis must be three independent 3-vectors")
        object.__setattr__(self, "basis", b)

    @staticmethod
    def cubic(variant: str = "standard") -> "BlockSpec":
        return BlockSpec("cubic", np.eye(3), variant)

    @staticmethod
    def skew(adapted: bool = False) -> "BlockSpec":
        return BlockSpec("skew", _SKEW_BASIS_ADAPTED if adapted else _SKEW_BASIS)

    @staticmethod
    def diamond() -> "BlockSpec":
        return BlockSpec("diamond", np.eye(3))


@dataclass(frozen=True)
class GridSpec:
    """Grid counts, coordinate extents and per-axis identification rules."""

    counts: tuple
    extents: tuple
    twist_axis: Optional[int] = None  # only axis 0 supported (Nil)
    twist_lambda: float = 0.0
    exact_torus_deck: bool = False  # close skew grids onto the exact coordinate torus

    def __post_init__(self):
        if len(self.counts) != 3 or any(int(n) < 1 for n in self.counts):
            raise ComplexBuildError("grid counts must be three integers >= 1")
        if len(self.extents) != 3 or any(e <= 0 for e in self.extents):
            raise ComplexBuildError("grid extents must be positive")
        object.__setattr__(self, "counts", tuple(int(n) for n in self.counts))
        object.__setattr__(self, "extents", tuple(float(e) for e in self.extents))
        if self.twist_axis not in (None, 0):
            raise ComplexBuildError("twist identification only supported on axis 0")

    @property
    def spacings(self):
        return tuple(e / n for e, n in zip(self.extents, self.counts))


@dataclass(frozen=True)
class BlockTemplate:
    """Local tetrahedra of one block in (possibly doubled) lattice coordinates."""

    tets: tuple
    body_diagonal: Optional[tuple]
    doubled: bool = False

    @property
    def vertices(self):
        seen = {}
        for t in self.tets:
            for p in t:
                seen.setdefault(p, None)
        return sorted(seen)


def build_block(spec: BlockSpec, twist_sign: int = 1) -> BlockTemplate:
    """Return the local block template for ``spec``.

    ``twist_sign`` orients the decomposition to the sign of the integer face
    shear a Nil grid must absorb; plain grids use +1.
    """
    if spec.block_type in ("cubic", "skew"):
        if spec.variant == "nil-matched":
            if twist_sign >= 0:
                return BlockTemplate(tuple(_NILMATCH_POS), _NILMATCH_POS_DIAG)
            return BlockTemplate(tuple(_NILMATCH_NEG), _NILMATCH_NEG_DIAG)
        if spec.variant != "standard":
            raise ComplexBuildError(f"unknown decomposition variant {spec.variant!r}")
        if twist_sign >= 0:
            return BlockTemplate(tuple(_KUHN_MAIN), _KUHN_MAIN_DIAG)
        return BlockTemplate(tuple(_KUHN_ALT), _KUHN_ALT_DIAG)
    if spec.block_type == "diamond":
        return BlockTemplate(tuple(_DIAMOND), None, doubled=True)
    raise ComplexBuildError(f"unknown block type {spec.block_type!r}")


# ---------------------------------------------------------------------------
# Lattice quotient: canonical forms with winding-aware deck maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatticeQuotient:
    """Integer lattice modulo a deck lattice of translations.

    ``deck`` rows are the deck generators in lattice units; ``order`` is a
    reduction order under which the deck matrix is triangular.  ``nil_m``
    adds the Nil shear to the axis-0 generator: reducing x by one period
    shifts the z coordinate by ``+nil_m * y``.
    """

    periods: tuple
    deck: tuple
    order: tuple = (0, 1, 2)
    nil_m: int = 0

    @staticmethod
    def diagonal(periods, nil_m: int = 0) -> "LatticeQuotient":
        periods = tuple(int(p) for p in periods)
        deck = tuple(
            tuple(periods[a] if b == a else 0 for b in range(3)) for a in range(3)
        )
        return LatticeQuotient(periods, deck, (0, 1, 2), nil_m)

    def canonicalize(self, p):
        """Return (canonical point, wrap counts per axis)."""
        v = [int(p[0]), int(p[1]), int(p[2])]
        wraps = [0, 0, 0]
        for axis in self.order:
            row = self.deck[axis]
            t = v[axis] // row[axis]
            if t:
                v[0] -= t * row[0]
                v[1] -= t * row[1]
                v[2] -= t * row[2]
                if axis == 0 and self.nil_m:
                    v[2] += t * self.nil_m * v[1]
            wraps[axis] = t
        return tuple(v), tuple(wraps)

    def apply_wraps(self, wraps, p):
        """Apply the deck element encoded by ``wraps`` to another point."""
        v = [int(p[0]), int(p[1]), int(p[2])]
        for axis in self.order:
            t = wraps[axis]
            if t:
                row = self.deck[axis]
                v[0] -= t * row[0]
                v[1] -= t * row[1]
                v[2] -= t * row[2]
                if axis == 0 and self.nil_m:
                    v[2] += t * self.nil_m * v[1]
        return tuple(v)

    def canonical_simplex(self, pts):
        """Winding-aware canonical lift for an unordered simplex.

        Every vertex is tried as anchor; the deck element canonicalising the
        anchor is applied to the whole simplex and the lexicographically
        smallest sorted lift wins.  Deck maps are fixed-point free, so the
        winning lift (and hence the key) is unique per orbit.
        """
        best = None
        for anchor in pts:
            _, wraps = self.canonicalize(anchor)
            lift = tuple(sorted(self.apply_wraps(wraps, q) for q in pts))
            if best is None or lift < best:
                best = lift
        return best


# ---------------------------------------------------------------------------
# The complex
# ---------------------------------------------------------------------------

_TET_EDGE_SLOTS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
_TET_FACE_SLOTS = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))


@dataclass
class SimplicialComplex3:
    """Closed simplicial 3-complex with winding-aware incidence data.

    Vertices/edges/triangles/tets are indexed densely from 0, ordered
    lexicographically by their canonical lattice lifts.  ``U`` maps stored
    lattice coordinates to chart coordinates (already includes the diamond
    half-step when applicable).
    """

    lattice: LatticeQuotient
    U: np.ndarray                      # (3,3) position map, chart = U @ lattice
    vertex_lifts: np.ndarray           # (V,3) int canonical lattice coords
    edges: np.ndarray                  # (E,2) vertex ids of canonical ends
    edge_lifts: np.ndarray             # (E,2,3) int lift endpoints
    triangles: np.ndarray              # (F,3) vertex ids
    tets: np.ndarray                   # (T,4) vertex ids
    tet_lifts: np.ndarray              # (T,4,3) int corner lifts
    tet_edges: np.ndarray              # (T,6) edge ids, slot order _TET_EDGE_SLOTS
    tet_edge_end0: np.ndarray          # (T,6) 0 if the slot pair's first member is end 0
    tet_faces: np.ndarray              # (T,4) triangle ids (face k opposite corner k)
    face_glue: np.ndarray              # (T,4,2) -> (other tet, other face)
    face_glue_perm: np.ndarray         # (T,4,3) corner correspondence between glued faces
    is_body_diagonal: np.ndarray       # (E,) bool
    tets_around_edge: list             # per edge: cyclic list of (tet, edge slot)
    copies: tuple = (1, 1, 1)          # per-axis copy counts to re-tile the full domain

    @property
    def n_vertices(self):
        return len(self.vertex_lifts)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_tets(self):
        return len(self.tets)

    def vertex_positions(self):
        return self.vertex_lifts @ self.U.T

    def lift_position(self, p):
        return self.U @ np.asarray(p, dtype=float)

    def edge_lift_positions(self):
        """(E,2,3) chart positions of the canonical edge lifts."""
        return self.edge_lifts @ self.U.T

    def euler_characteristic(self):
        return self.n_vertices - self.n_edges + self.n_triangles - self.n_tets

    def vertex_star(self):
        """Per vertex: list of (tet, corner slot) incidences."""
        star = [[] for _ in range(self.n_vertices)]
        for t in range(self.n_tets):
            for s in range(4):
                star[self.tets[t, s]].append((t, s))
        return star

    def edges_at_vertex(self):
        """Per vertex: list of (edge, end) incidences (loops appear twice)."""
        inc = [[] for _ in range(self.n_vertices)]
        for e in range(self.n_edges):
            inc[self.edges[e, 0]].append((e, 0))
            inc[self.edges[e, 1]].append((e, 1))
        return inc


def _slot_end0(lattice, pa, pb, ek):
    """0 if ``pa`` realises canonical end 0 of edge key ``ek``, else 1."""
    for anchor_slot, anchor, other in ((0, pa, pb), (1, pb, pa)):
        _, wraps = lattice.canonicalize(anchor)
        la = lattice.apply_wraps(wraps, anchor)
        lb = lattice.apply_wraps(wraps, other)
        if (la, lb) == ek:
            return anchor_slot
        if (lb, la) == ek:
            return 1 - anchor_slot
    raise ComplexBuildError("edge canonicalisation mismatch")


def _build_from_tet_lifts(lattice, U, raw_tets, diag_edges, copies=(1, 1, 1), strict=True):
    """Assemble a SimplicialComplex3 from cover-space tetrahedra.

    ``raw_tets``: iterable of 4-tuples of lattice points.  ``diag_edges``:
    raw (p, q) pairs to flag as body diagonals.  With ``strict=False`` an
    unglued or miswired complex is still assembled (for validate() to report
    on) instead of raising.
    """
    tet_keys = {}
    for pts in raw_tets:
        key = lattice.canonical_simplex(pts)
        if len(set(key)) != 4:
            raise ComplexBuildError(f"degenerate tetrahedron lift {key}")
        tet_keys.setdefault(key, None)
    tet_list = sorted(tet_keys)

    vert_keys, edge_keys, tri_keys = {}, {}, {}
    for key in tet_list:
        for p in key:
            vert_keys.setdefault(lattice.canonicalize(p)[0], None)
        for a, b in _TET_EDGE_SLOTS:
            edge_keys.setdefault(lattice.canonical_simplex((key[a], key[b])), None)
        for fa in _TET_FACE_SLOTS:
            tri_keys.setdefault(
                lattice.canonical_simplex(tuple(key[s] for s in fa)), None
            )
    vert_list = sorted(vert_keys)
    edge_list = sorted(edge_keys)
    tri_list = sorted(tri_keys)
    vid = {k: i for i, k in enumerate(vert_list)}
    eid = {k: i for i, k in enumerate(edge_list)}
    fid = {k: i for i, k in enumerate(tri_list)}

    V, E, F, T = len(vert_list), len(edge_list), len(tri_list), len(tet_list)
    vertex_lifts = np.array(vert_list, dtype=np.int64).reshape(V, 3)
    edge_lifts = np.array(edge_list, dtype=np.int64).reshape(E, 2, 3)
    edges = np.empty((E, 2), dtype=np.int64)
    for e, (p, q) in enumerate(edge_list):
        edges[e, 0] = vid[lattice.canonicalize(p)[0]]
        edges[e, 1] = vid[lattice.canonicalize(q)[0]]
    triangles = np.empty((F, 3), dtype=np.int64)
    for f, key in enumerate(tri_list):
        triangles[f] = sorted(vid[lattice.canonicalize(p)[0]] for p in key)

    tets = np.empty((T, 4), dtype=np.int64)
    tet_lifts = np.array(tet_list, dtype=np.int64).reshape(T, 4, 3)
    tet_edges = np.empty((T, 6), dtype=np.int64)
    tet_edge_end0 = np.empty((T, 6), dtype=np.int64)
    tet_faces = np.empty((T, 4), dtype=np.int64)
    face_members = [[] for _ in range(F)]

    for t, key in enumerate(tet_list):
        for s in range(4):
            tets[t, s] = vid[lattice.canonicalize(key[s])[0]]
        for j, (a, b) in enumerate(_TET_EDGE_SLOTS):
            ek = lattice.canonical_simplex((key[a], key[b]))
            tet_edges[t, j] = eid[ek]
            tet_edge_end0[t, j] = _slot_end0(lattice, key[a], key[b], ek)
        for s, fa in enumerate(_TET_FACE_SLOTS):
            pts = tuple(key[i] for i in fa)
            fk = lattice.canonical_simplex(pts)
            f = fid[fk]
            tet_faces[t, s] = f
            lifted = None
            for anchor in pts:
                _, wraps = lattice.canonicalize(anchor)
                cand = tuple(lattice.apply_wraps(wraps, q) for q in pts)
                if tuple(sorted(cand)) == fk:
                    lifted = cand
                    break
            if lifted is None:
                raise ComplexBuildError("face canonicalisation mismatch")
            perm = tuple(fk.index(c) for c in lifted)
            if len(set(perm)) != 3:
                raise ComplexBuildError("ambiguous face corner correspondence")
            face_members[f].append((t, s, perm))

    face_glue = -np.ones((T, 4, 2), dtype=np.int64)
    face_glue_perm = -np.ones((T, 4, 3), dtype=np.int64)
    for f, members in enumerate(face_members):
        if len(members) != 2:
            if strict:
                raise ComplexBuildError(
                    f"triangle {f} lies in {len(members)} tets (closed complex needs 2)"
                )
            continue
        (t1, s1, p1), (t2, s2, p2) = members
        inv2 = [0, 0, 0]
        for i, v in enumerate(p2):
            inv2[v] = i
        corr12 = tuple(inv2[p1[i]] for i in range(3))  # corner i of face 1 -> face 2
        corr21 = tuple(corr12.index(i) for i in range(3))
        face_glue[t1, s1] = (t2, s2)
        face_glue[t2, s2] = (t1, s1)
        face_glue_perm[t1, s1] = corr12
        face_glue_perm[t2, s2] = corr21

    is_diag = np.zeros(E, dtype=bool)
    for p, q in diag_edges:
        is_diag[eid[lattice.canonical_simplex((p, q))]] = True

    slot_members = [[] for _ in range(E)]
    for t in range(T):
        for j in range(6):
            slot_members[tet_edges[t, j]].append((t, j))
    around = []
    for e in range(E):
        members = slot_members[e]
        if not members:
            raise ComplexBuildError(f"edge {e} lies in no tetrahedron")
        try:
            cyc = _walk_edge_fan(min(members), face_glue, face_glue_perm)
        except ComplexBuildError:
            if strict:
                raise
            cyc = [min(members)]
        if len(cyc) != len(members) or set(cyc) != set(members):
            if strict:
                raise ComplexBuildError(
                    f"link of edge {e} is not a single cycle "
                    f"({len(cyc)} of {len(members)} incidences reached)"
                )
        around.append(cyc)

    return SimplicialComplex3(
        lattice=lattice,
        U=np.asarray(U, dtype=float),
        vertex_lifts=vertex_lifts,
        edges=edges,
        edge_lifts=edge_lifts,
        triangles=triangles,
        tets=tets,
        tet_lifts=tet_lifts,
        tet_edges=tet_edges,
        tet_edge_end0=tet_edge_end0,
        tet_faces=tet_faces,
        face_glue=face_glue,
        face_glue_perm=face_glue_perm,
        is_body_diagonal=is_diag,
        tets_around_edge=around,
        copies=tuple(copies),
    )


def _walk_edge_fan(start, face_glue, face_glue_perm):
    """Walk tet to tet around an edge through the two faces containing it."""
    cyc = [start]
    t, j = start
    a, b = _TET_EDGE_SLOTS[j]
    others = [s for s in range(4) if s not in (a, b)]
    leave = others[0]
    while True:
        t2, s2 = (int(x) for x in face_glue[t, leave])
        if t2 < 0:
            raise ComplexBuildError("edge fan hit an unglued face")
        perm = face_glue_perm[t, leave]
        fa = _TET_FACE_SLOTS[leave]
        fa2 = _TET_FACE_SLOTS[s2]
        a2 = fa2[perm[fa.index(a)]]
        b2 = fa2[perm[fa.index(b)]]
        lo, hi = (a2, b2) if a2 < b2 else (b2, a2)
        j2 = _TET_EDGE_SLOTS.index((lo, hi))
        if (t2, j2) == start:
            return cyc
        cyc.append((t2, j2))
        if len(cyc) > 100000:
            raise ComplexBuildError("edge fan walk did not close")
        others2 = [s for s in range(4) if s not in (a2, b2)]
        if s2 not in others2:
            raise ComplexBuildError("edge fan gluing inconsistency")
        leave = others2[0] if others2[1] == s2 else others2[1]
        t, a, b = t2, a2, b2


def tile_and_identify(spec: BlockSpec, grid: GridSpec) -> SimplicialComplex3:
    """Tile a grid of blocks and identify boundary faces into a closed complex."""
    n1, n2, n3 = grid.counts
    h = np.array(grid.spacings)

    nil_m = 0
    if grid.twist_axis == 0:
        if spec.block_type != "cubic":
            raise ComplexBuildError("Nil twist grids support cubic blocks only")
        s1 = grid.extents[0]
        m_f = grid.twist_lambda * s1 * h[1] / h[2]
        nil_m = int(round(m_f))
        if abs(m_f - nil_m) > 1e-9 or nil_m == 0:
            raise ComplexBuildError(
                f"twist shear {m_f} is not a nonzero integer; "
                "choose extents so lambda*s_x*h_y/h_z is integral"
            )
        if abs(nil_m) != 1:
            raise ComplexBuildError(
                f"twist shear {nil_m} not supported: only unit shears are "
                "triangulable by reorienting cubic face diagonals"
            )

    doubled = spec.block_type == "diamond"
    scale = 2 if doubled else 1
    periods = (scale * n1, scale * n2, scale * n3)

    if spec.block_type == "skew" and grid.exact_torus_deck:
        U_block = (spec.basis * h[None, :]).T  # columns = block step vectors
        deck_rows = []
        for axis in range(3):
            target = np.zeros(3)
            target[axis] = grid.extents[axis]
            x = np.linalg.solve(U_block, target)
            xi = np.rint(x).astype(int)
            if not np.allclose(x, xi, atol=1e-9):
                raise ComplexBuildError(
                    f"skew grid {grid.counts} does not close onto the coordinate "
                    f"torus (axis {axis} wrap needs non-integer lattice steps {x})"
                )
            deck_rows.append(tuple(int(v) for v in xi))
        if deck_rows[0][2] != 0 or deck_rows[1][2] != 0 or deck_rows[1][0] != 0:
            raise ComplexBuildError("skew deck lattice is not reducible in order z,x,y")
        lattice = LatticeQuotient(tuple(periods), tuple(deck_rows), (2, 0, 1), 0)
    else:
        lattice = LatticeQuotient.diagonal(periods, nil_m)

    U = (spec.basis * h[None, :]).T / scale

    raw_tets = []
    diag_edges = []
    for i, j, k in itertools.product(range(n1), range(n2), range(n3)):
        if nil_m:
            variant = "nil-matched" if i == n1 - 1 else "standard"
            tpl = build_block(BlockSpec.cubic(variant), twist_sign=nil_m)
        else:
            tpl = build_block(spec, twist_sign=1)
        anchor = np.array([i, j, k]) * scale
        for tet in tpl.tets:
            raw_tets.append(tuple(tuple(anchor + np.array(p)) for p in tet))
        if tpl.body_diagonal is not None:
            p, q = tpl.body_diagonal
            diag_edges.append((tuple(anchor + np.array(p)), tuple(anchor + np.array(q))))

    cx = _build_from_tet_lifts(lattice, U, raw_tets, diag_edges)
    report = validate(cx)
    if report:
        raise ComplexBuildError("built complex failed validation: " + "; ".join(report))
    return cx


def covering_duplicate(cx: SimplicialComplex3, factors) -> tuple:
    """Duplicate a complex to a covering with per-axis ``factors``.

    Returns (duplicated complex, (vertex_map, edge_map, tet_map)) where the
    back maps send duplicated simplex ids to the originals they mirror.
    """
    f1, f2, f3 = (int(f) for f in factors)
    if min(f1, f2, f3) < 1:
        raise ComplexBuildError("duplication factors must be >= 1")
    old = cx.lattice
    periods = (old.periods[0] * f1, old.periods[1] * f2, old.periods[2] * f3)
    if old.nil_m:
        if (old.nil_m * f2 * old.periods[1]) % (f3 * old.periods[2]) != 0:
            raise ComplexBuildError(
                "duplication factors incompatible with the twist shear"
            )
        big = LatticeQuotient.diagonal(periods, old.nil_m)
    else:
        deck = (
            tuple(v * f1 for v in old.deck[0]),
            tuple(v * f2 for v in old.deck[1]),
            tuple(v * f3 for v in old.deck[2]),
        )
        big = LatticeQuotient(periods, deck, old.order, 0)

    raw_tets = []
    diag = []
    diag_ids = [int(e) for e in np.nonzero(cx.is_body_diagonal)[0]]
    for a, b, c in itertools.product(range(f1), range(f2), range(f3)):
        wraps = (-a, -b, -c)
        for t in range(cx.n_tets):
            raw_tets.append(
                tuple(old.apply_wraps(wraps, tuple(p)) for p in cx.tet_lifts[t])
            )
        for e in diag_ids:
            p, q = cx.edge_lifts[e]
            diag.append((old.apply_wraps(wraps, tuple(p)), old.apply_wraps(wraps, tuple(q))))

    dup = _build_from_tet_lifts(big, cx.U, raw_tets, diag, copies=cx.copies)

    vmap = np.array(
        [_orig_vertex_id(cx, tuple(p)) for p in dup.vertex_lifts], dtype=np.int64
    )
    emap = np.array(
        [_orig_edge_id(cx, tuple(map(tuple, pq))) for pq in dup.edge_lifts],
        dtype=np.int64,
    )
    tmap = np.array(
        [_orig_tet_id(cx, tuple(map(tuple, pts))) for pts in dup.tet_lifts],
        dtype=np.int64,
    )
    return dup, (vmap, emap, tmap)


def _orig_vertex_id(cx, p):
    key = np.array(cx.lattice.canonicalize(p)[0])
    hit = np.nonzero((cx.vertex_lifts == key).all(axis=1))[0]
    return int(hit[0])


def _orig_edge_id(cx, pq):
    key = np.array(cx.lattice.canonical_simplex(pq))
    hit = np.nonzero((cx.edge_lifts == key[None]).all(axis=(1, 2)))[0]
    return int(hit[0])


def _orig_tet_id(cx, pts):
    key = np.array(cx.lattice.canonical_simplex(pts))
    hit = np.nonzero((cx.tet_lifts == key[None]).all(axis=(1, 2)))[0]
    return int(hit[0])


def validate(cx: SimplicialComplex3) -> list:
    """Check the closed-complex invariants; returns a list of violations."""
    problems = []
    counts = np.zeros(cx.n_triangles, dtype=int)
    for t in range(cx.n_tets):
        for f in cx.tet_faces[t]:
            counts[f] += 1
    for f in np.nonzero(counts != 2)[0]:
        problems.append(f"triangle {f} lies in {counts[f]} tets")
    if (cx.face_glue < 0).any():
        problems.append("unglued faces present")
    slot_members = [[] for _ in range(cx.n_edges)]
    for t in range(cx.n_tets):
        for j in range(6):
            slot_members[cx.tet_edges[t, j]].append((t, j))
    for e in range(cx.n_edges):
        cyc = cx.tets_around_edge[e]
        if len(cyc) != len(slot_members[e]) or set(cyc) != set(slot_members[e]):
            problems.append(f"edge {e} link is not a single cycle")
    chi = cx.euler_characteristic()
    if chi != 0:
        problems.append(f"Euler characteristic {chi} != 0")
    return problems


def mesh_to_json(cx: SimplicialComplex3, lengths=None) -> str:
    """JSON mesh dump with stable lexicographic ordering."""
    data = {
        "vertices": [[float(x) for x in row] for row in cx.vertex_positions()],
        "edges": [[int(a), int(b)] for a, b in np.sort(cx.edges, axis=1)],
        "triangles": [[int(v) for v in row] for row in cx.triangles],
        "tets": [sorted(int(v) for v in row) for row in cx.tets],
        "body_diagonals": [int(e) for e in np.nonzero(cx.is_body_diagonal)[0]],
    }
    if lengths is not None:
        data["lengths"] = [float(x) for x in lengths]
    return json.dumps(data, indent=None, separators=(",", ":"), sort_keys=True)
