"""Deficit angles and piecewise flat curvature over an edge-length state.

The per-edge Ricci value is assembled from deficit angles via

    Rc_l   = (R_v1 + R_v2)/4 - K_l_perp
    K_perp = (|l| eps_l + sum_j |l_j| cos^2(theta_j) eps_j / 2) / V_l
    R_v    = sum_i |l_i| eps_i / V_v,    R_tilde = 2 sum |l| eps / V_S

with V_v the barycentric dual volumes and V_l the union of the endpoint
cells truncated by the planes orthogonal to the edge at its endpoints.
Cells of tets that touch an endpoint without containing the edge are
realised by unfolding the vertex star isometrically across shared faces
(breadth-first from the tets around the edge).

All heavy lifting is split into a topology-only ``StarPlan`` (built once
per complex) and a per-state ``GeometryCache`` executing it with numpy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .complexes import _TET_EDGE_SLOTS, _TET_FACE_SLOTS, SimplicialComplex3
from .flat_geometry import (
    RealizabilityError,
    batch_dihedrals,
    batch_embed,
    batch_volumes,
    corner_cell_subsimplex_heights,
    slab_fraction_below,
)

__all__ = [
    "CurvatureReport",
    "GeometryCache",
    "deficit_angle",
    "sectional_orthogonal",
    "vertex_scalar",
    "global_scalar",
    "edge_ricci",
    "full_report",
    "report_to_csv",
]

_EDGE_SLOT_INDEX = {pair: i for i, pair in enumerate(_TET_EDGE_SLOTS)}


# ---------------------------------------------------------------------------
# Topology-only unfolding plan
# ---------------------------------------------------------------------------


class StarPlan:
    """Unfolding instructions for both endpoint stars of every edge."""

    def __init__(self, cx: SimplicialComplex3):
        self.cx = cx
        roots = []          # (node, edge, tet, sa, sb, c1, c2)
        bfs_levels = []     # list of lists of instruction tuples
        node_edge = []
        node_end = []
        node_tet = []
        node_center = []
        instances = []      # (edge, node, center_slot, other_slot, edge_j, sign)

        tet_edges = cx.tet_edges
        tet_end0 = cx.tet_edge_end0
        face_glue = cx.face_glue
        face_perm = cx.face_glue_perm
        star = cx.vertex_star()

        def new_node(e, end, t, cs):
            node_edge.append(e)
            node_end.append(end)
            node_tet.append(t)
            node_center.append(cs)
            return len(node_edge) - 1

        for e in range(cx.n_edges):
            ring = cx.tets_around_edge[e]
            ring_slots = []
            for t, j in ring:
                a, b = _TET_EDGE_SLOTS[j]
                if tet_end0[t, j] == 0:
                    ring_slots.append((t, j, a, b))
                else:
                    ring_slots.append((t, j, b, a))

            for end in (0, 1):
                v_end = cx.edges[e, end]
                incident = star[v_end]
                root_nodes = {}
                level_nodes = []
                for t, j, sa, sb in ring_slots:
                    cs = sa if end == 0 else sb
                    key = (t, cs)
                    if key in root_nodes:
                        continue
                    node = new_node(e, end, t, cs)
                    rem = [s for s in range(4) if s not in (sa, sb)]
                    roots.append((node, e, t, sa, sb, rem[0], rem[1]))
                    root_nodes[key] = node
                    level_nodes.append((key, node))

                visited = dict(root_nodes)
                star_order = list(level_nodes)
                frontier = level_nodes
                depth = 0
                while frontier:
                    depth += 1
                    if depth > 64:
                        raise RuntimeError("star unfolding did not terminate")
                    nxt = []
                    for (t, cs), node in frontier:
                        for f in range(4):
                            if f == cs:
                                continue  # face opposite the centre: centre not on it
                            t2, s2 = (int(x) for x in face_glue[t, f])
                            perm = face_perm[t, f]
                            fa = _TET_FACE_SLOTS[f]
                            fa2 = _TET_FACE_SLOTS[s2]
                            cs2 = fa2[perm[fa.index(cs)]]
                            key2 = (t2, cs2)
                            if key2 in visited:
                                continue
                            node2 = new_node(e, end, t2, cs2)
                            visited[key2] = node2
                            shared_parent = list(fa)
                            shared_child = [fa2[perm[i]] for i in range(3)]
                            dist_edges = [
                                tet_edges[
                                    t2, _EDGE_SLOT_INDEX[(min(s2, c), max(s2, c))]
                                ]
                                for c in shared_child
                            ]
                            while len(bfs_levels) < depth:
                                bfs_levels.append([])
                            bfs_levels[depth - 1].append(
                                (node2, node, t2, s2, shared_parent, shared_child, dist_edges, f)
                            )
                            nxt.append((key2, node2))
                            star_order.append((key2, node2))
                    frontier = nxt
                if len(visited) != len(incident):
                    raise RuntimeError(
                        f"edge {e} end {end}: unfolded {len(visited)} of "
                        f"{len(incident)} star incidences"
                    )

                # first-occurrence edge-end instances at the centre, in
                # deterministic plan order (roots precede unfolded tets, so a
                # shared tet wins when one exists)
                seen = set()
                sign = 1.0 if end == 0 else -1.0
                for (t, cs), node in star_order:
                    for o in range(4):
                        if o == cs:
                            continue
                        j = _EDGE_SLOT_INDEX[(min(cs, o), max(cs, o))]
                        ej = int(tet_edges[t, j])
                        if ej == e:
                            continue
                        end0 = int(tet_end0[t, j])
                        end_c = end0 if cs < o else 1 - end0
                        keyj = (ej, end_c)
                        if keyj in seen:
                            continue
                        seen.add(keyj)
                        instances.append((e, node, cs, o, ej, sign))

        N = len(node_edge)
        self.n_nodes = N
        self.node_edge = np.array(node_edge, dtype=np.int64)
        self.node_end = np.array(node_end, dtype=np.int64)
        self.node_tet = np.array(node_tet, dtype=np.int64)
        self.node_center = np.array(node_center, dtype=np.int64)

        self.r_node = np.array([r[0] for r in roots], dtype=np.int64)
        self.r_edge = np.array([r[1] for r in roots], dtype=np.int64)
        self.r_tet = np.array([r[2] for r in roots], dtype=np.int64)
        self.r_sa = np.array([r[3] for r in roots], dtype=np.int64)
        self.r_sb = np.array([r[4] for r in roots], dtype=np.int64)
        self.r_c1 = np.array([r[5] for r in roots], dtype=np.int64)
        self.r_c2 = np.array([r[6] for r in roots], dtype=np.int64)

        def eidx(t, a, b):
            return tet_edges[t, _EDGE_SLOT_INDEX[(min(a, b), max(a, b))]]

        self.r_len_ac1 = np.array(
            [eidx(t, a, c) for _, _, t, a, _, c, _ in roots], dtype=np.int64
        )
        self.r_len_bc1 = np.array(
            [eidx(t, b, c) for _, _, t, _, b, c, _ in roots], dtype=np.int64
        )
        self.r_len_ac2 = np.array(
            [eidx(t, a, c) for _, _, t, a, _, _, c in roots], dtype=np.int64
        )
        self.r_len_bc2 = np.array(
            [eidx(t, b, c) for _, _, t, _, b, _, c in roots], dtype=np.int64
        )
        self.r_len_c1c2 = np.array(
            [eidx(t, c1, c2) for _, _, t, _, _, c1, c2 in roots], dtype=np.int64
        )

        self.levels = []
        for lvl in bfs_levels:
            if not lvl:
                continue
            self.levels.append(
                {
                    "node": np.array([i[0] for i in lvl], dtype=np.int64),
                    "parent": np.array([i[1] for i in lvl], dtype=np.int64),
                    "tet": np.array([i[2] for i in lvl], dtype=np.int64),
                    "new_slot": np.array([i[3] for i in lvl], dtype=np.int64),
                    "shared_parent": np.array([i[4] for i in lvl], dtype=np.int64),
                    "shared_child": np.array([i[5] for i in lvl], dtype=np.int64),
                    "dist_edges": np.array([i[6] for i in lvl], dtype=np.int64),
                    "parent_opp": np.array([i[7] for i in lvl], dtype=np.int64),
                }
            )

        self.i_edge = np.array([i[0] for i in instances], dtype=np.int64)
        self.i_node = np.array([i[1] for i in instances], dtype=np.int64)
        self.i_cs = np.array([i[2] for i in instances], dtype=np.int64)
        self.i_os = np.array([i[3] for i in instances], dtype=np.int64)
        self.i_j = np.array([i[4] for i in instances], dtype=np.int64)
        self.i_sign = np.array([i[5] for i in instances], dtype=float)


def get_star_plan(cx: SimplicialComplex3) -> StarPlan:
    plan = getattr(cx, "_star_plan", None)
    if plan is None:
        plan = StarPlan(cx)
        cx._star_plan = plan
    return plan


# ---------------------------------------------------------------------------
# Per-state geometry
# ---------------------------------------------------------------------------


class GeometryCache:
    """Geometric quantities of one (complex, edge lengths) snapshot."""

    def __init__(self, cx: SimplicialComplex3, lengths):
        self.cx = cx
        self.lengths = np.asarray(lengths, dtype=float).reshape(cx.n_edges)
        if (self.lengths <= 0).any():
            bad = np.nonzero(self.lengths <= 0)[0]
            raise RealizabilityError(f"non-positive lengths at edges {bad.tolist()}")
        tet_lengths = self.lengths[cx.tet_edges]
        self.tet_points, ok = batch_embed(tet_lengths)
        if not ok.all():
            bad = np.nonzero(~ok)[0]
            raise RealizabilityError(
                f"non-realizable tetrahedra: {bad.tolist()[:8]}"
                + ("..." if len(bad) > 8 else "")
            )
        self.tet_vols = batch_volumes(self.tet_points)
        self.dihedrals = batch_dihedrals(self.tet_points)
        self._deficits = None
        self._vertex_vols = None
        self._edge_vols = None
        self._kperp_sum = None
        self._node_pos = None

    # -- deficits and dual volumes ------------------------------------------

    def deficits(self) -> np.ndarray:
        if self._deficits is None:
            cx = self.cx
            eps = np.full(cx.n_edges, 2.0 * np.pi)
            np.subtract.at(eps, cx.tet_edges.ravel(), self.dihedrals.ravel())
            self._deficits = eps
        return self._deficits

    def vertex_volumes(self) -> np.ndarray:
        if self._vertex_vols is None:
            cx = self.cx
            vv = np.zeros(cx.n_vertices)
            np.add.at(
                vv, cx.tets.ravel(), np.repeat(self.tet_vols / 4.0, 4)
            )
            self._vertex_vols = vv
        return self._vertex_vols

    def total_volume(self) -> float:
        return float(self.tet_vols.sum())

    # -- star unfolding ------------------------------------------------------

    def node_positions(self) -> np.ndarray:
        """(N,4,3) unfolded corner positions for every star node."""
        if self._node_pos is not None:
            return self._node_pos
        plan = get_star_plan(self.cx)
        L = self.lengths
        pos = np.full((plan.n_nodes, 4, 3), np.nan)

        # roots: edge ends at (0,0,0) and (Le,0,0)
        idx = plan.r_node
        Le = L[plan.r_edge]
        n = len(idx)
        pos[idx, plan.r_sa] = 0.0
        b = np.zeros((n, 3))
        b[:, 0] = Le
        pos[idx, plan.r_sb] = b
        da = L[plan.r_len_ac1]
        db = L[plan.r_len_bc1]
        x = (Le**2 + da**2 - db**2) / (2.0 * Le)
        y = np.sqrt(np.clip(da**2 - x**2, 0.0, None))
        c1 = np.zeros((n, 3))
        c1[:, 0] = x
        c1[:, 1] = y
        pos[idx, plan.r_c1] = c1
        P = _trilaterate(
            np.zeros((n, 3)),
            b,
            c1,
            L[plan.r_len_ac2] ** 2,
            L[plan.r_len_bc2] ** 2,
            L[plan.r_len_c1c2] ** 2,
            side=np.ones(n),
        )
        pos[idx, plan.r_c2] = P

        rows = np.arange(plan.n_nodes)
        for lvl in plan.levels:
            node = lvl["node"]
            parent = lvl["parent"]
            sp = lvl["shared_parent"]
            sc = lvl["shared_child"]
            A = pos[parent, sp[:, 0]]
            B = pos[parent, sp[:, 1]]
            C = pos[parent, sp[:, 2]]
            Q = pos[parent, lvl["parent_opp"]]
            d = L[lvl["dist_edges"]]
            nrm = np.cross(B - A, C - A)
            side = -np.sign(np.einsum("ki,ki->k", Q - A, nrm))
            P = _trilaterate(A, B, C, d[:, 0] ** 2, d[:, 1] ** 2, d[:, 2] ** 2, side)
            pos[node, sc[:, 0]] = A
            pos[node, sc[:, 1]] = B
            pos[node, sc[:, 2]] = C
            pos[node, lvl["new_slot"]] = P
        self._node_pos = pos
        return pos

    def edge_volumes(self) -> np.ndarray:
        if self._edge_vols is None:
            plan = get_star_plan(self.cx)
            pos = self.node_positions()
            heights = pos[:, :, 0]
            sub_h = corner_cell_subsimplex_heights(heights, plan.node_center)
            sub_h = np.sort(sub_h.reshape(-1, 4), axis=1)
            Le = self.lengths[plan.node_edge]
            c2 = np.repeat(Le, 6)
            frac = slab_fraction_below(sub_h, c2) - slab_fraction_below(
                sub_h, np.zeros(len(sub_h))
            )
            vols = np.repeat(self.tet_vols[plan.node_tet] / 24.0, 6)
            ev = np.zeros(self.cx.n_edges)
            np.add.at(ev, np.repeat(plan.node_edge, 6), vols * frac)
            self._edge_vols = ev
        return self._edge_vols

    def kperp_cross_sums(self) -> np.ndarray:
        """Per edge: sum_j |l_j| cos^2(theta_j) eps_j / 2 over included ends."""
        if self._kperp_sum is None:
            plan = get_star_plan(self.cx)
            pos = self.node_positions()
            eps = self.deficits()
            dx = (
                pos[plan.i_node, plan.i_os, 0]
                - pos[plan.i_node, plan.i_cs, 0]
            )
            comp = plan.i_sign * dx
            Lj = self.lengths[plan.i_j]
            term = np.where(comp > 0.0, 0.5 * (dx**2 / Lj) * eps[plan.i_j], 0.0)
            S = np.zeros(self.cx.n_edges)
            np.add.at(S, plan.i_edge, term)
            self._kperp_sum = S
        return self._kperp_sum

    # -- assembled curvature quantities ---------------------------------------

    def kperp(self) -> np.ndarray:
        eps = self.deficits()
        return (self.lengths * eps + self.kperp_cross_sums()) / self.edge_volumes()

    def vertex_scalars(self) -> np.ndarray:
        cx = self.cx
        le = self.lengths * self.deficits()
        acc = np.zeros(cx.n_vertices)
        np.add.at(acc, cx.edges[:, 0], le)
        np.add.at(acc, cx.edges[:, 1], le)
        return acc / self.vertex_volumes()

    def global_scalar(self) -> float:
        return float(
            2.0 * (self.lengths * self.deficits()).sum() / self.total_volume()
        )

    def edge_ricci(self) -> np.ndarray:
        rv = self.vertex_scalars()
        cx = self.cx
        return 0.25 * (rv[cx.edges[:, 0]] + rv[cx.edges[:, 1]]) - self.kperp()


def _trilaterate(A, B, C, ra2, rb2, rc2, side):
    """Batched: point at given squared distances from A, B, C, on ``side`` of
    the plane (sign of the (B-A) x (C-A) normal component)."""
    u = B - A
    v = C - A
    uu = np.einsum("ki,ki->k", u, u)
    uv = np.einsum("ki,ki->k", u, v)
    vv = np.einsum("ki,ki->k", v, v)
    su = (ra2 - rb2 + uu) / 2.0
    sv = (ra2 - rc2 + vv) / 2.0
    det = uu * vv - uv**2
    alpha = (su * vv - sv * uv) / det
    beta = (sv * uu - su * uv) / det
    base = A + alpha[:, None] * u + beta[:, None] * v
    h2 = ra2 - (alpha**2 * uu + 2.0 * alpha * beta * uv + beta**2 * vv)
    nrm = np.cross(u, v)
    nrm = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
    return base + (side * np.sqrt(np.clip(h2, 0.0, None)))[:, None] * nrm


# ---------------------------------------------------------------------------
# Public surface
# ---------------------------------------------------------------------------


@dataclass
class CurvatureReport:
    """Per-edge, per-vertex and global piecewise flat curvature quantities."""

    lengths: np.ndarray
    deficits: np.ndarray
    kperp: np.ndarray
    ricci: np.ndarray
    edge_volumes: np.ndarray
    vertex_volumes: np.ndarray
    vertex_scalars: np.ndarray
    total_volume: float
    global_scalar: float

    def regge_residual(self) -> float:
        """Relative mismatch of sum_v V_v R_v against 2 sum |l| eps."""
        lhs = float((self.vertex_volumes * self.vertex_scalars).sum())
        rhs = float(2.0 * (self.lengths * self.deficits).sum())
        scale = max(abs(lhs), abs(rhs), 1e-300)
        return abs(lhs - rhs) / scale


def full_report(cx: SimplicialComplex3, lengths) -> CurvatureReport:
    geo = GeometryCache(cx, lengths)
    return CurvatureReport(
        lengths=geo.lengths.copy(),
        deficits=geo.deficits().copy(),
        kperp=geo.kperp(),
        ricci=geo.edge_ricci(),
        edge_volumes=geo.edge_volumes().copy(),
        vertex_volumes=geo.vertex_volumes().copy(),
        vertex_scalars=geo.vertex_scalars(),
        total_volume=geo.total_volume(),
        global_scalar=geo.global_scalar(),
    )


def deficit_angle(cx, lengths, e: int) -> float:
    return float(GeometryCache(cx, lengths).deficits()[e])


def sectional_orthogonal(cx, lengths, e: int) -> float:
    return float(GeometryCache(cx, lengths).kperp()[e])


def vertex_scalar(cx, lengths, v: int) -> float:
    return float(GeometryCache(cx, lengths).vertex_scalars()[v])


def global_scalar(cx, lengths) -> float:
    return GeometryCache(cx, lengths).global_scalar()


def edge_ricci(cx, lengths, e: int) -> float:
    return float(GeometryCache(cx, lengths).edge_ricci()[e])


def report_to_csv(cx: SimplicialComplex3, report: CurvatureReport) -> str:
    """CSV export: one row per edge, then one per vertex, 17 significant digits."""
    lines = ["edge_id,v1,v2,length,deficit,K_perp,Rc"]
    for e in range(cx.n_edges):
        lines.append(
            f"{e},{cx.edges[e,0]},{cx.edges[e,1]},"
            f"{report.lengths[e]:.17g},{report.deficits[e]:.17g},"
            f"{report.kperp[e]:.17g},{report.ricci[e]:.17g}"
        )
    lines.append("vertex_id,V_v,R_v")
    for v in range(cx.n_vertices):
        lines.append(
            f"{v},{report.vertex_volumes[v]:.17g},{report.vertex_scalars[v]:.17g}"
        )
    return "\n".join(lines) + "\n"
