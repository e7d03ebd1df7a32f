"""Piecewise flat Ricci flow: forward Euler steps with optional flattening.

Each step evaluates all curvatures on the frozen pre-step state (Jacobi
update) and rescales every edge by its fractional flow rate,

    non-normalized:  l' = l (1 - dt Rc_l)
    normalized:      l' = l (1 + dt (-Rc_l + R_tilde/3))

Body-diagonal lengths of cubic/skew blocks are excluded from the Euler
update and re-solved after each step so their deficit angles vanish,
keeping block interiors flat (the stabilizer).  Diamond grids carry no
flattened edges and evolve every length directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .complexes import _TET_EDGE_SLOTS, SimplicialComplex3
from .curvature import CurvatureReport, GeometryCache, full_report
from .flat_geometry import RealizabilityError

__all__ = [
    "FlowConfig",
    "FlowTrace",
    "FlowError",
    "flatten_body_diagonals",
    "euler_step",
    "evolve",
    "trace_to_csv",
    "summary_to_csv",
]


class FlowError(RuntimeError):
    """A flow step produced a non-realizable or non-positive geometry."""


@dataclass(frozen=True)
class FlowConfig:
    dt: float
    steps: int
    normalized: bool = False
    flatten: bool = True
    stride: int = 1

    def __post_init__(self):
        if self.dt <= 0 or self.steps < 1 or self.stride < 1:
            raise ValueError("need dt > 0, steps >= 1, stride >= 1")


@dataclass
class FlowTrace:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)    # edge-length arrays
    reports: list = field(default_factory=list)   # CurvatureReport per record
    aborted: Optional[str] = None

    def record(self, t, lengths, report):
        self.times.append(float(t))
        self.states.append(np.asarray(lengths, dtype=float).copy())
        self.reports.append(report)

    def __len__(self):
        return len(self.times)


# ---------------------------------------------------------------------------
# Body-diagonal flattening
# ---------------------------------------------------------------------------


def _dihedral_at_01(d01, d02, d03, d12, d13, d23):
    """Dihedral angle at the (0,1) edge from plain floats; None if unrealizable."""
    x2 = (d01 * d01 + d02 * d02 - d12 * d12) / (2.0 * d01)
    y2sq = d02 * d02 - x2 * x2
    if y2sq <= 0.0:
        return None
    y2 = math.sqrt(y2sq)
    x3 = (d01 * d01 + d03 * d03 - d13 * d13) / (2.0 * d01)
    y3 = (d02 * d02 + d03 * d03 - d23 * d23 - 2.0 * x2 * x3) / (2.0 * y2)
    z3sq = d03 * d03 - x3 * x3 - y3 * y3
    if z3sq <= 0.0:
        return None
    return math.atan2(math.sqrt(z3sq), y3)


def _diag_fan_layout(cx: SimplicialComplex3, e: int):
    """Per incident tet: the six edge ids reordered so the diagonal is slot (0,1)."""
    layout = []
    for t, j in cx.tets_around_edge[e]:
        a, b = _TET_EDGE_SLOTS[j]
        rest = [s for s in range(4) if s not in (a, b)]
        order = [a, b] + rest
        ids = []
        for p, q in _TET_EDGE_SLOTS:
            u, v = order[p], order[q]
            slot = _TET_EDGE_SLOTS.index((min(u, v), max(u, v)))
            ids.append(int(cx.tet_edges[t, slot]))
        layout.append(ids)
    return layout


def _diag_deficit(lengths, layout, e, value):
    total = 0.0
    for ids in layout:
        ds = [value if i == e else lengths[i] for i in ids]
        ang = _dihedral_at_01(*ds)
        if ang is None:
            return None
        total += ang
    return 2.0 * math.pi - total


def flatten_body_diagonals(cx: SimplicialComplex3, lengths, tol=1e-12):
    """Re-solve every flagged body diagonal so its deficit angle vanishes.

    Returns a new length array; other edges are untouched.  Raises FlowError
    if no root can be bracketed for some diagonal.
    """
    lengths = np.asarray(lengths, dtype=float).copy()
    diag_ids = np.nonzero(cx.is_body_diagonal)[0]
    layouts = getattr(cx, "_diag_layouts", None)
    if layouts is None:
        layouts = {int(e): _diag_fan_layout(cx, int(e)) for e in diag_ids}
        cx._diag_layouts = layouts

    for e in diag_ids:
        e = int(e)
        layout = layouts[e]
        L0 = lengths[e]
        f0 = _diag_deficit(lengths, layout, e, L0)
        if f0 is not None and abs(f0) < 1e-13:
            continue

        def f(x):
            val = _diag_deficit(lengths, layout, e, x)
            return val if val is not None else math.nan

        lo, hi = _bracket_root(f, L0)
        if lo is None:
            raise FlowError(f"body diagonal {e}: no flattening root bracketed")
        root = brentq(f, lo, hi, xtol=1e-15, rtol=8.9e-16, maxiter=200)
        resid = f(root)
        if not (abs(resid) < tol):
            raise FlowError(
                f"body diagonal {e}: flattening residual {resid:.3e} above {tol}"
            )
        lengths[e] = root
    return lengths


def _bracket_root(f, L0):
    """Scan a geometric grid around L0 for a sign change of f."""
    for span in (1.6, 3.0, 8.0):
        grid = L0 * np.geomspace(1.0 / span, span, 97)
        vals = [f(x) for x in grid]
        prev = None
        for x, v in zip(grid, vals):
            if math.isnan(v):
                prev = None
                continue
            if prev is not None:
                x0, v0 = prev
                if v0 == 0.0:
                    return x0, x0
                if v0 * v < 0.0:
                    return x0, x
            prev = (x, v)
    return None, None


# ---------------------------------------------------------------------------
# Euler stepping
# ---------------------------------------------------------------------------


def euler_step(cx, lengths, dt, normalized=False, flatten=True, geo=None):
    """One forward Euler step from a frozen snapshot.

    Returns (new lengths, report of the pre-step state).
    """
    if geo is None:
        geo = GeometryCache(cx, lengths)
    rc = geo.edge_ricci()
    if normalized:
        factor = 1.0 + dt * (-rc + geo.global_scalar() / 3.0)
    else:
        factor = 1.0 - dt * rc
    new = geo.lengths * factor
    report = _report_from(geo)
    if flatten and cx.is_body_diagonal.any():
        new[cx.is_body_diagonal] = geo.lengths[cx.is_body_diagonal]
        new = flatten_body_diagonals(cx, new)
    if (new <= 0).any():
        bad = np.nonzero(new <= 0)[0]
        raise FlowError(f"non-positive lengths after step at edges {bad.tolist()}")
    return new, report


def _report_from(geo: GeometryCache) -> CurvatureReport:
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


def evolve(cx: SimplicialComplex3, initial, config: FlowConfig) -> FlowTrace:
    """Run the flow; records every ``stride``-th state (always the first/last).

    Step failures abort the run and return the partial trace with ``aborted``
    set to the failure description.
    """
    trace = FlowTrace()
    lengths = np.asarray(initial, dtype=float).copy()
    t = 0.0
    for step in range(config.steps + 1):
        try:
            geo = GeometryCache(cx, lengths)
        except RealizabilityError as err:
            trace.aborted = f"step {step}: {err}"
            return trace
        if step % config.stride == 0 or step == config.steps:
            trace.record(t, lengths, _report_from(geo))
        if step == config.steps:
            break
        try:
            lengths, _ = euler_step(
                cx, lengths, config.dt, config.normalized, config.flatten, geo=geo
            )
        except (FlowError, RealizabilityError) as err:
            trace.aborted = f"step {step}: {err}"
            return trace
        t += config.dt
    return trace


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------


def trace_to_csv(trace: FlowTrace, stride_steps=None) -> str:
    """Long-format CSV: step,t,edge_id,length (17 significant digits)."""
    lines = ["step,t,edge_id,length"]
    for r, (t, state) in enumerate(zip(trace.times, trace.states)):
        for e, L in enumerate(state):
            lines.append(f"{r},{t:.17g},{e},{L:.17g}")
    return "\n".join(lines) + "\n"


def summary_to_csv(trace: FlowTrace) -> str:
    """Per-record summary stream with length-weighted mean |Rc| and |eps|."""
    lines = ["step,t,V_S,R_tilde,mean_abs_Rc,mean_abs_deficit"]
    for r, (t, rep) in enumerate(zip(trace.times, trace.reports)):
        w = rep.lengths.sum()
        mrc = float((rep.lengths * np.abs(rep.ricci)).sum() / w)
        mde = float((rep.lengths * np.abs(rep.deficits)).sum() / w)
        lines.append(
            f"{r},{t:.17g},{rep.total_volume:.17g},{rep.global_scalar:.17g},"
            f"{mrc:.17g},{mde:.17g}"
        )
    return "\n".join(lines) + "\n"
