"""Exact 2-d nested polygon engine for rank-3 column geometry.

A rank-3 nonnegative matrix M maps, after column normalization, onto a 2-d
affine slice of the unit simplex.  The normalized columns span an inner
convex polygon Q; the simplex slice is an outer polygon P.  Exact low-rank
factorizations of M correspond to polygons with few vertices nested between
Q and P, which this module decides and enumerates with the classic
boundary tangent walk:

    from a point x(t) on the boundary of P, follow the supporting line of Q
    (Q kept on the left) until it exits P; k chained steps wrap around Q iff
    a k-vertex nested polygon through x(t) exists.

All computations happen in a 2-d orthonormal chart of the affine slice,
rescaled so the outer polygon has unit perimeter; ``GEOM_TOL`` is the single
absolute tolerance used for every incidence/tangency test in that scale.
"""

import math
import numpy as np
from dataclasses import dataclass, field

import scipy.optimize

from .matcore import as_matrix, pullback

__all__ = [
    "GEOM_TOL",
    "GeometryError",
    "DegenerateChart",
    "EmptyOuter",
    "StartInsideQ",
    "NotFinite",
    "Polygon2",
    "Chart",
    "NppInstance",
    "TangentWalk",
    "build_npp",
    "tangent_step",
    "walk_fk",
    "sample_fk",
    "contact_change_points",
    "feasible_k",
    "enumerate_solutions",
    "hull_membership",
    "rotated_chart",
    "convex_hull",
    "numerical_rank",
]

GEOM_TOL = 1e-9


class GeometryError(RuntimeError):
    pass


class DegenerateChart(GeometryError):
    """The input does not span a 2-d affine slice (numerical rank != 3)."""


class EmptyOuter(GeometryError):
    """Half-plane intersection produced no polygon (numerical failure)."""


class StartInsideQ(GeometryError):
    """Walk started strictly inside the inner polygon (instance infeasible)."""


class NotFinite(GeometryError):
    """The instance admits a continuum of minimal nested polygons."""


def numerical_rank(M, tol=1e-9):
    """Number of singular values above ``tol`` times the largest."""
    s = np.linalg.svd(as_matrix(M), compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > tol * s[0]))


def convex_hull(points, tol=None):
    """2-d convex hull, counterclockwise, collinear points dropped.

    Returns (vertices, index_map) where index_map[v] lists the indices of
    the input points coinciding with hull vertex v.
    Monotone chain; ``tol`` is the absolute coincidence/collinearity cutoff.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be an (n, 2) array")
    scale = max(1.0, float(np.abs(pts).max()))
    if tol is None:
        tol = GEOM_TOL * scale

    order = np.lexsort((pts[:, 1], pts[:, 0]))
    uniq = []
    groups = []
    for idx in order:
        p = pts[idx]
        if uniq and np.abs(p - uniq[-1]).max() <= tol:
            groups[-1].append(int(idx))
        else:
            uniq.append(p)
            groups.append([int(idx)])
    uniq = np.asarray(uniq)
    if len(uniq) == 1:
        return uniq, {0: groups[0]}

    def half(indices):
        chain = []
        for i in indices:
            while len(chain) >= 2:
                o, a = uniq[chain[-2]], uniq[chain[-1]]
                u, w = a - o, uniq[i] - o
                if u[0] * w[1] - u[1] * w[0] <= tol * scale:
                    chain.pop()
                else:
                    break
            chain.append(i)
        return chain

    idx = list(range(len(uniq)))
    lower = half(idx)
    upper = half(idx[::-1])
    hull_idx = lower[:-1] + upper[:-1]
    verts = uniq[hull_idx]
    index_map = {v: groups[i] for v, i in enumerate(hull_idx)}
    return verts, index_map


@dataclass(frozen=True)
class Polygon2:
    """Convex polygon with counterclockwise vertices and an arc-length table.

    Boundary points are addressed by the fraction t in [0, 1) of the
    perimeter traveled counterclockwise from vertex 0.
    """

    vertices: np.ndarray
    arcs: np.ndarray = field(init=False, repr=False)
    normals: np.ndarray = field(init=False, repr=False)
    offsets: np.ndarray = field(init=False, repr=False)
    edges: np.ndarray = field(init=False, repr=False)
    edge_len: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ValueError("polygon needs at least 3 two-dimensional vertices")
        edges = np.roll(v, -1, axis=0) - v
        lens = np.linalg.norm(edges, axis=1)
        if np.any(lens <= GEOM_TOL):
            raise ValueError("polygon has repeated vertices")
        nxt = np.roll(edges, -1, axis=0)
        turns = (edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]) \
            / (lens * np.roll(lens, -1))
        if np.any(turns <= GEOM_TOL):
            raise ValueError("polygon is not strictly convex counterclockwise")
        object.__setattr__(self, "vertices", v)
        arcs = np.concatenate([[0.0], np.cumsum(lens)])
        object.__setattr__(self, "arcs", arcs)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "edge_len", lens)
        # Outward normals: rotate each CCW edge by -90 degrees.
        nrm = np.column_stack([edges[:, 1], -edges[:, 0]]) / lens[:, None]
        object.__setattr__(self, "normals", nrm)
        object.__setattr__(self, "offsets", np.einsum("ij,ij->i", nrm, v))

    @property
    def perimeter(self):
        return float(self.arcs[-1])

    def point_at(self, t):
        """Boundary point at perimeter fraction t (any real; wraps)."""
        s = (t % 1.0) * self.perimeter
        i = int(np.searchsorted(self.arcs, s, side="right")) - 1
        i = min(max(i, 0), len(self.vertices) - 1)
        v0 = self.vertices[i]
        v1 = self.vertices[(i + 1) % len(self.vertices)]
        seg = self.arcs[i + 1] - self.arcs[i]
        lam = (s - self.arcs[i]) / seg
        return v0 + lam * (v1 - v0)

    def param_of(self, p, tol=1e-6):
        """Perimeter fraction of a point on (or within tol of) the boundary."""
        p = np.asarray(p, dtype=float)
        v = self.vertices
        e = self.edges
        rel = p[None, :] - v
        lam = np.clip((rel[:, 0] * e[:, 0] + rel[:, 1] * e[:, 1])
                      / (self.edge_len ** 2), 0.0, 1.0)
        dx = rel[:, 0] - lam * e[:, 0]
        dy = rel[:, 1] - lam * e[:, 1]
        d2 = dx * dx + dy * dy
        i = int(np.argmin(d2))
        if d2[i] > tol * tol:
            raise GeometryError(
                f"point {p} lies {math.sqrt(d2[i]):.2e} away from the boundary")
        return float((self.arcs[i] + lam[i] * self.edge_len[i]) / self.perimeter) % 1.0

    def signed_inside(self, p):
        """Min over edges of the inward slack; >= 0 iff p is inside."""
        return float(np.min(self.offsets - self.normals @ np.asarray(p, dtype=float)))

    def edge_of_param(self, t):
        """Index of the edge containing boundary fraction t (vertex -> outgoing)."""
        s = (t % 1.0) * self.perimeter
        i = int(np.searchsorted(self.arcs, s, side="right")) - 1
        return min(max(i, 0), len(self.vertices) - 1)


def _clip_halfplane(verts, a, c, tol):
    """Sutherland-Hodgman clip of a CCW polygon by the half-plane a.y <= c."""
    out = []
    k = len(verts)
    d = verts @ a - c
    for i in range(k):
        p, q = verts[i], verts[(i + 1) % k]
        dp, dq = d[i], d[(i + 1) % k]
        if dp <= tol:
            out.append(p)
        if (dp < -tol and dq > tol) or (dp > tol and dq < -tol):
            lam = dp / (dp - dq)
            out.append(p + lam * (q - p))
    return np.asarray(out)


def _dedup_ring(verts, tol):
    """Drop coincident and collinear vertices from a CCW ring."""
    if len(verts) == 0:
        return verts
    keep = [verts[0]]
    for p in verts[1:]:
        if np.abs(p - keep[-1]).max() > tol:
            keep.append(p)
    while len(keep) > 1 and np.abs(keep[0] - keep[-1]).max() <= tol:
        keep.pop()
    if len(keep) < 3:
        return np.asarray(keep)
    out = []
    k = len(keep)
    for i in range(k):
        a, b, c = keep[i - 1], keep[i], keep[(i + 1) % k]
        u, w = b - a, c - b
        if u[0] * w[1] - u[1] * w[0] > tol * max(np.linalg.norm(u), tol):
            out.append(b)
    return np.asarray(out)


@dataclass(frozen=True)
class Chart:
    """Orthonormal 2-d chart of the affine slice holding the polygons.

    lift(y) = origin + basis @ (scale * y); coordinates are rescaled by
    1/scale so the outer polygon has unit perimeter.
    """

    origin: np.ndarray
    basis: np.ndarray
    scale: float = 1.0

    def project(self, x):
        x = np.asarray(x, dtype=float)
        return (self.basis.T @ (x - self.origin)) / self.scale

    def lift(self, y):
        y = np.asarray(y, dtype=float)
        return self.origin + self.basis @ (self.scale * y)


@dataclass(frozen=True)
class NppInstance:
    """Nested polygon instance: inner hull Q inside the simplex slice P."""

    outer: Polygon2
    inner: Polygon2
    chart: Chart
    vertex_columns: dict

    def lift_points(self, ys):
        """Lift chart points (k, 2) to nonnegative simplex vectors (m, k)."""
        Z = np.stack([self.chart.lift(y) for y in np.atleast_2d(ys)], axis=1)
        Z[(Z < 0) & (Z > -1e-7)] = 0.0
        return Z


@dataclass(frozen=True)
class TangentWalk:
    """Result of k chained tangent steps along the outer boundary."""

    t_values: np.ndarray         # k+1 nondecreasing, unwrapped
    points: np.ndarray           # (k+1, 2) walk points x(t_i)
    touch_points: tuple          # per step: (q, case_label)

    @property
    def f(self):
        return float(self.t_values[-1])

    @property
    def steps(self):
        return len(self.t_values) - 1


def build_npp(M, drop_tol=1e-12, rank_tol=1e-9):
    """Build the nested polygon instance of a rank-3 nonnegative matrix.

    The inner polygon is the convex hull of the normalized columns in a 2-d
    orthonormal chart of their affine hull; the outer polygon is the
    intersection of the m nonnegativity half-planes in the same chart
    (redundant ones drop out during incremental clipping).  Both polygons
    are rescaled so the outer perimeter is one.
    """
    M = as_matrix(M, "M")
    r = numerical_rank(M, rank_tol)
    if r != 3:
        raise DegenerateChart(f"numerical rank is {r}, need exactly 3")
    pb = pullback(M, drop_tol)
    theta = pb.theta
    m = theta.shape[0]

    o = theta.mean(axis=1)
    Y0 = theta - o[:, None]
    U, S, _ = np.linalg.svd(Y0, full_matrices=False)
    if S.size < 2 or S[1] <= 1e-12 * max(S[0], 1.0):
        raise DegenerateChart("normalized columns do not span a 2-d slice")
    W = U[:, :2]
    proj = (W.T @ Y0).T  # (n', 2)

    # Outer polygon: { y : o + W y >= 0 } clipped from a box that surely
    # contains the simplex slice (all its points satisfy |y| <= sqrt(2)).
    box = np.array([[-2.0, -2.0], [2.0, -2.0], [2.0, 2.0], [-2.0, 2.0]])
    verts = box
    tol = 1e-13
    for i in range(m):
        a = -W[i]
        na = np.linalg.norm(a)
        if na <= 1e-14:
            continue
        verts = _clip_halfplane(verts, a / na, o[i] / na, tol)
        if len(verts) == 0:
            raise EmptyOuter("half-plane intersection is empty")
    verts = _dedup_ring(verts, 1e-11)
    if len(verts) < 3:
        raise EmptyOuter("half-plane intersection degenerated")

    hull, index_map = convex_hull(proj)
    if len(hull) < 3:
        raise DegenerateChart("inner polygon is degenerate")

    outer = Polygon2(verts)
    L = outer.perimeter
    outer = Polygon2(verts / L)
    hull = hull / L

    # Clamp inner vertices that sit a hair outside the outer polygon (the
    # preprocessing keeps columns nonnegative only up to solver tolerance).
    clamped = []
    for p in hull:
        s = outer.signed_inside(p)
        if s < 0:
            if s < -1e-7:
                raise GeometryError(
                    f"inner vertex exceeds the simplex slice by {-s:.2e}")
            p = outer.point_at(outer.param_of(p, tol=1e-6))
        clamped.append(p)
    inner = Polygon2(np.asarray(clamped))

    vertex_columns = {v: tuple(pb.kept[j] for j in cols)
                      for v, cols in index_map.items()}
    chart = Chart(origin=o, basis=W, scale=L)
    return NppInstance(outer=outer, inner=inner, chart=chart,
                       vertex_columns=vertex_columns)


def _follow_inner_boundary(inner, x):
    """Direction and touch point for a walk point on the inner boundary.

    The most clockwise supporting direction from a hull boundary point is
    along its (outgoing) edge, so the step follows the boundary to the
    edge's end vertex; a point already at (or within the noise band of)
    that vertex continues toward the next one instead.
    """
    k = len(inner.vertices)
    t_in = inner.param_of(x, tol=1e-6)
    i = inner.edge_of_param(t_in)
    v_end = inner.vertices[(i + 1) % k]
    if np.hypot(*(x - v_end)) <= 1e-7:
        v_end = inner.vertices[(i + 2) % k]
    d = v_end - x
    return d / np.linalg.norm(d), v_end


def _tangent_direction(inner, x):
    """Rightmost direction from x with the inner polygon weakly on the left.

    Returns (direction, touch_point).  The touch point is the farthest inner
    vertex on the supporting ray, so a chord containing an inner edge
    reports the edge's trailing vertex.  Points on (or within tolerance of)
    the inner boundary follow the boundary instead.
    """
    s_in = inner.signed_inside(x)
    if s_in >= -10 * GEOM_TOL:
        return _follow_inner_boundary(inner, x)

    Q = inner.vertices
    diffs = Q - x
    dists = np.linalg.norm(diffs, axis=1)
    ok = dists > GEOM_TOL
    D = np.zeros_like(diffs)
    D[ok] = diffs[ok] / dists[ok][:, None]
    # cross[j, l]: inner vertex l relative to the ray toward vertex j.
    cross = (D[:, 0][:, None] * diffs[:, 1][None, :]
             - D[:, 1][:, None] * diffs[:, 0][None, :])
    cross[:, ok] /= dists[ok][None, :]
    cross[:, ~ok] = 0.0
    tol_j = GEOM_TOL + 1e-13 / np.where(ok, dists, 1.0)
    valid = ok & (cross.min(axis=1) >= -tol_j)

    best = None  # (direction, vertex, distance)
    for j in np.flatnonzero(valid):
        d = D[j]
        if best is None:
            best = (d, Q[j], dists[j])
            continue
        c = d[0] * best[0][1] - d[1] * best[0][0]  # cross(d, best_d)
        if c > GEOM_TOL:
            # best is strictly left of d: d is more clockwise.
            best = (d, Q[j], dists[j])
        elif abs(c) <= GEOM_TOL and float(d @ best[0]) > 0 and dists[j] > best[2]:
            best = (d, Q[j], dists[j])
    if best is None:
        if s_in >= -100 * GEOM_TOL:
            return _follow_inner_boundary(inner, x)
        raise GeometryError("no supporting direction found from "
                            f"distance {-s_in:.2e} outside the inner polygon")
    return best[0], best[1]


def _ray_exit(outer, x, d):
    """Farthest boundary point of the ray x + s d inside the outer polygon."""
    denom = outer.normals @ d
    slack = outer.offsets - outer.normals @ x
    out = denom > 1e-12
    if not np.any(out):
        raise GeometryError("tangent ray does not exit the outer polygon")
    s = slack[out] / denom[out]
    behind = s <= GEOM_TOL
    if np.any(behind & (denom[out] > 1e-6)):
        # Decisively transversal crossing at (or before) the start point:
        # the ray leaves the polygon immediately.
        raise GeometryError("tangent ray leaves the polygon immediately")
    ahead = s[~behind]
    if ahead.size == 0:
        raise GeometryError("tangent ray does not exit the outer polygon")
    return x + float(ahead.min()) * d


def _on_edge(poly, edge_idx, p, tol):
    v0 = poly.vertices[edge_idx]
    v1 = poly.vertices[(edge_idx + 1) % len(poly.vertices)]
    e = v1 - v0
    L2 = float(e @ e)
    lam = min(max(float((p - v0) @ e) / L2, 0.0), 1.0)
    return float(np.hypot(*(p - (v0 + lam * e)))) <= tol


def _edges_at_param(poly, t):
    """Edge indices meeting the boundary point at fraction t."""
    k = len(poly.vertices)
    i = poly.edge_of_param(t)
    s = (t % 1.0) * poly.perimeter
    edges = {i}
    if abs(s - poly.arcs[i]) <= GEOM_TOL:
        edges.add((i - 1) % k)
    if abs(poly.arcs[i + 1] - s) <= GEOM_TOL:
        edges.add((i + 1) % k)
    return edges


def _step_raw(npp, t):
    """Advance one tangent step; returns (t_next, q) without classification."""
    outer, inner = npp.outer, npp.inner
    x = outer.point_at(t)
    if inner.signed_inside(x) > 10 * GEOM_TOL:
        raise StartInsideQ(f"walk start at t={t % 1.0:.6f} lies strictly inside "
                           "the inner polygon")
    d, q = _tangent_direction(inner, x)
    exit_pt = _ray_exit(outer, x, d)
    t_exit = outer.param_of(exit_pt, tol=1e-7)
    delta = (t_exit - (t % 1.0)) % 1.0
    if delta <= 1e-12:
        raise GeometryError(f"tangent walk stalled at t={t % 1.0:.6f}")
    return t + delta, q


def tangent_step(npp, t):
    """One tangent step of the boundary walk.

    Returns (t_next, case_label, q): the unwrapped parameter after the step,
    the contact classification ('side-of-start', 'side-of-end', 'interior'),
    and the inner touch point q.  When the boundary coincides with the inner
    polygon locally, the step follows the boundary to the next vertex.
    """
    outer = npp.outer
    t_next, q = _step_raw(npp, t)
    start_edges = _edges_at_param(outer, t)
    end_edges = _edges_at_param(outer, t_next)
    tol = 10 * GEOM_TOL
    if any(_on_edge(outer, e, q, tol) for e in start_edges):
        label = "side-of-start"
    elif any(_on_edge(outer, e, q, tol) for e in end_edges):
        label = "side-of-end"
    else:
        label = "interior"
    return t_next, label, q


def walk_fk(npp, t, k):
    """Chain k tangent steps from boundary fraction t.

    The walk's final value f_k(t) equals the last (unwrapped) parameter;
    f_k(t) >= t + 1 certifies a k-vertex nested polygon whose vertices are
    the first k walk points.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    ts = [float(t)]
    pts = [npp.outer.point_at(t)]
    touches = []
    cur = float(t)
    for _ in range(k):
        cur, label, q = tangent_step(npp, cur)
        ts.append(cur)
        pts.append(npp.outer.point_at(cur))
        touches.append((q, label))
    return TangentWalk(t_values=np.asarray(ts), points=np.asarray(pts),
                       touch_points=tuple(touches))


def sample_fk(npp, k, num=256, t0=0.0):
    """Sample (t, f_k(t)) on a uniform grid (CSV/plotting helper)."""
    ts = t0 + np.arange(num) / num
    fs = np.array([walk_fk(npp, t, k).f for t in ts])
    return np.column_stack([ts, fs])


def _fk_value(npp, t, k):
    """f_k(t) without the bookkeeping of a full TangentWalk."""
    cur = float(t)
    for _ in range(k):
        cur, _ = _step_raw(npp, cur)
    return cur


def _line_polygon_intersections(poly, p0, p1):
    """Intersections of the infinite line through p0, p1 with a polygon boundary."""
    d = p1 - p0
    pts = []
    k = len(poly.vertices)
    for i in range(k):
        a = poly.vertices[i]
        b = poly.vertices[(i + 1) % k]
        e = b - a
        denom = d[0] * e[1] - d[1] * e[0]
        if abs(denom) <= 1e-14:
            continue
        w = a - p0
        s = (w[0] * e[1] - w[1] * e[0]) / denom       # along the line
        lam = (w[0] * d[1] - w[1] * d[0]) / denom     # along the edge
        if -1e-9 <= lam <= 1 + 1e-9:
            pts.append(p0 + s * d)
    return pts


def contact_change_points(npp, k):
    """Boundary parameters where the k-step walk's incidence structure changes.

    Seeds are the outer vertices, the boundary intersections of the lines
    supporting each inner edge, and inner vertices lying on the outer
    boundary; seeds are then propagated backward through the walk by
    monotone bisection.  Distinct solution classes among these points number
    at most (outer facets + inner vertices).
    """
    outer, inner = npp.outer, npp.inner
    seeds = set()
    for v in outer.vertices:
        seeds.add(outer.param_of(v))
    nq = len(inner.vertices)
    for i in range(nq):
        p0 = inner.vertices[i]
        p1 = inner.vertices[(i + 1) % nq]
        for pt in _line_polygon_intersections(outer, p0, p1):
            seeds.add(outer.param_of(pt, tol=1e-6))
        if abs(outer.signed_inside(p0)) <= 10 * GEOM_TOL:
            seeds.add(outer.param_of(p0, tol=1e-6))

    seeds = sorted(seeds)
    points = set(seeds)
    for j in range(1, k):
        f0 = _fk_value(npp, 0.0, j)
        for tau in seeds:
            target = tau + math.ceil(f0 - tau - 1e-12)
            if target < f0 - 1e-12:
                target += 1.0
            lo, hi = 0.0, 1.0
            flo = f0 - target
            fhi = flo + 1.0
            if flo > 1e-12 or fhi < -1e-12:
                continue
            for _ in range(34):
                mid = 0.5 * (lo + hi)
                fm = _fk_value(npp, mid, j) - target
                if fm < 0:
                    lo = mid
                else:
                    hi = mid
            points.add(0.5 * (lo + hi) % 1.0)

    out = sorted(points)
    dedup = []
    for t in out:
        if not dedup or t - dedup[-1] > 1e-9:
            dedup.append(t)
    if len(dedup) > 1 and (dedup[0] + 1.0) - dedup[-1] <= 1e-9:
        dedup.pop()
    return dedup


def max_wrap_slack(npp, k):
    """Maximum of f_k(t) - t - 1 over break points and a safety grid.

    The maximum of a piecewise constant / strictly convex function sits at
    piece endpoints, so the contact change points suffice; the grid guards
    against missed break points.  Returns (value, argmax_t).
    """
    cands = contact_change_points(npp, k)
    ts = list(cands)
    for t in cands:
        ts.append((t - 1e-9) % 1.0)
        ts.append((t + 1e-9) % 1.0)
    ts.extend(np.arange(193) / 193.0)
    best_t, best_v = None, -np.inf
    for t in ts:
        v = _fk_value(npp, t, k) - t - 1.0
        if v > best_v:
            best_t, best_v = t, v
    return best_v, best_t


def feasible_k(npp, k, tol=GEOM_TOL):
    """Decide whether a k-vertex polygon nests between the two polygons.

    Boundary touching counts as feasible.  Returns (feasible, witness_t or
    None).
    """
    best_v, best_t = max_wrap_slack(npp, k)
    if best_v >= -tol:
        return True, best_t
    return False, None


def enumerate_solutions(npp, k, tol=GEOM_TOL, dedup_tol=1e-6, at_level_max=False):
    """All k-vertex nested polygons, as lifted column-stochastic matrices.

    Walks are started at every contact change point where the wrap
    criterion holds (within tol); duplicate polygons are merged by
    vertex-set distance.  Raises NotFinite when the wrap criterion holds
    with interior slack or on a whole constant piece: either way the
    solution set is a continuum, not a finite list.

    ``at_level_max`` enumerates the walks attaining the maximal wrap value
    instead (no continuum checks); useful on near-critical instances where
    the isolated-solution structure is only approached.
    """
    cands = contact_change_points(npp, k)
    grid = np.arange(193) / 193.0
    vals = {t: _fk_value(npp, t, k) - t - 1.0 for t in cands}
    max_grid = max((_fk_value(npp, float(t), k) - t - 1.0) for t in grid)
    max_val = max(max(vals.values(), default=-np.inf), max_grid)

    if at_level_max:
        if max_val < -tol:
            return []
        touching = [t for t in cands if vals[t] >= max_val - tol]
    else:
        if max_val < -tol:
            return []
        if max_val > 3e-7:
            raise NotFinite("wrap criterion holds with interior slack: "
                            "a continuum of nested polygons exists")
        touching = [t for t in cands if vals[t] >= -tol]
        # A full constant piece on the wrap line is also a continuum.  Gaps
        # at the scale of the walk's noise band are not evidence of one.
        extended = sorted(touching)
        for a, b in zip(extended, extended[1:] + [extended[0] + 1.0]):
            if b - a <= 3e-7:
                continue
            mid = 0.5 * (a + b) % 1.0
            if _fk_value(npp, mid, k) - mid - 1.0 >= -tol:
                raise NotFinite("wrap criterion holds on a continuum of starts")

    solutions = []
    for t in touching:
        walk = walk_fk(npp, t, k)
        verts2d = walk.points[:k]
        lifted = npp.lift_points(verts2d)
        is_dup = False
        for other in solutions:
            dmat = np.linalg.norm(lifted[:, :, None] - other[:, None, :], axis=0)
            hausdorff = max(dmat.min(axis=0).max(), dmat.min(axis=1).max())
            if hausdorff <= dedup_tol:
                is_dup = True
                break
        if not is_dup:
            solutions.append(lifted)
    return solutions


def hull_membership(x, X, tol=1e-7):
    """Is the stochastic vector x in the convex hull of the columns of X?

    Solves the feasibility problem { X lam = x, lam >= 0, sum lam = 1 } as a
    nonnegative least squares fit and accepts when the residual is at most
    tol.  Works in any dimension (not only the rank-3 chart).
    """
    X = as_matrix(X, "X")
    x = np.asarray(x, dtype=float).ravel()
    if x.size != X.shape[0]:
        raise ValueError("x and X have incompatible shapes")
    A = np.vstack([X, np.ones((1, X.shape[1]))])
    b = np.concatenate([x, [1.0]])
    fit = scipy.optimize.lsq_linear(A, b, bounds=(0.0, np.inf), method="bvls")
    resid = np.linalg.norm(A @ np.maximum(fit.x, 0.0) - b)
    return bool(resid <= tol)


def rotated_chart(npp, angle):
    """Equivalent instance with the 2-d chart rotated by ``angle`` radians.

    Feasibility verdicts and solution counts must not depend on the chart
    orientation; tests use this to check it.
    """
    c, s = math.cos(angle), math.sin(angle)
    R = np.array([[c, -s], [s, c]])
    outer = Polygon2(npp.outer.vertices @ R.T)
    inner = Polygon2(npp.inner.vertices @ R.T)
    chart = Chart(origin=npp.chart.origin, basis=npp.chart.basis @ R.T,
                  scale=npp.chart.scale)
    return NppInstance(outer=outer, inner=inner, chart=chart,
                       vertex_columns=dict(npp.vertex_columns))
