"""Half-space polytopes, vertex lists and support functions."""

import itertools

import numpy as np

from .errors import DimensionTooLarge, Infeasible, Unbounded
from .lp import INFEASIBLE, OPTIMAL, UNBOUNDED, LpProblem, solve_lp
from .tolerances import BOX_VERTEX_DIM_CAP, SUPPORT_MATCH_TOL, VERTEX_TOL


class Polytope:
    """Set {x | H x <= h} in halfspace representation.

    With ``compact=True`` boundedness is verified on construction by
    checking that the support value is finite along every +/- coordinate
    direction.
    """

    def __init__(self, H, h, compact=False):
        self.H = np.atleast_2d(np.asarray(H, dtype=float))
        self.h = np.atleast_1d(np.asarray(h, dtype=float))
        if self.H.ndim != 2 or self.h.ndim != 1 or self.H.shape[0] != self.h.size:
            raise ValueError("H and h have inconsistent shapes")
        if self.H.shape[0] < 1 or self.H.shape[1] < 1:
            raise ValueError("polytope needs at least one row and one column")
        row_norms = np.abs(self.H).sum(axis=1)
        if np.any(row_norms == 0.0):
            raise ValueError("H contains an all-zero row")
        if compact:
            self.assert_compact()

    @property
    def dim(self):
        return self.H.shape[1]

    @property
    def n_rows(self):
        return self.H.shape[0]

    @classmethod
    def from_box(cls, lo, hi, compact=True):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.size != hi.size or np.any(lo > hi):
            raise ValueError("invalid box bounds")
        d = lo.size
        eye = np.eye(d)
        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]), compact=compact)

    def contains(self, x, tol=VERTEX_TOL):
        return bool(np.all(self.H @ np.asarray(x, dtype=float) <= self.h + tol))

    def assert_compact(self):
        for i in range(self.dim):
            e = np.zeros(self.dim)
            for s in (1.0, -1.0):
                e[i] = s
                support_value(self, e)
            e[i] = 0.0

    def interval_hull(self):
        """Axis-aligned bounding box as (lo, hi), each length dim."""
        lo = np.empty(self.dim)
        hi = np.empty(self.dim)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = 1.0
            hi[i] = support_value(self, e)
            lo[i] = -support_value(self, -e)
        return lo, hi

    def __repr__(self):
        return f"Polytope(rows={self.n_rows}, dim={self.dim})"


class VertexSet:
    """Explicit vertex list companion to a Polytope."""

    def __init__(self, vertices):
        self.vertices = np.atleast_2d(np.asarray(vertices, dtype=float))
        if self.vertices.shape[0] < 1:
            raise ValueError("vertex set is empty")

    @property
    def dim(self):
        return self.vertices.shape[1]

    def __len__(self):
        return self.vertices.shape[0]

    def max_over(self, c):
        """max_j c @ v_j over the listed vertices."""
        return float(np.max(self.vertices @ np.asarray(c, dtype=float)))

    def validate_against(self, poly, tol=VERTEX_TOL, support_tol=SUPPORT_MATCH_TOL,
                         n_random_dirs=50):
        """Check vertex membership and support consistency against ``poly``.

        Every vertex must satisfy H v <= h + tol, and the polytope support
        value must match the vertex maximum both in each vertex's outward
        direction (relative to the centroid) and in a seeded batch of
        random directions, which catches missing vertices. Raises
        ValueError on failure.
        """
        slack = self.vertices @ poly.H.T - poly.h
        worst = float(slack.max())
        if worst > tol:
            raise ValueError(f"vertex outside polytope by {worst:.2e}")
        centroid = self.vertices.mean(axis=0)
        directions = [v - centroid for v in self.vertices]
        rng = np.random.default_rng(0)
        directions.extend(rng.normal(size=(n_random_dirs, self.dim)))
        for c in directions:
            if np.linalg.norm(c) < 1e-14:
                continue
            sv = support_value(poly, c)
            if abs(sv - self.max_over(c)) > support_tol * (1.0 + abs(sv)):
                raise ValueError("support value disagrees with vertex maximum")


def support_value(poly, c):
    """max_{x in poly} c @ x solved as a linear program."""
    c = np.asarray(c, dtype=float)
    result = solve_lp(LpProblem(c=-c, a_ub=poly.H, b_ub=poly.h))
    if result.status == UNBOUNDED:
        raise Unbounded("support direction is unbounded")
    if result.status == INFEASIBLE:
        raise Infeasible("polytope is empty")
    if result.status != OPTIMAL:
        raise Unbounded(f"unexpected LP status {result.status}")
    return -result.objective


def box_vertices(lo, hi):
    """All 2^d corners of the box [lo, hi], coordinate 0 varying fastest."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if lo.size != hi.size or np.any(lo > hi):
        raise ValueError("invalid box bounds")
    d = lo.size
    if d > BOX_VERTEX_DIM_CAP:
        raise DimensionTooLarge(f"box vertex enumeration capped at dim {BOX_VERTEX_DIM_CAP}")
    verts = np.empty((2**d, d))
    for idx in range(2**d):
        for i in range(d):
            verts[idx, i] = hi[i] if (idx >> i) & 1 else lo[i]
    return VertexSet(verts)


def polygon_vertices_2d(poly, tol=1e-9):
    """Vertices of a bounded 2-D polytope, ordered counterclockwise.

    Enumerates intersections of facet pairs and keeps the feasible ones.
    Only used for the small tube cross-sections, so the quadratic pair
    scan is fine.
    """
    if poly.dim != 2:
        raise ValueError("polygon_vertices_2d needs a 2-D polytope")
    points = []
    r = poly.n_rows
    for i, j in itertools.combinations(range(r), 2):
        mat = np.vstack([poly.H[i], poly.H[j]])
        if abs(np.linalg.det(mat)) < 1e-12:
            continue
        p = np.linalg.solve(mat, np.array([poly.h[i], poly.h[j]]))
        if poly.contains(p, tol=tol):
            points.append(p)
    if not points:
        raise ValueError("polytope has no vertices (empty or unbounded)")
    unique = []
    for p in points:
        if not any(np.linalg.norm(p - q) < 1e-9 for q in unique):
            unique.append(p)
    pts = np.array(unique)
    center = pts.mean(axis=0)
    order = np.argsort(np.arctan2(pts[:, 1] - center[1], pts[:, 0] - center[0]))
    return VertexSet(pts[order])
