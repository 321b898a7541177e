"""Bounding volume hierarchy over triangles and exact closest-point queries.

Region codes returned alongside each closest point identify the feature the
point lies on: 0 triangle interior, 1/2/3 vertex a/b/c, 4/5/6 edge ab/bc/ca.
"""

from dataclasses import dataclass

import numba
import numpy as np

from .mesh import MeshError, TriMesh

LEAF_SIZE = 4


@dataclass(eq=False)
class Bvh:
    node_min: np.ndarray     # (N, 3)
    node_max: np.ndarray     # (N, 3)
    left: np.ndarray         # (N,) child index, -1 for leaves
    right: np.ndarray
    start: np.ndarray        # leaf range into ``order``
    count: np.ndarray
    order: np.ndarray        # triangle ids, leaf-contiguous


@dataclass
class ClosestPoints:
    distance: np.ndarray     # (Q,)
    point: np.ndarray        # (Q, 3)
    triangle: np.ndarray     # (Q,)
    bary: np.ndarray         # (Q, 3)
    region: np.ndarray       # (Q,)


@numba.njit(cache=True)
def _build(tri_min, tri_max, centroid, leaf_size):
    n = tri_min.shape[0]
    cap = 2 * n + 1
    node_min = np.empty((cap, 3))
    node_max = np.empty((cap, 3))
    left = -np.ones(cap, dtype=np.int64)
    right = -np.ones(cap, dtype=np.int64)
    start = np.zeros(cap, dtype=np.int64)
    count = np.zeros(cap, dtype=np.int64)
    order = np.arange(n)
    stack = np.empty((cap, 3), dtype=np.int64)   # node, lo, hi
    stack[0, 0], stack[0, 1], stack[0, 2] = 0, 0, n
    sp = 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        node, lo, hi = stack[sp, 0], stack[sp, 1], stack[sp, 2]
        for k in range(3):
            node_min[node, k] = np.inf
            node_max[node, k] = -np.inf
        for i in range(lo, hi):
            t = order[i]
            for k in range(3):
                node_min[node, k] = min(node_min[node, k], tri_min[t, k])
                node_max[node, k] = max(node_max[node, k], tri_max[t, k])
        if hi - lo <= leaf_size:
            start[node], count[node] = lo, hi - lo
            continue
        cmin = np.full(3, np.inf)
        cmax = np.full(3, -np.inf)
        for i in range(lo, hi):
            for k in range(3):
                c = centroid[order[i], k]
                cmin[k] = min(cmin[k], c)
                cmax[k] = max(cmax[k], c)
        axis = np.argmax(cmax - cmin)
        keys = np.empty(hi - lo)
        for i in range(lo, hi):
            keys[i - lo] = centroid[order[i], axis]
        idx = np.argsort(keys, kind='mergesort')
        seg = order[lo:hi].copy()
        for i in range(hi - lo):
            order[lo + i] = seg[idx[i]]
        mid = (lo + hi) // 2
        l, r = n_nodes, n_nodes + 1
        n_nodes += 2
        left[node], right[node] = l, r
        stack[sp, 0], stack[sp, 1], stack[sp, 2] = l, lo, mid
        stack[sp + 1, 0], stack[sp + 1, 1], stack[sp + 1, 2] = r, mid, hi
        sp += 2
    return (node_min[:n_nodes], node_max[:n_nodes], left[:n_nodes], right[:n_nodes],
            start[:n_nodes], count[:n_nodes], order)


def build_bvh(mesh: TriMesh) -> Bvh:
    if len(mesh) == 0:
        raise MeshError('cannot build a BVH over an empty mesh')
    p = mesh.positions[mesh.faces]
    arrays = _build(p.min(1), p.max(1), p.mean(1), LEAF_SIZE)
    return Bvh(*arrays)


@numba.njit(cache=True)
def _refit(pos, faces, node_min, node_max, left, right, start, count, order):
    # children always carry larger indices than their parent
    for node in range(node_min.shape[0] - 1, -1, -1):
        if left[node] < 0:
            for k in range(3):
                node_min[node, k] = np.inf
                node_max[node, k] = -np.inf
            for i in range(start[node], start[node] + count[node]):
                t = order[i]
                for c in range(3):
                    v = faces[t, c]
                    for k in range(3):
                        node_min[node, k] = min(node_min[node, k], pos[v, k])
                        node_max[node, k] = max(node_max[node, k], pos[v, k])
        else:
            l, r = left[node], right[node]
            for k in range(3):
                node_min[node, k] = min(node_min[l, k], node_min[r, k])
                node_max[node, k] = max(node_max[l, k], node_max[r, k])


def refit_bvh(bvh: Bvh, mesh: TriMesh) -> Bvh:
    """Same tree topology with boxes recomputed for moved vertices. Queries
    stay exact; only pruning gets looser as the mesh drifts from the
    configuration the tree was built for."""
    if len(bvh.order) != len(mesh.faces):
        raise MeshError('BVH was built for a different face count')
    node_min, node_max = np.empty_like(bvh.node_min), np.empty_like(bvh.node_max)
    _refit(mesh.positions, mesh.faces, node_min, node_max, bvh.left, bvh.right, bvh.start, bvh.count, bvh.order)
    return Bvh(node_min, node_max, bvh.left, bvh.right, bvh.start, bvh.count, bvh.order)


@numba.njit(cache=True, inline='always')
def _dot(a0, a1, a2, b0, b1, b2):
    return a0 * b0 + a1 * b1 + a2 * b2


@numba.njit(cache=True)
def closest_on_triangle(p, a, b, c):
    """Closest point on triangle abc to p. Returns (u, v, w, region) with the
    point equal to u*a + v*b + w*c."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = _dot(ab[0], ab[1], ab[2], ap[0], ap[1], ap[2])
    d2 = _dot(ac[0], ac[1], ac[2], ap[0], ap[1], ap[2])
    if d1 <= 0.0 and d2 <= 0.0:
        return 1.0, 0.0, 0.0, 1
    bp = p - b
    d3 = _dot(ab[0], ab[1], ab[2], bp[0], bp[1], bp[2])
    d4 = _dot(ac[0], ac[1], ac[2], bp[0], bp[1], bp[2])
    if d3 >= 0.0 and d4 <= d3:
        return 0.0, 1.0, 0.0, 2
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return 1.0 - v, v, 0.0, 4
    cp = p - c
    d5 = _dot(ab[0], ab[1], ab[2], cp[0], cp[1], cp[2])
    d6 = _dot(ac[0], ac[1], ac[2], cp[0], cp[1], cp[2])
    if d6 >= 0.0 and d5 <= d6:
        return 0.0, 0.0, 1.0, 3
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return 1.0 - w, 0.0, w, 6
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return 0.0, 1.0 - w, w, 5
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return 1.0 - v - w, v, w, 0


@numba.njit(cache=True, inline='always')
def _box_dist2(q, bmin, bmax):
    d2 = 0.0
    for k in range(3):
        if q[k] < bmin[k]:
            d2 += (bmin[k] - q[k]) ** 2
        elif q[k] > bmax[k]:
            d2 += (q[k] - bmax[k]) ** 2
    return d2


@numba.njit(cache=True)
def _query(queries, pos, faces, node_min, node_max, left, right, start, count, order):
    nq = queries.shape[0]
    dist = np.empty(nq)
    point = np.empty((nq, 3))
    tri = np.empty(nq, dtype=np.int64)
    bary = np.empty((nq, 3))
    region = np.empty(nq, dtype=np.int64)
    stack = np.empty(128, dtype=np.int64)
    for qi in range(nq):
        q = queries[qi]
        best = np.inf
        tri[qi] = faces.shape[0]
        stack[0] = 0
        sp = 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if _box_dist2(q, node_min[node], node_max[node]) > best:
                continue
            if left[node] < 0:
                for i in range(start[node], start[node] + count[node]):
                    t = order[i]
                    a = pos[faces[t, 0]]
                    b = pos[faces[t, 1]]
                    c = pos[faces[t, 2]]
                    u, v, w, reg = closest_on_triangle(q, a, b, c)
                    m0 = u * a[0] + v * b[0] + w * c[0]
                    m1 = u * a[1] + v * b[1] + w * c[1]
                    m2 = u * a[2] + v * b[2] + w * c[2]
                    d2 = (q[0] - m0) ** 2 + (q[1] - m1) ** 2 + (q[2] - m2) ** 2
                    if d2 < best or (d2 == best and t < tri[qi]):
                        best = d2
                        tri[qi] = t
                        point[qi, 0], point[qi, 1], point[qi, 2] = m0, m1, m2
                        bary[qi, 0], bary[qi, 1], bary[qi, 2] = u, v, w
                        region[qi] = reg
            else:
                l, r = left[node], right[node]
                dl = _box_dist2(q, node_min[l], node_max[l])
                dr = _box_dist2(q, node_min[r], node_max[r])
                # push the farther child first so the nearer one is visited next
                if dl < dr:
                    stack[sp], stack[sp + 1] = r, l
                else:
                    stack[sp], stack[sp + 1] = l, r
                sp += 2
        dist[qi] = np.sqrt(best)
    return dist, point, tri, bary, region


def closest_points(mesh: TriMesh, bvh: Bvh, queries) -> ClosestPoints:
    """Exact nearest surface point for each query (ties go to the lower
    triangle id)."""
    if len(mesh) == 0:
        raise MeshError('closest point query on an empty mesh')
    q = np.ascontiguousarray(np.asarray(queries, dtype=np.float64).reshape(-1, 3))
    out = _query(q, mesh.positions, mesh.faces, bvh.node_min, bvh.node_max, bvh.left,
                 bvh.right, bvh.start, bvh.count, bvh.order)
    return ClosestPoints(*out)


def closest_point(mesh: TriMesh, bvh: Bvh, q):
    """Single query: ``(distance, point, triangle id)``."""
    r = closest_points(mesh, bvh, np.asarray(q, dtype=np.float64)[None])
    return float(r.distance[0]), r.point[0], int(r.triangle[0])
