"""Cameras, triangle meshes, closest-point queries and mask rasterization."""

import numpy as np

from .boxes import aabb, aabb_iou, box_iou
from .bvh import Bvh, ClosestPoints, build_bvh, closest_point, closest_points, refit_bvh
from .camera import Camera, CameraError, look_at, project, project_t, unproject
from .mesh import MeshError, TriMesh, box_mesh, read_obj, write_obj
from .raster import MaskImage, rasterize, read_pgm, write_pgm

INSIDE, OUTSIDE = 'inside', 'outside'


def signed_side(q, m, n):
    """Classify query ``q`` against its nearest surface point ``m`` with
    pseudo-normal ``n``: inside iff <m - q, n> > 0 (ties are outside)."""
    n = np.asarray(n, dtype=np.float64)
    if not np.any(n):
        raise ValueError('zero normal')
    d = np.asarray(m, dtype=np.float64) - np.asarray(q, dtype=np.float64)
    return INSIDE if float(d @ n) > 0 else OUTSIDE


def inside_mask(q, m, n):
    """Vectorized :func:`signed_side`; True where inside."""
    return np.einsum('ij,ij->i', np.asarray(m) - np.asarray(q), np.asarray(n)) > 0


def surface_query(mesh: TriMesh, queries, bvh: Bvh = None):
    """Closest points plus inside flags for a batch of queries."""
    bvh = bvh if bvh is not None else build_bvh(mesh)
    cp = closest_points(mesh, bvh, queries)
    normals = mesh.pseudo_normals(cp.triangle, cp.region)
    return cp, inside_mask(queries, cp.point, normals)
