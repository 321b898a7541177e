from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    pass


@dataclass(eq=False)
class TriMesh:
    positions: np.ndarray   # (N, 3) meters
    faces: np.ndarray       # (F, 3)

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(faces) and (faces.min() < 0 or faces.max() >= len(self.positions)):
            raise MeshError('face index out of range')
        p = self.positions[faces]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        norm = np.sqrt(np.einsum('ij,ij->i', n, n))
        ok = norm > 0
        self.faces = faces[ok]
        # face normals come for free from the degeneracy test
        self.__dict__['face_normals'] = n[ok] / norm[ok, None]

    def __len__(self):
        return len(self.faces)

    @cached_property
    def face_normals(self):
        n = np.cross(*self._edges())
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def _edges(self):
        p = self.positions[self.faces]
        return p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]

    @cached_property
    def vertex_normals(self):
        """Angle-weighted pseudo-normals."""
        p = self.positions[self.faces]
        normals = np.zeros_like(self.positions)
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            cosang = np.einsum('ij,ij->i', a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            ang = np.arccos(np.clip(cosang, -1.0, 1.0))
            np.add.at(normals, self.faces[:, k], ang[:, None] * self.face_normals)
        norm = np.linalg.norm(normals, axis=1, keepdims=True)
        return normals / np.where(norm > 0, norm, 1.0)

    @cached_property
    def edge_normals(self):
        """(F, 3, 3) pseudo-normal of edge k of each face, edge k joining
        corners k and k+1; the normalized sum of the adjacent face normals."""
        F = len(self.faces)
        a = self.faces
        b = np.roll(self.faces, -1, axis=1)
        key = (np.minimum(a, b).astype(np.int64) * len(self.positions) + np.maximum(a, b)).reshape(-1)
        uniq, inverse = np.unique(key, return_inverse=True)
        per_edge = np.repeat(self.face_normals, 3, axis=0)
        group_sum = np.zeros((len(uniq), 3))
        np.add.at(group_sum, inverse, per_edge)
        acc = group_sum[inverse]
        norm = np.linalg.norm(acc, axis=1, keepdims=True)
        acc = np.where(norm > 1e-12, acc / np.where(norm > 0, norm, 1.0), per_edge)
        return acc.reshape(F, 3, 3)

    def pseudo_normals(self, tri, region):
        """Pseudo-normal at closest points given the triangle id and the
        Voronoi region code returned by the BVH query (0 face, 1..3 vertex a/b/c,
        4..6 edge ab/bc/ca)."""
        tri = np.asarray(tri)
        region = np.asarray(region)
        out = self.face_normals[tri].copy()
        for k in range(3):
            # vertex and edge normals are built only when some point needs them
            sel = region == 1 + k
            if sel.any():
                out[sel] = self.vertex_normals[self.faces[tri[sel], k]]
            sel = region == 4 + k
            if sel.any():
                out[sel] = self.edge_normals[tri[sel], k]
        return out


def triangle_areas(positions, faces):
    p = positions[faces]
    return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)


def write_obj(path, positions, faces):
    """ASCII Wavefront OBJ, 1-based face indices."""
    lines = ['v %.17g %.17g %.17g' % tuple(p) for p in positions]
    lines += ['f %d %d %d' % tuple(f + 1) for f in faces]
    Path(path).write_text('\n'.join(lines) + '\n')


def read_obj(path):
    verts, faces = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith('#'):
            continue
        try:
            if parts[0] == 'v':
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == 'f':
                idx = [int(x.split('/')[0]) - 1 for x in parts[1:]]
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
        except (ValueError, IndexError) as exc:
            raise MeshError(f'{path}:{lineno}: malformed line {line!r}') from exc
    if not verts:
        raise MeshError(f'{path}: no vertices')
    return TriMesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3))


def box_mesh(center, size):
    """Closed axis-aligned box with outward-facing triangles."""
    c = np.asarray(center, dtype=np.float64)
    h = np.asarray(size, dtype=np.float64) / 2
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64)
    faces = np.array([[0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
                      [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3]])
    return c + corners * h, faces
