"""Z-buffered triangle rasterization into person label masks.

Coverage is tested at pixel centers ``(x + 0.5, y + 0.5)`` with a top-left
fill rule; depth is interpolated perspective-correctly in float64. Each mesh
is rendered into its own depth buffer, so per-person unoccluded masks and the
composited label image come out of one pass. Triangles with any vertex at or
behind the near plane are skipped.
"""

from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .camera import Camera

NEAR = 1e-3


@dataclass
class MaskImage:
    labels: np.ndarray        # (H, W) int, 0 background, k>0 person id
    person_ids: list
    unoccluded: dict          # person id -> (H, W) bool

    def visible(self, person_id):
        return self.labels == person_id


@numba.njit(cache=True)
def _raster_depth(px, py, pz, faces, width, height):
    depth = np.full((height, width), np.inf)
    for f in range(faces.shape[0]):
        i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
        if pz[i0] <= NEAR or pz[i1] <= NEAR or pz[i2] <= NEAR:
            continue
        x0, y0, x1, y1, x2, y2 = px[i0], py[i0], px[i1], py[i1], px[i2], py[i2]
        z0, z1, z2 = pz[i0], pz[i1], pz[i2]
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area == 0.0:
            continue
        if area < 0.0:
            x1, y1, z1, x2, y2, z2 = x2, y2, z2, x1, y1, z1
            area = -area
        xmin = max(int(np.floor(min(x0, x1, x2) - 0.5)), 0)
        xmax = min(int(np.ceil(max(x0, x1, x2) - 0.5)), width - 1)
        ymin = max(int(np.floor(min(y0, y1, y2) - 0.5)), 0)
        ymax = min(int(np.ceil(max(y0, y1, y2) - 0.5)), height - 1)
        # top edge: horizontal with dx > 0; left edge: dy < 0 (this winding)
        tl0 = (y1 == y0 and x1 > x0) or (y1 < y0)
        tl1 = (y2 == y1 and x2 > x1) or (y2 < y1)
        tl2 = (y0 == y2 and x0 > x2) or (y0 < y2)
        for y in range(ymin, ymax + 1):
            cy = y + 0.5
            for x in range(xmin, xmax + 1):
                cx = x + 0.5
                w2 = (x1 - x0) * (cy - y0) - (y1 - y0) * (cx - x0)
                w0 = (x2 - x1) * (cy - y1) - (y2 - y1) * (cx - x1)
                w1 = (x0 - x2) * (cy - y2) - (y0 - y2) * (cx - x2)
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                if (w2 == 0.0 and not tl0) or (w0 == 0.0 and not tl1) or (w1 == 0.0 and not tl2):
                    continue
                b0, b1, b2 = w0 / area, w1 / area, w2 / area
                z = 1.0 / (b0 / z0 + b1 / z1 + b2 / z2)
                if z < depth[y, x]:
                    depth[y, x] = z
    return depth


def depth_buffer(camera: Camera, positions, faces):
    pc = camera.to_camera(positions)
    z = pc[:, 2]
    safe = np.where(z > NEAR, z, 1.0)
    px = camera.focal * pc[:, 0] / safe + camera.principal[0]
    py = camera.focal * pc[:, 1] / safe + camera.principal[1]
    return _raster_depth(px, py, z, np.ascontiguousarray(faces, dtype=np.int64),
                         camera.width, camera.height)


def rasterize(meshes, person_ids, camera: Camera, occluders=()):
    """Render ``meshes`` (list of (positions, faces)) labelled by
    ``person_ids`` (positive ints). ``occluders`` hide persons but carry no
    label. Depth ties go to the earlier mesh in the list."""
    ids = [int(i) for i in person_ids]
    if any(i <= 0 for i in ids) or len(set(ids)) != len(ids):
        raise ValueError('person ids must be unique positive integers')
    H, W = camera.height, camera.width
    buffers = [depth_buffer(camera, p, f) for p, f in meshes]
    occ = [depth_buffer(camera, p, f) for p, f in occluders]
    labels = np.zeros((H, W), dtype=np.int32)
    if buffers:
        stack = np.stack(buffers)
        nearest = stack.argmin(0)
        best = np.take_along_axis(stack, nearest[None], 0)[0]
        if occ:
            best_occ = np.stack(occ).min(0)
            hidden = best_occ < best
        else:
            hidden = np.zeros((H, W), dtype=bool)
        covered = np.isfinite(best) & ~hidden
        labels[covered] = np.asarray(ids, dtype=np.int32)[nearest[covered]]
    unoccluded = {i: np.isfinite(b) for i, b in zip(ids, buffers)}
    return MaskImage(labels, ids, unoccluded)


def write_pgm(path, image):
    """Binary 16-bit portable graymap; pixel value = label."""
    image = np.asarray(image)
    if image.min() < 0 or image.max() > 65535:
        raise ValueError('labels must fit in 16 bits')
    h, w = image.shape
    with open(path, 'wb') as fh:
        fh.write(b'P5\n%d %d\n65535\n' % (w, h))
        fh.write(image.astype('>u2').tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b'#':
            pos = data.index(b'\n', pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    pos += 1
    if tokens[0] != b'P5':
        raise ValueError(f'{path}: not a binary PGM')
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = '>u2' if maxval > 255 else 'u1'
    return np.frombuffer(data[pos:], dtype=dtype, count=w * h).reshape(h, w).astype(np.int32)
