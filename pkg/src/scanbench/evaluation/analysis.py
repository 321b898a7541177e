"""Per-person covariates (occlusion, distance from the image center, yaw)
and binned error tables."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from ..geom import Camera, project
from .types import ContractError

OCCLUSION_EDGES = np.linspace(0.0, 100.0, 11)
YAW_EDGES = np.linspace(0.0, 180.0, 13)
N_CENTER_BINS = 8
BINNINGS = ('occlusion', 'center', 'yaw')


def occlusion_percent(full_labels, unoccluded, person_id):
    """Share of the person's unoccluded silhouette hidden in the composited
    label image, in percent; None when the unoccluded silhouette is empty."""
    full_labels = np.asarray(full_labels)
    unoccluded = np.asarray(unoccluded, dtype=bool)
    if full_labels.shape != unoccluded.shape:
        raise ContractError(f'mask shapes differ: {full_labels.shape} vs {unoccluded.shape}')
    total = int(unoccluded.sum())
    if total == 0:
        return None
    visible = int((full_labels == person_id).sum())
    return 100.0 * (1.0 - visible / total)


def center_distance(camera: Camera, pelvis):
    """Horizontal pixel distance of the projected pelvis from the image
    center; None when the pelvis is behind the camera."""
    uv, valid = project(camera, np.asarray(pelvis, dtype=np.float64)[None])
    if not valid[0]:
        return None
    return float(abs(uv[0, 0] - camera.width / 2.0))


def yaw_degrees(camera: Camera, global_orient_rotvec, pelvis, forward=(0.0, 0.0, 1.0)):
    """Angle in [0, 180] between the body's facing direction and the
    direction from the pelvis to the camera, both projected onto the camera's
    horizontal (x-z) plane. 0 means facing the camera."""
    f = camera.R @ Rotation.from_rotvec(global_orient_rotvec).apply(np.asarray(forward, dtype=np.float64))
    to_cam = -camera.to_camera(np.asarray(pelvis, dtype=np.float64))
    a = np.array([f[0], f[2]])
    b = np.array([to_cam[0], to_cam[2]])
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        return None
    c = np.clip(a @ b / (na * nb), -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))


def center_edges(width):
    return np.linspace(0.0, width / 2.0, N_CENTER_BINS + 1)


@dataclass
class BinRow:
    lo: float
    hi: float
    count: int
    matched: int
    miss_rate: float = None
    mean_mpjpe: float = None
    recall_nmje: float = None

    def to_dict(self):
        return dict(self.__dict__)


def bin_index(value, edges):
    """Bins are half-open [lo, hi) except the last, which is closed. Values
    outside [edges[0], edges[-1]] get -1."""
    if value is None or not np.isfinite(value) or value < edges[0] or value > edges[-1]:
        return -1
    return int(min(np.searchsorted(edges, value, side='right') - 1, len(edges) - 2))


def binned_analysis(records, key, edges):
    """Table over ``edges`` of person records (dicts with ``key``,
    ``matched`` and ``b_mpjpe``). Per bin: count, matched count, miss rate,
    mean B-MPJPE over matched records and recall-NMJE = mean / recall.
    Statistics of empty bins (or bins without matches) are None."""
    edges = np.asarray(edges, dtype=np.float64)
    rows = [BinRow(float(edges[i]), float(edges[i + 1]), 0, 0) for i in range(len(edges) - 1)]
    errs = [[] for _ in rows]
    for r in records:
        k = bin_index(r.get(key), edges)
        if k < 0:
            continue
        rows[k].count += 1
        if r['matched']:
            rows[k].matched += 1
            errs[k].append(r['b_mpjpe'])
    for row, e in zip(rows, errs):
        if row.count == 0:
            continue
        recall = row.matched / row.count
        row.miss_rate = 1.0 - recall
        if e:
            row.mean_mpjpe = float(np.mean(e))
            row.recall_nmje = row.mean_mpjpe / recall
    return rows
