"""Per-part anchor-aligned errors, detection scores and F1-normalized errors.

Keypoint layout (see ``bodymodel.keypoints``): 22 body joints, 15 left hand,
15 right hand, then the face landmarks. Each part is aligned at its anchor
joint before averaging: pelvis for the body, the wrists for the hands, the
neck for the face. There is no Procrustes step.
"""

from dataclasses import dataclass

import numpy as np

from ..bodymodel import N_BODY_JOINTS, N_FACE_LANDMARKS, N_HAND_JOINTS, BodyModel
from .types import ContractError

PARTS = ('B', 'LH', 'RH', 'F')
PELVIS, NECK, LEFT_WRIST, RIGHT_WRIST = 0, 12, 20, 21
_PART_SETS = {'B': 'body', 'LH': 'left_hand', 'RH': 'right_hand', 'F': 'face'}


@dataclass(frozen=True)
class PartLayout:
    joints: dict        # part -> keypoint indices
    anchors: dict       # part -> keypoint index of the alignment joint
    vertices: dict      # part -> vertex indices (empty dict when unknown)
    n_keypoints: int

    @classmethod
    def default(cls, n_face=N_FACE_LANDMARKS):
        nb, nh = N_BODY_JOINTS, N_HAND_JOINTS
        joints = {'B': np.arange(nb), 'LH': np.arange(nb, nb + nh),
                  'RH': np.arange(nb + nh, nb + 2 * nh),
                  'F': np.arange(nb + 2 * nh, nb + 2 * nh + n_face)}
        anchors = {'B': PELVIS, 'LH': LEFT_WRIST, 'RH': RIGHT_WRIST, 'F': NECK}
        return cls(joints, anchors, {}, nb + 2 * nh + n_face)

    @classmethod
    def from_model(cls, model: BodyModel):
        base = cls.default(len(model.face_landmarks))
        verts = {k: np.asarray(model.part_sets[v]['vertices'], dtype=np.int64)
                 for k, v in _PART_SETS.items()}
        return cls(base.joints, base.anchors, verts, base.n_keypoints)


def _check(pred, gt, what):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ContractError(f'{what}: shapes {pred.shape} and {gt.shape} differ or are not (N, 3)')
    return pred, gt


def _part(part):
    if part not in PARTS:
        raise ContractError(f'unknown part {part!r}; expected one of {PARTS}')
    return part


def part_mpjpe(pred, gt, part, layout: PartLayout = None):
    """Mean joint error of ``part`` in mm for (K, 3) keypoint arrays in
    meters, after subtracting the part's anchor joint on each side."""
    layout = layout or PartLayout.default()
    pred, gt = _check(pred, gt, 'keypoints')
    if pred.shape[0] != layout.n_keypoints:
        raise ContractError(f'expected {layout.n_keypoints} keypoints, got {pred.shape[0]}')
    idx, a = layout.joints[_part(part)], layout.anchors[part]
    d = (pred[idx] - pred[a]) - (gt[idx] - gt[a])
    return float(1000.0 * np.linalg.norm(d, axis=1).mean())


def part_mve(pred_vertices, gt_vertices, part, layout: PartLayout, pred_joints, gt_joints):
    """Mean vertex error of ``part`` in mm, aligned at the same anchor joint
    as :func:`part_mpjpe` (anchors taken from the keypoint arrays)."""
    pv, gv = _check(pred_vertices, gt_vertices, 'vertices')
    pj, gj = _check(pred_joints, gt_joints, 'keypoints')
    if not layout.vertices:
        raise ContractError('layout has no vertex part sets')
    idx, a = layout.vertices[_part(part)], layout.anchors[part]
    if len(idx) and idx.max() >= len(pv):
        raise ContractError(f'vertex part {part} indexes beyond {len(pv)} vertices')
    d = (pv[idx] - pj[a]) - (gv[idx] - gj[a])
    return float(1000.0 * np.linalg.norm(d, axis=1).mean())


def fb_error(B, LH, RH, F):
    """Full-body error: body error plus a third of hands and face."""
    vals = np.array([B, LH, RH, F], dtype=np.float64)
    if not np.isfinite(vals).all():
        raise ContractError('full-body error needs four finite part errors')
    return float(B + (LH + RH + F) / 3.0)


def scores_from_counts(tp, fp, fn):
    if tp + fn == 0:
        raise ContractError('detection scores need at least one ground-truth person')
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def detection_scores(outcomes):
    """(precision, recall, F1) pooled over a list of MatchOutcome. Precision
    is 0 when there are no predictions at all."""
    tp = sum(o.tp for o in outcomes)
    fp = sum(len(o.false_positives) for o in outcomes)
    fn = sum(len(o.false_negatives) for o in outcomes)
    return scores_from_counts(tp, fp, fn)


def normalized_errors(mpjpe, mve, f1):
    """(NMJE, NMVE) = errors / F1. Entries are None (absent) when F1 is 0 or
    the error itself is absent."""
    if f1 is None or not 0.0 <= f1 <= 1.0:
        raise ContractError(f'F1 must lie in [0, 1], got {f1}')
    if f1 == 0.0:
        return None, None
    div = lambda e: None if e is None else e / f1
    return div(mpjpe), div(mve)
