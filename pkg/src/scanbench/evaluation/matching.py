"""One-to-one assignment of predicted persons to ground-truth persons.

Both sides are projected to pixels using the body joints only (the subset
every predictor convention shares). A (prediction, truth) pair is admissible
when the IoU of their 2D keypoint boxes reaches ``tau``; among admissible
pairs the assignment first maximizes the number of matches and then
minimizes the summed mean 2D joint error.
"""

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..bodymodel import N_BODY_JOINTS
from ..geom import aabb_iou, project
from .types import ContractError, MatchOutcome, SceneTruth, ScenePrediction

DEFAULT_TAU = 0.1


def gt_pixels(scene: SceneTruth):
    return {p.person_id: project(scene.camera, p.joints[:N_BODY_JOINTS])[0] for p in scene.persons}


def pred_pixels(preds: ScenePrediction):
    return {p.pred_id: project(preds.camera, p.joints[:N_BODY_JOINTS])[0] for p in preds.persons}


def pair_stats(uv_pred, uv_gt):
    """(mean 2D joint error px, AABB IoU) over joints valid on both sides;
    (inf, 0) when they share no valid joint."""
    ok = np.isfinite(uv_pred).all(1) & np.isfinite(uv_gt).all(1)
    if not ok.any():
        return np.inf, 0.0
    err = float(np.linalg.norm(uv_pred[ok] - uv_gt[ok], axis=1).mean())
    return err, aabb_iou(uv_pred, uv_gt)


def cost_matrices(pred_uv: dict, gt_uv: dict):
    """Rows follow sorted prediction ids, columns sorted truth ids."""
    pids, gids = sorted(pred_uv), sorted(gt_uv)
    err = np.full((len(pids), len(gids)), np.inf)
    iou = np.zeros((len(pids), len(gids)))
    for i, p in enumerate(pids):
        for j, g in enumerate(gids):
            err[i, j], iou[i, j] = pair_stats(pred_uv[p], gt_uv[g])
    return pids, gids, err, iou


def assign(err, iou, tau):
    """Index pairs (row, col) of the optimal assignment over admissible
    entries (iou >= tau and finite error). Max cardinality first, then
    minimum total error."""
    admissible = (iou >= tau) & np.isfinite(err)
    if not admissible.any():
        return []
    # a penalty above any achievable admissible total makes one extra match
    # always worth more than any error reduction
    big = 1.0 + err[admissible].sum()
    cost = np.where(admissible, err, big)
    rows, cols = linear_sum_assignment(cost)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if admissible[r, c]]


def match(scene: SceneTruth, preds: ScenePrediction, tau=DEFAULT_TAU) -> MatchOutcome:
    if not 0.0 < tau < 1.0:
        raise ContractError(f'tau must lie in (0, 1), got {tau}')
    ids = [p.pred_id for p in preds.persons]
    if len(set(ids)) != len(ids):
        raise ContractError(f'{preds.scene_id}: duplicate prediction ids')
    for p in preds.persons:
        if p.joints.ndim != 2 or p.joints.shape[0] < N_BODY_JOINTS or p.joints.shape[1] != 3:
            raise ContractError(f'{preds.scene_id}: prediction {p.pred_id} needs at least '
                                f'{N_BODY_JOINTS} joints with 3 coordinates')
    pids, gids, err, iou = cost_matrices(pred_pixels(preds), gt_pixels(scene))
    pairs = [(pids[r], gids[c], float(err[r, c])) for r, c in assign(err, iou, tau)]
    matched_p = {p for p, _, _ in pairs}
    matched_g = {g for _, g, _ in pairs}
    return MatchOutcome(sorted(pairs, key=lambda t: t[1]),
                        [p for p in pids if p not in matched_p],
                        [g for g in gids if g not in matched_g])
