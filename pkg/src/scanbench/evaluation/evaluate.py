"""Corpus-level evaluation: matching, per-part errors of matched persons,
detection scores, normalized errors and binned analyses."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .analysis import (BINNINGS, OCCLUSION_EDGES, YAW_EDGES, binned_analysis, center_distance,
                       center_edges, occlusion_percent, yaw_degrees)
from .matching import DEFAULT_TAU, match
from .metrics import PARTS, PartLayout, fb_error, normalized_errors, part_mpjpe, part_mve, scores_from_counts
from .types import BFH, ContractError, ScenePrediction

log = logging.getLogger(__name__)


@dataclass
class EvalReport:
    tau: float
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    mpjpe: dict                  # part (B, LH, RH, F, FB) -> mm or None
    mve: dict
    nmje: dict                   # 'B', 'FB' -> mm or None
    nmve: dict
    bins: dict = field(default_factory=dict)       # binning name -> [BinRow]
    records: list = field(default_factory=list)    # one dict per ground-truth person
    outcomes: dict = field(default_factory=dict)   # scene id -> MatchOutcome

    def summary(self):
        return {
            'tau': self.tau,
            'detection': {'tp': self.tp, 'fp': self.fp, 'fn': self.fn, 'precision': self.precision,
                          'recall': self.recall, 'f1': self.f1},
            'mpjpe_mm': self.mpjpe, 'mve_mm': self.mve,
            'nmje_mm': self.nmje, 'nmve_mm': self.nmve,
            'bins': {k: [r.to_dict() for r in rows] for k, rows in self.bins.items()},
        }


def _mean(xs):
    return float(np.mean(xs)) if xs else None


def person_errors(gt_kp, gt_v, pred, flag, layout: PartLayout):
    """Per-part errors (mm) of one matched pair in the camera frame, keyed
    'b', 'lh', 'rh', 'f' and '<part>_mve'. Hands and face are scored only for
    BFH persons and predictions that carry the full keypoint layout; vertex
    errors only when the prediction has vertices."""
    nb = len(layout.joints['B'])
    body = PartLayout({'B': layout.joints['B']}, {'B': layout.anchors['B']}, layout.vertices, nb)
    full = pred.joints.shape[0] == layout.n_keypoints
    kp = layout if full else body
    pj, gj = pred.joints[:kp.n_keypoints], gt_kp[:kp.n_keypoints]
    has_v = (pred.vertices is not None and gt_v is not None and pred.vertices.shape == gt_v.shape
             and bool(layout.vertices))
    out = {'b': part_mpjpe(pj, gj, 'B', kp)}
    if has_v:
        out['b_mve'] = part_mve(pred.vertices, gt_v, 'B', kp, pj, gj)
    if flag == BFH and full:
        for part in ('LH', 'RH', 'F'):
            out[part.lower()] = part_mpjpe(pj, gj, part, layout)
            if has_v:
                out[part.lower() + '_mve'] = part_mve(pred.vertices, gt_v, part, layout, pj, gj)
    return out


def evaluate(scenes, predictions, layout: PartLayout, tau=DEFAULT_TAU, parts=PARTS,
             binnings=BINNINGS):
    """Evaluate ``predictions`` (dict scene id -> ScenePrediction) against a
    list of SceneTruth. Scenes without predictions count all persons as
    misses."""
    known = {s.scene_id for s in scenes}
    extra = set(predictions) - known
    if extra:
        raise ContractError(f'predictions for unknown scenes: {sorted(extra)}')
    for p in parts:
        if p not in PARTS:
            raise ContractError(f'unknown part {p!r}')
    tp = fp = fn = 0
    records, outcomes = [], {}
    width = 1
    for scene in scenes:
        width = max(width, scene.camera.width)
        preds = predictions.get(scene.scene_id) or ScenePrediction(scene.scene_id, scene.camera, [])
        outcome = match(scene, preds, tau)
        outcomes[scene.scene_id] = outcome
        tp += outcome.tp
        fp += len(outcome.false_positives)
        fn += len(outcome.false_negatives)
        by_pred = {p.pred_id: p for p in preds.persons}
        pair_of = {g: (p, e) for p, g, e in outcome.pairs}
        cam = scene.camera
        for person in scene.persons:
            pelvis = person.joints[0]
            rec = {'scene_id': scene.scene_id, 'person_id': person.person_id, 'flag': person.flag,
                   'is_child': bool(person.is_child), 'matched': person.person_id in pair_of,
                   'pred_id': None, 'error_px': None,
                   'center': center_distance(cam, pelvis),
                   'yaw': yaw_degrees(cam, person.params.theta_b[0], pelvis),
                   'occlusion': None}
            if scene.masks is not None and person.person_id in scene.masks.unoccluded:
                rec['occlusion'] = occlusion_percent(scene.masks.labels,
                                                     scene.masks.unoccluded[person.person_id],
                                                     person.person_id)
            if rec['matched']:
                pid, e = pair_of[person.person_id]
                rec['pred_id'], rec['error_px'] = pid, e
                gt_v = cam.to_camera(person.vertices) if person.vertices is not None else None
                errs = person_errors(cam.to_camera(person.joints), gt_v, by_pred[pid], person.flag, layout)
                rec.update(errs)
                rec['b_mpjpe'] = rec.pop('b')
            records.append(rec)
    precision, recall, f1 = scores_from_counts(tp, fp, fn)
    matched = [r for r in records if r['matched']]
    mpjpe, mve = {}, {}
    mpjpe['B'] = _mean([r['b_mpjpe'] for r in matched])
    mve['B'] = _mean([r['b_mve'] for r in matched if 'b_mve' in r])
    full = [r for r in matched if 'lh' in r]
    for part in ('LH', 'RH', 'F'):
        key = part.lower()
        mpjpe[part] = _mean([r[key] for r in full])
        mve[part] = _mean([r[key + '_mve'] for r in full if key + '_mve' in r])
    mpjpe['FB'] = _fb([r['b_mpjpe'] for r in full], mpjpe)
    mve['FB'] = _fb([r['b_mve'] for r in full if 'b_mve' in r and 'lh_mve' in r], mve)
    keep = set(parts) | ({'FB'} if set(parts) == set(PARTS) else set())
    mpjpe = {k: v for k, v in mpjpe.items() if k in keep}
    mve = {k: v for k, v in mve.items() if k in keep}
    nmje, nmve = {}, {}
    for k in ('B', 'FB'):
        if k in mpjpe:
            nmje[k], nmve[k] = normalized_errors(mpjpe[k], mve.get(k), f1)
    edges = {'occlusion': OCCLUSION_EDGES, 'center': center_edges(width), 'yaw': YAW_EDGES}
    bins = {}
    for b in binnings:
        if b not in edges:
            raise ContractError(f'unknown binning {b!r}; expected one of {BINNINGS}')
        bins[b] = binned_analysis(records, b, edges[b])
    return EvalReport(tau, tp, fp, fn, precision, recall, f1, mpjpe, mve, nmje, nmve, bins,
                      records, outcomes)


def _fb(body_subset, table):
    if not body_subset or any(table.get(p) is None for p in ('LH', 'RH', 'F')):
        return None
    return fb_error(float(np.mean(body_subset)), table['LH'], table['RH'], table['F'])
