"""Ground-truth corpus loading and the prediction submission format.

Submission: a directory with one text file per scene, ``<scene_id>.txt``::

    # comments and blank lines are ignored
    units mm                      # or m; applies to every coordinate below
    camera <f> <cx> <cy> <W> <H>  # predictor intrinsics, pixels
    person <id> <n_joints> <n_vertices>
    <x> <y> <z>                   # n_joints lines, camera frame
    <x> <y> <z>                   # n_vertices lines (n_vertices may be 0)
    person ...

``units`` and ``camera`` must precede the first person. Joints follow the
keypoint layout (22 body joints, optionally followed by 15 + 15 hand joints
and the face landmarks).
"""

import json
import logging
from pathlib import Path

import numpy as np

from ..bodymodel import BodyParams, forward, keypoints, load_model
from ..geom import Camera, MaskImage, read_pgm
from .types import ContractError, PersonTruth, PredPerson, SceneTruth, ScenePrediction

log = logging.getLogger(__name__)

UNITS = {'m': 1.0, 'mm': 1e-3}
GT_TOLERANCE = 1e-6


class SubmissionError(ContractError):
    pass


# --- ground truth ------------------------------------------------------------

def load_scene(model, directory):
    """Read one scene directory. Joints and vertices are regenerated from the
    stored parameters; stored joints that disagree by more than 1e-6 m are
    overridden and the disagreement is logged."""
    d = Path(directory)
    camera = Camera.load(d / 'camera.json')
    doc = json.loads((d / 'persons.json').read_text())
    persons = []
    for p in doc['persons']:
        params = BodyParams.from_dict(p['params'])
        posed = forward(model, params)
        kp = keypoints(model, posed)
        stored = p.get('joints_m')
        if stored is not None:
            stored = np.asarray(stored, dtype=np.float64)
            if stored.shape != kp.shape or np.abs(stored - kp).max() > GT_TOLERANCE:
                log.warning('%s person %s: stored joints disagree with the parameters; regenerated',
                            d.name, p['person_id'])
        persons.append(PersonTruth(int(p['person_id']), params, kp, posed.vertices,
                                   bool(p.get('is_child', params.alpha < 1.0)), p.get('flag', 'BFH')))
    masks = None
    full = d / 'mask_full.pgm'
    if full.exists():
        labels = read_pgm(full)
        unocc = {}
        for p in persons:
            f = d / f'mask_person_{p.person_id}.pgm'
            if f.exists():
                unocc[p.person_id] = read_pgm(f) > 0
        masks = MaskImage(labels, [p.person_id for p in persons], unocc)
    return SceneTruth(doc.get('scene_id', d.name), camera, persons, masks)


def load_corpus(root):
    """(model, [SceneTruth]) from a generated corpus directory."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f'corpus directory not found: {root}')
    model = load_model(root / 'model.npz')
    scene_root = root / 'scenes'
    dirs = sorted(p for p in scene_root.iterdir() if p.is_dir()) if scene_root.is_dir() else []
    return model, [load_scene(model, d) for d in dirs]


# --- submissions -------------------------------------------------------------

def _floats(tokens, n, where):
    if len(tokens) != n:
        raise SubmissionError(f'{where}: expected {n} numbers, got {len(tokens)}')
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise SubmissionError(f'{where}: non-numeric value in {" ".join(tokens)!r}') from None
    if not np.isfinite(vals).all():
        raise SubmissionError(f'{where}: non-finite value')
    return vals


def parse_submission(text, scene_id, source='<submission>'):
    lines = text.splitlines()
    scale = None
    camera = None
    persons = []
    i = 0

    def where(k):
        return f'{source}:{k + 1}'

    def next_data(k):
        while k < len(lines):
            s = lines[k].split('#', 1)[0].split()
            if s:
                return k, s
            k += 1
        return k, None

    while True:
        i, tok = next_data(i)
        if tok is None:
            break
        head = tok[0]
        if head == 'units':
            if len(tok) != 2 or tok[1] not in UNITS:
                raise SubmissionError(f'{where(i)}: units must be one of {sorted(UNITS)}')
            scale = UNITS[tok[1]]
            i += 1
        elif head == 'camera':
            f, cx, cy, w, h = _floats(tok[1:], 5, where(i))
            try:
                camera = Camera(f, (cx, cy), int(w), int(h))
            except ValueError as exc:
                raise SubmissionError(f'{where(i)}: {exc}') from None
            i += 1
        elif head == 'person':
            if scale is None or camera is None:
                raise SubmissionError(f'{where(i)}: units and camera must precede persons')
            if len(tok) != 4:
                raise SubmissionError(f'{where(i)}: expected "person <id> <n_joints> <n_vertices>"')
            try:
                pid, nj, nv = int(tok[1]), int(tok[2]), int(tok[3])
            except ValueError:
                raise SubmissionError(f'{where(i)}: person header needs integers') from None
            if nj < 1 or nv < 0:
                raise SubmissionError(f'{where(i)}: invalid joint/vertex counts')
            if any(p.pred_id == pid for p in persons):
                raise SubmissionError(f'{where(i)}: duplicate person id {pid}')
            rows = []
            k = i + 1
            for _ in range(nj + nv):
                k, t = next_data(k)
                if t is None:
                    raise SubmissionError(f'{where(k - 1)}: person {pid} ends early')
                rows.append(_floats(t, 3, where(k)))
                k += 1
            arr = np.array(rows, dtype=np.float64).reshape(-1, 3) * scale
            persons.append(PredPerson(pid, arr[:nj], arr[nj:] if nv else None))
            i = k
        else:
            raise SubmissionError(f'{where(i)}: unknown record {head!r}')
    if camera is None:
        raise SubmissionError(f'{source}: missing camera record')
    return ScenePrediction(scene_id, camera, persons)


def read_submission(directory):
    """dict scene id -> ScenePrediction from a submission directory."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f'submission directory not found: {d}')
    out = {}
    for f in sorted(d.glob('*.txt')):
        out[f.stem] = parse_submission(f.read_text(), f.stem, str(f))
    return out


def format_submission(pred: ScenePrediction, units='mm'):
    s = 1.0 / UNITS[units]
    c = pred.camera
    lines = [f'units {units}',
             'camera %.17g %.17g %.17g %d %d' % (c.focal, c.principal[0], c.principal[1], c.width, c.height)]
    for p in sorted(pred.persons, key=lambda p: p.pred_id):
        nv = 0 if p.vertices is None else len(p.vertices)
        lines.append(f'person {p.pred_id} {len(p.joints)} {nv}')
        rows = p.joints if p.vertices is None else np.concatenate([p.joints, p.vertices])
        lines += ['%.17g %.17g %.17g' % tuple(r * s) for r in rows]
    return '\n'.join(lines) + '\n'


def write_submission(predictions, directory, units='mm'):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for sid in sorted(predictions):
        (d / f'{sid}.txt').write_text(format_submission(predictions[sid], units))
