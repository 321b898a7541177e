"""Deterministic synthetic corpus: labelled scans with known parameters,
multi-person scenes with cameras and masks, and scripted prediction
degradation.

Randomness: every artifact draws from its own Philox-4x64 stream (numpy's
``Philox`` bit generator) keyed by ``SeedSequence([seed, stream, index])``,
so a fixed seed reproduces the corpus byte for byte and scenes can be
generated independently in any order.
"""

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .bodymodel import (N_BODY_JOINTS, BodyModel, BodyParams, forward, keypoints, save_model)
from .evaluation.types import B_ONLY, BFH, PersonTruth, PredPerson, SceneTruth, ScenePrediction
from .fitting.config import FitConfig, virtual_rig
from .fitting.fit import project_landmarks
from .fitting.scan import LabeledScan, save_scan
from .geom import Camera, TriMesh, box_mesh, look_at, project, rasterize, surface_query, write_pgm
from .geom.boxes import aabb, box_iou

log = logging.getLogger(__name__)

STREAM_SCAN, STREAM_SCENE, STREAM_DEGRADE, STREAM_IDENTITY = 1, 2, 3, 4
RNG_DOC = 'numpy Philox (4x64, 10 rounds) seeded by SeedSequence([seed, stream, index])'
PROBE_M = 0.001
FP_MAX_IOU = 0.05


def substream(seed, stream, index=0):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), stream, int(index)])))


@dataclass
class GenSpec:
    seed: int = 0
    model_seed: int = 0
    n_scenes: int = 1
    n_scans: int = 0
    scans_per_identity: int = 1
    persons_range: tuple = (5, 15)
    # parameter sampling
    pose_sigma: float = 0.25         # rad, per body joint component
    tilt_sigma: float = 0.05         # rad, global pitch/roll
    beta_sigma: float = 1.0
    psi_sigma: float = 1.0
    hand_sigma: float = 0.5
    child_prob: float = 0.15
    alpha_range: tuple = (0.0, 0.6)
    # scans
    clothed_prob: float = 1.0
    cloth_offset_mm: tuple = (2.0, 10.0)
    cloth_regions: tuple = ('torso', 'legs')
    hair: bool = True
    label_noise: float = 0.0
    detection_noise_px: float = 0.0
    # scenes
    focal_mm: tuple = (18.0, 28.0, 50.0)
    sensor_mm: float = 36.0
    image_size: tuple = (640, 360)
    depth_range: tuple = (4.0, 14.0)
    camera_height: float = 1.5
    overlap_threshold: float = 0.0
    b_only_prob: float = 0.3
    n_occluders: int = 0
    max_retries: int = 60

    def __post_init__(self):
        lo, hi = self.cloth_offset_mm
        if lo < 0 or hi < lo:
            raise ValueError('cloth offsets must satisfy 0 <= low <= high')
        a, b = self.persons_range
        if a < 1 or b < a:
            raise ValueError('persons_range must satisfy 1 <= low <= high')
        lo, hi = self.alpha_range
        if not 0 <= lo <= hi <= 1:
            raise ValueError('alpha_range must lie in [0, 1]')
        for k in ('child_prob', 'clothed_prob', 'b_only_prob', 'label_noise'):
            if not 0 <= getattr(self, k) <= 1:
                raise ValueError(f'{k} must lie in [0, 1]')
        if self.n_scenes < 0 or self.n_scans < 0 or self.scans_per_identity < 1:
            raise ValueError('counts must be nonnegative')

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k, v in d.items():
            if isinstance(v, list):
                d[k] = tuple(v)
        return cls(**d)


# --- parameters ----------------------------------------------------------------

def sample_shape(model: BodyModel, spec: GenSpec, rng, child=None, alpha=None):
    """Identity-level draws: (beta, alpha)."""
    beta = np.clip(rng.normal(0.0, spec.beta_sigma, model.n_beta), -2.5, 2.5)
    if child is None:
        child = rng.random() < spec.child_prob
    if alpha is None:
        alpha = rng.uniform(*spec.alpha_range) if child else 1.0
    return beta, float(alpha)


def sample_pose(model: BodyModel, spec: GenSpec, rng):
    """(theta_b, z_h, psi) with a uniformly random heading and anatomically
    feasible elbows and knees."""
    theta = np.clip(rng.normal(0.0, spec.pose_sigma, (N_BODY_JOINTS, 3)), -3 * spec.pose_sigma,
                    3 * spec.pose_sigma)
    yaw = rng.uniform(-np.pi, np.pi)
    tilt = rng.normal(0.0, spec.tilt_sigma, 2)
    R = Rotation.from_euler('y', yaw) * Rotation.from_rotvec([tilt[0], 0.0, tilt[1]])
    theta[0] = R.as_rotvec()
    for j, axis, sign in model.bend_joints:
        theta[j, axis] = -sign * abs(theta[j, axis])
    z_h = rng.normal(0.0, spec.hand_sigma, (2, 6))
    psi = rng.normal(0.0, spec.psi_sigma, model.n_psi)
    return theta, z_h, psi


def sample_params(model: BodyModel, spec: GenSpec, rng, child=None, alpha=None, identity=''):
    beta, alpha = sample_shape(model, spec, rng, child, alpha)
    theta, z_h, psi = sample_pose(model, spec, rng)
    return BodyParams(beta, theta, z_h, psi, alpha, np.zeros(3), identity)


# --- scans -------------------------------------------------------------------

def _exterior(mesh: TriMesh, positions, normals, offset):
    """Vertices a scanner would see: a probe just above ``positions + offset *
    normals`` lies outside the mesh with its own surface as the nearest one
    (capsule overlaps hide the rest), and displaced points are themselves
    outside the body."""
    probe = positions + (offset + PROBE_M)[:, None] * normals
    cp, inside = surface_query(mesh, probe)
    keep = ~inside & (cp.distance > 0.5 * (offset + PROBE_M))
    moved = offset > 0
    if moved.any():
        cp, inside = surface_query(mesh, positions[moved] + offset[moved, None] * normals[moved])
        keep[moved] &= ~inside & (cp.distance > 0.5 * offset[moved])
    return keep


def scan_from_posed(model: BodyModel, vertices, spec: GenSpec, rng, clothed):
    """Build a labelled scan from posed model vertices: keep the externally
    visible vertices, push clothed patches outward along the vertex normals
    and label skin / cloth / other."""
    mesh = TriMesh(vertices, model.faces)
    normals = mesh.vertex_normals
    n = len(vertices)
    offset = np.zeros(n)
    cloth = np.zeros(n, dtype=bool)
    if clothed:
        regions = [r for r in spec.cloth_regions if rng.random() < 0.75] or [spec.cloth_regions[0]]
        for r in spec.cloth_regions:
            o = rng.uniform(*spec.cloth_offset_mm) / 1000.0
            if r in regions:
                idx = np.asarray(model.part_sets[r]['vertices'], dtype=np.int64)
                cloth[idx] = True
                offset[idx] = o
    keep = _exterior(mesh, vertices, normals, offset)
    if not keep.any():
        raise ValueError('no externally visible vertices')
    other = np.zeros(n, dtype=bool)
    if spec.hair:
        other[np.asarray(model.part_sets['scalp']['vertices'], dtype=np.int64)] = True
        cloth &= ~other
        offset[other] = 0.0
    labels = np.where(other, 2, np.where(cloth, 1, 0))
    p = np.eye(3)[labels]
    if spec.label_noise:
        p = (1 - spec.label_noise) * p + spec.label_noise / 3.0
    positions = vertices + offset[:, None] * normals
    idx = np.flatnonzero(keep)
    remap = -np.ones(n, dtype=np.int64)
    remap[idx] = np.arange(len(idx))
    faces = remap[model.faces[keep[model.faces].all(1)]]
    return TriMesh(positions[idx], faces), p[idx]


def gen_scan(model: BodyModel, spec: GenSpec, rng, params=None, clothed=None, identity='scan',
             name=''):
    """Sample (or take) parameters, pose the model and turn it into a
    labelled scan. Returns (LabeledScan, true BodyParams)."""
    if params is None:
        params = sample_params(model, spec, rng, identity=identity)
        params.trans = rng.normal(0.0, 0.2, 3)
    if clothed is None:
        clothed = rng.random() < spec.clothed_prob
    posed = forward(model, params)
    mesh, p = scan_from_posed(model, posed.vertices, spec, rng, clothed)
    scan = LabeledScan(mesh, p[:, 0], p[:, 1], p[:, 2], identity or 'scan',
                       is_child=params.alpha < 1.0, name=name)
    return scan, params


def scan_detections(model, params, scan, spec: GenSpec, rng, config: FitConfig = None):
    """Virtual rig around the scan and the landmark detections it sees."""
    config = config or FitConfig()
    cams = virtual_rig(scan.points.mean(0), config)
    return cams, project_landmarks(model, params, cams, spec.detection_noise_px, rng)


def gen_scan_set(model: BodyModel, spec: GenSpec, n_scans=None, clothed=None, child=None,
                 alpha=None):
    """``n_scans`` scans grouped into identities of ``spec.scans_per_identity``
    scans that share shape and child blend but differ in pose. Returns a
    list of dicts with scan, params, cameras and detections."""
    n_scans = spec.n_scans if n_scans is None else n_scans
    out = []
    per = spec.scans_per_identity
    for ident in range((n_scans + per - 1) // per):
        rid = substream(spec.seed, STREAM_IDENTITY, ident)
        beta, a = sample_shape(model, spec, rid, child, alpha)
        for k in range(min(per, n_scans - ident * per)):
            i = ident * per + k
            rng = substream(spec.seed, STREAM_SCAN, i)
            theta, z_h, psi = sample_pose(model, spec, rng)
            params = BodyParams(beta, theta, z_h, psi, a, rng.normal(0.0, 0.2, 3), f'id{ident:04d}')
            name = f'scan_{i:04d}'
            scan, _ = gen_scan(model, spec, rng, params, clothed, params.identity, name)
            cams, det = scan_detections(model, params, scan, spec, rng)
            out.append(dict(name=name, scan=scan, params=params, cameras=cams, detections=det))
    return out


# --- scenes ------------------------------------------------------------------

def scene_camera(spec: GenSpec, focal_mm):
    W, H = spec.image_size
    f = focal_mm / spec.sensor_mm * W
    h = spec.camera_height
    return look_at((0.0, h, 0.0), (0.0, h - 0.5, 10.0), f, W, H)


def _overlap(a, b):
    lo = np.maximum(a[0], b[0])
    hi = np.minimum(a[1], b[1])
    inter = np.prod(np.clip(hi - lo, 0, None))
    vol = min(np.prod(a[1] - a[0]), np.prod(b[1] - b[0]))
    return inter / vol


def _place(model, spec, rng, camera, n):
    persons, boxes = [], []
    W = camera.width
    for pid in range(1, n + 1):
        params = sample_params(model, spec, rng, identity=f'p{pid}')
        rest = forward(model, params).vertices
        lo, hi = rest.min(0), rest.max(0)
        for _ in range(spec.max_retries):
            z = rng.uniform(*spec.depth_range)
            half = 0.9 * z * (W / 2) / camera.focal
            x = rng.uniform(-half, half)
            trans = np.array([x, -lo[1], z]) - np.array([0.5 * (lo[0] + hi[0]), 0.0, 0.5 * (lo[2] + hi[2])])
            box = (lo + trans, hi + trans)
            if all(_overlap(box, b) <= spec.overlap_threshold for b in boxes):
                break
        else:
            return None
        params.trans = trans
        boxes.append(box)
        persons.append(params)
    return persons


def gen_scene(model: BodyModel, spec: GenSpec, rng, scene_id='scene'):
    """Place persons without 3D bounding box overlap in front of a camera and
    render label masks."""
    camera = scene_camera(spec, spec.focal_mm[rng.integers(len(spec.focal_mm))])
    n = int(rng.integers(spec.persons_range[0], spec.persons_range[1] + 1))
    while True:
        placed = _place(model, spec, rng, camera, n)
        if placed is not None:
            break
        log.info('%s: placement of %d persons failed, retrying with %d', scene_id, n, n - 1)
        n -= 1
        if n < 1:
            raise RuntimeError(f'{scene_id}: cannot place a single person')
    persons = []
    for pid, params in enumerate(placed, 1):
        posed = forward(model, params)
        flag = B_ONLY if rng.random() < spec.b_only_prob else BFH
        persons.append(PersonTruth(pid, params, keypoints(model, posed), posed.vertices,
                                   params.alpha < 1.0, flag))
    occluders = []
    for _ in range(spec.n_occluders):
        target = persons[rng.integers(len(persons))].params.trans
        z = rng.uniform(1.5, max(2.0, target[2] - 1.0))
        pos = np.array([target[0] * z / target[2], rng.uniform(0.3, 1.0), z])
        occluders.append(box_mesh(pos, rng.uniform(0.3, 1.2, 3)))
    masks = rasterize([(p.vertices, model.faces) for p in persons], [p.person_id for p in persons],
                      camera, occluders)
    return SceneTruth(scene_id, camera, persons, masks)


# --- prediction degradation --------------------------------------------------

def truth_as_prediction(scene: SceneTruth, with_vertices=True):
    cam = scene.camera
    intr = Camera(cam.focal, cam.principal, cam.width, cam.height)
    preds = [PredPerson(p.person_id, cam.to_camera(p.joints),
                        cam.to_camera(p.vertices) if with_vertices else None)
             for p in scene.persons]
    return ScenePrediction(scene.scene_id, intr, preds)


def _body_box(camera, joints):
    uv, valid = project(camera, joints[:N_BODY_JOINTS])
    return aabb(uv[valid]) if valid.sum() >= 2 else None


def degrade_predictions(scene: SceneTruth, noise_mm, miss_rate, fp_rate, rng, with_vertices=False,
                        max_tries=200):
    """Truth with isotropic joint noise, persons dropped at ``miss_rate`` and
    one spurious detection injected per ground-truth person at ``fp_rate``.
    Spurious detections are copies of a random person moved to a random
    image location that overlaps no real box (IoU < 0.05) when possible.
    Returns (ScenePrediction, info) where info lists missed ids and injected
    prediction ids."""
    for r in (miss_rate, fp_rate):
        if not 0 <= r <= 1:
            raise ValueError('rates must lie in [0, 1]')
    base = truth_as_prediction(scene, with_vertices)
    cam = base.camera
    sd = noise_mm / 1000.0
    preds, missed = [], []
    for p in base.persons:
        if rng.random() < miss_rate:
            missed.append(p.pred_id)
            continue
        j = p.joints + rng.normal(0.0, sd, p.joints.shape) if sd else p.joints.copy()
        v = None
        if with_vertices:
            v = p.vertices + rng.normal(0.0, sd, p.vertices.shape) if sd else p.vertices.copy()
        preds.append(PredPerson(p.pred_id, j, v))
    gt_boxes = [b for b in (_body_box(cam, p.joints) for p in base.persons) if b is not None]
    injected = []
    next_id = max([p.pred_id for p in base.persons], default=0) + 1
    for _ in base.persons:
        if not rng.random() < fp_rate:
            continue
        src = base.persons[rng.integers(len(base.persons))]
        placed = None
        for _ in range(max_tries):
            z = rng.uniform(3.0, 15.0)
            u = rng.uniform(0.1, 0.9) * cam.width
            v = rng.uniform(0.3, 0.7) * cam.height
            pelvis = src.joints[0]
            target = np.array([(u - cam.principal[0]) * z / cam.focal,
                               (v - cam.principal[1]) * z / cam.focal, z])
            j = src.joints - pelvis + target
            box = _body_box(cam, j)
            if box is not None and all(box_iou(box, b) < FP_MAX_IOU for b in gt_boxes):
                placed = j, target - pelvis
                break
        if placed is None:
            log.info('%s: no free image region for a spurious detection', scene.scene_id)
            continue
        j, shift = placed
        gt_boxes.append(_body_box(cam, j))
        v = src.vertices + shift if with_vertices else None
        preds.append(PredPerson(next_id, j, v))
        injected.append(next_id)
        next_id += 1
    order = rng.permutation(len(preds))
    return ScenePrediction(scene.scene_id, cam, [preds[i] for i in order]), \
        {'missed': missed, 'injected': injected}


# --- corpus on disk ----------------------------------------------------------

def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + '\n')


def write_scene(scene: SceneTruth, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    scene.camera.save(d / 'camera.json')
    _dump(d / 'persons.json', {
        'scene_id': scene.scene_id,
        'persons': [{'person_id': p.person_id, 'flag': p.flag, 'is_child': bool(p.is_child),
                     'params': p.params.to_dict(), 'joints_m': p.joints.tolist()}
                    for p in scene.persons]})
    if scene.masks is not None:
        write_pgm(d / 'mask_full.pgm', scene.masks.labels)
        for pid, m in scene.masks.unoccluded.items():
            write_pgm(d / f'mask_person_{pid}.pgm', m.astype(np.int32) * pid)


def _scene_job(args):
    model, spec, k = args
    return gen_scene(model, spec, substream(spec.seed, STREAM_SCENE, k), f'scene_{k:04d}')


def write_corpus(model: BodyModel, spec: GenSpec, out_dir, jobs=1):
    """Generate scenes and scans for ``spec`` into ``out_dir`` and write a
    manifest listing every file with its SHA-256. Returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / 'model.npz')
    # scenes draw from their own streams, so worker order cannot change them
    if jobs > 1 and spec.n_scenes > 1:
        with ProcessPoolExecutor(jobs) as pool:
            scenes = pool.map(_scene_job, [(model, spec, k) for k in range(spec.n_scenes)])
            for scene in scenes:
                write_scene(scene, out / 'scenes' / scene.scene_id)
    else:
        for k in range(spec.n_scenes):
            scene = _scene_job((model, spec, k))
            write_scene(scene, out / 'scenes' / scene.scene_id)
    if spec.n_scans:
        sd = out / 'scans'
        sd.mkdir(exist_ok=True)
        for item in gen_scan_set(model, spec):
            name = item['name']
            save_scan(item['scan'], sd, name)
            _dump(sd / f'{name}.truth.json', item['params'].to_dict())
            _dump(sd / f'{name}.detections.json', {
                'cameras': [c.to_dict() for c in item['cameras']],
                'observations': [np.where(np.isfinite(d), d, None).tolist() for d in item['detections']]})
    return write_manifest(out, spec)


def write_manifest(out_dir, spec: GenSpec, extra=None):
    """(Re)write ``manifest.json`` listing every file under ``out_dir``
    with its SHA-256 and size. ``extra`` entries are stored alongside."""
    out = Path(out_dir)
    files = sorted(p for p in out.rglob('*') if p.is_file() and p.name != 'manifest.json')
    manifest = {
        'generator': spec.to_dict(),
        'rng': RNG_DOC,
        'files': [{'path': p.relative_to(out).as_posix(), 'sha256': _sha256(p),
                   'bytes': p.stat().st_size} for p in files],
    }
    manifest.update(extra or {})
    _dump(out / 'manifest.json', manifest)
    return manifest


def load_detections(path):
    doc = json.loads(Path(path).read_text())
    cams = [Camera.from_dict(c) for c in doc['cameras']]
    obs = [np.array([[np.nan if v is None else v for v in row] for row in o], dtype=np.float64)
           for o in doc['observations']]
    return cams, obs
