"""Toy-scale articulated body model with an interpolatable adult/child template.

The model follows the SMPL-X layout (22 body joints, 15 joints per hand,
a face landmark set) at desk scale. Vertices are produced by

    T(alpha) = alpha * T_A + (1 - alpha) * T_C
    shaped   = T(alpha) + shape_basis @ beta + expr_basis @ psi
    joints   = joint_regressor @ shaped
    verts    = sum_j w_vj * G_j(theta) [shaped_v; 1] + trans

where ``G_j`` are the rest-relative world transforms composed along the
kinematic tree. The numpy entry points (:func:`forward`,
:func:`interpolate_template`) wrap a float64 torch implementation that the
fitter differentiates through.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import torch

N_BODY_JOINTS = 22
N_HAND_JOINTS = 15
N_HAND_LATENT = 6
N_FACE_LANDMARKS = 51

BODY_JOINT_NAMES = [
    'pelvis', 'left_hip', 'right_hip', 'spine1', 'left_knee', 'right_knee',
    'spine2', 'left_ankle', 'right_ankle', 'spine3', 'left_foot', 'right_foot',
    'neck', 'left_collar', 'right_collar', 'head', 'left_shoulder',
    'right_shoulder', 'left_elbow', 'right_elbow', 'left_wrist', 'right_wrist',
]
FINGER_NAMES = ['index', 'middle', 'pinky', 'ring', 'thumb']
PART_NAMES = ('body', 'left_hand', 'right_hand', 'face')


class ModelError(ValueError):
    """Raised on contract violations (bad dimensions, out-of-range values)."""


def joint_names():
    names = list(BODY_JOINT_NAMES)
    for side in ('left', 'right'):
        for finger in FINGER_NAMES:
            names += [f'{side}_{finger}{k}' for k in (1, 2, 3)]
    return names


@dataclass(eq=False)
class BodyModel:
    adult_template: np.ndarray       # (V, 3)
    child_template: np.ndarray       # (V, 3)
    faces: np.ndarray                # (F, 3) int
    shape_basis: np.ndarray          # (V, 3, n_beta)
    expr_basis: np.ndarray           # (V, 3, n_psi)
    joint_regressor: np.ndarray      # (J, V)
    skin_weights: np.ndarray         # (V, J)
    parents: np.ndarray              # (J,) int, -1 for the root
    hand_basis: np.ndarray           # (2, 15 * 3, 6)
    part_sets: dict = field(default_factory=dict)
    bend_joints: list = field(default_factory=list)  # [(joint, axis, sign)]

    def __post_init__(self):
        self.adult_template = np.asarray(self.adult_template, dtype=np.float64)
        self.child_template = np.asarray(self.child_template, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        self.parents = np.asarray(self.parents, dtype=np.int64)
        self.validate()

    @property
    def n_vertices(self):
        return self.adult_template.shape[0]

    @property
    def n_joints(self):
        return self.parents.shape[0]

    @property
    def n_beta(self):
        return self.shape_basis.shape[2]

    @property
    def n_psi(self):
        return self.expr_basis.shape[2]

    @property
    def face_landmarks(self):
        return np.asarray(self.part_sets['face']['landmarks'], dtype=np.int64)

    @property
    def n_keypoints(self):
        return N_BODY_JOINTS + 2 * N_HAND_JOINTS + len(self.face_landmarks)

    def validate(self):
        V = self.n_vertices
        J = self.n_joints
        if self.child_template.shape != (V, 3):
            raise ModelError('adult and child templates must share vertex count')
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ModelError('faces must be (F, 3)')
        if self.faces.min() < 0 or self.faces.max() >= V:
            raise ModelError('face index out of range')
        if self.shape_basis.shape[:2] != (V, 3) or self.expr_basis.shape[:2] != (V, 3):
            raise ModelError('basis arrays must be (V, 3, k)')
        if self.joint_regressor.shape != (J, V) or self.skin_weights.shape != (V, J):
            raise ModelError('regressor/skin weight dimensions do not match')
        if self.hand_basis.shape != (2, 3 * N_HAND_JOINTS, N_HAND_LATENT):
            raise ModelError('hand basis must be (2, 45, 6)')
        if J != N_BODY_JOINTS + 2 * N_HAND_JOINTS:
            raise ModelError(f'expected {N_BODY_JOINTS + 2 * N_HAND_JOINTS} joints, got {J}')
        if (self.skin_weights < 0).any() or not np.allclose(self.skin_weights.sum(1), 1, atol=1e-6):
            raise ModelError('skin weights must be convex per vertex')
        if (self.joint_regressor < 0).any() or not np.allclose(self.joint_regressor.sum(1), 1, atol=1e-6):
            raise ModelError('joint regressor rows must be convex')
        roots = np.flatnonzero(self.parents < 0)
        if len(roots) != 1 or roots[0] != 0:
            raise ModelError('kinematic tree must have a single root at index 0')
        if (self.parents[1:] >= np.arange(1, J)).any():
            raise ModelError('parents must precede children (no cycles)')

    @cached_property
    def depth_levels(self):
        depth = np.zeros(self.n_joints, dtype=np.int64)
        for j in range(1, self.n_joints):
            depth[j] = depth[self.parents[j]] + 1
        return [np.flatnonzero(depth == d) for d in range(1, depth.max() + 1)]

    @cached_property
    def tensors(self):
        """float64 torch views of the model arrays, built once."""
        as_t = lambda a: torch.as_tensor(np.ascontiguousarray(a), dtype=torch.float64)
        return {
            'T_A': as_t(self.adult_template),
            'T_C': as_t(self.child_template),
            'shapedirs': as_t(self.shape_basis),
            'exprdirs': as_t(self.expr_basis),
            'J_reg': as_t(self.joint_regressor),
            'W': as_t(self.skin_weights),
            'hand_basis': as_t(self.hand_basis),
            'parents': torch.as_tensor(self.parents),
            'levels': [(torch.as_tensor(lv), torch.as_tensor(self.parents[lv])) for lv in self.depth_levels],
            'landmarks': torch.as_tensor(self.face_landmarks),
            # joint regressor folded into the linear template model
            'J_A': as_t(self.joint_regressor @ self.adult_template),
            'J_C': as_t(self.joint_regressor @ self.child_template),
            'J_shape': as_t(np.einsum('jv,vck->jck', self.joint_regressor, self.shape_basis)),
            'J_expr': as_t(np.einsum('jv,vck->jck', self.joint_regressor, self.expr_basis)),
        }


@dataclass
class BodyParams:
    beta: np.ndarray
    theta_b: np.ndarray              # (22, 3) axis-angle, row 0 is the global orientation
    z_h: np.ndarray                  # (2, 6) left, right hand latents
    psi: np.ndarray
    alpha: float = 1.0
    trans: np.ndarray = field(default_factory=lambda: np.zeros(3))
    identity: str = ''

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64).reshape(-1)
        self.theta_b = np.asarray(self.theta_b, dtype=np.float64).reshape(N_BODY_JOINTS, 3)
        self.z_h = np.asarray(self.z_h, dtype=np.float64).reshape(2, N_HAND_LATENT)
        self.psi = np.asarray(self.psi, dtype=np.float64).reshape(-1)
        self.trans = np.asarray(self.trans, dtype=np.float64).reshape(3)
        self.alpha = float(self.alpha)
        if not 0.0 <= self.alpha <= 1.0:
            raise ModelError(f'alpha must lie in [0, 1], got {self.alpha}')
        for name in ('beta', 'theta_b', 'z_h', 'psi', 'trans'):
            if not np.isfinite(getattr(self, name)).all():
                raise ModelError(f'{name} has non-finite entries')

    @classmethod
    def zeros(cls, model: BodyModel, identity='', alpha=1.0):
        return cls(np.zeros(model.n_beta), np.zeros((N_BODY_JOINTS, 3)),
                   np.zeros((2, N_HAND_LATENT)), np.zeros(model.n_psi),
                   alpha, np.zeros(3), identity)

    def copy(self, **changes):
        d = dict(beta=self.beta.copy(), theta_b=self.theta_b.copy(), z_h=self.z_h.copy(),
                 psi=self.psi.copy(), alpha=self.alpha, trans=self.trans.copy(),
                 identity=self.identity)
        d.update(changes)
        return BodyParams(**d)

    def to_dict(self):
        return {
            'identity': self.identity,
            'alpha': self.alpha,
            'beta': self.beta.tolist(),
            'theta_b': self.theta_b.tolist(),
            'z_h': self.z_h.tolist(),
            'psi': self.psi.tolist(),
            'trans_m': self.trans.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d['beta'], d['theta_b'], d['z_h'], d['psi'], d['alpha'],
                   d['trans_m'], d.get('identity', ''))


@dataclass
class PosedBody:
    vertices: np.ndarray     # (V, 3)
    joints: np.ndarray       # (J, 3)
    transforms: np.ndarray   # (J, 4, 4) world transforms of each joint frame


# --- torch core ----------------------------------------------------------

def rotvec_to_matrix(r):
    """Rodrigues map for (..., 3) axis-angle tensors, smooth through zero."""
    th2 = (r * r).sum(-1)[..., None, None]
    small = th2 < 1e-12
    safe = torch.where(small, torch.ones_like(th2), th2)
    th = torch.sqrt(safe)
    a = torch.where(small, 1 - th2 / 6, torch.sin(th) / th)
    b = torch.where(small, 0.5 - th2 / 24, (1 - torch.cos(th)) / safe)
    z = torch.zeros_like(r[..., 0])
    K = torch.stack([z, -r[..., 2], r[..., 1],
                     r[..., 2], z, -r[..., 0],
                     -r[..., 1], r[..., 0], z], -1).reshape(r.shape[:-1] + (3, 3))
    eye = torch.eye(3, dtype=r.dtype)
    return eye + a * K + b * (K @ K)


def hand_rotvecs_t(model: BodyModel, z_h):
    """(B, 2, 6) latents -> (B, 30, 3) hand joint axis-angles."""
    hb = model.tensors['hand_basis']
    rv = torch.einsum('hkl,bhl->bhk', hb, z_h)
    return rv.reshape(z_h.shape[0], 2 * N_HAND_JOINTS, 3)


def shaped_template_t(model: BodyModel, beta, psi, alpha):
    t = model.tensors
    a = alpha.reshape(-1, 1, 1)
    T = a * t['T_A'] + (1 - a) * t['T_C']
    return T + torch.einsum('vck,bk->bvc', t['shapedirs'], beta) \
             + torch.einsum('vck,bk->bvc', t['exprdirs'], psi)


def forward_t(model: BodyModel, beta, theta_b, z_h, psi, alpha, trans):
    """Batched skinning. Shapes: beta (B,nb), theta_b (B,22,3), z_h (B,2,6),
    psi (B,ne), alpha (B,), trans (B,3). Returns vertices (B,V,3), joints
    (B,J,3) and world transforms (B,J,4,4)."""
    t = model.tensors
    B = beta.shape[0]
    shaped = shaped_template_t(model, beta, psi, alpha)
    a = alpha.reshape(-1, 1, 1)
    J_rest = (a * t['J_A'] + (1 - a) * t['J_C'] + torch.einsum('jck,bk->bjc', t['J_shape'], beta)
              + torch.einsum('jck,bk->bjc', t['J_expr'], psi))
    pose = torch.cat([theta_b, hand_rotvecs_t(model, z_h)], 1)
    R = rotvec_to_matrix(pose)

    par = t['parents']
    offs = torch.cat([J_rest[:, :1], J_rest[:, 1:] - J_rest[:, par[1:]]], 1)
    bottom = torch.zeros(B, model.n_joints, 1, 4, dtype=beta.dtype)
    bottom[..., 3] = 1.0
    L = torch.cat([torch.cat([R, offs[..., None]], -1), bottom], -2)
    G = L
    for idx, pidx in t['levels']:
        G = G.index_copy(1, idx, G[:, pidx] @ L[:, idx])

    rot = G[..., :3, :3]
    tr = G[..., :3, 3]
    rel_t = tr - (rot @ J_rest[..., None])[..., 0]
    A = torch.matmul(t['W'], torch.cat([rot.reshape(B, -1, 9), rel_t], -1))
    Mv = A[..., :9].unflatten(-1, (3, 3))
    tv = A[..., 9:]
    verts = (Mv @ shaped[..., None])[..., 0] + tv + trans[:, None]
    joints = tr + trans[:, None]
    G = G.clone()
    G[..., :3, 3] = joints
    return verts, joints, G


def keypoints_t(model: BodyModel, verts, joints):
    """Evaluation keypoint layout: 22 body, 15 left hand, 15 right hand,
    then the face landmark vertices."""
    return torch.cat([joints, verts[:, model.tensors['landmarks']]], 1)


def params_to_tensors(params_list):
    as_t = lambda xs: torch.as_tensor(np.stack(xs), dtype=torch.float64)
    return (as_t([p.beta for p in params_list]), as_t([p.theta_b for p in params_list]),
            as_t([p.z_h for p in params_list]), as_t([p.psi for p in params_list]),
            as_t([p.alpha for p in params_list]), as_t([p.trans for p in params_list]))


# --- numpy API -------------------------------------------------------------

def interpolate_template(model: BodyModel, alpha):
    """Blend the adult and child templates: alpha=1 is adult, alpha=0 child."""
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ModelError(f'alpha must lie in [0, 1], got {alpha}')
    return alpha * model.adult_template + (1.0 - alpha) * model.child_template


def expand_hand_pose(model: BodyModel, z_h, hand=0):
    """Map a 6-d hand latent to (15, 3) axis-angle rotations for one hand
    (0 = left, 1 = right)."""
    z_h = np.asarray(z_h, dtype=np.float64)
    if z_h.shape != (N_HAND_LATENT,) or not np.isfinite(z_h).all():
        raise ModelError('hand latent must be a finite 6-vector')
    return (model.hand_basis[hand] @ z_h).reshape(N_HAND_JOINTS, 3)


def _check_dims(model, params):
    if params.beta.shape != (model.n_beta,) or params.psi.shape != (model.n_psi,):
        raise ModelError(f'parameter dims (beta {params.beta.shape}, psi {params.psi.shape}) '
                         f'do not match model ({model.n_beta}, {model.n_psi})')


def forward(model: BodyModel, params: BodyParams) -> PosedBody:
    _check_dims(model, params)
    with torch.no_grad():
        v, j, G = forward_t(model, *params_to_tensors([params]))
    return PosedBody(v[0].numpy(), j[0].numpy(), G[0].numpy())


def forward_batch(model: BodyModel, params_list):
    for p in params_list:
        _check_dims(model, p)
    with torch.no_grad():
        v, j, G = forward_t(model, *params_to_tensors(params_list))
    return [PosedBody(v[i].numpy(), j[i].numpy(), G[i].numpy()) for i in range(len(params_list))]


def keypoints(model: BodyModel, posed: PosedBody):
    return np.concatenate([posed.joints, posed.vertices[model.face_landmarks]], 0)


def keypoint_slices(model: BodyModel):
    """Index ranges of each part inside the keypoint layout."""
    nb, nh = N_BODY_JOINTS, N_HAND_JOINTS
    return {
        'body': np.arange(0, nb),
        'left_hand': np.arange(nb, nb + nh),
        'right_hand': np.arange(nb + nh, nb + 2 * nh),
        'face': np.arange(nb + 2 * nh, nb + 2 * nh + len(model.face_landmarks)),
    }


# --- persistence -----------------------------------------------------------

_ARRAY_FIELDS = ('adult_template', 'child_template', 'faces', 'shape_basis', 'expr_basis',
                 'joint_regressor', 'skin_weights', 'parents', 'hand_basis')


def save_model(model: BodyModel, path):
    """Write ``<path>`` (npz archive, little-endian float64 / int64 arrays plus
    a ``dims`` header) and ``<path stem>.parts.json`` (part sets manifest)."""
    path = Path(path)
    arrays = {}
    for name in _ARRAY_FIELDS:
        a = getattr(model, name)
        arrays[name] = a.astype('<i8') if a.dtype.kind in 'iu' else a.astype('<f8')
    arrays['dims'] = np.array([model.n_vertices, len(model.faces), model.n_joints,
                               model.n_beta, model.n_psi, N_HAND_LATENT], dtype='<i8')
    with open(path, 'wb') as fh:
        np.savez(fh, **arrays)
    manifest = {
        'joint_names': joint_names(),
        'part_sets': {k: {kk: (list(map(int, vv)) if isinstance(vv, (list, np.ndarray)) else vv)
                          for kk, vv in v.items()} for k, v in model.part_sets.items()},
        'bend_joints': [list(map(int, b)) for b in model.bend_joints],
    }
    path.with_suffix('.parts.json').write_text(json.dumps(manifest, indent=1))
    return path


def load_model(path) -> BodyModel:
    path = Path(path)
    with np.load(path) as z:
        arrays = {name: z[name] for name in _ARRAY_FIELDS}
        dims = z['dims']
    manifest = json.loads(path.with_suffix('.parts.json').read_text())
    model = BodyModel(**arrays, part_sets=manifest['part_sets'],
                      bend_joints=[tuple(b) for b in manifest['bend_joints']])
    expected = (model.n_vertices, len(model.faces), model.n_joints, model.n_beta, model.n_psi,
                N_HAND_LATENT)
    if tuple(int(d) for d in dims) != expected:
        raise ModelError(f'dims header {tuple(dims)} does not match arrays {expected}')
    return model
