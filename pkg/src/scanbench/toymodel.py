"""Deterministic generator for a small SMPL-X-shaped body model.

Every bone is a closed capsule mesh that starts at its joint. Joints are
regressed as the centroid of the first ring of their capsule, so rest joint
locations are exact. The shape basis is the central-difference derivative of
the mesh with respect to a handful of body proportions (plus seeded random
girth fields); the child template is the same construction evaluated with
infant proportions, including a relatively larger head that the shape basis
cannot express.
"""

import numpy as np

from .bodymodel import (BODY_JOINT_NAMES, N_BODY_JOINTS, N_FACE_LANDMARKS, N_HAND_JOINTS,
                        N_HAND_LATENT, BodyModel)

BODY_PARENTS = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19]
LEFT_WRIST, RIGHT_WRIST, NECK, HEAD = 20, 21, 12, 15

ADULT = dict(stature=1.0, leg=1.0, arm=1.0, shoulder=1.0, hip=1.0, torso_girth=1.0,
             limb_girth=1.0, head=1.0, hand=1.0, foot=1.0)
CHILD = dict(stature=0.52, leg=0.8, arm=0.85, shoulder=0.55, hip=0.6, torso_girth=0.62,
             limb_girth=0.6, head=0.78, hand=0.5, foot=0.5)
# proportions spanned by the shape basis, with the finite-difference step that
# defines one unit of beta
BASIS_PROPS = [('stature', 0.04), ('torso_girth', 0.08), ('leg', 0.05), ('arm', 0.05),
               ('shoulder', 0.06), ('hip', 0.06), ('limb_girth', 0.08)]

# ring layout per bone: (points per ring, body rings, rings per cap)
_TORSO = (12, 4, 2)
_LIMB = (10, 5, 1)
_SMALL = (8, 3, 1)
_HEAD = (16, 5, 3)
_FINGER = (6, 2, 0)
# cross sections are elliptical (semi-axes r(1+e), r(1-e)) and limbs taper
# towards their end, so twist about a bone and slide along it change the
# surface
_ELLIPSE = {'torso': 0.25, 'limb': 0.15, 'small': 0.1, 'head': 0.1, 'finger': 0.2}
_TAPER = {'torso': 0.0, 'limb': 0.15, 'small': 0.1, 'head': 0.0, 'finger': 0.1}


def _parents():
    parents = list(BODY_PARENTS)
    for wrist in (LEFT_WRIST, RIGHT_WRIST):
        for f in range(5):
            base = len(parents)
            parents += [wrist, base, base + 1]
    return np.array(parents)


def _skeleton(p):
    """Joint positions, bone end points and capsule radii for proportions p.

    Rest pose is a T-pose facing +z with the pelvis at the origin, y up and
    the body's left side on +x.
    """
    s, leg, arm = p['stature'], p['leg'], p['arm']
    tg, lg = p['torso_girth'], p['limb_girth']
    J = np.zeros((N_BODY_JOINTS + 2 * N_HAND_JOINTS, 3))
    ends = np.zeros_like(J)
    radii = np.zeros(len(J))
    J[3] = (0, 0.10 * s, -0.01)
    J[6] = (0, 0.22 * s, 0.0)
    J[9] = (0, 0.34 * s, 0.0)
    J[12] = (0, 0.49 * s, -0.01)
    J[15] = (0, 0.58 * s, 0.02)
    ends[0], ends[3], ends[6], ends[9] = J[3], J[6], J[9], J[12]
    radii[[0, 3, 6, 9]] = np.array([0.115, 0.12, 0.125, 0.12]) * tg
    ends[12] = J[15]
    radii[12] = 0.05 * tg
    ends[15] = J[15] + (0, 0.16 * p['head'], 0)
    radii[15] = 0.095 * p['head']
    for sign, (hip, knee, ankle, foot) in ((1, (1, 4, 7, 10)), (-1, (2, 5, 8, 11))):
        J[hip] = (sign * 0.09 * p['hip'], -0.08 * s, 0)
        J[knee] = J[hip] + (sign * 0.01, -0.40 * s * leg, 0.01)
        J[ankle] = J[knee] + (0, -0.40 * s * leg, -0.02)
        J[foot] = J[ankle] + (0, -0.05 * s, 0.10 * p['foot'])
        ends[hip], ends[knee], ends[ankle] = J[knee], J[ankle], J[foot]
        ends[foot] = J[foot] + (0, -0.01, 0.06 * p['foot'])
        radii[hip], radii[knee] = 0.075 * lg, 0.055 * lg
        radii[ankle], radii[foot] = 0.045 * lg, 0.035 * lg
    for sign, (collar, shoulder, elbow, wrist) in ((1, (13, 16, 18, 20)), (-1, (14, 17, 19, 21))):
        sh = p['shoulder']
        J[collar] = (sign * 0.07 * sh, 0.43 * s, -0.01)
        J[shoulder] = (sign * 0.19 * sh, 0.45 * s, -0.02)
        J[elbow] = J[shoulder] + (sign * 0.26 * arm, 0, 0)
        J[wrist] = J[elbow] + (sign * 0.25 * arm, 0, 0)
        ends[collar], ends[shoulder], ends[elbow] = J[shoulder], J[elbow], J[wrist]
        ends[wrist] = J[wrist] + (sign * 0.08 * p['hand'], 0, 0)
        radii[collar], radii[shoulder], radii[elbow] = 0.05 * lg, 0.05 * lg, 0.04 * lg
        radii[wrist] = 0.03 * p['hand']
        # fingers: index, middle, pinky, ring, thumb
        h = p['hand']
        bases = [(0.085, 0.0, 0.022), (0.085, 0.0, 0.004), (0.075, 0.0, -0.030),
                 (0.082, 0.0, -0.013), (0.03, -0.005, 0.04)]
        seglen = [(0.030, 0.024, 0.020), (0.033, 0.026, 0.021), (0.022, 0.017, 0.015),
                  (0.030, 0.024, 0.020), (0.030, 0.026, 0.022)]
        first = N_BODY_JOINTS + (0 if sign > 0 else N_HAND_JOINTS)
        for f in range(5):
            direction = np.array([sign, 0, 0.0]) if f < 4 else np.array([sign * 0.7, 0, 0.7])
            pos = J[wrist] + h * np.array([sign * bases[f][0], bases[f][1], bases[f][2]])
            for k in range(3):
                j = first + 3 * f + k
                J[j] = pos
                pos = pos + h * seglen[f][k] * direction
                ends[j] = pos
                radii[j] = 0.009 * h
    return J, ends, radii


def _bone_kind(j):
    if j in (0, 3, 6, 9):
        return 'torso'
    if j == HEAD:
        return 'head'
    if j >= N_BODY_JOINTS:
        return 'finger'
    if j in (1, 2, 4, 5, 16, 17, 18, 19):
        return 'limb'
    return 'small'


def _bone_layout(j):
    return {'torso': _TORSO, 'head': _HEAD, 'finger': _FINGER, 'limb': _LIMB,
            'small': _SMALL}[_bone_kind(j)]


def _topology(n_joints):
    """Per-bone ring profiles and the triangle list (independent of geometry)."""
    bones, faces = [], []
    offset = 0
    for j in range(n_joints):
        n, n_body, n_cap = _bone_layout(j)
        # profile entries: (kind, value) with kind in {'cap0', 'body', 'cap1'}
        profile = []
        for k in range(1, n_cap + 1):
            profile.append(('cap0', np.pi / 2 * k / (n_cap + 1)))
        for t in np.linspace(0, 1, n_body):
            profile.append(('body', t))
        for k in range(n_cap, 0, -1):
            profile.append(('cap1', np.pi / 2 * k / (n_cap + 1)))
        n_rings = len(profile)
        pole0 = offset
        ring0 = offset + 1
        pole1 = ring0 + n_rings * n
        ring = lambda r, i: ring0 + r * n + (i % n)
        for i in range(n):
            faces.append((pole0, ring(0, i + 1), ring(0, i)))
        for r in range(n_rings - 1):
            for i in range(n):
                a, b = ring(r, i), ring(r, i + 1)
                c, d = ring(r + 1, i), ring(r + 1, i + 1)
                faces.append((a, b, d))
                faces.append((a, d, c))
        for i in range(n):
            faces.append((pole1, ring(n_rings - 1, i), ring(n_rings - 1, i + 1)))
        first_body = n_cap
        bones.append(dict(n=n, profile=profile, offset=offset, count=n_rings * n + 2,
                          first_ring=list(range(ring0 + first_body * n, ring0 + (first_body + 1) * n))))
        offset += n_rings * n + 2
    return bones, np.array(faces, dtype=np.int64), offset


def _frame(u):
    ref = np.array([0.0, 0.0, 1.0]) if abs(u[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(ref, u)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)
    return e1, e2


def _mesh(p, bones, n_verts, girth_fields=None, girth_coef=None):
    """Vertex positions plus per-vertex (bone, axial t) for proportions p."""
    J, ends, radii = _skeleton(p)
    verts = np.zeros((n_verts, 3))
    bone_of = np.zeros(n_verts, dtype=np.int64)
    t_of = np.zeros(n_verts)
    for j, b in enumerate(bones):
        a, e, r = J[j], ends[j], radii[j]
        if girth_fields is not None:
            r = r * (1.0 + girth_coef @ girth_fields[:, j])
        L = np.linalg.norm(e - a)
        u = (e - a) / L
        e1, e2 = _frame(u)
        n = b['n']
        ecc, taper = _ELLIPSE[_bone_kind(j)], _TAPER[_bone_kind(j)]
        r_end = r * (1.0 - taper)
        psi = 2 * np.pi * np.arange(n) / n
        circle = (1 + ecc) * np.cos(psi)[:, None] * e1 + (1 - ecc) * np.sin(psi)[:, None] * e2
        idx = b['offset']
        verts[idx], t_of[idx] = a - r * u, -r / L
        idx += 1
        for kind, val in b['profile']:
            if kind == 'cap0':
                s, rho = -r * np.cos(val), r * np.sin(val)
            elif kind == 'body':
                s, rho = L * val, r + (r_end - r) * val
            else:
                s, rho = L + r_end * np.cos(val), r_end * np.sin(val)
            verts[idx:idx + n] = a + s * u + rho * circle
            t_of[idx:idx + n] = s / L
            idx += n
        verts[idx], t_of[idx] = e + r_end * u, 1 + r_end / L
        bone_of[b['offset']:b['offset'] + b['count']] = j
    return verts, bone_of, t_of


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3 - 2 * x)


def _skin_weights(parents, primary_child, bone_of, t_of, n_joints):
    """Convex weights: each bone blends toward its parent near the start and
    toward the joint at its far end near the tip."""
    W = np.zeros((len(bone_of), n_joints))
    for v, (j, t) in enumerate(zip(bone_of, t_of)):
        w_par = 0.5 * (1 - _smoothstep(t / 0.3)) if parents[j] >= 0 else 0.0
        w_child = 0.5 * _smoothstep((t - 0.7) / 0.3) if primary_child[j] >= 0 else 0.0
        W[v, j] += 1.0 - w_par - w_child
        if w_par:
            W[v, parents[j]] += w_par
        if w_child:
            W[v, primary_child[j]] += w_child
    return W


def _hand_basis(rng):
    """(2, 45, 6): curl, spread, thumb opposition, three seeded mixtures."""
    basis = np.zeros((2, N_HAND_JOINTS, 3, N_HAND_LATENT))
    for h, sign in ((0, 1.0), (1, -1.0)):
        for f in range(5):
            for k in range(3):
                j = 3 * f + k
                if f < 4:
                    basis[h, j, 2, 0] = -sign * 0.45          # flex toward the palm
                    if k == 0:
                        basis[h, j, 1, 1] = sign * 0.12 * (f - 1.5)  # spread
                else:
                    basis[h, j, :, 2] = sign * np.array([0.25, 0.2, -0.2])
        mix = rng.normal(scale=0.12, size=(N_HAND_JOINTS, 3, 3))
        basis[h, :, :, 3:] = mix
    return basis.reshape(2, 3 * N_HAND_JOINTS, N_HAND_LATENT)


def make_toy_model(seed=0):
    """Build the toy model. Same seed, same arrays, bit for bit."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x70B0DE]))
    parents = _parents()
    n_joints = len(parents)
    bones, faces, n_verts = _topology(n_joints)

    n_random = 3
    girth_fields = rng.normal(scale=0.06, size=(n_random, n_joints))
    zero = np.zeros(n_random)
    T_A, bone_of, t_of = _mesh(ADULT, bones, n_verts, girth_fields, zero)
    T_C, _, _ = _mesh(CHILD, bones, n_verts, girth_fields, zero)

    cols = []
    for name, step in BASIS_PROPS:
        hi = dict(ADULT, **{name: ADULT[name] + step})
        lo = dict(ADULT, **{name: ADULT[name] - step})
        cols.append((_mesh(hi, bones, n_verts, girth_fields, zero)[0]
                     - _mesh(lo, bones, n_verts, girth_fields, zero)[0]) / 2)
    for k in range(n_random):
        c = np.zeros(n_random)
        c[k] = 1.0
        cols.append((_mesh(ADULT, bones, n_verts, girth_fields, c)[0]
                     - _mesh(ADULT, bones, n_verts, girth_fields, -c)[0]) / 2)
    shape_basis = np.stack(cols, -1)

    regressor = np.zeros((n_joints, n_verts))
    for j, b in enumerate(bones):
        regressor[j, b['first_ring']] = 1.0 / len(b['first_ring'])

    J_rest, ends, _ = _skeleton(ADULT)
    primary_child = -np.ones(n_joints, dtype=np.int64)
    for j in range(1, n_joints):
        if np.allclose(J_rest[j], ends[parents[j]]):
            primary_child[parents[j]] = j
    W = _skin_weights(parents, primary_child, bone_of, t_of, n_joints)

    # part sets
    head = bones[HEAD]
    head_idx = np.arange(head['offset'], head['offset'] + head['count'])
    head_center = T_A[head_idx].mean(0)
    forward = T_A[head_idx, 2] - head_center[2]
    order = np.lexsort((head_idx, -forward))
    landmarks = np.sort(head_idx[order[:N_FACE_LANDMARKS]])
    face_verts = head_idx[forward > 0]

    def hand_vertices(wrist, first):
        js = [wrist] + list(range(first, first + N_HAND_JOINTS))
        return np.flatnonzero(np.isin(bone_of, js))

    first_left, first_right = N_BODY_JOINTS, N_BODY_JOINTS + N_HAND_JOINTS
    part_sets = {
        'body': dict(joints=list(range(N_BODY_JOINTS)), vertices=list(range(n_verts)), anchor=0),
        'left_hand': dict(joints=list(range(first_left, first_left + N_HAND_JOINTS)),
                          vertices=hand_vertices(LEFT_WRIST, first_left).tolist(), anchor=LEFT_WRIST),
        'right_hand': dict(joints=list(range(first_right, first_right + N_HAND_JOINTS)),
                           vertices=hand_vertices(RIGHT_WRIST, first_right).tolist(), anchor=RIGHT_WRIST),
        'face': dict(landmarks=landmarks.tolist(), vertices=face_verts.tolist(), anchor=NECK),
        # vertex regions used by the scan generator
        'torso': dict(vertices=np.flatnonzero(np.isin(bone_of, [0, 3, 6, 9])).tolist()),
        'legs': dict(vertices=np.flatnonzero(np.isin(bone_of, [1, 2, 4, 5])).tolist()),
        'scalp': dict(vertices=head_idx[(T_A[head_idx, 1] > head_center[1] + 0.06)
                                        & (forward < 0)].tolist()),
    }

    # expression basis on the face vertices: jaw drop, mouth corners, brow
    expr = np.zeros((n_verts, 3, 3))
    rel = T_A[face_verts] - head_center
    low = np.clip(-rel[:, 1] / 0.09, 0, 1)
    expr[face_verts, 1, 0] = -0.012 * low
    expr[face_verts, 1, 1] = 0.006 * np.abs(rel[:, 0]) / 0.09 * low
    expr[face_verts, 2, 2] = 0.006 * np.clip(rel[:, 1] / 0.09, 0, 1)

    # impossible bending: left elbow +y, right elbow -y, knees -x
    bend = [(18, 1, 1), (19, 1, -1), (4, 0, -1), (5, 0, -1)]

    return BodyModel(T_A, T_C, faces, shape_basis, expr, regressor, W, parents,
                     _hand_basis(rng), part_sets, bend)


__all__ = ['make_toy_model', 'BODY_JOINT_NAMES']
