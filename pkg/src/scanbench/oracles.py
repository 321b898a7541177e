"""Slow, independent reference implementations used to cross-check the
fast paths (tests and ``selftest``). They share no code with the routines
they check beyond array conventions."""

import itertools

import numpy as np
from scipy.spatial.transform import Rotation


def _segment_closest(p, a, b):
    ab = b - a
    t = np.clip(((p - a) * ab).sum(-1) / np.maximum((ab * ab).sum(-1), 1e-300), 0.0, 1.0)
    return a + t[..., None] * ab


def brute_closest_point(positions, faces, q):
    """Nearest point over every triangle: in-plane projection when it falls
    inside the triangle, otherwise the best of the three edge segments.
    Returns (distance, point, triangle id); ties go to the lower id."""
    q = np.asarray(q, dtype=np.float64)
    a, b, c = (positions[faces[:, k]] for k in range(3))
    n = np.cross(b - a, c - a)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    proj = q - ((q - a) * n).sum(1)[:, None] * n
    # inside test by signed sub-triangle areas
    s0 = (np.cross(b - a, proj - a) * n).sum(1)
    s1 = (np.cross(c - b, proj - b) * n).sum(1)
    s2 = (np.cross(a - c, proj - c) * n).sum(1)
    inside = (s0 >= 0) & (s1 >= 0) & (s2 >= 0)
    cands = [np.where(inside[:, None], proj, np.inf)]
    for u, v in ((a, b), (b, c), (c, a)):
        cands.append(_segment_closest(q, u, v))
    cands = np.stack(cands, 1)                               # (F, 4, 3)
    d = np.linalg.norm(cands - q, axis=2)
    d[~np.isfinite(d)] = np.inf
    k = d.argmin(1)
    per_tri = d[np.arange(len(faces)), k]
    t = int(np.argmin(per_tri))
    return float(per_tri[t]), cands[t, k[t]], t


def exhaustive_assignment(err, iou, tau):
    """Best partial one-to-one matching by enumeration: most admissible
    pairs, then smallest total error. Returns sorted (row, col) pairs."""
    n_p, n_g = err.shape
    best_key, best = None, []
    cols = list(range(n_g))
    for k in range(min(n_p, n_g), -1, -1):
        for rows in itertools.combinations(range(n_p), k):
            for perm in itertools.permutations(cols, k):
                if not all(iou[r, c] >= tau and np.isfinite(err[r, c]) for r, c in zip(rows, perm)):
                    continue
                key = (-k, sum(err[r, c] for r, c in zip(rows, perm)))
                if best_key is None or key < best_key:
                    best_key, best = key, sorted(zip(rows, perm))
        if best_key is not None:
            break
    return best


def naive_forward(model, params):
    """Per-vertex linear blend skinning written out joint by joint with
    scipy rotations. Returns (vertices, joints)."""
    tmpl = params.alpha * model.adult_template + (1 - params.alpha) * model.child_template
    shaped = tmpl + model.shape_basis @ params.beta + model.expr_basis @ params.psi
    rest = model.joint_regressor @ shaped
    J = model.n_joints
    rot = np.zeros((J, 3))
    rot[:22] = params.theta_b
    rot[22:37] = (model.hand_basis[0] @ params.z_h[0]).reshape(15, 3)
    rot[37:52] = (model.hand_basis[1] @ params.z_h[1]).reshape(15, 3)
    Rw = [None] * J
    tw = [None] * J
    for j in range(J):
        Rl = Rotation.from_rotvec(rot[j]).as_matrix()
        p = model.parents[j]
        if p < 0:
            Rw[j], tw[j] = Rl, rest[j]
        else:
            Rw[j] = Rw[p] @ Rl
            tw[j] = Rw[p] @ (rest[j] - rest[p]) + tw[p]
    verts = np.zeros_like(shaped)
    for i in range(len(shaped)):
        acc = np.zeros(3)
        for j in np.flatnonzero(model.skin_weights[i]):
            acc += model.skin_weights[i, j] * (Rw[j] @ (shaped[i] - rest[j]) + tw[j])
        verts[i] = acc
    return verts + params.trans, np.array(tw) + params.trans


def naive_landmark_energy(points, cameras, observations, sigma):
    """Term-by-term Geman-McClure sum of confidence-weighted reprojection
    errors, skipping points behind a camera and missing observations."""
    total = 0.0
    for cam, obs in zip(cameras, observations):
        for k in range(len(points)):
            u, v, conf = obs[k]
            if not np.isfinite(u) or not np.isfinite(v) or conf <= 0:
                continue
            pc = cam.R @ points[k] + cam.t
            if pc[2] <= 0:
                continue
            px = cam.focal * pc[0] / pc[2] + cam.principal[0]
            py = cam.focal * pc[1] / pc[2] + cam.principal[1]
            x2 = (px - u) ** 2 + (py - v) ** 2
            total += conf * sigma ** 2 * x2 / (sigma ** 2 + x2)
    return total


def monte_carlo_aligned_error(noise_m, n_joints, samples=200_000, seed=0):
    """Expected anchor-aligned mean joint error (mm) for isotropic Gaussian
    joint noise, with joint 0 as the anchor."""
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, noise_m, (samples, n_joints, 3))
    x -= x[:, :1]
    return float(1000.0 * np.linalg.norm(x, axis=2).mean())
