"""Finite-difference verification of the per-term objective gradients.

The surface terms depend on exact closest points, which are smooth only
away from ties between surface features. The fixture therefore places scan
points at face centroids pushed along the face normal (outward for skin and
most cloth, slightly inward for some cloth so the penetration branch is
active), keeps only points whose nearest feature is their own face interior,
and drops points within 2 cm of another capsule of the mesh. Scans are built
at the configuration being checked, so no point drifts toward an edge.
"""

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .bodymodel import BodyModel, BodyParams, forward
from .fitting.config import FitConfig, virtual_rig
from .fitting.fit import project_landmarks
from .fitting.objective import TERMS, Objective
from .fitting.scan import LabeledScan
from .geom import TriMesh, build_bvh, closest_points, surface_query

MARGIN_M = 0.02


def mesh_components(faces, n_vertices):
    """Connected-component label of every face."""
    f = np.asarray(faces)
    a = coo_matrix((np.ones(2 * len(f)), (np.r_[f[:, 0], f[:, 1]], np.r_[f[:, 1], f[:, 2]])),
                   shape=(n_vertices, n_vertices))
    _, lab = connected_components(a, directed=False)
    return lab[f[:, 0]]


def smooth_scan(model: BodyModel, params: BodyParams, rng, cloth_share=0.4, identity='gradcheck',
                exclude_hands=True, max_points=150):
    """Labelled point set around the posed model on which the surface
    energies are differentiable."""
    V = forward(model, params).vertices
    mesh = TriMesh(V, model.faces)
    F = len(mesh.faces)
    off = rng.uniform(0.002, 0.006, F)
    cloth = rng.random(F) < cloth_share
    off = np.where(cloth & (rng.random(F) < 0.5), -off / 4, off)
    cand = np.arange(F)
    if exclude_hands:
        hands = np.r_[model.part_sets['left_hand']['vertices'], model.part_sets['right_hand']['vertices']]
        cand = cand[~np.isin(mesh.faces, hands).any(1)]
    # oversample, since the tie and margin filters drop part of the candidates
    if len(cand) > 4 * max_points:
        cand = np.sort(rng.choice(cand, 4 * max_points, replace=False))
    pts = mesh.positions[mesh.faces[cand]].mean(1) + off[cand, None] * mesh.face_normals[cand]
    cp, _ = surface_query(mesh, pts)
    keep = (cp.triangle == cand) & (cp.region == 0)
    comp = mesh_components(mesh.faces, len(V))
    for c in np.unique(comp[cand[keep]]):
        sel = np.flatnonzero(keep & (comp[cand] == c))
        other = TriMesh(V, mesh.faces[comp != c])
        cpo = closest_points(other, build_bvh(other), pts[sel])
        keep[sel[cpo.distance < MARGIN_M]] = False
    idx = np.flatnonzero(keep)
    if len(idx) > max_points:
        idx = np.sort(rng.choice(idx, max_points, replace=False))
    pts, cl = pts[idx], cloth[cand[idx]]
    p_skin = np.where(cl, 0.1, 0.9)
    return LabeledScan(TriMesh(pts, np.zeros((0, 3), dtype=np.int64)), p_skin, 1.0 - p_skin,
                       np.zeros(len(pts)), identity, is_child=params.alpha < 1.0)


@dataclass
class GradCheck:
    term: str
    value: float
    rel_error: float        # |g_fd - g| / |g|, or |g_fd| when g = 0
    grad_norm: float


def gradient_fixture(model: BodyModel, rng, n_scans=2, config: FitConfig = None, pose_sigma=0.2):
    """(Objective, x) for a random child identity of ``n_scans`` scans with
    landmark detections carrying 3 px of noise, so every term is active."""
    from .synth import GenSpec, sample_pose, sample_shape
    config = config or FitConfig()
    spec = GenSpec(pose_sigma=pose_sigma)
    beta, _ = sample_shape(model, spec, rng, child=True)
    alpha = float(rng.uniform(0.2, 0.8))
    params = []
    for _ in range(n_scans):
        theta, z_h, psi = sample_pose(model, spec, rng)
        params.append(BodyParams(beta + rng.normal(0, 0.05, beta.shape), theta, z_h, psi, alpha,
                                 rng.normal(0, 0.2, 3), 'gradcheck'))
    scans = [smooth_scan(model, p, rng) for p in params]
    cams = [virtual_rig(s.points.mean(0), config) for s in scans]
    dets = [project_landmarks(model, p, c, 3.0, rng) for p, c in zip(params, cams)]
    obj = Objective(model, config, cams, dets, scans, child=True)
    return obj, obj.pack(params)


def check_gradients(obj: Objective, x, h=1e-5, terms=TERMS):
    """Compare each term's analytic gradient with central differences of the
    exact term (closest points recomputed at every evaluation)."""
    analytic = obj.term_grads(x)
    fd = {k: np.zeros(len(x)) for k in terms}
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = h
        up, down = obj.true_terms(x + e), obj.true_terms(x - e)
        for k in terms:
            fd[k][i] = (up[k] - down[k]) / (2 * h)
    out = []
    for k in terms:
        val, g = analytic[k]
        gn = float(np.linalg.norm(g))
        err = float(np.linalg.norm(fd[k] - g) / gn) if gn > 0 else float(np.linalg.norm(fd[k]))
        out.append(GradCheck(k, val, err, gn))
    return out
