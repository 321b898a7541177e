"""Fitting energy terms.

Every term is written as a residual vector ``r`` with energy ``|r|^2``, so
the same code feeds both the reported energies and the Gauss-Newton solver.
For the Geman-McClure terms a residual vector ``e`` becomes
``e * sigma / sqrt(sigma^2 + |e|^2)``, whose squared norm is
``rho_sigma(|e|)``.

Surface terms are evaluated through a frozen correspondence: for every scan
vertex the triangle and barycentric coordinates of its closest model point,
the unit direction from that point to the scan vertex, and the vertex's
inside/outside class. The frozen distance is the projection of
``s - m(params)`` on that direction (a point-to-plane residual, which lets
the surface slide tangentially during a solve). Where the correspondence was
computed it equals the exact closest-point distance, and since the closest
point is a minimizer its gradient equals the exact gradient too.
"""

import logging
from dataclasses import dataclass

import numpy as np
import torch

from ..bodymodel import BodyParams
from ..geom import TriMesh, build_bvh, closest_points, inside_mask, project

log = logging.getLogger(__name__)


class EnergyError(ValueError):
    pass


def gm_residual(e, sigma, weight=None):
    """Rows of ``e`` scaled so each row's squared norm is
    rho_sigma(sqrt(weight) * |e_row|)."""
    e2 = (e * e).sum(-1, keepdim=True)
    if weight is not None:
        w = weight[:, None]
        return torch.sqrt(w) * e * (sigma / torch.sqrt(sigma * sigma + w * e2))
    return e * (sigma / torch.sqrt(sigma * sigma + e2))


# --- landmarks ---------------------------------------------------------------

def landmark_masks(keypoints, cameras, observations):
    """Per camera the indices of usable landmarks (positive confidence,
    finite observation, projection in front of the camera), plus the number
    excluded for falling behind the camera."""
    keep, n_behind = [], 0
    for cam, obs in zip(cameras, observations):
        obs = np.asarray(obs, dtype=np.float64)
        used = (np.nan_to_num(obs[:, 2]) > 0) & np.isfinite(obs[:, :2]).all(1)
        _, front = project(cam, keypoints)
        n_behind += int((used & ~front).sum())
        keep.append(np.flatnonzero(used & front))
    return keep, n_behind


def landmark_residuals_t(keypoints, cameras, observations, keep, sigma):
    """Geman-McClure residuals of the usable landmarks of all cameras,
    projected in one batch."""
    cam_idx = np.concatenate([np.full(len(k), c) for c, k in enumerate(keep)] + [np.zeros(0, int)])
    kp_idx = np.concatenate(list(keep) + [np.zeros(0, int)]).astype(np.int64)
    if len(kp_idx) == 0:
        return keypoints.new_zeros(0)
    obs = np.concatenate([np.asarray(o, dtype=np.float64)[k] for o, k in zip(observations, keep)])
    R = torch.as_tensor(np.stack([c.R for c in cameras])[cam_idx])
    t = torch.as_tensor(np.stack([c.t for c in cameras])[cam_idx])
    f = torch.as_tensor(np.array([c.focal for c in cameras], dtype=np.float64)[cam_idx])[:, None]
    pp = torch.as_tensor(np.array([c.principal for c in cameras], dtype=np.float64)[cam_idx])
    pc = (R @ keypoints[torch.as_tensor(kp_idx)][:, :, None])[..., 0] + t
    uv = f * pc[:, :2] / pc[:, 2:3] + pp
    e = uv - torch.as_tensor(obs[:, :2])
    # conf * rho(|e|): the confidence scales the robust cost, not the error
    conf = torch.as_tensor(obs[:, 2:3])
    return (torch.sqrt(conf) * gm_residual(e, sigma)).reshape(-1)


def landmark_energy(keypoints, cameras, observations, sigma=100.0):
    """Sum over cameras and landmarks of conf * rho(|project(x) - obs|).
    Projections behind a camera are excluded and counted in the log. Raises
    :class:`EnergyError` when no landmark is usable in any view."""
    kp = np.asarray(keypoints, dtype=np.float64)
    keep, n_behind = landmark_masks(kp, cameras, observations)
    if n_behind:
        log.info('%d landmark projections behind the camera were excluded', n_behind)
    if sum(len(k) for k in keep) == 0:
        raise EnergyError('no valid landmark in any view')
    with torch.no_grad():
        r = landmark_residuals_t(torch.as_tensor(kp), cameras, observations, keep, sigma)
    return float((r * r).sum())


# --- surface terms -----------------------------------------------------------

@dataclass
class Correspondence:
    points: np.ndarray       # (S, 3) scan vertices entering the surface terms
    corner: np.ndarray       # (S, 3) model vertex ids of the closest triangle
    bary: np.ndarray         # (S, 3)
    direction: np.ndarray    # (S, 3) unit, closest point -> scan vertex
    inside: np.ndarray       # (S,) bool, penetrating points
    w_skin: np.ndarray       # (S,)
    w_cloth: np.ndarray      # (S,)
    distance: np.ndarray     # (S,) at the configuration it was computed for


def correspond(points, w_skin, w_cloth, vertices, faces, bvh=None, mesh=None):
    mesh = mesh if mesh is not None else TriMesh(vertices, faces)
    bvh = bvh if bvh is not None else build_bvh(mesh)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cp = closest_points(mesh, bvh, points)
    normals = mesh.pseudo_normals(cp.triangle, cp.region)
    diff = points - cp.point
    on_surface = cp.distance <= 1e-12
    direction = np.where(on_surface[:, None], mesh.face_normals[cp.triangle],
                         diff / np.where(on_surface, 1.0, cp.distance)[:, None])
    return Correspondence(points, mesh.faces[cp.triangle], cp.bary, direction,
                          inside_mask(points, cp.point, normals),
                          np.asarray(w_skin, dtype=np.float64), np.asarray(w_cloth, dtype=np.float64),
                          cp.distance)


def scan_correspondence(scan, vertices, faces, bvh=None, mesh=None):
    """Correspondence for the scan vertices that enter the surface terms
    ("other"-dominant vertices are left out)."""
    m = scan.surface_mask
    return correspond(scan.points[m], scan.p_skin[m], scan.p_cloth[m], vertices, faces, bvh, mesh)


def surface_residuals_t(vertices, corr: Correspondence, sigma, lambda_inner):
    """(skin, cloth) residuals of a frozen correspondence; vertices (V, 3).
    Skin: rho(sqrt(p_skin) d) per point. Cloth: rho(sqrt(p_cloth) d) outside,
    lambda_inner * p_cloth * d^2 inside. Zero-weight points are skipped."""
    skin_rows = np.flatnonzero(corr.w_skin > 0)
    out_rows = np.flatnonzero((corr.w_cloth > 0) & ~corr.inside)
    in_rows = np.flatnonzero((corr.w_cloth > 0) & corr.inside)
    rows = np.concatenate([skin_rows, out_rows, in_rows])
    # d = n . (s - sum_k b_k v_k) = n . s - sum_k b_k (n . v_k)
    n = corr.direction[rows]
    flat = torch.as_tensor(corr.corner[rows].reshape(-1))
    vn = (vertices.index_select(0, flat).view(len(rows), 3, 3) * torch.as_tensor(n)[:, None]).sum(-1)
    d = (torch.as_tensor((n * corr.points[rows]).sum(1))
         - (torch.as_tensor(corr.bary[rows]) * vn).sum(1))[:, None]
    ns, no = len(skin_rows), len(out_rows)
    skin = gm_residual(d[:ns], sigma, torch.as_tensor(corr.w_skin[skin_rows]))
    outer = gm_residual(d[ns:ns + no], sigma, torch.as_tensor(corr.w_cloth[out_rows]))
    inner = torch.sqrt(lambda_inner * torch.as_tensor(corr.w_cloth[in_rows]))[:, None] * d[ns + no:]
    return skin.reshape(-1), torch.cat([outer.reshape(-1), inner.reshape(-1)])


def _surface(scan, posed, faces, bvh, sigma, lambda_inner):
    corr = scan_correspondence(scan, posed.vertices, faces, bvh)
    with torch.no_grad():
        return [float((r * r).sum()) for r in
                surface_residuals_t(torch.as_tensor(posed.vertices), corr, sigma, lambda_inner)]


def skin_energy(scan, posed, faces, bvh=None, sigma=0.05):
    """Sum over scan vertices of rho(sqrt(p_skin) * dist(s, M))."""
    return _surface(scan, posed, faces, bvh, sigma, 0.0)[0]


def cloth_energy(scan, posed, faces, bvh=None, lambda_inner=100.0, sigma=0.05):
    """Robust pull on outside cloth points plus a quadratic penalty
    lambda_inner * p_cloth * dist^2 on penetrating ones."""
    return _surface(scan, posed, faces, bvh, sigma, lambda_inner)[1]


# --- priors and coupling -----------------------------------------------------

def interbeta_residuals_t(betas):
    """One residual block b_i - b_j per pair i < j."""
    n = betas.shape[0]
    if n < 2:
        return betas.new_zeros(0)
    i, j = np.triu_indices(n, 1)
    return (betas[i] - betas[j]).reshape(-1)


def interbeta_energy(betas):
    betas = np.atleast_2d(np.asarray(betas, dtype=np.float64))
    with torch.no_grad():
        r = interbeta_residuals_t(torch.as_tensor(betas))
    return float((r * r).sum())


def bend_residual_t(x):
    """Residual whose square is exp(x) - 1 - x for x > 0 and 0 otherwise,
    written as x * sqrt(h(x)) with h smooth so the derivative stays finite
    at the origin."""
    xp = torch.clamp(x, min=0.0)
    small = xp < 1e-3
    safe = torch.where(small, torch.ones_like(xp), xp)
    h = torch.where(small, 0.5 + xp / 6 + xp * xp / 24, (torch.expm1(safe) - safe) / (safe * safe))
    return xp * torch.sqrt(h)


@dataclass
class PriorWeights:
    theta_b: float = 0.0
    theta_h: float = 0.0
    beta: float = 0.0
    expr: float = 0.0
    bend: float = 0.0

    @classmethod
    def from_config(cls, c):
        return cls(c.lambda_theta_b, c.lambda_theta_h, c.lambda_beta, c.lambda_E, c.lambda_bend)


def regularizer_residuals_t(theta_b, z_h, beta, psi, w: PriorWeights, bend_joints):
    """L2 priors plus the elbow/knee bending barrier. The root orientation
    (row 0 of theta_b) is not penalized. ``bend_joints`` rows are
    (joint, axis, sign) with sign * theta[joint, axis] > 0 the impossible
    direction."""
    parts = [np.sqrt(w.theta_b) * theta_b[..., 1:, :].reshape(-1),
             np.sqrt(w.theta_h) * z_h.reshape(-1),
             np.sqrt(w.beta) * beta.reshape(-1),
             np.sqrt(w.expr) * psi.reshape(-1)]
    if len(bend_joints):
        bj = np.asarray(bend_joints)
        x = theta_b[..., bj[:, 0], bj[:, 1]] * torch.as_tensor(bj[:, 2], dtype=theta_b.dtype)
        parts.append(np.sqrt(w.bend) * bend_residual_t(x).reshape(-1))
    return torch.cat(parts)


def regularizer(params: BodyParams, weights: PriorWeights, bend_joints=()):
    t = lambda a: torch.as_tensor(np.asarray(a, dtype=np.float64))
    with torch.no_grad():
        r = regularizer_residuals_t(t(params.theta_b), t(params.z_h), t(params.beta),
                                    t(params.psi), weights, bend_joints)
    return float((r * r).sum())
