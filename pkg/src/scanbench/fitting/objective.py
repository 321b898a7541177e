"""The joint multi-scan objective over a flat parameter vector.

Layout: one block per scan ``[orient 3 | trans 3 | body 63 | hands 12 |
beta nb | psi ne]`` followed, for child groups, by one shared logit whose
sigmoid is the template blend alpha. Adult groups keep alpha fixed.
"""

import logging

import numpy as np
import torch

from ..bodymodel import N_BODY_JOINTS, N_HAND_LATENT, BodyModel, BodyParams, forward_t, keypoints_t
from ..geom import TriMesh, build_bvh, refit_bvh
from .config import FitConfig
from .energies import (EnergyError, PriorWeights, interbeta_residuals_t, landmark_masks,
                       landmark_residuals_t, regularizer_residuals_t, scan_correspondence,
                       surface_residuals_t)

log = logging.getLogger(__name__)

TERMS = ('landmark', 'skin', 'cloth', 'reg', 'interbeta')
ALPHA_EPS = 1e-6
# a scan's BVH is refitted while its mesh stays within this of the build pose
REBUILD_M = 0.05


def _logit(a):
    a = min(max(a, ALPHA_EPS), 1 - ALPHA_EPS)
    return float(np.log(a / (1 - a)))


class Objective:
    def __init__(self, model: BodyModel, config: FitConfig, cameras, detections, scans=None,
                 child=False, surface=True):
        """``cameras[i]`` / ``detections[i]``: rig and per-camera (K, 3)
        landmark observations for scan i. ``scans`` may be None for a
        landmark-only objective."""
        self.model = model
        self.config = config
        self.cameras = cameras
        self.detections = detections
        self.scans = scans
        self.n = len(cameras)
        self.child = bool(child)
        self.surface = surface and scans is not None
        nb, ne = model.n_beta, model.n_psi
        sizes = [('orient', 3), ('trans', 3), ('body', 3 * (N_BODY_JOINTS - 1)),
                 ('hands', 2 * N_HAND_LATENT), ('beta', nb), ('psi', ne)]
        self.slices, o = {}, 0
        for name, k in sizes:
            self.slices[name] = slice(o, o + k)
            o += k
        self.block = o
        self.size = self.n * o + (1 if self.child else 0)
        self.alpha_fixed = np.ones(self.n)
        self.identity = ''
        self.weights = PriorWeights.from_config(config)
        self.corr = None
        self.keep = None
        self._corr_at = None
        self._verts_at = None
        self._bvh = [None] * self.n
        self._bvh_verts = [None] * self.n

    # --- packing ---------------------------------------------------------

    def pack(self, params_list):
        x = np.zeros(self.size)
        for i, p in enumerate(params_list):
            b = x[i * self.block:(i + 1) * self.block]
            b[self.slices['orient']] = p.theta_b[0]
            b[self.slices['trans']] = p.trans
            b[self.slices['body']] = p.theta_b[1:].ravel()
            b[self.slices['hands']] = p.z_h.ravel()
            b[self.slices['beta']] = p.beta
            b[self.slices['psi']] = p.psi
            self.alpha_fixed[i] = p.alpha
        self.identity = params_list[0].identity if params_list else ''
        if self.child:
            x[-1] = _logit(float(np.mean([p.alpha for p in params_list])))
        return x

    def alphas(self, x):
        if self.child:
            return np.full(self.n, 1.0 / (1.0 + np.exp(-x[-1])))
        return self.alpha_fixed.copy()

    def unpack(self, x):
        out = []
        alphas = self.alphas(x)
        for i in range(self.n):
            b = x[i * self.block:(i + 1) * self.block]
            theta = np.concatenate([b[self.slices['orient']], b[self.slices['body']]]).reshape(-1, 3)
            out.append(BodyParams(b[self.slices['beta']].copy(), theta,
                                  b[self.slices['hands']].reshape(2, -1).copy(),
                                  b[self.slices['psi']].copy(), float(np.clip(alphas[i], 0, 1)),
                                  b[self.slices['trans']].copy(), self.identity))
        return out

    def indices(self, blocks):
        idx = []
        for name in blocks:
            if name == 'alpha':
                if self.child:
                    idx.append(np.array([self.size - 1]))
                continue
            s = self.slices[name]
            idx += [np.arange(s.start, s.stop) + i * self.block for i in range(self.n)]
        return np.sort(np.concatenate(idx)) if idx else np.zeros(0, dtype=np.int64)

    # --- evaluation ------------------------------------------------------

    def _unpack_t(self, xt):
        X = xt[:self.n * self.block].view(self.n, self.block)
        s = self.slices
        theta = torch.cat([X[:, s['orient']], X[:, s['body']]], 1).view(self.n, N_BODY_JOINTS, 3)
        if self.child:
            alpha = torch.sigmoid(xt[-1]).expand(self.n)
        else:
            alpha = torch.as_tensor(self.alpha_fixed)
        return (X[:, s['beta']], theta, X[:, s['hands']].view(self.n, 2, N_HAND_LATENT),
                X[:, s['psi']], alpha, X[:, s['trans']])

    def posed_t(self, xt):
        return forward_t(self.model, *self._unpack_t(xt))

    def refresh(self, x):
        """Recompute closest-point correspondences, inside/outside classes
        and usable-landmark masks at ``x``."""
        if self._corr_at is not None and np.array_equal(self._corr_at, x):
            return
        with torch.no_grad():
            verts, joints, _ = self.posed_t(torch.as_tensor(x))
            kp = keypoints_t(self.model, verts, joints).numpy()
        self._posed = (verts, joints)
        self.keep, n_behind, n_valid = [], 0, 0
        for i in range(self.n):
            k, nb = landmark_masks(kp[i], self.cameras[i], self.detections[i])
            self.keep.append(k)
            n_behind += nb
            n_valid += sum(len(a) for a in k)
        if n_behind:
            log.info('%d landmark projections behind the camera excluded', n_behind)
        if n_valid == 0:
            raise EnergyError('no valid landmark in any view')
        if self.surface:
            # a scan whose posed mesh did not move keeps its correspondence
            V = verts.numpy()
            old = self._verts_at
            self.corr = [self.corr[i] if old is not None and np.array_equal(old[i], V[i])
                         else scan_correspondence(s, V[i], self.model.faces, *self._tree(i, V[i]))
                         for i, s in enumerate(self.scans)]
            self._verts_at = V.copy()
        self._corr_at = np.array(x, copy=True)

    def _tree(self, i, V):
        mesh = TriMesh(V, self.model.faces)
        base = self._bvh_verts[i]
        if base is None or np.abs(V - base).max() > REBUILD_M:
            self._bvh[i], self._bvh_verts[i] = build_bvh(mesh), V.copy()
        else:
            self._bvh[i] = refit_bvh(self._bvh[i], mesh)
        return self._bvh[i], mesh

    def residuals_t(self, xt, posed=None):
        """Residual vector per term, using the state frozen by the last
        :meth:`refresh`; each term's energy is the squared norm. ``posed``
        may carry an already computed (verts, joints) for ``xt``."""
        c = self.config
        beta, theta, z_h, psi, alpha, trans = self._unpack_t(xt)
        if posed is None:
            verts, joints, _ = forward_t(self.model, beta, theta, z_h, psi, alpha, trans)
        else:
            verts, joints = posed
        kp = keypoints_t(self.model, verts, joints)
        empty = xt.new_zeros(0)
        out = dict.fromkeys(TERMS, empty)
        lam_j = c.lambda_J if self.surface else 1.0
        out['landmark'] = np.sqrt(lam_j) * torch.cat(
            [landmark_residuals_t(kp[i], self.cameras[i], self.detections[i], self.keep[i], c.sigma_px)
             for i in range(self.n)])
        out['reg'] = regularizer_residuals_t(theta, z_h, beta, psi, self.weights, self.model.bend_joints)
        if self.surface:
            skin, cloth = zip(*[surface_residuals_t(verts[i], self.corr[i], c.sigma_m, c.lambda_inner)
                                for i in range(self.n)])
            out['skin'] = np.sqrt(c.lambda_s) * torch.cat(skin)
            out['cloth'] = np.sqrt(c.lambda_c) * torch.cat(cloth)
            out['interbeta'] = np.sqrt(c.lambda_ib) * interbeta_residuals_t(beta)
        return out

    def residual_vector_t(self, xt):
        return torch.cat(list(self.residuals_t(xt).values()))

    def terms_t(self, xt, posed=None):
        """Weighted term contributions; their sum is the objective."""
        return {k: (r * r).sum() for k, r in self.residuals_t(xt, posed).items()}

    def value_grad(self, x):
        xt = torch.tensor(x, requires_grad=True)
        total = sum(self.terms_t(xt).values())
        total.backward()
        return float(total.detach()), xt.grad.numpy().copy()

    def term_grads(self, x):
        """Per-term (value, gradient) at ``x`` with the frozen state refreshed
        at ``x``."""
        self.refresh(x)
        out = {}
        for name in TERMS:
            xt = torch.tensor(x, requires_grad=True)
            e = self.terms_t(xt)[name]
            if e.requires_grad:
                e.backward()
                g = xt.grad.numpy().copy()
            else:
                g = np.zeros_like(x)
            out[name] = (float(e.detach()), g)
        return out

    def true_terms(self, x):
        self.refresh(x)
        with torch.no_grad():
            return {k: float(v) for k, v in self.terms_t(torch.as_tensor(x), self._posed).items()}
