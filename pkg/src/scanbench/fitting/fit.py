"""Two-stage fitting: multi-view landmark initialization, then joint
landmark + surface refinement over all scans of one identity."""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import torch
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.transform import Rotation

from ..bodymodel import BodyModel, BodyParams, forward, interpolate_template, keypoints
from ..geom import project
from .config import BLOCKS, FitConfig, virtual_rig
from .objective import TERMS, Objective
from .quality import cloth_penetration_error, skin_error

log = logging.getLogger(__name__)

BACKTRACK = (0.5, 0.25, 0.125, 0.0625)
SHRINK = (1.0, 0.1, 0.01)


class FitError(ValueError):
    pass


@dataclass
class ConvergenceRecord:
    final_energy: float
    initial_energy: float
    iterations: int
    terms: dict
    converged: bool
    message: str = ''


@dataclass
class FitResult:
    params: list                      # BodyParams per scan
    records: list                     # ConvergenceRecord per scan
    log: list = field(default_factory=list)   # rows: stage, iteration, total, per-term
    quality: list = field(default_factory=list)

    @property
    def converged(self):
        return all(r.converged for r in self.records)


def project_landmarks(model: BodyModel, params: BodyParams, cameras, noise_px=0.0, rng=None):
    """Synthetic detections: per camera a (K, 3) array of (u, v, confidence),
    confidence 0 and NaN pixels where the keypoint is behind the camera."""
    kp = keypoints(model, forward(model, params))
    out = []
    for cam in cameras:
        uv, valid = project(cam, kp)
        if noise_px:
            uv = uv + rng.normal(0.0, noise_px, uv.shape)
        out.append(np.column_stack([uv, valid.astype(np.float64)]))
    return out


@dataclass
class SolveInfo:
    nit: int
    energy: float
    message: str


def gauss_newton(residual, z0, maxiter, ftol=1e-12, xtol=1e-10, max_step=None):
    """Minimize |residual(z)|^2 by Levenberg-damped Gauss-Newton steps with an
    Armijo backtracking line search. ``residual`` maps a float64 tensor to a
    residual tensor and must be differentiable by ``torch.func.jacfwd``.
    ``max_step`` caps the largest entry of a step."""
    z = torch.as_tensor(np.asarray(z0, dtype=np.float64)).clone()
    with torch.no_grad():
        r = residual(z)
    energy = float(r @ r)
    mu = 1e-6
    jac = torch.func.jacfwd(residual)
    message = 'maximum iterations reached'
    it = 0
    for it in range(1, maxiter + 1):
        J = jac(z).numpy()
        rn = r.numpy()
        g = J.T @ rn
        H = J.T @ J
        d = np.diag(H).copy()
        d = np.maximum(d, 1e-12 * max(d.max(), 1e-300))
        while True:
            try:
                step = -cho_solve(cho_factor(H + mu * np.diag(d)), g)
                break
            except np.linalg.LinAlgError:
                mu *= 10.0
        if max_step is not None and np.abs(step).max() > max_step:
            step *= max_step / np.abs(step).max()
        slope = 2.0 * g @ step
        if not slope < 0:
            message = 'no descent direction'
            break
        t = 1.0
        with torch.no_grad():
            while t >= 1e-10:
                z_try = z + t * torch.as_tensor(step)
                r_try = residual(z_try)
                e_try = float(r_try @ r_try)
                if e_try <= energy + 1e-4 * t * slope:
                    break
                t *= 0.5
            else:
                message = 'line search failed'
                break
        mu = max(mu / 3.0, 1e-12) if t == 1.0 else min(mu * 4.0, 1e8)
        log.debug("gauss-newton %d: energy %.17g step %g damping %g", it, e_try, t, mu)
        gain = energy - e_try
        z, r, energy = z_try, r_try, e_try
        if gain <= ftol * max(energy, 1e-300):
            message = 'relative energy decrease below tolerance'
            break
        if t * np.abs(step).max() <= xtol:
            message = 'step below tolerance'
            break
    return z.numpy(), SolveInfo(it, energy, message)


def _solve(obj: Objective, x, free, config, maxiter):
    """Solve the frozen-state problem over the entries ``free`` of ``x``."""
    base = torch.as_tensor(x)
    sel = torch.zeros(len(x), len(free), dtype=torch.float64)
    sel[free, np.arange(len(free))] = 1.0
    z0 = torch.as_tensor(x[free])

    def residual(z):
        return obj.residual_vector_t(base + sel @ (z - z0))

    z, info = gauss_newton(residual, x[free], maxiter, config.ftol, config.xtol, config.max_step)
    out = x.copy()
    out[free] = z
    return out, info


def initial_params(model: BodyModel, scan, identity='', child=False):
    """Rest pose translated so the template centroid sits on the scan
    centroid; children start half way between the templates."""
    alpha = 0.5 if child else 1.0
    p = BodyParams.zeros(model, identity=identity, alpha=alpha)
    p.trans = scan.points.mean(0) - interpolate_template(model, alpha).mean(0)
    return p


def fit_multiview_init(model: BodyModel, scan, config: FitConfig, cameras, detections, init=None):
    """Minimize the landmark reprojection energy plus priors over all
    parameters, starting from the rest pose. Returns (params, record)."""
    n_ok = sum(int(((np.nan_to_num(d[:, 2]) > 0) & np.isfinite(d[:, :2]).all(1)).sum())
               for d in detections)
    if n_ok < 6:
        raise FitError(f'need at least 6 valid landmarks, got {n_ok}')
    child = bool(getattr(scan, 'is_child', False))
    init = init if init is not None else initial_params(model, scan, scan.identity, child)
    obj = Objective(model, config, [cameras], [detections], scans=None, child=child)
    x = obj.pack([init])
    e0 = sum(obj.true_terms(x).values())
    iters = 0
    # the landmark energy has flipped minima for bodies facing away from the
    # start, so the first stage runs from several headings about the up axis
    orient = obj.indices(('orient',))
    best = None
    for k in range(config.init_headings):
        x0 = x.copy()
        yaw = Rotation.from_rotvec([0.0, 2 * np.pi * k / config.init_headings, 0.0])
        x0[orient] = (yaw * Rotation.from_rotvec(x[orient])).as_rotvec()
        xk, res = _solve(obj, x0, obj.indices(config.stages[0]), config, config.init_max_iter)
        iters += res.nit
        if best is None or res.energy < best[1]:
            best = xk, res.energy
    x = best[0]
    for blocks in config.stages[1:]:
        x, res = _solve(obj, x, obj.indices(blocks), config, config.init_max_iter)
        iters += res.nit
    x[orient] = Rotation.from_rotvec(x[orient]).as_rotvec()
    terms = obj.true_terms(x)
    e1 = sum(terms.values())
    ok = e1 <= e0
    if not ok:
        log.warning('multi-view initialization did not decrease the energy (%g -> %g)', e0, e1)
        x = obj.pack([init])
        terms = obj.true_terms(x)
    rec = ConvergenceRecord(min(e0, e1), e0, iters, terms, ok and e1 < e0 or e0 == 0.0,
                            '' if ok else 'energy did not decrease')
    return obj.unpack(x)[0], rec


def fit_refine(model: BodyModel, scans, init_params, config: FitConfig, cameras, detections):
    """Joint refinement of all scans of one identity. ``cameras[i]`` and
    ``detections[i]`` belong to scan i."""
    if not scans:
        raise FitError('no scans to fit')
    ids = {s.identity for s in scans}
    if len(ids) != 1:
        raise FitError(f'scans must share one identity, got {sorted(ids)}')
    child = any(s.is_child for s in scans)
    obj = Objective(model, config, cameras, detections, scans=scans, child=child)
    x = obj.pack([p.copy(identity=scans[0].identity) for p in init_params])
    terms = obj.true_terms(x)
    energy = e_init = sum(terms.values())
    rows = [_row('init', 0, energy, terms)]
    iters = 0
    n_stages = len(config.stages)
    for si, blocks in enumerate(config.stages):
        last = si == n_stages - 1
        n_outer = config.max_outer if last else config.stage_outer[min(si, len(config.stage_outer) - 1)]
        free = obj.indices(blocks)
        for it in range(n_outer):
            x_new = None
            # shrink the step cap when the frozen surrogate's step does not
            # decrease the exact energy anywhere along the backtracking path
            for shrink in SHRINK:
                obj.refresh(x)
                cfg = replace(config, max_step=config.max_step * shrink)
                x_cand, res = _solve(obj, x, free, cfg, config.max_iter)
                iters += res.nit
                for frac in (1.0, *BACKTRACK):
                    x_try = x + frac * (x_cand - x)
                    t_try = obj.true_terms(x_try)
                    if sum(t_try.values()) <= energy:
                        x_new, t_new, e_new = x_try, t_try, sum(t_try.values())
                        break
                if x_new is not None:
                    break
            if x_new is None:
                log.info('stage %d outer %d: no decrease, keeping previous iterate', si, it)
                obj.refresh(x)
                break
            gain = energy - e_new
            x, terms, energy = x_new, t_new, e_new
            rows.append(_row(f'stage{si}', it + 1, energy, terms))
            if gain <= config.outer_rtol * max(energy, 1e-300):
                break
    # energies are non-increasing by construction; keep the invariant explicit
    totals = [r['total'] for r in rows]
    assert all(b <= a for a, b in zip(totals, totals[1:])), 'outer energy increased'
    converged = energy < e_init or e_init == 0.0
    params = obj.unpack(x)
    per_scan = _per_scan_terms(model, config, scans, params, cameras, detections)
    records = [ConvergenceRecord(sum(t.values()), float('nan'), iters, t, converged,
                                 '' if converged else 'energy did not decrease')
               for t in per_scan]
    quality = [fit_quality(model, s, p) for s, p in zip(scans, params)]
    return FitResult(params, records, rows, quality)


def _row(stage, it, total, terms):
    r = {'stage': stage, 'iteration': it, 'total': total}
    r.update({k: terms[k] for k in TERMS})
    return r


def _per_scan_terms(model, config, scans, params, cameras, detections):
    out = []
    for i, s in enumerate(scans):
        o = Objective(model, config, [cameras[i]], [detections[i]], scans=[s], child=False)
        x = o.pack([params[i]])
        out.append(o.true_terms(x))
    return out


def fit_quality(model, scan, params):
    posed = forward(model, params)
    pct, mm = cloth_penetration_error(scan, posed, model.faces)
    return {'skin_error_mm': skin_error(scan, posed, model.faces),
            'penetration_percent': pct, 'penetration_mm': mm}


def fit_identity(model: BodyModel, scans, config: FitConfig, detections, cameras=None):
    """Full pipeline for one identity: per-scan initialization followed by
    joint refinement. ``cameras`` defaults to the virtual rig around each
    scan's centroid."""
    if cameras is None:
        cameras = [virtual_rig(s.points.mean(0), config) for s in scans]
    inits, init_records = [], []
    for s, cams, det in zip(scans, cameras, detections):
        p, rec = fit_multiview_init(model, s, config, cams, det)
        inits.append(p)
        init_records.append(rec)
    if any(s.is_child for s in scans):
        a = float(np.mean([p.alpha for p in inits]))
        inits = [p.copy(alpha=a) for p in inits]
    result = fit_refine(model, scans, inits, config, cameras, detections)
    for r, ir in zip(result.records, init_records):
        r.initial_energy = ir.initial_energy
    return result
