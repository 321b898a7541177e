import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from scanbench.bodymodel import BodyParams, PosedBody, forward, keypoints
from scanbench.fitting import (FitConfig, LabeledScan, Objective, PriorWeights, ScanError, cloth_energy,
                               cloth_penetration_error, fit_multiview_init, fit_refine, geman_mcclure,
                               interbeta_energy, landmark_energy, load_scan, project_landmarks, regularizer,
                               save_scan, skin_energy, skin_error, virtual_rig)
from scanbench.fitting.fit import gauss_newton
from scanbench.geom import Camera, TriMesh, project
from scanbench.oracles import brute_closest_point, naive_landmark_energy
from scanbench.synth import GenSpec, gen_scan_set

EMPTY = np.zeros((0, 3), dtype=np.int64)


def point_scan(points, p_skin, p_cloth, identity='t'):
    points = np.asarray(points, dtype=np.float64)
    p_skin = np.broadcast_to(np.asarray(p_skin, dtype=np.float64), len(points)).copy()
    p_cloth = np.broadcast_to(np.asarray(p_cloth, dtype=np.float64), len(points)).copy()
    p_other = np.clip(1.0 - p_skin - p_cloth, 0.0, 1.0)
    return LabeledScan(TriMesh(points, EMPTY), p_skin, p_cloth, p_other, identity)


def flat_body():
    """A 20 m square in z=0 with its normal along +z."""
    v = np.array([[-10, -10, 0], [10, -10, 0], [10, 10, 0], [-10, 10, 0]], dtype=np.float64)
    f = np.array([[0, 1, 2], [0, 2, 3]])
    return PosedBody(v, np.zeros((1, 3)), np.zeros((1, 4, 4))), f


def flat_points(n, height, seed=0):
    xy = np.random.default_rng(seed).uniform(-1, 1, (n, 2))
    return np.column_stack([xy, np.full(n, height)])


# --- robust penalty ---------------------------------------------------------------

def test_geman_mcclure_examples():
    assert geman_mcclure(0.0, 1.0) == 0.0
    assert geman_mcclure(1.0, 1.0) == 0.5
    assert geman_mcclure(1e6, 3.0) == pytest.approx(9.0, rel=1e-6)
    with pytest.raises(ValueError):
        geman_mcclure(1.0, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(1e-3, 1e2))
def test_geman_mcclure_even_and_bounded(x, s):
    r = geman_mcclure(x, s)
    assert r == geman_mcclure(-x, s)
    assert 0.0 <= r <= s * s


# --- landmark term ----------------------------------------------------------------

def _landmark_setup(model, params, n_cams=4):
    kp = keypoints(model, forward(model, params))
    cams = virtual_rig(kp.mean(0), FitConfig(n_cameras=n_cams))
    return kp, cams, project_landmarks(model, params, cams)


def test_landmark_self_consistent_is_zero(model, random_params):
    kp, cams, obs = _landmark_setup(model, random_params())
    assert landmark_energy(kp, cams, obs) == 0.0


def test_landmark_single_offset(model):
    cam = Camera(100.0, (0.0, 0.0), 100, 100)
    kp = np.array([[0.0, 0.0, 2.0], [0.5, 0.0, 2.0]])
    uv, _ = project(cam, kp)
    obs = np.column_stack([uv, np.ones(2)])
    obs[1, 0] += 7.0
    assert landmark_energy(kp, [cam], [obs], sigma=10.0) == pytest.approx(geman_mcclure(7.0, 10.0), rel=1e-14)


def test_landmark_matches_naive_sum(model, random_params, rng):
    kp, cams, obs = _landmark_setup(model, random_params())
    obs = [o.copy() for o in obs]
    for o in obs:
        o[:, :2] += rng.normal(0, 20, o[:, :2].shape)
        o[:, 2] = rng.uniform(0, 1, len(o))
        o[rng.random(len(o)) < 0.1, :2] = np.nan
    got = landmark_energy(kp, cams, obs, sigma=50.0)
    want = naive_landmark_energy(kp, cams, obs, 50.0)
    assert got == pytest.approx(want, rel=1e-12)


# --- surface terms ----------------------------------------------------------------

def test_skin_on_surface_is_zero(model, random_params):
    posed = forward(model, random_params())
    scan = point_scan(posed.vertices, 1.0, 0.0)
    assert skin_energy(scan, posed, model.faces) == pytest.approx(0.0, abs=1e-24)
    assert skin_error(scan, posed, model.faces) == pytest.approx(0.0, abs=1e-9)


def test_zero_weights_give_zero(model, random_params, rng):
    posed = forward(model, random_params())
    pts = posed.vertices + rng.normal(0, 0.01, posed.vertices.shape)
    assert skin_energy(point_scan(pts, 0.0, 1.0), posed, model.faces) == 0.0
    assert cloth_energy(point_scan(pts, 1.0, 0.0), posed, model.faces) == 0.0


def test_skin_matches_brute_force(model, random_params, rng):
    posed = forward(model, random_params())
    idx = rng.choice(len(posed.vertices), 200, replace=False)
    pts = posed.vertices[idx] + rng.normal(0, 0.02, (200, 3))
    p = rng.uniform(0.5, 1.0, 200)
    scan = point_scan(pts, p, 1.0 - p)
    sigma = 0.05
    want = 0.0
    for q, w in zip(pts, p):
        d, _, _ = brute_closest_point(posed.vertices, model.faces, q)
        want += geman_mcclure(np.sqrt(w) * d, sigma)
    assert skin_energy(scan, posed, model.faces, sigma=sigma) == pytest.approx(want, rel=1e-10)


def test_cloth_outside_flat_region():
    posed, faces = flat_body()
    p = np.linspace(0.2, 1.0, 50)
    scan = point_scan(flat_points(50, 0.005), 1.0 - p, p)
    for lam in (0.0, 1.0, 1e3):
        e = cloth_energy(scan, posed, faces, lambda_inner=lam, sigma=0.05)
        assert e == pytest.approx(geman_mcclure(np.sqrt(p) * 0.005, 0.05).sum(), rel=1e-12)


def test_cloth_inside_flat_region():
    posed, faces = flat_body()
    p = np.linspace(0.2, 1.0, 50)
    d = 0.003
    scan = point_scan(flat_points(50, -d), 1.0 - p, p)
    e = cloth_energy(scan, posed, faces, lambda_inner=100.0, sigma=0.05)
    assert e == pytest.approx(100.0 * (p * d * d).sum(), rel=1e-12)
    # the oracle confirms the distance really is d
    assert brute_closest_point(posed.vertices, faces, scan.points[0])[0] == pytest.approx(d)


def test_surface_terms_invariant_under_reordering(model, random_params, rng):
    posed = forward(model, random_params())
    pts = posed.vertices + rng.normal(0, 0.01, posed.vertices.shape)
    p = rng.uniform(0, 1, len(pts))
    perm = rng.permutation(len(pts))
    a, b = point_scan(pts, p, 1 - p), point_scan(pts[perm], p[perm], 1 - p[perm])
    assert skin_energy(a, posed, model.faces) == pytest.approx(skin_energy(b, posed, model.faces), rel=1e-12)
    assert cloth_energy(a, posed, model.faces) == pytest.approx(cloth_energy(b, posed, model.faces), rel=1e-12)


# --- priors ------------------------------------------------------------------------

def test_interbeta_examples(rng):
    b = rng.normal(size=10)
    assert interbeta_energy([b, b]) == 0.0
    e1 = np.eye(10)[0]
    assert interbeta_energy([e1, -e1]) == 4.0
    betas = rng.normal(size=(3, 10))
    want = sum(np.sum((betas[i] - betas[j]) ** 2) for i in range(3) for j in range(i + 1, 3))
    assert interbeta_energy(betas) == pytest.approx(want, rel=1e-14)


def test_regularizer_examples(model, rng):
    p = BodyParams.zeros(model)
    assert regularizer(p, PriorWeights(1, 1, 1, 1, 1), model.bend_joints) == 0.0
    p.beta[0] = 1.0
    assert regularizer(p, PriorWeights(beta=2.0)) == pytest.approx(2.0, rel=1e-15)
    q = BodyParams.zeros(model).copy(beta=rng.normal(size=model.n_beta), theta_b=rng.normal(0, 0.3, (22, 3)),
                                     z_h=rng.normal(size=(2, 6)), psi=rng.normal(size=model.n_psi))
    w = PriorWeights(0.3, 0.2, 0.5, 0.7, 0.0)
    want = (0.3 * np.sum(q.theta_b[1:] ** 2) + 0.2 * np.sum(q.z_h ** 2) + 0.5 * np.sum(q.beta ** 2)
            + 0.7 * np.sum(q.psi ** 2))
    assert regularizer(q, w, model.bend_joints) == pytest.approx(want, rel=1e-12)


def test_bend_barrier_one_sided(model):
    j, axis, sign = model.bend_joints[0]
    w = PriorWeights(bend=1.0)
    p = BodyParams.zeros(model)
    p.theta_b[j, axis] = -sign * 0.5          # feasible direction
    assert regularizer(p, w, model.bend_joints) == 0.0
    p.theta_b[j, axis] = sign * 0.5           # impossible direction
    assert regularizer(p, w, model.bend_joints) == pytest.approx(np.expm1(0.5) - 0.5, rel=1e-12)


# --- fit-quality measures ------------------------------------------------------------

def test_skin_error_flat_offset():
    posed, faces = flat_body()
    scan = point_scan(flat_points(40, 0.005), 1.0, 0.0)
    assert skin_error(scan, posed, faces) == pytest.approx(5.0)
    p = np.random.default_rng(0).uniform(0.1, 1, 40)
    h = np.random.default_rng(1).uniform(0.001, 0.01, 40)
    pts = flat_points(40, 0.0)
    pts[:, 2] = h
    want = 1000 * (p * h).sum() / p.sum()
    assert skin_error(point_scan(pts, p, 1 - p), posed, faces) == pytest.approx(want)


def test_penetration_examples():
    posed, faces = flat_body()
    assert cloth_penetration_error(point_scan(flat_points(20, 0.004), 0.0, 1.0), posed, faces) == (0.0, None)
    pct, mm = cloth_penetration_error(point_scan(flat_points(20, -0.005), 0.0, 1.0), posed, faces)
    assert pct == 100.0 and mm == pytest.approx(5.0)
    pts = flat_points(20, 0.004)
    pts[::2, 2] = -0.004
    pct, _ = cloth_penetration_error(point_scan(pts, 0.0, 1.0), posed, faces)
    assert pct == 50.0
    assert skin_error(point_scan(pts, 0.0, 1.0), posed, faces) is None


def test_scan_validation_and_round_trip(tmp_path, model):
    posed = forward(model, BodyParams.zeros(model))
    with pytest.raises(ScanError):
        point_scan(posed.vertices[:3], 0.6, 0.6)
    with pytest.raises(ScanError):
        point_scan(posed.vertices[:3], 1.0, 0.0, identity='')
    scan = LabeledScan(TriMesh(posed.vertices, model.faces), np.full(model.n_vertices, 0.7),
                       np.full(model.n_vertices, 0.2), np.full(model.n_vertices, 0.1), 'id7', True)
    save_scan(scan, tmp_path, 's')
    back = load_scan(tmp_path, 's')
    assert np.array_equal(back.points, scan.points) and back.identity == 'id7' and back.is_child
    np.testing.assert_allclose(back.p_cloth, scan.p_cloth)


def test_config_validation():
    with pytest.raises(ValueError):
        FitConfig(lambda_s=-1.0)
    with pytest.raises(ValueError):
        FitConfig(sigma_m=0.0)
    with pytest.raises(ValueError):
        FitConfig(n_cameras=0)
    with pytest.raises(ValueError):
        FitConfig(max_step=0.0)
    with pytest.raises(ValueError):
        FitConfig(init_headings=0)
    c = FitConfig(lambda_ib=3.0)
    assert FitConfig.from_dict(c.to_dict()) == c


def test_gauss_newton_linear_least_squares(rng):
    A = torch.as_tensor(rng.normal(size=(12, 4)))
    b = torch.as_tensor(rng.normal(size=12))
    z, info = gauss_newton(lambda z: A @ z - b, np.zeros(4), 20)
    ref = np.linalg.lstsq(A.numpy(), b.numpy(), rcond=None)[0]
    np.testing.assert_allclose(z, ref, atol=1e-8)


def test_gauss_newton_step_cap():
    target = torch.tensor([10.0, -4.0])
    z, info = gauss_newton(lambda z: z - target, np.zeros(2), 3, max_step=0.5)
    assert info.nit == 3
    assert np.abs(z).max() <= 1.5 + 1e-12
    z, _ = gauss_newton(lambda z: z - target, np.zeros(2), 40, max_step=0.5)
    np.testing.assert_allclose(z, target.numpy(), atol=1e-9)


# --- objective bookkeeping -------------------------------------------------------------

def test_total_equals_breakdown(model):
    spec = GenSpec(seed=5, scans_per_identity=2)
    items = gen_scan_set(model, spec, n_scans=2, clothed=True, child=True)
    obj = Objective(model, FitConfig(), [i['cameras'] for i in items], [i['detections'] for i in items],
                    [i['scan'] for i in items], child=True)
    x = obj.pack([i['params'].copy(beta=i['params'].beta + 0.1, alpha=0.5) for i in items])
    terms = obj.true_terms(x)
    assert all(np.isfinite(v) and v >= 0 for v in terms.values())
    value, grad = obj.value_grad(x)
    assert value == pytest.approx(sum(terms.values()), rel=1e-9)
    assert np.isfinite(grad).all()


# --- solvers ----------------------------------------------------------------------------

@pytest.mark.slow
def test_multiview_init_recovers_joints(model):
    item = gen_scan_set(model, GenSpec(seed=11, pose_sigma=0.2), n_scans=1, clothed=False, child=False)[0]
    params, rec = fit_multiview_init(model, item['scan'], FitConfig(), item['cameras'], item['detections'])
    err = np.linalg.norm(forward(model, params).joints - forward(model, item['params']).joints, axis=1)
    assert err.max() < 1e-3
    assert rec.converged


def test_multiview_init_rest_fixed_point(model):
    truth = BodyParams.zeros(model, identity='rest')
    scan = point_scan(forward(model, truth).vertices, 1.0, 0.0, identity='rest')
    cams = virtual_rig(scan.points.mean(0), FitConfig())
    det = project_landmarks(model, truth, cams)
    params, _ = fit_multiview_init(model, scan, FitConfig(), cams, det)
    assert np.linalg.norm(params.theta_b) < 1e-3


def _pair(model):
    spec = GenSpec(seed=21, scans_per_identity=2, pose_sigma=0.2)
    return gen_scan_set(model, spec, n_scans=2, clothed=False, child=False)


def _refine_pair(model, items, lambda_ib):
    rng = np.random.default_rng(0)
    config = FitConfig(lambda_ib=lambda_ib, stages=(('beta', 'psi'),), max_outer=4)
    init = [i['params'].copy(beta=i['params'].beta + rng.normal(0, 0.3, model.n_beta)) for i in items]
    res = fit_refine(model, [i['scan'] for i in items], init, config, [i['cameras'] for i in items],
                     [i['detections'] for i in items])
    totals = [r['total'] for r in res.log]
    assert all(b <= a for a, b in zip(totals, totals[1:]))
    return float(np.linalg.norm(res.params[0].beta - res.params[1].beta))


@pytest.mark.slow
def test_interbeta_coupling(model):
    items = _pair(model)
    gaps = [_refine_pair(model, items, lam) for lam in (0.0, 1e2, 1e8)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-4
