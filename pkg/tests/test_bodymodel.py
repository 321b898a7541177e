import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from scanbench.bodymodel import (BodyModel, BodyParams, ModelError, expand_hand_pose, forward,
                                 forward_t, interpolate_template, keypoint_slices, keypoints,
                                 load_model, save_model)
from scanbench.oracles import naive_forward


def tiny_model():
    """Two-vertex model whose templates differ by a unit vector."""
    m = BodyModel.__new__(BodyModel)
    m.adult_template = np.ones((1, 3))
    m.child_template = np.zeros((1, 3))
    return m


def test_layout(model):
    assert model.n_joints == 52
    assert model.n_vertices == 1944
    assert len(model.faces) == 3680
    assert model.n_keypoints == 103
    sl = keypoint_slices(model)
    assert [len(sl[k]) for k in ('body', 'left_hand', 'right_hand', 'face')] == [22, 15, 15, 51]
    model.validate()


def test_interpolate_example():
    m = tiny_model()
    np.testing.assert_allclose(interpolate_template(m, 0.25), [[0.25, 0.25, 0.25]])


def test_interpolate_endpoints_exact(model):
    assert np.array_equal(interpolate_template(model, 1.0), model.adult_template)
    assert np.array_equal(interpolate_template(model, 0.0), model.child_template)


@pytest.mark.parametrize('alpha', [-0.01, 1.01, np.nan])
def test_interpolate_rejects_out_of_range(model, alpha):
    with pytest.raises(ModelError):
        interpolate_template(model, alpha)


def test_params_reject_bad_alpha(model):
    with pytest.raises(ModelError):
        BodyParams.zeros(model, alpha=1.5)


def test_rest_pose_identity(model):
    posed = forward(model, BodyParams.zeros(model))
    np.testing.assert_allclose(posed.vertices, model.adult_template, atol=1e-12)
    rest_joints = model.joint_regressor @ model.adult_template
    np.testing.assert_allclose(posed.joints, rest_joints, atol=1e-12)


def test_matches_naive_oracle(model, random_params):
    for child in (False, True):
        p = random_params(child=child)
        p.trans = np.array([0.3, -0.2, 1.0])
        posed = forward(model, p)
        v, j = naive_forward(model, p)
        np.testing.assert_allclose(posed.vertices, v, atol=1e-9)
        np.testing.assert_allclose(posed.joints, j, atol=1e-9)


def test_translation_equivariance(model, random_params):
    p = random_params()
    t = np.array([1.0, -2.0, 0.5])
    a, b = forward(model, p), forward(model, p.copy(trans=p.trans + t))
    np.testing.assert_allclose(b.vertices, a.vertices + t, atol=1e-12)
    np.testing.assert_allclose(b.joints, a.joints + t, atol=1e-12)


def test_hand_expansion(model):
    assert np.array_equal(expand_hand_pose(model, np.zeros(6)), np.zeros((15, 3)))
    e1 = np.eye(6)[0]
    np.testing.assert_allclose(expand_hand_pose(model, 2 * e1), 2 * expand_hand_pose(model, e1))
    z = np.random.default_rng(0).normal(size=6)
    for hand in (0, 1):
        np.testing.assert_allclose(expand_hand_pose(model, z, hand).reshape(-1),
                                   model.hand_basis[hand] @ z)
    with pytest.raises(ModelError):
        expand_hand_pose(model, np.zeros(5))


def test_zero_hand_latent_is_rest_hand(model):
    p = BodyParams.zeros(model)
    posed = forward(model, p)
    hands = np.r_[model.part_sets['left_hand']['vertices'], model.part_sets['right_hand']['vertices']]
    np.testing.assert_allclose(posed.vertices[hands], model.adult_template[hands], atol=1e-12)


def test_affine_in_shape_and_expression_at_rest(model):
    rng = np.random.default_rng(3)
    b1, b2 = rng.normal(size=model.n_beta), rng.normal(size=model.n_beta)
    e1, e2 = rng.normal(size=model.n_psi), rng.normal(size=model.n_psi)
    f = lambda b, e: forward(model, BodyParams.zeros(model).copy(beta=b, psi=e)).vertices
    mid = f(0.5 * (b1 + b2), 0.5 * (e1 + e2))
    np.testing.assert_allclose(mid, 0.5 * (f(b1, e1) + f(b2, e2)), atol=1e-12)


def test_alpha_midpoint_linear_at_rest(model):
    f = lambda a: forward(model, BodyParams.zeros(model, alpha=a)).vertices
    np.testing.assert_allclose(f(0.5), 0.5 * (f(0.0) + f(1.0)), atol=1e-12)


def test_vertex_jacobian_matches_finite_differences(model, random_params):
    p = random_params(child=True, alpha=0.4)
    args = [torch.tensor(a[None], dtype=torch.float64, requires_grad=True)
            for a in (p.beta, p.theta_b, p.z_h, p.psi, np.float64(p.alpha), p.trans)]
    w = torch.as_tensor(np.random.default_rng(1).normal(size=(model.n_vertices, 3)))
    v, _, _ = forward_t(model, *args)
    (v[0] * w).sum().backward()
    h = 1e-5
    for k, a in enumerate(args):
        g = a.grad.numpy().reshape(-1)
        base = a.detach().numpy().copy()
        fd = np.zeros_like(g)
        flat = base.reshape(-1)
        for i in range(len(flat)):
            vals = []
            for s in (h, -h):
                x = flat.copy()
                x[i] += s
                xs = [b.detach() for b in args]
                xs[k] = torch.as_tensor(x.reshape(base.shape))
                with torch.no_grad():
                    vals.append(float((forward_t(model, *xs)[0][0] * w).sum()))
            fd[i] = (vals[0] - vals[1]) / (2 * h)
        np.testing.assert_allclose(fd, g, rtol=1e-4, atol=1e-6 * max(1.0, np.abs(g).max()))


def test_keypoints_layout(model, random_params):
    p = random_params()
    posed = forward(model, p)
    kp = keypoints(model, posed)
    assert kp.shape == (103, 3)
    np.testing.assert_array_equal(kp[:52], posed.joints)
    np.testing.assert_array_equal(kp[52:], posed.vertices[model.face_landmarks])


def test_save_load_round_trip(model, tmp_path):
    save_model(model, tmp_path / 'm.npz')
    m2 = load_model(tmp_path / 'm.npz')
    for k in ('adult_template', 'child_template', 'faces', 'shape_basis', 'skin_weights', 'parents'):
        assert np.array_equal(getattr(model, k), getattr(m2, k))
    assert m2.part_sets.keys() == model.part_sets.keys()


def test_params_dict_round_trip(random_params):
    p = random_params(child=True)
    q = BodyParams.from_dict(p.to_dict())
    for k in ('beta', 'theta_b', 'z_h', 'psi', 'trans'):
        assert np.array_equal(getattr(p, k), getattr(q, k))
    assert p.alpha == q.alpha


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 1.0), st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_rigid_translation_property(model, alpha, t):
    p = BodyParams.zeros(model, alpha=alpha)
    a = forward(model, p)
    b = forward(model, p.copy(trans=np.asarray(t)))
    np.testing.assert_allclose(b.vertices - a.vertices, np.broadcast_to(t, a.vertices.shape), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 1.0))
def test_skinning_preserves_bone_lengths(model, alpha):
    rng = np.random.default_rng(int(alpha * 1e6))
    p = BodyParams.zeros(model, alpha=alpha)
    rest = forward(model, p).joints
    posed = forward(model, p.copy(theta_b=rng.normal(0, 0.5, (22, 3)),
                                  z_h=rng.normal(0, 0.5, (2, 6)))).joints
    par = model.parents
    d = lambda J: np.linalg.norm(J[1:] - J[par[1:]], axis=1)
    np.testing.assert_allclose(d(posed), d(rest), atol=1e-12)
