import numpy as np

from scanbench.bodymodel import forward
from scanbench.fitting import TERMS
from scanbench.geom import TriMesh, surface_query
from scanbench.gradcheck import check_gradients, gradient_fixture, mesh_components, smooth_scan
from scanbench.synth import substream


def test_mesh_components_one_capsule_per_joint(model):
    comp = mesh_components(model.faces, model.n_vertices)
    assert len(np.unique(comp)) == model.n_joints


def test_smooth_scan_points_sit_on_face_interiors(model, random_params):
    p = random_params()
    scan = smooth_scan(model, p, np.random.default_rng(0))
    assert 0 < len(scan.points) <= 150
    cp, _ = surface_query(TriMesh(forward(model, p).vertices, model.faces), scan.points)
    assert (cp.region == 0).all()
    assert (cp.distance > 1e-4).all()


def test_gradients_match_finite_differences(model):
    obj, x = gradient_fixture(model, substream(99, 50, 0))
    results = check_gradients(obj, x)
    assert {r.term for r in results} == set(TERMS)
    for r in results:
        assert r.grad_norm > 0, r.term
        assert r.rel_error <= 1e-4, (r.term, r.rel_error)
