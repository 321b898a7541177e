import json

import numpy as np
import pytest

from scanbench.bodymodel import BodyParams, forward
from scanbench.evaluation import PartLayout, evaluate, match, occlusion_percent
from scanbench.fitting import cloth_penetration_error, skin_error
from scanbench.geom import rasterize
from scanbench.synth import (GenSpec, degrade_predictions, gen_scan, gen_scan_set, gen_scene, load_detections,
                             scene_camera, substream, write_corpus)


def test_unclothed_scan_lies_on_truth(model):
    scan, params = gen_scan(model, GenSpec(), substream(0, 1, 0), clothed=False)
    posed = forward(model, params)
    assert skin_error(scan, posed, model.faces) == pytest.approx(0.0, abs=1e-9)
    assert scan.p_cloth.sum() == 0


def test_cloth_offset_stays_outside(model):
    spec = GenSpec(cloth_offset_mm=(5.0, 5.0), hair=False)
    scan, params = gen_scan(model, spec, substream(0, 1, 1), clothed=True)
    posed = forward(model, params)
    assert scan.p_cloth.sum() > 0
    assert cloth_penetration_error(scan, posed, model.faces) == (0.0, None)


def test_scan_probabilities_are_simplex(model):
    scan, _ = gen_scan(model, GenSpec(label_noise=0.2), substream(0, 1, 2))
    total = scan.p_skin + scan.p_cloth + scan.p_other
    np.testing.assert_allclose(total, 1.0)
    assert scan.p_other.max() > 0.5            # hair is labelled "other"


def test_scan_generation_is_deterministic(model):
    a, pa = gen_scan(model, GenSpec(), substream(3, 1, 0))
    b, pb = gen_scan(model, GenSpec(), substream(3, 1, 0))
    assert np.array_equal(a.points, b.points) and np.array_equal(a.p_cloth, b.p_cloth)
    assert np.array_equal(pa.theta_b, pb.theta_b)
    c, _ = gen_scan(model, GenSpec(), substream(3, 1, 1))
    assert not np.array_equal(a.points[:10], c.points[:10])


def test_scan_set_shares_identity_shape(model):
    items = gen_scan_set(model, GenSpec(seed=2, scans_per_identity=3), n_scans=5)
    ids = [i['params'].identity for i in items]
    assert ids == ['id0000'] * 3 + ['id0001'] * 2
    assert np.array_equal(items[0]['params'].beta, items[2]['params'].beta)
    assert not np.array_equal(items[0]['params'].theta_b, items[1]['params'].theta_b)


def test_child_scans(model):
    item = gen_scan_set(model, GenSpec(seed=4), n_scans=1, child=True, alpha=0.3)[0]
    assert item['params'].alpha == 0.3 and item['scan'].is_child


def test_spec_validation():
    with pytest.raises(ValueError):
        GenSpec(cloth_offset_mm=(5.0, 2.0))
    with pytest.raises(ValueError):
        GenSpec(persons_range=(0, 3))
    with pytest.raises(ValueError):
        GenSpec(clothed_prob=1.5)
    s = GenSpec(seed=3)
    assert GenSpec.from_dict(json.loads(json.dumps(s.to_dict()))) == s


def _place(model, params, x, z):
    rest = forward(model, params).vertices
    lo, hi = rest.min(0), rest.max(0)
    return params.copy(trans=np.array([x, -lo[1], z]) - [0.5 * (lo[0] + hi[0]), 0.0, 0.5 * (lo[2] + hi[2])])


def test_single_centered_person_unoccluded(model):
    cam = scene_camera(GenSpec(), 28.0)
    p = _place(model, BodyParams.zeros(model), 0.0, 6.0)
    img = rasterize([(forward(model, p).vertices, model.faces)], [1], cam)
    assert img.unoccluded[1].sum() > 0
    assert occlusion_percent(img.labels, img.unoccluded[1], 1) == 0.0


def test_same_ray_persons(model):
    cam = scene_camera(GenSpec(), 28.0)
    near = _place(model, BodyParams.zeros(model), 0.0, 5.0)
    far = _place(model, BodyParams.zeros(model), 0.0, 10.0)
    meshes = [(forward(model, q).vertices, model.faces) for q in (near, far)]
    img = rasterize(meshes, [1, 2], cam)
    assert occlusion_percent(img.labels, img.unoccluded[1], 1) == 0.0
    assert occlusion_percent(img.labels, img.unoccluded[2], 2) > 0.0


def test_person_counts_in_range(model):
    spec = GenSpec(persons_range=(5, 15))
    counts = [int(substream(s, 2, 0).integers(5, 16)) for s in range(100)]
    assert min(counts) >= 5 and max(counts) <= 15
    scene = gen_scene(model, spec, substream(0, 2, 0))
    assert 5 <= len(scene.persons) <= 15


def test_scene_persons_do_not_overlap_in_3d(model):
    scene = gen_scene(model, GenSpec(seed=1), substream(1, 2, 0))
    boxes = [(p.vertices.min(0), p.vertices.max(0)) for p in scene.persons]
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            lo = np.maximum(boxes[i][0], boxes[j][0])
            hi = np.minimum(boxes[i][1], boxes[j][1])
            assert (hi - lo <= 0).any()


@pytest.fixture(scope='module')
def many_scenes(model):
    spec = GenSpec(seed=13)
    out, n, k = [], 0, 0
    while n < 400:
        s = gen_scene(model, spec, substream(13, 2, k), f'm{k}')
        out.append(s)
        n += len(s.persons)
        k += 1
    return out


def test_miss_rate_calibrates_recall(many_scenes, model):
    # one degrade substream per scene, as the command line does
    preds, missed = {}, 0
    for k, s in enumerate(many_scenes):
        preds[s.scene_id], info = degrade_predictions(s, 10.0, 0.5, 0.0, substream(13, 3, k))
        missed += len(info['missed'])
    r = evaluate(many_scenes, preds, PartLayout.from_model(model), binnings=())
    n = r.tp + r.fn
    assert n >= 400 and r.precision == 1.0
    assert r.fn == missed                      # every kept person is found again
    assert abs(r.recall - 0.5) <= 0.05          # about two binomial standard deviations


def test_false_positives_only(many_scenes):
    rng = np.random.default_rng(1)
    tp = fp = fn = injected = 0
    for s in many_scenes[:10]:
        pred, info = degrade_predictions(s, 0.0, 0.0, 0.5, rng)
        out = match(s, pred)
        tp, fp, fn = tp + out.tp, fp + len(out.false_positives), fn + len(out.false_negatives)
        injected += len(info['injected'])
    assert fn == 0 and fp == injected > 0


def test_degrade_is_deterministic(many_scenes):
    s = many_scenes[0]
    a, ia = degrade_predictions(s, 20.0, 0.3, 0.2, substream(0, 3, 0))
    b, ib = degrade_predictions(s, 20.0, 0.3, 0.2, substream(0, 3, 0))
    assert ia == ib
    for p, q in zip(a.persons, b.persons):
        assert p.pred_id == q.pred_id and np.array_equal(p.joints, q.joints)
    with pytest.raises(ValueError):
        degrade_predictions(s, 0.0, 1.5, 0.0, substream(0, 3, 0))


def test_corpus_is_reproducible(model, tmp_path):
    spec = GenSpec(seed=5, n_scenes=2, n_scans=2, persons_range=(2, 3))
    m1 = write_corpus(model, spec, tmp_path / 'a')
    m2 = write_corpus(model, spec, tmp_path / 'b')
    assert m1['files'] == m2['files']
    names = {f['path'] for f in m1['files']}
    assert {'model.npz', 'scenes/scene_0000/mask_full.pgm', 'scans/scan_0001.truth.json'} <= names
    cams, obs = load_detections(tmp_path / 'a' / 'scans' / 'scan_0000.detections.json')
    assert len(cams) == len(obs) == 4 and obs[0].shape == (103, 3)
