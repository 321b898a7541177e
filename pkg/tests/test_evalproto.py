import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scanbench.evaluation import (B_ONLY, BFH, ContractError, PartLayout, PredPerson, ScenePrediction,
                                  SubmissionError, assign, binned_analysis, detection_scores, evaluate,
                                  fb_error, format_submission, match, normalized_errors, occlusion_percent,
                                  parse_submission, part_mpjpe, part_mve, read_submission, read_summary,
                                  scores_from_counts, write_report, write_submission)
from scanbench.evaluation.types import MatchOutcome
from scanbench.oracles import exhaustive_assignment, monte_carlo_aligned_error
from scanbench.synth import GenSpec, degrade_predictions, gen_scene, substream, truth_as_prediction


@pytest.fixture(scope='session')
def scenes(model):
    spec = GenSpec(seed=7, persons_range=(3, 8))
    return [gen_scene(model, spec, substream(7, 2, k), f's{k}') for k in range(4)]


@pytest.fixture(scope='session')
def layout(model):
    return PartLayout.from_model(model)


# --- matching ----------------------------------------------------------------

def test_truth_matches_itself(scenes):
    for s in scenes:
        out = match(s, truth_as_prediction(s))
        assert sorted((p, g) for p, g, _ in out.pairs) == [(p.person_id, p.person_id) for p in s.persons]
        assert all(e < 1e-9 for _, _, e in out.pairs)
        assert not out.false_positives and not out.false_negatives


def test_low_iou_pair_is_not_matched():
    assert assign(np.array([[1.0]]), np.array([[0.05]]), 0.1) == []
    out = MatchOutcome([], [1], [1])
    assert detection_scores([out]) == (0.0, 0.0, 0.0)


def test_assignment_prefers_cardinality():
    # the cheap pair (0, 0) would block two admissible matches
    err = np.array([[1.0, 5.0], [2.0, np.inf]])
    iou = np.array([[1.0, 1.0], [1.0, 0.0]])
    assert assign(err, iou, 0.1) == [(0, 1), (1, 0)]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2 ** 31 - 1))
def test_assignment_equals_exhaustive(n_p, n_g, seed):
    rng = np.random.default_rng(seed)
    err = rng.uniform(0, 100, (n_p, n_g))
    iou = rng.uniform(0, 1, (n_p, n_g))
    got = sorted(assign(err, iou, 0.3))
    want = exhaustive_assignment(err, iou, 0.3)
    assert len(got) == len(want)
    assert sum(err[r, c] for r, c in got) == pytest.approx(sum(err[r, c] for r, c in want), rel=1e-12)


def test_three_by_three_exhaustive():
    err = np.array([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
    iou = np.ones((3, 3))
    assert sorted(assign(err, iou, 0.1)) == exhaustive_assignment(err, iou, 0.1) == [(0, 1), (1, 0), (2, 2)]


def test_tau_and_ids_validated(scenes):
    s = scenes[0]
    with pytest.raises(ContractError):
        match(s, truth_as_prediction(s), tau=1.0)
    pred = truth_as_prediction(s)
    pred.persons.append(pred.persons[0])
    with pytest.raises(ContractError):
        match(s, pred)


def test_counts_and_order_invariance(scenes, rng):
    s = scenes[1]
    pred, info = degrade_predictions(s, 30.0, 0.3, 0.5, rng)
    out = match(s, pred)
    assert out.tp + len(out.false_negatives) == len(s.persons)
    assert out.tp + len(out.false_positives) == len(pred.persons)
    shuffled = ScenePrediction(pred.scene_id, pred.camera, [pred.persons[i] for i in rng.permutation(len(pred.persons))])
    out2 = match(s, shuffled)
    assert out2.pairs == out.pairs and out2.false_negatives == out.false_negatives


# --- errors ------------------------------------------------------------------------

def test_mpjpe_single_joint_offset():
    gt = np.random.default_rng(0).normal(size=(103, 3))
    pred = gt.copy()
    pred[5, 0] += 0.022
    assert part_mpjpe(pred, gt, 'B') == pytest.approx(1.0)
    assert part_mpjpe(pred, gt, 'LH') == 0.0


def test_mpjpe_is_anchor_aligned():
    gt = np.random.default_rng(0).normal(size=(103, 3))
    assert part_mpjpe(gt + [1.0, -2.0, 3.0], gt, 'F') == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(ContractError):
        part_mpjpe(gt[:50], gt[:50], 'B')
    with pytest.raises(ContractError):
        part_mpjpe(gt, gt, 'X')


def test_mve_uses_joint_anchor(layout, model):
    rng = np.random.default_rng(1)
    gv, gj = rng.normal(size=(model.n_vertices, 3)), rng.normal(size=(103, 3))
    t = np.array([0.1, 0.2, 0.3])
    assert part_mve(gv + t, gv, 'B', layout, gj + t, gj) == pytest.approx(0.0, abs=1e-9)


def test_fb_examples():
    assert fb_error(150.4, 72.5, 68.8, 55.2) == pytest.approx(215.9, abs=0.05)
    assert fb_error(182.1, 46.5, 49.6, 52.9) == pytest.approx(231.8, abs=0.05)
    with pytest.raises(ContractError):
        fb_error(1.0, None, 1.0, 1.0)


def test_detection_score_examples():
    assert scores_from_counts(5, 0, 0) == (1.0, 1.0, 1.0)
    assert scores_from_counts(2, 0, 2)[2] == pytest.approx(2 / 3)
    assert scores_from_counts(3, 1, 1)[2] == pytest.approx(0.75)
    with pytest.raises(ContractError):
        scores_from_counts(0, 3, 0)


def test_normalized_errors():
    assert normalized_errors(150.4, 151.5, 0.82) == pytest.approx((150.4 / 0.82, 151.5 / 0.82))
    assert normalized_errors(100.0, None, 0.5) == (200.0, None)
    assert normalized_errors(100.0, 100.0, 0.0) == (None, None)
    with pytest.raises(ContractError):
        normalized_errors(1.0, 1.0, 1.5)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 500), st.floats(1e-3, 1.0))
def test_normalized_never_below_raw(err, f1):
    nmje, _ = normalized_errors(err, None, f1)
    assert nmje >= err


# --- analyses -----------------------------------------------------------------------

def test_occlusion_percent_example():
    unocc = np.zeros((50, 50), dtype=bool)
    unocc.reshape(-1)[:1000] = True
    labels = np.zeros((50, 50), dtype=int)
    labels.reshape(-1)[:600] = 3
    assert occlusion_percent(labels, unocc, 3) == pytest.approx(40.0)
    assert occlusion_percent(labels, np.zeros_like(unocc), 3) is None


def test_bin_example():
    records = [{'x': 5.0, 'matched': True, 'b_mpjpe': 100.0}, {'x': 6.0, 'matched': True, 'b_mpjpe': 200.0},
               {'x': 7.0, 'matched': False}, {'x': 8.0, 'matched': False}]
    row = binned_analysis(records, 'x', [0.0, 10.0, 20.0])
    assert (row[0].count, row[0].matched) == (4, 2)
    assert row[0].mean_mpjpe == 150.0 and row[0].miss_rate == 0.5 and row[0].recall_nmje == 300.0
    assert row[1].count == 0 and row[1].mean_mpjpe is None


def test_bins_match_hand_loop():
    rng = np.random.default_rng(3)
    records = [{'x': float(rng.uniform(0, 100)), 'matched': bool(rng.random() < 0.6),
                'b_mpjpe': float(rng.uniform(50, 150))} for _ in range(10)]
    edges = [0.0, 25.0, 50.0, 75.0, 100.0]
    for i, row in enumerate(binned_analysis(records, 'x', edges)):
        members = [r for r in records if edges[i] <= r['x'] < edges[i + 1] or (i == 3 and r['x'] == 100.0)]
        hits = [r['b_mpjpe'] for r in members if r['matched']]
        assert row.count == len(members) and row.matched == len(hits)
        if hits:
            assert row.recall_nmje == pytest.approx(np.mean(hits) / (len(hits) / len(members)))


# --- corpus evaluation ---------------------------------------------------------------

def test_truth_gives_zero_errors(scenes, layout):
    preds = {s.scene_id: truth_as_prediction(s) for s in scenes}
    r = evaluate(scenes, preds, layout)
    assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)
    for table in (r.mpjpe, r.mve, r.nmje, r.nmve):
        assert all(v == pytest.approx(0.0, abs=1e-9) for v in table.values())


def test_body_only_persons_skip_hands(scenes, layout, rng):
    preds = {}
    for s in scenes:
        pred, _ = degrade_predictions(s, 20.0, 0.0, 0.0, rng)
        preds[s.scene_id] = pred
    r = evaluate(scenes, preds, layout)
    flags = {r_['flag'] for r_ in r.records}
    assert flags == {B_ONLY, BFH}
    for rec in r.records:
        assert ('lh' in rec) == (rec['flag'] == BFH)
    bfh = [rec for rec in r.records if rec['flag'] == BFH]
    assert r.mpjpe['LH'] == pytest.approx(np.mean([rec['lh'] for rec in bfh]))
    want_fb = fb_error(np.mean([rec['b_mpjpe'] for rec in bfh]), r.mpjpe['LH'], r.mpjpe['RH'], r.mpjpe['F'])
    assert r.mpjpe['FB'] == pytest.approx(want_fb)


def test_body_only_predictions_score_body(scenes, layout):
    preds = {}
    for s in scenes:
        p = truth_as_prediction(s, with_vertices=False)
        preds[s.scene_id] = ScenePrediction(s.scene_id, p.camera, [PredPerson(q.pred_id, q.joints[:22]) for q in p.persons])
    r = evaluate(scenes, preds, layout)
    assert r.mpjpe['B'] == pytest.approx(0.0, abs=1e-9)
    assert r.mpjpe['LH'] is None and r.mpjpe['FB'] is None


def test_noise_calibration(model, layout):
    spec = GenSpec(seed=9, persons_range=(10, 15))
    scenes = [gen_scene(model, spec, substream(9, 2, k), f'n{k}') for k in range(5)]
    rng = np.random.default_rng(0)
    preds = {s.scene_id: degrade_predictions(s, 20.0, 0.0, 0.0, rng)[0] for s in scenes}
    r = evaluate(scenes, preds, layout, binnings=())
    want = monte_carlo_aligned_error(0.02, 22)
    assert abs(r.mpjpe['B'] - want) <= 0.1 * want


def test_unknown_scene_rejected(scenes, layout):
    with pytest.raises(ContractError):
        evaluate(scenes, {'nope': truth_as_prediction(scenes[0])}, layout)
    with pytest.raises(ContractError):
        evaluate(scenes, {}, layout, parts=('Q',))


def test_missing_scene_counts_as_misses(scenes, layout):
    r = evaluate(scenes[:1], {}, layout, binnings=())
    assert r.tp == 0 and r.fn == len(scenes[0].persons)
    assert r.f1 == 0.0 and r.nmje['B'] is None


def test_report_files(scenes, layout, tmp_path):
    r = evaluate(scenes, {s.scene_id: truth_as_prediction(s) for s in scenes}, layout)
    paths = write_report(r, tmp_path)
    assert {p.name for p in paths} >= {'detection.csv', 'errors.csv', 'persons.csv', 'summary.json',
                                       'bins_occlusion.csv'}
    assert read_summary(tmp_path)['detection']['f1'] == 1.0


# --- submission format -----------------------------------------------------------------

def test_submission_round_trip(scenes, tmp_path):
    preds = {s.scene_id: truth_as_prediction(s) for s in scenes[:2]}
    write_submission(preds, tmp_path)
    back = read_submission(tmp_path)
    for sid, p in preds.items():
        for a, b in zip(sorted(p.persons, key=lambda q: q.pred_id), back[sid].persons):
            np.testing.assert_allclose(b.joints, a.joints, atol=1e-15)
            np.testing.assert_allclose(b.vertices, a.vertices, atol=1e-15)


def test_submission_errors_carry_line_numbers(scenes):
    text = format_submission(truth_as_prediction(scenes[0], with_vertices=False)).splitlines()
    bad = text[:4] + ['1.0 nan? 2.0'] + text[5:]
    with pytest.raises(SubmissionError, match=r'f\.txt:5'):
        parse_submission('\n'.join(bad), 'x', 'f.txt')
    with pytest.raises(SubmissionError, match='precede'):
        parse_submission('person 1 22 0\n', 'x')
    with pytest.raises(SubmissionError, match='ends early'):
        parse_submission('units m\ncamera 100 50 50 100 100\nperson 1 22 0\n0 0 1\n', 'x')
    with pytest.raises(SubmissionError, match='missing camera'):
        parse_submission('units m\n', 'x')
