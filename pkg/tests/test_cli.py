import json
import subprocess
import sys
import time

import pytest

from scanbench.cli import main

FAST_FIT = {'stages': [['orient', 'trans'], ['orient', 'trans', 'body', 'hands', 'beta', 'psi', 'alpha']],
            'stage_outer': [1], 'max_outer': 3, 'init_max_iter': 10}


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope='module')
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp('corpus')
    assert run('gen', '--out', d, '--seed', 3, '--scenes', 2, '--persons', 2, 4, '--scans', 3,
               '--truth-submission', '--degrade', 20, 0.3, 0.2) == 0
    return d


def test_gen_is_deterministic(corpus, tmp_path):
    assert run('gen', '--out', tmp_path, '--seed', 3, '--scenes', 2, '--persons', 2, 4, '--scans', 3,
               '--truth-submission', '--degrade', 20, 0.3, 0.2, '--jobs', 2) == 0
    a = json.loads((corpus / 'manifest.json').read_text())
    b = json.loads((tmp_path / 'manifest.json').read_text())
    assert a['files'] == b['files']
    paths = {f['path'] for f in a['files']}
    assert 'submissions/truth/scene_0000.txt' in paths and 'submissions/degraded_info.json' in paths


def test_gen_zero_scenes(tmp_path):
    assert run('gen', '--out', tmp_path, '--scenes', 0) == 0
    assert not (tmp_path / 'scenes').exists()


def test_gen_missing_directory(tmp_path):
    assert run('gen', '--out', tmp_path / 'nope') == 2


def test_bad_arguments_exit_two(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run('gen', '--out', tmp_path, '--scenes', 'many')
    assert exc.value.code == 2
    assert run('gen', '--out', tmp_path, '--jobs', 0) == 2


def test_eval_truth_and_degraded(corpus, tmp_path, capsys):
    assert run('eval', '--corpus', corpus, '--submission', corpus / 'submissions' / 'truth', '--out', tmp_path / 't') == 0
    s = json.loads((tmp_path / 't' / 'summary.json').read_text())
    assert s['detection']['f1'] == 1.0 and s['mpjpe_mm']['B'] == pytest.approx(0.0, abs=1e-6)
    assert run('eval', '--corpus', corpus, '--submission', corpus / 'submissions' / 'degraded', '--out', tmp_path / 'd',
               '--bins', 'none') == 0
    d = json.loads((tmp_path / 'd' / 'summary.json').read_text())
    info = json.loads((corpus / 'submissions' / 'degraded_info.json').read_text())
    assert d['detection']['fn'] == sum(len(v['missed']) for v in info.values())
    assert d['detection']['fp'] == sum(len(v['injected']) for v in info.values())
    assert d['nmje_mm']['B'] >= d['mpjpe_mm']['B']
    capsys.readouterr()
    assert run('report', tmp_path / 'd') == 0
    out = capsys.readouterr().out
    assert 'F1' in out and out.index('\nB ') < out.index('\nFB')


def test_eval_rejects_malformed_submission(corpus, tmp_path, capsys):
    sub = tmp_path / 'bad'
    sub.mkdir()
    text = (corpus / 'submissions' / 'truth' / 'scene_0000.txt').read_text().splitlines()
    text[4] = '1.0 oops 2.0'
    (sub / 'scene_0000.txt').write_text('\n'.join(text) + '\n')
    assert run('eval', '--corpus', corpus, '--submission', sub, '--out', tmp_path / 'o') == 2
    assert 'scene_0000.txt:5' in capsys.readouterr().err


def test_eval_tau_from_environment(corpus, tmp_path, monkeypatch):
    monkeypatch.setenv('SCANBENCH_TAU', '0.9')
    assert run('eval', '--corpus', corpus, '--submission', corpus / 'submissions' / 'degraded', '--out', tmp_path) == 0
    assert json.loads((tmp_path / 'summary.json').read_text())['tau'] == 0.9


@pytest.mark.slow
def test_fit_rerun_identical_and_skips_corrupt_scan(corpus, tmp_path):
    cfg = tmp_path / 'fast.json'
    cfg.write_text(json.dumps(FAST_FIT))
    assert run('fit', '--corpus', corpus, '--out', tmp_path / 'a', '--config', cfg, '--limit', 1) == 0
    assert run('fit', '--corpus', corpus, '--out', tmp_path / 'b', '--config', cfg, '--limit', 1) == 0
    a = (tmp_path / 'a' / 'scan_0000.params.json').read_bytes()
    assert a == (tmp_path / 'b' / 'scan_0000.params.json').read_bytes()

    broken = tmp_path / 'broken'
    broken.mkdir()
    (broken / 'scans').mkdir()
    (broken / 'model.npz').write_bytes((corpus / 'model.npz').read_bytes())
    (broken / 'model.parts.json').write_bytes((corpus / 'model.parts.json').read_bytes())
    for f in (corpus / 'scans').iterdir():
        if f.name.startswith(('scan_0000', 'scan_0001')):
            (broken / 'scans' / f.name).write_bytes(f.read_bytes())
    (broken / 'scans' / 'scan_0001.labels.txt').write_text('garbage\n')
    assert run('fit', '--corpus', broken, '--out', tmp_path / 'c', '--config', cfg) == 0
    s = json.loads((tmp_path / 'c' / 'fit_summary.json').read_text())
    assert (s['n_fitted'], s['n_skipped']) == (1, 1)
    assert 'scan_0001' in (tmp_path / 'c' / 'skipped.log').read_text()


def test_fit_usage_errors(corpus, tmp_path):
    assert run('fit', '--corpus', tmp_path / 'missing', '--out', tmp_path / 'o') == 2
    assert run('fit', '--corpus', corpus, '--out', tmp_path / 'o', '--scan', 'scan_9999') == 2


def test_selftest_quick_is_fast():
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, '-m', 'scanbench', 'selftest', '--quick', '--skip', 'normalized_cells'],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert time.perf_counter() - t0 < 30
    assert '[FAIL]' not in proc.stdout


def test_selftest_forced_failure():
    assert run('selftest', '--quick', '--only', 'fb_arithmetic', '--fail') == 1
    assert run('selftest', '--only', 'no_such_check') == 2
