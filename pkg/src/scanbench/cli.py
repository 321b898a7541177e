"""Command-line entry point: ``scanbench {gen,fit,eval,report,selftest}``.

Exit codes: 0 success, 1 internal failure (or failed checks), 2 usage or
I/O problems. Options marked [env] also read ``SCANBENCH_<NAME>`` from the
environment, e.g. ``SCANBENCH_SEED=7``; command-line flags win.
"""

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

ENV_PREFIX = 'SCANBENCH_'
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger('scanbench')


class UsageError(Exception):
    """Bad paths or inputs; maps to exit code 2."""


def _env(name, cast, default):
    raw = os.environ.get(ENV_PREFIX + name.upper())
    if raw is None:
        return default
    try:
        return cast(raw)
    except ValueError:
        raise UsageError(f'{ENV_PREFIX}{name.upper()}={raw!r} is not a valid {cast.__name__}') from None


def _existing_dir(path, what):
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f'{what} does not exist or is not a directory: {p}')
    return p


def _dump(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + '\n')


# --- gen ----------------------------------------------------------------------

def cmd_gen(args):
    from .synth import (STREAM_DEGRADE, GenSpec, degrade_predictions, substream, truth_as_prediction,
                        write_corpus, write_manifest)
    from .toymodel import make_toy_model
    from .evaluation import load_corpus, write_submission

    out = _existing_dir(args.out, 'output directory')
    try:
        spec = GenSpec(seed=args.seed, model_seed=args.model_seed, n_scenes=args.scenes,
                       n_scans=args.scans, scans_per_identity=args.scans_per_identity,
                       persons_range=tuple(args.persons), clothed_prob=args.clothed_prob,
                       child_prob=args.child_prob, label_noise=args.label_noise,
                       detection_noise_px=args.detection_noise, n_occluders=args.occluders)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    model = make_toy_model(spec.model_seed)
    write_corpus(model, spec, out, jobs=args.jobs)
    extra = {}
    if args.truth_submission or args.degrade:
        _, scenes = load_corpus(out)
        with_v = not args.no_vertices
        if args.truth_submission:
            write_submission({s.scene_id: truth_as_prediction(s, with_v) for s in scenes},
                             out / 'submissions' / 'truth')
        if args.degrade:
            noise, miss, fp = args.degrade
            preds, info = {}, {}
            for k, s in enumerate(scenes):
                preds[s.scene_id], info[s.scene_id] = degrade_predictions(
                    s, noise, miss, fp, substream(spec.seed, STREAM_DEGRADE, k), with_vertices=with_v)
            write_submission(preds, out / 'submissions' / 'degraded')
            _dump(out / 'submissions' / 'degraded_info.json', info)
            extra['degrade'] = {'noise_mm': noise, 'miss_rate': miss, 'fp_rate': fp}
        write_manifest(out, spec, extra)
    n_files = len(json.loads((out / 'manifest.json').read_text())['files'])
    print(f'wrote {spec.n_scenes} scenes and {spec.n_scans} scans to {out} ({n_files} files)')
    return EXIT_OK


# --- fit ----------------------------------------------------------------------

def _load_inputs(scan_dir, names):
    from .fitting import load_scan
    from .synth import load_detections
    loaded, skipped = {}, []
    for name in names:
        try:
            scan = load_scan(scan_dir, name)
            cams, obs = load_detections(scan_dir / f'{name}.detections.json')
            if len(obs) != len(cams):
                raise ValueError('camera and observation counts differ')
            loaded[name] = (scan, cams, obs)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            log.warning('skipping scan %s: %s', name, exc)
            skipped.append((name, f'{type(exc).__name__}: {exc}'))
    return loaded, skipped


def _fit_group(job):
    """Fit one identity; returns (names, FitResult or None, error text)."""
    from .fitting import FitConfig, FitError, fit_identity
    from .fitting.energies import EnergyError
    model, config_doc, names, items = job
    config = FitConfig.from_dict(config_doc)
    try:
        res = fit_identity(model, [i[0] for i in items], config, [i[2] for i in items],
                           [i[1] for i in items])
        return names, res, ''
    except (FitError, EnergyError, ValueError) as exc:
        return names, None, f'{type(exc).__name__}: {exc}'


def _truth_joint_error(model, scan_dir, name, params):
    from .bodymodel import BodyParams, forward
    f = scan_dir / f'{name}.truth.json'
    if not f.exists():
        return None
    truth = BodyParams.from_dict(json.loads(f.read_text()))
    a, b = forward(model, truth).joints[:22], forward(model, params).joints[:22]
    return float(1000.0 * np.linalg.norm(a - b, axis=1).mean())


def cmd_fit(args):
    from .bodymodel import load_model
    from .fitting import FitConfig, save_fit

    corpus = _existing_dir(args.corpus, 'corpus directory')
    scan_dir = _existing_dir(corpus / 'scans', 'scan directory')
    out = Path(args.out)
    if not out.parent.is_dir():
        raise UsageError(f'parent of the output directory does not exist: {out.parent}')
    try:
        model = load_model(corpus / 'model.npz')
    except OSError as exc:
        raise UsageError(f'cannot read model: {exc}') from None
    config = FitConfig()
    if args.config:
        try:
            config = FitConfig.from_dict({**config.to_dict(), **json.loads(Path(args.config).read_text())})
        except (OSError, ValueError, TypeError) as exc:
            raise UsageError(f'bad fit config {args.config}: {exc}') from None
    names = sorted(p.name[:-len('.labels.txt')] for p in scan_dir.glob('*.labels.txt'))
    names += sorted({p.stem for p in scan_dir.glob('*.obj')} - set(names))
    names = sorted(set(names))
    if args.scan:
        missing = set(args.scan) - set(names)
        if missing:
            raise UsageError(f'unknown scans: {sorted(missing)}')
        names = [n for n in names if n in set(args.scan)]
    if args.limit is not None:
        names = names[:args.limit]
    loaded, skipped = _load_inputs(scan_dir, names)
    groups = {}
    for name, item in loaded.items():
        groups.setdefault(item[0].identity, []).append(name)
    jobs = [(model, config.to_dict(), sorted(ns), [loaded[n] for n in sorted(ns)])
            for _, ns in sorted(groups.items())]
    out.mkdir(exist_ok=True)
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_fit_group, jobs))
    else:
        results = [_fit_group(j) for j in jobs]

    rows = []
    for names_g, res, err in results:
        if res is None:
            for n in names_g:
                log.warning('fit failed for scan %s: %s', n, err)
                skipped.append((n, err))
            continue
        save_fit(res, names_g, out)
        for n, p, rec, q in zip(names_g, res.params, res.records, res.quality):
            rows.append({'scan': n, 'identity': p.identity, 'alpha': p.alpha,
                         'converged': rec.converged, 'final_energy': rec.final_energy,
                         'iterations': rec.iterations,
                         'joint_error_mm': _truth_joint_error(model, scan_dir, n, p), **q})
    rows.sort(key=lambda r: r['scan'])
    skipped.sort()
    with open(out / 'skipped.log', 'w') as fh:
        for n, why in skipped:
            fh.write(f'{n}\t{why}\n')
    fields = ('scan', 'identity', 'alpha', 'converged', 'final_energy', 'iterations', 'skin_error_mm',
              'penetration_percent', 'penetration_mm', 'joint_error_mm')
    with open(out / 'fit_quality.csv', 'w', newline='') as fh:
        w = csv.writer(fh, lineterminator='\n')
        w.writerow(fields)
        for r in rows:
            w.writerow(['' if r[k] is None else r[k] for k in fields])
    skin = [r['skin_error_mm'] for r in rows if r['skin_error_mm'] is not None]
    pen = [r['penetration_percent'] for r in rows if r['penetration_percent'] is not None]
    summary = {'n_scans': len(names), 'n_fitted': len(rows), 'n_skipped': len(skipped),
               'mean_skin_error_mm': float(np.mean(skin)) if skin else None,
               'mean_penetration_percent': float(np.mean(pen)) if pen else None,
               'config': config.to_dict(), 'scans': rows}
    _dump(out / 'fit_summary.json', summary)
    print(f'fitted {len(rows)} of {len(names)} scans; skipped {len(skipped)} (see {out / "skipped.log"})')
    if names and not rows:
        log.error('every scan failed')
        return EXIT_FAIL
    if not names:
        log.error('no scans found in %s', scan_dir)
        return EXIT_FAIL
    return EXIT_OK


# --- eval / report --------------------------------------------------------------

def cmd_eval(args):
    from .evaluation import (BINNINGS, PARTS, ContractError, PartLayout, SubmissionError, evaluate,
                             load_corpus, read_submission, write_report)
    corpus = _existing_dir(args.corpus, 'corpus directory')
    sub = _existing_dir(args.submission, 'submission directory')
    parts = tuple(p for p in args.parts.split(',') if p)
    bins = () if args.bins == 'none' else tuple(b for b in args.bins.split(',') if b)
    if set(parts) - set(PARTS) or not parts:
        raise UsageError(f'--parts must be a comma list from {PARTS}')
    if set(bins) - set(BINNINGS):
        raise UsageError(f'--bins must be "none" or a comma list from {BINNINGS}')
    if not 0.0 < args.tau < 1.0:
        raise UsageError('--tau must lie in (0, 1)')
    try:
        model, scenes = load_corpus(corpus)
        preds = read_submission(sub)
    except SubmissionError as exc:
        raise UsageError(f'malformed submission: {exc}') from None
    except OSError as exc:
        raise UsageError(str(exc)) from None
    try:
        report = evaluate(scenes, preds, PartLayout.from_model(model), args.tau, parts, bins)
    except ContractError as exc:
        raise UsageError(str(exc)) from None
    write_report(report, args.out)
    print(f'tp {report.tp} fp {report.fp} fn {report.fn} F1 {report.f1:.4f}; report in {args.out}')
    return EXIT_OK


def _fmt(v, spec='.2f'):
    return '-' if v is None else format(v, spec)


def cmd_report(args):
    d = _existing_dir(args.dir, 'report directory')
    shown = False
    if (d / 'summary.json').exists():
        s = json.loads((d / 'summary.json').read_text())
        det = s['detection']
        print(f"tau {s['tau']}: tp {det['tp']} fp {det['fp']} fn {det['fn']}  "
              f"precision {_fmt(det['precision'], '.4f')} recall {_fmt(det['recall'], '.4f')} "
              f"F1 {_fmt(det['f1'], '.4f')}")
        print(f"{'part':<5}{'MPJPE':>10}{'MVE':>10}{'NMJE':>10}{'NMVE':>10}")
        for part in sorted(s['mpjpe_mm'], key=('B', 'LH', 'RH', 'F', 'FB').index):
            print(f"{part:<5}{_fmt(s['mpjpe_mm'].get(part)):>10}{_fmt(s['mve_mm'].get(part)):>10}"
                  f"{_fmt(s['nmje_mm'].get(part)):>10}{_fmt(s['nmve_mm'].get(part)):>10}")
        for name, rows in s.get('bins', {}).items():
            print(f'\n{name}: lo hi count matched miss_rate mean_mpjpe recall_nmje')
            for r in rows:
                print(f"  {r['lo']:.1f} {r['hi']:.1f} {r['count']} {r['matched']} {_fmt(r['miss_rate'], '.3f')} "
                      f"{_fmt(r['mean_mpjpe'])} {_fmt(r['recall_nmje'])}")
        shown = True
    if (d / 'fit_summary.json').exists():
        s = json.loads((d / 'fit_summary.json').read_text())
        print(f"fitted {s['n_fitted']} of {s['n_scans']} scans, skipped {s['n_skipped']}; "
              f"mean skin error {_fmt(s['mean_skin_error_mm'], '.3f')} mm, "
              f"mean penetration {_fmt(s['mean_penetration_percent'], '.1f')} %")
        shown = True
    if not shown:
        raise UsageError(f'no summary.json or fit_summary.json in {d}')
    return EXIT_OK


# --- selftest -------------------------------------------------------------------

def cmd_selftest(args):
    from .selftest import CHECK_NAMES, run_selftest
    mode = 'quick' if args.quick else ('acceptance' if args.acceptance else 'full')
    bad = (set(args.skip) | set(args.only or ())) - set(CHECK_NAMES)
    if bad:
        raise UsageError(f'unknown checks {sorted(bad)}; known: {", ".join(CHECK_NAMES)}')
    results = run_selftest(mode, args.seed, tuple(args.skip), tuple(args.only or ()), args.fail)
    n_fail = sum(not r.passed for r in results)
    print(f'{len(results) - n_fail} passed, {n_fail} failed ({mode})')
    return EXIT_OK if n_fail == 0 else EXIT_FAIL


# --- parser -----------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('-v', '--verbose', action='count', default=_env('verbose', int, 0),
                        help='more logging (repeatable) [env]')
    common.add_argument('--seed', type=int, default=_env('seed', int, 0), help='master seed [env]')
    common.add_argument('--jobs', type=int, default=_env('jobs', int, 1),
                        help='worker processes for independent scenes / identities [env]')

    ap = argparse.ArgumentParser(prog='scanbench', description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest='command', required=True)

    g = sub.add_parser('gen', parents=[common], help='generate a synthetic corpus')
    g.add_argument('--out', required=True, help='existing output directory')
    g.add_argument('--scenes', type=int, default=1)
    g.add_argument('--scans', type=int, default=0)
    g.add_argument('--scans-per-identity', type=int, default=1)
    g.add_argument('--persons', type=int, nargs=2, default=(5, 15), metavar=('LO', 'HI'))
    g.add_argument('--clothed-prob', type=float, default=1.0)
    g.add_argument('--child-prob', type=float, default=0.15)
    g.add_argument('--label-noise', type=float, default=0.0)
    g.add_argument('--detection-noise', type=float, default=0.0, help='landmark noise, px')
    g.add_argument('--occluders', type=int, default=0, help='box occluders per scene')
    g.add_argument('--model-seed', type=int, default=0)
    g.add_argument('--truth-submission', action='store_true',
                   help='also write the ground truth as a submission (submissions/truth)')
    g.add_argument('--degrade', type=float, nargs=3, metavar=('NOISE_MM', 'MISS', 'FP'),
                   help='also write a degraded submission (submissions/degraded)')
    g.add_argument('--no-vertices', action='store_true', help='submissions carry joints only')
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser('fit', parents=[common], help='fit every scan of a corpus')
    f.add_argument('--corpus', required=True)
    f.add_argument('--out', required=True)
    f.add_argument('--config', help='JSON file with FitConfig overrides')
    f.add_argument('--scan', action='append', help='fit only this scan (repeatable)')
    f.add_argument('--limit', type=int, help='fit at most this many scans')
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser('eval', parents=[common], help='evaluate a submission against a corpus')
    e.add_argument('--corpus', required=True)
    e.add_argument('--submission', required=True)
    e.add_argument('--out', required=True)
    e.add_argument('--tau', type=float, default=_env('tau', float, 0.1), help='IoU threshold [env]')
    e.add_argument('--parts', default='B,LH,RH,F')
    e.add_argument('--bins', default='occlusion,center,yaw', help='comma list or "none"')
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser('report', parents=[common], help='print an evaluation or fit summary')
    r.add_argument('dir')
    r.set_defaults(func=cmd_report)

    s = sub.add_parser('selftest', parents=[common], help='run the embedded acceptance checks')
    s.add_argument('--quick', action='store_true', help='fast subset')
    s.add_argument('--acceptance', action='store_true', help='the larger sizes of the test suite')
    s.add_argument('--skip', action='append', default=[], metavar='CHECK', help='skip a check (repeatable)')
    s.add_argument('--only', action='append', metavar='CHECK', help='run only these checks')
    s.add_argument('--fail', action='store_true', help='append a failing check (test hook)')
    s.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f'scanbench: {exc}', file=sys.stderr)
        return EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s', stream=sys.stderr)
    if args.jobs < 1:
        print('scanbench: --jobs must be at least 1', file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f'scanbench {args.command}: {exc}', file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f'scanbench {args.command}: {exc}', file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        log.debug('internal failure', exc_info=True)
        print(f'scanbench {args.command}: internal error: {type(exc).__name__}: {exc}', file=sys.stderr)
        return EXIT_FAIL


if __name__ == '__main__':
    sys.exit(main())
