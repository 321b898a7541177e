"""Generate a small multi-person corpus, then score the ground truth and a
degraded predictor against it, printing detection scores, per-part errors
and the occlusion table."""

import argparse
import tempfile
from pathlib import Path

from scanbench import make_toy_model
from scanbench.evaluation import PartLayout, evaluate, write_report
from scanbench.synth import GenSpec, degrade_predictions, gen_scene, substream, truth_as_prediction


def show(title, report):
    print(f'\n== {title}')
    print(f'tp {report.tp} fp {report.fp} fn {report.fn}  precision {report.precision:.3f} '
          f'recall {report.recall:.3f} F1 {report.f1:.3f}')
    for part, v in report.mpjpe.items():
        n = report.nmje.get(part)
        print(f'  {part:<3} MPJPE {v if v is None else round(v, 2)}  NMJE {n if n is None else round(n, 2)}')
    print('  occlusion bins (count, matched, recall-NMJE):')
    for row in report.bins['occlusion']:
        if row.count:
            r = '-' if row.recall_nmje is None else f'{row.recall_nmje:.1f}'
            print(f'    [{row.lo:5.1f}, {row.hi:5.1f})  {row.count:3d} {row.matched:3d}  {r}')


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument('--scenes', type=int, default=8)
    ap.add_argument('--seed', type=int, default=0)
    ap.add_argument('--noise', type=float, default=30.0, help='joint noise, mm')
    ap.add_argument('--miss', type=float, default=0.2)
    ap.add_argument('--fp', type=float, default=0.1)
    args = ap.parse_args()

    model = make_toy_model(0)
    layout = PartLayout.from_model(model)
    spec = GenSpec(seed=args.seed, n_occluders=1)
    scenes = [gen_scene(model, spec, substream(args.seed, 2, k), f'scene_{k:04d}') for k in range(args.scenes)]
    print(f'{len(scenes)} scenes, {sum(len(s.persons) for s in scenes)} persons')

    truth = {s.scene_id: truth_as_prediction(s) for s in scenes}
    show('ground truth as prediction', evaluate(scenes, truth, layout))

    degraded = {}
    for k, s in enumerate(scenes):
        degraded[s.scene_id], _ = degrade_predictions(s, args.noise, args.miss, args.fp,
                                                      substream(args.seed, 3, k), with_vertices=True)
    rep = evaluate(scenes, degraded, layout)
    show(f'degraded ({args.noise} mm noise, miss {args.miss}, false positives {args.fp})', rep)
    # normalizing by F1 charges the detector for both misses and spurious people
    print(f'\nNMJE/MPJPE = {rep.nmje["B"] / rep.mpjpe["B"]:.3f} = 1/F1 = {1 / rep.f1:.3f}')

    with tempfile.TemporaryDirectory() as d:
        paths = write_report(rep, Path(d))
        print('report files:', ', '.join(p.name for p in paths))


if __name__ == '__main__':
    main()
