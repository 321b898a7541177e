"""Machine-readable report files: CSV tables plus a JSON summary."""

import csv
import json
from pathlib import Path

from .evaluate import EvalReport

RECORD_FIELDS = ('scene_id', 'person_id', 'flag', 'is_child', 'matched', 'pred_id', 'error_px',
                 'b_mpjpe', 'lh', 'rh', 'f', 'b_mve', 'lh_mve', 'rh_mve', 'f_mve',
                 'occlusion', 'center', 'yaw')


def _fmt(v):
    if v is None:
        return ''
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(round(v, 9))
    return v


def _write_csv(path, header, rows):
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh, lineterminator='\n')
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def write_report(report: EvalReport, directory):
    """Write detection.csv, errors.csv, persons.csv, bins_<name>.csv and
    summary.json into ``directory``; returns the list of written paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []

    p = d / 'detection.csv'
    _write_csv(p, ('tau', 'tp', 'fp', 'fn', 'precision', 'recall', 'f1'),
               [(report.tau, report.tp, report.fp, report.fn, report.precision, report.recall, report.f1)])
    paths.append(p)

    p = d / 'errors.csv'
    rows = []
    for part in report.mpjpe:
        rows.append((part, report.mpjpe.get(part), report.mve.get(part),
                     report.nmje.get(part), report.nmve.get(part)))
    _write_csv(p, ('part', 'mpjpe_mm', 'mve_mm', 'nmje_mm', 'nmve_mm'), rows)
    paths.append(p)

    p = d / 'persons.csv'
    _write_csv(p, RECORD_FIELDS, [[r.get(k) for k in RECORD_FIELDS] for r in report.records])
    paths.append(p)

    for name, table in report.bins.items():
        p = d / f'bins_{name}.csv'
        _write_csv(p, ('lo', 'hi', 'count', 'matched', 'miss_rate', 'mean_b_mpjpe_mm', 'recall_nmje_mm'),
                   [(r.lo, r.hi, r.count, r.matched, r.miss_rate, r.mean_mpjpe, r.recall_nmje)
                    for r in table])
        paths.append(p)

    p = d / 'summary.json'
    p.write_text(json.dumps(report.summary(), indent=1, sort_keys=True) + '\n')
    paths.append(p)
    return paths


def read_summary(directory):
    return json.loads((Path(directory) / 'summary.json').read_text())
