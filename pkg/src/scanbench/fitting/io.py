"""Fit outputs: one JSON parameter record per scan and a CSV convergence log.

Parameter record fields: ``identity``, ``alpha`` (unitless), ``beta``,
``theta_b`` (22x3 axis-angle, radians, row 0 global orientation), ``z_h``
(2x6, left then right), ``psi``, ``trans_m`` (meters), plus ``fit`` with the
convergence record and quality measures (mm).
"""

import csv
import json
from pathlib import Path

from ..bodymodel import BodyParams
from .objective import TERMS


def save_fit(result, names, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, p, rec, q in zip(names, result.params, result.records, result.quality):
        doc = p.to_dict()
        doc['fit'] = {'final_energy': rec.final_energy, 'initial_energy': rec.initial_energy,
                      'iterations': rec.iterations, 'converged': rec.converged,
                      'message': rec.message, 'terms': rec.terms, **q}
        (d / f'{name}.params.json').write_text(json.dumps(doc, indent=1, sort_keys=True))
    ident = result.params[0].identity or 'fit'
    with open(d / f'{ident}.convergence.csv', 'w', newline='') as fh:
        w = csv.writer(fh)
        w.writerow(['stage', 'iteration', 'total', *TERMS])
        for r in result.log:
            w.writerow([r['stage'], r['iteration']] + ['%.17g' % r[k] for k in ('total', *TERMS)])


def load_fit(path):
    doc = json.loads(Path(path).read_text())
    return BodyParams.from_dict(doc), doc.get('fit', {})
