"""Labelled scans: a triangle mesh with per-vertex skin/cloth/other
probabilities, plus their on-disk format.

Label sidecar (``<name>.labels.txt``)::

    # vertex_id p_skin p_cloth p_other
    0 1.0 0.0 0.0
    ...

Scan metadata (``<name>.json``): ``{"identity": str, "is_child": bool}``.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..geom import TriMesh, read_obj, write_obj


class ScanError(ValueError):
    pass


@dataclass(eq=False)
class LabeledScan:
    mesh: TriMesh
    p_skin: np.ndarray
    p_cloth: np.ndarray
    p_other: np.ndarray
    identity: str
    is_child: bool = False
    name: str = ''

    def __post_init__(self):
        n = len(self.mesh.positions)
        for k in ('p_skin', 'p_cloth', 'p_other'):
            a = np.asarray(getattr(self, k), dtype=np.float64).reshape(-1)
            if a.shape != (n,):
                raise ScanError(f'{k} must have one entry per vertex')
            if ((a < 0) | (a > 1)).any():
                raise ScanError(f'{k} outside [0, 1]')
            setattr(self, k, a)
        if np.abs(self.p_skin + self.p_cloth + self.p_other - 1).max() > 1e-6:
            raise ScanError('label probabilities must sum to 1 per vertex')
        if not self.identity:
            raise ScanError('identity tag must be nonempty')

    @property
    def points(self):
        return self.mesh.positions

    @property
    def surface_mask(self):
        """Vertices that enter the skin/cloth terms ("other"-dominant
        vertices such as hair are excluded)."""
        return self.p_other <= np.maximum(self.p_skin, self.p_cloth)


def save_scan(scan: LabeledScan, directory, name):
    d = Path(directory)
    write_obj(d / f'{name}.obj', scan.mesh.positions, scan.mesh.faces)
    rows = ['# vertex_id p_skin p_cloth p_other']
    rows += ['%d %.17g %.17g %.17g' % (i, s, c, o)
             for i, (s, c, o) in enumerate(zip(scan.p_skin, scan.p_cloth, scan.p_other))]
    (d / f'{name}.labels.txt').write_text('\n'.join(rows) + '\n')
    (d / f'{name}.json').write_text(json.dumps({'identity': scan.identity,
                                                 'is_child': bool(scan.is_child)}))


def load_scan(directory, name) -> LabeledScan:
    d = Path(directory)
    try:
        mesh = read_obj(d / f'{name}.obj')
        table = np.loadtxt(d / f'{name}.labels.txt', comments='#', ndmin=2)
        meta = json.loads((d / f'{name}.json').read_text())
    except (OSError, ValueError) as exc:
        raise ScanError(f'cannot read scan {name}: {exc}') from exc
    if table.shape[1] != 4 or not np.array_equal(table[:, 0], np.arange(len(table))):
        raise ScanError(f'{name}: label table must list vertex ids 0..N-1 in order')
    return LabeledScan(mesh, table[:, 1], table[:, 2], table[:, 3], meta['identity'],
                       bool(meta.get('is_child', False)), name)
