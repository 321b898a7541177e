import pytest

from scanbench.evaluation import fb_error
from scanbench.published import BASELINES, F1_ROUNDING, ROUNDING, f1_interval, fb_cells, normalized_cells


def test_table_shape():
    assert len(BASELINES) == 8
    assert all(0 < row['f1'] < 1 for row in BASELINES.values())


@pytest.mark.parametrize('cell', fb_cells(), ids=lambda c: f'{c[0]}-{c[1]}')
def test_fb_cells_reproduce(cell):
    _, _, b, lh, rh, f, printed = cell
    assert abs(fb_error(b, lh, rh, f) - printed) <= ROUNDING + 1e-9


@pytest.mark.parametrize('method,raw,f1,printed', [('SPIN-ft', 153.4, 0.77, 199.2), ('ExPose', 150.4, 0.82, 183.4),
                                                   ('ExPose', 151.5, 0.82, 184.8)])
def test_normalized_examples(method, raw, f1, printed):
    assert abs(raw / f1 - printed) <= ROUNDING


def test_every_normalized_cell_is_listed():
    cells = normalized_cells()
    assert len(cells) == 2 * 8 + 2 * 2
    for name, fam, part, raw, f1, printed in cells:
        assert raw is not None and BASELINES[name]['f1'] == f1


def test_f1_interval_contains_consistent_values():
    lo, hi = f1_interval(153.4, 199.2)
    assert lo < 153.4 / 199.2 < hi
    assert lo <= 0.77 + F1_ROUNDING and hi >= 0.77 - F1_ROUNDING
