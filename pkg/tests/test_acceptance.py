"""Acceptance criteria, each run at its stated size and tolerance. Every
criterion prints one pass/fail line (collected in the terminal summary) and
asserts; the underlying checks live in :mod:`scanbench.selftest`."""

import pytest

from scanbench.selftest import CHECKS, SIZES, Context, run_check

CRITERIA = {
    1: 'full-body error arithmetic over the published table',
    2: 'normalized error arithmetic over the published table',
    3: 'fitting round trip on unclothed and clothed synthetic scans',
    4: 'child template interpolation and alpha recovery',
    5: 'energy gradients against central differences',
    6: 'closest point, inside test and assignment oracles',
    7: 'protocol identity and degradation calibration',
    8: 'occlusion fixtures and binned recall-normalized errors',
}
SUMMARY = []
_ctx = Context(seed=0)
_cache = {}


def _results(criterion):
    if criterion not in _cache:
        size = SIZES['acceptance']
        _cache[criterion] = [r for r in (run_check(c, _ctx, size) for c in CHECKS if c.criterion == criterion)
                             if r is not None]
    return _cache[criterion]


@pytest.mark.slow
@pytest.mark.parametrize('criterion', sorted(CRITERIA), ids=lambda n: f'{n}-{CRITERIA[n].replace(" ", "_")}')
def test_criterion(criterion):
    results = _results(criterion)
    assert results, f'no checks registered for criterion {criterion}'
    ok = all(r.passed for r in results)
    secs = sum(r.seconds for r in results)
    SUMMARY.append(f'[{"PASS" if ok else "FAIL"}] criterion {criterion} ({CRITERIA[criterion]}, {secs:.1f}s)')
    for r in results:
        SUMMARY.append('    ' + r.line())
        print(r.line())
    failed = [f'{r.name}: {r.detail}' for r in results if not r.passed]
    assert not failed, '; '.join(failed)
