import sys

import numpy as np
import pytest

from scanbench import make_toy_model
from scanbench.synth import GenSpec, sample_params


@pytest.fixture(scope='session')
def model():
    return make_toy_model(0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_params(model, rng):
    def make(child=None, alpha=None, pose_sigma=0.25):
        return sample_params(model, GenSpec(pose_sigma=pose_sigma), rng, child=child, alpha=alpha)
    return make



def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get('test_acceptance')
    lines = getattr(mod, 'SUMMARY', [])
    if lines:
        terminalreporter.section('acceptance criteria')
        for line in lines:
            terminalreporter.write_line(line)
