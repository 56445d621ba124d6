import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from cslid import _kernels_py, kernels  # noqa: E402

BACKENDS = {"python": _kernels_py}
if kernels.compiled() is not None:
    BACKENDS["cython"] = kernels.compiled()


@pytest.fixture(params=sorted(BACKENDS))
def backend(request, monkeypatch):
    """Run a test once per kernel backend by patching the selector module."""
    impl = BACKENDS[request.param]
    for name in ("lstm_seq_forward", "lstm_seq_backward", "ctc_loss_grad", "edit_counts"):
        monkeypatch.setattr(kernels, name, getattr(impl, name))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
