import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("uduc", deadline=None, max_examples=60)
settings.load_profile("uduc")

from uduc import _kernels  # noqa: E402


def _available_backends():
    names = ["numpy"]
    try:
        _kernels.backend("numba")
        names.append("numba")
    except ImportError:  # pragma: no cover
        pass
    return names


@pytest.fixture(params=_available_backends())
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
