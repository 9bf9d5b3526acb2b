import numpy as np
import pytest

from nwsketch import _backend, lsh, race


@pytest.fixture(params=sorted(_backend.available_backends()))
def backend(request, monkeypatch):
    """Run a test once per importable kernel backend."""
    mod = _backend.available_backends()[request.param]
    monkeypatch.setattr(lsh, "kernels", mod)
    monkeypatch.setattr(race, "kernels", mod)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# (criterion number, title, passed, detail) tuples filled by the acceptance suite
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if passed else 'FAIL'}: {title} ({detail})")
