import sys

import pytest

from spectral_wick.spectral import band_limited, band_limited_fractional, fractional, white


@pytest.fixture(scope="session")
def builtins():
    return {
        "white": white(),
        "band_limited": band_limited(1.0),
        "fractional": fractional(0.75),
        "band_limited_fractional": band_limited_fractional(0.3, 4.0),
    }


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[key])
