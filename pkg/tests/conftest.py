import numpy as np
import pytest
from hypothesis import settings

from algtrace.field import FieldCtx

settings.register_profile("repo", max_examples=60, deadline=None)
settings.load_profile("repo")


@pytest.fixture
def f11():
    return FieldCtx(11)


@pytest.fixture
def f65537():
    return FieldCtx(65537)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


def pytest_terminal_summary(terminalreporter):
    from collections import OrderedDict

    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    grouped = OrderedDict()
    for crit, name, ok, detail in RESULTS:
        grouped.setdefault(crit, []).append((name, ok, detail))
    terminalreporter.section("acceptance criteria")
    for crit in sorted(grouped):
        checks = grouped[crit]
        status = "PASS" if all(ok for _, ok, _ in checks) else "FAIL"
        parts = "; ".join(f"{name}: {'ok' if ok else 'FAIL'} ({detail})" for name, ok, detail in checks)
        terminalreporter.write_line(f"criterion {crit}: {status} | {parts}")
