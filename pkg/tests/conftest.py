import pytest
from hypothesis import settings

from cantordyn.systems import FiniteCycle, Odometer, ProductSystem, Substitution

settings.register_profile("repo", max_examples=60, deadline=None)
settings.load_profile("repo")

FIB_RULES = {"a": "ab", "b": "a"}
TM_RULES = {"0": "01", "1": "10"}


@pytest.fixture(scope="session")
def odo():
    return Odometer([2])


@pytest.fixture(scope="session")
def odo3():
    return Odometer([3, 2])


@pytest.fixture(scope="session")
def fib():
    return Substitution(FIB_RULES)


@pytest.fixture(scope="session")
def tm():
    return Substitution(TM_RULES)


@pytest.fixture(scope="session")
def cyc5():
    return FiniteCycle(5)


@pytest.fixture(scope="session")
def prod(odo, fib):
    return ProductSystem([Odometer([2]), Substitution(FIB_RULES)])


# acceptance criteria report: test_acceptance.py fills this in
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, secs, note = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {secs:6.2f}s  {note}")
