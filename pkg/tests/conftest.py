import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance verdicts, printed as one line per criterion at the end of the run
ACCEPTANCE = {}


@pytest.fixture
def verdict(request):
    """Record the outcome of one acceptance criterion: call with (passed, detail)."""
    name = request.node.callspec.params.get("criterion") if hasattr(request.node, "callspec") else None
    name = name or request.node.name.removeprefix("test_").replace("_", " ")

    def record(passed, detail=""):
        ACCEPTANCE[name] = ("PASS" if passed else "FAIL", detail)
        return passed

    ACCEPTANCE.setdefault(name, ("FAIL", "did not complete"))
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{status}  {name}" + (f"  [{detail}]" if detail else ""))
