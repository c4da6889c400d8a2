import sys
from importlib.resources import files
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gridlearn.netmodel import load_case_file  # noqa: E402

DATA = files("gridlearn") / "data"


def case_path(name: str) -> Path:
    return Path(str(DATA / f"{name}.json"))


@pytest.fixture(scope="session")
def case9():
    return load_case_file(case_path("case9"))


@pytest.fixture(scope="session")
def case2():
    return load_case_file(case_path("case2"))


@pytest.fixture(scope="session")
def case3():
    return load_case_file(case_path("case3"))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
